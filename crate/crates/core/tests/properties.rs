use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rotsync::denoise::{triangle_objective, triangle_weights, DenoiseConfig};
use rotsync::so3::{geodesic_distance, Rotation};
use rotsync::solver::CostFunction;
use rotsync::synth::align;

fn rotation() -> impl Strategy<Value = Rotation> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| Rotation::from_wxyz(w, x, y, z).unwrap())
}

fn cost() -> impl Strategy<Value = CostFunction> {
    prop_oneof![
        (0.01f64..2.0).prop_map(|tau| CostFunction::Exponential { tau }),
        Just(CostFunction::L2),
        Just(CostFunction::L1),
        Just(CostFunction::LHalf),
        (0.01f64..1.0).prop_map(|delta| CostFunction::Huber { delta }),
    ]
}

fn matrix(r: &Rotation) -> Matrix3<f64> {
    let m = r.to_matrix();
    Matrix3::from_fn(|i, j| m[i][j])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rho_vanishes_at_zero_and_never_decreases(c in cost(), a in 0.0f64..std::f64::consts::PI, b in 0.0f64..std::f64::consts::PI) {
        prop_assert_eq!(c.rho(0.0), 0.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(c.rho(lo) <= c.rho(hi));
    }

    #[test]
    fn exponential_penalty_decays_with_the_counter(x in 1e-6f64..std::f64::consts::PI, k in 1usize..200) {
        let rho = |k: usize| CostFunction::Exponential { tau: 1.0 / k as f64 }.rho(x);
        prop_assert!(rho(k + 1) <= rho(k));
        prop_assert!(rho(k) >= x);
    }

    #[test]
    fn exponential_closed_forms(tau in 0.01f64..2.0, x in 0.0f64..std::f64::consts::PI) {
        let c = CostFunction::Exponential { tau };
        let e = (tau * x).exp();
        prop_assert!((c.rho(x) - x * e).abs() <= 1e-12 * e.max(1.0) * 4.0);
        prop_assert!((c.grad(x) - (1.0 + tau * x) * e).abs() <= 1e-12 * e * 4.0);
        prop_assert!((c.hess(x) - (2.0 * tau + tau * tau * x) * e).abs() <= 1e-12 * e * 4.0);
    }

    #[test]
    fn geodesic_distance_matches_matrix_trace(a in rotation(), b in rotation()) {
        let m = matrix(&a).transpose() * matrix(&b);
        let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        let oracle = (0.5 * skew.norm()).atan2(0.5 * (m.trace() - 1.0));
        prop_assert!((geodesic_distance(&a, &b) - oracle).abs() < 1e-9);
    }

    #[test]
    fn triangle_objective_not_above_unit_weights(a in rotation(), b in rotation(), c in rotation()) {
        let cfg = DenoiseConfig::default();
        let arcs = [a, b, c];
        let sol = triangle_weights(&a, &b, &c, &cfg);
        prop_assert!(sol.objective <= triangle_objective(&arcs, [1.0; 3], cfg.epsilon) + 1e-12);
        prop_assert!(sol.weights.iter().all(|w| (cfg.min_weight..=1.0).contains(w)));
    }

    #[test]
    fn align_ignores_a_common_left_factor(
        xs in prop::collection::vec(rotation(), 2..8),
        ys in prop::collection::vec(rotation(), 8),
        g in rotation(),
    ) {
        let truth = &ys[..xs.len()];
        prop_assert!(align(&xs, &xs).unwrap().max_deg < 1e-6);
        let moved: Vec<Rotation> = xs.iter().map(|x| g * *x).collect();
        let a = align(&xs, truth).unwrap();
        let b = align(&moved, truth).unwrap();
        prop_assert!((a.mean_deg - b.mean_deg).abs() < 1e-6, "{} vs {}", a.mean_deg, b.mean_deg);
        prop_assert!(a.per_node_errors.iter().all(|e| (0.0..=180.0).contains(e)));
    }
}
