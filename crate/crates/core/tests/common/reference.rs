//! Straight-line reference of one solver pass on rotation matrices.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rotsync::so3::Rotation;
use rotsync::solver::{irls_iteration, CostFunction, InitMode, IrlsState, SolverConfig};
use rotsync::ViewGraph;

pub const TOL: f64 = 1e-12;

fn matrix(r: &Rotation) -> Matrix3<f64> {
    let m = r.to_matrix();
    Matrix3::from_fn(|i, j| m[i][j])
}

fn vee_skew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

fn ref_angle(m: &Matrix3<f64>) -> f64 {
    let s = vee_skew(m).norm();
    let c = 0.5 * (m.trace() - 1.0);
    s.atan2(c)
}

fn ref_log(m: &Matrix3<f64>) -> Vector3<f64> {
    let v = vee_skew(m);
    let s = v.norm();
    if s == 0.0 {
        return Vector3::zeros();
    }
    v * (ref_angle(m) / s)
}

fn ref_exp(v: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*v).into_inner()
}

struct RefEdge {
    i: usize,
    j: usize,
    sigma: Matrix3<f64>,
    prior: f64,
}

struct RefPass {
    delta: Vec<f64>,
    r: Vec<f64>,
    phi: Vec<f64>,
    h: Vec<f64>,
    s: f64,
    w: Vec<f64>,
    res: f64,
    tau_used: f64,
}

fn reference_pass(
    lambda: &mut [Matrix3<f64>],
    edges: &[RefEdge],
    k: &mut usize,
    tau: &mut f64,
    floor: f64,
    gauge: usize,
) -> RefPass {
    let first = *k == 1;
    *k += 1;
    let t = *tau;
    let delta: Vec<f64> = edges
        .iter()
        .map(|e| ref_angle(&(e.sigma.transpose() * lambda[e.i].transpose() * lambda[e.j])))
        .collect();
    let r: Vec<f64> = delta.iter().map(|d| d * (t * d).exp()).collect();
    let phi: Vec<f64> = r.iter().map(|x| (1.0 + t * x) * (t * x).exp()).collect();
    let h: Vec<f64> = r.iter().map(|x| (2.0 * t + t * t * x) * (t * x).exp()).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, hh) in phi.iter().zip(&h) {
        num += p * p;
        den += p * p * hh;
    }
    let s = num / den.abs();
    let w: Vec<f64> = edges
        .iter()
        .zip(&phi)
        .map(|(e, p)| if first { e.prior } else { s * p * e.prior })
        .collect();

    let n = lambda.len();
    let mut acc = vec![Vector3::zeros(); n];
    let mut tot = vec![0.0; n];
    for ((e, d), wt) in edges.iter().zip(&delta).zip(&w) {
        let omega = wt / d.max(floor);
        let (li, lj) = (lambda[e.i], lambda[e.j]);
        acc[e.i] += ref_log(&(li.transpose() * lj * e.sigma.transpose())) * omega;
        tot[e.i] += omega;
        acc[e.j] += ref_log(&(lj.transpose() * li * e.sigma)) * omega;
        tot[e.j] += omega;
    }
    for v in 0..n {
        if tot[v] > 0.0 {
            lambda[v] *= ref_exp(&(acc[v] / tot[v]));
        }
    }
    let pin = lambda[gauge].transpose();
    for m in lambda.iter_mut() {
        *m = pin * *m;
    }

    let res = w
        .iter()
        .zip(&delta)
        .map(|(wt, d)| wt * d * (t * wt * d).exp())
        .sum();
    *tau = 1.0 / *k as f64;
    RefPass {
        delta,
        r,
        phi,
        h,
        s,
        w,
        res,
        tau_used: t,
    }
}

/// Runs `passes` solver passes on a fixed 3-node instance next to the
/// reference and reports the first quantity that differs by more than `TOL`.
pub fn compare_passes(passes: usize) -> Result<(), String> {
    let sigmas = [
        Rotation::from_axis_angle([0.6, 0.0, 0.8], 0.7),
        Rotation::from_axis_angle([0.0, 1.0, 0.0], -0.4),
        Rotation::from_axis_angle([0.48, 0.6, 0.64], 1.1),
    ];
    let pairs = [(0, 1), (1, 2), (0, 2)];
    let priors = [1.0, 0.8, 0.55];
    let mut g = ViewGraph::new(3);
    for ((&(i, j), s), p) in pairs.iter().zip(&sigmas).zip(priors) {
        g.add_edge(i, j, *s, p).unwrap();
    }
    let cfg = SolverConfig {
        init_mode: InitMode::Identity,
        ..Default::default()
    };
    let cost = CostFunction::exponential();
    let mut state = IrlsState::new(vec![Rotation::IDENTITY; 3], vec![0, 1, 2], &cfg);

    let edges: Vec<RefEdge> = pairs
        .iter()
        .zip(&sigmas)
        .zip(priors)
        .map(|((&(i, j), s), prior)| RefEdge {
            i,
            j,
            sigma: matrix(s),
            prior,
        })
        .collect();
    let mut lambda = vec![Matrix3::identity(); 3];
    let mut k = 1;
    let mut tau = 1.0;

    let close = |a: f64, b: f64, what: &str, it: usize| -> Result<(), String> {
        if (a - b).abs() <= TOL * b.abs().max(1.0) {
            Ok(())
        } else {
            Err(format!("{what} at pass {it}: {a} vs {b}"))
        }
    };
    for it in 0..passes {
        let stats = irls_iteration(&mut state, &g, &cost).map_err(|e| e.to_string())?;
        let reference = reference_pass(&mut lambda, &edges, &mut k, &mut tau, cfg.residual_floor, 0);
        close(stats.tau, reference.tau_used, "tau", it)?;
        close(stats.s, reference.s, "s", it)?;
        close(stats.res, reference.res, "res", it)?;
        for (e, t) in stats.terms.iter().enumerate() {
            if t.edge != e {
                return Err(format!("edge order at pass {it}"));
            }
            close(t.delta, reference.delta[e], "delta", it)?;
            close(t.r, reference.r[e], "r", it)?;
            close(t.phi, reference.phi[e], "phi", it)?;
            close(t.h, reference.h[e], "h", it)?;
            close(t.w, reference.w[e], "w", it)?;
        }
        if state.k != k {
            return Err(format!("counter {} vs {k}", state.k));
        }
        close(state.tau, tau, "next tau", it)?;
        if state.tau != 1.0 / state.k as f64 {
            return Err(format!("tau {} after counter {}", state.tau, state.k));
        }
        for (ours, theirs) in state.rotations.iter().zip(&lambda) {
            let diff = (matrix(ours) - theirs).abs().max();
            if diff >= TOL {
                return Err(format!("rotation at pass {it}: {diff}"));
            }
        }
    }
    Ok(())
}
