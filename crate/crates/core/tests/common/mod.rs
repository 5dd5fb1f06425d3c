//! Shared oracles for the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rotsync::so3::{exp_map, geodesic_distance, log_map, Rotation, TangentVector};

pub mod reference;

/// Best point of the weight grid `{1, 1 - step, ..., min_weight}^3` for
/// `d(a^wa b^wb c^wc, I) + mu * sum(1 - w)`.
#[derive(Clone, Copy, Debug)]
pub struct GridOptimum {
    pub weights: [f64; 3],
    pub objective: f64,
    pub residual: f64,
    /// Grid points evaluated.
    pub evaluations: usize,
}

struct Cell {
    bound: f64,
    lo: [usize; 3],
    hi: [usize; 3],
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on the bound
        other.bound.total_cmp(&self.bound)
    }
}

/// Exhaustive grid search, pruned with a Lipschitz bound: moving `w_k` by `t`
/// rotates its factor by `theta_k * t`, which moves the residual by at most the
/// same angle.
pub fn triangle_grid_optimum(arcs: &[Rotation; 3], min_weight: f64, mu: f64, step: f64) -> GridOptimum {
    let logs: [TangentVector; 3] = arcs.map(|r| log_map(&r));
    let theta = logs.map(|v| v.norm());
    let n = ((1.0 - min_weight) / step).round() as usize;
    let weight = |i: usize| 1.0 - i as f64 * step;
    let mut evaluations = 0;
    let mut eval = |idx: [usize; 3]| {
        evaluations += 1;
        let w = idx.map(weight);
        let p = exp_map(&logs[0].scale(w[0])) * exp_map(&logs[1].scale(w[1])) * exp_map(&logs[2].scale(w[2]));
        let r = geodesic_distance(&p, &Rotation::IDENTITY);
        (r + mu * w.iter().map(|x| 1.0 - x).sum::<f64>(), r)
    };
    let slack = |lo: &[usize; 3], hi: &[usize; 3], c: &[usize; 3]| -> f64 {
        (0..3)
            .map(|k| (theta[k] + mu) * ((c[k] - lo[k]).max(hi[k] - c[k]) as f64 * step))
            .sum()
    };
    let center = |lo: &[usize; 3], hi: &[usize; 3]| [0, 1, 2].map(|k| (lo[k] + hi[k]) / 2);

    let mut best_idx = [0; 3];
    let (mut best, mut best_r) = eval(best_idx);
    let mut heap = BinaryHeap::new();
    let (lo, hi) = ([0; 3], [n; 3]);
    let c = center(&lo, &hi);
    let (fc, rc) = eval(c);
    if fc < best {
        best = fc;
        best_r = rc;
        best_idx = c;
    }
    heap.push(Cell { bound: fc - slack(&lo, &hi, &c), lo, hi });
    while let Some(cell) = heap.pop() {
        if cell.bound >= best {
            break;
        }
        let (lo, hi) = (cell.lo, cell.hi);
        let k = (0..3)
            .max_by(|&a, &b| {
                let wa = (theta[a] + mu) * (hi[a] - lo[a]) as f64;
                let wb = (theta[b] + mu) * (hi[b] - lo[b]) as f64;
                wa.total_cmp(&wb)
            })
            .unwrap();
        if hi[k] == lo[k] {
            continue;
        }
        let mid = (lo[k] + hi[k]) / 2;
        let mut left_hi = hi;
        left_hi[k] = mid;
        let mut right_lo = lo;
        right_lo[k] = mid + 1;
        for (l, h) in [(lo, left_hi), (right_lo, hi)] {
            let c = center(&l, &h);
            let (fc, rc) = eval(c);
            if fc < best {
                best = fc;
                best_r = rc;
                best_idx = c;
            }
            let bound = fc - slack(&l, &h, &c);
            if bound < best {
                heap.push(Cell { bound, lo: l, hi: h });
            }
        }
    }
    GridOptimum {
        weights: best_idx.map(weight),
        objective: best,
        residual: best_r,
        evaluations,
    }
}
