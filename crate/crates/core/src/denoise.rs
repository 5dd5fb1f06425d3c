//! Measurement reweighting from cycle consistency.
//!
//! Every fundamental cycle is sampled with random node triples. The three arcs
//! between the chosen nodes are composed into rotations `a`, `b`, `c` and a
//! triangle solve finds weights `w` in `[min_weight, 1]` such that
//! `a^wa * b^wb * c^wc` is close to the identity while keeping the weights
//! near one (l1 penalty). Arc weights are spread over the arc's edges and all
//! per-cycle evidence is merged with a cycle-size weighted mean.

use std::f64::consts::PI;

use log::{debug, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Cycle, CycleSet, EdgeId, ViewGraph};
use crate::so3::{exp_map, geodesic_distance, log_map, Rotation, TangentVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseConfig {
    /// Consistency tolerance in radians; also the l1 penalty weight.
    pub epsilon: f64,
    /// Multiplier on `floor(sqrt(cycle length))` samples per cycle.
    pub sample_rounds_scale: f64,
    /// Coordinate-descent rounds per triangle solve.
    pub inner_iters: usize,
    /// Lower bound for every weight.
    pub min_weight: f64,
    /// Cycles longer than this are flagged in the cycle set (still sampled).
    pub max_cycle_len: usize,
    /// Also run the triangle descent from the all-`min_weight` corner and keep
    /// the better of the two results.
    pub floor_start: bool,
    pub seed: u64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            sample_rounds_scale: 1.0,
            inner_iters: 200,
            min_weight: 0.05,
            max_cycle_len: 64,
            floor_start: true,
            seed: 0,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be > 0");
        }
        if !(self.min_weight > 0.0 && self.min_weight < 1.0) {
            return bad("min_weight", "must lie in (0, 1)");
        }
        if !(self.sample_rounds_scale > 0.0) {
            return bad("sample_rounds_scale", "must be > 0");
        }
        if self.inner_iters == 0 {
            return bad("inner_iters", "must be >= 1");
        }
        Ok(())
    }
}

/// Number of triples drawn from a cycle with `cycle_len` nodes.
pub fn sample_rounds(cycle_len: usize, scale: f64) -> usize {
    let base = (cycle_len as f64).sqrt().floor();
    ((base * scale).floor() as usize).max(1)
}

/// Three distinct cycle nodes and the arcs between them.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleSample {
    /// Positions in `cycle.nodes`, ascending.
    pub positions: [usize; 3],
    pub nodes: [usize; 3],
    /// Node paths `i -> j`, `j -> k`, `k -> i` (endpoints included).
    pub arc_nodes: [Vec<usize>; 3],
    /// Edge ids along each arc.
    pub arc_edges: [Vec<EdgeId>; 3],
}

fn arc(cycle: &Cycle, from: usize, to: usize) -> (Vec<usize>, Vec<EdgeId>) {
    let len = cycle.len();
    let mut nodes = vec![cycle.nodes[from]];
    let mut edges = Vec::new();
    let mut t = from;
    while t != to {
        edges.push(cycle.steps[t].edge);
        t = (t + 1) % len;
        nodes.push(cycle.nodes[t]);
    }
    (nodes, edges)
}

/// Draws `rounds` triples of distinct cycle nodes. Each triple splits the
/// cycle into three arcs whose lengths add up to the cycle length.
pub fn sample_triples(cycle: &Cycle, rounds: usize, rng: &mut ChaCha8Rng) -> Vec<TripleSample> {
    let len = cycle.len();
    assert!(len >= 3, "cycles have at least three edges");
    (0..rounds)
        .map(|_| {
            let mut p: Vec<usize> = sample(rng, len, 3).into_vec();
            p.sort_unstable();
            let (a0, a1) = arc(cycle, p[0], p[1]);
            let (b0, b1) = arc(cycle, p[1], p[2]);
            let (c0, c1) = arc(cycle, p[2], p[0]);
            TripleSample {
                positions: [p[0], p[1], p[2]],
                nodes: [cycle.nodes[p[0]], cycle.nodes[p[1]], cycle.nodes[p[2]]],
                arc_nodes: [a0, b0, c0],
                arc_edges: [a1, b1, c1],
            }
        })
        .collect()
}

/// Result of one triangle solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleSolution {
    pub weights: [f64; 3],
    /// `d(a^wa b^wb c^wc, I)` at the returned weights.
    pub residual: f64,
    /// Residual at unit weights.
    pub initial_residual: f64,
    /// Residual plus l1 penalty at the returned weights.
    pub objective: f64,
    /// Whether the returned residual is within epsilon.
    pub converged: bool,
}

/// Objective minimized by [`triangle_weights`]:
/// `d(a^wa b^wb c^wc, I) + mu * sum(1 - w)`.
pub fn triangle_objective(arcs: &[Rotation; 3], w: [f64; 3], mu: f64) -> f64 {
    let logs = arcs.map(|r| log_map(&r));
    objective_from_logs(&logs, w, mu)
}

fn objective_from_logs(logs: &[TangentVector; 3], w: [f64; 3], mu: f64) -> f64 {
    residual_from_logs(logs, w) + mu * w.iter().map(|x| 1.0 - x).sum::<f64>()
}

fn residual_from_logs(logs: &[TangentVector; 3], w: [f64; 3]) -> f64 {
    let prod = exp_map(&logs[0].scale(w[0]))
        * exp_map(&logs[1].scale(w[1]))
        * exp_map(&logs[2].scale(w[2]));
    geodesic_distance(&prod, &Rotation::IDENTITY)
}

/// Interval width at which a line search stops.
const LINE_TOL: f64 = 1e-6;

const GOLDEN: f64 = 0.618_033_988_749_895;

/// Minimizes `f` on `[lo, hi]` by golden-section search; returns `(x, f(x))`
/// for the best of the search result and both endpoints.
fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        }
    }
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for x in [hi, lo] {
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Cyclic projected coordinate descent from `start`; returns the weights and
/// their objective.
fn coordinate_descent(logs: &[TangentVector; 3], start: [f64; 3], cfg: &DenoiseConfig) -> ([f64; 3], f64) {
    let mu = cfg.epsilon;
    let mut w = start;
    let mut best = objective_from_logs(logs, w, mu);
    let mut powered = [0, 1, 2].map(|k| exp_map(&logs[k].scale(w[k])));
    for _ in 0..cfg.inner_iters {
        let before = best;
        for k in 0..3 {
            // angle(L E R) = angle(R L E): fold the two fixed factors into one
            let fixed = powered[(k + 1) % 3] * powered[(k + 2) % 3];
            let penalty: f64 = (0..3).filter(|&q| q != k).map(|q| 1.0 - w[q]).sum();
            let (x, fx) = golden_section(
                |t| {
                    let e = exp_map(&logs[k].scale(t));
                    geodesic_distance(&(fixed * e), &Rotation::IDENTITY)
                        + mu * (penalty + 1.0 - t)
                },
                cfg.min_weight,
                1.0,
                LINE_TOL,
            );
            if fx < best {
                w[k] = x;
                best = fx;
                powered[k] = exp_map(&logs[k].scale(x));
            }
        }
        if before - best <= 1e-10 {
            break;
        }
    }
    (w, best)
}

/// Triangle-consistency weights for composed arcs `a`, `b`, `c`.
///
/// Minimizes `d(a^wa b^wb c^wc, I) + epsilon * sum(1 - w)` over
/// `[min_weight, 1]^3` by cyclic coordinate descent with a golden-section line
/// search per coordinate, starting from unit weights (and from the
/// `min_weight` corner when `floor_start` is set). An already
/// epsilon-consistent triangle keeps unit weights.
pub fn triangle_weights(
    a: &Rotation,
    b: &Rotation,
    c: &Rotation,
    cfg: &DenoiseConfig,
) -> TriangleSolution {
    let logs = [log_map(a), log_map(b), log_map(c)];
    let w = [1.0; 3];
    let initial_residual = residual_from_logs(&logs, w);
    if initial_residual <= cfg.epsilon {
        return TriangleSolution {
            weights: w,
            residual: initial_residual,
            initial_residual,
            objective: initial_residual,
            converged: true,
        };
    }
    let (mut w, mut best) = coordinate_descent(&logs, w, cfg);
    if cfg.floor_start {
        let (w2, f2) = coordinate_descent(&logs, [cfg.min_weight; 3], cfg);
        if f2 < best {
            w = w2;
            best = f2;
        }
    }
    let residual = residual_from_logs(&logs, w);
    TriangleSolution {
        weights: w,
        residual,
        initial_residual,
        objective: best,
        converged: residual <= cfg.epsilon,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub cycle: usize,
    /// Edge count of the cycle the evidence came from.
    pub cycle_len: usize,
    pub weight: f64,
}

/// Per-edge weight evidence collected from all cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightLedger {
    pub entries: Vec<Vec<LedgerEntry>>,
    pub min_weight: f64,
}

impl WeightLedger {
    pub fn new(edge_count: usize, min_weight: f64) -> Self {
        Self {
            entries: vec![Vec::new(); edge_count],
            min_weight,
        }
    }

    /// Spreads an arc's down-weighting uniformly over its edges: each edge gets
    /// `1 - (1 - arc_weight) / len`, clamped to `[min_weight, 1]`.
    pub fn propagate_path_weights(
        &mut self,
        path: &[EdgeId],
        arc_weight: f64,
        cycle: usize,
        cycle_len: usize,
    ) {
        for (edge, weight) in path_weights(path, arc_weight, self.min_weight) {
            self.entries[edge].push(LedgerEntry {
                cycle,
                cycle_len,
                weight,
            });
        }
    }

    /// Cycle-size weighted mean per edge; edges without evidence get 1.
    pub fn aggregate(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|es| {
                if es.is_empty() {
                    return 1.0;
                }
                let num: f64 = es.iter().map(|e| e.cycle_len as f64 * e.weight).sum();
                let den: f64 = es.iter().map(|e| e.cycle_len as f64).sum();
                (num / den).clamp(self.min_weight, 1.0)
            })
            .collect()
    }
}

fn path_weights(path: &[EdgeId], arc_weight: f64, min_weight: f64) -> Vec<(EdgeId, f64)> {
    let len = path.len().max(1) as f64;
    let w = (1.0 - (1.0 - arc_weight) / len).clamp(min_weight, 1.0);
    path.iter().map(|&e| (e, w)).collect()
}

/// Per-cycle outcome of the sampling stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleCheck {
    /// Unweighted cycle residual (radians).
    pub pre: f64,
    /// Residual with every measurement raised to its final weight.
    pub post: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub cycles: usize,
    pub samples: usize,
    pub pre_residual_max: f64,
    pub post_residual_max: f64,
    /// Final edge weights binned into ten equal bins over `[0, 1]`.
    pub weights_histogram: Vec<usize>,
    #[serde(skip)]
    pub per_cycle: Vec<CycleCheck>,
    #[serde(skip)]
    pub triangles: Vec<TriangleSolution>,
}

impl DenoiseReport {
    /// Among cycles whose unweighted residual exceeds `epsilon`, the fraction
    /// whose weighted residual is not larger. `None` when there are none.
    pub fn improved_fraction(&self, epsilon: f64) -> Option<f64> {
        let flagged: Vec<&CycleCheck> = self.per_cycle.iter().filter(|c| c.pre > epsilon).collect();
        if flagged.is_empty() {
            return None;
        }
        let ok = flagged.iter().filter(|c| c.post <= c.pre).count();
        Some(ok as f64 / flagged.len() as f64)
    }
}

fn histogram(weights: &[f64]) -> Vec<usize> {
    let mut bins = vec![0; 10];
    for &w in weights {
        let b = ((w * 10.0).floor() as usize).min(9);
        bins[b] += 1;
    }
    bins
}

struct CycleOutcome {
    entries: Vec<(EdgeId, f64)>,
    triangles: Vec<TriangleSolution>,
}

fn process_cycle(
    graph: &ViewGraph,
    cycle: &Cycle,
    cycle_id: usize,
    cfg: &DenoiseConfig,
) -> Result<CycleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cycle_id as u64);
    let rounds = sample_rounds(cycle.len(), cfg.sample_rounds_scale);
    let mut entries = Vec::new();
    let mut triangles = Vec::with_capacity(rounds);
    for triple in sample_triples(cycle, rounds, &mut rng) {
        let arcs: Vec<Rotation> = triple
            .arc_nodes
            .iter()
            .map(|p| graph.compose_path(p))
            .collect::<Result<_>>()?;
        let sol = triangle_weights(&arcs[0], &arcs[1], &arcs[2], cfg);
        for (path, &w) in triple.arc_edges.iter().zip(&sol.weights) {
            entries.extend(path_weights(path, w, cfg.min_weight));
        }
        triangles.push(sol);
    }
    Ok(CycleOutcome { entries, triangles })
}

/// Computes cycle-consistency weights for every edge of a connected graph.
///
/// Returns a copy of `graph` with identical measurements and updated weights,
/// plus a report comparing unweighted and weighted cycle residuals.
pub fn denoise(graph: &ViewGraph, cfg: &DenoiseConfig) -> Result<(ViewGraph, DenoiseReport)> {
    cfg.validate()?;
    let cycles = graph.cycle_basis(cfg.max_cycle_len)?;
    denoise_with_cycles(graph, &cycles, cfg)
}

/// [`denoise`] over a precomputed cycle set.
pub fn denoise_with_cycles(
    graph: &ViewGraph,
    cycles: &CycleSet,
    cfg: &DenoiseConfig,
) -> Result<(ViewGraph, DenoiseReport)> {
    cfg.validate()?;
    let m = graph.edge_count();
    let cyclic = cycles.cyclic_edge_count();
    if m > 0 && 2 * cyclic <= m {
        warn!("only {cyclic} of {m} edges lie on a cycle; reweighting has little to work with");
    }
    let over = cycles.cycles.iter().filter(|c| c.over_length).count();
    if over > 0 {
        debug!("{over} cycles exceed max_cycle_len {}", cfg.max_cycle_len);
    }

    let outcomes: Vec<CycleOutcome> = cycles
        .cycles
        .par_iter()
        .enumerate()
        .map(|(id, c)| process_cycle(graph, c, id, cfg))
        .collect::<Result<_>>()?;

    let mut ledger = WeightLedger::new(m, cfg.min_weight);
    let mut triangles = Vec::new();
    for (id, out) in outcomes.into_iter().enumerate() {
        let len = cycles.cycles[id].len();
        for (edge, weight) in out.entries {
            ledger.entries[edge].push(LedgerEntry {
                cycle: id,
                cycle_len: len,
                weight,
            });
        }
        triangles.extend(out.triangles);
    }
    let weights = ledger.aggregate();
    let weighted = graph.with_weights(&weights)?;

    let per_cycle: Vec<CycleCheck> = cycles
        .cycles
        .iter()
        .map(|c| CycleCheck {
            pre: graph.cycle_residual_with(c, |_| 1.0),
            post: weighted.cycle_residual(c, true),
        })
        .collect();
    let max = |f: fn(&CycleCheck) -> f64| per_cycle.iter().map(f).fold(0.0, f64::max);
    let report = DenoiseReport {
        cycles: cycles.len(),
        samples: triangles.len(),
        pre_residual_max: max(|c| c.pre),
        post_residual_max: max(|c| c.post),
        weights_histogram: histogram(&weights),
        per_cycle,
        triangles,
    };
    if report.cycles == 0 {
        debug!("graph has no cycles; all weights stay at 1");
    }
    debug_assert!(report.pre_residual_max <= PI + 1e-9);
    Ok((weighted, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ViewGraph;
    use crate::so3::{perturb, random_rotation};
    use rand::Rng;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    fn ring(n: usize) -> (ViewGraph, Cycle) {
        let mut g = ViewGraph::new(n);
        for i in 0..n {
            g.add_edge(i, (i + 1) % n, Rotation::IDENTITY, 1.0).unwrap();
        }
        let cs = g.cycle_basis(usize::MAX).unwrap();
        let c = cs.cycles[0].clone();
        (g, c)
    }

    #[test]
    fn triangle_cycle_has_one_triple() {
        let (_, c) = ring(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rounds = sample_rounds(c.len(), 1.0);
        assert_eq!(rounds, 1);
        let t = &sample_triples(&c, rounds, &mut rng)[0];
        assert_eq!(t.positions, [0, 1, 2]);
        assert!(t.arc_edges.iter().all(|a| a.len() == 1));
    }

    #[test]
    fn nine_cycle_draws_three_triples() {
        let (_, c) = ring(9);
        assert_eq!(c.len(), 9);
        assert_eq!(sample_rounds(9, 1.0), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ts = sample_triples(&c, 3, &mut rng);
        assert_eq!(ts.len(), 3);
        for t in &ts {
            let total: usize = t.arc_edges.iter().map(|a| a.len()).sum();
            assert_eq!(total, 9);
            let mut nodes = t.nodes.to_vec();
            nodes.dedup();
            assert_eq!(nodes.len(), 3);
            for (k, a) in t.arc_nodes.iter().enumerate() {
                assert_eq!(a[0], t.nodes[k]);
                assert_eq!(*a.last().unwrap(), t.nodes[(k + 1) % 3]);
            }
        }
        assert_eq!(sample_rounds(2, 0.1), 1);
        assert_eq!(sample_rounds(16, 0.5), 2);
    }

    #[test]
    fn consistent_triangle_keeps_unit_weights() {
        let cfg = DenoiseConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_rotation(&mut rng);
        let b = random_rotation(&mut rng);
        let c = (a * b).inverse();
        let sol = triangle_weights(&a, &b, &c, &cfg);
        assert_eq!(sol.weights, [1.0; 3]);
        assert!(sol.residual < 1e-12);
        let id = Rotation::IDENTITY;
        let sol = triangle_weights(&id, &id, &id, &cfg);
        assert_eq!(sol.weights, [1.0; 3]);
        assert_eq!(sol.residual, 0.0);
    }

    #[test]
    fn same_axis_triangle() {
        // 40 - 30 + 0 leaves 10 degrees; scaling the 40 degree arc to 3/4 closes it.
        let cfg = DenoiseConfig::default();
        let sol = triangle_weights(
            &Rotation::rz(deg(40.0)),
            &Rotation::rz(deg(-30.0)),
            &Rotation::rz(deg(-10.0 + 10.0)),
            &cfg,
        );
        assert!((sol.weights[0] - 0.75).abs() < 1e-6, "{sol:?}");
        assert!((sol.weights[1] - 1.0).abs() < 1e-9);
        assert!((sol.weights[2] - 1.0).abs() < 1e-9);
        assert!(sol.residual < 1e-6);
        assert!(sol.converged);
    }

    #[test]
    fn objective_never_exceeds_unit_weights() {
        let cfg = DenoiseConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let c = perturb(&(a * b).inverse(), rng.random_range(0.0..0.5), &mut rng);
            let sol = triangle_weights(&a, &b, &c, &cfg);
            let at_one = triangle_objective(&[a, b, c], [1.0; 3], cfg.epsilon);
            assert!(sol.objective <= at_one + 1e-15);
            assert!(sol.residual <= sol.initial_residual + 1e-15);
            assert!(sol.weights.iter().all(|w| (cfg.min_weight..=1.0).contains(w)));
        }
    }

    #[test]
    fn path_propagation_rule() {
        let mut ledger = WeightLedger::new(4, 0.05);
        ledger.propagate_path_weights(&[0], 0.7, 0, 3);
        assert_eq!(ledger.entries[0][0].weight, 0.7);
        ledger.propagate_path_weights(&[1, 2, 3], 0.7, 1, 5);
        for e in 1..4 {
            assert!((ledger.entries[e][0].weight - 0.9).abs() < 1e-15);
        }
        let mut ledger = WeightLedger::new(5, 0.05);
        ledger.propagate_path_weights(&[0, 1, 2, 3, 4], 1.0, 0, 5);
        assert!(ledger.entries.iter().all(|es| es[0].weight == 1.0));
        let mut ledger = WeightLedger::new(1, 0.05);
        ledger.propagate_path_weights(&[0], 0.01, 0, 3);
        assert_eq!(ledger.entries[0][0].weight, 0.05);
    }

    #[test]
    fn aggregation_formula() {
        let mut ledger = WeightLedger::new(3, 0.05);
        ledger.entries[0].push(LedgerEntry {
            cycle: 0,
            cycle_len: 3,
            weight: 0.8,
        });
        ledger.entries[1].push(LedgerEntry {
            cycle: 0,
            cycle_len: 3,
            weight: 0.6,
        });
        ledger.entries[1].push(LedgerEntry {
            cycle: 1,
            cycle_len: 6,
            weight: 0.9,
        });
        let w = ledger.aggregate();
        assert!((w[0] - 0.8).abs() < 1e-15);
        assert!((w[1] - 0.8).abs() < 1e-15);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(DenoiseConfig::default().validate().is_ok());
        let bad = DenoiseConfig {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "epsilon"));
        let bad = DenoiseConfig {
            min_weight: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tree_graph_has_no_cycles() {
        let mut g = ViewGraph::new(5);
        for i in 1..5 {
            g.add_edge(0, i, Rotation::rx(0.1 * i as f64), 1.0).unwrap();
        }
        let (w, report) = denoise(&g, &DenoiseConfig::default()).unwrap();
        assert_eq!(report.cycles, 0);
        assert_eq!(report.samples, 0);
        assert!(w.weights().iter().all(|&x| x == 1.0));
    }
}
