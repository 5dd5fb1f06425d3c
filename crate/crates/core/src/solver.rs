//! Robust IRLS rotation averaging with the exponential cost and a decaying
//! penalty schedule.
//!
//! One iteration, for every cyclic edge `(i, j)` with measurement `sigma`:
//!
//! 1. `k <- k + 1`
//! 2. `delta = d(sigma, lambda_i^-1 lambda_j)`
//! 3. `r = rho(delta)`
//! 4. `phi = rho'(r)`
//! 5. `h = rho''(r)`
//! 6. `s = sum(phi^2) / |sum(phi^2 h)|`
//! 7. `w = s * phi` (times the denoise prior when enabled; the first pass
//!    uses the prior alone)
//! 8. every node moves along `sum_j w_ij u_ij`, where `u_ij` is the unit
//!    tangent that would make edge `(i, j)` consistent; the step is the
//!    Weiszfeld-normalized weighted mean of the per-edge corrections, after
//!    which all nodes are left-multiplied so the gauge node is the identity
//! 9. `res = sum(w * delta * exp(tau * w * delta))`
//! 10. `tau <- 1 / k`
//!
//! Only edges lying on a cycle take part. Nodes reachable only through
//! acyclic edges are placed afterwards by composing measurements, which makes
//! their cost exactly zero.

use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::graph::{EdgeId, ViewGraph};
use crate::so3::{exp_map, geodesic_distance, log_map, Rotation, TangentVector};

/// Initial residual value before the first iteration.
const RES_INIT: f64 = 1e8;

/// Below this the step-size denominator counts as zero.
const DEGENERATE_EPS: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Identity,
    SpanningTree,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSchedule {
    /// `tau = 1 / k`
    Reciprocal,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once `res <= alpha`.
    pub alpha: f64,
    pub max_iters: usize,
    pub init_mode: InitMode,
    /// Multiply IRLS weights by the edge weights stored in the graph.
    pub use_denoise_weights: bool,
    pub tau_schedule: TauSchedule,
    /// Node pinned to the identity.
    pub gauge_node: usize,
    /// Residuals below this (radians) are treated as this value when forming
    /// the normalized step, so exactly satisfied edges do not freeze a node.
    pub residual_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-5,
            max_iters: 100,
            init_mode: InitMode::SpanningTree,
            use_denoise_weights: true,
            tau_schedule: TauSchedule::Reciprocal,
            gauge_node: 0,
            residual_floor: 1e-4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if !(self.alpha > 0.0) {
            return bad("alpha", "must be > 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be >= 1");
        }
        if let TauSchedule::Constant(t) = self.tau_schedule {
            if !(t > 0.0) {
                return bad("tau0", "must be > 0");
            }
        }
        if !(self.residual_floor > 0.0) {
            return bad("residual_floor", "must be > 0");
        }
        Ok(())
    }
}

/// `d(sigma_ij, lambda_i^-1 lambda_j)`.
pub fn edge_residual(lambda_i: &Rotation, lambda_j: &Rotation, sigma_ij: &Rotation) -> f64 {
    geodesic_distance(sigma_ij, &(lambda_i.inverse() * *lambda_j))
}

/// Per-edge quantities of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeTerms {
    pub edge: EdgeId,
    pub delta: f64,
    pub r: f64,
    pub phi: f64,
    pub h: f64,
    pub w: f64,
}

/// Summary of one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    /// Counter after the increment of step 1.
    pub k: usize,
    /// Penalty parameter used in this iteration.
    pub tau: f64,
    pub s: f64,
    pub res: f64,
    /// Largest rotation applied to a node.
    pub max_step: f64,
    #[serde(skip)]
    pub terms: Vec<EdgeTerms>,
}

/// Mutable solver state.
#[derive(Clone, Debug)]
pub struct IrlsState {
    pub rotations: Vec<Rotation>,
    /// Iteration counter; starts at 1 and is incremented at the top of each pass.
    pub k: usize,
    pub tau: f64,
    pub res: f64,
    pub schedule: TauSchedule,
    /// Edges taking part in the optimization.
    pub active: Vec<EdgeId>,
    /// Node re-pinned to the identity after every pass.
    pub gauge: usize,
    pub use_prior: bool,
    pub residual_floor: f64,
}

impl IrlsState {
    pub fn new(rotations: Vec<Rotation>, active: Vec<EdgeId>, cfg: &SolverConfig) -> Self {
        let tau = match cfg.tau_schedule {
            TauSchedule::Reciprocal => 1.0,
            TauSchedule::Constant(t) => t,
        };
        Self {
            rotations,
            k: 1,
            tau,
            res: RES_INIT,
            schedule: cfg.tau_schedule,
            active,
            gauge: cfg.gauge_node,
            use_prior: cfg.use_denoise_weights,
            residual_floor: cfg.residual_floor,
        }
    }

    /// Number of completed iterations.
    pub fn iterations(&self) -> usize {
        self.k - 1
    }
}

/// Runs one IRLS pass over the active edges and updates `state` in place.
///
/// Returns [`Error::Degenerate`] when every residual vanishes and the step
/// size is undefined; callers treat that as convergence.
pub fn irls_iteration(
    state: &mut IrlsState,
    graph: &ViewGraph,
    cost: &CostFunction,
) -> Result<IterationStats> {
    let first_pass = state.k == 1;
    state.k += 1;
    let tau = state.tau;
    let cf = cost.with_tau(tau);
    let lambda = &state.rotations;

    // steps 2-5 over an immutable snapshot
    let mut terms: Vec<EdgeTerms> = state
        .active
        .par_iter()
        .map(|&id| {
            let e = graph.edge(id);
            let delta = edge_residual(&lambda[e.i], &lambda[e.j], &e.measurement);
            let r = cf.rho(delta);
            EdgeTerms {
                edge: id,
                delta,
                r,
                phi: cf.grad(r),
                h: cf.hess(r),
                w: 0.0,
            }
        })
        .collect();

    // step 6
    let num: f64 = terms.iter().map(|t| t.phi * t.phi).sum();
    let den: f64 = terms.iter().map(|t| t.phi * t.phi * t.h).sum::<f64>().abs();
    let max_delta = terms.iter().map(|t| t.delta).fold(0.0, f64::max);
    let s = if den > DEGENERATE_EPS {
        num / den
    } else if max_delta <= f64::EPSILON {
        return Err(Error::Degenerate("all residuals vanish"));
    } else {
        // flat curvature (l1, saturated huber): unit step scale
        1.0
    };

    // step 7
    for t in terms.iter_mut() {
        let prior = if state.use_prior {
            graph.edge(t.edge).weight
        } else {
            1.0
        };
        t.w = if first_pass { prior } else { s * t.phi * prior };
    }

    // step 8: accumulate per-node corrections
    let n = lambda.len();
    let mut num_v = vec![TangentVector::ZERO; n];
    let mut den_v = vec![0.0; n];
    for t in &terms {
        if !(t.w > 0.0) {
            continue;
        }
        let e = graph.edge(t.edge);
        let omega = t.w / t.delta.max(state.residual_floor);
        let (li, lj) = (&lambda[e.i], &lambda[e.j]);
        // tangent at i that makes lambda_i * sigma_ij hit lambda_j
        let corr = log_map(&(li.inverse() * *lj * e.measurement.inverse()));
        num_v[e.i] = num_v[e.i].add(&corr.scale(omega));
        den_v[e.i] += omega;
        let corr = log_map(&(lj.inverse() * *li * e.measurement));
        num_v[e.j] = num_v[e.j].add(&corr.scale(omega));
        den_v[e.j] += omega;
    }
    let mut max_step: f64 = 0.0;
    let mut updated: Vec<Rotation> = (0..n)
        .map(|v| {
            if den_v[v] == 0.0 {
                return lambda[v];
            }
            let step = num_v[v].scale(1.0 / den_v[v]);
            max_step = max_step.max(step.norm());
            lambda[v] * exp_map(&step)
        })
        .collect();
    // every node moves; the global frame is fixed afterwards
    if state.gauge < n {
        let fix = updated[state.gauge].inverse();
        for r in updated.iter_mut() {
            *r = fix * *r;
        }
        updated[state.gauge] = Rotation::IDENTITY;
    }
    state.rotations = updated;

    // step 9
    let res: f64 = terms
        .iter()
        .map(|t| t.w * t.delta * (tau * t.w * t.delta).exp())
        .sum();
    state.res = res;

    // step 10
    state.tau = match state.schedule {
        TauSchedule::Reciprocal => 1.0 / state.k as f64,
        TauSchedule::Constant(t) => t,
    };

    Ok(IterationStats {
        k: state.k,
        tau,
        s,
        res,
        max_step,
        terms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// External node ids, parallel to `rotations`.
    pub nodes: Vec<u64>,
    pub rotations: Vec<Rotation>,
    pub iterations: usize,
    pub residual_trace: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
    pub cyclic_edges: usize,
    pub edges: usize,
    pub cost: CostFunction,
    pub history: Vec<IterationStats>,
}

fn initial_rotations(graph: &ViewGraph, cfg: &SolverConfig) -> Result<Vec<Rotation>> {
    Ok(match cfg.init_mode {
        InitMode::Identity => vec![Rotation::IDENTITY; graph.node_count()],
        // rooted at node 0 whatever the gauge, so that the gauge only fixes the frame
        InitMode::SpanningTree => graph.spanning_tree(0)?.propagate(graph),
    })
}

/// Rigidly re-places groups of nodes so that every acyclic edge is satisfied
/// exactly and the gauge node is the identity.
///
/// Groups are the connected components of the cyclic subgraph (singletons for
/// nodes without cyclic edges); acyclic edges form a tree over the groups.
fn place_through_acyclic(
    graph: &ViewGraph,
    cyclic: &[bool],
    rotations: &mut [Rotation],
    gauge: usize,
) {
    let n = graph.node_count();
    let mut group = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if group[start] != usize::MAX {
            continue;
        }
        let g = members.len();
        group[start] = g;
        let mut list = vec![start];
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(v, e) in graph.neighbors(u) {
                if cyclic[e] && group[v] == usize::MAX {
                    group[v] = g;
                    list.push(v);
                    stack.push(v);
                }
            }
        }
        members.push(list);
    }

    let apply = |rotations: &mut [Rotation], g: usize, left: Rotation| {
        for &v in &members[g] {
            rotations[v] = left * rotations[v];
        }
    };

    let mut placed = vec![false; members.len()];
    let g0 = group[gauge];
    let fix = rotations[gauge].inverse();
    apply(rotations, g0, fix);
    rotations[gauge] = Rotation::IDENTITY;
    placed[g0] = true;
    let mut queue = std::collections::VecDeque::from([g0]);
    while let Some(g) = queue.pop_front() {
        for &u in &members[g] {
            for &(v, e) in graph.neighbors(u) {
                if cyclic[e] || placed[group[v]] {
                    continue;
                }
                let target = rotations[u] * graph.edge(e).oriented_from(u);
                let left = target * rotations[v].inverse();
                let gv = group[v];
                apply(rotations, gv, left);
                rotations[v] = target;
                placed[gv] = true;
                queue.push_back(gv);
            }
        }
    }
}

/// Solves for absolute rotations on a connected graph.
///
/// The optimization runs on the cyclic edges only; the result is pinned so
/// that `rotations[gauge_node]` is exactly the identity.
pub fn solve(graph: &ViewGraph, cfg: &SolverConfig, cost: &CostFunction) -> Result<SolveReport> {
    cfg.validate()?;
    if graph.node_count() == 0 {
        return Err(Error::EmptyGraph);
    }
    if !graph.is_connected() {
        return Err(Error::Disconnected {
            components: graph.components().len(),
        });
    }
    if cfg.gauge_node >= graph.node_count() {
        return Err(Error::NodeOutOfRange {
            node: cfg.gauge_node,
            n: graph.node_count(),
        });
    }
    let start = Instant::now();
    let cycles = graph.cycle_basis(usize::MAX)?;
    let cyclic = cycles.cyclic_edges();
    let active: Vec<EdgeId> = (0..graph.edge_count()).filter(|&e| cyclic[e]).collect();
    let m = graph.edge_count();
    info!(
        "solving {} nodes, {} edges ({} cyclic, p/m = {:.3}) with {}",
        graph.node_count(),
        m,
        active.len(),
        if m > 0 { active.len() as f64 / m as f64 } else { 0.0 },
        cost
    );
    if m > 0 && 2 * active.len() <= m {
        warn!("at most half of the edges lie on a cycle");
    }

    let mut state = IrlsState::new(initial_rotations(graph, cfg)?, active, cfg);
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut converged = state.active.is_empty();
    while !converged && state.iterations() < cfg.max_iters {
        match irls_iteration(&mut state, graph, cost) {
            Ok(stats) => {
                debug!(
                    "k={} tau={:.4} s={:.4e} res={:.6e} step={:.3e}",
                    stats.k, stats.tau, stats.s, stats.res, stats.max_step
                );
                trace.push(stats.res);
                converged = stats.res <= cfg.alpha;
                history.push(stats);
            }
            Err(Error::Degenerate(why)) => {
                debug!("stopping: {why}");
                trace.push(0.0);
                converged = true;
            }
            Err(e) => return Err(e),
        }
    }

    let mut rotations = state.rotations;
    place_through_acyclic(graph, &cyclic, &mut rotations, cfg.gauge_node);
    let wall_time = start.elapsed().as_secs_f64();
    if !converged {
        info!(
            "stopped after {} iterations with res {:.3e} > alpha {:.1e}",
            state.k - 1,
            state.res,
            cfg.alpha
        );
    }
    Ok(SolveReport {
        nodes: graph.labels().to_vec(),
        rotations,
        iterations: state.k - 1,
        residual_trace: trace,
        converged,
        wall_time,
        cyclic_edges: cyclic.iter().filter(|c| **c).count(),
        edges: m,
        cost: *cost,
        history,
    })
}

/// `sum_e w_e * rho(d(sigma_e, lambda_i^-1 lambda_j))` over all edges.
pub fn objective(graph: &ViewGraph, rotations: &[Rotation], cost: &CostFunction) -> f64 {
    graph
        .edges()
        .iter()
        .map(|e| e.weight * cost.rho(edge_residual(&rotations[e.i], &rotations[e.j], &e.measurement)))
        .sum()
}
