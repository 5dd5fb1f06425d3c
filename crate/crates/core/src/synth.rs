//! Synthetic ground truth, corruption, gauge alignment and ablation runs.

use std::io::Write;
use std::time::Instant;

use log::{info, warn};
use nalgebra::{Matrix4, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::denoise::{denoise, DenoiseConfig};
use crate::error::{Error, Result};
use crate::graph::ViewGraph;
use crate::so3::{exp_map, geodesic_distance, log_map, perturb, random_rotation, Rotation, TangentVector};
use crate::solver::{solve, SolverConfig};

/// Attempts at drawing a connected random graph before giving up.
pub const MAX_RESAMPLES: usize = 100;

/// How the angle of an outlier perturbation is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Exactly `outlier_angle`.
    Fixed,
    /// Uniform in `[0, outlier_angle]`.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Probability that a node pair is measured.
    pub edge_density: f64,
    /// Fraction of edges receiving an outlier perturbation.
    pub outlier_fraction: f64,
    /// Radians.
    pub outlier_angle: f64,
    pub outlier_mode: PerturbMode,
    /// Standard deviation (radians) of per-axis Gaussian noise on every edge.
    pub inlier_sigma: f64,
    /// Largest ground-truth rotation angle (radians). `pi` samples the whole
    /// group uniformly; smaller values draw a uniform axis and an angle
    /// uniform in `[0, truth_spread]`.
    pub truth_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 100,
            edge_density: 0.3,
            outlier_fraction: 0.0,
            outlier_angle: 5f64.to_radians(),
            outlier_mode: PerturbMode::Fixed,
            inlier_sigma: 0.0,
            truth_spread: std::f64::consts::PI,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if self.n < 2 {
            return bad("n", "need at least 2 nodes");
        }
        if !(self.edge_density > 0.0 && self.edge_density <= 1.0) {
            return bad("edge_density", "must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction", "must lie in [0, 1)");
        }
        if !(self.outlier_angle >= 0.0 && self.outlier_angle <= std::f64::consts::PI) {
            return bad("outlier_angle", "must lie in [0, pi]");
        }
        if !(self.inlier_sigma >= 0.0) {
            return bad("inlier_sigma", "must be >= 0");
        }
        if !(self.truth_spread > 0.0 && self.truth_spread <= std::f64::consts::PI) {
            return bad("truth_spread", "must lie in (0, pi]");
        }
        Ok(())
    }
}

/// A generated instance with its corruption mask.
#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub graph: ViewGraph,
    pub truth: Vec<Rotation>,
    /// Per edge id: whether an outlier perturbation was applied.
    pub corrupted: Vec<bool>,
    /// Per edge id: measurement before the outlier perturbation.
    pub clean: Vec<Rotation>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Random graph and ground truth; returns `(graph, truth)`.
pub fn generate(spec: &SyntheticSpec) -> Result<(ViewGraph, Vec<Rotation>)> {
    let inst = generate_instance(spec, None)?;
    Ok((inst.graph, inst.truth))
}

/// Full generator. The optional `gauge` left-multiplies the returned ground
/// truth; measurements are formed from the gauge-free rotations, so the graph
/// is bit-identical for every gauge.
pub fn generate_instance(spec: &SyntheticSpec, gauge: Option<Rotation>) -> Result<SyntheticInstance> {
    spec.validate()?;
    let n = spec.n;
    let mut truth_rng = stream(spec.seed, 0);
    let base: Vec<Rotation> = (0..n)
        .map(|_| {
            if spec.truth_spread >= std::f64::consts::PI {
                random_rotation(&mut truth_rng)
            } else {
                let angle = truth_rng.random_range(0.0..=spec.truth_spread);
                perturb(&Rotation::IDENTITY, angle, &mut truth_rng)
            }
        })
        .collect();

    let mut topo_rng = stream(spec.seed, 1);
    let mut pairs = Vec::new();
    let mut connected = false;
    for attempt in 0..MAX_RESAMPLES {
        pairs.clear();
        let mut probe = ViewGraph::new(n);
        for i in 0..n {
            for j in i + 1..n {
                if topo_rng.random_bool(spec.edge_density) {
                    pairs.push((i, j));
                    probe.add_edge(i, j, Rotation::IDENTITY, 1.0)?;
                }
            }
        }
        if probe.is_connected() {
            if attempt > 0 {
                info!("connected graph after {} draws", attempt + 1);
            }
            connected = true;
            break;
        }
    }
    if !connected {
        return Err(Error::NotConnected(MAX_RESAMPLES));
    }

    let mut noise_rng = stream(spec.seed, 2);
    let normal = Normal::new(0.0, spec.inlier_sigma.max(f64::MIN_POSITIVE))
        .expect("finite sigma");
    let m = pairs.len();
    let clean: Vec<Rotation> = pairs
        .iter()
        .map(|&(i, j)| {
            let rel = base[i].inverse() * base[j];
            if spec.inlier_sigma > 0.0 {
                let v = TangentVector([
                    normal.sample(&mut noise_rng),
                    normal.sample(&mut noise_rng),
                    normal.sample(&mut noise_rng),
                ]);
                rel * exp_map(&v)
            } else {
                rel
            }
        })
        .collect();

    let mut corrupt_rng = stream(spec.seed, 3);
    let count = (spec.outlier_fraction * m as f64).floor() as usize;
    let mut corrupted = vec![false; m];
    for idx in sample(&mut corrupt_rng, m, count).into_iter() {
        corrupted[idx] = true;
    }
    let mut graph = ViewGraph::new(n);
    for (e, &(i, j)) in pairs.iter().enumerate() {
        let sigma = if corrupted[e] {
            let angle = match spec.outlier_mode {
                PerturbMode::Fixed => spec.outlier_angle,
                PerturbMode::Uniform => corrupt_rng.random_range(0.0..=spec.outlier_angle),
            };
            perturb(&clean[e], angle, &mut corrupt_rng)
        } else {
            clean[e]
        };
        graph.add_edge(i, j, sigma, 1.0)?;
    }
    let truth = match gauge {
        Some(g) => base.iter().map(|r| g * *r).collect(),
        None => base,
    };
    Ok(SyntheticInstance {
        graph,
        truth,
        corrupted,
        clean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub max_deg: f64,
    pub per_node_errors: Vec<f64>,
    /// `G` such that `G * estimate_i ~ truth_i`.
    pub aligning_rotation: Rotation,
}

/// Dominant eigenvector of `sum q q^T`: the chordal mean of a rotation set.
pub fn chordal_mean(rotations: &[Rotation]) -> Rotation {
    let mut m = Matrix4::<f64>::zeros();
    for r in rotations {
        let q = nalgebra::Vector4::from(r.to_wxyz());
        m += q * q.transpose();
    }
    let eig = SymmetricEigen::new(m);
    let (best, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    let v = eig.eigenvectors.column(best);
    Rotation::from_wxyz(v[0], v[1], v[2], v[3]).unwrap_or(Rotation::IDENTITY)
}

/// Aligns `estimate` to `truth` with one global left-multiplication and
/// reports per-node geodesic errors in degrees.
///
/// The aligning rotation starts from the chordal mean of
/// `truth_i * estimate_i^-1` and is refined by geodesic (Karcher) mean steps,
/// which minimize the sum of squared angular errors.
pub fn align(estimate: &[Rotation], truth: &[Rotation]) -> Result<EvalResult> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::SizeMismatch {
            estimate: estimate.len(),
            truth: truth.len(),
        });
    }
    let offsets: Vec<Rotation> = truth
        .iter()
        .zip(estimate)
        .map(|(t, e)| *t * e.inverse())
        .collect();
    let mut g = chordal_mean(&offsets);
    for _ in 0..50 {
        let gi = g.inverse();
        let mut acc = TangentVector::ZERO;
        for o in &offsets {
            acc = acc.add(&log_map(&(gi * *o)));
        }
        let step = acc.scale(1.0 / offsets.len() as f64);
        g = g * exp_map(&step);
        if step.norm() < 1e-15 {
            break;
        }
    }
    let errors: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| geodesic_distance(&(g * *e), t).to_degrees())
        .collect();
    Ok(EvalResult {
        mean_deg: errors.iter().sum::<f64>() / errors.len() as f64,
        median_deg: median(&errors),
        max_deg: errors.iter().copied().fold(0.0, f64::max),
        per_node_errors: errors,
        aligning_rotation: g,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One pipeline configuration compared in an ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    /// `None` skips reweighting.
    pub denoise: Option<DenoiseConfig>,
    pub solver: SolverConfig,
    pub cost: CostFunction,
}

impl Method {
    pub fn new(name: &str, denoise: bool, cost: CostFunction) -> Self {
        Self {
            name: name.to_string(),
            denoise: denoise.then(DenoiseConfig::default),
            solver: SolverConfig {
                use_denoise_weights: denoise,
                ..SolverConfig::default()
            },
            cost,
        }
    }

    /// Denoise + exponential, no denoise + exponential, and the same two with l2.
    pub fn defaults() -> Vec<Method> {
        vec![
            Method::new("denoise+exp", true, CostFunction::exponential()),
            Method::new("none+exp", false, CostFunction::exponential()),
            Method::new("denoise+l2", true, CostFunction::L2),
            Method::new("none+l2", false, CostFunction::L2),
        ]
    }

    /// Reweights (when configured) and solves one graph.
    pub fn run(&self, graph: &ViewGraph, seed: u64) -> Result<crate::solver::SolveReport> {
        let weighted;
        let input = match &self.denoise {
            Some(cfg) => {
                let cfg = DenoiseConfig {
                    seed,
                    ..cfg.clone()
                };
                weighted = denoise(graph, &cfg)?.0;
                &weighted
            }
            None => graph,
        };
        solve(input, &self.solver, &self.cost)
    }
}

/// Outlier fractions of the reference protocol.
pub const DEFAULT_LEVELS: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub level: f64,
    pub mean_deg: f64,
    pub median_deg: f64,
    pub iters: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// `(method, level, repeat, message)` for cells that failed.
    pub failures: Vec<(String, f64, usize, String)>,
}

impl AblationTable {
    pub fn row(&self, method: &str, level: f64) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.level == level)
    }

    /// CSV with header `method,level,mean_deg,median_deg,iters,seconds`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        if self.rows.is_empty() {
            w.write_record(["method", "level", "mean_deg", "median_deg", "iters", "seconds"])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Seed of repeat `repeat` at level index `level`: every method sees the same
/// graphs, and the value does not depend on scheduling.
pub fn cell_seed(seed: u64, level: usize, repeat: usize) -> u64 {
    let mut rng = stream(seed, 1000 + level as u64);
    let mut s = 0;
    for _ in 0..=repeat {
        s = rng.random::<u64>();
    }
    s
}

struct CellResult {
    level: usize,
    method: usize,
    repeat: usize,
    outcome: std::result::Result<(f64, f64, usize, f64), String>,
}

/// Runs every method on `repeats` graphs per outlier level and averages.
pub fn run_ablation(
    levels: &[f64],
    template: &SyntheticSpec,
    methods: &[Method],
    repeats: usize,
) -> Result<AblationTable> {
    if repeats == 0 {
        return Err(Error::Config {
            key: "repeats".into(),
            msg: "must be >= 1".into(),
        });
    }
    let cells: Vec<(usize, usize)> = (0..levels.len())
        .flat_map(|l| (0..repeats).map(move |r| (l, r)))
        .collect();
    let results: Vec<CellResult> = cells
        .par_iter()
        .flat_map_iter(|&(l, r)| {
            let seed = cell_seed(template.seed, l, r);
            let spec = SyntheticSpec {
                outlier_fraction: levels[l],
                seed,
                ..template.clone()
            };
            let inst = generate_instance(&spec, None);
            methods.iter().enumerate().map(move |(mi, method)| {
                let outcome = match &inst {
                    Err(e) => Err(e.to_string()),
                    Ok(inst) => {
                        let start = Instant::now();
                        method
                            .run(&inst.graph, seed)
                            .and_then(|rep| {
                                let ev = align(&rep.rotations, &inst.truth)?;
                                Ok((
                                    ev.mean_deg,
                                    ev.median_deg,
                                    rep.iterations,
                                    start.elapsed().as_secs_f64(),
                                ))
                            })
                            .map_err(|e| e.to_string())
                    }
                };
                CellResult {
                    level: l,
                    method: mi,
                    repeat: r,
                    outcome,
                }
            }).collect::<Vec<_>>()
        })
        .collect();

    let mut table = AblationTable::default();
    for (l, &level) in levels.iter().enumerate() {
        for (mi, method) in methods.iter().enumerate() {
            let mut ok = Vec::new();
            for c in results.iter().filter(|c| c.level == l && c.method == mi) {
                match &c.outcome {
                    Ok(v) => ok.push(*v),
                    Err(msg) => {
                        warn!("{} at level {level}, repeat {}: {msg}", method.name, c.repeat);
                        table
                            .failures
                            .push((method.name.clone(), level, c.repeat, msg.clone()));
                    }
                }
            }
            let k = ok.len() as f64;
            let avg = |f: fn(&(f64, f64, usize, f64)) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(f).sum::<f64>() / k
                }
            };
            table.rows.push(AblationRow {
                method: method.name.clone(),
                level,
                mean_deg: avg(|v| v.0),
                median_deg: avg(|v| v.1),
                iters: avg(|v| v.2 as f64),
                seconds: avg(|v| v.3),
            });
        }
    }
    Ok(table)
}
