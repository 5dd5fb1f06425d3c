//! Effective run settings: defaults, then a flat `key = value` config file,
//! then command-line flags.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rotsync::cost::DEFAULT_HUBER_DELTA;
use rotsync::denoise::DenoiseConfig;
use rotsync::solver::{CostFunction, InitMode, SolverConfig, TauSchedule};
use rotsync::synth::{PerturbMode, SyntheticSpec, DEFAULT_LEVELS};

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub threads: Option<usize>,
    pub denoise_enabled: bool,
    pub cost_kind: String,
    pub tau0: f64,
    pub huber_delta: f64,
    pub solver: SolverConfig,
    pub denoise: DenoiseConfig,
    pub synth: SyntheticSpec,
    pub repeats: usize,
    pub levels: Vec<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            denoise_enabled: true,
            cost_kind: "exp".into(),
            tau0: 1.0,
            huber_delta: DEFAULT_HUBER_DELTA,
            solver: SolverConfig::default(),
            denoise: DenoiseConfig::default(),
            synth: SyntheticSpec::default(),
            repeats: 10,
            levels: DEFAULT_LEVELS.to_vec(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse '{value}': {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got '{value}'"),
    }
}

pub fn parse_init(value: &str) -> Result<InitMode> {
    match value {
        "identity" => Ok(InitMode::Identity),
        "tree" | "spanning_tree" => Ok(InitMode::SpanningTree),
        _ => bail!("init_mode: expected identity or tree, got '{value}'"),
    }
}

pub const COST_KINDS: [&str; 5] = ["exp", "l1", "l2", "lhalf", "huber"];

impl Settings {
    /// Applies one config entry. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            "cost" => {
                if !COST_KINDS.contains(&value) {
                    bail!("cost: expected one of {}, got '{value}'", COST_KINDS.join(", "));
                }
                self.cost_kind = value.to_string();
            }
            "huber_delta" => self.huber_delta = parse(key, value)?,
            "denoise" => self.denoise_enabled = parse_bool(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "levels" => {
                self.levels = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }

            "alpha" => self.solver.alpha = parse(key, value)?,
            "max_iters" => self.solver.max_iters = parse(key, value)?,
            "init_mode" => self.solver.init_mode = parse_init(value)?,
            "use_denoise_weights" => self.solver.use_denoise_weights = parse_bool(key, value)?,
            "tau_schedule" => {
                self.solver.tau_schedule = match value {
                    "reciprocal" => TauSchedule::Reciprocal,
                    "constant" => TauSchedule::Constant(self.tau0),
                    _ => bail!("tau_schedule: expected reciprocal or constant, got '{value}'"),
                }
            }
            "tau0" => {
                self.tau0 = parse(key, value)?;
                self.solver.tau_schedule = TauSchedule::Constant(self.tau0);
            }
            "gauge_node" => self.solver.gauge_node = parse(key, value)?,
            "residual_floor" => self.solver.residual_floor = parse(key, value)?,

            "epsilon" => self.denoise.epsilon = parse(key, value)?,
            "sample_rounds_scale" => self.denoise.sample_rounds_scale = parse(key, value)?,
            "inner_iters" => self.denoise.inner_iters = parse(key, value)?,
            "min_weight" => self.denoise.min_weight = parse(key, value)?,
            "max_cycle_len" => self.denoise.max_cycle_len = parse(key, value)?,
            "floor_start" => self.denoise.floor_start = parse_bool(key, value)?,

            "n" => self.synth.n = parse(key, value)?,
            "edge_density" => self.synth.edge_density = parse(key, value)?,
            "outlier_fraction" => self.synth.outlier_fraction = parse(key, value)?,
            "outlier_angle" => self.synth.outlier_angle = parse(key, value)?,
            "outlier_mode" => {
                self.synth.outlier_mode = match value {
                    "fixed" => PerturbMode::Fixed,
                    "uniform" => PerturbMode::Uniform,
                    _ => bail!("outlier_mode: expected fixed or uniform, got '{value}'"),
                }
            }
            "inlier_sigma" => self.synth.inlier_sigma = parse(key, value)?,
            "truth_spread" => self.synth.truth_spread = parse(key, value)?,

            _ => bail!("unknown configuration key '{key}'"),
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        self.apply_text(&text, path)
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), n + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        }
        Ok(())
    }

    /// Copies the run seed into the stages that consume one.
    pub fn finish(&mut self) -> Result<()> {
        self.denoise.seed = self.seed;
        self.synth.seed = self.seed;
        if !self.denoise_enabled {
            self.solver.use_denoise_weights = false;
        }
        self.solver.validate()?;
        self.denoise.validate()?;
        if self.repeats == 0 {
            bail!("invalid configuration: repeats: must be >= 1");
        }
        Ok(())
    }

    pub fn cost(&self) -> CostFunction {
        match self.cost_kind.as_str() {
            "l1" => CostFunction::L1,
            "l2" => CostFunction::L2,
            "lhalf" => CostFunction::LHalf,
            "huber" => CostFunction::Huber {
                delta: self.huber_delta,
            },
            _ => CostFunction::Exponential { tau: self.tau0 },
        }
    }

    /// Every effective value, in config-file syntax.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.solver;
        let d = &self.denoise;
        let y = &self.synth;
        let schedule = match s.tau_schedule {
            TauSchedule::Reciprocal => "reciprocal",
            TauSchedule::Constant(_) => "constant",
        };
        let init = match s.init_mode {
            InitMode::Identity => "identity",
            InitMode::SpanningTree => "tree",
        };
        let mode = match y.outlier_mode {
            PerturbMode::Fixed => "fixed",
            PerturbMode::Uniform => "uniform",
        };
        let levels: Vec<String> = self.levels.iter().map(|l| l.to_string()).collect();
        vec![
            ("seed", self.seed.to_string()),
            (
                "threads",
                self.threads.map_or("auto".into(), |t| t.to_string()),
            ),
            ("cost", self.cost_kind.clone()),
            ("tau0", self.tau0.to_string()),
            ("huber_delta", self.huber_delta.to_string()),
            ("denoise", self.denoise_enabled.to_string()),
            ("repeats", self.repeats.to_string()),
            ("levels", levels.join(",")),
            ("alpha", s.alpha.to_string()),
            ("max_iters", s.max_iters.to_string()),
            ("init_mode", init.into()),
            ("use_denoise_weights", s.use_denoise_weights.to_string()),
            ("tau_schedule", schedule.into()),
            ("gauge_node", s.gauge_node.to_string()),
            ("residual_floor", s.residual_floor.to_string()),
            ("epsilon", d.epsilon.to_string()),
            ("sample_rounds_scale", d.sample_rounds_scale.to_string()),
            ("inner_iters", d.inner_iters.to_string()),
            ("min_weight", d.min_weight.to_string()),
            ("max_cycle_len", d.max_cycle_len.to_string()),
            ("floor_start", d.floor_start.to_string()),
            ("n", y.n.to_string()),
            ("edge_density", y.edge_density.to_string()),
            ("outlier_fraction", y.outlier_fraction.to_string()),
            ("outlier_angle", y.outlier_angle.to_string()),
            ("outlier_mode", mode.into()),
            ("inlier_sigma", y.inlier_sigma.to_string()),
            ("truth_spread", y.truth_spread.to_string()),
        ]
    }
}
