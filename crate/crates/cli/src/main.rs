mod settings;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rotsync::denoise::{denoise, DenoiseReport};
use rotsync::io::{self, RotationSet};
use rotsync::solver::{solve, SolveReport};
use rotsync::synth::{align, generate_instance, run_ablation, Method};
use rotsync::ViewGraph;
use serde::Serialize;

use settings::{parse_init, Settings, COST_KINDS};

#[derive(Parser)]
#[command(name = "rotsync", version, about = "Robust rotation averaging on SO(3)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reweight and solve a graph file; exit 0 on convergence, 2 at max_iters.
    Solve {
        input: PathBuf,
        /// Also write the solved rotations as g2o VERTEX lines (or JSON).
        #[arg(long)]
        vertices: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute cycle-consistency weights and write the reweighted graph.
    Denoise {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Draw a synthetic graph; writes the graph to --out and the ground truth to --truth.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        fraction: Option<f64>,
        /// Outlier perturbation in degrees.
        #[arg(long)]
        angle_deg: Option<f64>,
        /// Ground-truth output (default: next to --out with a .truth.g2o suffix).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Align an estimate to ground truth and print the errors in degrees.
    Eval {
        estimate: PathBuf,
        truth: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the outlier-level ablation and write the CSV table.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = COST_KINDS)]
    cost: Option<String>,
    /// Constant penalty parameter instead of the 1/k schedule.
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_parser = ["identity", "tree"])]
    init: Option<String>,
    #[arg(long)]
    no_denoise: bool,
}

fn settings(common: &Common) -> Result<Settings> {
    settings_with(common, &[])
}

/// Defaults, then the config file, then `extra` entries, then the common flags.
fn settings_with(common: &Common, extra: &[(&str, String)]) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &common.config {
        s.apply_file(path)?;
    }
    for (k, v) in extra {
        s.set(k, v)?;
    }
    if let Some(v) = common.seed {
        s.seed = v;
    }
    if let Some(v) = common.threads {
        s.threads = Some(v);
    }
    if let Some(v) = &common.cost {
        s.set("cost", v)?;
    }
    if let Some(v) = common.tau0 {
        s.set("tau0", &v.to_string())?;
    }
    if let Some(v) = common.alpha {
        s.solver.alpha = v;
    }
    if let Some(v) = common.epsilon {
        s.denoise.epsilon = v;
    }
    if let Some(v) = &common.init {
        s.solver.init_mode = parse_init(v)?;
    }
    if common.no_denoise {
        s.denoise_enabled = false;
    }
    s.finish()?;
    let echo: Vec<String> = s.entries().iter().map(|(k, v)| format!("{k}={v}")).collect();
    info!("effective settings: {}", echo.join(" "));
    if let Some(t) = s.threads {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(s)
}

fn read_connected(path: &Path) -> Result<ViewGraph> {
    let doc = io::read_graph(path).with_context(|| format!("cannot load graph {}", path.display()))?;
    let g = doc.graph;
    if g.node_count() == 0 {
        bail!("{}: graph has no nodes", path.display());
    }
    if g.is_connected() {
        return Ok(g);
    }
    let (largest, _) = g.largest_component()?;
    warn!(
        "graph has {} components; dropping {} of {} nodes and keeping the largest component",
        g.components().len(),
        g.node_count() - largest.node_count(),
        g.node_count()
    );
    Ok(largest)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    #[serde(flatten)]
    report: &'a SolveReport,
    denoise: Option<&'a DenoiseReport>,
    seed: u64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_solve(input: &Path, vertices: Option<&Path>, common: &Common) -> Result<ExitCode> {
    let s = settings(common)?;
    let graph = read_connected(input)?;
    let mut denoise_report = None;
    let weighted;
    let to_solve = if s.denoise_enabled {
        let (g, rep) = denoise(&graph, &s.denoise)?;
        denoise_report = Some(rep);
        weighted = g;
        &weighted
    } else {
        &graph
    };
    let report = solve(to_solve, &s.solver, &s.cost())?;
    println!(
        "{} nodes, {} edges ({} cyclic): {} after {} iterations, final res {:.3e}, {:.3} s",
        to_solve.node_count(),
        report.edges,
        report.cyclic_edges,
        if report.converged { "converged" } else { "stopped" },
        report.iterations,
        report.residual_trace.last().copied().unwrap_or(0.0),
        report.wall_time
    );
    if let Some(out) = &common.out {
        let output = SolveOutput {
            report: &report,
            denoise: denoise_report.as_ref(),
            seed: s.seed,
        };
        write_json(out, &output)?;
    }
    if let Some(path) = vertices {
        io::write_rotations(
            path,
            &RotationSet {
                nodes: report.nodes.clone(),
                rotations: report.rotations.clone(),
            },
        )?;
    }
    Ok(if report.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_denoise(input: &Path, common: &Common) -> Result<ExitCode> {
    let s = settings(common)?;
    let graph = read_connected(input)?;
    let (weighted, rep) = denoise(&graph, &s.denoise)?;
    let improved = rep
        .improved_fraction(s.denoise.epsilon)
        .map_or("n/a".to_string(), |f| format!("{:.1}%", 100.0 * f));
    println!(
        "{} cycles, {} triangles; max cycle residual {:.4} -> {:.4} rad; \
         weighted residual not larger on {improved} of inconsistent cycles",
        rep.cycles, rep.samples, rep.pre_residual_max, rep.post_residual_max
    );
    println!("weight histogram (0.1 bins): {:?}", rep.weights_histogram);
    if let Some(out) = &common.out {
        io::write_graph(out, &weighted, None)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("graph".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.truth.g2o"))
}

fn cmd_synth(
    n: Option<usize>,
    density: Option<f64>,
    fraction: Option<f64>,
    angle_deg: Option<f64>,
    truth: Option<&Path>,
    common: &Common,
) -> Result<ExitCode> {
    let mut overrides = Vec::new();
    if let Some(v) = n {
        overrides.push(("n", v.to_string()));
    }
    if let Some(v) = density {
        overrides.push(("edge_density", v.to_string()));
    }
    if let Some(v) = fraction {
        overrides.push(("outlier_fraction", v.to_string()));
    }
    if let Some(v) = angle_deg {
        overrides.push(("outlier_angle", v.to_radians().to_string()));
    }
    let s = settings_with(common, &overrides)?;

    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("synth.json"));
    let truth = truth.map_or_else(|| truth_path(&out), Path::to_path_buf);
    let inst = generate_instance(&s.synth, None)?;
    io::write_graph(&out, &inst.graph, None)?;
    io::write_rotations(
        &truth,
        &RotationSet {
            nodes: inst.graph.labels().to_vec(),
            rotations: inst.truth.clone(),
        },
    )?;
    let corrupted = inst.corrupted.iter().filter(|c| **c).count();
    println!(
        "{} nodes, {} edges ({corrupted} perturbed) -> {}, truth -> {}",
        inst.graph.node_count(),
        inst.graph.edge_count(),
        out.display(),
        truth.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(estimate: &Path, truth: &Path, common: &Common) -> Result<ExitCode> {
    settings(common)?;
    let load = |p: &Path| {
        io::read_rotations(p).with_context(|| format!("cannot load rotations {}", p.display()))
    };
    let est = load(estimate)?;
    let gt = load(truth)?;
    let index: std::collections::HashMap<u64, usize> =
        gt.nodes.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut e = Vec::new();
    let mut t = Vec::new();
    for (id, r) in est.nodes.iter().zip(&est.rotations) {
        if let Some(&k) = index.get(id) {
            e.push(*r);
            t.push(gt.rotations[k]);
        }
    }
    if e.len() < est.nodes.len() || e.len() < gt.nodes.len() {
        warn!(
            "evaluating {} shared nodes (estimate has {}, truth has {})",
            e.len(),
            est.nodes.len(),
            gt.nodes.len()
        );
    }
    if e.is_empty() {
        bail!("no node ids in common between the estimate and the truth");
    }
    let ev = align(&e, &t)?;
    println!("mean {:.6} deg, median {:.6} deg, max {:.6} deg", ev.mean_deg, ev.median_deg, ev.max_deg);
    if let Some(out) = &common.out {
        write_json(out, &ev)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(common: &Common) -> Result<ExitCode> {
    let s = settings(common)?;
    let mut methods = Method::defaults();
    for m in methods.iter_mut() {
        let denoised = m.denoise.is_some();
        m.solver = rotsync::solver::SolverConfig {
            use_denoise_weights: denoised,
            ..s.solver.clone()
        };
        if denoised {
            m.denoise = Some(s.denoise.clone());
        }
    }
    let table = run_ablation(&s.levels, &s.synth, &methods, s.repeats)?;
    for (method, level, repeat, msg) in &table.failures {
        warn!("{method} at level {level}, repeat {repeat}: {msg}");
    }
    match &common.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("cannot write {}", path.display()))?;
            table.write_csv(file)?;
        }
        None => {
            let csv = table.to_csv_string()?;
            std::io::stdout().write_all(csv.as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Solve {
            input,
            vertices,
            common,
        } => cmd_solve(input, vertices.as_deref(), common),
        Command::Denoise { input, common } => cmd_denoise(input, common),
        Command::Synth {
            n,
            density,
            fraction,
            angle_deg,
            truth,
            common,
        } => cmd_synth(*n, *density, *fraction, *angle_deg, truth.as_deref(), common),
        Command::Eval {
            estimate,
            truth,
            common,
        } => cmd_eval(estimate, truth, common),
        Command::Bench { common } => cmd_bench(common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROTSYNC_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
