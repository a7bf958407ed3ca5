//! The train / verify / falsify / simulate / export-plots pipeline behind the
//! command line tool. Each command reports progress to a writer and maps its
//! outcome onto [`Exit`].

pub mod checkpoint;
pub mod config;

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::certify::{certify_region, falsify_by_sampling, Certificate, Verdict};
use crate::problem::ContractionProblem;
use crate::systems::{benchmark_system, ControlAffineSystem};
use crate::tracking::{
    ball_tube_check, equilibrium_reference, flat_reference, rates_csv, reference_csv, simulate,
    simulation_csv, TrackingError, TrajectoryShape, TubeCheck,
};
use crate::train::{stage_region, train_curriculum, TrainEvent, TrainStatus, LOG_HEADER};

pub use checkpoint::{load_certificate, Checkpoint};
pub use config::{ConfigError, RunConfig};

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Ok,
    Io,
    Config,
    BudgetExhausted,
    VerifyMismatch,
    Violation,
    InfeasibleReference,
}

impl Exit {
    pub fn code(self) -> i32 {
        match self {
            Exit::Ok => 0,
            Exit::Io => 1,
            Exit::Config => 2,
            Exit::BudgetExhausted => 3,
            Exit::VerifyMismatch => 4,
            Exit::Violation => 5,
            Exit::InfeasibleReference => 6,
        }
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        CliError {
            exit,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(Exit::Config, e.to_string())
    }
}

/// Relative tolerance when comparing stored and recomputed cell values.
pub const VERIFY_TOL: f64 = 1e-9;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const LOG_FILE: &str = "log.csv";
pub const TIMING_FILE: &str = "timing.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::new(Exit::Io, format!("cannot create {}: {e}", dir.display())))
}

pub fn build_problem(cfg: &RunConfig) -> Result<(ContractionProblem, ChaCha8Rng), CliError> {
    let system = benchmark_system(&cfg.system).map_err(|e| CliError::new(Exit::Config, e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let problem = ContractionProblem::warm_started(system, cfg.hyper, &cfg.network, &mut rng)
        .map_err(|e| CliError::new(Exit::Config, format!("warm start: {e}")))?;
    Ok((problem, rng))
}

/// Trains from a config file, writing the checkpoint, certificate and logs
/// into `out`. Succeeds only when the target region is certified.
pub fn cmd_train(
    config_path: &Path,
    out: &Path,
    timestamp: Option<u64>,
    msg: &mut dyn Write,
) -> Result<Certificate, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let (problem, rng) = build_problem(&cfg)?;
    create_dir(out)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let _ = writeln!(
        msg,
        "training {} with {} parameters over {} cells, stages {}..{}",
        cfg.system,
        problem.num_params(),
        cfg.region.num_cells(),
        cfg.curriculum.start,
        cfg.curriculum.target
    );

    let mut write_err = None;
    let outcome = train_curriculum(problem, &cfg.region, &cfg.optimizer, &cfg.curriculum, |ev| match ev {
        TrainEvent::Advanced { stage, state, problem } => {
            let region = stage_region(&cfg.region, stage);
            let ck = Checkpoint::new(&cfg, problem, region, stage, Some(stage), state.step, &rng);
            if let Err(e) = ck.save(&ckpt_path) {
                write_err.get_or_insert(e);
            }
            let _ = writeln!(msg, "step {}: stage {stage} reached zero loss", state.step);
        }
        TrainEvent::Logged(row) => {
            if row.step % 100 == 0 && row.loss > 0.0 {
                let _ = writeln!(msg, "step {}: stage {} loss {:.4e}", row.step, row.stage, row.loss);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }

    let state = &outcome.state;
    let mut log = String::from(LOG_HEADER);
    log.push('\n');
    let mut timing = String::from("step,n,elapsed_s\n");
    for (row, t) in state.history.iter().zip(&state.elapsed) {
        log.push_str(&row.csv());
        log.push('\n');
        let _ = writeln!(timing, "{},{},{t:.6}", row.step, row.stage);
    }
    checkpoint::write_text(&out.join(LOG_FILE), &log)?;
    checkpoint::write_text(&out.join(TIMING_FILE), &timing)?;

    let stage = state.certified_stage.unwrap_or(state.stage);
    let ck = Checkpoint::new(
        &cfg,
        &outcome.problem,
        stage_region(&cfg.region, stage),
        state.stage,
        state.certified_stage,
        state.step,
        &rng,
    );
    ck.save(&ckpt_path)?;

    match (outcome.status, outcome.certificate) {
        (TrainStatus::Certified, Some(mut cert)) => {
            cert.timestamp_unix = timestamp;
            checkpoint::write_json(&out.join(CERTIFICATE_FILE), &cert)?;
            let _ = writeln!(
                msg,
                "certified stage {} after {} steps: max lambda {:.4e}, a_hat {:.4e}, b_hat {:.4e}",
                cfg.curriculum.target,
                state.step,
                cert.max_lambda(),
                cert.a_hat,
                cert.b_hat
            );
            Ok(cert)
        }
        (_, Some(mut cert)) => {
            cert.timestamp_unix = timestamp;
            checkpoint::write_json(&out.join(CERTIFICATE_FILE), &cert)?;
            Err(CliError::new(
                Exit::BudgetExhausted,
                format!(
                    "training loss reached zero but the final check failed: {}",
                    cert.failure.unwrap_or_default()
                ),
            ))
        }
        (_, None) => Err(CliError::new(
            Exit::BudgetExhausted,
            format!(
                "budget exhausted after {} steps at stage {} (last zero-loss stage {:?}); best checkpoint in {}",
                state.step,
                state.stage,
                state.certified_stage,
                ckpt_path.display()
            ),
        )),
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

/// Recomputes the certificate for the config's target region and compares it
/// with the stored one.
pub fn cmd_verify(
    ckpt_path: &Path,
    config_path: &Path,
    cert_path: Option<&Path>,
    msg: &mut dyn Write,
) -> Result<Certificate, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let ck = Checkpoint::load(ckpt_path)?;
    let cert_path = cert_path.map_or_else(|| sibling(ckpt_path, CERTIFICATE_FILE), Path::to_path_buf);
    let stored = load_certificate(&cert_path)?;
    let mismatch = |m: String| CliError::new(Exit::VerifyMismatch, m);

    if cfg.system != ck.problem.system.name() {
        return Err(mismatch(format!(
            "config system {} does not match checkpoint system {}",
            cfg.system,
            ck.problem.system.name()
        )));
    }
    let region = cfg.target_region();
    if stored.region.partitions != region.partitions {
        return Err(mismatch(format!(
            "grid mismatch: certificate partitions {:?}, config partitions {:?}",
            stored.region.partitions, region.partitions
        )));
    }
    if stored.region.bounds != region.bounds {
        return Err(mismatch("region mismatch: certificate and config bounds differ".into()));
    }
    if stored.problem_hash != ck.problem.hash() {
        return Err(mismatch("certificate was issued for a different problem".into()));
    }
    let fresh = certify_region(&ck.problem, &region);
    let _ = writeln!(
        msg,
        "recomputed {} cells: max lambda {:.6e}, a_hat {:.6e}, b_hat {:.6e}",
        fresh.cell_lambdas.len(),
        fresh.max_lambda(),
        fresh.a_hat,
        fresh.b_hat
    );
    if stored.cell_lambdas.len() != fresh.cell_lambdas.len() {
        return Err(mismatch(format!(
            "certificate lists {} cells, recomputation has {}",
            stored.cell_lambdas.len(),
            fresh.cell_lambdas.len()
        )));
    }
    let close = |a: f64, b: f64| (a - b).abs() <= VERIFY_TOL * a.abs().max(b.abs()).max(1.0) || (a.is_nan() && b.is_nan());
    if let Some(i) = (0..fresh.cell_lambdas.len()).find(|&i| !close(stored.cell_lambdas[i], fresh.cell_lambdas[i])) {
        return Err(mismatch(format!(
            "cell {i} differs: stored lambda {:e}, recomputed {:e}",
            stored.cell_lambdas[i], fresh.cell_lambdas[i]
        )));
    }
    if !close(stored.a_hat, fresh.a_hat) || !close(stored.b_hat, fresh.b_hat) {
        return Err(mismatch(format!(
            "metric bounds differ: stored ({:e}, {:e}), recomputed ({:e}, {:e})",
            stored.a_hat, stored.b_hat, fresh.a_hat, fresh.b_hat
        )));
    }
    if stored.verdict != fresh.verdict {
        return Err(mismatch(format!(
            "stored verdict {:?}, recomputed {:?}",
            stored.verdict, fresh.verdict
        )));
    }
    if fresh.verdict != Verdict::Certified {
        return Err(mismatch(format!(
            "region is not certified: {}",
            fresh.failure.clone().unwrap_or_default()
        )));
    }
    let _ = writeln!(msg, "certificate verified");
    Ok(fresh)
}

/// Samples `μ2(G(x))` over the checkpoint's region looking for a positive value.
pub fn cmd_falsify(
    ckpt_path: &Path,
    samples: usize,
    seed: Option<u64>,
    msg: &mut dyn Write,
) -> Result<crate::certify::FalsifyReport, CliError> {
    let ck = Checkpoint::load(ckpt_path)?;
    if samples == 0 {
        let _ = writeln!(msg, "warning: zero samples requested; nothing was checked");
    }
    let report = falsify_by_sampling(&ck.problem, &ck.region, samples, seed.unwrap_or(ck.rng_seed));
    if report.found_violation() {
        return Err(CliError::new(
            Exit::Violation,
            format!(
                "mu2(G(x)) = {:.6e} > 0 at x = {:?}",
                report.worst_mu2, report.worst_state
            ),
        ));
    }
    if samples > 0 {
        let _ = writeln!(
            msg,
            "{samples} samples, largest mu2(G(x)) {:.6e}: no violation found",
            report.worst_mu2
        );
    }
    Ok(report)
}

/// Settings of `simulate`.
#[derive(Clone, Debug)]
pub struct SimulateArgs {
    pub shape: String,
    /// `key=value` overrides of the shape's numeric parameters.
    pub params: Vec<String>,
    pub duration: f64,
    pub dt: f64,
    pub starts: usize,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SimManifest {
    schema_version: u32,
    shape: Option<TrajectoryShape>,
    duration: f64,
    dt: f64,
    starts: usize,
    contraction_rate: f64,
    fit_horizon: f64,
    worst_fitted_rate: Option<f64>,
    diverged: usize,
    tube: TubeCheck,
    files: Vec<&'static str>,
}

fn shape_with_params(name: &str, params: &[String]) -> Result<TrajectoryShape, CliError> {
    let config = |m: String| CliError::new(Exit::Config, m);
    let shape = TrajectoryShape::by_name(name).ok_or_else(|| {
        config(format!(
            "unknown shape '{name}'; expected hover, figure_eight, helix, trefoil or vertical_accel"
        ))
    })?;
    if params.is_empty() {
        return Ok(shape);
    }
    let mut value = serde_json::to_value(&shape).expect("shape serializes");
    for kv in params {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| config(format!("shape parameter '{kv}' is not key=value")))?;
        let slot = value
            .get_mut(k)
            .filter(|s| s.is_number())
            .ok_or_else(|| config(format!("shape {name} has no numeric parameter '{k}'")))?;
        let v: f64 = v
            .parse()
            .map_err(|_| config(format!("shape parameter '{k}' needs a number, got '{v}'")))?;
        *slot = serde_json::json!(v);
    }
    serde_json::from_value(value).map_err(|e| config(e.to_string()))
}

/// Simulates the tracking controller from sampled starts in the checkpoint's
/// region and writes CSVs plus a plot manifest.
pub fn cmd_simulate(
    ckpt_path: &Path,
    args: &SimulateArgs,
    msg: &mut dyn Write,
) -> Result<crate::tracking::SimulationResult, CliError> {
    let ck = Checkpoint::load(ckpt_path)?;
    let problem = &ck.problem;
    let infeasible = |e: TrackingError| match e {
        TrackingError::Parameters(m) | TrackingError::Dimension(m) => CliError::new(Exit::Config, m),
        other => CliError::new(Exit::InfeasibleReference, other.to_string()),
    };
    let reference = if problem.system.name() == "quadrotor10" {
        let shape = shape_with_params(&args.shape, &args.params)?;
        flat_reference(&shape, args.duration, args.dt).map_err(infeasible)?
    } else if args.shape == "hover" && args.params.is_empty() {
        equilibrium_reference(&problem.system, args.duration, args.dt).map_err(infeasible)?
    } else {
        return Err(CliError::new(
            Exit::Config,
            format!("system {} only supports the hover (equilibrium) reference", problem.system.name()),
        ));
    };

    let mut rng = ChaCha8Rng::seed_from_u64(ck.rng_seed);
    let starts: Vec<Vec<f64>> = (0..args.starts).map(|_| ck.region.sample(&mut rng)).collect();
    let sim = simulate(problem, &reference, &starts, args.dt).map_err(infeasible)?;
    let tube = ball_tube_check(&ck.region, &reference, 0.0, &problem.hyper);

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| sibling(ckpt_path, &format!("sim_{}", args.shape)));
    create_dir(&out)?;
    let stride = (sim.times.len() / 2000).max(1);
    checkpoint::write_text(&out.join("reference.csv"), &reference_csv(&reference))?;
    checkpoint::write_text(&out.join("trajectories.csv"), &simulation_csv(&sim, stride))?;
    checkpoint::write_text(&out.join("rates.csv"), &rates_csv(&sim))?;
    let diverged = sim.trajectories.iter().filter(|t| t.diverged_at.is_some()).count();
    let manifest = SimManifest {
        schema_version: 1,
        shape: reference.shape.clone(),
        duration: args.duration,
        dt: args.dt,
        starts: args.starts,
        contraction_rate: problem.hyper.c,
        fit_horizon: sim.fit_horizon,
        worst_fitted_rate: sim.worst_rate(),
        diverged,
        tube,
        files: vec!["reference.csv", "trajectories.csv", "rates.csv"],
    };
    checkpoint::write_json(&out.join("manifest.json"), &manifest)?;
    let _ = writeln!(
        msg,
        "simulated {} starts over {} s: worst fitted rate {:?}, {} diverged; output in {}",
        args.starts,
        args.duration,
        sim.worst_rate(),
        diverged,
        out.display()
    );
    Ok(sim)
}

#[derive(Serialize)]
struct PlotSpec {
    name: String,
    file: String,
    x: &'static str,
    y: Vec<String>,
    log_y: bool,
}

/// Writes `plots/manifest.json` and a gnuplot script for a training run
/// directory and any `sim_*` subdirectories in it.
pub fn cmd_export_plots(run: &Path, msg: &mut dyn Write) -> Result<PathBuf, CliError> {
    if !run.join(LOG_FILE).is_file() {
        return Err(CliError::new(
            Exit::Io,
            format!("{} has no {LOG_FILE}", run.display()),
        ));
    }
    let mut plots = vec![
        PlotSpec {
            name: "loss".into(),
            file: format!("../{LOG_FILE}"),
            x: "step",
            y: vec!["loss".into()],
            log_y: false,
        },
        PlotSpec {
            name: "lambda".into(),
            file: format!("../{LOG_FILE}"),
            x: "step",
            y: vec!["lambda".into()],
            log_y: false,
        },
        PlotSpec {
            name: "stage".into(),
            file: format!("../{LOG_FILE}"),
            x: "step",
            y: vec!["n".into()],
            log_y: false,
        },
        PlotSpec {
            name: "metric_bounds".into(),
            file: format!("../{LOG_FILE}"),
            x: "step",
            y: vec!["a_hat".into(), "b_hat".into()],
            log_y: true,
        },
    ];
    let mut sims: Vec<PathBuf> = std::fs::read_dir(run)
        .map_err(|e| CliError::new(Exit::Io, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    sims.sort();
    for dir in &sims {
        let name = dir.file_name().unwrap().to_string_lossy().to_string();
        plots.push(PlotSpec {
            name: format!("{name}_d_hat"),
            file: format!("../{name}/trajectories.csv"),
            x: "t",
            y: vec!["d_hat".into()],
            log_y: true,
        });
        plots.push(PlotSpec {
            name: format!("{name}_position"),
            file: format!("../{name}/trajectories.csv"),
            x: "t",
            y: vec!["x0".into(), "x1".into()],
            log_y: false,
        });
    }
    let dir = run.join("plots");
    create_dir(&dir)?;
    checkpoint::write_json(&dir.join("manifest.json"), &plots)?;

    let mut gp = String::from("set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n");
    for p in &plots {
        let _ = writeln!(gp, "set output '{}.png'", p.name);
        gp.push_str(if p.log_y { "set logscale y\n" } else { "unset logscale y\n" });
        let series: Vec<String> = p
            .y
            .iter()
            .map(|y| format!("'{}' using '{}':'{}' with lines", p.file, p.x, y))
            .collect();
        let _ = writeln!(gp, "plot {}", series.join(", "));
    }
    checkpoint::write_text(&dir.join("plots.gp"), &gp)?;
    let _ = writeln!(msg, "wrote {} plot specs to {}", plots.len(), dir.display());
    Ok(dir)
}
