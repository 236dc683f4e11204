use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use fading_diffusion::config::{ConfigFile, Overrides};
use fading_diffusion::engine::Mode;
use fading_diffusion::harness::{self, to_db, EnsembleResult, LearningCurve, SweepRow};
use fading_diffusion::theory::{mean_step_bounds, ms_step_bounds, TheoryModel};
use fading_diffusion::validate::{run_suite, ValidateOptions};
use fading_diffusion::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "fdiff", version, about = "Diffusion LMS over fading wireless links")]
struct Cli {
    /// TOML configuration; the bundled defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed of the simulation (overrides FDIFF_SEED and the file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides FDIFF_OUT and the file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to every core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Monte Carlo runs per mode.
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo ensembles and write learning curves.
    Simulate,
    /// Evaluate the mean-square theory and stability conditions.
    Predict,
    /// Steady-state MSD as every link SNR is raised in steps.
    Sweep,
    /// Run the oracle suite.
    Validate {
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        /// Monte Carlo draws for the sampled checks.
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
        /// Multiply every tolerance by this factor.
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Diverged(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Dimension(_) | Error::Invariant(_) => Failure::Config(e.to_string()),
            Error::AllDiverged(_) => Failure::Diverged(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

struct Context {
    cfg: ConfigFile,
    hash: String,
    started: Instant,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self, Failure> {
        let mut cfg = match &cli.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::bundled(),
        };
        let over = Overrides { seed: cli.seed, out: cli.out.clone(), jobs: cli.jobs, runs: cli.runs };
        cfg.apply(&over, |k| std::env::var(k).ok())?;
        // Worker count and output location do not change results.
        let mut canonical = cfg.clone();
        canonical.algorithm.jobs = None;
        canonical.output.dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        let hash = digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Ok(Self { cfg, hash, started: Instant::now() })
    }

    fn out_dir(&self) -> Result<&Path, Failure> {
        let dir = self.cfg.output.dir.as_path();
        std::fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("cannot create '{}': {e}", dir.display())))?;
        Ok(dir)
    }

    fn sidecar(&self, command: &str, extra: serde_json::Value) -> serde_json::Value {
        json!({
            "command": command,
            "config_hash": self.hash,
            "seed": self.cfg.algorithm.seed,
            "network_seed": self.cfg.network.seed,
            "git_describe": git_describe(),
            "wall_time_s": self.started.elapsed().as_secs_f64(),
            "results": extra,
        })
    }
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    std::fs::write(path, contents).map_err(|e| Failure::Other(format!("cannot write '{}': {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Other(e.to_string()))?;
    write_file(path, &(text + "\n"))
}

fn db_field(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() && v > 0.0 => format!("{:.9}", to_db(v)),
        _ => "diverged".into(),
    }
}

/// `iter,msd_db,emse_db,scope,mode,runs`.
fn curves_csv(curves: &[LearningCurve]) -> String {
    let mut s = String::from("iter,msd_db,emse_db,scope,mode,runs\n");
    for c in curves {
        for i in 0..c.len() {
            let _ = writeln!(s, "{i},{},{},{},{},{}", db_field(c.msd[i]), db_field(c.emse[i]), c.scope, c.mode, c.runs);
        }
    }
    s
}

fn opt_num(x: Option<f64>) -> serde_json::Value {
    x.filter(|v| v.is_finite()).map_or(json!("diverged"), |v| json!(v))
}

fn simulate(ctx: &Context) -> Outcome {
    let (net, weights) = ctx.cfg.network()?;
    let exp = ctx.cfg.experiment();
    let dir = ctx.out_dir()?;
    let mut summary = Vec::new();
    let mut failed = Vec::new();
    for &mode in &exp.modes {
        let res: EnsembleResult = harness::run_mode(&net, &weights, mode, &exp, &ctx.hash)?;
        let file = format!("simulate_{mode}.csv");
        write_file(&dir.join(&file), &curves_csv(&res.curves))?;
        let status = if !res.all_diverged() {
            "ok"
        } else if mode.is_required() {
            failed.push(mode);
            "all_diverged"
        } else {
            "diverged"
        };
        eprintln!(
            "{mode:>16}  steady MSD {:>12} dB  diverged {}/{}",
            res.steady.as_ref().map_or("diverged".into(), |s| format!("{:.3}", s.mean_db)),
            res.diverged_runs,
            res.runs
        );
        summary.push(json!({
            "mode": mode,
            "file": file,
            "status": status,
            "runs": res.runs,
            "diverged_runs": res.diverged_runs,
            "steady_msd_db": opt_num(res.steady.as_ref().map(|s| s.mean_db)),
            "steady_ci_halfwidth_db": opt_num(res.steady.as_ref().map(|s| s.ci_halfwidth_db)),
            "steady_emse_db": opt_num(res.steady_emse.as_ref().map(|s| s.mean_db)),
        }));
    }
    write_json(&dir.join("simulate.json"), &ctx.sidecar("simulate", json!(summary)))?;
    if failed.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = failed.iter().map(Mode::to_string).collect();
        Err(Failure::Diverged(format!("every run diverged in required mode(s) {}", names.join(", "))))
    }
}

fn predict(ctx: &Context) -> Outcome {
    let (net, weights) = ctx.cfg.network()?;
    let exp = ctx.cfg.experiment();
    let dir = ctx.out_dir()?;
    let mut summary = Vec::new();
    let mut stability = serde_json::Map::new();
    for &mode in &exp.modes {
        let model = match TheoryModel::build(&net, &weights, mode, &ctx.cfg.theory) {
            Ok(m) => m,
            Err(Error::Config(msg)) if !mode.is_required() => {
                eprintln!("{mode:>16}  no prediction: {msg}");
                summary.push(json!({ "mode": mode, "status": "unsupported", "reason": msg }));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let mus: Vec<f64> = net.nodes.iter().map(|n| n.step_size).collect();
        let mean_range = mean_step_bounds(&model.lambda_max, model.e_norm);
        let ms_range = ms_step_bounds(&model.lambda_max, model.d_norm);
        let inside = |r: &[(f64, f64)]| mus.iter().zip(r).all(|(&m, &(lo, hi))| m > lo && m < hi);
        let bias_norm = match model.mean_bias() {
            Ok(b) => json!(b.norm()),
            Err(_) => json!("diverged"),
        };
        stability.insert(
            mode.to_string(),
            json!({
                "rho_B": model.rho_b,
                "rho_F": model.rho_f,
                "mean_step_range": mean_range,
                "ms_step_range": ms_range,
                "step_sizes": mus,
                "mean_step_in_range": inside(&mean_range),
                "ms_step_in_range": inside(&ms_range),
                "mean_stable": model.rho_b < 1.0,
                "ms_stable": model.rho_f < 1.0,
                "bias_norm": bias_norm,
                "e_norm": model.e_norm,
                "d_norm": model.d_norm,
                "warnings": model.warnings,
            }),
        );
        let curves = harness::predicted_curves(&model, exp.iterations, exp.node_curves, &ctx.hash)?;
        let file = format!("predict_{mode}.csv");
        write_file(&dir.join(&file), &curves_csv(&curves))?;
        let steady = model.steady_state().ok();
        eprintln!(
            "{mode:>16}  steady MSD {:>12} dB  rho(B) {:.6}  rho(F) {:.6}",
            steady.as_ref().map_or("diverged".into(), |s| format!("{:.3}", to_db(s.network_msd))),
            model.rho_b,
            model.rho_f
        );
        summary.push(json!({
            "mode": mode,
            "file": file,
            "status": if steady.is_some() { "ok" } else { "diverged" },
            "steady_msd_db": opt_num(steady.as_ref().map(|s| to_db(s.network_msd))),
            "steady_emse_db": opt_num(steady.as_ref().map(|s| to_db(s.network_emse))),
            "node_msd_db": steady.as_ref().map(|s| s.node_msd.iter().map(|&v| to_db(v)).collect::<Vec<_>>()),
        }));
    }
    write_json(&dir.join("stability.json"), &stability)?;
    write_json(&dir.join("predict.json"), &ctx.sidecar("predict", json!(summary)))
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("snr_index,mode,steady_msd_db,ci_halfwidth_db\n");
    for r in rows {
        let ci = r.ci_halfwidth_db.map_or("diverged".into(), |v| format!("{v:.9}"));
        let _ = writeln!(s, "{},{},{},{ci}", r.snr_index, r.mode, db_field(r.steady_msd));
    }
    s
}

fn sweep(ctx: &Context) -> Outcome {
    let (net, weights) = ctx.cfg.sweep_network()?;
    let exp = ctx.cfg.experiment();
    let dir = ctx.out_dir()?;
    let sw = &ctx.cfg.sweep;
    let rows = harness::snr_sweep(&net, &weights, &exp, &sw.indices, sw.step_db, &ctx.hash)?;
    write_file(&dir.join("sweep.csv"), &sweep_csv(&rows))?;
    write_json(&dir.join("sweep.json"), &ctx.sidecar("sweep", json!(rows)))?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| r.steady_msd.is_none() && r.mode.is_required())
        .map(|r| format!("{} at index {}", r.mode, r.snr_index))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Diverged(format!("every run diverged: {}", failed.join(", "))))
    }
}

fn validate(json_out: bool, draws: usize, tolerance_scale: f64) -> Outcome {
    if draws == 0 || !(tolerance_scale >= 0.0) {
        return Err(Failure::Config("draws must be positive and tolerance-scale non-negative".into()));
    }
    let report = run_suite(&ValidateOptions { draws, tolerance_scale, ..ValidateOptions::default() });
    if json_out {
        println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Failure::Other(e.to_string()))?);
    } else {
        println!("{:<28} {:<6} {:>12} {:>12}  detail", "check", "result", "error", "tolerance");
        for c in &report.checks {
            let result = match (c.passed, c.advisory) {
                (true, _) => "PASS",
                (false, true) => "WARN",
                (false, false) => "FAIL",
            };
            println!("{:<28} {:<6} {:>12.3e} {:>12.3e}  {}", c.name, result, c.error, c.tolerance, c.detail);
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Other("validation failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Validate { json, draws, tolerance_scale } => validate(*json, *draws, *tolerance_scale),
        cmd => Context::load(&cli).and_then(|ctx| match cmd {
            Command::Simulate => simulate(&ctx),
            Command::Predict => predict(&ctx),
            Command::Sweep => sweep(&ctx),
            Command::Validate { .. } => unreachable!(),
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Diverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
