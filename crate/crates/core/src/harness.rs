//! Monte Carlo ensembles, steady-state estimation, SNR sweeps and
//! theory-versus-simulation reports.

use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combination::GammaWeights;
use crate::engine::{Mode, RunOptions, RunRecord, Simulator, Strategy};
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::theory::TheoryModel;

/// Runs simulated together before their records are folded in run order.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub modes: Vec<Mode>,
    pub runs: usize,
    pub iterations: usize,
    pub strategy: Strategy,
    pub seed: u64,
    /// Fraction of final iterations averaged for the steady state.
    pub steady_fraction: f64,
    /// Iterations excluded from transient comparisons.
    pub burn_in: usize,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub node_curves: bool,
    /// Also average the network error vector from this iteration on.
    pub mean_error_from: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            modes: vec![
                Mode::IdealAtc,
                Mode::PerfectCsi,
                Mode::PilotCsi(2),
                Mode::PilotCsi(1),
                Mode::NonCoop,
            ],
            runs: 500,
            iterations: 2000,
            strategy: Strategy::Atc,
            seed: 1,
            steady_fraction: 0.2,
            burn_in: 50,
            jobs: None,
            node_curves: false,
            mean_error_from: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        if !(self.steady_fraction > 0.0 && self.steady_fraction <= 1.0) {
            return Err(Error::Config("steady_fraction must lie in (0, 1]".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// First iteration of the steady-state window.
    pub fn steady_start(&self) -> usize {
        let len = ((self.iterations as f64) * self.steady_fraction).round().max(1.0) as usize;
        self.iterations - len.min(self.iterations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Network,
    Node(usize),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Network => f.write_str("network"),
            Scope::Node(k) => write!(f, "node{k}"),
        }
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "network" {
            return Ok(Scope::Network);
        }
        s.strip_prefix("node")
            .and_then(|k| k.parse().ok())
            .map(Scope::Node)
            .ok_or_else(|| serde::de::Error::custom(format!("bad scope '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Simulated,
    Predicted,
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Mean over a window with a normal-approximation 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyEstimate {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub mean_db: f64,
    /// `(10 / ln 10) ci_halfwidth / mean`.
    pub ci_halfwidth_db: f64,
    pub window_start: usize,
    pub window_end: usize,
    pub runs: usize,
}

impl SteadyEstimate {
    /// From one time-averaged value per run.
    pub fn from_samples(values: &[f64], window_start: usize, window_end: usize) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let ci = 1.96 * (var / n).sqrt();
        Some(Self {
            mean,
            ci_halfwidth: ci,
            mean_db: to_db(mean),
            ci_halfwidth_db: 10.0 / std::f64::consts::LN_10 * ci / mean,
            window_start,
            window_end,
            runs: values.len(),
        })
    }
}

/// Per-iteration MSD/EMSE; `None` marks iterations no surviving run reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub mode: Mode,
    pub scope: Scope,
    pub source: Source,
    pub runs: usize,
    pub config_hash: String,
    pub msd: Vec<Option<f64>>,
    pub emse: Vec<Option<f64>>,
}

impl LearningCurve {
    pub fn msd_db(&self, i: usize) -> Option<f64> {
        self.msd[i].map(to_db)
    }

    pub fn emse_db(&self, i: usize) -> Option<f64> {
        self.emse[i].map(to_db)
    }

    pub fn len(&self) -> usize {
        self.msd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msd.is_empty()
    }

    /// Mean MSD over `[start, end)`, if every value there is finite.
    pub fn window_mean(&self, start: usize, end: usize) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.msd[start..end].iter().copied().collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Outcome of one mode's ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub mode: Mode,
    pub runs: usize,
    pub diverged_runs: usize,
    /// Network curve first, then one per node when requested.
    pub curves: Vec<LearningCurve>,
    /// Network steady-state MSD over surviving runs.
    pub steady: Option<SteadyEstimate>,
    pub steady_emse: Option<SteadyEstimate>,
    /// Ensemble mean of the per-run time-averaged error vector and its standard errors
    /// (real and imaginary parts).
    pub mean_error: Option<Vec<Complex64>>,
    pub mean_error_se: Option<Vec<Complex64>>,
}

impl EnsembleResult {
    pub fn all_diverged(&self) -> bool {
        self.diverged_runs == self.runs
    }

    pub fn network(&self) -> &LearningCurve {
        &self.curves[0]
    }
}

struct Accumulator {
    n: usize,
    iterations: usize,
    node_curves: bool,
    survivors: usize,
    diverged: usize,
    msd: Vec<f64>,
    emse: Vec<f64>,
    alive: Vec<usize>,
    alive_msd: Vec<f64>,
    alive_emse: Vec<f64>,
    steady: Vec<f64>,
    steady_emse: Vec<f64>,
    mean_err: Option<(Vec<Complex64>, Vec<Complex64>)>,
}

impl Accumulator {
    fn new(n: usize, cfg: &ExperimentConfig) -> Self {
        let cells = cfg.iterations * n;
        Self {
            n,
            iterations: cfg.iterations,
            node_curves: cfg.node_curves,
            survivors: 0,
            diverged: 0,
            msd: vec![0.0; cells],
            emse: vec![0.0; cells],
            alive: vec![0; cfg.iterations],
            alive_msd: vec![0.0; cfg.iterations],
            alive_emse: vec![0.0; cfg.iterations],
            steady: Vec::new(),
            steady_emse: Vec::new(),
            mean_err: None,
        }
    }

    fn push(&mut self, rec: &RunRecord, start: usize) {
        let done = rec.completed();
        for i in 0..done {
            self.alive[i] += 1;
            self.alive_msd[i] += rec.network_msd(i);
            self.alive_emse[i] += rec.network_emse(i);
        }
        if rec.diverged_at.is_some() {
            self.diverged += 1;
            return;
        }
        self.survivors += 1;
        for (a, b) in self.msd.iter_mut().zip(&rec.msd) {
            *a += b;
        }
        for (a, b) in self.emse.iter_mut().zip(&rec.emse) {
            *a += b;
        }
        let w = (self.iterations - start) as f64;
        self.steady.push((start..self.iterations).map(|i| rec.network_msd(i)).sum::<f64>() / w);
        self.steady_emse.push((start..self.iterations).map(|i| rec.network_emse(i)).sum::<f64>() / w);
        if let Some(me) = &rec.mean_error {
            let (sum, sq) = self
                .mean_err
                .get_or_insert_with(|| (vec![Complex64::new(0.0, 0.0); me.len()], vec![Complex64::new(0.0, 0.0); me.len()]));
            for ((s, q), x) in sum.iter_mut().zip(sq.iter_mut()).zip(me) {
                *s += x;
                *q += Complex64::new(x.re * x.re, x.im * x.im);
            }
        }
    }

    fn finish(self, mode: Mode, runs: usize, start: usize, hash: &str) -> EnsembleResult {
        let n = self.n;
        let it = self.iterations;
        let curve = |scope: Scope, msd: Vec<Option<f64>>, emse: Vec<Option<f64>>| LearningCurve {
            mode,
            scope,
            source: Source::Simulated,
            runs: if self.survivors > 0 { self.survivors } else { runs },
            config_hash: hash.to_string(),
            msd,
            emse,
        };
        let mut curves = Vec::new();
        if self.survivors > 0 {
            let s = self.survivors as f64;
            let net = |v: &[f64], i: usize| Some(v[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64 / s);
            curves.push(curve(
                Scope::Network,
                (0..it).map(|i| net(&self.msd, i)).collect(),
                (0..it).map(|i| net(&self.emse, i)).collect(),
            ));
            if self.node_curves {
                for k in 0..n {
                    curves.push(curve(
                        Scope::Node(k),
                        (0..it).map(|i| Some(self.msd[i * n + k] / s)).collect(),
                        (0..it).map(|i| Some(self.emse[i * n + k] / s)).collect(),
                    ));
                }
            }
        } else {
            let avg = |v: &[f64], i: usize| (self.alive[i] > 0).then(|| v[i] / self.alive[i] as f64);
            curves.push(curve(
                Scope::Network,
                (0..it).map(|i| avg(&self.alive_msd, i)).collect(),
                (0..it).map(|i| avg(&self.alive_emse, i)).collect(),
            ));
        }
        let (mean_error, mean_error_se) = match self.mean_err {
            Some((sum, sq)) if self.survivors > 1 => {
                let r = self.survivors as f64;
                let mean: Vec<Complex64> = sum.iter().map(|s| s / r).collect();
                let se = mean
                    .iter()
                    .zip(&sq)
                    .map(|(m, q)| {
                        let v = |sq: f64, m: f64| ((sq / r - m * m) * r / (r - 1.0)).max(0.0).sqrt() / r.sqrt();
                        Complex64::new(v(q.re, m.re), v(q.im, m.im))
                    })
                    .collect();
                (Some(mean), Some(se))
            }
            _ => (None, None),
        };
        EnsembleResult {
            mode,
            runs,
            diverged_runs: self.diverged,
            curves,
            steady: SteadyEstimate::from_samples(&self.steady, start, it),
            steady_emse: SteadyEstimate::from_samples(&self.steady_emse, start, it),
            mean_error,
            mean_error_se,
        }
    }
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j);
    }
    b.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Ensemble for a single mode. Run `r` always uses the substreams of
/// `(cfg.seed, r)` and records are folded in run order, so the result does
/// not depend on the number of workers.
pub fn run_mode(
    net: &NetworkModel,
    weights: &GammaWeights,
    mode: Mode,
    cfg: &ExperimentConfig,
    config_hash: &str,
) -> Result<EnsembleResult> {
    cfg.validate()?;
    let sim = Simulator::new(net, weights, mode)?;
    let opts = RunOptions {
        iterations: cfg.iterations,
        strategy: cfg.strategy,
        mean_error_from: cfg.mean_error_from,
    };
    let start = cfg.steady_start();
    let mut acc = Accumulator::new(net.num_nodes(), cfg);
    let workers = pool(cfg.jobs)?;
    let mut first = 0;
    while first < cfg.runs {
        let last = (first + CHUNK).min(cfg.runs);
        let records: Vec<RunRecord> = workers.install(|| {
            (first..last)
                .into_par_iter()
                .map(|r| sim.run(&opts, cfg.seed, r as u64))
                .collect::<Result<Vec<_>>>()
        })?;
        for rec in &records {
            acc.push(rec, start);
        }
        first = last;
    }
    Ok(acc.finish(mode, cfg.runs, start, config_hash))
}

/// Ensembles for every configured mode, in configuration order.
pub fn run_ensemble(
    net: &NetworkModel,
    weights: &GammaWeights,
    cfg: &ExperimentConfig,
    config_hash: &str,
) -> Result<Vec<EnsembleResult>> {
    cfg.validate()?;
    cfg.modes.iter().map(|&m| run_mode(net, weights, m, cfg, config_hash)).collect()
}

/// Predicted learning curves in the simulation schema.
pub fn predicted_curves(
    model: &TheoryModel,
    iterations: usize,
    node_curves: bool,
    config_hash: &str,
) -> Result<Vec<LearningCurve>> {
    let t = model.transient(iterations)?;
    let wrap = |v: &[f64]| v.iter().map(|&x| x.is_finite().then_some(x)).collect::<Vec<_>>();
    let mk = |scope, msd: &[f64], emse: &[f64]| LearningCurve {
        mode: model.mode,
        scope,
        source: Source::Predicted,
        runs: 0,
        config_hash: config_hash.to_string(),
        msd: wrap(msd),
        emse: wrap(emse),
    };
    let mut out = vec![mk(Scope::Network, &t.network_msd, &t.network_emse)];
    if node_curves {
        for k in 0..model.n {
            out.push(mk(Scope::Node(k), &t.node_msd[k], &t.node_emse[k]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_index: usize,
    pub mode: Mode,
    pub steady_msd: Option<f64>,
    pub steady_msd_db: Option<f64>,
    pub ci_halfwidth_db: Option<f64>,
}

/// Steady-state MSD per mode as every link SNR is raised by `step_db * n`.
/// Link and pilot noise variances are rescaled; transmit power is untouched.
pub fn snr_sweep(
    base: &NetworkModel,
    weights: &GammaWeights,
    cfg: &ExperimentConfig,
    indices: &[usize],
    step_db: f64,
    config_hash: &str,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &n in indices {
        let mut net = base.clone();
        net.scale_link_noise(10f64.powf(-step_db * n as f64 / 10.0));
        for res in run_ensemble(&net, weights, cfg, config_hash)? {
            rows.push(SweepRow {
                snr_index: n,
                mode: res.mode,
                steady_msd: res.steady.as_ref().map(|s| s.mean),
                steady_msd_db: res.steady.as_ref().map(|s| s.mean_db),
                ci_halfwidth_db: res.steady.as_ref().map(|s| s.ci_halfwidth_db),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub steady_db: f64,
    pub transient_db: f64,
    pub burn_in: usize,
    pub steady_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { steady_db: 1.0, transient_db: 2.0, burn_in: 50, steady_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: Mode,
    pub scope: Scope,
    pub steady_gap_db: Option<f64>,
    pub transient_max_gap_db: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub tolerances: Tolerances,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Pair simulated and predicted curves by mode and scope and measure the
/// steady-state gap and the largest transient gap after burn-in, in dB.
pub fn compare_report(
    simulated: &[LearningCurve],
    predicted: &[LearningCurve],
    tol: Tolerances,
) -> Result<ComparisonReport> {
    let mut rows = Vec::new();
    for s in simulated {
        let p = predicted
            .iter()
            .find(|p| p.mode == s.mode && p.scope == s.scope)
            .ok_or_else(|| Error::Config(format!("no prediction for {} / {}", s.mode, s.scope)))?;
        if p.len() != s.len() {
            return Err(Error::Dimension(format!(
                "{} / {}: {} simulated vs {} predicted iterations",
                s.mode,
                s.scope,
                s.len(),
                p.len()
            )));
        }
        let len = s.len();
        let win = ((len as f64) * tol.steady_fraction).round().max(1.0) as usize;
        let start = len - win.min(len);
        let steady = match (s.window_mean(start, len), p.window_mean(start, len)) {
            (Some(a), Some(b)) => Some((to_db(a) - to_db(b)).abs()),
            _ => None,
        };
        let mut transient: Option<f64> = Some(0.0);
        for i in tol.burn_in.min(len)..len {
            transient = match (transient, s.msd[i], p.msd[i]) {
                (Some(t), Some(a), Some(b)) => Some(t.max((to_db(a) - to_db(b)).abs())),
                _ => None,
            };
        }
        let pass = steady.is_some_and(|g| g <= tol.steady_db) && transient.is_some_and(|g| g <= tol.transient_db);
        rows.push(ComparisonRow {
            mode: s.mode,
            scope: s.scope,
            steady_gap_db: steady,
            transient_max_gap_db: transient,
            pass,
        });
    }
    Ok(ComparisonReport { tolerances: tol, rows })
}
