//! TOML experiment configuration.
//!
//! Precedence for the overridable fields is command line, then environment
//! (`FDIFF_SEED`, `FDIFF_OUT`), then file.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::combination::{GammaRule, GammaWeights};
use crate::engine::{Mode, Strategy};
use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, Tolerances};
use crate::network::{NetworkModel, NetworkSpec};
use crate::theory::TheoryConfig;

/// The bundled configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../default.toml");

pub const ENV_SEED: &str = "FDIFF_SEED";
pub const ENV_OUT: &str = "FDIFF_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmSection {
    pub modes: Vec<Mode>,
    pub strategy: Strategy,
    pub gamma_rule: GammaRule,
    /// Row `l`, column `k` is the weight node `k` gives neighbor `l`.
    /// Required with `gamma_rule = "custom"`.
    pub gamma: Option<Vec<Vec<f64>>>,
    /// Overrides the network step size for every node.
    pub step_size: Option<f64>,
    pub iterations: usize,
    pub runs: usize,
    /// Master seed of the simulation streams.
    pub seed: u64,
    pub jobs: Option<usize>,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            modes: e.modes,
            strategy: e.strategy,
            gamma_rule: GammaRule::RelativeDegree,
            gamma: None,
            step_size: None,
            iterations: e.iterations,
            runs: e.runs,
            seed: e.seed,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub indices: Vec<usize>,
    /// Link SNR increase per index, dB.
    pub step_db: f64,
    /// Link SNR distribution of the base network, dB.
    pub base_link_snr_db: [f64; 2],
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { indices: (1..=7).collect(), step_db: 5.0, base_link_snr_db: [5.0, 10.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub steady_fraction: f64,
    pub burn_in: usize,
    pub node_curves: bool,
    pub steady_tolerance_db: f64,
    pub transient_tolerance_db: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        let t = Tolerances::default();
        Self {
            dir: PathBuf::from("out"),
            steady_fraction: t.steady_fraction,
            burn_in: t.burn_in,
            node_curves: false,
            steady_tolerance_db: t.steady_db,
            transient_tolerance_db: t.transient_db,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub network: NetworkSpec,
    pub algorithm: AlgorithmSection,
    pub theory: TheoryConfig,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

/// Values taken from the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub runs: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("bundled configuration is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config '{}': {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Apply overrides: `cli` wins over `env`, which wins over the file.
    pub fn apply(&mut self, cli: &Overrides, env: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(s) = env(ENV_SEED) {
            self.algorithm.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_SEED}='{s}' is not an unsigned integer")))?;
        }
        if let Some(o) = env(ENV_OUT) {
            self.output.dir = PathBuf::from(o);
        }
        if let Some(s) = cli.seed {
            self.algorithm.seed = s;
        }
        if let Some(o) = &cli.out {
            self.output.dir = o.clone();
        }
        if cli.jobs.is_some() {
            self.algorithm.jobs = cli.jobs;
        }
        if let Some(r) = cli.runs {
            self.algorithm.runs = r;
        }
        self.check()
    }

    pub fn check(&self) -> Result<()> {
        self.experiment().validate()?;
        if self.algorithm.step_size.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Config("algorithm.step_size must be positive".into()));
        }
        if self.algorithm.gamma_rule == GammaRule::Custom && self.algorithm.gamma.is_none() {
            return Err(Error::Config("gamma_rule = \"custom\" needs algorithm.gamma".into()));
        }
        if self.algorithm.gamma.is_some() && self.algorithm.gamma_rule != GammaRule::Custom {
            return Err(Error::Config("algorithm.gamma is only used with gamma_rule = \"custom\"".into()));
        }
        if self.theory.samples == 0 {
            return Err(Error::Config("theory.samples must be at least 1".into()));
        }
        if !(self.sweep.step_db.is_finite() && self.sweep.base_link_snr_db[0] <= self.sweep.base_link_snr_db[1]) {
            return Err(Error::Config("bad sweep section".into()));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            modes: self.algorithm.modes.clone(),
            runs: self.algorithm.runs,
            iterations: self.algorithm.iterations,
            strategy: self.algorithm.strategy,
            seed: self.algorithm.seed,
            steady_fraction: self.output.steady_fraction,
            burn_in: self.output.burn_in,
            jobs: self.algorithm.jobs,
            node_curves: self.output.node_curves,
            mean_error_from: None,
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            steady_db: self.output.steady_tolerance_db,
            transient_db: self.output.transient_tolerance_db,
            burn_in: self.output.burn_in,
            steady_fraction: self.output.steady_fraction,
        }
    }

    fn finish(&self, spec: &NetworkSpec) -> Result<(NetworkModel, GammaWeights)> {
        let mut net = spec.build()?;
        if let Some(mu) = self.algorithm.step_size {
            net.set_step_size(mu);
        }
        let weights = match &self.algorithm.gamma {
            Some(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config("algorithm.gamma must be square".into()));
                }
                let m = DMatrix::from_fn(n, n, |l, k| rows[l][k]);
                GammaWeights::from_matrix(GammaRule::Custom, m, &net.neighbors)?
            }
            None => GammaWeights::new(self.algorithm.gamma_rule, &net.neighbors)?,
        };
        Ok((net, weights))
    }

    pub fn network(&self) -> Result<(NetworkModel, GammaWeights)> {
        self.finish(&self.network)
    }

    /// Base network of the SNR sweep: same draws with the sweep's link SNR range.
    pub fn sweep_network(&self) -> Result<(NetworkModel, GammaWeights)> {
        let spec = NetworkSpec { link_snr_db: self.sweep.base_link_snr_db, ..self.network.clone() };
        self.finish(&spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matches_defaults() {
        let b = ConfigFile::bundled();
        assert_eq!(b.network, NetworkSpec::default());
        assert_eq!(b.theory, TheoryConfig::default());
        assert_eq!(b.sweep, SweepSection::default());
        assert_eq!(b.algorithm.modes.len(), 5);
        assert_eq!(b.algorithm.step_size, Some(0.01));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ConfigFile::parse("[network]\nnodez = 3\n").is_err());
        assert!(ConfigFile::parse("[extra]\n").is_err());
        assert!(ConfigFile::parse("[algorithm]\nmodes = [\"bogus\"]\n").is_err());
        assert!(ConfigFile::parse("[algorithm]\nruns = 0\n").is_err());
    }

    #[test]
    fn precedence() {
        let mut c = ConfigFile::bundled();
        let env = |k: &str| match k {
            ENV_SEED => Some("7".to_string()),
            ENV_OUT => Some("/tmp/env".to_string()),
            _ => None,
        };
        c.apply(&Overrides::default(), env).unwrap();
        assert_eq!(c.algorithm.seed, 7);
        assert_eq!(c.output.dir, PathBuf::from("/tmp/env"));
        let cli = Overrides { seed: Some(9), out: Some("/tmp/cli".into()), jobs: Some(2), runs: Some(3) };
        c.apply(&cli, env).unwrap();
        assert_eq!(c.algorithm.seed, 9);
        assert_eq!(c.output.dir, PathBuf::from("/tmp/cli"));
        assert_eq!(c.algorithm.runs, 3);
        let bad = |_: &str| Some("x".to_string());
        assert!(c.apply(&Overrides::default(), bad).is_err());
    }

    #[test]
    fn round_trip() {
        let c = ConfigFile::bundled();
        assert_eq!(ConfigFile::parse(&c.to_toml()).unwrap(), c);
    }
}
