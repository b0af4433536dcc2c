//! Run configuration: a TOML file with flag overrides on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationConfig;
use crate::environments::active_learning::{ActiveLearningConfig, SyntheticTabular};
use crate::environments::fdr::{FdrConfig, SyntheticClaims};
use crate::environments::gaussian::GaussianPairEnv;
use crate::environments::risk_synthetic::RiskSyntheticConfig;
use crate::environments::sequence::{SequenceEnvConfig, SequenceRunConfig};
use crate::error::{invalid, Result};
use crate::samplers::DEFAULT_ENVELOPE_INFLATION;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "CPC_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target levels; each experiment has its own default grid.
    pub alpha: Option<Vec<f64>>,
    pub bound: f64,
    pub seed: u64,
    pub trials: Option<usize>,
    /// Worker threads; `0` uses every core.
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub calibration: CalibrationConfig,
    pub envelope_inflation: f64,
    /// Fraction of envelope probes drawn from the safe policy.
    pub probe_safe_fraction: f64,
    pub gcrc: RiskSyntheticConfig,
    pub fdr: FdrConfig,
    pub claims: SyntheticClaims,
    pub active_learning: ActiveLearningConfig,
    pub tabular: SyntheticTabular,
    pub sequence_env: SequenceEnvConfig,
    pub sequence: SequenceRunConfig,
    pub gaussian: GaussianPairEnv,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            bound: 1.0,
            seed: 0,
            trials: None,
            jobs: 0,
            out: None,
            calibration: CalibrationConfig::default(),
            envelope_inflation: DEFAULT_ENVELOPE_INFLATION,
            probe_safe_fraction: 0.5,
            gcrc: RiskSyntheticConfig::default(),
            fdr: FdrConfig::default(),
            claims: SyntheticClaims::default(),
            active_learning: ActiveLearningConfig::default(),
            tabular: SyntheticTabular::default(),
            sequence_env: SequenceEnvConfig::default(),
            sequence: SequenceRunConfig::default(),
            gaussian: GaussianPairEnv::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub alpha: Option<Vec<f64>>,
    pub bound: Option<f64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    /// Read the optional file, then apply flags (flags win).
    pub fn resolve(path: Option<&Path>, overrides: Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(a) = overrides.alpha {
            config.alpha = Some(a);
        }
        if let Some(b) = overrides.bound {
            config.bound = b;
        }
        if let Some(t) = overrides.trials {
            config.trials = Some(t);
        }
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if let Some(j) = overrides.jobs {
            config.jobs = j;
        }
        if let Some(o) = overrides.out {
            config.out = Some(o);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(invalid(format!("B must be finite and > 0, got {}", self.bound)));
        }
        if let Some(alphas) = &self.alpha {
            if alphas.is_empty() {
                return Err(invalid("alpha list is empty"));
            }
            if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= self.bound)) {
                return Err(invalid(format!("alpha {a} outside (0, B]")));
            }
        }
        if self.trials == Some(0) {
            return Err(invalid("trial count must be >= 1"));
        }
        if !(self.envelope_inflation >= 1.0) {
            return Err(invalid("envelope inflation must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.probe_safe_fraction) {
            return Err(invalid("probe safe fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The `α` list, or `default` when none was given.
    pub fn alphas_or(&self, default: &[f64]) -> Vec<f64> {
        self.alpha.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn trials_or(&self, default: usize) -> usize {
        self.trials.unwrap_or(default)
    }

    /// `--out`, else `$CPC_OUT_DIR/<command>`, else `runs/<command>`.
    pub fn out_dir(&self, command: &str) -> PathBuf {
        if let Some(o) = &self.out {
            return o.clone();
        }
        let root = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(command)
    }
}

/// Parse `0.1,0.2,0.3`.
pub fn parse_alpha_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}
