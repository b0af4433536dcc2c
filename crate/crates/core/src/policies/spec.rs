//! JSON descriptions of policies, for the command-line tools.

use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{BannedBigrams, Categorical, DiagGaussian, MarkovSequencePolicy, MixturePolicy, Policy};
use crate::error::Result;

/// A point of any supported policy family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Index(usize),
    Tokens(Vec<usize>),
    Real(Vec<f64>),
}

/// Serialized policy, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Categorical {
        probs: Vec<f64>,
    },
    DiagGaussian {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    Markov {
        length: usize,
        initial: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        #[serde(default)]
        banned: Vec<(usize, usize)>,
    },
    Mixture {
        components: Vec<PolicySpec>,
        weights: Vec<f64>,
    },
}

impl PolicySpec {
    pub fn build(&self) -> Result<AnyPolicy> {
        Ok(match self {
            Self::Categorical { probs } => AnyPolicy::Categorical(Categorical::new(probs.clone())?),
            Self::DiagGaussian { mean, std } => {
                AnyPolicy::Gaussian(DiagGaussian::new(mean.clone(), std.clone())?)
            }
            Self::Markov {
                length,
                initial,
                transitions,
                banned,
            } => {
                let mask = BannedBigrams::from_pairs(initial.len(), banned)?;
                AnyPolicy::Markov(MarkovSequencePolicy::new(
                    *length,
                    initial.clone(),
                    transitions.clone(),
                    mask,
                )?)
            }
            Self::Mixture {
                components,
                weights,
            } => {
                let parts = components.iter().map(Self::build).collect::<Result<_>>()?;
                AnyPolicy::Mixture(MixturePolicy::new(parts, weights.clone())?)
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// A policy of any supported family, over [`Action`] points.
#[derive(Debug, Clone)]
pub enum AnyPolicy {
    Categorical(Categorical),
    Gaussian(DiagGaussian),
    Markov(MarkovSequencePolicy),
    Mixture(MixturePolicy<AnyPolicy>),
}

impl Policy for AnyPolicy {
    type Point = Action;

    fn log_density(&self, x: &Action) -> f64 {
        match (self, x) {
            (Self::Categorical(p), Action::Index(i)) => p.log_density(i),
            (Self::Gaussian(p), Action::Real(v)) => p.log_density(v),
            (Self::Gaussian(p), Action::Tokens(v)) => {
                p.log_density(&v.iter().map(|&t| t as f64).collect())
            }
            (Self::Markov(p), Action::Tokens(v)) => p.log_density(v),
            (Self::Mixture(p), x) => p.log_density(x),
            _ => f64::NEG_INFINITY,
        }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Action {
        match self {
            Self::Categorical(p) => Action::Index(p.sample(rng)),
            Self::Gaussian(p) => Action::Real(p.sample(rng)),
            Self::Markov(p) => Action::Tokens(p.sample(rng)),
            Self::Mixture(p) => p.sample(rng),
        }
    }

    fn support(&self) -> Option<Vec<Action>> {
        match self {
            Self::Categorical(p) => Some(p.support()?.into_iter().map(Action::Index).collect()),
            Self::Gaussian(_) => None,
            Self::Markov(p) => Some(p.support()?.into_iter().map(Action::Tokens).collect()),
            Self::Mixture(p) => p.support(),
        }
    }
}
