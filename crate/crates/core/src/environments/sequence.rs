//! Sequence optimization under a banned-bigram feasibility constraint.
//!
//! Actions are fixed-length token sequences. A sequence is infeasible when
//! it contains a banned bigram (loss 1) and its reward is the weighted
//! fraction of motifs it contains as in-order subsequences.

use rand::seq::index::sample;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{cpc_round, deploy, random_split, ActionRecord, Environment, RoundConfig, RoundLog};
use crate::calibration::{calibrate_beta, CalSample, CalibrationData};
use crate::error::{invalid, CpcError, Result};
use crate::numeric::logsumexp;
use crate::policies::{fit_markov, BannedBigrams, ClippedPolicy, MarkovSequencePolicy, MixturePolicy, Policy};

/// Banned bigrams, motifs and their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEnv {
    vocab: usize,
    length: usize,
    banned: BannedBigrams,
    motifs: Vec<Vec<usize>>,
    motif_weights: Vec<f64>,
}

/// Parameters of a randomly generated [`SequenceEnv`] and its safe policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceEnvConfig {
    pub vocab: usize,
    pub length: usize,
    pub motifs: usize,
    pub motif_length: usize,
    /// Additional banned pairs anywhere.
    pub banned_random: usize,
    /// Feasible sequences used to fit the safe policy.
    pub seeds: usize,
    /// Additive smoothing of the safe policy fit; it leaks mass onto banned
    /// bigrams.
    pub smoothing: f64,
}

impl Default for SequenceEnvConfig {
    fn default() -> Self {
        Self {
            vocab: 10,
            length: 12,
            motifs: 2,
            motif_length: 3,
            banned_random: 4,
            seeds: 200,
            smoothing: 0.25,
        }
    }
}

impl SequenceEnv {
    pub fn new(
        vocab: usize,
        length: usize,
        banned: BannedBigrams,
        motifs: Vec<Vec<usize>>,
        motif_weights: Vec<f64>,
    ) -> Result<Self> {
        if vocab == 0 || length == 0 || banned.vocab() != vocab {
            return Err(invalid("sequence env needs vocab >= 1, length >= 1 and a matching mask"));
        }
        if motifs.is_empty() || motifs.len() != motif_weights.len() {
            return Err(invalid("need at least one motif and one weight per motif"));
        }
        if motifs.iter().any(|m| m.is_empty() || m.len() > length || m.iter().any(|&t| t >= vocab)) {
            return Err(invalid("motifs must be non-empty, fit the length and use valid tokens"));
        }
        if motif_weights.iter().any(|w| !(*w >= 0.0)) || motif_weights.iter().sum::<f64>() <= 0.0 {
            return Err(invalid("motif weights must be >= 0 with a positive sum"));
        }
        if !banned.admits_length(length) {
            return Err(invalid(format!("no feasible sequence of length {length} exists")));
        }
        Ok(Self {
            vocab,
            length,
            banned,
            motifs,
            motif_weights,
        })
    }

    /// Random motifs over distinct tokens. Two motif tokens may never be
    /// adjacent, so motifs need spacers and moving mass toward motif tokens
    /// risks infeasibility.
    pub fn generate(config: &SequenceEnvConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let need = config.motifs * config.motif_length;
        if need == 0 || need >= config.vocab {
            return Err(invalid("motif tokens must be distinct and fewer than the vocabulary"));
        }
        for _ in 0..100 {
            let tokens = sample(rng, config.vocab, need).into_vec();
            let motifs: Vec<Vec<usize>> = tokens.chunks(config.motif_length).map(<[usize]>::to_vec).collect();
            let mut pairs: Vec<(usize, usize)> =
                tokens.iter().flat_map(|&a| tokens.iter().map(move |&b| (a, b))).collect();
            for _ in 0..config.banned_random {
                pairs.push((rng.random_range(0..config.vocab), rng.random_range(0..config.vocab)));
            }
            let banned = BannedBigrams::from_pairs(config.vocab, &pairs)?;
            let weights = vec![1.0; motifs.len()];
            if let Ok(env) = Self::new(config.vocab, config.length, banned, motifs, weights) {
                return Ok(env);
            }
        }
        Err(CpcError::Numerical("could not generate a feasible environment".into()))
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn banned(&self) -> &BannedBigrams {
        &self.banned
    }

    pub fn motifs(&self) -> &[Vec<usize>] {
        &self.motifs
    }

    /// Weighted fraction of motifs present as in-order subsequences.
    pub fn motif_fraction(&self, seq: &[usize]) -> f64 {
        let total: f64 = self.motif_weights.iter().sum();
        let hit: f64 = self
            .motifs
            .iter()
            .zip(&self.motif_weights)
            .filter(|(m, _)| contains_subsequence(seq, m))
            .map(|(_, w)| w)
            .sum();
        hit / total
    }

    /// A random Markov process supported on feasible sequences only.
    pub fn feasibility_process(&self, rng: &mut dyn RngCore) -> Result<MarkovSequencePolicy> {
        let v = self.vocab;
        let logits = |n: usize, rng: &mut dyn RngCore| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(rng)).collect()
        };
        let initial = logits(v, rng);
        let transitions = logits(v * v, rng);
        MarkovSequencePolicy::from_log_weights(self.length, initial, transitions, self.banned.clone())
    }

    /// Feasible seed sequences drawn from a random feasibility process.
    pub fn seed_sequences(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<Vec<usize>>> {
        let process = self.feasibility_process(rng)?;
        Ok((0..n).map(|_| process.sample(rng)).collect())
    }

    /// Safe policy: a smoothed fit on feasible seeds that ignores the mask.
    pub fn safe_policy(&self, seeds: &[Vec<usize>], smoothing: f64) -> Result<MarkovSequencePolicy> {
        if seeds.iter().any(|s| !self.banned.is_feasible(s)) {
            return Err(invalid("seed sequences must be feasible"));
        }
        fit_markov(seeds, self.vocab, self.length, BannedBigrams::none(self.vocab), smoothing)
    }

    /// Exact probability that `policy` emits an infeasible sequence, by a
    /// forward pass over the last token.
    pub fn exact_infeasibility(&self, policy: &MarkovSequencePolicy) -> f64 {
        let v = self.vocab;
        let mut log_alive: Vec<f64> = policy.log_initial().to_vec();
        for _ in 1..self.length {
            log_alive = (0..v)
                .map(|b| {
                    let terms: Vec<f64> = (0..v)
                        .filter(|&a| !self.banned.contains(a, b))
                        .map(|a| log_alive[a] + policy.log_transition(a, b))
                        .collect();
                    logsumexp(&terms)
                })
                .collect();
        }
        1.0 - logsumexp(&log_alive).exp()
    }
}

fn contains_subsequence(seq: &[usize], motif: &[usize]) -> bool {
    let mut it = seq.iter();
    motif.iter().all(|m| it.any(|t| t == m))
}

impl Environment for SequenceEnv {
    type Point = Vec<usize>;

    fn loss(&self, x: &Vec<usize>) -> f64 {
        if self.banned.is_feasible(x) && x.len() == self.length { 0.0 } else { 1.0 }
    }

    fn reward(&self, x: &Vec<usize>) -> f64 {
        self.motif_fraction(x)
    }
}

/// Per-token bonus from training data: mean reward of sequences containing
/// the token minus the overall mean, scaled so the largest magnitude is 1.
pub fn reward_bonus(train: &[ActionRecord<Vec<usize>>], vocab: usize) -> Vec<f64> {
    if train.is_empty() {
        return vec![0.0; vocab];
    }
    let overall = train.iter().map(|r| r.reward).sum::<f64>() / train.len() as f64;
    let mut bonus: Vec<f64> = (0..vocab)
        .map(|t| {
            let with: Vec<f64> = train.iter().filter(|r| r.action.contains(&t)).map(|r| r.reward).collect();
            if with.is_empty() { 0.0 } else { with.iter().sum::<f64>() / with.len() as f64 - overall }
        })
        .collect();
    let scale = bonus.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    if scale > 0.0 {
        bonus.iter_mut().for_each(|b| *b /= scale);
    }
    bonus
}

/// Tilt every transition toward tokens with a high reward bonus.
pub fn improve_markov(
    policy: &MarkovSequencePolicy,
    train: &[ActionRecord<Vec<usize>>],
    temperature: f64,
) -> Result<MarkovSequencePolicy> {
    policy.tilted(&reward_bonus(train, policy.vocab()), temperature)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceRunConfig {
    pub rounds: usize,
    pub temperature: f64,
    /// Deploy `π_t` unclipped (no calibration).
    pub uncontrolled: bool,
    pub round: RoundConfig,
}

impl Default for SequenceRunConfig {
    fn default() -> Self {
        Self {
            rounds: 6,
            temperature: 4.0,
            uncontrolled: false,
            round: RoundConfig::default(),
        }
    }
}

type Clip = ClippedPolicy<MarkovSequencePolicy, MarkovSequencePolicy>;

/// Multi-round optimization. The clip is always taken against the safe
/// policy; calibration data accumulate across rounds and are weighted against
/// the mixture of the policies that produced them. Each round's optimized
/// policy tilts the safe policy using every training record so far.
pub fn sequence_opt_run(
    env: &SequenceEnv,
    safe: &MarkovSequencePolicy,
    alpha: f64,
    config: &SequenceRunConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<RoundLog<Vec<usize>>>> {
    if config.rounds == 0 {
        return Err(invalid("at least one round is required"));
    }
    let alpha = if config.uncontrolled { env.bound() } else { alpha };
    let temperature = config.temperature;
    let first = cpc_round(env, safe, |p, train| improve_markov(p, train, temperature), alpha, &config.round, rng)?;
    let mut logs = vec![first.log];
    let mut cal: Vec<CalSample<Vec<usize>>> = first.cal;
    let mut components: Vec<Clip> = vec![ClippedPolicy::new(safe.clone(), safe.clone(), 0.0)?.with_log_psi(0.0)];
    components.push(first.deployed.clone());
    let mut train_pool = first.train;

    for round in 2..=config.rounds {
        let previous = logs.last().expect("at least one round");
        let (train, fresh) = random_split(&previous.records, config.round.train_fraction, rng);
        train_pool.extend(train);
        let source = components.len() - 1;
        cal.extend(fresh.into_iter().map(|r| CalSample {
            point: r.action,
            loss: r.loss,
            round: source,
        }));
        let current = improve_markov(safe, &train_pool, temperature)?;

        let mut counts = vec![0usize; components.len()];
        for s in &cal {
            counts[s.round] += 1;
        }
        let mixture = MixturePolicy::from_counts(components.clone(), &counts)?;
        let proposals: Vec<Vec<usize>> = (0..config.round.n_proposals).map(|_| current.sample(rng)).collect();
        let data = CalibrationData {
            cal: &cal,
            proposals: &proposals,
            extra_probes: &[],
        };
        let report = calibrate_beta(safe, &current, &mixture, &data, alpha, env.bound(), &config.round.calibration)?;
        let log_psi = report.psi_hat[report.beta_index].ln();
        let deployed = ClippedPolicy::new(safe.clone(), current.clone(), report.log_beta_hat())?.with_log_psi(log_psi);
        let log = deploy(env, &deployed, round, &report, config.round.n_deploy, config.round.budget_per_action, rng)?;
        logs.push(log);
        components.push(deployed);
    }
    Ok(logs)
}

/// Best reward seen up to and including each round.
pub fn best_so_far<X>(logs: &[RoundLog<X>]) -> Vec<f64> {
    logs.iter()
        .scan(f64::NEG_INFINITY, |best, log| {
            *best = best.max(log.best_reward());
            Some(*best)
        })
        .collect()
}
