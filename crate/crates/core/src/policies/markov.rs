use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::categorical::Categorical;
use super::Policy;
use crate::error::{invalid, CpcError, Result};
use crate::numeric::logsumexp;

/// Supports up to this many sequences are enumerable.
const MAX_ENUMERATED: usize = 1 << 16;

/// A set of forbidden adjacent token pairs `(a, b)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BannedRepr", into = "BannedRepr")]
pub struct BannedBigrams {
    vocab: usize,
    mask: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct BannedRepr {
    vocab: usize,
    pairs: Vec<(usize, usize)>,
}

impl TryFrom<BannedRepr> for BannedBigrams {
    type Error = CpcError;

    fn try_from(r: BannedRepr) -> Result<Self> {
        Self::from_pairs(r.vocab, &r.pairs)
    }
}

impl From<BannedBigrams> for BannedRepr {
    fn from(b: BannedBigrams) -> Self {
        Self {
            vocab: b.vocab,
            pairs: b.pairs(),
        }
    }
}

impl BannedBigrams {
    pub fn none(vocab: usize) -> Self {
        Self {
            vocab,
            mask: vec![false; vocab * vocab],
        }
    }

    pub fn from_pairs(vocab: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut out = Self::none(vocab);
        for &(a, b) in pairs {
            if a >= vocab || b >= vocab {
                return Err(invalid(format!("banned pair ({a}, {b}) outside vocabulary {vocab}")));
            }
            out.mask[a * vocab + b] = true;
        }
        Ok(out)
    }

    /// Parse a JSON list of pairs (`[[0, 3], [2, 1]]`) or whitespace-separated
    /// `a b` lines.
    pub fn parse(vocab: usize, text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let pairs: Vec<(usize, usize)> = if trimmed.starts_with('[') {
            serde_json::from_str(trimmed)?
        } else {
            let nums: Vec<usize> = trimmed
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| invalid(format!("bad token id {t:?}"))))
                .collect::<Result<_>>()?;
            if !nums.len().is_multiple_of(2) {
                return Err(invalid("banned-bigram file has an odd number of ids"));
            }
            nums.chunks(2).map(|c| (c[0], c[1])).collect()
        };
        Self::from_pairs(vocab, &pairs)
    }

    pub fn load(vocab: usize, path: &Path) -> Result<Self> {
        Self::parse(vocab, &std::fs::read_to_string(path)?)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.mask[a * self.vocab + b]
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.vocab)
            .flat_map(|a| (0..self.vocab).map(move |b| (a, b)))
            .filter(|&(a, b)| self.contains(a, b))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.contains(&true)
    }

    /// No banned pair appears and every token is in range.
    pub fn is_feasible(&self, seq: &[usize]) -> bool {
        seq.iter().all(|&t| t < self.vocab) && seq.windows(2).all(|w| !self.contains(w[0], w[1]))
    }

    /// Some feasible sequence of `length` tokens exists (forward reachability).
    pub fn admits_length(&self, length: usize) -> bool {
        if length == 0 || self.vocab == 0 {
            return length == 0;
        }
        let mut live = vec![true; self.vocab];
        for _ in 1..length {
            live = (0..self.vocab)
                .map(|b| (0..self.vocab).any(|a| live[a] && !self.contains(a, b)))
                .collect();
            if !live.contains(&true) {
                return false;
            }
        }
        true
    }
}

/// First-order Markov model over fixed-length token sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSequencePolicy {
    vocab: usize,
    length: usize,
    log_initial: Vec<f64>,
    /// Row-major `vocab × vocab` log transition probabilities.
    log_trans: Vec<f64>,
    banned: BannedBigrams,
}

impl MarkovSequencePolicy {
    /// From probabilities. Rows must sum to one and banned entries must be
    /// exactly zero.
    pub fn new(
        length: usize,
        initial: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        banned: BannedBigrams,
    ) -> Result<Self> {
        let vocab = initial.len();
        if vocab == 0 || length == 0 {
            return Err(invalid("markov policy needs a vocabulary and length >= 1"));
        }
        if transitions.len() != vocab || banned.vocab() != vocab {
            return Err(invalid("transition matrix and banned mask must match the vocabulary"));
        }
        let log_initial = Categorical::new(initial)?.log_probs().to_vec();
        let mut log_trans = Vec::with_capacity(vocab * vocab);
        for (a, row) in transitions.into_iter().enumerate() {
            if row.len() != vocab {
                return Err(invalid(format!("transition row {a} has {} entries", row.len())));
            }
            if let Some(b) = (0..vocab).find(|&b| banned.contains(a, b) && row[b] != 0.0) {
                return Err(invalid(format!("banned transition ({a}, {b}) has positive mass")));
            }
            log_trans.extend_from_slice(Categorical::new(row)?.log_probs());
        }
        Ok(Self {
            vocab,
            length,
            log_initial,
            log_trans,
            banned,
        })
    }

    /// From unnormalized log-weights; banned entries are forced to `-inf`.
    pub fn from_log_weights(
        length: usize,
        initial: Vec<f64>,
        transitions: Vec<f64>,
        banned: BannedBigrams,
    ) -> Result<Self> {
        let vocab = initial.len();
        if vocab == 0 || length == 0 || transitions.len() != vocab * vocab || banned.vocab() != vocab {
            return Err(invalid("markov log-weights have inconsistent shapes"));
        }
        let log_initial = Categorical::from_log_weights(initial)?.log_probs().to_vec();
        let mut log_trans = transitions;
        for a in 0..vocab {
            let row = &mut log_trans[a * vocab..(a + 1) * vocab];
            for (b, w) in row.iter_mut().enumerate() {
                if banned.contains(a, b) {
                    *w = f64::NEG_INFINITY;
                }
            }
            let norm = logsumexp(row);
            if norm == f64::NEG_INFINITY {
                return Err(invalid(format!("every transition out of token {a} is banned")));
            }
            row.iter_mut().for_each(|w| *w -= norm);
        }
        Ok(Self {
            vocab,
            length,
            log_initial,
            log_trans,
            banned,
        })
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

    pub fn log_initial(&self) -> &[f64] {
        &self.log_initial
    }

    pub fn log_transition(&self, a: usize, b: usize) -> f64 {
        self.log_trans[a * self.vocab + b]
    }

    pub fn transition_row(&self, a: usize) -> &[f64] {
        &self.log_trans[a * self.vocab..(a + 1) * self.vocab]
    }

    /// Per-step tilt: every initial and transition probability into token `b`
    /// is multiplied by `exp(temperature · bonus[b])` and rows renormalized.
    pub fn tilted(&self, bonus: &[f64], temperature: f64) -> Result<Self> {
        if bonus.len() != self.vocab {
            return Err(invalid("bonus must have one entry per token"));
        }
        if !(temperature >= 0.0) {
            return Err(invalid(format!("temperature must be >= 0, got {temperature}")));
        }
        let shift = |b: usize, w: f64| {
            if w == f64::NEG_INFINITY {
                w
            } else {
                w + temperature * bonus[b]
            }
        };
        let initial = self.log_initial.iter().enumerate().map(|(b, &w)| shift(b, w)).collect();
        let transitions = self
            .log_trans
            .iter()
            .enumerate()
            .map(|(k, &w)| shift(k % self.vocab, w))
            .collect();
        Self::from_log_weights(self.length, initial, transitions, self.banned.clone())
    }

    fn draw(log_probs: &[f64], rng: &mut dyn RngCore) -> usize {
        let mut u = rand::Rng::random::<f64>(rng);
        let mut last_live = 0;
        for (k, lp) in log_probs.iter().enumerate() {
            if *lp == f64::NEG_INFINITY {
                continue;
            }
            let p = lp.exp();
            if u < p {
                return k;
            }
            u -= p;
            last_live = k;
        }
        last_live
    }
}

impl Policy for MarkovSequencePolicy {
    type Point = Vec<usize>;

    fn log_density(&self, seq: &Vec<usize>) -> f64 {
        if seq.len() != self.length || seq.iter().any(|&t| t >= self.vocab) {
            return f64::NEG_INFINITY;
        }
        let mut total = self.log_initial[seq[0]];
        for w in seq.windows(2) {
            total += self.log_transition(w[0], w[1]);
        }
        total
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<usize> {
        let mut seq = Vec::with_capacity(self.length);
        seq.push(Self::draw(&self.log_initial, rng));
        for _ in 1..self.length {
            let prev = *seq.last().expect("non-empty");
            seq.push(Self::draw(self.transition_row(prev), rng));
        }
        seq
    }

    fn support(&self) -> Option<Vec<Vec<usize>>> {
        let total = (self.vocab as f64).powi(self.length as i32);
        if total > MAX_ENUMERATED as f64 {
            return None;
        }
        let mut out = Vec::new();
        let mut stack: Vec<Vec<usize>> = (0..self.vocab)
            .rev()
            .filter(|&t| self.log_initial[t] > f64::NEG_INFINITY)
            .map(|t| vec![t])
            .collect();
        while let Some(prefix) = stack.pop() {
            if prefix.len() == self.length {
                out.push(prefix);
                continue;
            }
            let last = prefix[prefix.len() - 1];
            for b in (0..self.vocab).rev() {
                if self.log_transition(last, b) > f64::NEG_INFINITY {
                    let mut next = prefix.clone();
                    next.push(b);
                    stack.push(next);
                }
            }
        }
        Some(out)
    }
}

/// Maximum-likelihood Markov fit with additive `smoothing`, banned entries
/// zeroed before renormalizing. A row with no observations and no smoothing
/// falls back to uniform over its allowed transitions.
pub fn fit_markov(
    sequences: &[Vec<usize>],
    vocab: usize,
    length: usize,
    banned: BannedBigrams,
    smoothing: f64,
) -> Result<MarkovSequencePolicy> {
    if sequences.is_empty() {
        return Err(CpcError::Empty("markov training corpus"));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(invalid(format!("smoothing must be finite and >= 0, got {smoothing}")));
    }
    if banned.vocab() != vocab {
        return Err(invalid("banned mask does not match the vocabulary"));
    }
    let mut initial = vec![smoothing; vocab];
    let mut counts = vec![smoothing; vocab * vocab];
    for (i, seq) in sequences.iter().enumerate() {
        if seq.len() != length || seq.iter().any(|&t| t >= vocab) {
            return Err(invalid(format!("training sequence {i} has the wrong length or tokens")));
        }
        initial[seq[0]] += 1.0;
        for w in seq.windows(2) {
            counts[w[0] * vocab + w[1]] += 1.0;
        }
    }
    for a in 0..vocab {
        let row = &mut counts[a * vocab..(a + 1) * vocab];
        let allowed = (0..vocab).filter(|&b| !banned.contains(a, b)).count();
        if allowed == 0 {
            return Err(invalid(format!("every transition out of token {a} is banned")));
        }
        let observed: f64 = (0..vocab).filter(|&b| !banned.contains(a, b)).map(|b| row[b]).sum();
        if observed == 0.0 {
            row.iter_mut().for_each(|c| *c = 1.0);
        }
    }
    let log = |c: &f64| if *c > 0.0 { c.ln() } else { f64::NEG_INFINITY };
    MarkovSequencePolicy::from_log_weights(
        length,
        initial.iter().map(log).collect(),
        counts.iter().map(log).collect(),
        banned,
    )
}
