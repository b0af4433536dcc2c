//! Log-space arithmetic, tie-tolerant comparisons, Monte Carlo summaries and
//! seeded random streams shared by every module.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Relative slack used when comparing a risk against its target.
///
/// Risks such as `(B + B/2 + B/2) / 3` with `B = 1.5 α` equal `α` exactly in
/// real arithmetic but can land one ulp above it in floating point. Weak
/// inequalities accept such ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// `a <= b` up to [`TIE_TOLERANCE`] relative slack.
#[inline]
pub fn le_tol(a: f64, b: f64) -> bool {
    a <= b + TIE_TOLERANCE * b.abs().max(1.0)
}

/// `log(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ exp(x_i)`. Returns `-inf` for an empty slice or all `-inf` inputs.
pub fn logsumexp(xs: &[f64]) -> f64 {
    logsumexp_iter(xs.iter().copied())
}

/// Streaming [`logsumexp`] over an iterator (two passes are avoided by
/// rescaling whenever a new maximum appears).
pub fn logsumexp_iter<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut acc = 0.0_f64;
    for x in xs {
        if x == f64::NEG_INFINITY {
            continue;
        }
        if x == f64::INFINITY {
            return f64::INFINITY;
        }
        if x > max {
            acc = acc * (max - x).exp() + 1.0;
            max = x;
        } else {
            acc += (x - max).exp();
        }
    }
    if max == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        max + acc.ln()
    }
}

/// Total-variation distance between two probability vectors over the same
/// enumeration.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "total_variation: length mismatch");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn from_slice(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, n }
    }

    /// `mean <= bound + k·se`.
    pub fn within(&self, bound: f64, k: f64) -> bool {
        self.mean <= bound + k * self.se
    }
}

/// Deterministic per-trial stream: trial `i` of a run seeded with `seed`.
///
/// Streams are independent ChaCha8 streams, so results do not depend on the
/// order (or thread) in which trials execute.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Serde adapter for floats that may be infinite (JSON has no `inf`).
///
/// Finite values are written as numbers; `±inf` and NaN as the strings
/// `"inf"`, `"-inf"`, `"nan"`.
pub mod ext_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub(crate) fn to_repr(x: f64) -> impl Serialize {
        if x.is_finite() {
            Repr::Num(x)
        } else if x.is_nan() {
            Repr::Str("nan".into())
        } else if x > 0.0 {
            Repr::Str("inf".into())
        } else {
            Repr::Str("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) => match s.as_str() {
                "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
                "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
                "nan" | "NaN" => Ok(f64::NAN),
                other => Err(E::custom(format!("not a float: {other}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            use serde::ser::SerializeSeq;
            let mut seq = s.serialize_seq(Some(xs.len()))?;
            for x in xs {
                seq.serialize_element(&to_repr(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(from_repr)
                .collect()
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match x {
                Some(v) => s.serialize_some(&to_repr(*v)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
        }
    }
}
