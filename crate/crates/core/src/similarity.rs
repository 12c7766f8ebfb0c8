//! Pairwise similarity between an observed spectrum and an atom.
//!
//! Both measures are odd in the observation, `S(-y, d) = -S(y, d)`, which is
//! what lets the min statistic stand in for the null distribution of the max.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SimilarityKind {
    /// `<d / |d|, y>`
    MatchedFilter,
    /// `<d, y> / (|d| |y|)`
    SpectralAngle,
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" | "matched-filter" => Ok(Self::MatchedFilter),
            "sad" | "spectral-angle" => Ok(Self::SpectralAngle),
            other => Err(Error::invalid(format!("unknown similarity '{other}' (expected mf or sad)"))),
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MatchedFilter => "mf",
            Self::SpectralAngle => "sad",
        })
    }
}

impl SimilarityKind {
    /// Score with precomputed norms. `y_norm` is only read by the spectral
    /// angle; a zero-norm observation scores 0.
    #[inline]
    pub fn score<T: Real>(self, y: &[T], y_norm: T, d: &[T], d_norm: T) -> T {
        let mf = dot(d, y) / d_norm;
        match self {
            Self::MatchedFilter => mf,
            Self::SpectralAngle => {
                if y_norm == T::zero() {
                    T::zero()
                } else {
                    mf / y_norm
                }
            }
        }
    }
}

pub fn similarity<T: Real>(kind: SimilarityKind, y: &[T], d: &[T]) -> Result<T> {
    if y.len() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} bands, atom has {}",
            y.len(),
            d.len()
        )));
    }
    let d_norm = norm(d);
    if !(d_norm > T::zero()) {
        return Err(Error::invalid("zero atom"));
    }
    Ok(kind.score(y, norm(y), d, d_norm))
}
