use serde::{Deserialize, Serialize};

use super::{TruncatedKernel, PROB_TOL};
use crate::error::KernelError;

/// Lattice law of the increment `U` of a random walk on the half line.
///
/// `pmf[k]` is `P(U = min + k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIncrement", into = "RawIncrement")]
pub struct IncrementDistribution {
    min: i64,
    pmf: Vec<f64>,
    mean: f64,
}

#[derive(Serialize, Deserialize)]
struct RawIncrement {
    min: i64,
    pmf: Vec<f64>,
}

impl TryFrom<RawIncrement> for IncrementDistribution {
    type Error = KernelError;
    fn try_from(raw: RawIncrement) -> Result<Self, Self::Error> {
        Self::new(raw.min, raw.pmf)
    }
}

impl From<IncrementDistribution> for RawIncrement {
    fn from(d: IncrementDistribution) -> Self {
        RawIncrement { min: d.min, pmf: d.pmf }
    }
}

impl IncrementDistribution {
    pub fn new(min: i64, pmf: Vec<f64>) -> Result<Self, KernelError> {
        if pmf.is_empty() {
            return Err(KernelError::InvalidIncrement("empty pmf".into()));
        }
        if let Some(p) = pmf.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(KernelError::InvalidIncrement(format!(
                "probability {p} is negative or not finite"
            )));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(KernelError::InvalidIncrement(format!(
                "pmf sums to {total}, expected 1"
            )));
        }
        let mean = pmf.iter().enumerate().map(|(k, p)| (min + k as i64) as f64 * p).sum();
        Ok(Self { min, pmf, mean })
    }

    /// `U ∈ {-1, +1}` with `P(U = +1) = up`.
    pub fn two_point(up: f64) -> Result<Self, KernelError> {
        Self::new(-1, vec![1.0 - up, 0.0, up])
    }

    /// `β = E[U]`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn min(&self) -> i64 {
        self.min
    }

    pub fn max(&self) -> i64 {
        self.min + self.pmf.len() as i64 - 1
    }

    /// Nonzero `(y, P(U = y))` pairs.
    pub fn support(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.pmf
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > 0.0)
            .map(move |(k, &p)| (self.min + k as i64, p))
    }

    /// `E[g(U)]`.
    pub fn expect(&self, g: impl Fn(i64) -> f64) -> f64 {
        self.support().map(|(y, p)| p * g(y)).sum()
    }

    /// `Σ_{y ≥ lower} y P(U = y)`.
    pub fn truncated_first_moment(&self, lower: i64) -> f64 {
        self.support()
            .filter(|&(y, _)| y >= lower)
            .map(|(y, p)| y as f64 * p)
            .sum()
    }

    /// `Φ_{n+1} = (Φ_n + U)^+` on `0..n`: negative targets fold onto 0 and
    /// targets `>= n` are killed (recorded as overflow).
    pub fn truncate(&self, n: usize) -> Result<TruncatedKernel, KernelError> {
        if n == 0 {
            return Err(KernelError::TruncationTooSmall { min: 1, got: 0 });
        }
        let mut rows = Vec::with_capacity(n);
        let mut overflow = Vec::with_capacity(n);
        for x in 0..n {
            let mut inside: Vec<(usize, f64)> = Vec::new();
            let mut outside: Vec<(usize, f64)> = Vec::new();
            for (y, p) in self.support() {
                let target = (x as i64 + y).max(0) as usize;
                let bucket = if target < n { &mut inside } else { &mut outside };
                match bucket.iter_mut().find(|(t, _)| *t == target) {
                    Some(slot) => slot.1 += p,
                    None => bucket.push((target, p)),
                }
            }
            rows.push(inside);
            overflow.push(outside);
        }
        TruncatedKernel::from_sparse(rows, overflow)
    }
}
