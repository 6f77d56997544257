use serde::{Deserialize, Serialize};

use super::{TruncatedKernel, PROB_TOL};
use crate::error::KernelError;

/// What a birth-death chain does with the down-move out of state 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// The down-move from 0 stays at 0.
    Reflect,
    /// The down-move from 0 leaves the state space.
    Kill,
}

/// Parametric coefficient `c(k)` for `k = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant {
        value: f64,
    },
    /// `(k - 1) / k`
    Ratio,
    /// `base^k`
    Geometric {
        base: f64,
    },
    /// `k^(-zeta)`
    Power {
        zeta: f64,
    },
}

impl Coefficient {
    pub fn at(&self, k: usize) -> f64 {
        let kf = k as f64;
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::Ratio => (kf - 1.0) / kf,
            Coefficient::Geometric { base } => base.powi(k as i32),
            Coefficient::Power { zeta } => kf.powf(-zeta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SkipFreeFamily {
    /// Constant up/down/stay probabilities.
    BirthDeath {
        up: f64,
        down: f64,
        #[serde(default)]
        stay: f64,
        boundary: Boundary,
    },
    /// The "return-or-climb" matrix on `{1, 2, ...}` (stored 0-based: internal
    /// state `s` is state `s + 1`): state 1 moves up with probability
    /// `gamma1`; state `k >= 2` returns to 1 with `beta(k)`, climbs with
    /// `gamma(k)` and is killed otherwise.
    ReturnOrClimb {
        gamma1: f64,
        gamma: Coefficient,
        beta: Coefficient,
    },
    /// Explicit finitely many rows; `rows[i]` covers columns `0..=i+1`.
    Rows { rows: Vec<Vec<f64>> },
}

/// Lazy row generator for a skip-free chain on the nonnegative integers
/// (`p(i, j) = 0` whenever `j >= i + 2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipFreeSpec {
    #[serde(flatten)]
    pub family: SkipFreeFamily,
    #[serde(default)]
    pub substochastic_allowed: bool,
}

impl SkipFreeSpec {
    pub fn new(family: SkipFreeFamily, substochastic_allowed: bool) -> Result<Self, KernelError> {
        let spec = Self {
            family,
            substochastic_allowed,
        };
        spec.check_parameters()?;
        Ok(spec)
    }

    /// Birth-death chain; `Boundary::Kill` implies sub-stochastic.
    pub fn birth_death(up: f64, down: f64, stay: f64, boundary: Boundary) -> Result<Self, KernelError> {
        Self::new(
            SkipFreeFamily::BirthDeath {
                up,
                down,
                stay,
                boundary,
            },
            boundary == Boundary::Kill,
        )
    }

    pub fn return_or_climb(gamma1: f64, gamma: Coefficient, beta: Coefficient) -> Result<Self, KernelError> {
        Self::new(SkipFreeFamily::ReturnOrClimb { gamma1, gamma, beta }, true)
    }

    /// `γ1 = 1, γ_k = (k-1)/k, β_k = 4^{-k}`: geometrically but not strongly
    /// geometrically transient.
    pub fn return_or_climb_standard() -> Self {
        Self::return_or_climb(1.0, Coefficient::Ratio, Coefficient::Geometric { base: 0.25 })
            .expect("standard coefficients are valid")
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, substochastic_allowed: bool) -> Result<Self, KernelError> {
        Self::new(SkipFreeFamily::Rows { rows }, substochastic_allowed)
    }

    /// Number of rows the spec can produce (`None` = unbounded).
    pub fn available_rows(&self) -> Option<usize> {
        match &self.family {
            SkipFreeFamily::Rows { rows } => Some(rows.len()),
            _ => None,
        }
    }

    pub fn check_parameters(&self) -> Result<(), KernelError> {
        let bad = |reason: String| Err(KernelError::InvalidRow { row: 0, reason });
        match &self.family {
            SkipFreeFamily::BirthDeath {
                up,
                down,
                stay,
                boundary,
            } => {
                if [up, down, stay].iter().any(|v| !v.is_finite() || **v < 0.0) {
                    return bad("birth-death probabilities must be finite and >= 0".into());
                }
                if *boundary == Boundary::Kill && !self.substochastic_allowed {
                    return bad("a killing boundary requires substochastic_allowed".into());
                }
            }
            SkipFreeFamily::ReturnOrClimb { gamma1, .. } => {
                if !(gamma1.is_finite() && *gamma1 > 0.0 && *gamma1 <= 1.0) {
                    return bad(format!("gamma1 must lie in (0, 1], got {gamma1}"));
                }
            }
            SkipFreeFamily::Rows { rows } => {
                if rows.is_empty() {
                    return Err(KernelError::Empty);
                }
            }
        }
        // Rows are checked lazily, but the first few catch most mistakes early.
        let probe = self.available_rows().unwrap_or(4).min(4);
        for i in 0..probe {
            self.row(i)?;
        }
        Ok(())
    }

    /// Row `i` over columns `0..=i+1`, validated against the invariants.
    pub fn row(&self, i: usize) -> Result<Vec<f64>, KernelError> {
        let mut row = vec![0.0; i + 2];
        match &self.family {
            SkipFreeFamily::BirthDeath {
                up,
                down,
                stay,
                boundary,
            } => {
                row[i + 1] = *up;
                row[i] = *stay;
                if i > 0 {
                    row[i - 1] += *down;
                } else if *boundary == Boundary::Reflect {
                    row[0] += *down;
                }
            }
            SkipFreeFamily::ReturnOrClimb { gamma1, gamma, beta } => {
                if i == 0 {
                    row[1] = *gamma1;
                } else {
                    let k = i + 1;
                    row[0] = beta.at(k);
                    row[i + 1] = gamma.at(k);
                }
            }
            SkipFreeFamily::Rows { rows } => {
                let src = rows.get(i).ok_or(KernelError::RowsExhausted {
                    available: rows.len(),
                    requested: i + 1,
                })?;
                for (j, &p) in src.iter().enumerate() {
                    if j >= i + 2 {
                        if p != 0.0 {
                            return Err(KernelError::NotSkipFree {
                                row: i,
                                col: j,
                                mass: p,
                            });
                        }
                    } else {
                        row[j] = p;
                    }
                }
            }
        }
        self.check_row(i, &row)?;
        Ok(row)
    }

    fn check_row(&self, i: usize, row: &[f64]) -> Result<(), KernelError> {
        if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0 + PROB_TOL) {
            return Err(KernelError::InvalidRow {
                row: i,
                reason: format!("entry {p} outside [0, 1]"),
            });
        }
        let sum: f64 = row.iter().sum();
        if sum > 1.0 + PROB_TOL {
            return Err(KernelError::InvalidRow {
                row: i,
                reason: format!("row sums to {sum} > 1"),
            });
        }
        if !self.substochastic_allowed && (sum - 1.0).abs() > PROB_TOL {
            return Err(KernelError::InvalidRow {
                row: i,
                reason: format!("row sums to {sum}, expected 1 for a stochastic chain"),
            });
        }
        if row[i + 1] <= 0.0 {
            return Err(KernelError::ZeroUpProbability { row: i });
        }
        Ok(())
    }

    /// `p(i, i+1)`.
    pub fn up(&self, i: usize) -> Result<f64, KernelError> {
        Ok(self.row(i)?[i + 1])
    }

    /// Rows `0..=n` (one more than an `n`-level table needs, so `p(n, n+1)` is available).
    pub fn rows_upto(&self, n: usize) -> Result<Vec<Vec<f64>>, KernelError> {
        (0..=n).map(|i| self.row(i)).collect()
    }

    /// Cuts the chain to states `0..n`; mass sent to `n` is recorded as
    /// truncation-induced killing.
    pub fn truncate(&self, n: usize) -> Result<TruncatedKernel, KernelError> {
        if n == 0 {
            return Err(KernelError::TruncationTooSmall { min: 1, got: 0 });
        }
        let mut rows = Vec::with_capacity(n);
        let mut overflow = Vec::with_capacity(n);
        for i in 0..n {
            let row = self.row(i)?;
            let mut inside = Vec::with_capacity(3);
            let mut outside = Vec::new();
            for (j, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                if j < n {
                    inside.push((j, p));
                } else {
                    outside.push((j, p));
                }
            }
            rows.push(inside);
            overflow.push(outside);
        }
        TruncatedKernel::from_sparse(rows, overflow)
    }

    /// True if every row up to `n` sums to one.
    pub fn is_stochastic_upto(&self, n: usize) -> Result<bool, KernelError> {
        for i in 0..=n {
            let s: f64 = self.row(i)?.iter().sum();
            if (s - 1.0).abs() > PROB_TOL {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Largest state a path from `x` can reach in `steps` steps.
    pub fn reach(x: usize, steps: usize) -> usize {
        x + steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn birth_death_truncation_kills_only_at_top() {
        let k = SkipFreeSpec::birth_death(2.0 / 3.0, 1.0 / 3.0, 0.0, Boundary::Reflect)
            .unwrap()
            .truncate(5)
            .unwrap();
        assert_eq!(k.size(), 5);
        for i in 0..4 {
            assert!(k.row_defect(i).abs() < 1e-15, "row {i}");
        }
        assert!((k.row_defect(4) - 2.0 / 3.0).abs() < 1e-15);
        assert!((k.truncation_defect(4) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(k.overflow(4), &[(5, 2.0 / 3.0)]);
        assert!((k.entry(0, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_state_truncation() {
        let k = SkipFreeSpec::birth_death(0.5, 0.5, 0.0, Boundary::Reflect)
            .unwrap()
            .truncate(1)
            .unwrap();
        assert_eq!(k.size(), 1);
        assert!((k.row_defect(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_up_probability_is_rejected() {
        let err = SkipFreeSpec::from_rows(vec![vec![0.5, 0.5], vec![1.0, 0.0, 0.0]], false);
        assert_eq!(err.unwrap_err(), KernelError::ZeroUpProbability { row: 1 });
    }

    #[test]
    fn upward_jumps_of_two_are_rejected() {
        let err = SkipFreeSpec::from_rows(vec![vec![0.5, 0.0, 0.5]], false);
        assert!(matches!(err, Err(KernelError::NotSkipFree { row: 0, col: 2, .. })));
    }

    #[test]
    fn stochastic_spec_requires_unit_rows() {
        let err = SkipFreeSpec::from_rows(vec![vec![0.2, 0.5]], false);
        assert!(matches!(err, Err(KernelError::InvalidRow { .. })));
        assert!(SkipFreeSpec::from_rows(vec![vec![0.2, 0.5]], true).is_ok());
    }

    #[test]
    fn return_or_climb_rows() {
        let spec = SkipFreeSpec::return_or_climb_standard();
        assert_eq!(spec.row(0).unwrap(), vec![0.0, 1.0]);
        // Internal state 2 is state 3: β_3 = 4^{-3}, γ_3 = 2/3.
        let r = spec.row(2).unwrap();
        assert!((r[0] - 1.0 / 64.0).abs() < 1e-15);
        assert!((r[3] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r[1] + r[2], 0.0);
    }

    #[test]
    fn explicit_rows_run_out() {
        let spec = SkipFreeSpec::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.0, 0.5]], false).unwrap();
        assert!(matches!(
            spec.truncate(3),
            Err(KernelError::RowsExhausted {
                available: 2,
                requested: 3
            })
        ));
    }
}
