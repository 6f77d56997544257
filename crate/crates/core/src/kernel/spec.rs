use serde::{Deserialize, Serialize};

use super::{IncrementDistribution, SkipFreeSpec, StateSet, TruncatedKernel, PROB_TOL};
use crate::error::KernelError;

/// Chain description as read from JSON.
///
/// ```json
/// {"type": "matrix", "rows": [[0.5, 0.5], [1.0, 0.0]]}
/// {"type": "skipfree", "family": "birth_death", "up": 0.6666666666666666,
///  "down": 0.3333333333333333, "boundary": "reflect"}
/// {"type": "rwhl", "min": -1, "pmf": [0.3333333333333333, 0.0, 0.6666666666666666]}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChainSpec {
    Matrix { rows: Vec<Vec<f64>> },
    Skipfree(SkipFreeSpec),
    Rwhl(IncrementDistribution),
}

impl ChainSpec {
    pub fn from_json(text: &str) -> Result<Self, SpecParseError> {
        let spec: ChainSpec = serde_json::from_str(text).map_err(|e| SpecParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        spec.check().map_err(|e| SpecParseError {
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
        Ok(spec)
    }

    /// Parameter-level validation after deserialization.
    pub fn check(&self) -> Result<(), KernelError> {
        match self {
            ChainSpec::Matrix { rows } => {
                TruncatedKernel::from_rows(rows)?.validated(PROB_TOL)?;
                Ok(())
            }
            ChainSpec::Skipfree(s) => s.check_parameters(),
            ChainSpec::Rwhl(_) => Ok(()),
        }
    }

    /// Natural size for fixed matrices; `None` for countable chains.
    pub fn fixed_size(&self) -> Option<usize> {
        match self {
            ChainSpec::Matrix { rows } => Some(rows.len()),
            ChainSpec::Skipfree(s) => s.available_rows(),
            ChainSpec::Rwhl(_) => None,
        }
    }

    /// Truncation to `n` states (ignored for explicit matrices).
    pub fn truncate(&self, n: usize) -> Result<TruncatedKernel, KernelError> {
        match self {
            ChainSpec::Matrix { rows } => TruncatedKernel::from_rows(rows)?.validated(PROB_TOL),
            ChainSpec::Skipfree(s) => s.truncate(n.min(s.available_rows().unwrap_or(usize::MAX))),
            ChainSpec::Rwhl(d) => d.truncate(n),
        }
    }

    /// Default target set: the lowest state (state 1 of the return-or-climb
    /// family, stored at index 0).
    pub fn default_set(&self) -> StateSet {
        StateSet::singleton(0)
    }

    /// Offset between reported indices and the family's own labels.
    pub fn index_offset(&self) -> usize {
        match self {
            ChainSpec::Skipfree(SkipFreeSpec {
                family: super::SkipFreeFamily::ReturnOrClimb { .. },
                ..
            }) => 1,
            _ => 0,
        }
    }

    pub fn as_skipfree(&self) -> Option<&SkipFreeSpec> {
        match self {
            ChainSpec::Skipfree(s) => Some(s),
            _ => None,
        }
    }
}

/// Malformed chain input, with the position reported by the JSON parser.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("chain spec error at line {line}, column {column}: {message}")]
pub struct SpecParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}
