//! Finite sub-stochastic kernels and the chains they are cut from.
//!
//! A [`TruncatedKernel`] is the computational substrate for every other
//! module. Mass that leaves the window `0..N` is *killed*, never reflected,
//! so every return probability or occupation sum computed on the truncation
//! is a lower bound for the countable chain. The kernel keeps a record of
//! where that mass was headed (`overflow`) so that weight functions with a
//! closed-form tail can be evaluated exactly on boundary rows.

mod increment;
mod skipfree_spec;
mod spec;

pub use increment::IncrementDistribution;
pub use skipfree_spec::{Boundary, Coefficient, SkipFreeFamily, SkipFreeSpec};
pub use spec::ChainSpec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::KernelError;

/// Absolute probability tolerance used by validation unless overridden.
pub const PROB_TOL: f64 = 1e-12;

/// Kernels with fewer states than this are stored densely.
pub const DENSE_LIMIT: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense { n: usize, data: Vec<f64> },
    Sparse(Vec<Vec<(usize, f64)>>),
}

/// Borrowed view of one kernel row.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Dense(&'a [f64]),
    Sparse(&'a [(usize, f64)]),
}

impl<'a> Row<'a> {
    /// Nonzero `(column, probability)` pairs in increasing column order.
    pub fn iter(self) -> impl Iterator<Item = (usize, f64)> + 'a {
        let (dense, sparse) = match self {
            Row::Dense(d) => (Some(d), None),
            Row::Sparse(s) => (None, Some(s)),
        };
        let dense_iter = dense
            .into_iter()
            .flat_map(|d| d.iter().copied().enumerate().filter(|&(_, p)| p != 0.0));
        let sparse_iter = sparse.into_iter().flat_map(|s| s.iter().copied());
        dense_iter.chain(sparse_iter)
    }

    pub fn sum(self) -> f64 {
        self.iter().map(|(_, p)| p).sum()
    }
}

/// Where the missing mass of a row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectOrigin {
    None,
    Intrinsic,
    Truncation,
    Mixed,
}

/// A finite sub-stochastic matrix on states `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedKernel {
    storage: Storage,
    /// Mass sent to states `>= N`, keyed by the (absolute) target state.
    overflow: Vec<Vec<(usize, f64)>>,
}

impl TruncatedKernel {
    /// Builds a kernel from a row-major dense matrix. Only the shape is checked;
    /// use [`validate`] or [`TruncatedKernel::validated`] for probability checks.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        if n == 0 {
            return Err(KernelError::Empty);
        }
        if data.len() != n * n {
            return Err(KernelError::ShapeMismatch {
                len: data.len(),
                expected: n * n,
            });
        }
        let kernel = if n < DENSE_LIMIT {
            Self {
                storage: Storage::Dense { n, data },
                overflow: vec![Vec::new(); n],
            }
        } else {
            let rows = data
                .chunks(n)
                .map(|r| r.iter().copied().enumerate().filter(|&(_, p)| p != 0.0).collect())
                .collect();
            Self {
                storage: Storage::Sparse(rows),
                overflow: vec![Vec::new(); n],
            }
        };
        Ok(kernel)
    }

    /// Builds a kernel from nested rows (`rows[i][j] = P(i, j)`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, KernelError> {
        let n = rows.len();
        if n == 0 {
            return Err(KernelError::Empty);
        }
        let mut data = vec![0.0; n * n];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(KernelError::ShapeMismatch {
                    len: row.len(),
                    expected: n,
                });
            }
            data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        Self::from_dense(n, data)
    }

    /// Builds a kernel from sparse rows plus the per-row record of mass that
    /// left the window. Storage is dense below [`DENSE_LIMIT`] states.
    pub fn from_sparse(rows: Vec<Vec<(usize, f64)>>, overflow: Vec<Vec<(usize, f64)>>) -> Result<Self, KernelError> {
        let n = rows.len();
        if n == 0 {
            return Err(KernelError::Empty);
        }
        if overflow.len() != n {
            return Err(KernelError::ShapeMismatch {
                len: overflow.len(),
                expected: n,
            });
        }
        for (i, row) in rows.iter().enumerate() {
            if let Some(&(col, _)) = row.iter().find(|&&(c, _)| c >= n) {
                return Err(KernelError::ColumnOutOfRange { row: i, col, n });
            }
        }
        for (i, row) in overflow.iter().enumerate() {
            if let Some(&(col, _)) = row.iter().find(|&&(c, _)| c < n) {
                return Err(KernelError::InvalidRow {
                    row: i,
                    reason: format!("overflow target {col} lies inside the window"),
                });
            }
        }
        let storage = if n < DENSE_LIMIT {
            let mut data = vec![0.0; n * n];
            for (i, row) in rows.iter().enumerate() {
                for &(j, p) in row {
                    data[i * n + j] += p;
                }
            }
            Storage::Dense { n, data }
        } else {
            let rows = rows
                .into_iter()
                .map(|mut r| {
                    r.sort_by_key(|&(c, _)| c);
                    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(r.len());
                    for (c, p) in r {
                        match merged.last_mut() {
                            Some(last) if last.0 == c => last.1 += p,
                            _ => merged.push((c, p)),
                        }
                    }
                    merged.retain(|&(_, p)| p != 0.0);
                    merged
                })
                .collect();
            Storage::Sparse(rows)
        };
        Ok(Self { storage, overflow })
    }

    /// Validates probabilities at tolerance `tol`, returning the kernel on success.
    pub fn validated(self, tol: f64) -> Result<Self, KernelError> {
        let report = validate_with_tol(&self, tol);
        if report.ok {
            Ok(self)
        } else {
            Err(KernelError::Invalid(report.summary()))
        }
    }

    pub fn size(&self) -> usize {
        match &self.storage {
            Storage::Dense { n, .. } => *n,
            Storage::Sparse(rows) => rows.len(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense { .. })
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.storage {
            Storage::Dense { n, data } => Row::Dense(&data[i * n..(i + 1) * n]),
            Storage::Sparse(rows) => Row::Sparse(&rows[i]),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense { n, data } => data[i * n + j],
            Storage::Sparse(rows) => rows[i]
                .binary_search_by_key(&j, |&(c, _)| c)
                .map(|k| rows[i][k].1)
                .unwrap_or(0.0),
        }
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).sum()
    }

    /// `1 - Σ_j P(i, j)`: the probability of being killed from `i` in one step.
    pub fn row_defect(&self, i: usize) -> f64 {
        1.0 - self.row_sum(i)
    }

    /// Mass sent outside the window from row `i`.
    pub fn truncation_defect(&self, i: usize) -> f64 {
        self.overflow[i].iter().map(|&(_, p)| p).sum()
    }

    /// Killing mass that belongs to the chain itself, not to the truncation.
    pub fn intrinsic_defect(&self, i: usize) -> f64 {
        (self.row_defect(i) - self.truncation_defect(i)).max(0.0)
    }

    pub fn overflow(&self, i: usize) -> &[(usize, f64)] {
        &self.overflow[i]
    }

    pub fn has_overflow(&self) -> bool {
        self.overflow.iter().any(|r| !r.is_empty())
    }

    pub fn origin(&self, i: usize, tol: f64) -> DefectOrigin {
        let intrinsic = self.intrinsic_defect(i) > tol;
        let truncated = self.truncation_defect(i) > tol;
        match (intrinsic, truncated) {
            (false, false) => DefectOrigin::None,
            (true, false) => DefectOrigin::Intrinsic,
            (false, true) => DefectOrigin::Truncation,
            (true, true) => DefectOrigin::Mixed,
        }
    }

    /// True if some row loses mass that is not explained by the truncation.
    pub fn has_intrinsic_killing(&self, tol: f64) -> bool {
        (0..self.size()).any(|i| self.intrinsic_defect(i) > tol)
    }

    /// `(P f)(x) = Σ_y P(x, y) f(y)`; mass outside the window contributes zero.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.apply_into(f, &mut out);
        out
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(f.len(), self.size());
        match &self.storage {
            Storage::Dense { n, data } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &data[i * n..(i + 1) * n];
                    *o = row.iter().zip(f).map(|(p, v)| p * v).sum();
                }
            }
            Storage::Sparse(rows) => {
                for (o, row) in out.iter_mut().zip(rows) {
                    *o = row.iter().map(|&(j, p)| p * f[j]).sum();
                }
            }
        }
    }

    /// `(P f)(x)` where `f` is extended beyond the window by `tail`.
    pub fn apply_with_tail(&self, f: &[f64], tail: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut out = self.apply(f);
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.overflow[i].iter().map(|&(t, p)| p * tail(t)).sum::<f64>();
        }
        out
    }

    /// `(μ P)(y) = Σ_x μ(x) P(x, y)`.
    pub fn push_forward(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.push_forward_into(mu, &mut out);
        out
    }

    pub fn push_forward_into(&self, mu: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.storage {
            Storage::Dense { n, data } => {
                for (i, &m) in mu.iter().enumerate() {
                    if m == 0.0 {
                        continue;
                    }
                    let row = &data[i * n..(i + 1) * n];
                    for (o, p) in out.iter_mut().zip(row) {
                        *o += m * p;
                    }
                }
            }
            Storage::Sparse(rows) => {
                for (&m, row) in mu.iter().zip(rows) {
                    if m == 0.0 {
                        continue;
                    }
                    for &(j, p) in row {
                        out[j] += m * p;
                    }
                }
            }
        }
    }

    /// Short content hash (hex) used to tag emitted tables.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.size() as u64).to_le_bytes());
        for i in 0..self.size() {
            for (j, p) in self.row(i).iter() {
                hasher.update((i as u64).to_le_bytes());
                hasher.update((j as u64).to_le_bytes());
                hasher.update(p.to_bits().to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A nonempty sorted set of states (the set `A`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct StateSet(Vec<usize>);

impl StateSet {
    pub fn new(mut states: Vec<usize>) -> Result<Self, KernelError> {
        if states.is_empty() {
            return Err(KernelError::EmptyStateSet);
        }
        states.sort_unstable();
        states.dedup();
        Ok(Self(states))
    }

    pub fn singleton(x: usize) -> Self {
        Self(vec![x])
    }

    /// `{0, 1, ..., n-1}`.
    pub fn all(n: usize) -> Self {
        Self((0..n.max(1)).collect())
    }

    pub fn states(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.0.binary_search(&x).is_ok()
    }

    /// Checks that every state lies in `0..n`.
    pub fn check_bound(&self, n: usize) -> Result<(), KernelError> {
        match self.0.last() {
            Some(&s) if s >= n => Err(KernelError::StateOutOfRange { state: s, n }),
            _ => Ok(()),
        }
    }

    /// Indicator vector of the set over `0..n`.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &s in &self.0 {
            if s < n {
                m[s] = true;
            }
        }
        m
    }

    pub fn covers(&self, n: usize) -> bool {
        self.0.len() == n && self.0.last() == Some(&(n - 1))
    }
}

impl TryFrom<Vec<usize>> for StateSet {
    type Error = KernelError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<StateSet> for Vec<usize> {
    fn from(s: StateSet) -> Self {
        s.0
    }
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonFinite { row: usize, col: usize },
    Negative { row: usize, col: usize, value: f64 },
    EntryAboveOne { row: usize, col: usize, value: f64 },
    RowSumAboveOne { row: usize, sum: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub row: usize,
    #[serde(with = "crate::serde_ext")]
    pub sum: f64,
    #[serde(with = "crate::serde_ext")]
    pub defect: f64,
    pub origin: DefectOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    #[serde(with = "crate::serde_ext")]
    pub tolerance: f64,
    pub rows: Vec<RowReport>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn summary(&self) -> String {
        let shown: Vec<String> = self.violations.iter().take(5).map(|v| format!("{v:?}")).collect();
        format!("{} violation(s): {}", self.violations.len(), shown.join("; "))
    }
}

/// Checks entries in `[0, 1]` and row sums `<= 1 + tol` at the default tolerance.
pub fn validate(kernel: &TruncatedKernel) -> ValidationReport {
    validate_with_tol(kernel, PROB_TOL)
}

pub fn validate_with_tol(kernel: &TruncatedKernel, tol: f64) -> ValidationReport {
    let n = kernel.size();
    let mut rows = Vec::with_capacity(n);
    let mut violations = Vec::new();
    for i in 0..n {
        for (j, p) in kernel.row(i).iter() {
            if !p.is_finite() {
                violations.push(Violation::NonFinite { row: i, col: j });
            } else if p < 0.0 {
                violations.push(Violation::Negative {
                    row: i,
                    col: j,
                    value: p,
                });
            } else if p > 1.0 + tol {
                violations.push(Violation::EntryAboveOne {
                    row: i,
                    col: j,
                    value: p,
                });
            }
        }
        let sum = kernel.row_sum(i);
        if sum > 1.0 + tol {
            violations.push(Violation::RowSumAboveOne { row: i, sum });
        }
        rows.push(RowReport {
            row: i,
            sum,
            defect: 1.0 - sum,
            origin: kernel.origin(i, tol),
        });
    }
    ValidationReport {
        ok: violations.is_empty(),
        tolerance: tol,
        rows,
        violations,
    }
}

/// Row `x` of `P^n`: the sub-probability distribution of `Φ_n` from `Φ_0 = x`.
pub fn n_step(kernel: &TruncatedKernel, x: usize, n: usize) -> Vec<f64> {
    let size = kernel.size();
    let mut mu = vec![0.0; size];
    mu[x] = 1.0;
    let mut next = vec![0.0; size];
    for _ in 0..n {
        kernel.push_forward_into(&mu, &mut next);
        std::mem::swap(&mut mu, &mut next);
    }
    mu
}

/// `P^n(x, X)` for every `x` and `n = 0..=horizon` (survival curves), as
/// `out[n][x]`.
pub fn survival_curves(kernel: &TruncatedKernel, horizon: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(horizon + 1);
    let mut u = vec![1.0; kernel.size()];
    out.push(u.clone());
    for _ in 0..horizon {
        u = kernel.apply(&u);
        out.push(u.clone());
    }
    out
}

/// Adds the cemetery `∂ = N`: `P̂(i, ∂) = row_defect(i)` and `P̂(∂, ∂) = 1`.
pub fn augment_with_cemetery(kernel: &TruncatedKernel) -> TruncatedKernel {
    let n = kernel.size();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n + 1);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = kernel.row(i).iter().collect();
        let defect = kernel.row_defect(i).max(0.0);
        if defect > 0.0 {
            row.push((n, defect));
        }
        rows.push(row);
    }
    rows.push(vec![(n, 1.0)]);
    TruncatedKernel::from_sparse(rows, vec![Vec::new(); n + 1]).expect("augmented rows are in range by construction")
}
