//! Explicit transience criteria for skip-free chains (`p(i, j) = 0` for
//! `j >= i + 2`).
//!
//! Everything is driven by the recursion
//! `F(n, n) = 1`, `F(n, i) = Σ_{k=i}^{n-1} p_head(n, k) F(k, i) / p(n, n+1)`
//! with `p_head(n, k) = Σ_{j<=k} p(n, j)`. The criteria are suprema of series
//! built from `F`; they are evaluated as partials over the levels that fit in
//! the truncation. Finite-side conclusions are stabilization heuristics,
//! divergence-side conclusions rest on certified lower bounds.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::drift::{check_geometric, DriftCertificate};
use crate::error::{CriterionError, KernelError};
use crate::kernel::{SkipFreeSpec, StateSet, PROB_TOL};

/// Largest depth for which the full lower-triangular table is stored.
pub const FULL_TABLE_LIMIT: usize = 4096;

/// Relative increase between the reference depth and the full depth above
/// which a series is flagged as divergent.
pub const DIVERGENCE_RATIO: f64 = 1e-2;

/// Relative increase below which a series counts as stabilized.
pub const STABILIZED_RATIO: f64 = 1e-6;

/// Values of `F(n, i)` for `0 <= i <= n <= depth`.
#[derive(Debug, Clone)]
pub struct FTable {
    rows: Vec<Vec<f64>>,
    heads: Vec<Vec<f64>>,
    col0: Vec<f64>,
    full: Option<Vec<Vec<f64>>>,
    banded: bool,
}

impl FTable {
    /// Builds the table from `rows[n]` over columns `0..=n+1`, for
    /// `n = 0..=depth`. Only `p(n, n+1)` for `n >= 1` must be positive.
    pub fn from_rows(rows: Vec<Vec<f64>>, full: bool) -> Result<Self, KernelError> {
        if rows.is_empty() {
            return Err(KernelError::Empty);
        }
        let depth = rows.len() - 1;
        for (n, row) in rows.iter().enumerate() {
            if row.len() != n + 2 {
                return Err(KernelError::InvalidRow {
                    row: n,
                    reason: format!("expected {} columns, got {}", n + 2, row.len()),
                });
            }
            if n >= 1 && row[n + 1] <= 0.0 {
                return Err(KernelError::ZeroUpProbability { row: n });
            }
        }
        let heads: Vec<Vec<f64>> = rows
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();
        let first_nonzero: Vec<usize> = heads
            .iter()
            .enumerate()
            .map(|(n, h)| h[..n].iter().position(|&v| v > 0.0).unwrap_or(n))
            .collect();
        let banded = (1..=depth).all(|n| first_nonzero[n] + 1 >= n);

        let mut col0 = vec![0.0; depth + 1];
        col0[0] = 1.0;
        let mut full_rows = if full {
            Some(Vec::with_capacity(depth + 1))
        } else {
            None
        };
        if let Some(f) = full_rows.as_mut() {
            f.push(vec![1.0]);
        }
        for n in 1..=depth {
            let up = rows[n][n + 1];
            let k0 = first_nonzero[n];
            match full_rows.as_mut() {
                Some(f) => {
                    let mut row = vec![0.0; n + 1];
                    row[n] = 1.0;
                    for (i, slot) in row.iter_mut().enumerate().take(n) {
                        let mut s = 0.0;
                        for k in i.max(k0)..n {
                            s += heads[n][k] * f[k][i];
                        }
                        *slot = s / up;
                    }
                    col0[n] = row[0];
                    f.push(row);
                }
                None => {
                    let s: f64 = (k0..n).map(|k| heads[n][k] * col0[k]).sum();
                    col0[n] = s / up;
                }
            }
        }
        Ok(Self {
            rows,
            heads,
            col0,
            full: full_rows,
            banded,
        })
    }

    pub fn depth(&self) -> usize {
        self.col0.len() - 1
    }

    /// Whether every row has support only on `n-1, n, n+1`.
    pub fn is_banded(&self) -> bool {
        self.banded
    }

    pub fn has_full(&self) -> bool {
        self.full.is_some()
    }

    /// `F(n, i)`. Panics if `i > 0` and only the first column was stored.
    pub fn f(&self, n: usize, i: usize) -> f64 {
        assert!(i <= n && n <= self.depth(), "F({n}, {i}) outside the table");
        if i == 0 {
            return self.col0[n];
        }
        self.full.as_ref().expect("full table not stored")[n][i]
    }

    pub fn column0(&self) -> &[f64] {
        &self.col0
    }

    /// `p_head(n, i) = Σ_{k<=i} p(n, k)`.
    pub fn p_head(&self, n: usize, i: usize) -> f64 {
        self.heads[n][i]
    }

    pub fn p(&self, n: usize, j: usize) -> f64 {
        self.rows[n].get(j).copied().unwrap_or(0.0)
    }

    /// `p(n, n+1)`.
    pub fn up(&self, n: usize) -> f64 {
        self.rows[n][n + 1]
    }

    pub fn write_column_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "n,F")?;
        for (n, v) in self.col0.iter().enumerate() {
            writeln!(w, "{n},{v:e}")?;
        }
        Ok(())
    }
}

/// `F` for levels `0..=n` of a skip-free spec.
pub fn f_table(spec: &SkipFreeSpec, n: usize) -> Result<FTable, KernelError> {
    FTable::from_rows(spec.rows_upto(n)?, n <= FULL_TABLE_LIMIT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    Sigma1,
    Sigma2,
    Sigma3,
    Sigma4,
    Xi,
    /// `d^(ℓ)` of the return-moment recursion.
    DEll,
    /// `d` of the sub-stochastic criteria.
    D,
    /// Partial sums of `F(n, 0)`.
    FSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaVerdict {
    FiniteLowerBound,
    DivergenceSuspected,
    SupStabilized,
}

/// Partial values of a supremum over the levels in the truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaDiagnostics {
    pub which: SigmaKind,
    pub ell: Option<usize>,
    /// Index `n` of `partials[0]`.
    pub first: usize,
    /// Certified lower partial values.
    #[serde(with = "crate::serde_ext")]
    pub partials: Vec<f64>,
    /// Partials with an estimated geometric tail added, when one was measured.
    #[serde(with = "crate::serde_ext")]
    pub estimated: Option<Vec<f64>>,
    #[serde(with = "crate::serde_ext")]
    pub tail_ratio: Option<f64>,
    #[serde(with = "crate::serde_ext")]
    pub running_sup: Vec<f64>,
    #[serde(with = "crate::serde_ext")]
    pub sup: f64,
    pub argmax: usize,
    #[serde(with = "crate::serde_ext")]
    pub estimated_sup: Option<f64>,
    pub monotone: bool,
    pub reference_depth: usize,
    #[serde(with = "crate::serde_ext")]
    pub reference_sup: f64,
    pub verdict: SigmaVerdict,
}

struct Series {
    lower: Vec<f64>,
    estimated: Option<Vec<f64>>,
    ratio: Option<f64>,
}

impl Series {
    fn plain(lower: Vec<f64>) -> Self {
        Self {
            lower,
            estimated: None,
            ratio: None,
        }
    }

    fn best_sup(&self) -> f64 {
        let v = self.estimated.as_ref().unwrap_or(&self.lower);
        v.iter().copied().fold(f64::NEG_INFINITY, nan_max)
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

impl SigmaDiagnostics {
    /// Evaluates `series(m)` (which may only use levels `0..=m`) at `depth`
    /// and at `3 depth / 4`, and compares the two suprema.
    fn build(
        which: SigmaKind,
        ell: Option<usize>,
        first: usize,
        depth: usize,
        series: impl Fn(usize) -> Series,
    ) -> Self {
        let full = series(depth);
        let reference_depth = 3 * depth / 4;
        let reference = series(reference_depth);
        let mut running_sup = Vec::with_capacity(full.lower.len());
        let (mut sup, mut argmax) = (f64::NEG_INFINITY, first);
        for (k, &v) in full.lower.iter().enumerate() {
            if v > sup || v.is_nan() {
                sup = v;
                argmax = first + k;
            }
            running_sup.push(sup);
        }
        if full.lower.is_empty() {
            sup = 0.0;
        }
        let monotone = full.lower.windows(2).all(|w| w[1] >= w[0]);
        let s_full = if full.lower.is_empty() { 0.0 } else { full.best_sup() };
        let s_ref = if reference.lower.is_empty() {
            f64::NAN
        } else {
            reference.best_sup()
        };
        let verdict = if !s_full.is_finite() {
            SigmaVerdict::DivergenceSuspected
        } else if !s_ref.is_finite() {
            SigmaVerdict::FiniteLowerBound
        } else {
            let inc = s_full - s_ref;
            if inc > DIVERGENCE_RATIO * s_ref.abs().max(f64::MIN_POSITIVE) {
                SigmaVerdict::DivergenceSuspected
            } else if inc <= STABILIZED_RATIO * s_full.abs().max(1.0) {
                SigmaVerdict::SupStabilized
            } else {
                SigmaVerdict::FiniteLowerBound
            }
        };
        let estimated_sup = full
            .estimated
            .as_ref()
            .map(|v| v.iter().copied().fold(f64::NEG_INFINITY, nan_max));
        Self {
            which,
            ell,
            first,
            partials: full.lower,
            estimated: full.estimated,
            tail_ratio: full.ratio,
            running_sup,
            sup,
            argmax,
            estimated_sup,
            monotone,
            reference_depth,
            reference_sup: s_ref,
            verdict,
        }
    }

    /// Best available value: the estimate if one was measured, else the lower bound.
    pub fn value(&self) -> f64 {
        self.estimated_sup.unwrap_or(self.sup)
    }

    /// Partial value at index `n`.
    pub fn partial(&self, n: usize) -> Option<f64> {
        n.checked_sub(self.first).and_then(|k| self.partials.get(k).copied())
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "n,partial,estimated,running_sup")?;
        for (k, v) in self.partials.iter().enumerate() {
            let est = self.estimated.as_ref().map_or(String::new(), |e| format!("{:e}", e[k]));
            writeln!(w, "{},{v:e},{est},{:e}", self.first + k, self.running_sup[k])?;
        }
        Ok(())
    }
}

/// Ratio and sum of a geometric continuation of `a`, measured over its last
/// quarter. `None` unless every step in the window shrinks.
fn geometric_tail(a: &[f64]) -> Option<(f64, f64)> {
    if a.len() < 2 {
        return None;
    }
    let last = a.len() - 1;
    let m = (a.len() / 4).max(1);
    let window = &a[last - m..];
    if window.iter().any(|v| !(*v > 0.0 && v.is_finite())) || window.windows(2).any(|w| w[1] >= w[0]) {
        return None;
    }
    let rho = (a[last] / a[last - m]).powf(1.0 / m as f64);
    (rho < 1.0).then(|| (rho, a[last] * rho / (1.0 - rho)))
}

/// Tail sums `Σ_{j=n}^{m} a_j` for `n = 0..=m`.
fn suffix_sums(a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    let mut acc = 0.0;
    for j in (0..a.len()).rev() {
        acc += a[j];
        out[j] = acc;
    }
    out
}

fn prefix_sums(a: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    a.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn stochastic_levels(n: usize) -> Result<usize, CriterionError> {
    n.checked_sub(1)
        .ok_or(CriterionError::Kernel(KernelError::TruncationTooSmall {
            min: 1,
            got: 0,
        }))
}

/// `σ1 = sup_n Σ_{k<=n} 1/(p(k,k+1) F(k,0)) · Σ_{j>=n} F(j,0)` over the
/// levels `0..n`.
pub fn sigma1(spec: &SkipFreeSpec, n: usize) -> Result<SigmaDiagnostics, CriterionError> {
    let depth = stochastic_levels(n)?;
    let table = FTable::from_rows(spec.rows_upto(depth)?, false)?;
    Ok(sigma1_from_table(&table))
}

fn sigma1_from_table(table: &FTable) -> SigmaDiagnostics {
    let f = table.column0();
    let inv: Vec<f64> = (0..f.len()).map(|k| 1.0 / (table.up(k) * f[k])).collect();
    let head = prefix_sums(&inv);
    SigmaDiagnostics::build(SigmaKind::Sigma1, None, 0, table.depth(), |m| {
        let tails = suffix_sums(&f[..=m]);
        let lower: Vec<f64> = (0..=m).map(|k| head[k] * tails[k]).collect();
        let est = geometric_tail(&f[..=m]);
        Series {
            estimated: est.map(|(_, t)| (0..=m).map(|k| head[k] * (tails[k] + t)).collect()),
            ratio: est.map(|(r, _)| r),
            lower,
        }
    })
}

/// A geometric certificate for `A = {0}` built from `σ1`, with the sequences
/// it is assembled from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiwCertificate {
    pub certificate: DriftCertificate,
    pub sigma1: SigmaDiagnostics,
    #[serde(with = "crate::serde_ext")]
    pub f: Vec<f64>,
    #[serde(with = "crate::serde_ext")]
    pub g: Vec<f64>,
    #[serde(with = "crate::serde_ext")]
    pub g_normalized: Vec<f64>,
    /// The check restricted to states `0..n-1`, away from the cut.
    pub interior_holds: bool,
    /// `1 - f_0/g_0 - P g̃(0)`.
    #[serde(with = "crate::serde_ext")]
    pub origin_step_margin: f64,
    /// `min_i (g_i - f_i)/g_0 - P g̃(i)` over interior `i >= 1`.
    #[serde(with = "crate::serde_ext")]
    pub interior_step_margin: f64,
    pub f_decreasing: bool,
    pub g_decreasing: bool,
}

/// Builds `f_i = (Σ_{j>=i} F_j / p(0,1))^{1/2}`,
/// `g_i = Σ_{j>=i} F_j Σ_{k<=j} f_k/(p(k,k+1) F_k)` on `0..n` and checks
/// `P g̃ <= λ g̃` off `{0}`, `P g̃(0) <= b`, with `g̃ = g/g_0` and
/// `λ = b = 1 - 1/(4 σ1)` using the lower partial of `σ1`.
pub fn miw_certificate(spec: &SkipFreeSpec, n: usize) -> Result<MiwCertificate, CriterionError> {
    let depth = stochastic_levels(n)?;
    let table = FTable::from_rows(spec.rows_upto(depth)?, false)?;
    let sigma = sigma1_from_table(&table);
    if sigma.verdict == SigmaVerdict::DivergenceSuspected {
        return Err(CriterionError::Precondition(format!(
            "sigma1 appears divergent (partial sup {} at depth {n})",
            sigma.sup
        )));
    }
    let p01 = table.up(0);
    let fcol = table.column0();
    let tails = suffix_sums(fcol);
    let f: Vec<f64> = tails.iter().map(|t| (t / p01).sqrt()).collect();
    let inner = prefix_sums(&(0..=depth).map(|k| f[k] / (table.up(k) * fcol[k])).collect::<Vec<_>>());
    let g = suffix_sums(&(0..=depth).map(|j| fcol[j] * inner[j]).collect::<Vec<_>>());
    let g0 = g[0];
    let g_normalized: Vec<f64> = g.iter().map(|v| v / g0).collect();
    let lambda = 1.0 - 1.0 / (4.0 * sigma.sup);

    let kernel = spec.truncate(n)?;
    let mut certificate = check_geometric(&kernel, &StateSet::singleton(0), &g_normalized, lambda, lambda, None);
    let pg = kernel.apply(&g_normalized);
    let origin_step_margin = 1.0 - f[0] / g0 - pg[0];
    let interior_step_margin = (1..depth)
        .map(|i| (g[i] - f[i]) / g0 - pg[i])
        .fold(f64::INFINITY, f64::min);
    certificate.diagnostics.insert("sigma1_lower".into(), sigma.sup);
    certificate
        .diagnostics
        .insert("origin_step_margin".into(), origin_step_margin);
    certificate
        .diagnostics
        .insert("interior_step_margin".into(), interior_step_margin);
    let interior_holds = certificate.holds_below(depth);
    Ok(MiwCertificate {
        interior_holds,
        origin_step_margin,
        interior_step_margin,
        f_decreasing: f.windows(2).all(|w| w[1] < w[0]),
        g_decreasing: g.windows(2).all(|w| w[1] < w[0]),
        certificate,
        sigma1: sigma,
        f,
        g,
        g_normalized,
    })
}

/// One level `ℓ >= 1` of the return-moment recursion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentLevel {
    pub ell: usize,
    /// `d_i^(ℓ)` for levels `0..n`.
    #[serde(with = "crate::serde_ext")]
    pub d_i: Vec<f64>,
    pub d: SigmaDiagnostics,
    /// `σ2 = ℓ d^(ℓ)`.
    #[serde(with = "crate::serde_ext")]
    pub sigma2: f64,
    /// `m_{i0}^(ℓ)` for `i = 0..=n`: the rising-factorial moment
    /// `Σ_k k(k+1)...(k+ℓ-1) P_i(τ_0 = k)`, with `τ_0` the first return time
    /// for `i = 0`.
    #[serde(with = "crate::serde_ext")]
    pub m: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnMoments {
    pub xi: SigmaDiagnostics,
    /// Partial sums of `F(n, 0)`; `ξ < 1` exactly when they converge.
    pub f_sum: SigmaDiagnostics,
    /// `m_{i0}^(0) = P_i(τ_0 < ∞)` for `i = 0..=n`.
    #[serde(with = "crate::serde_ext")]
    pub m0: Vec<f64>,
    pub levels: Vec<MomentLevel>,
}

impl ReturnMoments {
    /// `σ2` at the highest computed level.
    pub fn sigma2(&self) -> Option<f64> {
        self.levels.last().map(|l| l.sigma2)
    }
}

/// `ξ`, the return probabilities to 0 and their rising-factorial moments up
/// to order `ell_max`, from the levels `0..n` of a stochastic spec.
pub fn xi_and_moments(spec: &SkipFreeSpec, ell_max: usize, n: usize) -> Result<ReturnMoments, CriterionError> {
    if n < 2 {
        return Err(KernelError::TruncationTooSmall { min: 2, got: n }.into());
    }
    xi_and_moments_rows(spec.rows_upto(n - 1)?, ell_max)
}

/// [`xi_and_moments`] for explicit rows `0..n` of a stochastic skip-free matrix.
pub fn xi_and_moments_rows(rows: Vec<Vec<f64>>, ell_max: usize) -> Result<ReturnMoments, CriterionError> {
    let n = rows.len();
    if n < 2 {
        return Err(KernelError::TruncationTooSmall { min: 2, got: n }.into());
    }
    let depth = n - 1;
    let table = FTable::from_rows(rows, ell_max >= 1)?;
    if ell_max >= 1 && !table.has_full() {
        return Err(CriterionError::Precondition(format!(
            "moments need the full table, limited to depth {FULL_TABLE_LIMIT}"
        )));
    }
    let fcol = table.column0().to_vec();
    let cum = prefix_sums(&fcol);

    let xi = SigmaDiagnostics::build(SigmaKind::Xi, None, 2, depth, |m| {
        Series::plain((2..=m + 1).map(|i| (cum[i - 1] - fcol[0]) / cum[i - 1]).collect())
    });
    let f_sum = SigmaDiagnostics::build(SigmaKind::FSum, None, 0, depth, |m| {
        let lower = cum[..=m].to_vec();
        let est = geometric_tail(&fcol[..=m]);
        Series {
            estimated: est.map(|(_, t)| lower.iter().map(|v| v + t).collect()),
            ratio: est.map(|(r, _)| r),
            lower,
        }
    });

    let (p00, p01) = (table.p(0, 0), table.up(0));
    let xi_v = xi.sup;
    let mut m0 = vec![0.0; n + 1];
    m0[0] = p01 * xi_v + p00;
    for i in 1..=n {
        m0[i] = cum[i - 1] * xi_v - (cum[i - 1] - fcol[0]);
    }

    let mut levels: Vec<MomentLevel> = Vec::with_capacity(ell_max);
    for ell in 1..=ell_max {
        let prev = levels.last().map_or(&m0, |l| &l.m);
        let weights: Vec<f64> = (0..=depth).map(|k| prev[k] / table.up(k)).collect();
        let d_i: Vec<f64> = (0..=depth)
            .map(|i| (1..=i).map(|k| table.f(i, k) * weights[k]).sum())
            .collect();
        let dcum = prefix_sums(&d_i);
        let d = SigmaDiagnostics::build(SigmaKind::DEll, Some(ell), 1, depth, |m| {
            Series::plain((1..=m + 1).map(|i| dcum[i - 1] / cum[i - 1]).collect())
        });
        let lf = ell as f64;
        let sigma2 = lf * d.sup;
        let mut m = vec![0.0; n + 1];
        m[0] = p01 * sigma2 + lf * prev[0];
        for i in 1..=n {
            m[i] = lf * (cum[i - 1] * d.sup - dcum[i - 1]);
        }
        levels.push(MomentLevel { ell, d_i, d, sigma2, m });
    }
    Ok(ReturnMoments { xi, f_sum, m0, levels })
}

/// Rows `0..=n` of the chain with a cemetery at 0: row `0` is absorbing and
/// row `i + 1` is row `i` of `spec`, shifted, with its defect sent to 0.
pub fn cemetery_rows(spec: &SkipFreeSpec, n: usize) -> Result<Vec<Vec<f64>>, KernelError> {
    let mut rows = Vec::with_capacity(n + 1);
    rows.push(vec![1.0, 0.0]);
    for i in 0..n {
        let row = spec.row(i)?;
        let defect = (1.0 - row.iter().sum::<f64>()).max(0.0);
        let mut hat = Vec::with_capacity(i + 3);
        hat.push(defect);
        hat.extend(row);
        rows.push(hat);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KilledCriteria {
    pub sigma3: SigmaDiagnostics,
    pub sigma4: SigmaDiagnostics,
    pub d: SigmaDiagnostics,
    /// `d_i` on the cemetery chain, for levels `0..=n`.
    #[serde(with = "crate::serde_ext")]
    pub d_i: Vec<f64>,
}

/// `σ3` and `σ4` for a chain that loses mass, computed on the cemetery chain
/// over states `0..n` of `spec`:
/// `σ3 = sup_{m>=1} Σ_{k<m} F_k Σ_{j>=m} 1/(p(j,j+1) F_j)` and
/// `σ4 = sup_m Σ_{k<=m} (F_k d - d_k)` with `d_i = Σ_{k=1}^i F(i,k)/p(k,k+1)`,
/// `d = sup_i Σ_{j<i} d_j / Σ_{j<i} F_j`.
pub fn sigma34(spec: &SkipFreeSpec, n: usize) -> Result<KilledCriteria, CriterionError> {
    if n == 0 {
        return Err(KernelError::TruncationTooSmall { min: 1, got: 0 }.into());
    }
    let rows = cemetery_rows(spec, n)?;
    if !rows[1..].iter().any(|r| r[0] > PROB_TOL) {
        return Err(CriterionError::Precondition(
            "chain loses no mass on the first levels; the killed criteria need a sub-stochastic chain".into(),
        ));
    }
    if n > FULL_TABLE_LIMIT {
        return Err(CriterionError::Precondition(format!(
            "sigma4 needs the full table, limited to depth {FULL_TABLE_LIMIT}"
        )));
    }
    let table = FTable::from_rows(rows, true)?;
    let fcol = table.column0().to_vec();
    let cum = prefix_sums(&fcol);
    let inv: Vec<f64> = (0..=n)
        .map(|j| if j == 0 { 0.0 } else { 1.0 / (table.up(j) * fcol[j]) })
        .collect();

    let sigma3 = SigmaDiagnostics::build(SigmaKind::Sigma3, None, 1, n, |m| {
        let tails = suffix_sums(&inv[..=m]);
        let lower: Vec<f64> = (1..=m).map(|k| cum[k - 1] * tails[k]).collect();
        let est = geometric_tail(&inv[1..=m]);
        Series {
            estimated: est.map(|(_, t)| (1..=m).map(|k| cum[k - 1] * (tails[k] + t)).collect()),
            ratio: est.map(|(r, _)| r),
            lower,
        }
    });

    let d_i: Vec<f64> = (0..=n)
        .map(|i| (1..=i).map(|k| table.f(i, k) / table.up(k)).sum())
        .collect();
    let dcum = prefix_sums(&d_i);
    let ratios = |m: usize| -> Vec<f64> { (1..=m + 1).map(|i| dcum[i - 1] / cum[i - 1]).collect() };
    let d = SigmaDiagnostics::build(SigmaKind::D, None, 1, n, |m| Series::plain(ratios(m)));
    let sigma4 = SigmaDiagnostics::build(SigmaKind::Sigma4, None, 0, n, |m| {
        let dm = ratios(m).into_iter().fold(0.0, f64::max);
        Series::plain((0..=m).map(|k| cum[k] * dm - dcum[k]).collect())
    });
    Ok(KilledCriteria { sigma3, sigma4, d, d_i })
}
