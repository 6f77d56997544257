//! Minimal nonnegative solutions of `g = T g + h` by monotone iteration from
//! zero, and the hitting-time transforms built on them.
//!
//! Starting from `g_0 = 0` with `T, h >= 0`, every iterate is below the
//! minimal solution and the sequence increases pointwise, exactly in floating
//! point since rounding is monotone. If some coordinate passes the ceiling the
//! solution is declared infinite there.

use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::kernel::{StateSet, TruncatedKernel};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;
pub const DEFAULT_CEILING: f64 = 1e12;

/// `g = T g + h` with a nonnegative sparse `T` and `h >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneFixedPointProblem {
    operator: Vec<Vec<(usize, f64)>>,
    h: Vec<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub ceiling: f64,
}

impl MonotoneFixedPointProblem {
    pub fn new(operator: Vec<Vec<(usize, f64)>>, h: Vec<f64>) -> Result<Self, SolveError> {
        let n = h.len();
        if operator.len() != n {
            return Err(SolveError::InvalidProblem(format!(
                "operator has {} rows, inhomogeneity has {n} entries",
                operator.len()
            )));
        }
        if let Some(v) = h.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(SolveError::InvalidProblem(format!(
                "inhomogeneity entry {v} is not a nonnegative number"
            )));
        }
        for (i, row) in operator.iter().enumerate() {
            for &(j, w) in row {
                if j >= n {
                    return Err(SolveError::InvalidProblem(format!(
                        "row {i} references column {j} outside 0..{n}"
                    )));
                }
                if !w.is_finite() || w < 0.0 {
                    return Err(SolveError::InvalidProblem(format!(
                        "operator entry ({i},{j}) = {w} is negative"
                    )));
                }
            }
        }
        Ok(Self {
            operator,
            h,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            ceiling: DEFAULT_CEILING,
        })
    }

    /// From dense rows of `T`.
    pub fn from_dense(rows: &[Vec<f64>], h: Vec<f64>) -> Result<Self, SolveError> {
        let operator = rows
            .iter()
            .map(|r| r.iter().copied().enumerate().filter(|&(_, w)| w != 0.0).collect())
            .collect();
        Self::new(operator, h)
    }

    /// `T(x, y) = scale · P(x, y)` for `y ∉ A`, over all `x`.
    pub fn taboo(kernel: &TruncatedKernel, set: &StateSet, scale: f64, h: Vec<f64>) -> Result<Self, SolveError> {
        let mask = set.mask(kernel.size());
        let operator = (0..kernel.size())
            .map(|x| {
                kernel
                    .row(x)
                    .iter()
                    .filter(|&(y, _)| !mask[y])
                    .map(|(y, p)| (y, scale * p))
                    .collect()
            })
            .collect();
        Self::new(operator, h)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn size(&self) -> usize {
        self.h.len()
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    /// `(T g)(x)`.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.operator
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * g[j]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalSolution {
    #[serde(with = "crate::serde_ext")]
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm of the last increment.
    #[serde(with = "crate::serde_ext")]
    pub increment: f64,
    pub status: SolveStatus,
    /// First state to pass the ceiling, when diverged.
    pub diverged_at: Option<usize>,
}

/// Iterates `g_{k+1} = T g_k + h` from zero.
///
/// Stops when the increment is below the tolerance and the geometric
/// extrapolation of the remaining increments (ratio of the last two) is too.
pub fn solve_minimal(problem: &MonotoneFixedPointProblem) -> MinimalSolution {
    solve_observed(problem, |_, _| {})
}

/// [`solve_minimal`] with a callback on each `(g_k, g_{k+1})` pair.
pub fn solve_observed(problem: &MonotoneFixedPointProblem, mut observe: impl FnMut(&[f64], &[f64])) -> MinimalSolution {
    let n = problem.size();
    let mut g = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut previous_increment = f64::INFINITY;
    let mut increment = f64::INFINITY;
    for iteration in 1..=problem.max_iterations {
        increment = 0.0;
        for (x, row) in problem.operator.iter().enumerate() {
            let v = row.iter().map(|&(j, w)| w * g[j]).sum::<f64>() + problem.h[x];
            increment = f64::max(increment, v - g[x]);
            next[x] = v;
        }
        observe(&g, &next);
        std::mem::swap(&mut g, &mut next);
        if let Some(state) = g.iter().position(|&v| !(v <= problem.ceiling)) {
            return MinimalSolution {
                values: g,
                iterations: iteration,
                increment,
                status: SolveStatus::Diverged,
                diverged_at: Some(state),
            };
        }
        if increment < problem.tolerance {
            let ratio = if previous_increment > 0.0 {
                increment / previous_increment
            } else {
                0.0
            };
            if increment == 0.0 || (ratio < 1.0 && increment * ratio / (1.0 - ratio) < problem.tolerance) {
                return MinimalSolution {
                    values: g,
                    iterations: iteration,
                    increment,
                    status: SolveStatus::Converged,
                    diverged_at: None,
                };
            }
        }
        previous_increment = increment;
    }
    MinimalSolution {
        values: g,
        iterations: problem.max_iterations,
        increment,
        status: SolveStatus::MaxIterations,
        diverged_at: None,
    }
}

fn into_result(solution: MinimalSolution, ceiling: f64) -> Result<MinimalSolution, SolveError> {
    match solution.status {
        SolveStatus::Diverged => Err(SolveError::Diverged {
            state: solution.diverged_at.unwrap_or(0),
            iterations: solution.iterations,
            ceiling,
        }),
        _ => Ok(solution),
    }
}

/// `E_x[κ^{σ_A} 1_{σ_A<∞}]` and `E_x[κ^{τ_A} 1_{τ_A<∞}]` for every state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialHitting {
    #[serde(with = "crate::serde_ext")]
    pub kappa: f64,
    /// Equal to 1 on `A`.
    #[serde(with = "crate::serde_ext")]
    pub sigma: Vec<f64>,
    /// `κ Σ_{y∉A} P(x,y) σ(y) + κ P(x, A)`.
    #[serde(with = "crate::serde_ext")]
    pub tau: Vec<f64>,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl ExponentialHitting {
    pub fn sup_tau_on(&self, set: &StateSet) -> f64 {
        crate::firstreturn::sup_on(&self.tau, set)
    }
}

/// Solves `g = κ T g + κ P(·, A)` on `A^c` and reads off both transforms.
pub fn hitting_exponential(
    kernel: &TruncatedKernel,
    set: &StateSet,
    kappa: f64,
) -> Result<ExponentialHitting, SolveError> {
    hitting_exponential_with(kernel, set, kappa, DEFAULT_TOLERANCE)
}

pub fn hitting_exponential_with(
    kernel: &TruncatedKernel,
    set: &StateSet,
    kappa: f64,
    tolerance: f64,
) -> Result<ExponentialHitting, SolveError> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(SolveError::InvalidProblem(format!("rate {kappa} must be positive")));
    }
    set.check_bound(kernel.size())
        .map_err(|e| SolveError::InvalidProblem(e.to_string()))?;
    let mask = set.mask(kernel.size());
    let into_a = mass_into(kernel, &mask);
    let h: Vec<f64> = into_a
        .iter()
        .zip(&mask)
        .map(|(&p, &a)| if a { 0.0 } else { kappa * p })
        .collect();
    let problem = MonotoneFixedPointProblem::taboo(kernel, set, kappa, h)?.with_tolerance(tolerance);
    let ceiling = problem.ceiling;
    let mut solution = into_result(solve_minimal(&problem), ceiling)?;
    for (v, &a) in solution.values.iter_mut().zip(&mask) {
        if a {
            *v = 1.0;
        }
    }
    let sigma = solution.values;
    let tau = kernel.apply(&sigma).into_iter().map(|v| kappa * v).collect();
    Ok(ExponentialHitting {
        kappa,
        sigma,
        tau,
        iterations: solution.iterations,
        status: solution.status,
    })
}

fn mass_into(kernel: &TruncatedKernel, mask: &[bool]) -> Vec<f64> {
    (0..kernel.size())
        .map(|x| kernel.row(x).iter().filter(|&(y, _)| mask[y]).map(|(_, p)| p).sum())
        .collect()
}

/// Polynomial hitting moments up to order `ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyHitting {
    /// `sigma[k][x] = E_x[(σ_A + 1)^k 1_{σ_A<∞}]`, equal to 1 on `A`.
    #[serde(with = "crate::serde_ext")]
    pub sigma: Vec<Vec<f64>>,
    /// `tau[k][x] = E_x[τ_A^k 1_{τ_A<∞}]`.
    #[serde(with = "crate::serde_ext")]
    pub tau: Vec<Vec<f64>>,
    pub status: Vec<SolveStatus>,
}

/// Solves the triangular system level by level: level `k` has
/// inhomogeneity `P(x,A) + Σ_{j<k} C(k,j) E_x[τ_A^j 1]`.
pub fn hitting_poly(kernel: &TruncatedKernel, set: &StateSet, ell: usize) -> Result<PolyHitting, SolveError> {
    hitting_poly_with(kernel, set, ell, DEFAULT_TOLERANCE)
}

pub fn hitting_poly_with(
    kernel: &TruncatedKernel,
    set: &StateSet,
    ell: usize,
    tolerance: f64,
) -> Result<PolyHitting, SolveError> {
    set.check_bound(kernel.size())
        .map_err(|e| SolveError::InvalidProblem(e.to_string()))?;
    let mask = set.mask(kernel.size());
    let into_a = mass_into(kernel, &mask);
    let mut sigma: Vec<Vec<f64>> = Vec::with_capacity(ell + 1);
    let mut tau: Vec<Vec<f64>> = Vec::with_capacity(ell + 1);
    let mut status = Vec::with_capacity(ell + 1);
    for k in 0..=ell {
        let mut h = into_a.clone();
        for (j, tau_j) in tau.iter().enumerate() {
            let c = binomial(k, j);
            for (hx, t) in h.iter_mut().zip(tau_j) {
                *hx += c * t;
            }
        }
        let problem = MonotoneFixedPointProblem::taboo(kernel, set, 1.0, h)?.with_tolerance(tolerance);
        let ceiling = problem.ceiling;
        let mut solution = into_result(solve_minimal(&problem), ceiling)?;
        for (v, &a) in solution.values.iter_mut().zip(&mask) {
            if a {
                *v = 1.0;
            }
        }
        let outside: Vec<f64> = solution
            .values
            .iter()
            .zip(&mask)
            .map(|(&v, &a)| if a { 0.0 } else { v })
            .collect();
        let level_tau = kernel
            .apply(&outside)
            .into_iter()
            .zip(&into_a)
            .map(|(v, p)| v + p)
            .collect();
        sigma.push(solution.values);
        tau.push(level_tau);
        status.push(solution.status);
    }
    Ok(PolyHitting { sigma, tau, status })
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
