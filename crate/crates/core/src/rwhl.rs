//! Random walk on the half line, `Φ_{n+1} = (Φ_n + U_{n+1})^+`, with lattice
//! increments. Searches for exponential and polynomial drift certificates.

use serde::{Deserialize, Serialize};

use crate::drift::{check_geometric, generate_algebraic, DriftCertificate, GeneratedSystem, TailForm, MARGIN_TOL};
use crate::error::CriterionError;
use crate::kernel::{IncrementDistribution, StateSet, TruncatedKernel};

/// Default number of grid points for `s`.
pub const S_GRID_POINTS: usize = 64;

const S_GRID_MIN: f64 = 1e-3;

/// `ξ(s) = E[e^{-sU}] - 1`.
pub fn xi(gamma: &IncrementDistribution, s: f64) -> f64 {
    gamma.expect(|y| (-s * y as f64).exp_m1())
}

/// `n` log-spaced points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Log-spaced grid from `1e-3` up to a point where `e^{-sU}` for the most
/// negative increment is still far from overflow.
pub fn default_s_grid(gamma: &IncrementDistribution) -> Vec<f64> {
    let reach = (-gamma.min()).max(1) as f64;
    log_grid(S_GRID_MIN, (10.0 / reach).max(2.0 * S_GRID_MIN), S_GRID_POINTS)
}

/// Grid evaluation of `ξ` and the chosen exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentialSearch {
    #[serde(with = "crate::serde_ext")]
    pub beta: f64,
    #[serde(with = "crate::serde_ext")]
    pub grid: Vec<f64>,
    #[serde(with = "crate::serde_ext")]
    pub xi: Vec<f64>,
    #[serde(with = "crate::serde_ext")]
    pub s0: Option<f64>,
    #[serde(with = "crate::serde_ext")]
    pub xi0: Option<f64>,
    #[serde(with = "crate::serde_ext")]
    pub lambda: Option<f64>,
}

/// Minimizes `ξ` over the grid, then refines by golden-section search
/// between the neighbours of the best point (`ξ` is convex). Ties go to the
/// smaller `s`.
pub fn exp_search(gamma: &IncrementDistribution, grid: Option<&[f64]>) -> ExponentialSearch {
    let grid = grid.map_or_else(|| default_s_grid(gamma), <[f64]>::to_vec);
    let values: Vec<f64> = grid.iter().map(|&s| xi(gamma, s)).collect();
    let best = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < 0.0)
        .fold(None, |acc: Option<(usize, f64)>, (k, &v)| match acc {
            Some((_, bv)) if bv <= v => acc,
            _ => Some((k, v)),
        });
    let (s0, xi0) = match best {
        Some((k, v)) => {
            let lo = if k == 0 { grid[0] } else { grid[k - 1] };
            let hi = grid.get(k + 1).copied().unwrap_or(grid[k]);
            let (s, x) = golden_min(|s| xi(gamma, s), lo, hi);
            if x < v {
                (Some(s), Some(x))
            } else {
                (Some(grid[k]), Some(v))
            }
        }
        None => (None, None),
    };
    ExponentialSearch {
        beta: gamma.mean(),
        grid,
        xi: values,
        s0,
        xi0,
        lambda: xi0.map(|x| x + 1.0),
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (a.abs() + b.abs()) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentialCertificate {
    pub search: ExponentialSearch,
    pub certificate: DriftCertificate,
    pub truncation: usize,
}

/// `W(x) = e^{-s0 x}`, `A = {0}`, `λ = b = ξ(s0) + 1`, checked on `0..n`
/// with the exponential tail beyond the window.
pub fn exp_certificate(
    gamma: &IncrementDistribution,
    grid: Option<&[f64]>,
    n: usize,
) -> Result<ExponentialCertificate, CriterionError> {
    let beta = gamma.mean();
    if beta <= 0.0 {
        return Err(CriterionError::Precondition(format!(
            "mean increment {beta} is not positive"
        )));
    }
    let search = exp_search(gamma, grid);
    let (Some(s0), Some(lambda)) = (search.s0, search.lambda) else {
        let best = search.xi.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(CriterionError::SearchExhausted(format!(
            "no grid point has xi(s) < 0 (smallest value {best})"
        )));
    };
    let kernel = gamma.truncate(n)?;
    let tail = TailForm::Exponential { scale: 1.0, rate: s0 };
    let w = tail.tabulate(n);
    let mut certificate = check_geometric(&kernel, &StateSet::singleton(0), &w, lambda, lambda, Some(tail));
    certificate.diagnostics.insert("s0".into(), s0);
    certificate.diagnostics.insert("xi".into(), lambda - 1.0);
    Ok(ExponentialCertificate {
        search,
        certificate,
        truncation: n,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolySearchOptions {
    pub c_grid: Vec<f64>,
    pub a_grid: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub truncation: usize,
}

impl Default for PolySearchOptions {
    fn default() -> Self {
        let half_decades = |k: usize| (0..=k).map(|i| 10f64.powf(-(i as f64) / 2.0)).collect::<Vec<_>>();
        Self {
            c_grid: half_decades(16),
            a_grid: half_decades(16),
            s_grid: log_grid(1e-2, 10.0, 31),
            truncation: 300,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyCertificate {
    pub ell: usize,
    pub x0: usize,
    #[serde(with = "crate::serde_ext")]
    pub c: f64,
    #[serde(with = "crate::serde_ext")]
    pub a: f64,
    #[serde(with = "crate::serde_ext")]
    pub s: f64,
    #[serde(with = "crate::serde_ext")]
    pub v: Vec<f64>,
    #[serde(with = "crate::serde_ext")]
    pub w: Vec<f64>,
    pub system: GeneratedSystem,
    /// First level beyond which `V - ℓ V^{1-1/ℓ} < 1`, so that the
    /// inequality for `V` cannot hold there whatever the kernel.
    pub infeasible_from: Option<usize>,
    pub attempts: usize,
}

/// Smallest `x0 >= 0` with `Σ_{y >= -x0} y P(U = y) > 0`.
pub fn level_x0(gamma: &IncrementDistribution) -> Option<usize> {
    (0..=(-gamma.min()).max(0) as usize).find(|&x| gamma.truncated_first_moment(-(x as i64)) > 0.0)
}

fn v_form(c: f64, a: f64, ell: usize) -> TailForm {
    TailForm::InversePowerPlusOne { c, a, ell: ell as f64 }
}

fn apply_tail(kernel: &TruncatedKernel, w: &[f64], tail: &TailForm) -> Vec<f64> {
    kernel.apply_with_tail(w, |x| tail.eval(x))
}

/// Searches `V(x) = (c x + a)^{-ℓ} + 1` and
/// `W(x) = (s x0 + 1)/(s x + 1)` off `A = [0, x0]`, `W = 1` on `A`, and
/// feeds them to [`generate_algebraic`].
pub fn poly_certificate(
    gamma: &IncrementDistribution,
    ell: usize,
    opts: &PolySearchOptions,
) -> Result<PolyCertificate, CriterionError> {
    if ell < 2 {
        return Err(CriterionError::Precondition(format!(
            "ℓ = {ell}; the polynomial search needs ℓ >= 2"
        )));
    }
    let beta = gamma.mean();
    if beta <= 0.0 {
        return Err(CriterionError::Precondition(format!(
            "mean increment {beta} is not positive"
        )));
    }
    let x0 =
        level_x0(gamma).ok_or_else(|| CriterionError::Precondition("no level with positive truncated mean".into()))?;
    let n = opts.truncation;
    if n <= x0 + 1 {
        return Err(CriterionError::Precondition(format!(
            "truncation {n} does not reach past x0 = {x0}"
        )));
    }
    let kernel = gamma.truncate(n)?;
    let set = StateSet::new((0..=x0).collect())?;
    let l = ell as f64;

    let mut best_w: Option<(f64, f64)> = None;
    for &s in &opts.s_grid {
        let tail = TailForm::Rational { s, x0: x0 as f64 };
        let w: Vec<f64> = (0..n).map(|x| if x <= x0 { 1.0 } else { tail.eval(x) }).collect();
        let pw = apply_tail(&kernel, &w, &tail);
        let off_ok = (x0 + 1..n).all(|x| pw[x] <= w[x] + MARGIN_TOL);
        let b = (0..=x0).map(|x| pw[x]).fold(0.0, f64::max);
        if off_ok && b < 1.0 && best_w.is_none_or(|(_, bb)| b < bb) {
            best_w = Some((s, b));
        }
    }
    let Some((s, _)) = best_w else {
        return Err(CriterionError::SearchExhausted(
            "no s in the grid gives PW <= W off A with b < 1".into(),
        ));
    };
    let w_tail = TailForm::Rational { s, x0: x0 as f64 };
    let w: Vec<f64> = (0..n).map(|x| if x <= x0 { 1.0 } else { w_tail.eval(x) }).collect();

    let mut attempts = 0;
    let mut best_margin = (f64::NEG_INFINITY, f64::NAN, f64::NAN);
    for &c in &opts.c_grid {
        for &a in &opts.a_grid {
            attempts += 1;
            let tail = v_form(c, a, ell);
            let v = tail.tabulate(n);
            let pv = apply_tail(&kernel, &v, &tail);
            let margin = (x0 + 1..n)
                .map(|x| (v[x] - l * v[x].powf(1.0 - 1.0 / l) - pv[x]) / v[x])
                .fold(f64::INFINITY, f64::min);
            if margin > best_margin.0 {
                best_margin = (margin, c, a);
            }
            if margin < 0.0 {
                continue;
            }
            let Ok(mut system) = generate_algebraic(&kernel, &set, &v, &w, ell, Some(tail), Some(w_tail.clone()))
            else {
                continue;
            };
            if !system.certificate.holds() {
                continue;
            }
            let infeasible_from = infeasible_level(c, a, l);
            system.certificate.truncation_local = true;
            system.certificate.notes.push(format!(
                "V tends to 1, so its drift inequality fails from level {} on; the system holds on the window only",
                infeasible_from.map_or("?".into(), |x| x.to_string())
            ));
            for (key, val) in [("c", c), ("a", a), ("s", s), ("x0", x0 as f64)] {
                system.certificate.diagnostics.insert(key.into(), val);
            }
            return Ok(PolyCertificate {
                ell,
                x0,
                c,
                a,
                s,
                v,
                w,
                system,
                infeasible_from,
                attempts,
            });
        }
    }
    Err(CriterionError::SearchExhausted(format!(
        "no (c, a) in the grid satisfies PV <= V - ℓ V^(1-1/ℓ) off A on 0..{n}; best relative margin {} at c = {}, a = {}",
        best_margin.0, best_margin.1, best_margin.2
    )))
}

/// First integer `x` with `V(x) - ℓ V(x)^{1-1/ℓ} < 1` for
/// `V = (c x + a)^{-ℓ} + 1`.
fn infeasible_level(c: f64, a: f64, l: f64) -> Option<usize> {
    let bad = |x: f64| {
        let v = (c * x + a).powf(-l) + 1.0;
        v - l * v.powf(1.0 - 1.0 / l) < 1.0
    };
    if bad(0.0) {
        return Some(0);
    }
    let mut hi = 1.0;
    while !bad(hi) {
        hi *= 2.0;
        if hi > 1e300 {
            return None;
        }
    }
    let mut lo = hi / 2.0;
    if hi == 1.0 {
        lo = 0.0;
    }
    while hi - lo > 0.5 {
        let mid = (lo + hi) / 2.0;
        if bad(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let x = lo.floor() as usize;
    (x..).find(|&k| bad(k as f64))
}
