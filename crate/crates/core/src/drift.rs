//! Drift (Lyapunov) certificates: pointwise checks and the constructions that
//! produce them.
//!
//! Every check evaluates `PW` on the truncation. Mass that leaves the window
//! contributes zero unless the certificate declares a closed-form tail for
//! `W`, in which case boundary rows see the true tail values. Certificates
//! without a tail on a kernel with overflow are tagged `truncation_local`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CriterionError, SolveError};
use crate::kernel::{StateSet, TruncatedKernel};
use crate::minsolve::{hitting_exponential_with, hitting_poly_with};

/// Slack forgiven for rounding.
pub const MARGIN_TOL: f64 = 1e-10;

const CONSTRUCT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateKind {
    /// `PW <= λW` on `A^c`, `PW <= b` on `A`, `W >= 1_A`.
    #[serde(rename = "geometric")]
    Geometric,
    /// `PW <= λW` on `A^c` with `W < 1` on `A^c` and `W >= 1` on `A`.
    #[serde(rename = "gt")]
    Gt,
    /// `PW <= λW` everywhere with `W >= 1`.
    #[serde(rename = "strong")]
    Strong,
    #[serde(rename = "algebraic-system")]
    AlgebraicSystem,
    #[serde(rename = "v-uniform")]
    VUniform,
}

/// Closed-form extension of a weight function beyond the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TailForm {
    /// `scale · e^{−rate·x}`.
    Exponential {
        scale: f64,
        rate: f64,
    },
    /// `(c x + a)^{−ℓ} + 1`.
    InversePowerPlusOne {
        c: f64,
        a: f64,
        ell: f64,
    },
    /// `(s x0 + 1) / (s x + 1)`.
    Rational {
        s: f64,
        x0: f64,
    },
    Constant {
        value: f64,
    },
    /// `base(x)^exponent`.
    Power {
        base: Box<TailForm>,
        exponent: f64,
    },
}

impl TailForm {
    pub fn eval(&self, x: usize) -> f64 {
        let x = x as f64;
        match self {
            TailForm::Exponential { scale, rate } => scale * (-rate * x).exp(),
            TailForm::InversePowerPlusOne { c, a, ell } => (c * x + a).powf(-ell) + 1.0,
            TailForm::Rational { s, x0 } => (s * x0 + 1.0) / (s * x + 1.0),
            TailForm::Constant { value } => *value,
            TailForm::Power { base, exponent } => base.eval(x as usize).powf(*exponent),
        }
    }

    /// Values on `0..n`.
    pub fn tabulate(&self, n: usize) -> Vec<f64> {
        (0..n).map(|x| self.eval(x)).collect()
    }

    pub fn powf(&self, exponent: f64) -> TailForm {
        TailForm::Power {
            base: Box::new(self.clone()),
            exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails { witness: usize },
    Invalid { reason: String },
}

/// Margin of one inequality family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMargin {
    pub family: String,
    #[serde(with = "crate::serde_ext")]
    pub margin: f64,
    pub witness: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCertificate {
    pub kind: CertificateKind,
    pub set: Option<StateSet>,
    /// One weight for most kinds; `W_0..W_ℓ` for the algebraic system.
    #[serde(with = "crate::serde_ext")]
    pub weights: Vec<Vec<f64>>,
    pub tails: Option<Vec<TailForm>>,
    #[serde(with = "crate::serde_ext")]
    pub lambda: Option<f64>,
    #[serde(with = "crate::serde_ext")]
    pub b: Option<f64>,
    #[serde(with = "crate::serde_ext")]
    pub d: Option<f64>,
    /// Minimum over checked states of (required bound − achieved `PW`),
    /// divided by the larger of 1 and the magnitude of the two sides.
    #[serde(with = "crate::serde_ext")]
    pub margin: f64,
    /// Per-state minimum margin; `None` where nothing is checked.
    #[serde(with = "crate::serde_ext")]
    pub margins: Vec<Option<f64>>,
    pub families: Vec<FamilyMargin>,
    pub verdict: Verdict,
    pub truncation_local: bool,
    #[serde(with = "crate::serde_ext")]
    pub diagnostics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl DriftCertificate {
    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }

    /// Minimum margin over the checked states in `0..upto`.
    pub fn margin_below(&self, upto: usize) -> f64 {
        self.margins
            .iter()
            .take(upto)
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether the certificate holds on states `0..upto`.
    pub fn holds_below(&self, upto: usize) -> bool {
        !matches!(self.verdict, Verdict::Invalid { .. }) && self.margin_below(upto) >= -MARGIN_TOL
    }

    fn invalid(kind: CertificateKind, set: Option<StateSet>, weights: Vec<Vec<f64>>, reason: String) -> Self {
        let n = weights.first().map_or(0, Vec::len);
        Self {
            kind,
            set,
            weights,
            tails: None,
            lambda: None,
            b: None,
            d: None,
            margin: f64::NAN,
            margins: vec![None; n],
            families: Vec::new(),
            verdict: Verdict::Invalid { reason },
            truncation_local: false,
            diagnostics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }
}

/// Accumulates per-state and per-family margins.
struct MarginTable {
    margins: Vec<Option<f64>>,
    families: Vec<FamilyMargin>,
}

impl MarginTable {
    fn new(n: usize) -> Self {
        Self {
            margins: vec![None; n],
            families: Vec::new(),
        }
    }

    /// Records `(x, slack, scale)` triples as the relative margin
    /// `slack / max(1, scale)`, so rounding in large weights is not mistaken
    /// for a violated inequality.
    fn family(&mut self, name: &str, values: impl Iterator<Item = (usize, f64, f64)>) {
        let mut worst = FamilyMargin {
            family: name.to_string(),
            margin: f64::INFINITY,
            witness: None,
        };
        for (x, slack, scale) in values {
            let m = slack / scale.abs().max(1.0);
            let slot = &mut self.margins[x];
            *slot = Some(slot.map_or(m, |v| v.min(m)));
            if m < worst.margin || m.is_nan() {
                worst.margin = m;
                worst.witness = Some(x);
            }
        }
        self.families.push(worst);
    }

    fn finish(self) -> (f64, Vec<Option<f64>>, Vec<FamilyMargin>, Verdict) {
        let worst = self
            .families
            .iter()
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
            .cloned();
        let (margin, verdict) = match worst {
            Some(w) if w.margin.is_nan() || w.margin < -MARGIN_TOL => (
                w.margin,
                Verdict::Fails {
                    witness: w.witness.unwrap_or(0),
                },
            ),
            Some(w) => (w.margin, Verdict::Holds),
            None => (f64::INFINITY, Verdict::Holds),
        };
        (margin, self.margins, self.families, verdict)
    }
}

fn apply(kernel: &TruncatedKernel, w: &[f64], tail: Option<&TailForm>) -> Vec<f64> {
    match tail {
        Some(t) => kernel.apply_with_tail(w, |x| t.eval(x)),
        None => kernel.apply(w),
    }
}

fn check_shape(kernel: &TruncatedKernel, w: &[f64]) -> Result<(), String> {
    if w.len() != kernel.size() {
        return Err(format!(
            "weight has {} entries, kernel has {} states",
            w.len(),
            kernel.size()
        ));
    }
    if let Some(x) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(format!(
            "weight at state {x} is {} (must be finite and nonnegative)",
            w[x]
        ));
    }
    Ok(())
}

fn unit_interval(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(format!("{name} = {v} must lie in (0, 1)"))
    }
}

fn truncation_local(kernel: &TruncatedKernel, tails: Option<&[TailForm]>) -> bool {
    tails.is_none() && kernel.has_overflow()
}

/// `PW <= λW 1_{A^c} + b 1_A` with `W >= 1_A`.
pub fn check_geometric(
    kernel: &TruncatedKernel,
    set: &StateSet,
    w: &[f64],
    lambda: f64,
    b: f64,
    tail: Option<TailForm>,
) -> DriftCertificate {
    let kind = CertificateKind::Geometric;
    let guard = check_shape(kernel, w)
        .and_then(|_| set.check_bound(kernel.size()).map_err(|e| e.to_string()))
        .and_then(|_| unit_interval("lambda", lambda))
        .and_then(|_| unit_interval("b", b))
        .and_then(|_| match set.states().iter().find(|&&x| w[x] < 1.0) {
            Some(&x) => Err(format!("W({x}) = {} < 1 on A", w[x])),
            None => Ok(()),
        });
    if let Err(reason) = guard {
        return DriftCertificate::invalid(kind, Some(set.clone()), vec![w.to_vec()], reason);
    }
    let pw = apply(kernel, w, tail.as_ref());
    let mask = set.mask(kernel.size());
    let mut table = MarginTable::new(kernel.size());
    table.family(
        "outside_set",
        (0..kernel.size())
            .filter(|&x| !mask[x])
            .map(|x| (x, lambda * w[x] - pw[x], pw[x].max(lambda * w[x]))),
    );
    table.family("on_set", set.states().iter().map(|&x| (x, b - pw[x], pw[x].max(b))));
    let (margin, margins, families, verdict) = table.finish();
    let mut notes = Vec::new();
    let stochastic = (0..kernel.size()).all(|x| kernel.row_defect(x).abs() <= 1e-12);
    if stochastic && !(0..kernel.size()).any(|x| !mask[x] && w[x] < 1.0) {
        notes.push("no state outside A has W < 1; a stochastic chain with a valid certificate needs one".into());
    }
    let tails = tail.map(|t| vec![t]);
    DriftCertificate {
        kind,
        set: Some(set.clone()),
        weights: vec![w.to_vec()],
        truncation_local: truncation_local(kernel, tails.as_deref()),
        tails,
        lambda: Some(lambda),
        b: Some(b),
        d: None,
        margin,
        margins,
        families,
        verdict,
        diagnostics: BTreeMap::new(),
        notes,
    }
}

/// `PW <= λW` on `A^c`, with `W < 1` on `A^c` and `W >= 1` on `A`.
pub fn check_gt(
    kernel: &TruncatedKernel,
    set: &StateSet,
    w: &[f64],
    lambda: f64,
    tail: Option<TailForm>,
) -> DriftCertificate {
    let kind = CertificateKind::Gt;
    let mask = set.mask(kernel.size().max(set.states().last().map_or(0, |m| m + 1)));
    let guard = check_shape(kernel, w)
        .and_then(|_| set.check_bound(kernel.size()).map_err(|e| e.to_string()))
        .and_then(|_| unit_interval("lambda", lambda))
        .and_then(
            |_| match (0..w.len()).find(|&x| if mask[x] { w[x] < 1.0 } else { w[x] >= 1.0 }) {
                Some(x) if mask[x] => Err(format!("W({x}) = {} < 1 on A", w[x])),
                Some(x) => Err(format!("W({x}) = {} >= 1 outside A", w[x])),
                None => Ok(()),
            },
        );
    if let Err(reason) = guard {
        return DriftCertificate::invalid(kind, Some(set.clone()), vec![w.to_vec()], reason);
    }
    let pw = apply(kernel, w, tail.as_ref());
    let mut table = MarginTable::new(kernel.size());
    table.family(
        "outside_set",
        (0..kernel.size())
            .filter(|&x| !mask[x])
            .map(|x| (x, lambda * w[x] - pw[x], pw[x].max(lambda * w[x]))),
    );
    let (margin, margins, families, verdict) = table.finish();
    let tails = tail.map(|t| vec![t]);
    DriftCertificate {
        kind,
        set: Some(set.clone()),
        weights: vec![w.to_vec()],
        truncation_local: truncation_local(kernel, tails.as_deref()),
        tails,
        lambda: Some(lambda),
        b: None,
        d: None,
        margin,
        margins,
        families,
        verdict,
        diagnostics: BTreeMap::new(),
        notes: Vec::new(),
    }
}

/// `W = E_x[κ^{σ_A} 1]`, `λ = 1/κ`, `b = sup_{x∈A} E_x[κ^{τ_A} 1] / κ`.
///
/// When `A` is the whole window, `b` is the largest row sum and the
/// return-transform supremum `κ · b` is reported as a diagnostic.
pub fn construct_geometric(
    kernel: &TruncatedKernel,
    set: &StateSet,
    kappa: f64,
) -> Result<DriftCertificate, SolveError> {
    let hitting = hitting_exponential_with(kernel, set, kappa, CONSTRUCT_TOL)?;
    let sup_tau = hitting.sup_tau_on(set);
    let whole = set.covers(kernel.size());
    let lambda = 1.0 / kappa;
    let b = if whole {
        (0..kernel.size()).map(|x| kernel.row_sum(x)).fold(0.0, f64::max)
    } else {
        sup_tau / kappa
    };
    let mut cert = if b >= 1.0 {
        let witness = set
            .states()
            .iter()
            .copied()
            .max_by(|&x, &y| hitting.tau[x].total_cmp(&hitting.tau[y]))
            .unwrap_or(0);
        let mut c = DriftCertificate::invalid(
            CertificateKind::Geometric,
            Some(set.clone()),
            vec![hitting.sigma.clone()],
            String::new(),
        );
        c.lambda = Some(lambda);
        c.b = Some(b);
        c.margin = 1.0 - b;
        c.verdict = Verdict::Fails { witness };
        c.truncation_local = kernel.has_overflow();
        c.notes.push(format!(
            "sup over A of the return transform is {sup_tau} >= rate {kappa}"
        ));
        c
    } else {
        check_geometric(kernel, set, &hitting.sigma, lambda, b, None)
    };
    cert.diagnostics.insert("kappa".into(), kappa);
    cert.diagnostics
        .insert("return_transform_sup".into(), if whole { kappa * b } else { sup_tau });
    Ok(cert)
}

/// `PW <= λW` on every state, `W >= 1`. When it holds, the consequence
/// `P^n(x, X) <= λ^n W(x)` is spot-checked for `n <= 20`.
pub fn check_strong(kernel: &TruncatedKernel, w: &[f64], lambda: f64, tail: Option<TailForm>) -> DriftCertificate {
    let kind = CertificateKind::Strong;
    let guard = check_shape(kernel, w)
        .and_then(|_| unit_interval("lambda", lambda))
        .and_then(|_| match w.iter().position(|&v| v < 1.0) {
            Some(x) => Err(format!("W({x}) = {} < 1", w[x])),
            None => Ok(()),
        });
    if let Err(reason) = guard {
        return DriftCertificate::invalid(kind, None, vec![w.to_vec()], reason);
    }
    let pw = apply(kernel, w, tail.as_ref());
    let mut table = MarginTable::new(kernel.size());
    table.family(
        "everywhere",
        (0..kernel.size()).map(|x| (x, lambda * w[x] - pw[x], pw[x].max(lambda * w[x]))),
    );
    let (margin, margins, families, verdict) = table.finish();
    let mut diagnostics = BTreeMap::new();
    if verdict == Verdict::Holds {
        let mut survival = vec![1.0; kernel.size()];
        let mut worst: f64 = f64::NEG_INFINITY;
        for n in 1..=20 {
            survival = kernel.apply(&survival);
            let rate = lambda.powi(n);
            for (s, wx) in survival.iter().zip(w) {
                worst = worst.max(s - rate * wx);
            }
        }
        diagnostics.insert("iterated_bound_excess".into(), worst);
    }
    let tails = tail.map(|t| vec![t]);
    DriftCertificate {
        kind,
        set: None,
        weights: vec![w.to_vec()],
        truncation_local: truncation_local(kernel, tails.as_deref()),
        tails,
        lambda: Some(lambda),
        b: None,
        d: None,
        margin,
        margins,
        families,
        verdict,
        diagnostics,
        notes: Vec::new(),
    }
}

/// `W = Σ_{i<n0} β^{i/n0} P^i V` with `λ = β^{−1/n0}`, checked as a strong
/// drift `PW <= λW`. Reports the sandwich `V <= W <= c V` and the measured
/// `β n0 max_{i<n0} ||P^i||_V`.
pub fn construct_v_uniform(kernel: &TruncatedKernel, v: &[f64], n0: usize, beta: f64) -> DriftCertificate {
    let kind = CertificateKind::VUniform;
    let guard = check_shape(kernel, v).and_then(|_| {
        if n0 == 0 {
            Err("n0 must be at least 1".into())
        } else if !(beta > 1.0) {
            Err(format!("beta = {beta} must exceed 1"))
        } else if let Some(x) = v.iter().position(|&val| val < 1.0) {
            Err(format!("V({x}) = {} < 1", v[x]))
        } else {
            Ok(())
        }
    });
    if let Err(reason) = guard {
        return DriftCertificate::invalid(kind, None, vec![v.to_vec()], reason);
    }
    let n = kernel.size();
    let mut w = vec![0.0; n];
    let mut power = v.to_vec();
    let mut norm_max: f64 = 0.0;
    for i in 0..n0 {
        let factor = beta.powf(i as f64 / n0 as f64);
        for x in 0..n {
            w[x] += factor * power[x];
            norm_max = norm_max.max(power[x] / v[x]);
        }
        power = kernel.apply(&power);
    }
    let lambda = beta.powf(-1.0 / n0 as f64);
    let pw = kernel.apply(&w);
    let mut table = MarginTable::new(n);
    table.family(
        "everywhere",
        (0..n).map(|x| (x, lambda * w[x] - pw[x], pw[x].max(lambda * w[x]))),
    );
    let (margin, margins, families, verdict) = table.finish();
    let ratios = w.iter().zip(v).map(|(a, b)| a / b);
    let (lo, hi) = ratios.fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("sandwich_lower".into(), lo);
    diagnostics.insert("sandwich_upper".into(), hi);
    diagnostics.insert("beta_n0_norm".into(), beta * n0 as f64 * norm_max);
    diagnostics.insert("n0".into(), n0 as f64);
    diagnostics.insert("beta".into(), beta);
    DriftCertificate {
        kind,
        set: None,
        weights: vec![w],
        tails: None,
        lambda: Some(lambda),
        b: None,
        d: None,
        margin,
        margins,
        families,
        verdict,
        truncation_local: kernel.has_overflow(),
        diagnostics,
        notes: Vec::new(),
    }
}

/// The `ℓ`-level system: for `i = 0..=ℓ`,
/// `PW_i <= W_i − (ℓ−i) W_{i+1}` on `A^c` (with `W_{ℓ+1} = 0`),
/// `W_i >= 1` on `A`, `PW_0 <= d` and `PW_ℓ <= b` on `A`.
pub fn check_algebraic_system(
    kernel: &TruncatedKernel,
    set: &StateSet,
    weights: &[Vec<f64>],
    d: f64,
    b: f64,
    tails: Option<Vec<TailForm>>,
) -> DriftCertificate {
    let kind = CertificateKind::AlgebraicSystem;
    let ell = weights.len().saturating_sub(1);
    let guard = (|| {
        if weights.len() < 2 {
            return Err("the system needs W_0..W_ℓ with ℓ >= 1".to_string());
        }
        for w in weights {
            check_shape(kernel, w)?;
        }
        set.check_bound(kernel.size()).map_err(|e| e.to_string())?;
        unit_interval("b", b)?;
        if !(d > 0.0 && d.is_finite()) {
            return Err(format!("d = {d} must be positive and finite"));
        }
        if let Some(t) = &tails {
            if t.len() != weights.len() {
                return Err(format!("{} tails for {} weights", t.len(), weights.len()));
            }
        }
        for (i, w) in weights.iter().enumerate() {
            if let Some(&x) = set.states().iter().find(|&&x| w[x] < 1.0) {
                return Err(format!("W_{i}({x}) = {} < 1 on A", w[x]));
            }
        }
        Ok(())
    })();
    if let Err(reason) = guard {
        return DriftCertificate::invalid(kind, Some(set.clone()), weights.to_vec(), reason);
    }
    let n = kernel.size();
    let mask = set.mask(n);
    let pws: Vec<Vec<f64>> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| apply(kernel, w, tails.as_ref().map(|t| &t[i])))
        .collect();
    let mut table = MarginTable::new(n);
    for i in 0..=ell {
        let next = weights.get(i + 1);
        let coef = (ell - i) as f64;
        table.family(
            &format!("drift_{i}"),
            (0..n).filter(|&x| !mask[x]).map(|x| {
                let drop = next.map_or(0.0, |w| coef * w[x]);
                let scale = weights[i][x].max(drop).max(pws[i][x]);
                (x, weights[i][x] - drop - pws[i][x], scale)
            }),
        );
    }
    table.family(
        "first_on_set",
        set.states().iter().map(|&x| (x, d - pws[0][x], d.max(pws[0][x]))),
    );
    table.family(
        "last_on_set",
        set.states().iter().map(|&x| (x, b - pws[ell][x], b.max(pws[ell][x]))),
    );
    let (margin, margins, families, verdict) = table.finish();
    DriftCertificate {
        kind,
        set: Some(set.clone()),
        weights: weights.to_vec(),
        truncation_local: truncation_local(kernel, tails.as_deref()),
        tails,
        lambda: None,
        b: Some(b),
        d: Some(d),
        margin,
        margins,
        families,
        verdict,
        diagnostics: BTreeMap::new(),
        notes: Vec::new(),
    }
}

/// A premise of [`generate_algebraic`] that does not hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiseFailure {
    pub premise: String,
    pub witness: Option<usize>,
    #[serde(with = "crate::serde_ext")]
    pub margin: f64,
    #[serde(with = "crate::serde_ext")]
    pub d: f64,
    #[serde(with = "crate::serde_ext")]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSystem {
    pub certificate: DriftCertificate,
    /// `(η, min_x margin)` of `P V^η <= V^η − ηℓ V^{η−1/ℓ}` on `A^c`.
    #[serde(with = "crate::serde_ext")]
    pub power_margins: Vec<(f64, f64)>,
}

/// Builds the `ℓ`-level system from `PV <= V − ℓ V^{1−1/ℓ}` on `A^c` and
/// `PW <= W` on `A^c`, with `d = max_A PV` and `b = max_A PW`, taking
/// `W_i = V^{1−i/ℓ}` for `i < ℓ` and `W_ℓ = W`.
pub fn generate_algebraic(
    kernel: &TruncatedKernel,
    set: &StateSet,
    v: &[f64],
    w: &[f64],
    ell: usize,
    v_tail: Option<TailForm>,
    w_tail: Option<TailForm>,
) -> Result<GeneratedSystem, PremiseFailure> {
    let n = kernel.size();
    let fail = |premise: &str, witness: Option<usize>, margin: f64| PremiseFailure {
        premise: premise.to_string(),
        witness,
        margin,
        d: f64::NAN,
        b: f64::NAN,
    };
    if ell == 0 {
        return Err(fail("ℓ must be at least 1", None, f64::NAN));
    }
    if v.len() != n || w.len() != n {
        return Err(fail("weights must cover the kernel", None, f64::NAN));
    }
    if set.check_bound(n).is_err() {
        return Err(fail("A must lie inside the kernel", None, f64::NAN));
    }
    if let Some(x) = v.iter().position(|&val| !(val >= 1.0 && val.is_finite())) {
        return Err(fail("V >= 1", Some(x), v[x] - 1.0));
    }
    let mask = set.mask(n);
    if let Some(x) = (0..n).find(|&x| if mask[x] { w[x] < 1.0 } else { w[x] > 1.0 }) {
        return Err(fail("W >= 1 on A and W <= 1 off A", Some(x), f64::NAN));
    }
    let l = ell as f64;
    let pv = apply(kernel, v, v_tail.as_ref());
    let pw = apply(kernel, w, w_tail.as_ref());
    let d = set
        .states()
        .iter()
        .map(|&x| pv[x])
        .fold(0.0, f64::max)
        .max(f64::EPSILON);
    let b = set.states().iter().map(|&x| pw[x]).fold(0.0, f64::max);
    let worst_off = |vals: &dyn Fn(usize) -> f64| {
        (0..n)
            .filter(|&x| !mask[x])
            .map(|x| (x, vals(x)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    };
    if let Some((x, m)) = worst_off(&|x| v[x] - l * v[x].powf(1.0 - 1.0 / l) - pv[x]) {
        if m < -MARGIN_TOL {
            return Err(PremiseFailure {
                d,
                b,
                ..fail("PV <= V - ℓ V^(1-1/ℓ) off A", Some(x), m)
            });
        }
    }
    if let Some((x, m)) = worst_off(&|x| w[x] - pw[x]) {
        if m < -MARGIN_TOL {
            return Err(PremiseFailure {
                d,
                b,
                ..fail("PW <= W off A", Some(x), m)
            });
        }
    }
    if b >= 1.0 {
        return Err(PremiseFailure {
            d,
            b,
            ..fail("max over A of PW < 1", None, 1.0 - b)
        });
    }

    let mut weights = Vec::with_capacity(ell + 1);
    let mut tails = v_tail
        .as_ref()
        .zip(w_tail.as_ref())
        .map(|_| Vec::with_capacity(ell + 1));
    let mut power_margins = Vec::with_capacity(ell);
    for i in 0..ell {
        let eta = 1.0 - i as f64 / l;
        let wi: Vec<f64> = v.iter().map(|x| x.powf(eta)).collect();
        let tail_i = v_tail.as_ref().map(|t| t.powf(eta));
        let pwi = apply(kernel, &wi, tail_i.as_ref());
        let m = (0..n)
            .filter(|&x| !mask[x])
            .map(|x| wi[x] - eta * l * v[x].powf(eta - 1.0 / l) - pwi[x])
            .fold(f64::INFINITY, f64::min);
        power_margins.push((eta, m));
        if let (Some(ts), Some(t)) = (tails.as_mut(), tail_i) {
            ts.push(t);
        }
        weights.push(wi);
    }
    weights.push(w.to_vec());
    if let (Some(ts), Some(t)) = (tails.as_mut(), w_tail) {
        ts.push(t);
    }
    let certificate = check_algebraic_system(kernel, set, &weights, d, b, tails);
    Ok(GeneratedSystem {
        certificate,
        power_margins,
    })
}

/// `W_i = (ℓ−i)! E_x[(σ_A+1)^{ℓ−i} 1_{σ_A<∞}]` with `d = max_A PW_0` and
/// `b = max_A PW_ℓ = sup_A L(x, A)`.
pub fn construct_algebraic(
    kernel: &TruncatedKernel,
    set: &StateSet,
    ell: usize,
) -> Result<DriftCertificate, CriterionError> {
    if ell == 0 {
        return Err(CriterionError::Precondition("ℓ must be at least 1".into()));
    }
    let moments = hitting_poly_with(kernel, set, ell, CONSTRUCT_TOL)?;
    let factorial = |k: usize| (1..=k).map(|j| j as f64).product::<f64>();
    let weights: Vec<Vec<f64>> = (0..=ell)
        .map(|i| {
            let scale = factorial(ell - i);
            moments.sigma[ell - i].iter().map(|v| scale * v).collect()
        })
        .collect();
    let sup_on_set = |w: &[f64]| {
        let pw = kernel.apply(w);
        set.states().iter().map(|&x| pw[x]).fold(0.0, f64::max)
    };
    let d = sup_on_set(&weights[0]).max(f64::EPSILON);
    let b = sup_on_set(&weights[ell]);
    let mut cert = if b >= 1.0 {
        let mut c = DriftCertificate::invalid(
            CertificateKind::AlgebraicSystem,
            Some(set.clone()),
            weights,
            String::new(),
        );
        c.b = Some(b);
        c.d = Some(d);
        c.margin = 1.0 - b;
        c.verdict = Verdict::Fails {
            witness: set.states()[0],
        };
        c.truncation_local = kernel.has_overflow();
        c
    } else {
        check_algebraic_system(kernel, set, &weights, d, b, None)
    };
    cert.diagnostics.insert("ell".into(), ell as f64);
    Ok(cert)
}

/// Rate `κ` and bound `B` such that a holding geometric certificate implies
/// `sup_{x∈A} E_x[κ^{τ_A} 1] <= B < 1`.
///
/// With `b < λ` this is `κ = 1/λ`, `B = b/λ`; otherwise the rate is relaxed
/// to `1/(b + ε)` with `ε = (1 − b)/2`.
pub fn geometric_return_bound(lambda: f64, b: f64) -> (f64, f64) {
    if b < lambda {
        (1.0 / lambda, b / lambda)
    } else {
        let rate = b + (1.0 - b) / 2.0;
        (1.0 / rate, b / rate)
    }
}
