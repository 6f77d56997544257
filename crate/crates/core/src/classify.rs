//! Runs every criterion on one chain and assembles a report.
//!
//! Verdicts describe the truncation, never the countable chain:
//!
//! * `certified-consistent`: every lower bound is consistent with the class,
//!   the certificate passes and the numbers are stable when the window halves;
//! * `suggestive`: the computed evidence is inconclusive at this truncation;
//! * `refuted-at-truncation`: the computed evidence contradicts the class;
//! * `not-applicable`: the class needs killing and the kernel has none.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::drift::{
    check_strong, construct_algebraic, construct_geometric, construct_v_uniform, geometric_return_bound,
    DriftCertificate,
};
use crate::error::CriterionError;
use crate::firstreturn::{
    occupation_sum, return_probability, return_table, simulate_lifetime, simulate_return, sup_on, weighted_return_sum,
    ReturnTimeTable, SimSource,
};
use crate::kernel::{augment_with_cemetery, survival_curves, ChainSpec, StateSet, TruncatedKernel};
use crate::minsolve::{hitting_exponential, hitting_poly, solve_minimal, MonotoneFixedPointProblem, SolveStatus};
use crate::rwhl::{exp_certificate, poly_certificate, PolySearchOptions};
use crate::skipfree::{sigma1, sigma34, xi_and_moments, SigmaDiagnostics, SigmaVerdict};

pub const REPORT_SCHEMA: &str = "report_v1";
pub const DEFAULT_KAPPA_GRID: [f64; 6] = [1.01, 1.05, 1.1, 1.25, 1.5, 2.0];
pub const DEFAULT_ELL_LIST: [usize; 2] = [1, 2];

/// `sup L` this close to 1 counts as recurrence.
pub const RECURRENCE_TOL: f64 = 1e-6;
/// Relative change between the window and its half that counts as stable.
pub const STABLE_REL: f64 = 1e-3;
/// Relative growth between the half window and the window that refutes
/// finiteness.
pub const GROWTH_REFUTE: f64 = 0.10;
/// Stability tolerance for return probabilities.
const RETURN_STABLE: f64 = 1e-4;
const KILL_TOL: f64 = 1e-12;
const SKIPFREE_STOCHASTIC_DEPTH: usize = 200;
const SKIPFREE_KILLED_DEPTH: usize = 60;
const V_NORM_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockVerdict {
    CertifiedConsistent,
    Suggestive,
    RefutedAtTruncation,
    NotApplicable,
}

impl BlockVerdict {
    pub fn is_positive(self) -> bool {
        self == BlockVerdict::CertifiedConsistent
    }

    pub fn is_refuted(self) -> bool {
        self == BlockVerdict::RefutedAtTruncation
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionBlock {
    pub verdict: BlockVerdict,
    #[serde(with = "crate::serde_ext")]
    pub evidence: BTreeMap<String, f64>,
    pub certificate: Option<DriftCertificate>,
    pub notes: Vec<String>,
}

impl CriterionBlock {
    fn new(verdict: BlockVerdict) -> Self {
        Self {
            verdict,
            evidence: BTreeMap::new(),
            certificate: None,
            notes: Vec::new(),
        }
    }

    fn put(&mut self, key: impl Into<String>, value: f64) {
        self.evidence.insert(key.into(), value);
    }

    fn refute(&mut self, why: impl Into<String>) {
        self.verdict = BlockVerdict::RefutedAtTruncation;
        self.notes.push(why.into());
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllBlock {
    pub ell: usize,
    #[serde(flatten)]
    pub block: CriterionBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub paths: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub set: Option<StateSet>,
    pub kappa_grid: Vec<f64>,
    pub ell_list: Vec<usize>,
    pub truncation: usize,
    pub horizon: usize,
    pub monte_carlo: Option<MonteCarloConfig>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            set: None,
            kappa_grid: DEFAULT_KAPPA_GRID.to_vec(),
            ell_list: DEFAULT_ELL_LIST.to_vec(),
            truncation: 400,
            horizon: 400,
            monte_carlo: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncationInfo {
    pub states: usize,
    pub half_states: usize,
    pub horizon: usize,
    pub kernel_hash: String,
    pub intrinsic_killing: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipFreeEvidence {
    pub depth: usize,
    pub sigma1: Option<SigmaDiagnostics>,
    pub xi: Option<SigmaDiagnostics>,
    #[serde(with = "crate::serde_ext")]
    pub sigma2: Vec<(usize, f64)>,
    pub sigma3: Option<SigmaDiagnostics>,
    pub sigma4: Option<SigmaDiagnostics>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McComparison {
    pub state: usize,
    #[serde(with = "crate::serde_ext")]
    pub estimate: f64,
    #[serde(with = "crate::serde_ext")]
    pub std_error: f64,
    #[serde(with = "crate::serde_ext")]
    pub exact: f64,
    #[serde(with = "crate::serde_ext")]
    pub z: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloBlock {
    pub paths: u64,
    pub seed: u64,
    pub return_probability: Option<McComparison>,
    pub lifetime: Option<McComparison>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransienceReport {
    pub schema: String,
    pub set: Vec<usize>,
    pub index_offset: usize,
    pub sup_over_truncated_set: bool,
    pub truncation: TruncationInfo,
    pub transient: CriterionBlock,
    pub geometric: CriterionBlock,
    pub ell: Vec<EllBlock>,
    pub strong: CriterionBlock,
    pub uniform: CriterionBlock,
    pub v_uniform: CriterionBlock,
    pub skipfree: Option<SkipFreeEvidence>,
    pub monte_carlo: Option<MonteCarloBlock>,
    pub violations: Vec<String>,
}

impl TransienceReport {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Pairs `(stronger, weaker)` whose implication must not be contradicted:
/// a certified stronger class with a refuted weaker class is a violation.
pub fn implication_violations(report: &TransienceReport) -> Vec<String> {
    let mut pairs: Vec<(String, BlockVerdict, String, BlockVerdict)> = vec![
        (
            "uniform".into(),
            report.uniform.verdict,
            "strong".into(),
            report.strong.verdict,
        ),
        (
            "v_uniform".into(),
            report.v_uniform.verdict,
            "strong".into(),
            report.strong.verdict,
        ),
        (
            "strong".into(),
            report.strong.verdict,
            "v_uniform".into(),
            report.v_uniform.verdict,
        ),
        (
            "strong".into(),
            report.strong.verdict,
            "geometric".into(),
            report.geometric.verdict,
        ),
        (
            "geometric".into(),
            report.geometric.verdict,
            "transient".into(),
            report.transient.verdict,
        ),
    ];
    for e in &report.ell {
        let name = format!("ell_{}", e.ell);
        pairs.push((
            "geometric".into(),
            report.geometric.verdict,
            name.clone(),
            e.block.verdict,
        ));
        pairs.push((name, e.block.verdict, "transient".into(), report.transient.verdict));
    }
    pairs
        .into_iter()
        .filter(|(_, s, _, w)| s.is_positive() && w.is_refuted())
        .map(|(s, _, w, _)| format!("{s} is certified but {w} is refuted"))
        .collect()
}

fn rel_change(full: f64, half: f64) -> f64 {
    if full == half {
        0.0
    } else {
        (full - half).abs() / full.abs().max(half.abs())
    }
}

fn exp_transform_sup(kernel: &TruncatedKernel, set: &StateSet, kappa: f64) -> f64 {
    match hitting_exponential(kernel, set, kappa) {
        Ok(h) if h.status == SolveStatus::Converged => h.sup_tau_on(set),
        _ => f64::INFINITY,
    }
}

/// `E_x τ` with `τ` the killing step: the minimal solution of `g = 1 + P g`.
pub fn mean_lifetime(kernel: &TruncatedKernel) -> Result<Vec<f64>, CriterionError> {
    let operator: Vec<Vec<(usize, f64)>> = (0..kernel.size()).map(|x| kernel.row(x).iter().collect()).collect();
    let problem = MonotoneFixedPointProblem::new(operator, vec![1.0; kernel.size()])?;
    let solution = solve_minimal(&problem);
    if solution.status != SolveStatus::Converged {
        return Err(CriterionError::SearchExhausted(format!(
            "mean lifetime did not converge ({:?})",
            solution.status
        )));
    }
    Ok(solution.values)
}

/// `E_x[κ^τ]` for the killing step `τ`, on every state.
pub fn lifetime_transform(kernel: &TruncatedKernel, kappa: f64) -> Option<Vec<f64>> {
    let aug = augment_with_cemetery(kernel);
    let cemetery = StateSet::singleton(kernel.size());
    match hitting_exponential(&aug, &cemetery, kappa) {
        Ok(h) if h.status == SolveStatus::Converged => Some(h.sigma[..kernel.size()].to_vec()),
        _ => None,
    }
}

/// Local geometric rate `(P^b(x,X) / P^a(x,X))^{1/(b-a)}`.
fn decay_rate(curves: &[Vec<f64>], x: usize, a: usize, b: usize) -> f64 {
    let (sa, sb) = (curves[a][x], curves[b][x]);
    if sa <= 0.0 {
        0.0
    } else {
        (sb / sa).powf(1.0 / (b - a) as f64)
    }
}

struct Windows {
    full: TruncatedKernel,
    half: TruncatedKernel,
}

/// Runs every applicable criterion. Fails only on invalid input; errors from
/// individual criteria are recorded in the blocks.
pub fn classify(spec: &ChainSpec, opts: &ClassifyOptions) -> Result<TransienceReport, CriterionError> {
    spec.check()?;
    if opts.truncation == 0 || opts.horizon < 4 {
        return Err(CriterionError::Precondition(
            "truncation must be positive and horizon at least 4".into(),
        ));
    }
    if opts.kappa_grid.iter().any(|&k| !(k > 1.0 && k.is_finite())) {
        return Err(CriterionError::Precondition(
            "every rate in the grid must exceed 1".into(),
        ));
    }
    let full = spec.truncate(opts.truncation)?;
    let set = opts.set.clone().unwrap_or_else(|| spec.default_set());
    set.check_bound(full.size())?;
    let half = match spec.fixed_size() {
        Some(_) => full.clone(),
        None => {
            let h = spec.truncate((opts.truncation / 2).max(1))?;
            if set.check_bound(h.size()).is_ok() {
                h
            } else {
                full.clone()
            }
        }
    };
    let w = Windows { full, half };
    let h = opts.horizon;
    let intrinsic = w.full.has_intrinsic_killing(KILL_TOL);

    let table = return_table(&w.full, &set, h);
    let skipfree = spec.as_skipfree().map(|s| skipfree_evidence(s, opts));

    let mut transient = transient_block(&w, &set, &table, h);
    if let Some(xi) = skipfree.as_ref().and_then(|e| e.xi.as_ref()) {
        transient.put("skipfree_xi", xi.sup);
        if xi.sup >= 1.0 - RECURRENCE_TOL && !transient.verdict.is_refuted() {
            transient.refute(format!("xi lower bound {} reaches 1", xi.sup));
        }
    }

    let ((mut geometric, ell), (strong, uniform, v_uniform)) = rayon::join(
        || {
            let g = geometric_block(spec, &w, &set, &table, opts, &transient);
            let ell = opts
                .ell_list
                .iter()
                .map(|&l| EllBlock {
                    ell: l,
                    block: ell_block(spec, &w, &set, l, &transient),
                })
                .collect::<Vec<_>>();
            (g, ell)
        },
        || {
            if intrinsic {
                let strong = strong_block(&w, &set, opts);
                let uniform = uniform_block(&w, h, &strong.0, skipfree.as_ref());
                let v_uniform = v_uniform_block(&w, &strong);
                (strong.0, uniform, v_uniform)
            } else {
                let na = || {
                    let mut b = CriterionBlock::new(BlockVerdict::NotApplicable);
                    b.notes
                        .push("kernel has no intrinsic killing; the lifetime is infinite".into());
                    b
                };
                (na(), na(), na())
            }
        },
    );
    if strong.verdict.is_positive() && geometric.verdict.is_refuted() {
        geometric
            .notes
            .push("lifetime evidence is stronger than return evidence".into());
    }

    let monte_carlo = opts
        .monte_carlo
        .map(|mc| monte_carlo_block(&w.full, &set, set.states()[0], h, mc));

    let mut report = TransienceReport {
        schema: REPORT_SCHEMA.into(),
        set: set.states().to_vec(),
        index_offset: spec.index_offset(),
        sup_over_truncated_set: true,
        truncation: TruncationInfo {
            states: w.full.size(),
            half_states: w.half.size(),
            horizon: h,
            kernel_hash: w.full.content_hash(),
            intrinsic_killing: intrinsic,
        },
        transient,
        geometric,
        ell,
        strong,
        uniform,
        v_uniform,
        skipfree,
        monte_carlo,
        violations: Vec::new(),
    };
    report.violations = implication_violations(&report);
    Ok(report)
}

fn transient_block(w: &Windows, set: &StateSet, table: &ReturnTimeTable, h: usize) -> CriterionBlock {
    let bounds = return_probability(table);
    let lower = bounds.sup_lower_on(set);
    let upper = sup_on(&bounds.upper, set);
    let half_h = return_probability(&return_table(&w.full, set, h / 2)).sup_lower_on(set);
    let half_n = return_probability(&return_table(&w.half, set, h)).sup_lower_on(set);
    let mut b = CriterionBlock::new(BlockVerdict::Suggestive);
    b.put("sup_return_lower", lower);
    b.put("sup_return_upper", upper);
    b.put("sup_return_half_horizon", half_h);
    b.put("sup_return_half_truncation", half_n);
    b.put("sup_alive", sup_on(table.alive(), set));
    if lower >= 1.0 - RECURRENCE_TOL {
        b.refute(format!("sup over A of the return probability is {lower}"));
    } else if (lower - half_h).abs() <= RETURN_STABLE && (lower - half_n).abs() <= RETURN_STABLE {
        b.verdict = BlockVerdict::CertifiedConsistent;
    } else {
        b.notes
            .push("return probabilities still move with the horizon or the truncation".into());
    }
    b
}

fn geometric_block(
    spec: &ChainSpec,
    w: &Windows,
    set: &StateSet,
    table: &ReturnTimeTable,
    opts: &ClassifyOptions,
    transient: &CriterionBlock,
) -> CriterionBlock {
    let mut b = CriterionBlock::new(BlockVerdict::Suggestive);
    let mut grid = opts.kappa_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut best = None;
    for &k in &grid {
        let s = exp_transform_sup(&w.full, set, k);
        b.put(format!("transform_sup@{k}"), s);
        if s < 1.0 {
            best = Some((k, s));
        }
    }
    if let ChainSpec::Rwhl(gamma) = spec {
        match exp_certificate(gamma, None, w.full.size()) {
            Ok(c) => {
                b.put("exp_certificate_lambda", c.search.lambda.unwrap_or(f64::NAN));
                b.put("exp_certificate_margin", c.certificate.margin);
            }
            Err(e) => b.notes.push(format!("exponential certificate: {e}")),
        }
    }
    if transient.verdict.is_refuted() {
        b.refute("transience is refuted");
        return b;
    }
    let Some((kappa, sup)) = best else {
        b.notes
            .push("no rate in the grid gives a return transform below 1".into());
        return b;
    };
    b.put("kappa", kappa);
    b.put("transform_sup", sup);
    b.put("dp_weighted_sum", weighted_return_sum(table, kappa).sup_on(set));
    let half = exp_transform_sup(&w.half, set, kappa);
    b.put("transform_sup_half_truncation", half);
    let occ = occupation_sum(&w.full, set, kappa, opts.horizon);
    b.put("occupation_sup", occ.sup_on(set));
    let stable = rel_change(sup, half) <= STABLE_REL;
    match construct_geometric(&w.full, set, kappa) {
        Ok(cert) => {
            let holds = cert.holds();
            b.certificate = Some(cert);
            if holds && stable && transient.verdict.is_positive() {
                b.verdict = BlockVerdict::CertifiedConsistent;
            }
        }
        Err(e) => b.notes.push(format!("certificate construction: {e}")),
    }
    if !stable {
        b.notes.push("return transform moves when the truncation halves".into());
    }
    b
}

fn ell_block(spec: &ChainSpec, w: &Windows, set: &StateSet, ell: usize, transient: &CriterionBlock) -> CriterionBlock {
    let mut b = CriterionBlock::new(BlockVerdict::Suggestive);
    let moment = |k: &TruncatedKernel| match hitting_poly(k, set, ell) {
        Ok(p) if p.status.iter().all(|s| *s == SolveStatus::Converged) => sup_on(&p.tau[ell], set),
        _ => f64::INFINITY,
    };
    let full = moment(&w.full);
    let half = moment(&w.half);
    b.put("moment_sup", full);
    b.put("moment_sup_half_truncation", half);
    if let (ChainSpec::Rwhl(gamma), true) = (spec, ell >= 2) {
        match poly_certificate(gamma, ell, &PolySearchOptions::default()) {
            Ok(c) => {
                b.put("poly_certificate_c", c.c);
                b.put("poly_certificate_a", c.a);
                b.notes
                    .push("polynomial drift system found on the default window".into());
            }
            Err(e) => b.notes.push(format!("polynomial certificate: {e}")),
        }
    }
    if transient.verdict.is_refuted() {
        b.refute("transience is refuted");
        return b;
    }
    if !full.is_finite() {
        b.notes.push("moment solve did not converge".into());
        return b;
    }
    if full > (1.0 + GROWTH_REFUTE) * half {
        b.refute(format!(
            "moment grows from {half} to {full} when the truncation doubles"
        ));
        return b;
    }
    match construct_algebraic(&w.full, set, ell) {
        Ok(cert) => {
            let holds = cert.holds();
            b.certificate = Some(cert);
            if holds && rel_change(full, half) <= STABLE_REL && transient.verdict.is_positive() {
                b.verdict = BlockVerdict::CertifiedConsistent;
            }
        }
        Err(e) => b.notes.push(format!("certificate construction: {e}")),
    }
    b
}

/// The strong block, with the lifetime transform it certified (if any).
fn strong_block(w: &Windows, set: &StateSet, opts: &ClassifyOptions) -> (CriterionBlock, Option<(f64, Vec<f64>)>) {
    let mut b = CriterionBlock::new(BlockVerdict::Suggestive);
    let x = set.states()[0];
    let m = (opts.horizon.min(w.full.size() / 2) / 4 * 4).max(4);
    let curves = survival_curves(&w.full, m);
    let rate = decay_rate(&curves, x, m / 2, m);
    let rate_half = decay_rate(&curves, x, m / 4, m / 2);
    b.put("decay_ratio", rate);
    b.put("decay_ratio_half", rate_half);
    b.put("decay_steps", m as f64);
    let sub_geometric = rate > 0.0 && (1.0 - rate) <= (1.0 - rate_half) / 1.5;

    let mut grid = opts.kappa_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut found = None;
    for &k in &grid {
        match lifetime_transform(&w.full, k) {
            Some(v) => found = Some((k, v)),
            None => break,
        }
    }
    if sub_geometric {
        b.refute(format!(
            "survival decays sub-geometrically: local rate {rate_half} then {rate}, gap to 1 shrinking"
        ));
        return (b, None);
    }
    let Some((kappa, transform)) = found else {
        b.notes
            .push("lifetime transform diverges for every rate in the grid".into());
        return (b, None);
    };
    b.put("kappa", kappa);
    let probe = (w.half.size() / 2).max(1);
    let sup_full = transform[..probe].iter().copied().fold(0.0, f64::max);
    b.put("lifetime_transform_sup", sup_full);
    let stable = match lifetime_transform(&w.half, kappa) {
        Some(t) => {
            let sup_half = t[..probe].iter().copied().fold(0.0, f64::max);
            b.put("lifetime_transform_sup_half_truncation", sup_half);
            rel_change(sup_full, sup_half) <= STABLE_REL
        }
        None => false,
    };
    let cert = check_strong(&w.full, &transform, 1.0 / kappa, None);
    if cert.holds() && stable {
        b.verdict = BlockVerdict::CertifiedConsistent;
    }
    b.certificate = Some(cert);
    (b, Some((kappa, transform)))
}

fn uniform_block(w: &Windows, h: usize, strong: &CriterionBlock, sf: Option<&SkipFreeEvidence>) -> CriterionBlock {
    let mut b = CriterionBlock::new(BlockVerdict::Suggestive);
    let sup_below = |v: &[f64], n: usize| v[..n.max(1)].iter().copied().fold(0.0, f64::max);
    let lifetimes = mean_lifetime(&w.full).and_then(|f| mean_lifetime(&w.half).map(|g| (f, g)));
    let growth = match &lifetimes {
        Ok((full, half)) => {
            let s_full = sup_below(full, w.full.size() / 2);
            let s_half = sup_below(half, w.half.size() / 2);
            b.put("mean_lifetime_sup", s_full);
            b.put("mean_lifetime_sup_half_truncation", s_half);
            Some(s_full / s_half - 1.0)
        }
        Err(e) => {
            b.notes.push(format!("mean lifetime: {e}"));
            None
        }
    };
    let curves = survival_curves(&w.full, h);
    let probe = (w.full.size() / 2).max(1);
    if let Some((n0, s)) = (1..=h)
        .map(|n| (n, sup_below(&curves[n], probe)))
        .find(|&(_, s)| s < 1.0 - KILL_TOL)
    {
        b.put("n0", n0 as f64);
        b.put("survival_sup_at_n0", s);
    }
    if let Some(g) = growth {
        b.put("mean_lifetime_growth", g);
    }
    if strong.verdict.is_refuted() {
        b.refute("strong geometric transience is refuted");
    } else if growth.is_some_and(|g| g >= GROWTH_REFUTE) {
        b.refute("mean lifetime grows with the truncation");
    } else if let Some(s4) = sf
        .and_then(|e| e.sigma4.as_ref())
        .filter(|s| s.verdict == SigmaVerdict::DivergenceSuspected)
    {
        b.refute(format!("sigma4 partials grow (partial sup {})", s4.sup));
    } else if growth.is_some_and(|g| g.abs() <= STABLE_REL) && strong.verdict.is_positive() {
        b.verdict = BlockVerdict::CertifiedConsistent;
    }
    b
}

fn v_uniform_block(w: &Windows, strong: &(CriterionBlock, Option<(f64, Vec<f64>)>)) -> CriterionBlock {
    let mut b = CriterionBlock::new(BlockVerdict::Suggestive);
    if strong.0.verdict.is_refuted() {
        b.refute("strong geometric transience is refuted, and V-uniform transience for some V is equivalent to it");
        return b;
    }
    let Some((kappa, v)) = &strong.1 else {
        b.notes.push("no lifetime transform to use as V".into());
        return b;
    };
    let mut power = v.clone();
    let mut found = None;
    for n in 1..=V_NORM_STEPS {
        power = w.full.apply(&power);
        let norm = power.iter().zip(v).map(|(p, q)| p / q).fold(0.0, f64::max);
        b.put(format!("norm@{n}"), norm);
        if norm < 1.0 {
            found = Some((n, norm));
            break;
        }
    }
    b.put("kappa", *kappa);
    let Some((n0, norm)) = found else {
        b.notes.push(format!("||P^n||_V >= 1 for n <= {V_NORM_STEPS}"));
        return b;
    };
    let cert = construct_v_uniform(&w.full, v, n0, 1.0 / norm);
    if cert.holds() && strong.0.verdict.is_positive() {
        b.verdict = BlockVerdict::CertifiedConsistent;
    }
    b.certificate = Some(cert);
    b
}

fn skipfree_evidence(spec: &crate::kernel::SkipFreeSpec, opts: &ClassifyOptions) -> SkipFreeEvidence {
    let mut e = SkipFreeEvidence {
        depth: 0,
        sigma1: None,
        xi: None,
        sigma2: Vec::new(),
        sigma3: None,
        sigma4: None,
        errors: Vec::new(),
    };
    let cap = spec.available_rows().unwrap_or(usize::MAX);
    let stochastic = spec.is_stochastic_upto(opts.truncation.min(cap).saturating_sub(1));
    match stochastic {
        Ok(true) => {
            let depth = opts
                .truncation
                .min(SKIPFREE_STOCHASTIC_DEPTH)
                .min(cap.saturating_sub(1));
            e.depth = depth;
            match sigma1(spec, depth) {
                Ok(s) => e.sigma1 = Some(s),
                Err(err) => e.errors.push(format!("sigma1: {err}")),
            }
            let ell_max = opts.ell_list.iter().copied().max().unwrap_or(0);
            match xi_and_moments(spec, ell_max, depth) {
                Ok(m) => {
                    e.sigma2 = m.levels.iter().map(|l| (l.ell, l.sigma2)).collect();
                    e.xi = Some(m.xi);
                }
                Err(err) => e.errors.push(format!("xi: {err}")),
            }
        }
        Ok(false) => {
            let depth = opts.truncation.min(SKIPFREE_KILLED_DEPTH).min(cap.saturating_sub(1));
            e.depth = depth;
            match sigma34(spec, depth) {
                Ok(k) => {
                    e.sigma3 = Some(k.sigma3);
                    e.sigma4 = Some(k.sigma4);
                }
                Err(err) => e.errors.push(format!("sigma34: {err}")),
            }
        }
        Err(err) => e.errors.push(err.to_string()),
    }
    e
}

fn z_score(estimate: f64, exact: f64, se: f64) -> f64 {
    if se > 0.0 {
        (estimate - exact) / se
    } else if (estimate - exact).abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Simulated return probability (and mean lifetime, when the kernel kills)
/// from `x` against the first-return table, with z-scores.
pub fn monte_carlo_block(
    kernel: &TruncatedKernel,
    set: &StateSet,
    x: usize,
    h: usize,
    mc: MonteCarloConfig,
) -> MonteCarloBlock {
    let table = return_table(kernel, set, h);
    let intrinsic = kernel.has_intrinsic_killing(KILL_TOL);
    let mut block = MonteCarloBlock {
        paths: mc.paths,
        seed: mc.seed,
        return_probability: None,
        lifetime: None,
        errors: Vec::new(),
    };
    match simulate_return(SimSource::Kernel(kernel), x, set, mc.paths, h, mc.seed) {
        Ok(sim) => {
            let exact: f64 = (1..=h).map(|n| table.f(n, x)).sum();
            let p = sim.probability;
            block.return_probability = Some(McComparison {
                state: x,
                estimate: p.estimate,
                std_error: p.std_error,
                exact,
                z: z_score(p.estimate, exact, p.std_error),
            });
        }
        Err(e) => block.errors.push(format!("return simulation: {e}")),
    }
    if intrinsic {
        match simulate_lifetime(SimSource::Kernel(kernel), x, mc.paths, h, mc.seed) {
            Ok(sim) => {
                let curves = survival_curves(kernel, h);
                let exact: f64 = (0..h).map(|n| curves[n][x]).sum();
                let m = sim.mean;
                block.lifetime = Some(McComparison {
                    state: x,
                    estimate: m.estimate,
                    std_error: m.std_error,
                    exact,
                    z: z_score(m.estimate, exact, m.std_error),
                });
            }
            Err(e) => block.errors.push(format!("lifetime simulation: {e}")),
        }
    }
    block
}

/// The quantities of the four equivalent geometric conditions at one rate,
/// and the implications between them that can be checked on a truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceAudit {
    #[serde(with = "crate::serde_ext")]
    pub kappa: f64,
    pub horizon: usize,
    /// `sup_A Σ_{n<=H} κ^n F(n, x)`.
    #[serde(with = "crate::serde_ext")]
    pub return_sum_sup: f64,
    pub return_sum_holds: bool,
    #[serde(with = "crate::serde_ext")]
    pub return_probability_sup: f64,
    /// `sup_A E_x[κ^{τ_A} 1]` from the minimal solution (infinite if divergent).
    #[serde(with = "crate::serde_ext")]
    pub transform_sup: f64,
    pub return_pair_holds: bool,
    #[serde(with = "crate::serde_ext")]
    pub occupation_sup: f64,
    pub occupation_growing: bool,
    pub occupation_holds: bool,
    pub certificate: Option<DriftCertificate>,
    pub certificate_holds: bool,
    /// `ε/(1-ε)` when the return sum `ε` is below 1.
    #[serde(with = "crate::serde_ext")]
    pub occupation_bound: Option<f64>,
    /// `(κ', B, sup_A E_x[κ'^{τ_A} 1])` implied by a holding certificate.
    #[serde(with = "crate::serde_ext")]
    pub implied: Option<(f64, f64, f64)>,
    /// All four conditions hold, or none does.
    pub agree: bool,
    pub violations: Vec<String>,
}

impl EquivalenceAudit {
    pub fn consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn equivalence_audit(kernel: &TruncatedKernel, set: &StateSet, kappa: f64, horizon: usize) -> EquivalenceAudit {
    let table = return_table(kernel, set, horizon);
    let eps = weighted_return_sum(&table, kappa).sup_on(set);
    let sup_l = return_probability(&table).sup_lower_on(set);
    let transform = exp_transform_sup(kernel, set, kappa);
    let occ = occupation_sum(kernel, set, kappa, horizon);
    let occ_sup = occ.sup_on(set);
    let growing = set.states().iter().any(|&x| occ.growing[x]);
    let certificate = construct_geometric(kernel, set, kappa).ok();
    let certificate_holds = certificate.as_ref().is_some_and(DriftCertificate::holds);

    let return_sum_holds = eps < 1.0;
    let return_pair_holds = sup_l < 1.0 - RECURRENCE_TOL && transform.is_finite();
    let occupation_holds = occ_sup.is_finite() && !growing;
    let mut violations = Vec::new();
    let occupation_bound = return_sum_holds.then(|| eps / (1.0 - eps));
    if let Some(bound) = occupation_bound {
        if occ_sup > bound + 1e-8 {
            violations.push(format!("occupation sum {occ_sup} exceeds eps/(1-eps) = {bound}"));
        }
        if sup_l > eps + 1e-12 {
            violations.push(format!("return probability {sup_l} exceeds the weighted sum {eps}"));
        }
    }
    if transform < 1.0 && !certificate_holds {
        violations.push("return transform is below 1 but the constructed certificate fails".into());
    }
    let implied = certificate.as_ref().filter(|c| c.holds()).and_then(|c| {
        let (k2, bound) = geometric_return_bound(c.lambda?, c.b?);
        Some((k2, bound, exp_transform_sup(kernel, set, k2)))
    });
    if let Some((k2, bound, value)) = implied {
        if value > bound + 1e-6 {
            violations.push(format!(
                "certificate implies sup E[{k2}^tau] <= {bound}, computed {value}"
            ));
        }
    }
    let flags = [return_sum_holds, return_pair_holds, occupation_holds, certificate_holds];
    EquivalenceAudit {
        kappa,
        horizon,
        return_sum_sup: eps,
        return_sum_holds,
        return_probability_sup: sup_l,
        transform_sup: transform,
        return_pair_holds,
        occupation_sup: occ_sup,
        occupation_growing: growing,
        occupation_holds,
        certificate,
        certificate_holds,
        occupation_bound,
        implied,
        agree: flags.iter().all(|&f| f) || flags.iter().all(|&f| !f),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Boundary, SkipFreeSpec};

    fn bd(up: f64, boundary: Boundary) -> ChainSpec {
        ChainSpec::Skipfree(SkipFreeSpec::birth_death(up, 1.0 - up, 0.0, boundary).unwrap())
    }

    fn small() -> ClassifyOptions {
        ClassifyOptions {
            truncation: 200,
            horizon: 200,
            ..ClassifyOptions::default()
        }
    }

    #[test]
    fn transient_birth_death() {
        let r = classify(&bd(2.0 / 3.0, Boundary::Reflect), &ClassifyOptions::default()).unwrap();
        assert_eq!(r.schema, REPORT_SCHEMA);
        assert_eq!(r.transient.verdict, BlockVerdict::CertifiedConsistent);
        assert!((r.transient.evidence["sup_return_lower"] - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(r.geometric.verdict, BlockVerdict::CertifiedConsistent);
        assert!(r.geometric.evidence["kappa"] >= 1.05);
        assert_eq!(r.strong.verdict, BlockVerdict::NotApplicable);
        assert_eq!(r.uniform.verdict, BlockVerdict::NotApplicable);
        assert!(r
            .ell
            .iter()
            .all(|e| e.block.verdict == BlockVerdict::CertifiedConsistent));
        assert!(r.is_consistent(), "{:?}", r.violations);
        let sf = r.skipfree.unwrap();
        assert!((sf.xi.unwrap().sup - 0.5).abs() < 1e-9);
    }

    #[test]
    fn recurrent_birth_death() {
        let r = classify(&bd(1.0 / 3.0, Boundary::Reflect), &small()).unwrap();
        assert_eq!(r.transient.verdict, BlockVerdict::RefutedAtTruncation);
        assert_eq!(r.geometric.verdict, BlockVerdict::RefutedAtTruncation);
        assert!(r.ell.iter().all(|e| e.block.verdict.is_refuted()));
        assert!(r.is_consistent());
    }

    #[test]
    fn killed_walk_separates_strong_from_uniform() {
        let r = classify(&bd(1.0 / 3.0, Boundary::Kill), &ClassifyOptions::default()).unwrap();
        assert!(r.truncation.intrinsic_killing);
        assert_eq!(
            r.strong.verdict,
            BlockVerdict::CertifiedConsistent,
            "{:?}",
            r.strong.notes
        );
        assert_eq!(r.uniform.verdict, BlockVerdict::RefutedAtTruncation);
        assert_eq!(r.v_uniform.verdict, BlockVerdict::CertifiedConsistent);
        assert!(r.is_consistent(), "{:?}", r.violations);
    }

    #[test]
    fn return_or_climb_is_geometric_but_not_strong() {
        let spec = ChainSpec::Skipfree(SkipFreeSpec::return_or_climb_standard());
        let r = classify(&spec, &ClassifyOptions::default()).unwrap();
        assert_eq!(r.index_offset, 1);
        assert_eq!(r.geometric.verdict, BlockVerdict::CertifiedConsistent);
        assert_eq!(r.geometric.evidence["kappa"], 2.0);
        assert!((r.geometric.evidence["transform_sup"] - 0.5 * 2f64.ln()).abs() < 1e-6);
        assert_eq!(r.strong.verdict, BlockVerdict::RefutedAtTruncation);
        assert!(r.strong.evidence["decay_ratio"] > r.strong.evidence["decay_ratio_half"]);
        assert!(r.uniform.verdict.is_refuted());
        assert!(r.is_consistent(), "{:?}", r.violations);
    }

    #[test]
    fn uniform_killing_is_uniform() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let mut r = vec![0.0; 6];
                r[(i + 1) % 6] = 0.45;
                r[i] = 0.45;
                r
            })
            .collect();
        let spec = ChainSpec::Matrix { rows };
        let r = classify(&spec, &small()).unwrap();
        assert_eq!(r.strong.verdict, BlockVerdict::CertifiedConsistent);
        assert_eq!(r.uniform.verdict, BlockVerdict::CertifiedConsistent);
        assert!(r.is_consistent());
    }

    #[test]
    fn reports_are_deterministic() {
        let opts = ClassifyOptions {
            monte_carlo: Some(MonteCarloConfig { paths: 2000, seed: 9 }),
            ..small()
        };
        let spec = bd(1.0 / 3.0, Boundary::Kill);
        let a = serde_json::to_string(&classify(&spec, &opts).unwrap()).unwrap();
        let b = serde_json::to_string(&classify(&spec, &opts).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_block_agrees() {
        let opts = ClassifyOptions {
            monte_carlo: Some(MonteCarloConfig { paths: 20_000, seed: 3 }),
            ..small()
        };
        let r = classify(&bd(1.0 / 3.0, Boundary::Kill), &opts).unwrap();
        let mc = r.monte_carlo.unwrap();
        assert!(mc.return_probability.unwrap().z.abs() < 4.0);
        assert!(mc.lifetime.unwrap().z.abs() < 4.0);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let spec = bd(0.5, Boundary::Reflect);
        let bad_set = ClassifyOptions {
            set: Some(StateSet::singleton(10_000)),
            ..small()
        };
        assert!(classify(&spec, &bad_set).is_err());
        let bad_grid = ClassifyOptions {
            kappa_grid: vec![0.9],
            ..small()
        };
        assert!(classify(&spec, &bad_grid).is_err());
    }

    #[test]
    fn injected_contradiction_is_flagged() {
        let mut r = classify(&bd(2.0 / 3.0, Boundary::Reflect), &small()).unwrap();
        r.transient.verdict = BlockVerdict::RefutedAtTruncation;
        assert!(!implication_violations(&r).is_empty());
    }

    #[test]
    fn audit_transient_birth_death() {
        let kernel = SkipFreeSpec::birth_death(2.0 / 3.0, 1.0 / 3.0, 0.0, Boundary::Reflect)
            .unwrap()
            .truncate(200)
            .unwrap();
        let a = equivalence_audit(&kernel, &StateSet::singleton(0), 1.05, 400);
        assert!(a.consistent(), "{:?}", a.violations);
        assert!(a.agree);
        assert!(a.occupation_sup <= 0.7793 / (1.0 - 0.7793) + 1e-6);
        assert!(a.implied.is_some());
    }

    #[test]
    fn audit_recurrent_birth_death() {
        let kernel = SkipFreeSpec::birth_death(1.0 / 3.0, 2.0 / 3.0, 0.0, Boundary::Reflect)
            .unwrap()
            .truncate(100)
            .unwrap();
        let a = equivalence_audit(&kernel, &StateSet::singleton(0), 1.05, 400);
        assert!(a.consistent());
        assert!(!a.return_sum_holds && !a.return_pair_holds && !a.occupation_holds && !a.certificate_holds);
        assert!(a.agree);
    }

    #[test]
    fn audit_whole_space_uniform_kill() {
        let rows = vec![vec![0.3, 0.3], vec![0.3, 0.3]];
        let kernel = TruncatedKernel::from_rows(&rows).unwrap();
        let a = equivalence_audit(&kernel, &StateSet::all(2), 1.2, 100);
        assert!(a.consistent(), "{:?}", a.violations);
        assert!(a.agree);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

        #[test]
        fn random_kernels_never_violate_implications(
            raw in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 6), 2..7),
            mass in proptest::collection::vec(0.3f64..=1.0, 6),
        ) {
            let n = raw.len();
            let rows: Vec<Vec<f64>> = raw
                .iter()
                .zip(&mass)
                .map(|(r, &m)| {
                    let r = &r[..n];
                    let total: f64 = r.iter().sum::<f64>() + 1e-3;
                    r.iter().map(|v| (v + 1e-3 / n as f64) * m / total).collect()
                })
                .collect();
            let kernel = TruncatedKernel::from_rows(&rows).unwrap();
            let r = classify(&ChainSpec::Matrix { rows }, &small()).unwrap();
            proptest::prop_assert!(r.violations.is_empty(), "{:?}", r.violations);
            let audit = equivalence_audit(&kernel, &StateSet::singleton(0), 1.05, 200);
            proptest::prop_assert!(audit.consistent(), "{:?}", audit.violations);
        }
    }
}
