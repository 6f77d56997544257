//! First-return-time distributions on truncated kernels.
//!
//! One taboo sweep computes `F^n(x, A) = P_x(τ_A = n)` for every source
//! state at once. Truncation kills mass, so all sums here are lower bounds
//! for the countable chain; `alive` is the unresolved gap at the horizon.

mod montecarlo;

pub use montecarlo::{
    simulate_lifetime, simulate_return, LifetimeSimulation, MonteCarloEstimate, ReturnSimulation, SimSource,
};

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::kernel::{StateSet, TruncatedKernel};

/// `F(n, x)` for `n = 1..=H` and every state, with the mass left over at
/// the horizon split into `alive` and `killed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeTable {
    set: StateSet,
    horizon: usize,
    /// `f[n - 1][x]`.
    f: Vec<Vec<f64>>,
    alive: Vec<f64>,
    killed: Vec<f64>,
}

impl ReturnTimeTable {
    pub fn set(&self) -> &StateSet {
        &self.set
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn size(&self) -> usize {
        self.alive.len()
    }

    /// `F^n(x, A)` for `1 <= n <= H`.
    pub fn f(&self, n: usize, x: usize) -> f64 {
        self.f[n - 1][x]
    }

    /// The whole level `F^n(·, A)`.
    pub fn level(&self, n: usize) -> &[f64] {
        &self.f[n - 1]
    }

    /// `P_x(σ_A = n)`, with `σ_A = 0` on `A` and `σ_A = τ_A` off `A`.
    pub fn hitting(&self, n: usize, x: usize) -> f64 {
        let on_a = self.set.contains(x);
        match (n, on_a) {
            (0, true) => 1.0,
            (_, true) | (0, false) => 0.0,
            (n, false) => self.f(n, x),
        }
    }

    /// Paths that have neither entered `A` nor been killed by the horizon.
    pub fn alive(&self) -> &[f64] {
        &self.alive
    }

    /// Paths killed before entering `A`.
    pub fn killed(&self) -> &[f64] {
        &self.killed
    }

    /// Mutable access to one entry, for fault-injection in tests of the
    /// decomposition checker.
    pub fn f_mut(&mut self, n: usize, x: usize) -> &mut f64 {
        &mut self.f[n - 1][x]
    }

    /// Largest `|Σ_n F(n,x) + alive(x) + killed(x) − 1|`.
    pub fn conservation_error(&self) -> f64 {
        (0..self.size())
            .map(|x| {
                let total: f64 = self.f.iter().map(|lvl| lvl[x]).sum::<f64>();
                (total + self.alive[x] + self.killed[x] - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Writes `n,x,F,cumulative` rows after a `#` header line naming the
    /// kernel hash, the set and the horizon.
    pub fn write_csv(&self, mut w: impl Write, kernel_hash: &str) -> io::Result<()> {
        let states: Vec<String> = self.set.states().iter().map(|s| s.to_string()).collect();
        writeln!(w, "# kernel={kernel_hash} A={} H={}", states.join(";"), self.horizon)?;
        writeln!(w, "n,x,F,cumulative")?;
        for x in 0..self.size() {
            let mut cumulative = 0.0;
            for n in 1..=self.horizon {
                let v = self.f(n, x);
                cumulative += v;
                writeln!(w, "{n},{x},{v:e},{cumulative:e}")?;
            }
        }
        Ok(())
    }
}

/// `(T v)(x) = Σ_{y ∉ A} P(x, y) v(y)`.
fn taboo_apply(kernel: &TruncatedKernel, outside: &[bool], v: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    for ((s, &o), &val) in scratch.iter_mut().zip(outside).zip(v) {
        *s = if o { val } else { 0.0 };
    }
    kernel.apply_into(scratch, out);
}

/// Taboo dynamic programme for the law of `τ_A = inf{n >= 1 : Φ_n ∈ A}`.
///
/// # Panics
/// If `horizon == 0` or `set` does not fit the kernel.
pub fn return_table(kernel: &TruncatedKernel, set: &StateSet, horizon: usize) -> ReturnTimeTable {
    assert!(horizon >= 1, "horizon must be at least 1");
    set.check_bound(kernel.size()).expect("target set outside the kernel");
    let n = kernel.size();
    let in_a = set.mask(n);
    let outside: Vec<bool> = in_a.iter().map(|&a| !a).collect();
    let indicator: Vec<f64> = in_a.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let defect: Vec<f64> = (0..n).map(|x| kernel.row_defect(x)).collect();

    let mut f = Vec::with_capacity(horizon);
    f.push(kernel.apply(&indicator));
    let mut alive = vec![1.0; n];
    let mut killed = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut next = vec![0.0; n];

    for step in 1..=horizon {
        if step > 1 {
            taboo_apply(kernel, &outside, &f[step - 2], &mut scratch, &mut next);
            f.push(next.clone());
        }
        taboo_apply(kernel, &outside, &alive, &mut scratch, &mut next);
        std::mem::swap(&mut alive, &mut next);
        taboo_apply(kernel, &outside, &killed, &mut scratch, &mut next);
        for (k, (&nk, &d)) in killed.iter_mut().zip(next.iter().zip(&defect)) {
            *k = nk + d;
        }
    }
    for v in alive.iter_mut().chain(killed.iter_mut()) {
        *v = v.clamp(0.0, 1.0);
    }
    ReturnTimeTable {
        set: set.clone(),
        horizon,
        f,
        alive,
        killed,
    }
}

/// Two-sided bounds on `L(x, A)` for the truncated chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnBounds {
    #[serde(with = "crate::serde_ext")]
    pub lower: Vec<f64>,
    #[serde(with = "crate::serde_ext")]
    pub upper: Vec<f64>,
}

impl ReturnBounds {
    pub fn sup_lower_on(&self, set: &StateSet) -> f64 {
        sup_on(&self.lower, set)
    }
}

pub fn return_probability(table: &ReturnTimeTable) -> ReturnBounds {
    let lower = moment_return_sum(table, 0);
    let upper = lower.iter().zip(table.alive()).map(|(l, a)| (l + a).min(1.0)).collect();
    ReturnBounds { lower, upper }
}

/// `Σ_{n<=H} κ^n F(n, x)` and the unresolved-mass indicator `alive(x) κ^H`.
///
/// The indicator is not a bound on the omitted tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSum {
    #[serde(with = "crate::serde_ext")]
    pub kappa: f64,
    #[serde(with = "crate::serde_ext")]
    pub values: Vec<f64>,
    #[serde(with = "crate::serde_ext")]
    pub tail: Vec<f64>,
}

impl WeightedSum {
    pub fn sup_on(&self, set: &StateSet) -> f64 {
        sup_on(&self.values, set)
    }
}

pub fn weighted_return_sum(table: &ReturnTimeTable, kappa: f64) -> WeightedSum {
    assert!(kappa > 0.0, "rate must be positive");
    let mut values = vec![0.0; table.size()];
    let mut weight = 1.0;
    for n in 1..=table.horizon() {
        weight *= kappa;
        for (v, f) in values.iter_mut().zip(table.level(n)) {
            *v += weight * f;
        }
    }
    let tail = table.alive().iter().map(|a| a * weight).collect();
    WeightedSum { kappa, values, tail }
}

/// `Σ_{n<=H} n^ℓ F(n, x)`.
pub fn moment_return_sum(table: &ReturnTimeTable, ell: u32) -> Vec<f64> {
    let mut values = vec![0.0; table.size()];
    for n in 1..=table.horizon() {
        let weight = (n as f64).powi(ell as i32);
        for (v, f) in values.iter_mut().zip(table.level(n)) {
            *v += weight * f;
        }
    }
    values
}

/// Partial occupation sums `Σ_{n<=H} r(n) P^n(x, A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSum {
    pub horizon: usize,
    #[serde(with = "crate::serde_ext")]
    pub values: Vec<f64>,
    /// The last term is at least as large as the term at `H/2`: the series
    /// shows no sign of converging at this state.
    pub growing: Vec<bool>,
}

impl OccupationSum {
    pub fn sup_on(&self, set: &StateSet) -> f64 {
        sup_on(&self.values, set)
    }
}

fn occupation_with(
    kernel: &TruncatedKernel,
    set: &StateSet,
    horizon: usize,
    rate: impl Fn(usize) -> f64,
) -> OccupationSum {
    assert!(horizon >= 1, "horizon must be at least 1");
    set.check_bound(kernel.size()).expect("target set outside the kernel");
    let n = kernel.size();
    let mut u: Vec<f64> = set.mask(n).iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let mut next = vec![0.0; n];
    let mut values = vec![0.0; n];
    let mut midpoint = vec![0.0; n];
    let mut last = vec![0.0; n];
    let mid = horizon.div_ceil(2);
    for step in 1..=horizon {
        kernel.apply_into(&u, &mut next);
        std::mem::swap(&mut u, &mut next);
        let r = rate(step);
        for x in 0..n {
            let term = r * u[x];
            values[x] += term;
            if step == mid {
                midpoint[x] = term;
            }
            last[x] = term;
        }
    }
    let growing = last
        .iter()
        .zip(&midpoint)
        .map(|(&l, &m)| horizon > 1 && l > 0.0 && l >= m)
        .collect();
    OccupationSum {
        horizon,
        values,
        growing,
    }
}

/// `Σ_{n=1}^{H} κ^n P^n(x, A)`.
pub fn occupation_sum(kernel: &TruncatedKernel, set: &StateSet, kappa: f64, horizon: usize) -> OccupationSum {
    assert!(kappa > 0.0, "rate must be positive");
    occupation_with(kernel, set, horizon, |n| kappa.powi(n as i32))
}

/// `Σ_{n=1}^{H} n^ℓ P^n(x, A)`.
pub fn moment_occupation_sum(kernel: &TruncatedKernel, set: &StateSet, ell: u32, horizon: usize) -> OccupationSum {
    occupation_with(kernel, set, horizon, |n| (n as f64).powi(ell as i32))
}

/// Largest residuals of the two decomposition identities over `x` and
/// `n <= H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResiduals {
    /// `P^n(x,A) = F^n(x,A) + Σ_{m<n} Σ_{y∈A} P^m(x,y) F^{n−m}(y,A)`.
    #[serde(with = "crate::serde_ext")]
    pub last_exit: f64,
    /// `P^n(x,A) = Σ_{m<=n} Σ_{y∈A} G^m(x,y) P^{n−m}(y,A)` with
    /// `G^m(x,y) = P_x(τ_A = m, Φ_m = y)`, plus `Σ_y G^m(x,y) = F^m(x,A)`.
    #[serde(with = "crate::serde_ext")]
    pub first_entrance: f64,
}

impl DecompositionResiduals {
    pub fn max(&self) -> f64 {
        self.last_exit.max(self.first_entrance)
    }
}

/// Computes the table and checks both decompositions against it.
pub fn decomposition_check(kernel: &TruncatedKernel, set: &StateSet, horizon: usize) -> DecompositionResiduals {
    let table = return_table(kernel, set, horizon);
    decomposition_residuals(kernel, &table)
}

/// Checks a (possibly modified) table against direct matrix powers.
pub fn decomposition_residuals(kernel: &TruncatedKernel, table: &ReturnTimeTable) -> DecompositionResiduals {
    let n = kernel.size();
    let h = table.horizon();
    let a = table.set().states();
    let outside: Vec<bool> = table.set().mask(n).iter().map(|&m| !m).collect();

    // cols[k][m][x] = P^m(x, a_k) and g[k][m - 1][x] = G^m(x, a_k).
    let mut cols: Vec<Vec<Vec<f64>>> = Vec::with_capacity(a.len());
    let mut g: Vec<Vec<Vec<f64>>> = Vec::with_capacity(a.len());
    let mut scratch = vec![0.0; n];
    for &y in a {
        let mut e = vec![0.0; n];
        e[y] = 1.0;
        let mut powers = vec![e.clone()];
        for m in 1..=h {
            powers.push(kernel.apply(&powers[m - 1]));
        }
        cols.push(powers);

        let mut entrance = vec![kernel.apply(&e)];
        for m in 2..=h {
            let mut out = vec![0.0; n];
            taboo_apply(kernel, &outside, &entrance[m - 2], &mut scratch, &mut out);
            entrance.push(out);
        }
        g.push(entrance);
    }

    let p_to_a = |m: usize, x: usize| -> f64 { cols.iter().map(|c| c[m][x]).sum() };

    let mut last_exit: f64 = 0.0;
    let mut first_entrance: f64 = 0.0;
    for x in 0..n {
        for step in 1..=h {
            let lhs = p_to_a(step, x);

            let mut rhs = table.f(step, x);
            for m in 1..step {
                for (k, &y) in a.iter().enumerate() {
                    rhs += cols[k][m][x] * table.f(step - m, y);
                }
            }
            last_exit = last_exit.max((lhs - rhs).abs());

            let mut rhs = 0.0;
            let mut g_total = 0.0;
            for m in 1..=step {
                for (k, &y) in a.iter().enumerate() {
                    rhs += g[k][m - 1][x] * p_to_a(step - m, y);
                }
            }
            for gk in &g {
                g_total += gk[step - 1][x];
            }
            first_entrance = first_entrance
                .max((lhs - rhs).abs())
                .max((g_total - table.f(step, x)).abs());
        }
    }
    DecompositionResiduals {
        last_exit,
        first_entrance,
    }
}

/// `sup_{x ∈ A} v(x)` over the part of `A` inside the vector.
pub fn sup_on(values: &[f64], set: &StateSet) -> f64 {
    set.states()
        .iter()
        .filter(|&&x| x < values.len())
        .map(|&x| values[x])
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Boundary, SkipFreeSpec};
    use proptest::prelude::*;

    fn birth_death(up: f64, n: usize) -> TruncatedKernel {
        SkipFreeSpec::birth_death(up, 1.0 - up, 0.0, Boundary::Reflect)
            .unwrap()
            .truncate(n)
            .unwrap()
    }

    #[test]
    fn whole_space_returns_immediately() {
        let k = birth_death(2.0 / 3.0, 6);
        let t = return_table(&k, &StateSet::all(6), 5);
        for x in 0..5 {
            assert!((t.f(1, x) - 1.0).abs() < 1e-15);
            assert_eq!(t.f(2, x), 0.0);
        }
    }

    #[test]
    fn first_two_levels_by_path_enumeration() {
        let k = birth_death(2.0 / 3.0, 50);
        let t = return_table(&k, &StateSet::singleton(0), 10);
        assert!((t.f(1, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.f(2, 0) - 2.0 / 9.0).abs() < 1e-15);
        // 0 → 1 → 2 → 1 → 0
        assert!((t.f(3, 0)).abs() < 1e-15);
        assert!((t.f(4, 0) - 2.0 / 3.0 * 2.0 / 3.0 * 1.0 / 3.0 * 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gamblers_ruin() {
        // The omitted tail beyond H = 200 is about 1e-8, so 1e-9 needs H = 400.
        let k = birth_death(2.0 / 3.0, 200);
        let t = return_table(&k, &StateSet::singleton(0), 200);
        let l = return_probability(&t);
        assert!((l.lower[0] - 2.0 / 3.0).abs() < 2e-8);
        assert!((l.lower[1] - 0.5).abs() < 2e-8);
        assert!(t.conservation_error() < 1e-10);
        let t = return_table(&birth_death(2.0 / 3.0, 400), &StateSet::singleton(0), 400);
        let l = return_probability(&t);
        assert!((l.lower[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((l.lower[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn absorbing_state_never_returns() {
        let k = TruncatedKernel::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        let t = return_table(&k, &StateSet::singleton(0), 20);
        let l = return_probability(&t);
        assert_eq!(l.lower[1], 0.0);
        assert_eq!(l.upper[1], 1.0);
    }

    #[test]
    fn weighted_sum_at_unit_rate_is_return_probability() {
        let k = birth_death(0.6, 40);
        let t = return_table(&k, &StateSet::new(vec![0, 3]).unwrap(), 60);
        let w = weighted_return_sum(&t, 1.0);
        let l = return_probability(&t);
        for (a, b) in w.values.iter().zip(&l.lower) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(moment_return_sum(&t, 0), l.lower);
    }

    #[test]
    fn generating_function() {
        let (p, q, kappa) = (2.0 / 3.0, 1.0 / 3.0, 1.05_f64);
        let phi = (1.0 - (1.0 - 4.0 * p * q * kappa * kappa).sqrt()) / (2.0 * p * kappa);
        let expected = kappa * q + kappa * p * phi;
        let k = birth_death(p, 400);
        let t = return_table(&k, &StateSet::singleton(0), 400);
        let w = weighted_return_sum(&t, kappa);
        assert!((w.values[0] - expected).abs() < 1e-4, "{} vs {expected}", w.values[0]);
        assert!((w.values[0] - 0.779286).abs() < 1e-4);
    }

    #[test]
    fn return_or_climb_series() {
        let k = SkipFreeSpec::return_or_climb_standard().truncate(80).unwrap();
        let t = return_table(&k, &StateSet::singleton(0), 60);
        let series: f64 = (2..=60).map(|n| 0.25_f64.powi(n) / (n - 1) as f64).sum();
        let closed = 0.25 * (4.0_f64 / 3.0).ln();
        assert!((series - closed).abs() < 1e-12);
        assert!((return_probability(&t).lower[0] - closed).abs() < 1e-6);
        let w = weighted_return_sum(&t, 2.0);
        assert!((w.values[0] - 0.5 * 2.0_f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn two_cycle_moments() {
        let k = TruncatedKernel::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let t = return_table(&k, &StateSet::singleton(0), 10);
        for ell in 0..5 {
            assert_eq!(moment_return_sum(&t, ell)[0], 2f64.powi(ell as i32));
        }
        assert_eq!(t.hitting(0, 0), 1.0);
        assert_eq!(t.hitting(1, 1), 1.0);
        assert_eq!(t.hitting(2, 1), 0.0);
    }

    #[test]
    fn occupation_flags_absorbing_growth() {
        // 1 → 0 w.p. 1/2, 0 absorbing.
        let k = TruncatedKernel::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let s = occupation_sum(&k, &StateSet::singleton(0), 1.0, 200);
        assert!(s.growing[0] && s.growing[1]);
        assert!(s.values[0] > 199.0);
        let never =
            TruncatedKernel::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let s = occupation_sum(&never, &StateSet::singleton(0), 1.05, 50);
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert!(!s.growing.iter().any(|&g| g));
    }

    #[test]
    fn occupation_bounded_by_return_transform() {
        let k = birth_death(2.0 / 3.0, 400);
        let a = StateSet::singleton(0);
        let t = return_table(&k, &a, 400);
        let eps = weighted_return_sum(&t, 1.05).sup_on(&a);
        let occ = occupation_sum(&k, &a, 1.05, 400);
        assert!(occ.values[0] <= eps / (1.0 - eps) + 1e-8);
        assert!(!occ.growing[0]);
    }

    #[test]
    fn decomposition_detects_fault() {
        let k = birth_death(0.55, 20);
        let a = StateSet::new(vec![0, 4]).unwrap();
        let mut t = return_table(&k, &a, 50);
        assert!(decomposition_residuals(&k, &t).max() <= 1e-10);
        *t.f_mut(7, 3) += 1e-3;
        let r = decomposition_residuals(&k, &t);
        assert!(r.last_exit >= 9e-4);
        assert!(r.first_entrance >= 9e-4);
    }

    #[test]
    fn csv_layout() {
        let k = birth_death(2.0 / 3.0, 3);
        let t = return_table(&k, &StateSet::singleton(0), 2);
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &k.content_hash()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# kernel=") && lines[0].ends_with("A=0 H=2"));
        assert_eq!(lines[1], "n,x,F,cumulative");
        assert_eq!(lines.len(), 2 + 3 * 2);
    }

    fn random_kernel() -> impl Strategy<Value = TruncatedKernel> {
        (2usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), n),
                prop::collection::vec(0.5f64..1.0, n),
            )
                .prop_map(move |(raw, mass)| {
                    let rows: Vec<Vec<f64>> = raw
                        .into_iter()
                        .zip(mass)
                        .map(|(r, m)| {
                            let s: f64 = r.iter().sum::<f64>().max(1e-9);
                            r.into_iter().map(|v| v * m / s).collect()
                        })
                        .collect();
                    TruncatedKernel::from_rows(&rows).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn table_invariants(k in random_kernel(), a0 in 0usize..12, h in 1usize..40) {
            let a = StateSet::singleton(a0 % k.size());
            let t = return_table(&k, &a, h);
            prop_assert!(t.conservation_error() < 1e-10);
            let l = return_probability(&t);
            for x in 0..k.size() {
                prop_assert!(l.lower[x] <= 1.0 + 1e-12);
                for n in 1..=h {
                    prop_assert!((0.0..=1.0).contains(&t.f(n, x)));
                }
            }
            prop_assert!(decomposition_residuals(&k, &t).max() <= 1e-10);
        }

        #[test]
        fn partial_sums_monotone_in_horizon(k in random_kernel(), h in 1usize..30) {
            let a = StateSet::singleton(0);
            let short = return_table(&k, &a, h);
            let long = return_table(&k, &a, h + 7);
            let (s, l) = (return_probability(&short), return_probability(&long));
            for x in 0..k.size() {
                prop_assert!(l.lower[x] >= s.lower[x] - 1e-15);
                prop_assert!(l.upper[x] <= s.upper[x] + 1e-12);
            }
            let o1 = occupation_sum(&k, &a, 1.1, h);
            let o2 = occupation_sum(&k, &a, 1.1, h + 7);
            for x in 0..k.size() {
                prop_assert!(o2.values[x] >= o1.values[x]);
            }
        }

        #[test]
        fn occupation_bounds_on_random_kernels(k in random_kernel(), h in 1usize..60, kappa in 1.0f64..1.3) {
            let a = StateSet::singleton(0);
            let t = return_table(&k, &a, h);
            let eps = weighted_return_sum(&t, kappa).sup_on(&a);
            if eps < 1.0 {
                let occ = occupation_sum(&k, &a, kappa, h);
                prop_assert!(occ.sup_on(&a) <= eps / (1.0 - eps) + 1e-8);
            }
            // Polynomial analogue at ℓ = 2.
            let delta = return_probability(&t).sup_lower_on(&a);
            if delta < 1.0 {
                let m = moment_return_sum(&t, 2)[0];
                let p0 = moment_occupation_sum(&k, &a, 0, h).values[0];
                let p1 = moment_occupation_sum(&k, &a, 1, h).values[0];
                let p2 = moment_occupation_sum(&k, &a, 2, h).values[0];
                let bound = m / (1.0 - delta) * (1.0 + p0 + 2.0 * p1);
                prop_assert!(p2 <= bound * (1.0 + 1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn enlarging_the_truncation_never_decreases_returns() {
        let a = StateSet::singleton(0);
        let small = return_probability(&return_table(&birth_death(0.6, 20), &a, 100));
        let large = return_probability(&return_table(&birth_death(0.6, 40), &a, 100));
        for x in 0..20 {
            assert!(large.lower[x] >= small.lower[x] - 1e-15);
        }
    }
}
