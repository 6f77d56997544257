use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::KernelError;
use crate::kernel::{SkipFreeSpec, StateSet, TruncatedKernel};

/// What to simulate: a finite kernel, or a skip-free chain simulated on a
/// window wide enough that no path can reach its edge within the horizon.
#[derive(Debug, Clone, Copy)]
pub enum SimSource<'a> {
    Kernel(&'a TruncatedKernel),
    SkipFree(&'a SkipFreeSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    #[serde(with = "crate::serde_ext")]
    pub estimate: f64,
    #[serde(with = "crate::serde_ext")]
    pub std_error: f64,
    pub paths: u64,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSimulation {
    /// Estimate of `P_x(τ_A <= H)`.
    pub probability: MonteCarloEstimate,
    /// `histogram[n - 1]` counts paths with `τ_A = n`.
    pub histogram: Vec<u64>,
    pub killed: u64,
    pub censored: u64,
}

impl ReturnSimulation {
    /// Empirical `F(n, x)`.
    pub fn empirical_f(&self, n: usize) -> f64 {
        self.histogram[n - 1] as f64 / self.probability.paths as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeSimulation {
    /// Estimate of `E_x[τ ∧ H]` where `τ` is the step at which the path is
    /// killed.
    pub mean: MonteCarloEstimate,
    /// Paths still alive at the horizon.
    pub censored: u64,
}

/// Cumulative row tables for inverse-CDF sampling.
struct Sampler {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Sampler {
    fn new(kernel: &TruncatedKernel) -> Self {
        let rows = (0..kernel.size())
            .map(|i| {
                let mut acc = 0.0;
                kernel
                    .row(i)
                    .iter()
                    .map(|(j, p)| {
                        acc += p;
                        (j, acc)
                    })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    /// Next state, or `None` when the path is killed.
    fn step(&self, x: usize, rng: &mut impl Rng) -> Option<usize> {
        let u: f64 = rng.gen();
        let row = &self.rows[x];
        let idx = row.partition_point(|&(_, c)| c <= u);
        row.get(idx).map(|&(j, _)| j)
    }
}

fn window(source: SimSource<'_>, x: usize, horizon: usize) -> Result<TruncatedKernel, KernelError> {
    match source {
        SimSource::Kernel(k) => {
            if x >= k.size() {
                return Err(KernelError::StateOutOfRange { state: x, n: k.size() });
            }
            Ok(k.clone())
        }
        SimSource::SkipFree(spec) => {
            let wanted = x + horizon + 2;
            spec.truncate(spec.available_rows().map_or(wanted, |r| r.min(wanted)))
        }
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Monte Carlo estimate of the first-return law from `x`.
///
/// Each path draws from its own ChaCha stream, so the result depends only on
/// `(seed, paths)` and not on the thread count.
pub fn simulate_return(
    source: SimSource<'_>,
    x: usize,
    set: &StateSet,
    paths: u64,
    horizon: usize,
    seed: u64,
) -> Result<ReturnSimulation, KernelError> {
    assert!(paths >= 1 && horizon >= 1);
    let kernel = window(source, x, horizon)?;
    set.check_bound(kernel.size())?;
    let mask = set.mask(kernel.size());
    let sampler = Sampler::new(&kernel);

    // Outcome per path: Some(n) return at step n, None(true) killed.
    let (histogram, killed, censored) = (0..paths)
        .into_par_iter()
        .fold(
            || (vec![0u64; horizon], 0u64, 0u64),
            |(mut hist, mut killed, mut censored), path| {
                let mut rng = path_rng(seed, path);
                let mut state = x;
                let mut outcome = None;
                for n in 1..=horizon {
                    match sampler.step(state, &mut rng) {
                        None => {
                            outcome = Some(Err(()));
                            break;
                        }
                        Some(next) if mask[next] => {
                            outcome = Some(Ok(n));
                            break;
                        }
                        Some(next) => state = next,
                    }
                }
                match outcome {
                    Some(Ok(n)) => hist[n - 1] += 1,
                    Some(Err(())) => killed += 1,
                    None => censored += 1,
                }
                (hist, killed, censored)
            },
        )
        .reduce(
            || (vec![0u64; horizon], 0, 0),
            |(mut a, ka, ca), (b, kb, cb)| {
                a.iter_mut().zip(&b).for_each(|(u, v)| *u += v);
                (a, ka + kb, ca + cb)
            },
        );
    let hits: u64 = histogram.iter().sum();
    let p = hits as f64 / paths as f64;
    Ok(ReturnSimulation {
        probability: MonteCarloEstimate {
            estimate: p,
            std_error: (p * (1.0 - p) / paths as f64).sqrt(),
            paths,
            horizon,
            seed,
        },
        histogram,
        killed,
        censored,
    })
}

/// Monte Carlo estimate of the mean lifetime from `x`, capped at `horizon`.
pub fn simulate_lifetime(
    source: SimSource<'_>,
    x: usize,
    paths: u64,
    horizon: usize,
    seed: u64,
) -> Result<LifetimeSimulation, KernelError> {
    assert!(paths >= 1 && horizon >= 1);
    let kernel = window(source, x, horizon)?;
    // Window-edge kills are not intrinsic; a skip-free window is wide enough
    // that they cannot happen before the horizon.
    let sampler = Sampler::new(&kernel);
    let (sum, sum_sq, censored) = (0..paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path);
            let mut state = x;
            for n in 1..=horizon {
                match sampler.step(state, &mut rng) {
                    None => return (n as u128, (n * n) as u128, 0u64),
                    Some(next) => state = next,
                }
            }
            (horizon as u128, (horizon * horizon) as u128, 1u64)
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let count = paths as f64;
    let mean = sum as f64 / count;
    let var = if paths > 1 {
        ((sum_sq as f64 - count * mean * mean) / (count - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(LifetimeSimulation {
        mean: MonteCarloEstimate {
            estimate: mean,
            std_error: (var / count).sqrt(),
            paths,
            horizon,
            seed,
        },
        censored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Boundary;

    #[test]
    fn whole_space_is_certain() {
        let k = SkipFreeSpec::birth_death(0.5, 0.5, 0.0, Boundary::Reflect)
            .unwrap()
            .truncate(5)
            .unwrap();
        let r = simulate_return(SimSource::Kernel(&k), 2, &StateSet::all(5), 1000, 10, 1).unwrap();
        assert_eq!(r.probability.estimate, 1.0);
        assert_eq!(r.probability.std_error, 0.0);
        assert_eq!(r.histogram[0], 1000);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SkipFreeSpec::birth_death(2.0 / 3.0, 1.0 / 3.0, 0.0, Boundary::Reflect).unwrap();
        let a = StateSet::singleton(0);
        let r1 = simulate_return(SimSource::SkipFree(&spec), 0, &a, 5000, 50, 7).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let r2 = pool.install(|| simulate_return(SimSource::SkipFree(&spec), 0, &a, 5000, 50, 7).unwrap());
        assert_eq!(r1, r2);
        let r3 = simulate_return(SimSource::SkipFree(&spec), 0, &a, 5000, 50, 8).unwrap();
        assert_ne!(r1.histogram, r3.histogram);
    }

    #[test]
    fn gamblers_ruin_estimate() {
        let spec = SkipFreeSpec::birth_death(2.0 / 3.0, 1.0 / 3.0, 0.0, Boundary::Reflect).unwrap();
        let r = simulate_return(SimSource::SkipFree(&spec), 0, &StateSet::singleton(0), 200_000, 200, 3).unwrap();
        let p = r.probability;
        assert!((p.estimate - 2.0 / 3.0).abs() <= 3.0 * p.std_error + 1e-3, "{p:?}");
        assert_eq!(r.killed, 0);
    }

    #[test]
    fn killed_walk_lifetime() {
        let spec = SkipFreeSpec::birth_death(1.0 / 3.0, 2.0 / 3.0, 0.0, Boundary::Kill).unwrap();
        let s = simulate_lifetime(SimSource::SkipFree(&spec), 0, 100_000, 400, 11).unwrap();
        assert!((s.mean.estimate - 3.0).abs() <= 4.0 * s.mean.std_error, "{:?}", s.mean);
        assert_eq!(s.censored, 0);
    }
}
