#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transience_core::{ChainSpec, StateSet, TruncatedKernel};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Every chain in the shared fixture directory, sorted by name.
pub fn corpus() -> Vec<(String, ChainSpec)> {
    let mut out: Vec<(String, ChainSpec)> = std::fs::read_dir(fixtures_dir())
        .expect("fixture directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let spec = ChainSpec::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, spec)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense rows with `n` states, roughly half the entries nonzero and row sums
/// drawn from `[0.3, 1]`; about a third of the rows are stochastic.
pub fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.5) { rng.gen::<f64>() } else { 0.0 })
                .collect();
            let j = rng.gen_range(0..n);
            row[j] += 0.1;
            let total: f64 = row.iter().sum();
            let mass = if rng.gen_bool(1.0 / 3.0) {
                1.0
            } else {
                rng.gen_range(0.3..1.0)
            };
            row.iter_mut().for_each(|v| *v *= mass / total);
            row
        })
        .collect()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, max_n: usize) -> TruncatedKernel {
    let n = rng.gen_range(2..=max_n);
    TruncatedKernel::from_rows(&random_rows(rng, n)).unwrap()
}

/// A nonempty random subset of `0..n`.
pub fn random_set(rng: &mut ChaCha8Rng, n: usize) -> StateSet {
    let k = rng.gen_range(1..=n.div_ceil(3));
    let mut states: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        states.swap(i, j);
    }
    StateSet::new(states[..k].to_vec()).unwrap()
}
