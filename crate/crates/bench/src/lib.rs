//! Benchmark inputs shared by the criterion targets.

use transience_core::kernel::{Boundary, SkipFreeSpec};
use transience_core::TruncatedKernel;

/// Birth-death chain with up-probability `p` and a reflecting origin.
pub fn birth_death(p: f64) -> SkipFreeSpec {
    SkipFreeSpec::birth_death(p, 1.0 - p, 0.0, Boundary::Reflect).expect("valid probabilities")
}

/// `n`-state truncation of [`birth_death`].
pub fn birth_death_kernel(p: f64, n: usize) -> TruncatedKernel {
    birth_death(p).truncate(n).expect("n at least 1")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_stochastic() {
        let k = birth_death_kernel(2.0 / 3.0, 10);
        assert_eq!(k.size(), 10);
        assert!((0..9).all(|x| (k.row_sum(x) - 1.0).abs() < 1e-12));
    }
}
