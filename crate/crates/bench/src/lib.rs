//! Fixtures shared by the benchmarks.

use cdtm_core::inference::fit;
use cdtm_core::synthetic::{generate, SyntheticSpec};
use cdtm_core::{Corpus, ModelParams, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus(num_docs: usize, vocab_size: usize, num_topics: usize) -> Corpus {
    generate(&SyntheticSpec {
        num_docs,
        vocab_size,
        num_topics,
        ..SyntheticSpec::default()
    })
    .expect("valid synthetic shape")
    .corpus
}

/// A model after a few EM iterations, close enough to converged for timing
/// inference against.
pub fn model(corpus: &Corpus, k: usize) -> ModelParams {
    let config = TrainConfig {
        em_max_iters: 5,
        ..TrainConfig::with_k(k)
    };
    fit(corpus, &config).expect("fit succeeds").model
}

/// Random `(gamma, zeta, phi column sums)` triples of length `k`.
pub fn gamma_states(count: usize, k: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let gamma = (0..k).map(|_| rng.random_range(0.1..50.0)).collect();
            let zeta = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let colsums = (0..k).map(|_| rng.random_range(0.0..80.0)).collect();
            (gamma, zeta, colsums)
        })
        .collect()
}
