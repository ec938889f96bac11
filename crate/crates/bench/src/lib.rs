//! Shared fixtures for the criterion benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tieforge_core::corpus::{generate_synthetic, SynthOutput, SynthSpec};
use tieforge_core::trainer::TrainConfig;
use tieforge_core::Tensor;

/// Benchmark-scale synthetic corpus.
pub fn desk_corpus(seed: u64, num_bags: usize) -> SynthOutput {
    generate_synthetic(&SynthSpec {
        num_bags,
        seed,
        ..SynthSpec::default()
    })
    .expect("benchmark spec is valid")
}

/// Benchmark-scale model dimensions.
pub fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        word_dim: 16,
        pos_dim: 4,
        feature_maps: 24,
        epochs: 1,
        seed,
        ..TrainConfig::default()
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape/length agree")
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
