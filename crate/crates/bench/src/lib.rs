//! Shared fixtures for the benchmarks.

use xinggan_core::nets::{init_generator, GeneratorConfig, Variant};
use xinggan_core::train::TrainConfig;
use xinggan_core::{ParamStore, SeedRng, Tensor};

/// Source image, source pose and target pose of the desk size.
pub fn desk_inputs(seed: u64) -> [Tensor<f32>; 3] {
    let mut rng = SeedRng::new(seed);
    [
        rng.uniform_tensor(&[3, 64, 32], -1.0, 1.0),
        rng.uniform_tensor(&[18, 64, 32], 0.0, 1.0),
        rng.uniform_tensor(&[18, 64, 32], 0.0, 1.0),
    ]
}

/// Desk generator (T=3, N=4, c=64) with seeded weights.
pub fn desk_generator(seed: u64) -> (GeneratorConfig, ParamStore<f32>) {
    let cfg = TrainConfig::default().generator().expect("desk config is valid");
    let store = init_generator(&cfg, &mut SeedRng::new(seed)).expect("desk config is valid");
    (cfg, store)
}

/// Smaller full-variant generator for quick step timings.
pub fn small_config() -> TrainConfig {
    TrainConfig {
        variant: Variant::Full,
        blocks: 1,
        intermediates: 2,
        channels: 16,
        batch_size: 2,
        ..TrainConfig::default()
    }
}
