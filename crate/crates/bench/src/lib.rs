//! Shared inputs for the criterion benches.

use dispsharp::toy::random_multimodal;
use dispsharp::{generate_stereogram, CostVolume, SceneSpec, StereoPair};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A `height x width` volume of random multimodal cost vectors.
pub fn random_volume(height: usize, width: usize, d_max: usize, seed: u64) -> CostVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs: Vec<f64> = (0..height * width)
        .flat_map(|_| random_multimodal(&mut rng, d_max + 1, 3))
        .collect();
    CostVolume::new(height, width, d_max, costs).expect("finite costs")
}

/// The noisy 128x96 benchmark pair.
pub fn benchmark_pair(noise_sigma: f64) -> StereoPair {
    generate_stereogram(&SceneSpec::benchmark(noise_sigma, 7))
        .expect("valid scene")
        .pair
}
