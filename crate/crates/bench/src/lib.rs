//! Deterministic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rot_core::PointCloud;

/// `n` uniform points in the unit box.
pub fn uniform_cloud(n: usize, dim: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::from_flat(dim, (0..n * dim).map(|_| rng.random::<f64>()).collect())
        .expect("non-empty cloud")
}
