//! Random-projection hashing of HOG descriptors into visual words.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::hog::BLOCK_LEN;

pub const LSH_PLANES: usize = 11;
pub const LSH_BINS: usize = 1 << LSH_PLANES;

pub type Plane = [f64; BLOCK_LEN];

/// `count` hyperplane normals with unit-Gaussian entries.
pub fn sample_planes(seed: u64, count: usize) -> Vec<Plane> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut p = [0.0; BLOCK_LEN];
            for v in p.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            p
        })
        .collect()
}

/// Bit k is set iff the descriptor lies on the nonnegative side of plane k.
pub fn lsh_hash(desc: &[f64; BLOCK_LEN], planes: &[Plane]) -> usize {
    let mut code = 0usize;
    for (k, plane) in planes.iter().enumerate() {
        let dot: f64 = desc.iter().zip(plane).map(|(a, b)| a * b).sum();
        if dot >= 0.0 {
            code |= 1 << k;
        }
    }
    code
}
