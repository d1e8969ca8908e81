//! Seeded random streams shared by every stochastic component.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// A generator seeded from `seed`.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream for sub-task `index` of a run seeded with `seed`.
pub fn derive(seed: u64, index: u64) -> Rng {
    seeded(mix(seed, index))
}

/// SplitMix64-style mixing of two words.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Matrix with i.i.d. standard normal entries.
pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Matrix with orthonormal columns (`rows >= cols`), from QR of a Gaussian.
pub fn orthonormal_columns(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    assert!(rows >= cols, "orthonormal_columns needs rows >= cols");
    let g = gaussian_matrix(rng, rows, cols);
    let qr = g.qr();
    let mut q = qr.q();
    // Fix signs so the distribution is Haar.
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_streams_differ_and_repeat() {
        assert_ne!(mix(1, 0), mix(1, 1));
        assert_eq!(mix(7, 3), mix(7, 3));
        let a = gaussian_matrix(&mut derive(5, 2), 2, 2);
        let b = gaussian_matrix(&mut derive(5, 2), 2, 2);
        assert_eq!(a, b);
    }

    #[test]
    fn orthonormal_columns_are_orthonormal() {
        let q = orthonormal_columns(&mut seeded(3), 6, 4);
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::identity(4, 4)).norm() < 1e-12);
    }
}
