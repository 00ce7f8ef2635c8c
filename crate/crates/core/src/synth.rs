//! Synthetic data for experiments and tests.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Instance, Label, SparseVector};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Two isotropic Gaussian blobs centered at `+-separation * (1,..,1)/sqrt(d)`
/// with per-coordinate noise `noise`; labels are balanced coin flips.
pub fn gaussian_blobs(n: usize, dim: usize, separation: f64, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = separation / (dim as f64).sqrt();
    let instances = (0..n)
        .map(|_| {
            let label = if rng.random_bool(0.5) {
                Label::Pos
            } else {
                Label::Neg
            };
            let x: Vec<f64> = (0..dim)
                .map(|_| label.sign() * offset + noise * normal(&mut rng))
                .collect();
            Instance::dense(&x, label)
        })
        .collect();
    Dataset::with_dim(instances, dim)
}

/// Two classes sharing one rank-`rank` covariance.
///
/// Class `y` draws `x = offset + basis (z + y (separation / 2) a)` with
/// `z ~ N(0, I_rank)` and a fixed unit vector `a`, so the class means differ
/// by `separation` in Mahalanobis distance and the best linear AUC is
/// `Phi(separation / sqrt 2)`. Points outside the unit ball are rescaled
/// onto it.
#[derive(Clone, Debug)]
pub struct LowRankClasses {
    offset: Array1<f64>,
    basis: Array2<f64>,
    direction: Array1<f64>,
    separation: f64,
    pos_rate: f64,
}

impl LowRankClasses {
    /// A random offset of norm `offset_norm` and a random `dim x rank` basis
    /// whose columns have expected norm `spread`.
    pub fn new(
        dim: usize,
        rank: usize,
        separation: f64,
        spread: f64,
        offset_norm: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |rng: &mut ChaCha8Rng, n: usize| {
            let v = Array1::from_shape_fn(n, |_| normal(rng));
            let norm = v.dot(&v).sqrt();
            v / norm
        };
        let offset = unit(&mut rng, dim) * offset_norm;
        let scale = spread / (dim as f64).sqrt();
        let basis = Array2::from_shape_fn((dim, rank), |_| scale * normal(&mut rng));
        let direction = unit(&mut rng, rank);
        Self {
            offset,
            basis,
            direction,
            separation,
            pos_rate: 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = self.basis.ncols();
        let instances = (0..n)
            .map(|_| {
                let label = if rng.random_bool(self.pos_rate) {
                    Label::Pos
                } else {
                    Label::Neg
                };
                let mut z = Array1::from_shape_fn(rank, |_| normal(&mut rng));
                z.scaled_add(label.sign() * self.separation / 2.0, &self.direction);
                let mut x = &self.offset + &self.basis.dot(&z);
                let norm = x.dot(&x).sqrt();
                if norm > 1.0 {
                    x /= norm;
                }
                Instance::dense(x.as_slice().expect("contiguous"), label)
            })
            .collect();
        Dataset::with_dim(instances, self.dim())
    }
}

/// Sparse stream over `dim` features with `nnz` random coordinates per
/// instance and unit-norm rows. Positives lean on the lower half of the
/// feature range, negatives on the upper half.
pub fn sparse_stream(n: usize, dim: usize, nnz: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (dim / 2).max(1);
    (0..n)
        .map(|_| {
            let label = if rng.random_bool(0.5) {
                Label::Pos
            } else {
                Label::Neg
            };
            let mut idx: Vec<usize> = (0..nnz)
                .map(|k| {
                    let biased = k % 2 == 0;
                    match (label, biased) {
                        (Label::Pos, true) => rng.random_range(0..half),
                        (Label::Neg, true) => rng.random_range(half.min(dim - 1)..dim),
                        _ => rng.random_range(0..dim),
                    }
                })
                .collect();
            idx.sort_unstable();
            idx.dedup();
            let v = 1.0 / (idx.len() as f64).sqrt();
            let pairs = idx.into_iter().map(|j| (j, v)).collect();
            Instance::new(
                SparseVector::from_pairs(pairs).expect("sorted, deduped"),
                label,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_rank_classes_have_low_rank_covariance() {
        let gen = LowRankClasses::new(30, 3, 1.5, 0.2, 0.1, 4);
        let ds = gen.sample(400, 5);
        for label in [Label::Pos, Label::Neg] {
            let rows: Vec<Vec<f64>> = ds
                .instances()
                .iter()
                .filter(|x| x.label == label)
                .map(|x| x.features.to_dense(30).to_vec())
                .collect();
            let n = rows.len();
            let m = nalgebra::DMatrix::from_fn(n, 30, |i, j| rows[i][j]);
            let centered = &m - nalgebra::DMatrix::from_fn(n, 30, |_, j| m.column(j).mean());
            let sv = centered.singular_values();
            let big = sv.iter().filter(|&&s| s > 1e-9 * sv[0]).count();
            assert_eq!(big, 3, "{label}");
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gaussian_blobs(50, 3, 0.5, 0.1, 9);
        let b = gaussian_blobs(50, 3, 0.5, 0.1, 9);
        assert_eq!(a.instances(), b.instances());
        let gen = LowRankClasses::new(10, 2, 1.0, 0.3, 0.2, 1);
        assert_eq!(gen.sample(20, 3).instances(), gen.sample(20, 3).instances());
    }

    #[test]
    fn sparse_stream_rows_are_unit_norm() {
        for x in sparse_stream(100, 1000, 7, 2) {
            assert!(x.features.nnz() <= 7);
            assert!((x.features.norm_squared() - 1.0).abs() < 1e-12);
            assert!(x.features.min_dim() <= 1000);
        }
    }
}
