//! Seeded synthetic datasets: isotropic Gaussians and Gaussian mixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Dataset, DatasetError};

/// Mixture of equal-sized spherical Gaussian clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub n: usize,
    pub dim: usize,
    pub clusters: usize,
    pub cluster_std: f64,
    /// Centers are drawn uniformly from the ball of this radius.
    pub center_radius: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn new(n: usize, dim: usize, clusters: usize, seed: u64) -> Self {
        Self {
            n,
            dim,
            clusters,
            cluster_std: 1.0,
            center_radius: 10.0,
            seed,
        }
    }
}

fn normal_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Uniform point in the `dim`-ball of radius `r`: Gaussian direction, radius
/// `r·u^(1/dim)`.
fn ball_point<R: Rng>(rng: &mut R, dim: usize, r: f64) -> Vec<f64> {
    let mut v = normal_vec(rng, dim);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radius = r * rng.random::<f64>().powf(1.0 / dim as f64);
    v.iter_mut().for_each(|x| *x *= radius / norm);
    v
}

/// Labeled Gaussian mixture. Point `i` belongs to cluster `i mod clusters`,
/// so cluster sizes differ by at most one.
pub fn gaussian_mixture(spec: &MixtureSpec) -> Result<Dataset, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.clusters.max(1))
        .map(|_| ball_point(&mut rng, spec.dim, spec.center_radius))
        .collect();
    let mut points = Vec::with_capacity(spec.n * spec.dim);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % centers.len();
        for (z, m) in normal_vec(&mut rng, spec.dim).into_iter().zip(&centers[c]) {
            points.push(m + spec.cluster_std * z);
        }
        labels.push(c as i64);
    }
    let name = format!("mixture-{}x{}-k{}", spec.n, spec.dim, spec.clusters);
    Dataset::new(name, points, spec.dim, (0..spec.n as u64).collect(), Some(labels))
}

/// Standard normal cloud.
pub fn isotropic_gaussian(n: usize, dim: usize, seed: u64) -> Result<Dataset, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = normal_vec(&mut rng, n * dim);
    Dataset::from_rows(format!("gaussian-{n}x{dim}"), points, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_shape_and_labels() {
        let ds = gaussian_mixture(&MixtureSpec::new(101, 4, 5, 9)).unwrap();
        assert_eq!((ds.len(), ds.dim()), (101, 4));
        let labels = ds.labels().unwrap();
        let counts: Vec<usize> = (0..5).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
        assert_eq!(counts, vec![21, 20, 20, 20, 20]);
    }

    #[test]
    fn ball_points_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = ball_point(&mut rng, 10, 10.0);
            assert!(p.iter().map(|x| x * x).sum::<f64>() <= 100.0 + 1e-9);
        }
    }

    #[test]
    fn seeded() {
        let a = isotropic_gaussian(20, 3, 4).unwrap();
        let b = isotropic_gaussian(20, 3, 4).unwrap();
        assert_eq!(a.points(), b.points());
        assert_ne!(a.points(), isotropic_gaussian(20, 3, 5).unwrap().points());
    }
}
