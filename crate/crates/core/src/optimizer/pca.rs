//! Principal-component initialization.
//!
//! Small inputs (`d ≤ 1000`) use deflated power iteration on the `d × d`
//! covariance. Wider inputs use a seeded randomized range finder and solve the
//! small projected problem the same way.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::embedding::Embedding;

use super::OptimizerError;

/// First-axis standard deviation of a t-SNE initialization.
pub const INIT_STD: f64 = 1e-4;

const POWER_MAX_DIM: usize = 1000;
const POWER_MAX_ITER: usize = 20_000;
const RANGE_OVERSAMPLE: usize = 10;
const RANGE_POWER_STEPS: usize = 10;
const PCA_SEED: u64 = 0x0005_eed0_f9ca;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PcaMethod {
    Power,
    RandomizedRange,
}

/// Projection onto the leading principal components, before any rescale.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// `n × k` projected coordinates.
    pub coords: Vec<f64>,
    /// Unit-norm principal axes, one per output dimension.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues (variance along each axis, `n - 1` denominator).
    pub eigenvalues: Vec<f64>,
    /// Fewer than `k` non-zero eigenvalues; missing axes are zero.
    pub rank_deficient: bool,
}

/// Projects `dataset` onto its top `k` principal components.
pub fn pca_project(dataset: &Dataset, k: usize) -> Result<PcaProjection, OptimizerError> {
    let method = if dataset.dim() <= POWER_MAX_DIM {
        PcaMethod::Power
    } else {
        PcaMethod::RandomizedRange
    };
    pca_project_with(dataset, k, method)
}

pub(crate) fn pca_project_with(dataset: &Dataset, k: usize, method: PcaMethod) -> Result<PcaProjection, OptimizerError> {
    let (n, d) = (dataset.len(), dataset.dim());
    if k == 0 || k > d {
        return Err(OptimizerError::InvalidConfig(format!(
            "cannot project {d}-dimensional data onto {k} components"
        )));
    }
    let centered = centered(dataset);
    let (components, eigenvalues) = match method {
        PcaMethod::Power => {
            let cov = covariance(&centered, n, d);
            top_eigenpairs(&cov, d, k)
        }
        PcaMethod::RandomizedRange => randomized_eigenpairs(&centered, n, d, k),
    };

    let scale = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let mut rank_deficient = false;
    let components: Vec<Vec<f64>> = components
        .into_iter()
        .zip(&eigenvalues)
        .map(|(mut axis, &lambda)| {
            if !(lambda > 1e-12 * scale && lambda > 0.0) {
                rank_deficient = true;
                axis.iter_mut().for_each(|v| *v = 0.0);
            } else {
                orient(&mut axis);
            }
            axis
        })
        .collect();
    let eigenvalues: Vec<f64> = eigenvalues
        .iter()
        .zip(&components)
        .map(|(&l, axis)| if axis.iter().all(|&v| v == 0.0) { 0.0 } else { l })
        .collect();

    let coords: Vec<f64> = centered
        .par_chunks_exact(d)
        .flat_map_iter(|row| components.iter().map(move |axis| dot(row, axis)))
        .collect();
    Ok(PcaProjection {
        coords,
        components,
        eigenvalues,
        rank_deficient,
    })
}

/// PCA embedding rescaled so the first axis has standard deviation 1e-4.
/// Returns the embedding and whether the data was rank deficient.
pub fn pca_init(dataset: &Dataset, k: usize) -> Result<(Embedding, bool), OptimizerError> {
    let projection = pca_project(dataset, k)?;
    let mut embedding = Embedding::new(projection.coords, k, dataset.ids().to_vec())?;
    embedding.rescale_first_axis_std(INIT_STD);
    Ok((embedding, projection.rank_deficient))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Flips the axis so that its largest-magnitude loading is positive.
fn orient(axis: &mut [f64]) {
    let mut best = 0;
    for (i, v) in axis.iter().enumerate() {
        if v.abs() > axis[best].abs() {
            best = i;
        }
    }
    if axis[best] < 0.0 {
        axis.iter_mut().for_each(|v| *v = -*v);
    }
}

fn centered(dataset: &Dataset) -> Vec<f64> {
    let d = dataset.dim();
    let n = dataset.len() as f64;
    let mut mean = vec![0.0; d];
    for row in dataset.points().chunks_exact(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    dataset
        .points()
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
        .collect()
}

fn covariance(centered: &[f64], n: usize, d: usize) -> Vec<f64> {
    let denom = (n - 1) as f64;
    let upper: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|a| {
            (a..d)
                .map(|b| {
                    centered
                        .chunks_exact(d)
                        .map(|row| row[a] * row[b])
                        .sum::<f64>()
                        / denom
                })
                .collect()
        })
        .collect();
    let mut cov = vec![0.0; d * d];
    for (a, row) in upper.iter().enumerate() {
        for (offset, &v) in row.iter().enumerate() {
            let b = a + offset;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    cov
}

fn mat_vec(m: &[f64], dim: usize, v: &[f64]) -> Vec<f64> {
    m.chunks_exact(dim).map(|row| dot(row, v)).collect()
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let proj = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
    }
}

/// Leading `k` eigenpairs of a symmetric positive semi-definite matrix by
/// power iteration, re-orthogonalizing against found axes each step.
fn top_eigenpairs(m: &[f64], dim: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(PCA_SEED);
    let trace: f64 = (0..dim).map(|i| m[i * dim + i]).sum();
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        orthogonalize(&mut v, &axes);
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITER {
            let mut next = mat_vec(m, dim, &v);
            orthogonalize(&mut next, &axes);
            let norm = normalize(&mut next);
            if norm <= 1e-300 || norm <= 1e-14 * trace {
                lambda = 0.0;
                v = next;
                break;
            }
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v = next;
            lambda = norm;
            if delta < 1e-13 {
                break;
            }
        }
        if lambda > 0.0 {
            // Rayleigh quotient is second-order accurate in the axis error.
            lambda = dot(&v, &mat_vec(m, dim, &v));
        }
        axes.push(v);
        values.push(lambda);
    }
    (axes, values)
}

/// Randomized range finder for wide data: sketches the covariance range,
/// then solves the projected `l × l` problem by power iteration.
fn randomized_eigenpairs(centered: &[f64], n: usize, d: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let l = (k + RANGE_OVERSAMPLE).min(d);
    let denom = (n - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(PCA_SEED);
    let mut basis: Vec<Vec<f64>> = (0..l)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    // C·v = Xᵀ(X·v) / (n-1), never forming C.
    let cov_apply = |v: &[f64]| -> Vec<f64> {
        let xv: Vec<f64> = centered.chunks_exact(d).map(|row| dot(row, v)).collect();
        let mut out = vec![0.0; d];
        for (row, &s) in centered.chunks_exact(d).zip(&xv) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += s * x);
        }
        out.iter_mut().for_each(|o| *o /= denom);
        out
    };
    for _ in 0..=RANGE_POWER_STEPS {
        let applied: Vec<Vec<f64>> = basis.par_iter().map(|v| cov_apply(v)).collect();
        basis = gram_schmidt(applied);
    }
    let cq: Vec<Vec<f64>> = basis.par_iter().map(|q| cov_apply(q)).collect();
    let l = basis.len();
    let mut small = vec![0.0; l * l];
    for a in 0..l {
        for b in 0..l {
            small[a * l + b] = dot(&basis[a], &cq[b]);
        }
    }
    // Symmetrize away rounding.
    for a in 0..l {
        for b in a + 1..l {
            let s = 0.5 * (small[a * l + b] + small[b * l + a]);
            small[a * l + b] = s;
            small[b * l + a] = s;
        }
    }
    let (small_axes, values) = top_eigenpairs(&small, l, k.min(l));
    let axes = small_axes
        .iter()
        .map(|u| {
            let mut axis = vec![0.0; d];
            for (q, &w) in basis.iter().zip(u) {
                axis.iter_mut().zip(q).for_each(|(a, x)| *a += w * x);
            }
            normalize(&mut axis);
            axis
        })
        .collect();
    (axes, values)
}

fn gram_schmidt(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        orthogonalize(&mut v, &out);
        orthogonalize(&mut v, &out);
        if normalize(&mut v) > 1e-300 {
            out.push(v);
        }
    }
    out
}
