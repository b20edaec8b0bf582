//! KL cost and its exact gradient.
//!
//! With `wᵢⱼ = (1 + ‖yᵢ-yⱼ‖²)⁻¹` and `Z = Σ_{k≠l} w_kl`, the low-dimensional
//! affinities are `qᵢⱼ = wᵢⱼ / Z` and
//!
//! ```text
//! ∂C/∂yᵢ = 4 Σⱼ (pᵢⱼ - qᵢⱼ) wᵢⱼ (yᵢ - yⱼ)
//!        = 4 [ Σⱼ pᵢⱼ wᵢⱼ (yᵢ - yⱼ)  -  Σⱼ wᵢⱼ² (yᵢ - yⱼ) / Z ]
//! ```
//!
//! The first sum runs over the stored entries of `P` only.

use rayon::prelude::*;

use crate::affinity::Affinities;
use crate::embedding::Embedding;

use super::OptimizerError;

/// Gradient plus the by-products needed for a cheap cost estimate.
pub(crate) struct ForceEval {
    pub grad: Vec<f64>,
    /// `Σ_{k≠l} w_kl` (approximate under Barnes-Hut).
    pub z: f64,
    /// `Σ pᵢⱼ ln wᵢⱼ` over the support of the unexaggerated `P`.
    pub p_log_w: f64,
}

impl ForceEval {
    /// KL divergence from `Σ p ln p`, avoiding another pass over the pairs.
    pub fn cost(&self, p_log_p: f64) -> f64 {
        p_log_p - self.p_log_w + self.z.ln()
    }
}

pub(crate) fn check_ids(affinities: &Affinities, embedding: &Embedding) -> Result<(), OptimizerError> {
    if affinities.ids() != embedding.ids() {
        return Err(OptimizerError::IdMismatch);
    }
    Ok(())
}

/// `Σ pᵢⱼ ln pᵢⱼ` over stored entries.
pub(crate) fn p_log_p(affinities: &Affinities) -> f64 {
    (0..affinities.len())
        .into_par_iter()
        .map(|i| affinities.row(i).map(|(_, p)| p * p.ln()).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Attractive force of each point (row-major, `dim` wide, before the factor
/// 4) and its share of `Σ p ln w`.
pub(crate) fn attractive(affinities: &Affinities, coords: &[f64], dim: usize, exaggeration: f64) -> (Vec<f64>, f64) {
    let rows: Vec<(Vec<f64>, f64)> = (0..affinities.len())
        .into_par_iter()
        .map(|i| {
            let yi = &coords[i * dim..(i + 1) * dim];
            let mut force = vec![0.0; dim];
            let mut p_log_w = 0.0;
            for (j, p) in affinities.row(i) {
                let yj = &coords[j * dim..(j + 1) * dim];
                let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                let w = 1.0 / (1.0 + d2);
                p_log_w += p * w.ln();
                let scale = exaggeration * p * w;
                force.iter_mut().zip(yi.iter().zip(yj)).for_each(|(f, (a, b))| *f += scale * (a - b));
            }
            (force, p_log_w)
        })
        .collect();
    let mut forces = Vec::with_capacity(coords.len());
    let mut p_log_w = 0.0;
    for (force, plw) in rows {
        forces.extend(force);
        p_log_w += plw;
    }
    (forces, p_log_w)
}

/// Exact repulsion by all pairs: per-point `Σⱼ wᵢⱼ²(yᵢ-yⱼ)` and `Z`.
pub(crate) fn exact_repulsion(coords: &[f64], dim: usize) -> (Vec<f64>, f64) {
    let n = coords.len() / dim;
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = &coords[i * dim..(i + 1) * dim];
            let mut force = vec![0.0; dim];
            let mut z = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let yj = &coords[j * dim..(j + 1) * dim];
                let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                let w = 1.0 / (1.0 + d2);
                z += w;
                let w2 = w * w;
                force.iter_mut().zip(yi.iter().zip(yj)).for_each(|(f, (a, b))| *f += w2 * (a - b));
            }
            (force, z)
        })
        .collect();
    let mut forces = Vec::with_capacity(coords.len());
    let mut z = 0.0;
    for (force, zi) in rows {
        forces.extend(force);
        z += zi;
    }
    (forces, z)
}

pub(crate) fn combine(attr: Vec<f64>, rep: &[f64], z: f64) -> Vec<f64> {
    attr.into_iter().zip(rep).map(|(a, r)| 4.0 * (a - r / z)).collect()
}

pub(crate) fn exact_forces(affinities: &Affinities, coords: &[f64], dim: usize, exaggeration: f64) -> ForceEval {
    let (attr, p_log_w) = attractive(affinities, coords, dim, exaggeration);
    let (rep, z) = exact_repulsion(coords, dim);
    ForceEval {
        grad: combine(attr, &rep, z),
        z,
        p_log_w,
    }
}

/// `KL(P‖Q)` over the entries with `p > 0`.
pub fn kl_cost(affinities: &Affinities, embedding: &Embedding) -> Result<f64, OptimizerError> {
    check_ids(affinities, embedding)?;
    let dim = embedding.dim();
    let coords = embedding.coords();
    let n = embedding.len();
    let z: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = &coords[i * dim..(i + 1) * dim];
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let yj = &coords[j * dim..(j + 1) * dim];
                    let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                    1.0 / (1.0 + d2)
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = &coords[i * dim..(i + 1) * dim];
            affinities
                .row(i)
                .map(|(j, p)| {
                    let yj = &coords[j * dim..(j + 1) * dim];
                    let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                    let q = 1.0 / ((1.0 + d2) * z);
                    p * (p / q).ln()
                })
                .sum()
        })
        .collect();
    Ok(rows.iter().sum())
}

/// Exact gradient of [`kl_cost`] with respect to the coordinates (row-major).
pub fn exact_gradient(affinities: &Affinities, embedding: &Embedding) -> Result<Vec<f64>, OptimizerError> {
    check_ids(affinities, embedding)?;
    Ok(exact_forces(affinities, embedding.coords(), embedding.dim(), 1.0).grad)
}
