//! Gaussian bandwidths from a target perplexity and the symmetrized joint
//! probability matrix `P`.
//!
//! Each point `i` gets a bandwidth `σᵢ` such that its conditional distribution
//!
//! ```text
//! p(j|i) = exp(-‖xᵢ-xⱼ‖² / 2σᵢ²) / Σₖ exp(-‖xᵢ-xₖ‖² / 2σᵢ²)
//! ```
//!
//! has perplexity `2^H(Pᵢ)` equal to the target. The joint matrix is
//! `pᵢⱼ = (p(j|i) + p(i|j)) / 2n`, which sums to one.
//!
//! Two modes are supported: `Dense` uses every other point as a neighbor,
//! `Sparse` restricts each conditional row to its `min(n-1, ⌊3·perplexity⌋)`
//! exact nearest neighbors before symmetrizing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::neighbors::{knn_all, sq_dist};

/// Default bisection tolerance, in perplexity units.
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Default cap on bisection iterations.
pub const DEFAULT_MAX_ITER: usize = 64;
/// Default memory ceiling for dense affinities (4 GiB).
pub const DEFAULT_DENSE_MAX_BYTES: u64 = 4 << 30;
/// Storage cost of one stored joint entry (f64 value + u32 column).
pub const BYTES_PER_ENTRY: u64 = 12;

const LOG2_SIGMA_MIN: f64 = -39.863_137_138_648_35; // log2(1e-12)
const LOG2_SIGMA_MAX: f64 = 39.863_137_138_648_35; // log2(1e12)
const BRACKET_EXPANSIONS: usize = 6;
const BRACKET_STEP: f64 = 40.0;

#[derive(Debug, Error, PartialEq)]
pub enum AffinityError {
    #[error("probabilities contain a negative entry at {0}")]
    NegativeProbability(usize),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("target perplexity {0} must exceed 1")]
    TargetTooSmall(f64),
    #[error("distance row has no neighbors")]
    EmptyRow,
    #[error("distance row has a negative or non-finite entry at {0}")]
    BadDistance(usize),
    #[error("perplexity {perplexity} outside (1, {n}) for {n} points")]
    PerplexityOutOfRange { perplexity: f64, n: usize },
    #[error("dense affinities need {required} bytes, above the {limit}-byte limit")]
    MemoryBudget { required: u64, limit: u64 },
    #[error("point {id} coincides with all of its neighbors {neighbors:?}")]
    AllDuplicates { id: u64, neighbors: Vec<u64> },
    #[error("neighbor count {k} outside [1, {max}]")]
    NeighborCount { k: usize, max: usize },
    #[error("invalid joint matrix: {0}")]
    InvalidJoint(String),
}

/// Squared distances from one point to a set of neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    pub center_id: u64,
    pub neighbor_ids: Vec<u64>,
    pub sq_dists: Vec<f64>,
}

impl DistanceRow {
    /// Neighborhood radius: the largest neighbor distance.
    pub fn radius(&self) -> f64 {
        self.sq_dists.iter().copied().fold(0.0, f64::max).sqrt()
    }
}

/// Perplexity `2^H` of a discrete distribution, entropy in bits.
pub fn row_perplexity(probabilities: &[f64]) -> Result<f64, AffinityError> {
    if let Some(pos) = probabilities.iter().position(|&p| !(p >= 0.0)) {
        return Err(AffinityError::NegativeProbability(pos));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(AffinityError::NotNormalized(total));
    }
    let entropy: f64 = probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    Ok(entropy.exp2())
}

/// Why a bandwidth search stopped without hitting its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthFlag {
    /// Target above the largest reachable perplexity; σ pinned to the upper bound.
    ClampedHigh,
    /// Target below the smallest reachable perplexity; σ pinned to the lower bound.
    ClampedLow,
    /// Every neighbor is equidistant, so perplexity does not depend on σ.
    DegenerateRow,
    /// Bisection ran out of iterations.
    Unconverged,
}

/// Result of a bandwidth search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub sigma: f64,
    /// Perplexity of the conditional row at `sigma`.
    pub achieved: f64,
    /// Bisection iterations used.
    pub iterations: usize,
    pub flag: Option<BandwidthFlag>,
}

impl Bandwidth {
    pub fn is_clamped(&self) -> bool {
        matches!(
            self.flag,
            Some(BandwidthFlag::ClampedHigh | BandwidthFlag::ClampedLow)
        )
    }
}

/// Perplexity of the Gaussian row at bandwidth `2^log2_sigma`.
/// `shifted` holds `d - d_min`, which keeps the largest weight at exactly 1.
fn perplexity_at(shifted: &[f64], log2_sigma: f64) -> f64 {
    let beta = 0.5 * (-2.0 * log2_sigma).exp2();
    let mut z = 0.0;
    let mut weighted = 0.0;
    for &d in shifted {
        let w = (-beta * d).exp();
        z += w;
        weighted += w * d;
    }
    (z.ln() + beta * weighted / z).exp()
}

/// Solves `σ` for one row of squared distances by bisection on `log2 σ`.
pub fn solve_bandwidth(sq_dists: &[f64], target: f64, tol: f64, max_iter: usize) -> Result<Bandwidth, AffinityError> {
    if !(target > 1.0) {
        return Err(AffinityError::TargetTooSmall(target));
    }
    if sq_dists.is_empty() {
        return Err(AffinityError::EmptyRow);
    }
    if let Some(pos) = sq_dists.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(AffinityError::BadDistance(pos));
    }
    let d_min = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = sq_dists.iter().copied().fold(0.0, f64::max);
    let m = sq_dists.len() as f64;
    if d_max == d_min {
        return Ok(Bandwidth {
            sigma: 1.0,
            achieved: m,
            iterations: 0,
            flag: ((m - target).abs() > tol).then_some(BandwidthFlag::DegenerateRow),
        });
    }
    let shifted: Vec<f64> = sq_dists.iter().map(|d| d - d_min).collect();
    let done = |log2_sigma: f64, achieved: f64, iterations: usize, flag| Bandwidth {
        sigma: log2_sigma.exp2(),
        achieved,
        iterations,
        flag,
    };

    let mut hi = LOG2_SIGMA_MAX;
    let mut per_hi = perplexity_at(&shifted, hi);
    // Perplexity tends to m as σ grows; only widen when m is within reach.
    if target < m {
        for _ in 0..BRACKET_EXPANSIONS {
            if per_hi >= target - tol {
                break;
            }
            hi += BRACKET_STEP;
            per_hi = perplexity_at(&shifted, hi);
        }
    }
    if (per_hi - target).abs() <= tol {
        return Ok(done(hi, per_hi, 0, None));
    }
    if per_hi < target {
        return Ok(done(hi, per_hi, 0, Some(BandwidthFlag::ClampedHigh)));
    }

    let mut lo = LOG2_SIGMA_MIN;
    let mut per_lo = perplexity_at(&shifted, lo);
    for _ in 0..BRACKET_EXPANSIONS {
        if per_lo <= target + tol {
            break;
        }
        lo -= BRACKET_STEP;
        per_lo = perplexity_at(&shifted, lo);
    }
    if (per_lo - target).abs() <= tol {
        return Ok(done(lo, per_lo, 0, None));
    }
    if per_lo > target {
        return Ok(done(lo, per_lo, 0, Some(BandwidthFlag::ClampedLow)));
    }

    let mut mid = 0.5 * (lo + hi);
    let mut per_mid = per_lo;
    for iteration in 1..=max_iter {
        mid = 0.5 * (lo + hi);
        per_mid = perplexity_at(&shifted, mid);
        if (per_mid - target).abs() <= tol {
            return Ok(done(mid, per_mid, iteration, None));
        }
        if per_mid < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(done(mid, per_mid, max_iter, Some(BandwidthFlag::Unconverged)))
}

/// Bandwidth for a [`DistanceRow`].
pub fn find_bandwidth(row: &DistanceRow, target: f64, tol: f64, max_iter: usize) -> Result<Bandwidth, AffinityError> {
    solve_bandwidth(&row.sq_dists, target, tol, max_iter)
}

/// Conditional probabilities of a row at bandwidth `sigma`, evaluated with
/// the row minimum shifted out of the exponent.
pub fn conditional_probabilities(sq_dists: &[f64], sigma: f64) -> Vec<f64> {
    let d_min = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let beta = 1.0 / (2.0 * sigma * sigma);
    let mut p: Vec<f64> = sq_dists.iter().map(|d| (-(d - d_min) * beta).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// Exact `k`-nearest-neighbor rows. Ties are broken by smaller id.
pub fn knn_graph(dataset: &Dataset, k: usize) -> Result<Vec<DistanceRow>, AffinityError> {
    let n = dataset.len();
    if k == 0 || k >= n {
        return Err(AffinityError::NeighborCount { k, max: n - 1 });
    }
    let ids = dataset.ids();
    Ok(knn_all(dataset.points(), dataset.dim(), ids, k)
        .into_iter()
        .enumerate()
        .map(|(i, row)| DistanceRow {
            center_id: ids[i],
            neighbor_ids: row.iter().map(|&(j, _)| ids[j]).collect(),
            sq_dists: row.iter().map(|&(_, d)| d).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityMode {
    Dense,
    Sparse,
}

/// Neighbor count used by sparse mode: `min(n-1, ⌊3·perplexity⌋)`.
pub fn sparse_neighbor_count(n: usize, perplexity: f64) -> usize {
    ((3.0 * perplexity).floor() as usize).clamp(1, n - 1)
}

/// Symmetric joint probabilities in compressed-row form plus the per-point
/// bandwidths that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    mode: AffinityMode,
    ids: Vec<u64>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    bandwidths: Vec<Bandwidth>,
    target_perplexity: f64,
}

impl Affinities {
    /// Builds affinities from explicit `(i, j, p)` entries. Missing entries
    /// are zero; the result must be symmetric, non-negative, zero on the
    /// diagonal and sum to one.
    pub fn from_entries(ids: Vec<u64>, entries: &[(usize, usize, f64)]) -> Result<Self, AffinityError> {
        let n = ids.len();
        let mut sorted: Vec<(usize, usize, f64)> = entries.iter().copied().filter(|e| e.2 != 0.0).collect();
        for &(i, j, p) in &sorted {
            if i >= n || j >= n {
                return Err(AffinityError::InvalidJoint(format!("entry ({i}, {j}) out of bounds")));
            }
            if i == j {
                return Err(AffinityError::InvalidJoint(format!("diagonal entry at {i}")));
            }
            if !(p > 0.0 && p.is_finite()) {
                return Err(AffinityError::InvalidJoint(format!("entry ({i}, {j}) = {p}")));
            }
        }
        sorted.sort_by_key(|e| (e.0, e.1));
        if sorted.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(AffinityError::InvalidJoint("repeated entry".into()));
        }
        let affinities = Self::from_sorted(AffinityMode::Sparse, ids, &sorted, Vec::new(), f64::NAN);
        for &(i, j, p) in &sorted {
            if affinities.get(j, i) != p {
                return Err(AffinityError::InvalidJoint(format!("asymmetric at ({i}, {j})")));
            }
        }
        let total = affinities.total();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AffinityError::InvalidJoint(format!("entries sum to {total}")));
        }
        Ok(affinities)
    }

    fn from_sorted(
        mode: AffinityMode,
        ids: Vec<u64>,
        sorted: &[(usize, usize, f64)],
        bandwidths: Vec<Bandwidth>,
        target_perplexity: f64,
    ) -> Self {
        let n = ids.len();
        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in sorted {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            mode,
            ids,
            row_ptr,
            cols: sorted.iter().map(|e| e.1 as u32).collect(),
            vals: sorted.iter().map(|e| e.2).collect(),
            bandwidths,
            target_perplexity,
        }
    }

    pub fn mode(&self) -> AffinityMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Stored (non-zero) entries.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn target_perplexity(&self) -> f64 {
        self.target_perplexity
    }

    /// Per-point bandwidth search results; empty for hand-built matrices.
    pub fn bandwidths(&self) -> &[Bandwidth] {
        &self.bandwidths
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.bandwidths.iter().map(|b| b.sigma).collect()
    }

    /// `(column, p)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&j, &p)| (j as usize, p))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&(j as u32)) {
            Ok(pos) => self.vals[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.vals.iter().sum()
    }

    /// All stored entries as `(i, j, p)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len()).flat_map(move |i| self.row(i).map(move |(j, p)| (i, j, p)))
    }
}

/// Bandwidths for every point against all other points, one dense row at a
/// time. Rows are solved in parallel; each row's arithmetic is sequential.
pub fn dense_bandwidths(dataset: &Dataset, perplexity: f64) -> Result<Vec<Bandwidth>, AffinityError> {
    check_perplexity(dataset.len(), perplexity)?;
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let row = dense_row(dataset, i);
            check_duplicates(dataset, i, &row, None)?;
            solve_bandwidth(&row, perplexity, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)
        })
        .collect()
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<(), AffinityError> {
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(AffinityError::PerplexityOutOfRange { perplexity, n });
    }
    Ok(())
}

/// Squared distances from row `i` to every other row, in row order.
fn dense_row(dataset: &Dataset, i: usize) -> Vec<f64> {
    let center = dataset.row(i);
    (0..dataset.len())
        .filter(|&j| j != i)
        .map(|j| sq_dist(center, dataset.row(j)))
        .collect()
}

fn check_duplicates(dataset: &Dataset, i: usize, row: &[f64], neighbors: Option<&[usize]>) -> Result<(), AffinityError> {
    if row.iter().all(|&d| d == 0.0) {
        let ids = dataset.ids();
        let neighbors = match neighbors {
            Some(rows) => rows.iter().map(|&j| ids[j]).collect(),
            None => (0..dataset.len()).filter(|&j| j != i).map(|j| ids[j]).collect(),
        };
        return Err(AffinityError::AllDuplicates { id: ids[i], neighbors });
    }
    Ok(())
}

/// Builds `P` with the default dense memory ceiling.
pub fn build_affinities(dataset: &Dataset, perplexity: f64, mode: AffinityMode) -> Result<Affinities, AffinityError> {
    build_affinities_with_limit(dataset, perplexity, mode, DEFAULT_DENSE_MAX_BYTES)
}

pub fn build_affinities_with_limit(
    dataset: &Dataset,
    perplexity: f64,
    mode: AffinityMode,
    dense_max_bytes: u64,
) -> Result<Affinities, AffinityError> {
    let n = dataset.len();
    check_perplexity(n, perplexity)?;
    match mode {
        AffinityMode::Dense => {
            let required = BYTES_PER_ENTRY * (n as u64) * (n as u64 - 1);
            if required > dense_max_bytes {
                return Err(AffinityError::MemoryBudget {
                    required,
                    limit: dense_max_bytes,
                });
            }
            build_dense(dataset, perplexity)
        }
        AffinityMode::Sparse => build_sparse(dataset, perplexity),
    }
}

fn build_dense(dataset: &Dataset, perplexity: f64) -> Result<Affinities, AffinityError> {
    let n = dataset.len();
    let rows: Vec<(Vec<f64>, Bandwidth)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = dense_row(dataset, i);
            check_duplicates(dataset, i, &row, None)?;
            let bw = solve_bandwidth(&row, perplexity, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
            Ok((conditional_probabilities(&row, bw.sigma), bw))
        })
        .collect::<Result<_, AffinityError>>()?;
    // Row i of the conditional matrix skips column i.
    let cond = |i: usize, j: usize| rows[i].0[if j < i { j } else { j - 1 }];
    let scale = 1.0 / (2.0 * n as f64);
    let vals: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (cond(i, j) + cond(j, i)) * scale)
                .collect()
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n * (n - 1));
    let mut flat = Vec::with_capacity(n * (n - 1));
    row_ptr.push(0);
    for (i, row) in vals.into_iter().enumerate() {
        for (j, p) in (0..n).filter(|&j| j != i).zip(row) {
            if p > 0.0 {
                cols.push(j as u32);
                flat.push(p);
            }
        }
        row_ptr.push(cols.len());
    }
    Ok(Affinities {
        mode: AffinityMode::Dense,
        ids: dataset.ids().to_vec(),
        row_ptr,
        cols,
        vals: flat,
        bandwidths: rows.into_iter().map(|r| r.1).collect(),
        target_perplexity: perplexity,
    })
}

fn build_sparse(dataset: &Dataset, perplexity: f64) -> Result<Affinities, AffinityError> {
    let n = dataset.len();
    let k = sparse_neighbor_count(n, perplexity);
    let knn = knn_all(dataset.points(), dataset.dim(), dataset.ids(), k);
    let rows: Vec<(Vec<f64>, Bandwidth)> = knn
        .par_iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let dists: Vec<f64> = nbrs.iter().map(|&(_, d)| d).collect();
            let rows: Vec<usize> = nbrs.iter().map(|&(j, _)| j).collect();
            check_duplicates(dataset, i, &dists, Some(&rows))?;
            let bw = solve_bandwidth(&dists, perplexity, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
            Ok((conditional_probabilities(&dists, bw.sigma), bw))
        })
        .collect::<Result<_, AffinityError>>()?;

    let scale = 1.0 / (2.0 * n as f64);
    let mut triplets = Vec::with_capacity(2 * n * k);
    for (i, (nbrs, (cond, _))) in knn.iter().zip(&rows).enumerate() {
        for (&(j, _), &p) in nbrs.iter().zip(cond) {
            triplets.push((i, j, p));
            triplets.push((j, i, p));
        }
    }
    triplets.sort_unstable_by_key(|e| (e.0, e.1));
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
    for (i, j, p) in triplets {
        match merged.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += p,
            _ => merged.push((i, j, p)),
        }
    }
    merged.retain(|e| e.2 > 0.0);
    merged.iter_mut().for_each(|e| e.2 *= scale);
    Ok(Affinities::from_sorted(
        AffinityMode::Sparse,
        dataset.ids().to_vec(),
        &merged,
        rows.into_iter().map(|r| r.1).collect(),
        perplexity,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn perplexity_of_simple_rows() {
        assert!(close(row_perplexity(&[0.25; 4]).unwrap(), 4.0, 1e-12));
        assert!(close(row_perplexity(&[1.0, 0.0, 0.0]).unwrap(), 1.0, 1e-12));
        // H = 0.5·1 + 2·0.25·2 = 1.5 bits.
        assert!(close(row_perplexity(&[0.5, 0.25, 0.25]).unwrap(), 2f64.powf(1.5), 1e-12));
    }

    #[test]
    fn perplexity_rejects_bad_rows() {
        assert_eq!(row_perplexity(&[0.5, -0.1, 0.6]), Err(AffinityError::NegativeProbability(1)));
        assert!(matches!(row_perplexity(&[0.5, 0.4]), Err(AffinityError::NotNormalized(_))));
    }

    #[test]
    fn equidistant_row_is_uniform_for_any_sigma() {
        let row = DistanceRow {
            center_id: 0,
            neighbor_ids: vec![1, 2, 3],
            sq_dists: vec![2.0; 3],
        };
        let bw = find_bandwidth(&row, 3.0, 1e-5, 64).unwrap();
        assert_eq!(bw.flag, None);
        assert_eq!(bw.achieved, 3.0);
        assert!(bw.iterations <= 1);
        let bw = find_bandwidth(&row, 2.0, 1e-5, 64).unwrap();
        assert_eq!(bw.flag, Some(BandwidthFlag::DegenerateRow));
    }

    #[test]
    fn two_neighbors_converge() {
        let dists = [1.0, 4.0];
        let bw = solve_bandwidth(&dists, 1.99, 1e-5, 64).unwrap();
        assert_eq!(bw.flag, None);
        let per = row_perplexity(&conditional_probabilities(&dists, bw.sigma)).unwrap();
        assert!(close(per, 1.99, 1e-5), "{per}");
    }

    #[test]
    fn two_neighbors_above_support_clamp_high() {
        let bw = solve_bandwidth(&[1.0, 4.0], 2.5, 1e-5, 64).unwrap();
        assert_eq!(bw.flag, Some(BandwidthFlag::ClampedHigh));
        assert!(close(bw.achieved, 2.0, 1e-6));
    }

    #[test]
    fn tied_minimum_clamps_low() {
        // As σ → 0 the two nearest neighbors share all mass: perplexity ≥ 2.
        let bw = solve_bandwidth(&[1.0, 1.0, 9.0], 1.5, 1e-5, 64).unwrap();
        assert_eq!(bw.flag, Some(BandwidthFlag::ClampedLow));
        assert!(close(bw.achieved, 2.0, 1e-6));
    }

    #[test]
    fn target_must_exceed_one() {
        assert_eq!(solve_bandwidth(&[1.0, 2.0], 1.0, 1e-5, 64), Err(AffinityError::TargetTooSmall(1.0)));
        assert_eq!(solve_bandwidth(&[], 2.0, 1e-5, 64), Err(AffinityError::EmptyRow));
    }

    #[test]
    fn perplexity_increases_with_sigma() {
        let shifted = [0.0, 0.3, 1.1, 2.0, 5.5, 9.0];
        let mut prev = 0.0;
        for step in 0..200 {
            let log2_sigma = -8.0 + 0.1 * step as f64;
            let per = perplexity_at(&shifted, log2_sigma);
            assert!(per >= prev - 1e-12, "not monotone at {log2_sigma}");
            prev = per;
        }
    }

    #[test]
    fn square_is_symmetric_under_its_symmetry_group() {
        let ds = Dataset::from_rows("sq", vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0], 2).unwrap();
        let aff = build_affinities(&ds, 2.0, AffinityMode::Dense).unwrap();
        assert!(close(aff.total(), 1.0, 1e-12));
        let edge = aff.get(0, 1);
        for (i, j) in [(1, 2), (2, 3), (3, 0), (1, 0)] {
            assert!(close(aff.get(i, j), edge, 1e-15));
        }
        assert!(close(aff.get(0, 2), aff.get(1, 3), 1e-15));
        assert!(aff.get(0, 2) < edge);
        assert_eq!(aff.get(2, 2), 0.0);
    }

    #[test]
    fn perplexity_range_is_checked() {
        let ds = Dataset::from_rows("t", vec![0.0, 1.0, 3.0], 1).unwrap();
        assert!(matches!(
            build_affinities(&ds, 3.0, AffinityMode::Dense),
            Err(AffinityError::PerplexityOutOfRange { .. })
        ));
        assert!(matches!(
            build_affinities(&ds, 1.0, AffinityMode::Sparse),
            Err(AffinityError::PerplexityOutOfRange { .. })
        ));
    }

    #[test]
    fn all_duplicate_row_names_ids() {
        let ds = Dataset::from_rows("dup", vec![1.0, 1.0, 1.0, 1.0, 5.0], 1).unwrap();
        // Sparse with k = 3: point 0's three neighbors are all at distance 0.
        let err = build_affinities(&ds, 1.1, AffinityMode::Sparse).unwrap_err();
        assert!(matches!(err, AffinityError::AllDuplicates { id: 0, .. }), "{err:?}");
        // Dense sees point 3, so duplicates alone are fine.
        build_affinities(&ds, 1.5, AffinityMode::Dense).unwrap();
    }

    #[test]
    fn dense_budget_is_enforced() {
        let ds = Dataset::from_rows("t", (0..20).map(f64::from).collect(), 1).unwrap();
        let err = build_affinities_with_limit(&ds, 3.0, AffinityMode::Dense, 100).unwrap_err();
        assert!(matches!(err, AffinityError::MemoryBudget { .. }));
    }

    #[test]
    fn sparse_neighbor_count_floors_and_caps() {
        assert_eq!(sparse_neighbor_count(1000, 10.0), 30);
        assert_eq!(sparse_neighbor_count(1000, 2.5), 7);
        assert_eq!(sparse_neighbor_count(20, 10.0), 19);
    }

    #[test]
    fn knn_graph_contract() {
        let ds = Dataset::from_rows("line", vec![0.0, 1.0, 2.0, 3.0], 1).unwrap();
        let rows = knn_graph(&ds, 1).unwrap();
        assert_eq!(rows[1].neighbor_ids, vec![0]);
        let full = knn_graph(&ds, 3).unwrap();
        assert_eq!(full[0].neighbor_ids, vec![1, 2, 3]);
        assert_eq!(full[0].sq_dists, vec![1.0, 4.0, 9.0]);
        assert_eq!(full[0].radius(), 3.0);
        assert!(knn_graph(&ds, 0).is_err());
        assert!(knn_graph(&ds, 4).is_err());
    }

    #[test]
    fn from_entries_validates() {
        let ids = vec![0, 1, 2];
        assert!(Affinities::from_entries(ids.clone(), &[(0, 1, 0.5), (1, 0, 0.5)]).is_ok());
        assert!(Affinities::from_entries(ids.clone(), &[(0, 1, 0.6), (1, 0, 0.4)]).is_err());
        assert!(Affinities::from_entries(ids.clone(), &[(0, 0, 1.0)]).is_err());
        assert!(Affinities::from_entries(ids, &[(0, 1, 0.25), (1, 0, 0.25)]).is_err());
    }
}
