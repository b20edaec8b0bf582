//! Exact brute-force nearest neighbors with deterministic tie-breaking.

use std::cmp::Ordering;

use rayon::prelude::*;

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Orders candidates by distance, then by id.
#[inline]
fn by_dist_then_id(a: &(f64, u64, usize), b: &(f64, u64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` nearest rows to row `i` (excluding `i`), as `(row, squared distance)`
/// pairs sorted by distance. Ties go to the smaller id.
pub fn k_nearest(points: &[f64], dim: usize, ids: &[u64], i: usize, k: usize) -> Vec<(usize, f64)> {
    let n = ids.len();
    let center = &points[i * dim..(i + 1) * dim];
    let mut cand: Vec<(f64, u64, usize)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| (sq_dist(center, &points[j * dim..(j + 1) * dim]), ids[j], j))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_dist_then_id);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_dist_then_id);
    cand.into_iter().map(|(d, _, j)| (j, d)).collect()
}

/// `k_nearest` for every row, computed in parallel; output order is row order.
pub fn knn_all(points: &[f64], dim: usize, ids: &[u64], k: usize) -> Vec<Vec<(usize, f64)>> {
    (0..ids.len())
        .into_par_iter()
        .map(|i| k_nearest(points, dim, ids, i, k))
        .collect()
}

/// Nearest `k` rows of `reference` to an external `query` point.
pub fn k_nearest_to(query: &[f64], reference: &[f64], dim: usize, ids: &[u64], k: usize) -> Vec<(usize, f64)> {
    let mut cand: Vec<(f64, u64, usize)> = (0..ids.len())
        .map(|j| (sq_dist(query, &reference[j * dim..(j + 1) * dim]), ids[j], j))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_dist_then_id);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_dist_then_id);
    cand.into_iter().map(|(d, _, j)| (j, d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_smaller_id() {
        let points = [0.0, 1.0, 2.0, 3.0];
        let ids = [0, 1, 2, 3];
        assert_eq!(k_nearest(&points, 1, &ids, 1, 1), vec![(0, 1.0)]);
        // Same geometry, ids reversed: now row 2 carries the smaller id.
        let ids = [9, 8, 5, 4];
        assert_eq!(k_nearest(&points, 1, &ids, 1, 1), vec![(2, 1.0)]);
    }

    #[test]
    fn full_neighborhood_is_everyone_else() {
        let points = [0.0, 5.0, 1.0, 9.0, 3.0];
        let ids = [0, 1, 2, 3, 4];
        let nn = k_nearest(&points, 1, &ids, 0, 4);
        let rows: Vec<usize> = nn.iter().map(|p| p.0).collect();
        assert_eq!(rows, vec![2, 4, 1, 3]);
    }
}
