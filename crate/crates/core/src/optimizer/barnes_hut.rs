//! Barnes-Hut approximation of the repulsive forces in two dimensions.
//!
//! A cell is summarized by its center of mass when
//! `side / ‖yᵢ - center‖ < θ` and it does not contain `yᵢ`; otherwise it is
//! opened. Leaves are evaluated point by point, so `θ = 0` is exact.

use rayon::prelude::*;

use crate::affinity::Affinities;
use crate::embedding::Embedding;

use super::gradient::{attractive, check_ids, combine, ForceEval};
use super::OptimizerError;

const MAX_DEPTH: usize = 48;
const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Cell {
    center: [f64; 2],
    half: f64,
    mass_center: [f64; 2],
    count: usize,
    /// Range into `QuadTree::order` of the points in this cell.
    start: usize,
    end: usize,
    children: [u32; 4],
}

impl Cell {
    fn is_leaf(&self) -> bool {
        self.children == [NO_CHILD; 4]
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.center[0]).abs() <= self.half && (p[1] - self.center[1]).abs() <= self.half
    }
}

/// Point-region quadtree over 2-D coordinates, stored as an arena.
#[derive(Debug, Clone)]
pub struct QuadTree {
    cells: Vec<Cell>,
    order: Vec<usize>,
}

impl QuadTree {
    /// Builds the tree over `coords` (row-major pairs).
    pub fn build(coords: &[f64]) -> Self {
        let n = coords.len() / 2;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in coords.chunks_exact(2) {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let half = 0.5 * extent * (1.0 + 1e-9) + f64::MIN_POSITIVE;
        let mut tree = Self {
            cells: Vec::with_capacity(2 * n.max(1)),
            order: (0..n).collect(),
        };
        tree.split(coords, center, half, 0, n, 0);
        tree
    }

    fn split(&mut self, coords: &[f64], center: [f64; 2], half: f64, start: usize, end: usize, depth: usize) -> u32 {
        let id = self.cells.len() as u32;
        let count = end - start;
        let mut mass_center = [0.0; 2];
        for &i in &self.order[start..end] {
            mass_center[0] += coords[2 * i];
            mass_center[1] += coords[2 * i + 1];
        }
        if count > 0 {
            mass_center[0] /= count as f64;
            mass_center[1] /= count as f64;
        }
        self.cells.push(Cell {
            center,
            half,
            mass_center,
            count,
            start,
            end,
            children: [NO_CHILD; 4],
        });
        if count <= 1 || depth >= MAX_DEPTH {
            return id;
        }
        let first = self.order[start];
        let coincident = self.order[start..end]
            .iter()
            .all(|&i| coords[2 * i] == coords[2 * first] && coords[2 * i + 1] == coords[2 * first + 1]);
        if coincident {
            return id;
        }

        // Stable partition into quadrants: 0 = (-,-), 1 = (+,-), 2 = (-,+), 3 = (+,+).
        let quadrant = |i: usize| usize::from(coords[2 * i] >= center[0]) + 2 * usize::from(coords[2 * i + 1] >= center[1]);
        let mut buckets: [Vec<usize>; 4] = Default::default();
        for &i in &self.order[start..end] {
            buckets[quadrant(i)].push(i);
        }
        let mut offset = start;
        let mut spans = [(0, 0); 4];
        for (q, bucket) in buckets.iter().enumerate() {
            self.order[offset..offset + bucket.len()].copy_from_slice(bucket);
            spans[q] = (offset, offset + bucket.len());
            offset += bucket.len();
        }
        let quarter = 0.5 * half;
        for (q, &(s, e)) in spans.iter().enumerate() {
            if s == e {
                continue;
            }
            let child_center = [
                center[0] + if q & 1 == 1 { quarter } else { -quarter },
                center[1] + if q & 2 == 2 { quarter } else { -quarter },
            ];
            let child = self.split(coords, child_center, quarter, s, e, depth + 1);
            self.cells[id as usize].children[q] = child;
        }
        id
    }

    /// Repulsion on point `i`: `(Σ w²(yᵢ-yⱼ), Σ w)` with far cells summarized.
    fn repulsion(&self, coords: &[f64], i: usize, theta: f64) -> ([f64; 2], f64) {
        let yi = [coords[2 * i], coords[2 * i + 1]];
        let mut force = [0.0; 2];
        let mut z = 0.0;
        let mut stack = vec![0u32];
        let theta2 = theta * theta;
        while let Some(id) = stack.pop() {
            let cell = &self.cells[id as usize];
            if cell.count == 0 {
                continue;
            }
            if cell.is_leaf() {
                for &j in &self.order[cell.start..cell.end] {
                    if j == i {
                        continue;
                    }
                    let dx = yi[0] - coords[2 * j];
                    let dy = yi[1] - coords[2 * j + 1];
                    let w = 1.0 / (1.0 + dx * dx + dy * dy);
                    z += w;
                    force[0] += w * w * dx;
                    force[1] += w * w * dy;
                }
                continue;
            }
            let dx = yi[0] - cell.mass_center[0];
            let dy = yi[1] - cell.mass_center[1];
            let d2 = dx * dx + dy * dy;
            let side = 2.0 * cell.half;
            if side * side < theta2 * d2 && !cell.contains(yi) {
                let w = 1.0 / (1.0 + d2);
                let m = cell.count as f64;
                z += m * w;
                force[0] += m * w * w * dx;
                force[1] += m * w * w * dy;
            } else {
                // Reverse so children are visited in quadrant order.
                stack.extend(cell.children.iter().rev().filter(|&&c| c != NO_CHILD));
            }
        }
        (force, z)
    }
}

pub(crate) fn bh_forces(affinities: &Affinities, coords: &[f64], theta: f64, exaggeration: f64) -> ForceEval {
    let n = coords.len() / 2;
    let (attr, p_log_w) = attractive(affinities, coords, 2, exaggeration);
    let tree = QuadTree::build(coords);
    let parts: Vec<([f64; 2], f64)> = (0..n)
        .into_par_iter()
        .map(|i| tree.repulsion(coords, i, theta))
        .collect();
    let mut rep = Vec::with_capacity(2 * n);
    let mut z = 0.0;
    for (f, zi) in parts {
        rep.extend_from_slice(&f);
        z += zi;
    }
    ForceEval {
        grad: combine(attr, &rep, z),
        z,
        p_log_w,
    }
}

/// KL gradient with the repulsive term approximated on a quadtree.
pub fn bh_gradient(affinities: &Affinities, embedding: &Embedding, theta: f64) -> Result<Vec<f64>, OptimizerError> {
    check_ids(affinities, embedding)?;
    if embedding.dim() != 2 {
        return Err(OptimizerError::UnsupportedDimension(embedding.dim()));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(OptimizerError::InvalidConfig(format!("theta {theta} outside [0, 1]")));
    }
    Ok(bh_forces(affinities, embedding.coords(), theta, 1.0).grad)
}
