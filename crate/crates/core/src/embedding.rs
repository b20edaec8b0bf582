//! Low-dimensional coordinates keyed by point id.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::dataset::format_f64;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding needs a positive dimension")]
    NoDimensions,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite coordinate at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("unknown point id {0}")]
    UnknownId(u64),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed embedding csv at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    coords: Vec<f64>,
    dim: usize,
    ids: Vec<u64>,
}

impl Embedding {
    pub fn new(coords: Vec<f64>, dim: usize, ids: Vec<u64>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::NoDimensions);
        }
        if coords.len() != ids.len() * dim {
            return Err(EmbeddingError::Shape(format!(
                "{} coordinates for {} points of dimension {dim}",
                coords.len(),
                ids.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite {
                row: pos / dim,
                column: pos % dim,
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(&dup) = ids.iter().find(|&&id| !seen.insert(id)) {
            return Err(EmbeddingError::DuplicateId(dup));
        }
        Ok(Self { coords, dim, ids })
    }

    pub fn zeros(dim: usize, ids: Vec<u64>) -> Self {
        Self {
            coords: vec![0.0; ids.len() * dim],
            dim,
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn id_index(&self) -> HashMap<u64, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Restricts to `ids`; rows come out sorted by id.
    pub fn subset(&self, ids: &[u64]) -> Result<Self, EmbeddingError> {
        let index = self.id_index();
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        let mut coords = Vec::with_capacity(sorted.len() * self.dim);
        for id in &sorted {
            let row = *index.get(id).ok_or(EmbeddingError::UnknownId(*id))?;
            coords.extend_from_slice(self.point(row));
        }
        Ok(Self {
            coords,
            dim: self.dim,
            ids: sorted,
        })
    }

    /// Per-dimension mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.coords.chunks_exact(self.dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        let n = self.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Shifts the coordinates to zero mean.
    pub fn recenter(&mut self) {
        recenter(&mut self.coords, self.dim);
    }

    /// Population standard deviation of coordinate `axis`.
    pub fn axis_std(&self, axis: usize) -> f64 {
        let n = self.len() as f64;
        let vals = self.coords.iter().skip(axis).step_by(self.dim);
        let mean = vals.clone().sum::<f64>() / n;
        (vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    }

    /// Scales all coordinates so that the first axis has standard deviation
    /// `target`. A zero-spread embedding is left untouched.
    pub fn rescale_first_axis_std(&mut self, target: f64) {
        let std = self.axis_std(0);
        if std > 0.0 {
            let factor = target / std;
            self.coords.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn column_names(&self) -> Vec<String> {
        if self.dim == 2 {
            vec!["x".into(), "y".into()]
        } else {
            (0..self.dim).map(|c| format!("x{c}")).collect()
        }
    }

    /// Writes `id,x,y[,label]` with 17 significant digits.
    pub fn save_csv(&self, path: impl AsRef<Path>, labels: Option<&[i64]>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        let io_err = |source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
        out.write_all(self.to_csv_string(labels).as_bytes()).map_err(io_err)?;
        out.flush().map_err(io_err)
    }

    pub fn to_csv_string(&self, labels: Option<&[i64]>) -> String {
        let mut text = String::from("id,");
        text.push_str(&self.column_names().join(","));
        if labels.is_some() {
            text.push_str(",label");
        }
        text.push('\n');
        for i in 0..self.len() {
            text.push_str(&self.ids[i].to_string());
            for v in self.point(i) {
                text.push(',');
                text.push_str(&format_f64(*v));
            }
            if let Some(labels) = labels {
                text.push_str(&format!(",{}", labels[i]));
            }
            text.push('\n');
        }
        text
    }

    /// Reads an embedding CSV written by [`Embedding::save_csv`].
    pub fn load_csv(path: impl AsRef<Path>) -> Result<(Self, Option<Vec<i64>>), EmbeddingError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<(Self, Option<Vec<i64>>), EmbeddingError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(EmbeddingError::Parse {
            line: 0,
            reason: "empty file".into(),
        })?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        if names.first() != Some(&"id") {
            return Err(EmbeddingError::Parse {
                line: 0,
                reason: "header must start with id".into(),
            });
        }
        let has_label = names.last() == Some(&"label");
        let dim = names.len() - 1 - usize::from(has_label);
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for (line, row) in lines {
            let cells: Vec<&str> = row.split(',').map(str::trim).collect();
            if cells.len() != names.len() {
                return Err(EmbeddingError::Parse {
                    line,
                    reason: format!("expected {} cells, found {}", names.len(), cells.len()),
                });
            }
            let bad = |reason: String| EmbeddingError::Parse { line, reason };
            ids.push(cells[0].parse::<u64>().map_err(|e| bad(e.to_string()))?);
            for cell in &cells[1..=dim] {
                coords.push(cell.parse::<f64>().map_err(|e| bad(e.to_string()))?);
            }
            if has_label {
                labels.push(cells[dim + 1].parse::<i64>().map_err(|e| bad(e.to_string()))?);
            }
        }
        Ok((Self::new(coords, dim, ids)?, has_label.then_some(labels)))
    }
}

pub(crate) fn recenter(coords: &mut [f64], dim: usize) {
    let n = coords.len() / dim;
    if n == 0 {
        return;
    }
    let mut mean = vec![0.0; dim];
    for row in coords.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in coords.chunks_exact_mut(dim) {
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
}
