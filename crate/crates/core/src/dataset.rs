//! Point matrices, their on-disk formats, and seeded nested subsampling.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic bytes opening a raw-binary matrix file.
pub const BINARY_MAGIC: &[u8; 4] = b"PSC1";
const BINARY_HEADER_LEN: usize = 16;
const FLAG_LABELS: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("ragged row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-numeric cell at row {row}, column {column}: {cell:?}")]
    NonNumeric {
        row: usize,
        column: usize,
        cell: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("invalid id at row {row}: {reason}")]
    InvalidId { row: usize, reason: String },
    #[error("invalid label at row {row}: {cell:?}")]
    InvalidLabel { row: usize, cell: String },
    #[error("dataset needs at least 2 points, found {0}")]
    TooFewPoints(usize),
    #[error("dataset needs at least 1 dimension")]
    NoDimensions,
    #[error("malformed binary file: {0}")]
    Binary(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sampling rate {0} outside (0, 1]")]
    RateOutOfRange(f64),
    #[error("sampling rates must be strictly descending")]
    RatesNotDescending,
    #[error("no sampling rates given")]
    NoRates,
    #[error("rate {rate} keeps only {size} of {n} points; at least 2 are required")]
    SampleTooSmall { rate: f64, n: usize, size: usize },
    #[error("rate {0} is not part of the sample plan")]
    RateNotInPlan(f64),
    #[error("unknown point id {0}")]
    UnknownId(u64),
}

/// On-disk matrix formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Csv,
    Binary,
}

/// `n` points in `d` dimensions with stable ids and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    points: Vec<f64>,
    dim: usize,
    ids: Vec<u64>,
    labels: Option<Vec<i64>>,
}

impl Dataset {
    /// Builds a dataset from a row-major buffer, validating every invariant.
    pub fn new(
        name: impl Into<String>,
        points: Vec<f64>,
        dim: usize,
        ids: Vec<u64>,
        labels: Option<Vec<i64>>,
    ) -> Result<Self, DatasetError> {
        if dim == 0 {
            return Err(DatasetError::NoDimensions);
        }
        if !points.len().is_multiple_of(dim) {
            return Err(DatasetError::Shape(format!(
                "{} values do not fill rows of width {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if n < 2 {
            return Err(DatasetError::TooFewPoints(n));
        }
        if ids.len() != n {
            return Err(DatasetError::Shape(format!("{} ids for {n} points", ids.len())));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(DatasetError::Shape(format!(
                    "{} labels for {n} points",
                    labels.len()
                )));
            }
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite {
                row: pos / dim,
                column: pos % dim,
            });
        }
        let mut seen = HashSet::with_capacity(n);
        for (row, &id) in ids.iter().enumerate() {
            if !seen.insert(id) {
                return Err(DatasetError::InvalidId {
                    row,
                    reason: format!("duplicate id {id}"),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            points,
            dim,
            ids,
            labels,
        })
    }

    /// Dataset with ids `0..n` and no labels.
    pub fn from_rows(name: impl Into<String>, points: Vec<f64>, dim: usize) -> Result<Self, DatasetError> {
        let n = points.len().checked_div(dim).unwrap_or(0);
        Self::new(name, points, dim, (0..n as u64).collect(), None)
    }

    pub fn name(&self) -> &str {
        &self.name
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

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Map from point id to row index.
    pub fn id_index(&self) -> HashMap<u64, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Restricts the dataset to `ids`; rows come out sorted by id.
    pub fn subset(&self, ids: &[u64]) -> Result<Self, DatasetError> {
        let index = self.id_index();
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        let mut points = Vec::with_capacity(sorted.len() * self.dim);
        let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(sorted.len()));
        for &id in &sorted {
            let row = *index.get(&id).ok_or(DatasetError::UnknownId(id))?;
            points.extend_from_slice(self.row(row));
            if let (Some(out), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                out.push(src[row]);
            }
        }
        Self::new(self.name.clone(), points, self.dim, sorted, labels)
    }

    pub fn load(path: impl AsRef<Path>, format: MatrixFormat) -> Result<Self, DatasetError> {
        match format {
            MatrixFormat::Csv => load_csv(path),
            MatrixFormat::Binary => load_binary(path),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: MatrixFormat) -> Result<(), DatasetError> {
        match format {
            MatrixFormat::Csv => self.save_csv(path),
            MatrixFormat::Binary => self.save_binary(path),
        }
    }

    /// Writes `id,x0,..,x{d-1}[,label]` with 17 significant digits.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let io_err = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = fs::File::create(path).map_err(io_err)?;
        let mut out = BufWriter::new(file);
        let mut header = String::from("id");
        for c in 0..self.dim {
            header.push_str(&format!(",x{c}"));
        }
        if self.labels.is_some() {
            header.push_str(",label");
        }
        writeln!(out, "{header}").map_err(io_err)?;
        for i in 0..self.len() {
            let mut line = self.ids[i].to_string();
            for v in self.row(i) {
                line.push(',');
                line.push_str(&format_f64(*v));
            }
            if let Some(labels) = &self.labels {
                line.push_str(&format!(",{}", labels[i]));
            }
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    /// Writes the `PSC1` raw-binary layout. Values are narrowed to f32.
    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        fs::write(path, self.to_binary_bytes()?).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_binary_bytes(&self) -> Result<Vec<u8>, DatasetError> {
        let n = u32::try_from(self.len()).map_err(|_| DatasetError::Binary("n exceeds u32".into()))?;
        let d = u32::try_from(self.dim).map_err(|_| DatasetError::Binary("d exceeds u32".into()))?;
        let label_bytes = if self.labels.is_some() { 4 * self.len() } else { 0 };
        let mut bytes = Vec::with_capacity(BINARY_HEADER_LEN + 4 * self.points.len() + label_bytes);
        bytes.extend_from_slice(BINARY_MAGIC);
        bytes.extend_from_slice(&n.to_le_bytes());
        bytes.extend_from_slice(&d.to_le_bytes());
        let flags = if self.labels.is_some() { FLAG_LABELS } else { 0 };
        bytes.extend_from_slice(&flags.to_le_bytes());
        for &v in &self.points {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            for &l in labels {
                let l = i32::try_from(l)
                    .map_err(|_| DatasetError::Binary(format!("label {l} exceeds i32")))?;
                bytes.extend_from_slice(&l.to_le_bytes());
            }
        }
        Ok(bytes)
    }
}

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_csv(&name, &text)
}

/// Parses CSV text. A first row containing any non-numeric cell is a header;
/// header names `id` (first column) and `label` (last column) mark metadata.
pub fn parse_csv(name: &str, text: &str) -> Result<Dataset, DatasetError> {
    let mut lines = text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty())
        .peekable();

    let mut has_id = false;
    let mut has_label = false;
    let mut width = None;
    if let Some(first) = lines.peek() {
        let cells: Vec<&str> = first.split(',').map(str::trim).collect();
        if cells.iter().any(|c| c.parse::<f64>().is_err()) {
            has_id = cells.first().is_some_and(|c| c.eq_ignore_ascii_case("id"));
            has_label = cells.len() > 1 && cells.last().is_some_and(|c| c.eq_ignore_ascii_case("label"));
            width = Some(cells.len());
            lines.next();
        }
    }

    let mut points = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = *width.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(DatasetError::RaggedRow {
                row,
                expected,
                found: cells.len(),
            });
        }
        let start = usize::from(has_id);
        let end = cells.len() - usize::from(has_label);
        dim = end.saturating_sub(start);
        if has_id {
            let id = cells[0].parse::<u64>().map_err(|_| DatasetError::InvalidId {
                row,
                reason: format!("{:?} is not a non-negative integer", cells[0]),
            })?;
            ids.push(id);
        } else {
            ids.push(row as u64);
        }
        for (column, cell) in cells[start..end].iter().enumerate().map(|(c, s)| (c + start, s)) {
            let v = cell.parse::<f64>().map_err(|_| DatasetError::NonNumeric {
                row,
                column,
                cell: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::NonFinite { row, column });
            }
            points.push(v);
        }
        if has_label {
            let cell = cells[cells.len() - 1];
            let label = cell.parse::<i64>().map_err(|_| DatasetError::InvalidLabel {
                row,
                cell: cell.to_string(),
            })?;
            labels.push(label);
        }
    }
    if ids.len() < 2 {
        return Err(DatasetError::TooFewPoints(ids.len()));
    }
    Dataset::new(name, points, dim, ids, has_label.then_some(labels))
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_binary(&name, &bytes)
}

pub fn parse_binary(name: &str, bytes: &[u8]) -> Result<Dataset, DatasetError> {
    if bytes.len() < BINARY_HEADER_LEN {
        return Err(DatasetError::Binary(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != BINARY_MAGIC {
        return Err(DatasetError::Binary("bad magic, expected PSC1".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"));
    let n = word(4) as usize;
    let d = word(8) as usize;
    let flags = word(12);
    let with_labels = flags & FLAG_LABELS != 0;
    let expected = BINARY_HEADER_LEN + 4 * n * d + if with_labels { 4 * n } else { 0 };
    if bytes.len() != expected {
        return Err(DatasetError::Binary(format!(
            "expected {expected} bytes for n={n}, d={d}, flags={flags}, found {}",
            bytes.len()
        )));
    }
    if d == 0 {
        return Err(DatasetError::NoDimensions);
    }
    if n < 2 {
        return Err(DatasetError::TooFewPoints(n));
    }
    let body = &bytes[BINARY_HEADER_LEN..];
    let mut points = Vec::with_capacity(n * d);
    for (k, chunk) in body[..4 * n * d].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(DatasetError::NonFinite { row: k / d, column: k % d });
        }
        points.push(f64::from(v));
    }
    let labels = with_labels.then(|| {
        body[4 * n * d..]
            .chunks_exact(4)
            .map(|c| i64::from(i32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
            .collect()
    });
    Dataset::new(name, points, d, (0..n as u64).collect(), labels)
}

/// Number of points kept by a `rate`-sample of `n` points, `⌈n·rate⌉`.
///
/// Products within 1e-9 of an integer are snapped to it, so `10 × 0.7` is 7
/// and not 8.
pub fn sample_size(n: usize, rate: f64) -> usize {
    let exact = n as f64 * rate;
    let nearest = exact.round();
    let size = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    (size as usize).min(n)
}

/// Draws `size` ids uniformly without replacement with a partial
/// Fisher-Yates pass; the result is sorted.
pub fn uniform_subset<R: Rng>(parent: &[u64], size: usize, rng: &mut R) -> Vec<u64> {
    let mut pool = parent.to_vec();
    let size = size.min(pool.len());
    for i in 0..size {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(size);
    pool.sort_unstable();
    pool
}

fn validate_rates(rates: &[f64]) -> Result<(), DatasetError> {
    if rates.is_empty() {
        return Err(DatasetError::NoRates);
    }
    for &r in rates {
        if !(r > 0.0 && r <= 1.0) {
            return Err(DatasetError::RateOutOfRange(r));
        }
    }
    if rates.windows(2).any(|w| w[1] >= w[0]) {
        return Err(DatasetError::RatesNotDescending);
    }
    Ok(())
}

/// A seeded chain of nested uniform subsamples, one level per rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub seed: u64,
    pub rates: Vec<f64>,
    pub levels: Vec<Vec<u64>>,
}

impl SamplePlan {
    pub fn level(&self, rate: f64) -> Option<&[u64]> {
        self.rate_index(rate).map(|k| self.levels[k].as_slice())
    }

    fn rate_index(&self, rate: f64) -> Option<usize> {
        self.rates.iter().position(|&r| (r - rate).abs() <= 1e-12)
    }
}

/// Draws a nested chain: each level is a uniform sample without replacement
/// of the previous (larger) level.
pub fn draw_nested_samples(dataset: &Dataset, rates: &[f64], seed: u64) -> Result<SamplePlan, DatasetError> {
    validate_rates(rates)?;
    let n = dataset.len();
    let smallest = *rates.last().expect("non-empty rates");
    let smallest_size = sample_size(n, smallest);
    if smallest_size < 2 {
        return Err(DatasetError::SampleTooSmall {
            rate: smallest,
            n,
            size: smallest_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parent = dataset.ids().to_vec();
    parent.sort_unstable();
    let mut levels = Vec::with_capacity(rates.len());
    for &rate in rates {
        let level = uniform_subset(&parent, sample_size(n, rate), &mut rng);
        parent.clone_from(&level);
        levels.push(level);
    }
    Ok(SamplePlan {
        seed,
        rates: rates.to_vec(),
        levels,
    })
}

/// The plan's level at `rate` as a dataset, rows sorted by id.
pub fn materialize_sample(dataset: &Dataset, plan: &SamplePlan, rate: f64) -> Result<Dataset, DatasetError> {
    let level = plan.level(rate).ok_or(DatasetError::RateNotInPlan(rate))?;
    dataset.subset(level)
}
