//! Hand-written SVG: labeled scatter plots, panel grids and the Monte Carlo
//! distribution plot.

use std::fmt::Write;

use perpscale::dataset::uniform_subset;
use perpscale::scaling::MonteCarloReport;
use perpscale::Embedding;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const UNLABELED: &str = "#444444";
pub const MAX_DISPLAY_POINTS: usize = 20_000;
const PANEL: f64 = 320.0;
const GAP: f64 = 24.0;
const HEADER: f64 = 28.0;

pub fn color(label: Option<i64>) -> &'static str {
    match label {
        Some(l) => PALETTE[l.rem_euclid(10) as usize],
        None => UNLABELED,
    }
}

pub fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Rows to draw: all of them, or a seeded uniform selection of
/// [`MAX_DISPLAY_POINTS`].
pub fn display_rows(n: usize, seed: u64) -> Vec<usize> {
    if n <= MAX_DISPLAY_POINTS {
        return (0..n).collect();
    }
    let all: Vec<u64> = (0..n as u64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform_subset(&all, MAX_DISPLAY_POINTS, &mut rng)
        .into_iter()
        .map(|i| i as usize)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn of(embedding: &Embedding) -> Self {
        let mut b = Self {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        };
        for p in embedding.coords().chunks_exact(embedding.dim()) {
            for (c, &v) in p.iter().take(2).enumerate() {
                b.min[c] = b.min[c].min(v);
                b.max[c] = b.max[c].max(v);
            }
        }
        b
    }

    pub fn union(self, other: Self) -> Self {
        Self {
            min: [self.min[0].min(other.min[0]), self.min[1].min(other.min[1])],
            max: [self.max[0].max(other.max[0]), self.max[1].max(other.max[1])],
        }
    }

    /// Maps a data point into a square of side `size` at `(x0, y0)`.
    fn project(&self, p: [f64; 2], x0: f64, y0: f64, size: f64) -> (f64, f64) {
        let span = (self.max[0] - self.min[0]).max(self.max[1] - self.min[1]).max(1e-12);
        let pad = 0.05 * size;
        let inner = size - 2.0 * pad;
        let cx = 0.5 * (self.min[0] + self.max[0]);
        let cy = 0.5 * (self.min[1] + self.max[1]);
        let x = x0 + 0.5 * size + (p[0] - cx) / span * inner;
        let y = y0 + 0.5 * size - (p[1] - cy) / span * inner;
        (x, y)
    }
}

pub enum Panel<'a> {
    Scatter {
        embedding: &'a Embedding,
        labels: Option<&'a [i64]>,
        title: String,
    },
    Infeasible {
        title: String,
    },
}

impl Panel<'_> {
    fn title(&self) -> &str {
        match self {
            Self::Scatter { title, .. } | Self::Infeasible { title } => title,
        }
    }
}

fn draw_panel(out: &mut String, panel: &Panel, x0: f64, y0: f64, bounds: Option<Bounds>, seed: u64) {
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.2}" y="{y0:.2}" width="{PANEL}" height="{PANEL}" fill="white" stroke="#999999"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
        x0 + 0.5 * PANEL,
        y0 - 8.0,
        escape(panel.title())
    );
    match panel {
        Panel::Infeasible { .. } => {
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" font-size="16" fill="#aa0000" text-anchor="middle">infeasible</text>"##,
                x0 + 0.5 * PANEL,
                y0 + 0.5 * PANEL
            );
        }
        Panel::Scatter { embedding, labels, .. } => {
            let bounds = bounds.unwrap_or_else(|| Bounds::of(embedding));
            for i in display_rows(embedding.len(), seed) {
                let p = embedding.point(i);
                let (x, y) = bounds.project([p[0], p.get(1).copied().unwrap_or(0.0)], x0, y0, PANEL);
                let fill = color(labels.map(|l| l[i]));
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.6" fill="{fill}"/>"#);
            }
        }
    }
}

fn open_document(width: f64, height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// A single scatter plot colored by label.
pub fn scatter_document(embedding: &Embedding, labels: Option<&[i64]>, title: &str, seed: u64) -> String {
    let size = PANEL + 2.0 * GAP;
    let mut out = open_document(size, size + HEADER);
    let panel = Panel::Scatter {
        embedding,
        labels,
        title: title.into(),
    };
    draw_panel(&mut out, &panel, GAP, GAP + HEADER, None, seed);
    out.push_str("</svg>\n");
    out
}

/// Panels in a `rows × columns` matrix; each column shares one set of axes.
pub fn grid_document(row_titles: &[String], column_titles: &[String], panels: &[Vec<Panel>], seed: u64) -> String {
    let cols = column_titles.len();
    let label_w = 110.0;
    let width = label_w + cols as f64 * (PANEL + GAP) + GAP;
    let height = HEADER + row_titles.len() as f64 * (PANEL + GAP + HEADER) + GAP;
    let mut out = open_document(width, height);
    let bounds: Vec<Option<Bounds>> = (0..cols)
        .map(|c| {
            panels
                .iter()
                .filter_map(|row| match &row[c] {
                    Panel::Scatter { embedding, .. } => Some(Bounds::of(embedding)),
                    Panel::Infeasible { .. } => None,
                })
                .reduce(Bounds::union)
        })
        .collect();
    for (c, title) in column_titles.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="20" font-size="15" font-weight="bold" text-anchor="middle">{}</text>"#,
            label_w + c as f64 * (PANEL + GAP) + 0.5 * PANEL,
            escape(title)
        );
    }
    for (r, (title, row)) in row_titles.iter().zip(panels).enumerate() {
        let y0 = HEADER + GAP + r as f64 * (PANEL + GAP + HEADER);
        let _ = writeln!(
            out,
            r#"<text x="8" y="{:.2}" font-size="15" font-weight="bold">{}</text>"#,
            y0 + 0.5 * PANEL,
            escape(title)
        );
        for (c, panel) in row.iter().enumerate() {
            draw_panel(&mut out, panel, label_w + c as f64 * (PANEL + GAP), y0, bounds[c], seed);
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Per-rate violins of the sample perplexities, median markers and the
/// anchored trend line.
pub fn mc_document(report: &MonteCarloReport) -> String {
    let (width, height) = (760.0, 500.0);
    let (left, right, top, bottom) = (70.0, 30.0, 40.0, 60.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let all: Vec<Vec<f64>> = (0..report.rates.len()).map(|k| report.values_at(k)).collect();
    let y_max = all
        .iter()
        .flatten()
        .copied()
        .chain([report.perplexity])
        .fold(1.0f64, f64::max)
        * 1.05;
    let sx = |x: f64| left + x / 1.05 * plot_w;
    let sy = |y: f64| top + plot_h - y / y_max * plot_h;

    let mut out = open_document(width, height);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" font-size="15" text-anchor="middle">Sample perplexity per point, Per = {}, n = {}</text>"#,
        width / 2.0,
        report.perplexity,
        report.n
    );
    let _ = writeln!(
        out,
        r##"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"##,
        top + plot_h,
        left + plot_w,
        top + plot_h,
        top + plot_h
    );
    for k in 0..=5 {
        let v = y_max / 1.05 * k as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{:.1}</text>"#,
            left - 6.0,
            sy(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">sampling rate</text>"#,
        left + plot_w / 2.0,
        height - 15.0
    );

    let bins = 40;
    let half_width = 0.035;
    for ((&rate, values), &median) in report.rates.iter().zip(&all).zip(&report.medians) {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{rate}</text>"#,
            sx(rate),
            top + plot_h + 16.0
        );
        if values.is_empty() {
            continue;
        }
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = ((v / y_max * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let peak = *counts.iter().max().unwrap_or(&1) as f64;
        let mut pts = Vec::with_capacity(2 * bins);
        for (b, &c) in counts.iter().enumerate() {
            let y = (b as f64 + 0.5) / bins as f64 * y_max;
            pts.push((sx(rate + half_width * c as f64 / peak), sy(y)));
        }
        for (b, &c) in counts.iter().enumerate().rev() {
            let y = (b as f64 + 0.5) / bins as f64 * y_max;
            pts.push((sx(rate - half_width * c as f64 / peak), sy(y)));
        }
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.35" stroke="#1f77b4"/>"##,
            path.join(" ")
        );
        if median.is_finite() {
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2.5"/>"##,
                sx(rate - half_width),
                sy(median),
                sx(rate + half_width),
                sy(median)
            );
        }
    }
    let trend = |x: f64| report.perplexity + report.fit_slope * (x - 1.0);
    if report.fit_slope.is_finite() {
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#2ca02c" stroke-dasharray="6,4" stroke-width="1.5"/>"##,
            sx(0.0),
            sy(trend(0.0).max(0.0)),
            sx(1.0),
            sy(trend(1.0))
        );
    }
    let _ = writeln!(
        out,
        r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#2ca02c"/>"##,
        sx(1.0),
        sy(report.perplexity)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12">slope {:.3}, R² {:.4}</text>"#,
        left + 10.0,
        top + 14.0,
        report.fit_slope,
        report.fit_r2
    );
    out.push_str("</svg>\n");
    out
}
