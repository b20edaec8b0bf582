//! Linear perplexity scaling `Per' = ρ·Per` and its Monte Carlo check.
//!
//! The estimator keeps each point's bandwidth from the full dataset and
//! renormalizes its Gaussian row over a sample only; the perplexity of that
//! restricted row is what the point effectively sees inside the sample.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{conditional_probabilities, dense_bandwidths, row_perplexity, AffinityError, Bandwidth};
use crate::dataset::{format_f64, sample_size, uniform_subset, Dataset, DatasetError};
use crate::neighbors::sq_dist;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("base perplexity {perplexity} must lie in [1, {n})")]
    InvalidBase { perplexity: f64, n: usize },
    #[error("target size {0} is below 2")]
    TargetTooSmall(usize),
    #[error("perplexity_underflow: scaled perplexity {0} is at most 1")]
    PerplexityUnderflow(f64),
    #[error("sample id {0} is not in the full dataset")]
    NotSubset(u64),
    #[error("sample has {0} points; at least 2 are required")]
    SampleTooSmall(usize),
    #[error("at least one repeat is required")]
    NoRepeats,
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Nearest,
    Ceil,
    None,
}

impl Rounding {
    fn apply(self, v: f64) -> f64 {
        match self {
            Self::Nearest => v.round(),
            Self::Ceil => v.ceil(),
            Self::None => v,
        }
    }
}

/// A perplexity chosen for a dataset of `base_n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRule {
    pub base_perplexity: f64,
    pub base_n: usize,
    pub rounding: Rounding,
}

impl ScalingRule {
    pub fn new(base_perplexity: f64, base_n: usize, rounding: Rounding) -> Result<Self, ScalingError> {
        if !(base_perplexity >= 1.0 && base_perplexity < base_n as f64) {
            return Err(ScalingError::InvalidBase {
                perplexity: base_perplexity,
                n: base_n,
            });
        }
        Ok(Self {
            base_perplexity,
            base_n,
            rounding,
        })
    }
}

/// `rounding(base_perplexity · target_n / base_n)`.
pub fn scale_perplexity(rule: &ScalingRule, target_n: usize) -> Result<f64, ScalingError> {
    if target_n < 2 {
        return Err(ScalingError::TargetTooSmall(target_n));
    }
    let scaled = rule
        .rounding
        .apply(rule.base_perplexity * target_n as f64 / rule.base_n as f64);
    if !(scaled > 1.0) {
        return Err(ScalingError::PerplexityUnderflow(scaled));
    }
    Ok(scaled)
}

/// Effective perplexity of one sampled point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePerplexity {
    pub id: u64,
    pub value: f64,
    /// The point's bandwidth on the full dataset hit a search bound.
    pub clamped: bool,
}

/// Per-point perplexities of `sample` under bandwidths solved on `full`.
pub fn monte_carlo_perplexities(
    full: &Dataset,
    sample: &Dataset,
    perplexity: f64,
) -> Result<Vec<SamplePerplexity>, ScalingError> {
    if sample.len() < 2 {
        return Err(ScalingError::SampleTooSmall(sample.len()));
    }
    let index = full.id_index();
    let rows = sample
        .ids()
        .iter()
        .map(|id| index.get(id).copied().ok_or(ScalingError::NotSubset(*id)))
        .collect::<Result<Vec<_>, _>>()?;
    let bandwidths = dense_bandwidths(full, perplexity)?;
    Ok(sample_perplexities(full, &bandwidths, &rows))
}

/// Restricted-row perplexities for the points at `rows` of `full`.
fn sample_perplexities(full: &Dataset, bandwidths: &[Bandwidth], rows: &[usize]) -> Vec<SamplePerplexity> {
    let ids = full.ids();
    rows.par_iter()
        .map(|&i| {
            let center = full.row(i);
            let dists: Vec<f64> = rows
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| sq_dist(center, full.row(j)))
                .collect();
            let bw = &bandwidths[i];
            let p = conditional_probabilities(&dists, bw.sigma);
            // Normalized by construction, so only the sum check could fail.
            let value = row_perplexity(&p).unwrap_or(1.0).clamp(1.0, dists.len() as f64);
            SamplePerplexity {
                id: ids[i],
                value,
                clamped: bw.is_clamped(),
            }
        })
        .collect()
}

/// One uniform sample of the Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub rate: f64,
    pub repeat: usize,
    pub values: Vec<SamplePerplexity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub perplexity: f64,
    pub rates: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub n: usize,
    pub cells: Vec<McCell>,
    /// Median over all repeats of the unclamped values, one per rate.
    pub medians: Vec<f64>,
    /// Slope `s` of `y = Per + s·(ρ - 1)` fitted to the medians.
    pub fit_slope: f64,
    pub fit_r2: f64,
    /// Points excluded from medians and fit, per rate.
    pub clamped: Vec<usize>,
}

/// Summary written next to the per-point CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub perplexity: f64,
    pub n: usize,
    pub repeats: usize,
    pub seed: u64,
    pub medians: BTreeMap<String, f64>,
    pub slope: f64,
    pub r2: f64,
    pub clamped: BTreeMap<String, usize>,
}

fn rate_key(rate: f64) -> String {
    format!("{rate:?}")
}

impl MonteCarloReport {
    /// `rho,repeat,id,perplexity_prime,clamped` rows.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("rho,repeat,id,perplexity_prime,clamped\n");
        for cell in &self.cells {
            for v in &cell.values {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    cell.rate,
                    cell.repeat,
                    v.id,
                    format_f64(v.value),
                    u8::from(v.clamped)
                ));
            }
        }
        out
    }

    pub fn summary(&self) -> McSummary {
        McSummary {
            perplexity: self.perplexity,
            n: self.n,
            repeats: self.repeats,
            seed: self.seed,
            medians: self.rates.iter().map(|&r| rate_key(r)).zip(self.medians.iter().copied()).collect(),
            slope: self.fit_slope,
            r2: self.fit_r2,
            clamped: self.rates.iter().map(|&r| rate_key(r)).zip(self.clamped.iter().copied()).collect(),
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }

    /// Unclamped values at rate index `k`, all repeats pooled.
    pub fn values_at(&self, k: usize) -> Vec<f64> {
        let rate = self.rates[k];
        self.cells
            .iter()
            .filter(|c| c.rate == rate)
            .flat_map(|c| c.values.iter().filter(|v| !v.clamped).map(|v| v.value))
            .collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `(rate, repeat)` cell.
pub fn cell_seed(seed: u64, rate_index: usize, repeat: usize) -> u64 {
    seed ^ splitmix64(((rate_index as u64) << 32) | repeat as u64)
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Least-squares slope of `y = anchor + s·(x - 1)` and its R², with the
/// anchor `(1, anchor)` counted as a data point.
pub fn anchored_fit(xs: &[f64], ys: &[f64], anchor: f64) -> (f64, f64) {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - 1.0) * (y - anchor);
        sxx += (x - 1.0) * (x - 1.0);
    }
    if sxx == 0.0 {
        return (anchor, 1.0);
    }
    let slope = sxy / sxx;
    let all_y: Vec<f64> = ys.iter().copied().chain(std::iter::once(anchor)).collect();
    let mean = all_y.iter().sum::<f64>() / all_y.len() as f64;
    let ss_tot: f64 = all_y.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - anchor - slope * (x - 1.0);
            r * r
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, r2)
}

/// Independent uniform samples at every `(rate, repeat)`, per-point sample
/// perplexities, per-rate medians and the anchored linear fit.
pub fn mc_report(
    full: &Dataset,
    rates: &[f64],
    repeats: usize,
    perplexity: f64,
    seed: u64,
) -> Result<MonteCarloReport, ScalingError> {
    if repeats == 0 {
        return Err(ScalingError::NoRepeats);
    }
    if rates.is_empty() {
        return Err(DatasetError::NoRates.into());
    }
    let n = full.len();
    for &rate in rates {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(DatasetError::RateOutOfRange(rate).into());
        }
        let size = sample_size(n, rate);
        if size < 2 {
            return Err(DatasetError::SampleTooSmall { rate, n, size }.into());
        }
    }
    let bandwidths = dense_bandwidths(full, perplexity)?;
    let index = full.id_index();
    let mut parent = full.ids().to_vec();
    parent.sort_unstable();

    let jobs: Vec<(usize, usize)> = (0..rates.len()).flat_map(|k| (0..repeats).map(move |r| (k, r))).collect();
    let cells: Vec<McCell> = jobs
        .iter()
        .map(|&(k, repeat)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(seed, k, repeat));
            let ids = uniform_subset(&parent, sample_size(n, rates[k]), &mut rng);
            let rows: Vec<usize> = ids.iter().map(|id| index[id]).collect();
            McCell {
                rate: rates[k],
                repeat,
                values: sample_perplexities(full, &bandwidths, &rows),
            }
        })
        .collect();

    let mut report = MonteCarloReport {
        perplexity,
        rates: rates.to_vec(),
        repeats,
        seed,
        n,
        cells,
        medians: Vec::with_capacity(rates.len()),
        fit_slope: f64::NAN,
        fit_r2: f64::NAN,
        clamped: Vec::with_capacity(rates.len()),
    };
    for (k, &rate) in rates.iter().enumerate() {
        let mut values = report.values_at(k);
        report.medians.push(median(&mut values));
        report.clamped.push(
            report
                .cells
                .iter()
                .filter(|c| c.rate == rate)
                .map(|c| c.values.iter().filter(|v| v.clamped).count())
                .sum(),
        );
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rates
        .iter()
        .zip(&report.medians)
        .filter(|(_, m)| m.is_finite())
        .map(|(&r, &m)| (r, m))
        .unzip();
    let (slope, r2) = anchored_fit(&xs, &ys, perplexity);
    report.fit_slope = slope;
    report.fit_r2 = r2;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::isotropic_gaussian;

    #[test]
    fn scaling_arithmetic() {
        let rule = ScalingRule::new(30.0, 10_000, Rounding::Nearest).unwrap();
        assert_eq!(scale_perplexity(&rule, 5_000).unwrap(), 15.0);
        assert_eq!(scale_perplexity(&rule, 10_000).unwrap(), 30.0);
        let ceil = ScalingRule::new(10.0, 30, Rounding::Ceil).unwrap();
        assert_eq!(scale_perplexity(&ceil, 20).unwrap(), 7.0);
        let exact = ScalingRule::new(10.0, 30, Rounding::None).unwrap();
        assert!((scale_perplexity(&exact, 20).unwrap() - 20.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn underflow_and_bad_inputs() {
        let rule = ScalingRule::new(5.0, 100, Rounding::None).unwrap();
        assert!(matches!(scale_perplexity(&rule, 20), Err(ScalingError::PerplexityUnderflow(_))));
        assert!(matches!(scale_perplexity(&rule, 1), Err(ScalingError::TargetTooSmall(1))));
        assert!(ScalingRule::new(0.5, 100, Rounding::None).is_err());
        assert!(ScalingRule::new(100.0, 100, Rounding::None).is_err());
    }

    #[test]
    fn anchored_fit_recovers_exact_line() {
        let xs = [0.2, 0.5, 0.8];
        let ys: Vec<f64> = xs.iter().map(|x| 30.0 * x).collect();
        let (slope, r2) = anchored_fit(&xs, &ys, 30.0);
        assert!((slope - 30.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        assert_eq!(anchored_fit(&[1.0], &[30.0], 30.0), (30.0, 1.0));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn identity_sample_reproduces_target() {
        let ds = isotropic_gaussian(200, 5, 3).unwrap();
        for v in monte_carlo_perplexities(&ds, &ds, 20.0).unwrap() {
            assert!(!v.clamped);
            assert!((v.value - 20.0).abs() <= 20.0 * 1e-5, "{v:?}");
        }
    }

    #[test]
    fn two_point_sample_is_bounded_by_support() {
        let ds = isotropic_gaussian(100, 3, 8).unwrap();
        let sample = ds.subset(&[4, 71]).unwrap();
        for v in monte_carlo_perplexities(&ds, &sample, 10.0).unwrap() {
            assert!((1.0..=2.0).contains(&v.value));
        }
    }

    #[test]
    fn foreign_sample_is_rejected() {
        let ds = isotropic_gaussian(30, 2, 1).unwrap();
        let other = Dataset::new("o", vec![0.0; 4], 2, vec![5, 99], None).unwrap();
        assert!(matches!(
            monte_carlo_perplexities(&ds, &other, 5.0),
            Err(ScalingError::NotSubset(99))
        ));
    }

    #[test]
    fn anchor_only_report() {
        let ds = isotropic_gaussian(150, 4, 2).unwrap();
        let report = mc_report(&ds, &[1.0], 1, 12.0, 7).unwrap();
        assert!((report.medians[0] - 12.0).abs() < 12.0 * 1e-5);
        assert_eq!((report.fit_slope, report.fit_r2), (12.0, 1.0));
        let summary: serde_json::Value = serde_json::from_str(&report.summary_json()).unwrap();
        assert!(summary["medians"]["1.0"].as_f64().is_some());
    }

    #[test]
    fn reports_are_reproducible() {
        let ds = isotropic_gaussian(120, 3, 5).unwrap();
        let a = mc_report(&ds, &[0.3, 0.6], 2, 10.0, 42).unwrap();
        let b = mc_report(&ds, &[0.3, 0.6], 2, 10.0, 42).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(a.summary_json(), b.summary_json());
        assert_ne!(a.cells[0].values, a.cells[1].values);
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let mut seeds: Vec<u64> = (0..9).flat_map(|k| (0..3).map(move |r| cell_seed(1, k, r))).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 27);
    }
}
