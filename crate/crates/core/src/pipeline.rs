//! Workflows built on sampling: perplexity grids on one sample, embedding a
//! sample and prolonging it to the full set, and memory-budget planning.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::AffinityMode;
use crate::dataset::{draw_nested_samples, sample_size, Dataset, DatasetError};
use crate::embedding::Embedding;
use crate::neighbors::k_nearest_to;
use crate::optimizer::{kl_cost, pca_init, run_tsne, OptimizationTrace, OptimizerConfig, OptimizerError, INIT_STD};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("perplexity {perplexity} needs more than {n} points")]
    PerplexityTooLarge { perplexity: f64, n: usize },
    #[error("prolong_k = {k} exceeds the sample size {sample}")]
    ProlongTooLarge { k: usize, sample: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

impl From<crate::affinity::AffinityError> for PipelineError {
    fn from(e: crate::affinity::AffinityError) -> Self {
        Self::Optimizer(e.into())
    }
}

fn check_perplexity(perplexity: f64, n: usize) -> Result<(), PipelineError> {
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(PipelineError::PerplexityTooLarge { perplexity, n });
    }
    Ok(())
}

/// The full dataset's PCA initialization restricted to `ids` (sorted).
pub fn sampled_pca_init(dataset: &Dataset, ids: &[u64], out_dim: usize) -> Result<Embedding, PipelineError> {
    let (full, _) = pca_init(dataset, out_dim)?;
    Ok(full.subset(ids).map_err(OptimizerError::from)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rate: f64,
    pub perplexities: Vec<f64>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub perplexity: f64,
    pub embedding: Embedding,
    pub trace: OptimizationTrace,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Sample ids shared by every cell.
    pub sample_ids: Vec<u64>,
    pub init: Embedding,
    pub cells: Vec<GridCell>,
}

/// Embeds one nested sample at every perplexity in `spec`, all cells from
/// the same sampled PCA initialization. Cells come out in ascending
/// perplexity order.
pub fn explore_grid(dataset: &Dataset, spec: &GridSpec) -> Result<GridResult, PipelineError> {
    if spec.perplexities.is_empty() {
        return Err(PipelineError::InvalidPlan("no perplexities".into()));
    }
    let plan = draw_nested_samples(dataset, &[spec.rate], spec.seed)?;
    let sample_ids = plan.levels[0].clone();
    let sample = dataset.subset(&sample_ids)?;
    let mut perplexities = spec.perplexities.clone();
    perplexities.sort_by(f64::total_cmp);
    for &p in &perplexities {
        check_perplexity(p, sample.len())?;
    }
    let init = sampled_pca_init(dataset, &sample_ids, spec.optimizer.out_dim)?;
    let cells = perplexities
        .par_iter()
        .map(|&perplexity| {
            let (embedding, trace) = run_tsne(&sample, perplexity, &spec.optimizer, Some(&init))?;
            Ok(GridCell {
                perplexity,
                embedding,
                trace,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(GridResult {
        sample_ids,
        init,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub rate: f64,
    pub per_sample: f64,
    pub per_full: f64,
    pub prolong_k: usize,
    pub sample_optimizer: OptimizerConfig,
    pub full_optimizer: OptimizerConfig,
    pub seed: u64,
}

impl PipelinePlan {
    pub fn new(rate: f64, per_sample: f64, seed: u64) -> Self {
        Self {
            rate,
            per_sample,
            per_full: 30.0,
            prolong_k: 10,
            sample_optimizer: OptimizerConfig::default(),
            full_optimizer: OptimizerConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub rho: f64,
    pub perplexity: Option<f64>,
    pub n: usize,
    pub seconds: f64,
    pub kl_initial: Option<f64>,
    pub kl_final: Option<f64>,
}

/// A non-sampled point and the sampled points it was averaged from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prolongation {
    pub id: u64,
    pub anchors: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub embedding: Embedding,
    pub sample_ids: Vec<u64>,
    pub sample_embedding: Embedding,
    /// Every point placed after prolongation, before the rescale.
    pub prolonged: Embedding,
    pub prolongations: Vec<Prolongation>,
    pub stages: Vec<StageReport>,
}

/// Sample, embed the sample, place the rest at the mean of their nearest
/// sampled neighbors, then refine on the full set.
pub fn sample_based_embed(dataset: &Dataset, plan: &PipelinePlan) -> Result<PipelineOutput, PipelineError> {
    let n = dataset.len();
    let m = sample_size(n, plan.rate);
    check_perplexity(plan.per_full, n)?;
    check_perplexity(plan.per_sample, m)?;
    if plan.prolong_k == 0 || plan.prolong_k > m {
        return Err(PipelineError::ProlongTooLarge {
            k: plan.prolong_k,
            sample: m,
        });
    }
    let mut stages = Vec::with_capacity(3);

    let start = Instant::now();
    let sample_ids = draw_nested_samples(dataset, &[plan.rate], plan.seed)?.levels.remove(0);
    let sample = dataset.subset(&sample_ids)?;
    let init = sampled_pca_init(dataset, &sample_ids, plan.sample_optimizer.out_dim)?;
    let (sample_embedding, trace) = run_tsne(&sample, plan.per_sample, &plan.sample_optimizer, Some(&init))?;
    stages.push(StageReport {
        stage: "sample".into(),
        rho: plan.rate,
        perplexity: Some(plan.per_sample),
        n: sample.len(),
        seconds: start.elapsed().as_secs_f64(),
        kl_initial: Some(trace.initial_cost),
        kl_final: Some(trace.final_cost),
    });

    let start = Instant::now();
    let dim = sample_embedding.dim();
    let sample_rows: HashMap<u64, usize> = sample_ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
    let placed: Vec<(Vec<f64>, Option<Prolongation>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let id = dataset.ids()[i];
            if let Some(&r) = sample_rows.get(&id) {
                return (sample_embedding.point(r).to_vec(), None);
            }
            let nearest = k_nearest_to(dataset.row(i), sample.points(), sample.dim(), &sample_ids, plan.prolong_k);
            let mut mean = vec![0.0; dim];
            for &(r, _) in &nearest {
                mean.iter_mut().zip(sample_embedding.point(r)).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= nearest.len() as f64);
            let anchors = nearest.iter().map(|&(r, _)| sample_ids[r]).collect();
            (mean, Some(Prolongation { id, anchors }))
        })
        .collect();
    let mut coords = Vec::with_capacity(n * dim);
    let mut prolongations = Vec::new();
    for (point, prolongation) in placed {
        coords.extend(point);
        prolongations.extend(prolongation);
    }
    let prolonged = Embedding::new(coords, dim, dataset.ids().to_vec()).map_err(OptimizerError::from)?;
    stages.push(StageReport {
        stage: "prolong".into(),
        rho: plan.rate,
        perplexity: None,
        n: prolongations.len(),
        seconds: start.elapsed().as_secs_f64(),
        kl_initial: None,
        kl_final: None,
    });

    let start = Instant::now();
    let mut full_init = prolonged.clone();
    full_init.rescale_first_axis_std(INIT_STD);
    let (embedding, trace) = run_tsne(dataset, plan.per_full, &plan.full_optimizer, Some(&full_init))?;
    stages.push(StageReport {
        stage: "full".into(),
        rho: 1.0,
        perplexity: Some(plan.per_full),
        n,
        seconds: start.elapsed().as_secs_f64(),
        kl_initial: Some(trace.initial_cost),
        kl_final: Some(trace.final_cost),
    });

    Ok(PipelineOutput {
        embedding,
        sample_ids,
        sample_embedding,
        prolonged,
        prolongations,
        stages,
    })
}

/// Memory ceiling for affinity storage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub max_bytes: f64,
    pub bytes_per_entry: f64,
    pub mode: AffinityMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub feasible: bool,
    pub rate: f64,
    pub scaled_perplexity: f64,
    /// Modeled cost at the returned rate.
    pub bytes: f64,
}

/// Modeled affinity storage for a `rate`-sample of `n` points.
pub fn affinity_cost(n: usize, rate: f64, perplexity: f64, budget: &Budget) -> f64 {
    let m = sample_size(n, rate) as f64;
    match budget.mode {
        AffinityMode::Dense => budget.bytes_per_entry * m * m,
        AffinityMode::Sparse => budget.bytes_per_entry * m * 3.0 * (rate * perplexity) * 2.0,
    }
}

/// Largest rate on a 0.01 grid whose modeled cost fits the budget, with the
/// perplexity scaled by that rate.
pub fn budget_plan(n: usize, desired_perplexity: f64, budget: &Budget) -> BudgetPlan {
    for step in (1..=100).rev() {
        let rate = step as f64 / 100.0;
        let bytes = affinity_cost(n, rate, desired_perplexity, budget);
        if bytes <= budget.max_bytes {
            let scaled_perplexity = rate * desired_perplexity;
            if scaled_perplexity <= 1.0 {
                break;
            }
            return BudgetPlan {
                feasible: true,
                rate,
                scaled_perplexity,
                bytes,
            };
        }
    }
    BudgetPlan {
        feasible: false,
        rate: 1.0,
        scaled_perplexity: desired_perplexity,
        bytes: affinity_cost(n, 1.0, desired_perplexity, budget),
    }
}

/// Exact KL of `embedding` against fresh affinities, for reports.
pub fn embedding_cost(dataset: &Dataset, embedding: &Embedding, perplexity: f64, mode: AffinityMode) -> Result<f64, PipelineError> {
    let affinities = crate::affinity::build_affinities(dataset, perplexity, mode)?;
    Ok(kl_cost(&affinities, embedding)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gaussian_mixture, MixtureSpec};

    fn quick() -> OptimizerConfig {
        OptimizerConfig {
            ee_iters: 30,
            main_iters: 30,
            ..Default::default()
        }
    }

    #[test]
    fn dense_budget_inverts_exactly() {
        let budget = Budget {
            max_bytes: 8.0 * 5000.0 * 5000.0,
            bytes_per_entry: 8.0,
            mode: AffinityMode::Dense,
        };
        let plan = budget_plan(10_000, 40.0, &budget);
        assert!(plan.feasible);
        assert_eq!(plan.rate, 0.5);
        assert_eq!(plan.scaled_perplexity, 20.0);
    }

    #[test]
    fn unconstrained_and_infeasible_budgets() {
        let roomy = Budget {
            max_bytes: 1e18,
            bytes_per_entry: 12.0,
            mode: AffinityMode::Sparse,
        };
        let plan = budget_plan(1000, 30.0, &roomy);
        assert_eq!((plan.feasible, plan.rate, plan.scaled_perplexity), (true, 1.0, 30.0));
        let tiny = Budget { max_bytes: 1.0, ..roomy };
        let plan = budget_plan(1000, 30.0, &tiny);
        assert_eq!((plan.feasible, plan.rate), (false, 1.0));
    }

    #[test]
    fn underflowing_perplexity_is_infeasible() {
        let budget = Budget {
            max_bytes: 8.0 * 100.0 * 100.0,
            bytes_per_entry: 8.0,
            mode: AffinityMode::Dense,
        };
        // Affordable rate 0.01 would scale 50 down to 0.5.
        let plan = budget_plan(10_000, 50.0, &budget);
        assert!(!plan.feasible);
    }

    #[test]
    fn grid_cells_share_init_and_sorted() {
        let ds = gaussian_mixture(&MixtureSpec::new(200, 5, 2, 1)).unwrap();
        let spec = GridSpec {
            rate: 0.5,
            perplexities: vec![20.0, 5.0],
            optimizer: quick(),
            seed: 3,
        };
        let grid = explore_grid(&ds, &spec).unwrap();
        assert_eq!(grid.cells.len(), 2);
        assert_eq!(grid.cells[0].perplexity, 5.0);
        assert_eq!(grid.init.ids(), grid.sample_ids.as_slice());
        assert_eq!(grid.sample_ids.len(), 100);
        let bad = GridSpec {
            perplexities: vec![100.0],
            ..spec
        };
        assert!(matches!(explore_grid(&ds, &bad), Err(PipelineError::PerplexityTooLarge { .. })));
    }

    #[test]
    fn single_anchor_prolongation_copies_the_neighbor() {
        let ds = gaussian_mixture(&MixtureSpec::new(120, 4, 3, 2)).unwrap();
        let mut plan = PipelinePlan::new(0.25, 5.0, 9);
        plan.per_full = 10.0;
        plan.prolong_k = 1;
        plan.sample_optimizer = quick();
        plan.full_optimizer = quick();
        let out = sample_based_embed(&ds, &plan).unwrap();
        assert_eq!(out.prolongations.len(), 120 - 30);
        let index = out.prolonged.id_index();
        let sample_index = out.sample_embedding.id_index();
        for p in &out.prolongations {
            assert_eq!(p.anchors.len(), 1);
            assert_eq!(
                out.prolonged.point(index[&p.id]),
                out.sample_embedding.point(sample_index[&p.anchors[0]])
            );
        }
        assert_eq!(out.stages.len(), 3);
        assert_eq!(out.embedding.ids(), ds.ids());
    }

    #[test]
    fn prolong_k_is_bounded_by_sample() {
        let ds = gaussian_mixture(&MixtureSpec::new(40, 2, 2, 2)).unwrap();
        let mut plan = PipelinePlan::new(0.25, 3.0, 1);
        plan.per_full = 5.0;
        plan.prolong_k = 11;
        assert!(matches!(
            sample_based_embed(&ds, &plan),
            Err(PipelineError::ProlongTooLarge { k: 11, sample: 10 })
        ));
    }
}
