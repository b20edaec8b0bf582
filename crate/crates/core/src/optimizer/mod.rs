//! Gradient descent on `KL(P‖Q)`: PCA initialization, two-phase schedule
//! (early exaggeration, then plain descent), momentum and per-coordinate
//! adaptive gains, exact or Barnes-Hut gradients.

mod barnes_hut;
mod gradient;
mod pca;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{build_affinities, AffinityError, AffinityMode, Affinities};
use crate::dataset::Dataset;
use crate::embedding::{recenter, Embedding, EmbeddingError};

pub use barnes_hut::{bh_gradient, QuadTree};
pub use gradient::{exact_gradient, kl_cost};
pub use pca::{pca_init, pca_project, PcaProjection, INIT_STD};

use gradient::{exact_forces, p_log_p, ForceEval};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("embedding ids do not match affinity ids")]
    IdMismatch,
    #[error("Barnes-Hut needs a 2-D embedding, got {0} dimensions")]
    UnsupportedDimension(usize),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("optimization diverged at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearningRate {
    /// `max(n / 12, 50)`.
    Auto,
    Fixed(f64),
}

impl LearningRate {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            Self::Auto => (n as f64 / 12.0).max(50.0),
            Self::Fixed(eta) => eta,
        }
    }
}

/// Which affinity matrix `run_tsne` builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityChoice {
    /// Dense for exact gradients (`theta = 0`), sparse kNN otherwise.
    Auto,
    Dense,
    Sparse,
}

/// Starting layout when `run_tsne` is not handed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    Pca,
    /// Gaussian coordinates drawn from `seed`, first-axis std 1e-4.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub ee_iters: usize,
    pub ee_factor: f64,
    pub main_iters: usize,
    pub momentum_early: f64,
    pub momentum_main: f64,
    pub learning_rate: LearningRate,
    /// Barnes-Hut opening threshold; `0` selects the exact gradient.
    pub theta: f64,
    pub gain_floor: f64,
    /// Drives random initialization; PCA runs do not consume it.
    pub seed: u64,
    pub init: InitMethod,
    pub affinity: AffinityChoice,
    pub out_dim: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            ee_iters: 250,
            ee_factor: 12.0,
            main_iters: 750,
            momentum_early: 0.5,
            momentum_main: 0.8,
            learning_rate: LearningRate::Auto,
            theta: 0.5,
            gain_floor: 0.01,
            seed: 0,
            init: InitMethod::Pca,
            affinity: AffinityChoice::Auto,
            out_dim: 2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |msg: String| Err(OptimizerError::InvalidConfig(msg));
        if !(self.ee_factor >= 1.0) {
            return bad(format!("ee_factor {} below 1", self.ee_factor));
        }
        for (name, m) in [("momentum_early", self.momentum_early), ("momentum_main", self.momentum_main)] {
            if !(0.0..1.0).contains(&m) {
                return bad(format!("{name} {m} outside [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta {} outside [0, 1]", self.theta));
        }
        if !(self.gain_floor > 0.0) {
            return bad(format!("gain_floor {} must be positive", self.gain_floor));
        }
        if let LearningRate::Fixed(eta) = self.learning_rate {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad(format!("learning rate {eta} must be positive"));
            }
        }
        if self.out_dim == 0 {
            return bad("out_dim must be positive".into());
        }
        Ok(())
    }

    pub fn affinity_mode(&self) -> AffinityMode {
        match self.affinity {
            AffinityChoice::Dense => AffinityMode::Dense,
            AffinityChoice::Sparse => AffinityMode::Sparse,
            AffinityChoice::Auto if self.theta == 0.0 => AffinityMode::Dense,
            AffinityChoice::Auto => AffinityMode::Sparse,
        }
    }

    pub fn total_iters(&self) -> usize {
        self.ee_iters + self.main_iters
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Early,
    Main,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Early => "early",
            Self::Main => "main",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub phase: Phase,
    /// Unexaggerated KL cost of the embedding the step started from.
    pub cost: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub rows: Vec<TraceRow>,
    /// Exact unexaggerated KL cost of the initial embedding.
    pub initial_cost: f64,
    /// Exact unexaggerated KL cost of the returned embedding.
    pub final_cost: f64,
}

impl OptimizationTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `iteration,phase,cost,grad_norm` CSV.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("iteration,phase,cost,grad_norm\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.iteration,
                row.phase.as_str(),
                crate::dataset::format_f64(row.cost),
                crate::dataset::format_f64(row.grad_norm)
            ));
        }
        out
    }
}

fn gradient_step(affinities: &Affinities, coords: &[f64], dim: usize, theta: f64, exaggeration: f64) -> ForceEval {
    if theta > 0.0 && dim == 2 {
        barnes_hut::bh_forces(affinities, coords, theta, exaggeration)
    } else {
        exact_forces(affinities, coords, dim, exaggeration)
    }
}

/// Runs the two-phase optimization from `init` on precomputed affinities.
pub fn optimize(
    affinities: &Affinities,
    init: &Embedding,
    config: &OptimizerConfig,
) -> Result<(Embedding, OptimizationTrace), OptimizerError> {
    config.validate()?;
    gradient::check_ids(affinities, init)?;
    let n = init.len();
    let dim = init.dim();
    let eta = config.learning_rate.resolve(n);
    let plogp = p_log_p(affinities);
    let initial_cost = kl_cost(affinities, init)?;

    let mut coords = init.coords().to_vec();
    let mut velocity = vec![0.0; coords.len()];
    let mut gains = vec![1.0_f64; coords.len()];
    let mut rows = Vec::with_capacity(config.total_iters());

    for iteration in 0..config.total_iters() {
        let (phase, exaggeration, momentum) = if iteration < config.ee_iters {
            (Phase::Early, config.ee_factor, config.momentum_early)
        } else {
            (Phase::Main, 1.0, config.momentum_main)
        };
        let eval = gradient_step(affinities, &coords, dim, config.theta, exaggeration);
        rows.push(TraceRow {
            iteration,
            phase,
            cost: eval.cost(plogp),
            grad_norm: eval.grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        });
        for (((y, v), gain), &g) in coords.iter_mut().zip(&mut velocity).zip(&mut gains).zip(&eval.grad) {
            if sign(g) != sign(*v) {
                *gain += 0.2;
            } else {
                *gain *= 0.8;
            }
            *gain = (*gain).max(config.gain_floor);
            *v = momentum * *v - eta * *gain * g;
            *y += *v;
        }
        recenter(&mut coords, dim);
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(OptimizerError::Divergence { iteration });
        }
    }

    let embedding = Embedding::new(coords, dim, init.ids().to_vec())?;
    let final_cost = kl_cost(affinities, &embedding)?;
    Ok((
        embedding,
        OptimizationTrace {
            rows,
            initial_cost,
            final_cost,
        },
    ))
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Seeded Gaussian layout rescaled to first-axis std 1e-4.
pub fn random_init(ids: Vec<u64>, dim: usize, seed: u64) -> Embedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<f64> = (0..ids.len() * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut embedding = Embedding::new(coords, dim, ids).expect("finite coordinates and distinct ids");
    embedding.recenter();
    embedding.rescale_first_axis_std(INIT_STD);
    embedding
}

/// Full t-SNE: affinities at `perplexity`, PCA initialization unless `init`
/// is given, then [`optimize`].
pub fn run_tsne(
    dataset: &Dataset,
    perplexity: f64,
    config: &OptimizerConfig,
    init: Option<&Embedding>,
) -> Result<(Embedding, OptimizationTrace), OptimizerError> {
    config.validate()?;
    let init = match init {
        Some(e) => {
            if e.ids() != dataset.ids() {
                return Err(OptimizerError::IdMismatch);
            }
            e.clone()
        }
        None => match config.init {
            InitMethod::Pca => pca_init(dataset, config.out_dim)?.0,
            InitMethod::Random => random_init(dataset.ids().to_vec(), config.out_dim, config.seed),
        },
    };
    let affinities = build_affinities(dataset, perplexity, config.affinity_mode())?;
    optimize(&affinities, &init, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Dataset {
        let points = (0..n).flat_map(|i| [i as f64, (i * i % 7) as f64]).collect();
        Dataset::from_rows("line", points, 2).unwrap()
    }

    #[test]
    fn empty_schedule_returns_init() {
        let ds = line(12);
        let config = OptimizerConfig {
            ee_iters: 0,
            main_iters: 0,
            ..Default::default()
        };
        let (init, _) = pca_init(&ds, 2).unwrap();
        let (emb, trace) = run_tsne(&ds, 3.0, &config, Some(&init)).unwrap();
        assert_eq!(emb, init);
        assert!(trace.is_empty());
    }

    #[test]
    fn trace_matches_schedule() {
        let ds = line(30);
        let config = OptimizerConfig {
            ee_iters: 7,
            main_iters: 5,
            ..Default::default()
        };
        let (_, trace) = run_tsne(&ds, 5.0, &config, None).unwrap();
        assert_eq!(trace.len(), 12);
        assert!(trace.rows[..7].iter().all(|r| r.phase == Phase::Early));
        assert!(trace.rows[7..].iter().all(|r| r.phase == Phase::Main));
        assert!(trace.rows.iter().enumerate().all(|(i, r)| r.iteration == i));
        assert!(trace.to_csv_string().starts_with("iteration,phase,cost,grad_norm\n0,early,"));
    }

    #[test]
    fn random_init_depends_on_seed() {
        let a = random_init((0..50).collect(), 2, 1);
        assert_eq!(a, random_init((0..50).collect(), 2, 1));
        assert_ne!(a, random_init((0..50).collect(), 2, 2));
        assert!((a.axis_std(0) - INIT_STD).abs() < 1e-18);
    }

    #[test]
    fn learning_rate_floor() {
        assert_eq!(LearningRate::Auto.resolve(120), 50.0);
        assert_eq!(LearningRate::Auto.resolve(1200), 100.0);
        assert_eq!(LearningRate::Fixed(7.0).resolve(10), 7.0);
    }

    #[test]
    fn config_validation() {
        let ok = OptimizerConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            OptimizerConfig { ee_factor: 0.5, ..ok.clone() },
            OptimizerConfig { momentum_main: 1.0, ..ok.clone() },
            OptimizerConfig { theta: 1.5, ..ok.clone() },
            OptimizerConfig { gain_floor: 0.0, ..ok.clone() },
            OptimizerConfig { learning_rate: LearningRate::Fixed(-1.0), ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn huge_learning_rate_diverges_with_iteration_index() {
        let ds = line(20);
        let config = OptimizerConfig {
            ee_iters: 50,
            main_iters: 0,
            learning_rate: LearningRate::Fixed(1e300),
            theta: 0.0,
            ..Default::default()
        };
        match run_tsne(&ds, 4.0, &config, None) {
            Err(OptimizerError::Divergence { iteration }) => assert!(iteration < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn init_ids_must_match() {
        let ds = line(10);
        let wrong = Embedding::zeros(2, (100..110).collect());
        assert!(matches!(
            run_tsne(&ds, 3.0, &OptimizerConfig::default(), Some(&wrong)),
            Err(OptimizerError::IdMismatch)
        ));
    }
}
