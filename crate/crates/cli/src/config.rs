//! Run configuration file.
//!
//! One JSON document drives every subcommand. Unknown keys are rejected;
//! every field has a documented default, so `{}` is a valid config and the
//! file only needs the knobs a run actually changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rerank_core::numerics::PrecisionMode;
use rerank_core::objectives::{DirectionScheme, ObjectiveConfig, Reduction, WeightScheme};
use rerank_core::trainer::{OptimizerKind, TrainConfig};

use crate::CliError;

fn default_seed() -> u64 {
    1
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    pub mining: MiningSection,
    pub model: ModelSection,
    pub objective: ObjectiveSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub gradcheck: GradcheckSection,
    pub probe: ProbeSection,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        RunConfigFile {
            seed: default_seed(),
            out_dir: default_out_dir(),
            corpus: CorpusSection::default(),
            mining: MiningSection::default(),
            model: ModelSection::default(),
            objective: ObjectiveSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            gradcheck: GradcheckSection::default(),
            probe: ProbeSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_queries: usize,
    pub n_docs: usize,
    pub dim: usize,
    pub noise: f64,
    /// Share of queries held out for evaluation pools.
    pub eval_fraction: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            n_queries: rerank_core::data::DEFAULT_N_QUERIES,
            n_docs: rerank_core::data::DEFAULT_N_DOCS,
            dim: rerank_core::data::DEFAULT_DIM,
            noise: rerank_core::data::DEFAULT_NOISE,
            eval_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiningSection {
    pub n_total: usize,
    pub hard_fraction: f64,
    pub candidate_pool: usize,
    /// Mining stream seed; defaults to the master seed when absent.
    pub seed: Option<u64>,
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection { n_total: 4, hard_fraction: 0.5, candidate_pool: 100, seed: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dim: usize,
    /// Head rows; raised automatically to the objective's token_set_size.
    pub token_count: usize,
    pub frozen_head: bool,
    /// Allocate the learnable direction row; forced on by
    /// `direction = "learned"`.
    pub with_learned_direction: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: 32,
            token_count: 2,
            frozen_head: false,
            with_learned_direction: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub weight: WeightScheme,
    pub direction: DirectionScheme,
    pub precision: PrecisionMode,
    pub token_set_size: usize,
    pub cl_temperature: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            weight: WeightScheme::Sft,
            direction: DirectionScheme::Sft,
            precision: PrecisionMode::Full64,
            token_set_size: 2,
            cl_temperature: 1.0,
        }
    }
}

impl ObjectiveSection {
    pub fn to_core(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            weight: self.weight,
            direction: self.direction,
            precision: self.precision,
            token_set_size: self.token_set_size,
            reduction: Reduction::MeanOverBatch,
            cl_temperature: self.cl_temperature,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 300,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            log_every: 10,
        }
    }
}

/// Which relevance score ranks candidates at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreChoice {
    /// Follow the training objective's direction: classification objectives
    /// rank by the two-way softmax, contrastive and learned ones by the yes
    /// logit.
    Auto,
    Sft,
    Cl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Candidates retained per query for reranking.
    pub pool_size: usize,
    pub ndcg_k: usize,
    pub recall_k: usize,
    pub score: ScoreChoice,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { pool_size: 25, ndcg_k: 10, recall_k: 5, score: ScoreChoice::Auto }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    /// Random instances checked per configuration.
    pub trials: usize,
    pub tolerance: f64,
    pub epsilon_scale: f64,
    pub seed: Option<u64>,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection { trials: 5, tolerance: 1e-5, epsilon_scale: 1e-6, seed: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    /// Run seeds; cells of a probe share them so comparisons are matched.
    pub seeds: Vec<u64>,
    /// Steps per probe training run (probes favour breadth over length).
    pub steps: usize,
    pub tau_values: Vec<f64>,
    pub negative_counts: Vec<usize>,
    pub token_counts: Vec<usize>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            seeds: vec![1, 2, 3, 4, 5],
            steps: 300,
            tau_values: vec![1e-2, 1e-3, 1e-4],
            negative_counts: vec![1, 2, 4, 8, 16],
            token_counts: vec![2, 4, 8, 16],
        }
    }
}

impl RunConfigFile {
    /// Load a config file, or defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => RunConfigFile::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&mut self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        if !(0.0..1.0).contains(&self.corpus.eval_fraction) {
            return bad(format!(
                "corpus.eval_fraction must lie in [0, 1), got {}",
                self.corpus.eval_fraction
            ));
        }
        if self.model.hidden_dim == 0 {
            return bad("model.hidden_dim must be positive".into());
        }
        self.model.token_count = self.model.token_count.max(self.objective.token_set_size).max(2);
        if self.objective.direction == DirectionScheme::Learned {
            self.model.with_learned_direction = true;
        }
        self.objective
            .to_core()
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.to_mining_config()
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.to_train_config()
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if self.eval.pool_size == 0 || self.eval.ndcg_k == 0 || self.eval.recall_k == 0 {
            return bad("eval.pool_size, ndcg_k and recall_k must be positive".into());
        }
        if self.probe.seeds.is_empty() {
            return bad("probe.seeds must not be empty".into());
        }
        Ok(())
    }

    pub fn to_mining_config(&self) -> rerank_core::data::MiningConfig {
        rerank_core::data::MiningConfig {
            n_total: self.mining.n_total,
            hard_fraction: self.mining.hard_fraction,
            candidate_pool: self.mining.candidate_pool,
            seed: self.mining.seed.unwrap_or(self.seed),
        }
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            objective: self.objective.to_core(),
            steps: self.train.steps,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            optimizer: self.train.optimizer,
            seed: self.seed,
            log_every: self.train.log_every,
        }
    }

    /// Scorer input dimension implied by the corpus feature layout.
    pub fn input_dim(&self) -> usize {
        3 * self.corpus.dim
    }

    /// Resolve the evaluation score kind against the training direction.
    pub fn resolved_score(&self) -> (rerank_core::evalrank::ScoreKind, bool) {
        use rerank_core::evalrank::ScoreKind;
        match self.eval.score {
            ScoreChoice::Sft => (ScoreKind::Sft, false),
            ScoreChoice::Cl => (ScoreKind::Cl, false),
            ScoreChoice::Auto => match self.objective.direction {
                DirectionScheme::Sft => (ScoreKind::Sft, false),
                DirectionScheme::Cl => (ScoreKind::Cl, false),
                DirectionScheme::Learned => (ScoreKind::Cl, true),
            },
        }
    }
}
