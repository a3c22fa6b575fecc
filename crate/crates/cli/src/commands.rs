//! The five subcommands: gen-data, gradcheck, train, probe, eval.
//!
//! Everything is deterministic given the config file: data generation and
//! mining run off fixed seed streams, training is bit-reproducible, and
//! CSV floats are printed with their shortest round-trip representation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use rerank_core::data::{
    file_hash_hex, generate_corpus, mine_negatives, read_corpus, read_examples,
    retriever_scores, write_corpus, write_examples, Corpus, Example, QueryRecord,
};
use rerank_core::evalrank::{build_pool, ndcg_at_k, recall_at_k, rerank, ScoreKind};
use rerank_core::numerics::{PrecisionMode, Rng};
use rerank_core::objectives::{
    DirectionScheme, ObjectiveConfig, WeightScheme, DEFAULT_BASE_BETA,
};
use rerank_core::scorer::{load_checkpoint, save_checkpoint, InitConfig, ScorerParams};
use rerank_core::trainer::{
    gradcheck, train, GradcheckConfig, TrainConfig, TrainOutcome, WeightStats,
};

use crate::config::RunConfigFile;
use crate::files::{write_csv, write_pools, CandidateRecord, PoolRecord};
use crate::CliError;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const POOLS_FILE: &str = "eval_pools.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const COMPARE_FILE: &str = "weight_compare.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "eval_summary.json";

// ─── dataset assembly ───────────────────────────────────────────────────────

/// A generated dataset: corpus, mined training examples, and the held-out
/// queries used for evaluation pools.
#[derive(Debug)]
pub struct Dataset {
    pub corpus: Corpus,
    pub train: Vec<Example>,
    pub eval_queries: Vec<QueryRecord>,
}

/// Generate the corpus, split queries into train/eval, and mine negatives.
///
/// `seed` drives the corpus, the split, and (unless pinned in the config)
/// the mining stream, so probe cells that share a seed see identical data.
pub fn build_dataset(cfg: &RunConfigFile, seed: u64) -> Result<Dataset, CliError> {
    let (corpus, queries) = generate_corpus(
        seed,
        cfg.corpus.n_queries,
        cfg.corpus.n_docs,
        cfg.corpus.dim,
        cfg.corpus.noise,
    )?;

    let mut order: Vec<usize> = (0..queries.len()).collect();
    Rng::substream(seed, 0x5917).shuffle(&mut order);
    let n_eval = ((cfg.corpus.eval_fraction * queries.len() as f64).round() as usize)
        .clamp(1, queries.len().saturating_sub(1).max(1));
    let eval_idx: BTreeSet<usize> = order[..n_eval].iter().copied().collect();

    let mining = rerank_core::data::MiningConfig {
        seed: cfg.mining.seed.unwrap_or(seed),
        ..cfg.to_mining_config()
    };
    let mut mine_rng = Rng::substream(mining.seed, 0x4E9);
    let mut train = Vec::new();
    let mut eval_queries = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        if eval_idx.contains(&i) {
            eval_queries.push(q.clone());
        } else {
            let scores = retriever_scores(&corpus, &q.features);
            train.push(mine_negatives(q, &corpus, &scores, &mining, &mut mine_rng)?);
        }
    }
    Ok(Dataset { corpus, train, eval_queries })
}

fn pool_records(cfg: &RunConfigFile, dataset: &Dataset) -> Result<Vec<PoolRecord>, CliError> {
    dataset
        .eval_queries
        .iter()
        .map(|q| {
            let pool = build_pool(q, &dataset.corpus, cfg.eval.pool_size)?;
            Ok(PoolRecord {
                query_id: q.id.clone(),
                task_id: q.task_id,
                query_features: q.features.clone(),
                candidates: pool
                    .candidates
                    .iter()
                    .map(|(id, score)| CandidateRecord { id: id.clone(), score: *score })
                    .collect(),
                relevant_ids: q.relevant_ids.iter().cloned().collect(),
            })
        })
        .collect()
}

// ─── gen-data ───────────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct GenDataReport {
    /// (file, content hash) for every artifact written.
    pub files: Vec<(PathBuf, String)>,
}

pub fn cmd_gen_data(cfg: &RunConfigFile, force: bool) -> Result<GenDataReport, CliError> {
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let targets = [out.join(CORPUS_FILE), out.join(TRAIN_FILE), out.join(POOLS_FILE)];
    if !force {
        for t in &targets {
            if t.exists() {
                return Err(CliError::Validation(format!(
                    "{} already exists; pass --force to overwrite",
                    t.display()
                )));
            }
        }
    }

    let dataset = build_dataset(cfg, cfg.seed)?;
    write_corpus(&targets[0], &dataset.corpus)?;
    write_examples(&targets[1], &dataset.train)?;
    write_pools(&targets[2], &pool_records(cfg, &dataset)?)?;

    let mut files = Vec::new();
    for t in targets {
        let hash = file_hash_hex(&t)?;
        files.push((t, hash));
    }
    Ok(GenDataReport { files })
}

// ─── train ──────────────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct TrainReport {
    pub model_path: PathBuf,
    pub trace_path: PathBuf,
    pub compare_path: PathBuf,
    pub manifest_path: PathBuf,
    pub final_loss: f64,
    pub steps: usize,
}

fn init_config(cfg: &RunConfigFile) -> InitConfig {
    InitConfig {
        input_dim: cfg.input_dim(),
        hidden_dim: cfg.model.hidden_dim,
        token_count: cfg.model.token_count,
        frozen_head: cfg.model.frozen_head,
        with_learned_direction: cfg.model.with_learned_direction,
    }
}

fn trace_csv_rows(outcome: &TrainOutcome) -> (Vec<String>, Vec<String>) {
    let fmt = |s: &WeightStats| {
        format!("{},{},{},{}", s.mean_w_pos, s.mean_w_neg, s.underflow_pos, s.underflow_neg)
    };
    let trace = outcome
        .trace
        .iter()
        .map(|row| format!("{},{},{}", row.step, fmt(&row.active), row.loss))
        .collect();
    let mut compare = Vec::new();
    for row in &outcome.trace {
        compare.push(format!("{},cl,{}", row.step, fmt(&row.cl)));
        compare.push(format!("{},sft,{}", row.step, fmt(&row.sft)));
    }
    (trace, compare)
}

pub fn cmd_train(cfg: &RunConfigFile) -> Result<TrainReport, CliError> {
    let out = &cfg.out_dir;
    let train_path = out.join(TRAIN_FILE);
    let (examples, warnings) = read_examples(&train_path)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if examples.is_empty() {
        return Err(CliError::Validation(format!("{} holds no examples", train_path.display())));
    }
    let dim = examples[0].query.features.len();
    if dim != cfg.corpus.dim {
        return Err(CliError::Validation(format!(
            "corpus.dim is {} but {} carries {dim}-dimensional features",
            cfg.corpus.dim,
            train_path.display()
        )));
    }

    let model = ScorerParams::init(cfg.seed, &init_config(cfg))?;
    let train_cfg = cfg.to_train_config();
    let outcome = train(model, &examples, &train_cfg)?;

    let model_path = out.join(MODEL_FILE);
    save_checkpoint(&outcome.params, &model_path)?;

    let trace_path = out.join(TRACE_FILE);
    let compare_path = out.join(COMPARE_FILE);
    let (trace_rows, compare_rows) = trace_csv_rows(&outcome);
    write_csv(
        &trace_path,
        "step,mean_w_pos,mean_w_neg,underflow_pos,underflow_neg,loss",
        &trace_rows,
    )?;
    write_csv(
        &compare_path,
        "step,scheme,mean_w_pos,mean_w_neg,underflow_pos,underflow_neg",
        &compare_rows,
    )?;

    let manifest_path = out.join(MANIFEST_FILE);
    write_manifest(&manifest_path, cfg, &train_cfg, &[(TRAIN_FILE, &train_path)])?;

    Ok(TrainReport {
        model_path,
        trace_path,
        compare_path,
        manifest_path,
        final_loss: *outcome.losses.last().unwrap(),
        steps: train_cfg.steps,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a RunConfigFile,
    train_config: &'a TrainConfig,
    data_files: Vec<ManifestFile>,
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    content_hash: String,
}

fn write_manifest(
    path: &Path,
    cfg: &RunConfigFile,
    train_cfg: &TrainConfig,
    data_files: &[(&str, &Path)],
) -> Result<(), CliError> {
    let mut files = Vec::new();
    for (name, p) in data_files {
        files.push(ManifestFile { name: name.to_string(), content_hash: file_hash_hex(p)? });
    }
    let manifest = Manifest { config: cfg, train_config: train_cfg, data_files: files };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

// ─── eval ───────────────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct EvalReport {
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
    pub mean_ndcg: f64,
    pub mean_recall: f64,
    pub pools: usize,
}

#[derive(Serialize)]
struct EvalSummary {
    pools: usize,
    ndcg_k: usize,
    recall_k: usize,
    mean_ndcg: f64,
    mean_recall: f64,
    score_kind: String,
    seed: u64,
    model_path: String,
}

pub fn cmd_eval(cfg: &RunConfigFile, model_path: &Path) -> Result<EvalReport, CliError> {
    let out = &cfg.out_dir;
    let corpus = read_corpus(&out.join(CORPUS_FILE))?;
    let pools = crate::files::read_pools(&out.join(POOLS_FILE))?;
    if pools.is_empty() {
        return Err(CliError::Validation(format!(
            "{} holds no evaluation pools",
            out.join(POOLS_FILE).display()
        )));
    }
    let model = load_checkpoint(model_path)?;
    let (kind, use_learned) = cfg.resolved_score();
    if use_learned && model.head.learned_direction.is_none() {
        return Err(CliError::Validation(
            "evaluation needs the learned direction row but the checkpoint has none".into(),
        ));
    }

    let mut rows = Vec::with_capacity(pools.len() * 2);
    let mut sum_ndcg = 0.0;
    let mut sum_recall = 0.0;
    for record in &pools {
        let pool = record.to_pool()?;
        let ranked = rerank(&model, kind, use_learned, &pool, &record.query_features, &corpus)?;
        let ndcg = ndcg_at_k(&ranked, &pool.relevant_ids, cfg.eval.ndcg_k);
        let recall = recall_at_k(&ranked, &pool.relevant_ids, cfg.eval.recall_k);
        sum_ndcg += ndcg;
        sum_recall += recall;
        rows.push(format!("{},ndcg,{},{}", record.query_id, cfg.eval.ndcg_k, ndcg));
        rows.push(format!("{},recall,{},{}", record.query_id, cfg.eval.recall_k, recall));
    }

    let metrics_path = out.join(METRICS_FILE);
    write_csv(&metrics_path, "query_id,metric,k,value", &rows)?;

    let summary = EvalSummary {
        pools: pools.len(),
        ndcg_k: cfg.eval.ndcg_k,
        recall_k: cfg.eval.recall_k,
        mean_ndcg: sum_ndcg / pools.len() as f64,
        mean_recall: sum_recall / pools.len() as f64,
        score_kind: format!("{kind:?}").to_lowercase(),
        seed: cfg.seed,
        model_path: model_path.display().to_string(),
    };
    let summary_path = out.join(SUMMARY_FILE);
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?,
    )
    .map_err(|e| CliError::Io(format!("{}: {e}", summary_path.display())))?;

    Ok(EvalReport {
        metrics_path,
        summary_path,
        mean_ndcg: summary.mean_ndcg,
        mean_recall: summary.mean_recall,
        pools: pools.len(),
    })
}

// ─── gradcheck ──────────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct GradcheckLine {
    pub label: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug)]
pub struct GradcheckRunReport {
    pub lines: Vec<GradcheckLine>,
    pub trials: usize,
}

impl GradcheckRunReport {
    pub fn all_passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }
}

/// Every weight × direction combination the probes use, finite-difference
/// checked over fresh random instances.
pub fn cmd_gradcheck(cfg: &RunConfigFile) -> Result<GradcheckRunReport, CliError> {
    if cfg.objective.precision == PrecisionMode::Emulated16 {
        return Err(CliError::Validation(
            "gradcheck refuses Emulated16: the rounded weight chain is not differentiable; \
             rerun with precision = \"full64\""
                .into(),
        ));
    }

    let tau = cfg.probe.tau_values.get(1).copied().unwrap_or(1e-3);
    let mut combos: Vec<(ObjectiveConfig, usize, bool)> = Vec::new();
    for weight in [WeightScheme::Cl, WeightScheme::Sft] {
        for direction in [DirectionScheme::Cl, DirectionScheme::Sft] {
            combos.push((ObjectiveConfig::new(weight, direction), 2, false));
        }
    }
    for weight in [
        WeightScheme::Base { beta: DEFAULT_BASE_BETA },
        WeightScheme::BaseTauMask { beta: DEFAULT_BASE_BETA, tau },
        WeightScheme::BaseTimesSft { beta: DEFAULT_BASE_BETA },
        WeightScheme::Const { value: 1.0 },
    ] {
        combos.push((ObjectiveConfig::new(weight, DirectionScheme::Sft), 2, false));
    }
    combos.push((ObjectiveConfig::new(WeightScheme::Cl, DirectionScheme::Learned), 2, true));
    combos.push((ObjectiveConfig::new(WeightScheme::Sft, DirectionScheme::Learned), 2, true));
    let mut multitoken = ObjectiveConfig::new(WeightScheme::Sft, DirectionScheme::Sft);
    multitoken.token_set_size = 4;
    combos.push((multitoken, 4, false));

    let base_seed = cfg.gradcheck.seed.unwrap_or(cfg.seed);
    let check = GradcheckConfig {
        epsilon_scale: cfg.gradcheck.epsilon_scale,
        tolerance: cfg.gradcheck.tolerance,
        ..GradcheckConfig::default()
    };

    let mut lines = Vec::new();
    for (objective, token_count, with_learned) in &combos {
        let mut worst = 0.0f64;
        for trial in 0..cfg.gradcheck.trials {
            let seed = base_seed.wrapping_add(trial as u64);
            let (corpus, queries) = generate_corpus(seed, 4, 64, 8, 0.25)?;
            let mining = rerank_core::data::MiningConfig { n_total: 4, seed, ..Default::default() };
            let scores = retriever_scores(&corpus, &queries[0].features);
            let example =
                mine_negatives(&queries[0], &corpus, &scores, &mining, &mut Rng::seeded(seed))?;
            let model = ScorerParams::init(
                seed,
                &InitConfig {
                    input_dim: 24,
                    hidden_dim: 8,
                    token_count: *token_count,
                    frozen_head: false,
                    with_learned_direction: *with_learned,
                },
            )?;
            let report = gradcheck(&model, &example, objective, &check)?;
            worst = worst.max(report.max_rel_err);
        }
        let label = if objective.token_set_size > 2 {
            format!("{};k={}", objective.label(), objective.token_set_size)
        } else {
            objective.label()
        };
        lines.push(GradcheckLine {
            label,
            max_rel_err: worst,
            passed: worst <= cfg.gradcheck.tolerance,
        });
    }

    Ok(GradcheckRunReport { lines, trials: cfg.gradcheck.trials })
}

// ─── probe ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeName {
    Components,
    Tau,
    Precision,
    Tokens,
    Direction,
    Negatives,
}

impl ProbeName {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "components" => Ok(ProbeName::Components),
            "tau" => Ok(ProbeName::Tau),
            "precision" => Ok(ProbeName::Precision),
            "tokens" => Ok(ProbeName::Tokens),
            "direction" => Ok(ProbeName::Direction),
            "negatives" => Ok(ProbeName::Negatives),
            other => Err(CliError::Validation(format!(
                "unknown probe `{other}`; expected components|tau|precision|tokens|direction|negatives"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeName::Components => "components",
            ProbeName::Tau => "tau",
            ProbeName::Precision => "precision",
            ProbeName::Tokens => "tokens",
            ProbeName::Direction => "direction",
            ProbeName::Negatives => "negatives",
        }
    }
}

/// One training/evaluation configuration inside a probe grid.
#[derive(Debug, Clone)]
pub struct CellSpec {
    pub label: String,
    pub objective: ObjectiveConfig,
    pub token_count: usize,
    pub frozen_head: bool,
    pub with_learned: bool,
    pub n_negatives: usize,
}

impl CellSpec {
    pub fn new(label: impl Into<String>, objective: ObjectiveConfig, n_negatives: usize) -> Self {
        CellSpec {
            label: label.into(),
            token_count: objective.token_set_size.max(2),
            with_learned: objective.direction == DirectionScheme::Learned,
            frozen_head: false,
            objective,
            n_negatives,
        }
    }
}

/// Result of one probe training run.
#[derive(Debug)]
pub struct CellResult {
    pub ndcg: f64,
    pub recall: f64,
    pub outcome: TrainOutcome,
    pub n_negatives: usize,
}

/// Train one cell at one seed and evaluate it on that seed's held-out pools.
pub fn run_cell(cfg: &RunConfigFile, spec: &CellSpec, seed: u64) -> Result<CellResult, CliError> {
    let mut data_cfg = cfg.clone();
    data_cfg.mining.n_total = spec.n_negatives;
    data_cfg.mining.seed = None;
    let dataset = build_dataset(&data_cfg, seed)?;

    let model = ScorerParams::init(
        seed,
        &InitConfig {
            input_dim: cfg.input_dim(),
            hidden_dim: cfg.model.hidden_dim,
            token_count: spec.token_count,
            frozen_head: spec.frozen_head,
            with_learned_direction: spec.with_learned,
        },
    )?;
    let train_cfg = TrainConfig {
        objective: spec.objective.clone(),
        steps: cfg.probe.steps,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        optimizer: cfg.train.optimizer,
        seed,
        log_every: cfg.train.log_every,
    };
    let outcome = train(model, &dataset.train, &train_cfg)?;

    let (kind, use_learned) = match spec.objective.direction {
        DirectionScheme::Sft => (ScoreKind::Sft, false),
        DirectionScheme::Cl => (ScoreKind::Cl, false),
        DirectionScheme::Learned => (ScoreKind::Cl, true),
    };
    let mut sum_ndcg = 0.0;
    let mut sum_recall = 0.0;
    for q in &dataset.eval_queries {
        let pool = build_pool(q, &dataset.corpus, cfg.eval.pool_size)?;
        let ranked = rerank(&outcome.params, kind, use_learned, &pool, &q.features, &dataset.corpus)?;
        sum_ndcg += ndcg_at_k(&ranked, &pool.relevant_ids, cfg.eval.ndcg_k);
        sum_recall += recall_at_k(&ranked, &pool.relevant_ids, cfg.eval.recall_k);
    }
    let n = dataset.eval_queries.len().max(1) as f64;
    Ok(CellResult {
        ndcg: sum_ndcg / n,
        recall: sum_recall / n,
        outcome,
        n_negatives: spec.n_negatives,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub probe: String,
    pub cell: String,
    pub seed: u64,
    pub ndcg: f64,
    pub recall: f64,
}

#[derive(Debug)]
pub struct ProbeOutput {
    pub csv_path: PathBuf,
    pub aux_path: Option<PathBuf>,
    pub rows: Vec<ProbeRow>,
}

pub fn probe_cells(cfg: &RunConfigFile, probe: ProbeName) -> Vec<CellSpec> {
    let n = cfg.mining.n_total;
    match probe {
        ProbeName::Components => {
            let mut cells = Vec::new();
            for weight in [WeightScheme::Sft, WeightScheme::Cl] {
                for direction in [DirectionScheme::Sft, DirectionScheme::Cl] {
                    let objective = ObjectiveConfig::new(weight, direction);
                    cells.push(CellSpec::new(objective.label(), objective, n));
                }
            }
            cells
        }
        ProbeName::Tau => cfg
            .probe
            .tau_values
            .iter()
            .map(|&tau| {
                let objective = ObjectiveConfig::new(
                    WeightScheme::BaseTauMask { beta: DEFAULT_BASE_BETA, tau },
                    DirectionScheme::Sft,
                );
                CellSpec::new(format!("tau={tau:e}"), objective, n)
            })
            .collect(),
        ProbeName::Precision => [PrecisionMode::Full64, PrecisionMode::Full32, PrecisionMode::Emulated16]
            .into_iter()
            .map(|mode| {
                let mut objective = ObjectiveConfig::new(WeightScheme::Cl, DirectionScheme::Cl);
                objective.precision = mode;
                let label = format!("precision={}", mode_label(mode));
                CellSpec::new(label, objective, n)
            })
            .collect(),
        ProbeName::Tokens => cfg
            .probe
            .token_counts
            .iter()
            .map(|&k| {
                let mut objective = ObjectiveConfig::new(WeightScheme::Sft, DirectionScheme::Sft);
                objective.token_set_size = k;
                CellSpec::new(format!("tokens={k}"), objective, n)
            })
            .collect(),
        ProbeName::Direction => {
            let mut cells = Vec::new();
            for (direction, weight) in [
                (DirectionScheme::Sft, WeightScheme::Sft),
                (DirectionScheme::Cl, WeightScheme::Cl),
                (DirectionScheme::Learned, WeightScheme::Cl),
            ] {
                for frozen in [false, true] {
                    let objective = ObjectiveConfig::new(weight, direction);
                    let mut spec = CellSpec::new(
                        format!("direction={};frozen={frozen}", direction.label()),
                        objective,
                        n,
                    );
                    spec.frozen_head = frozen;
                    cells.push(spec);
                }
            }
            cells
        }
        ProbeName::Negatives => cfg
            .probe
            .negative_counts
            .iter()
            .map(|&count| {
                let objective = ObjectiveConfig::new(WeightScheme::Sft, DirectionScheme::Sft);
                CellSpec::new(format!("negatives={count}"), objective, count)
            })
            .collect(),
    }
}

fn mode_label(mode: PrecisionMode) -> &'static str {
    match mode {
        PrecisionMode::Full64 => "full64",
        PrecisionMode::Full32 => "full32",
        PrecisionMode::Emulated16 => "emulated16",
    }
}

/// Mean of a scheme's pooled underflow fraction over the final 20% of a
/// run's trace, weighting positives and negatives by their 1:N counts.
pub fn late_underflow(outcome: &TrainOutcome, n_negatives: usize, scheme_cl: bool) -> f64 {
    let last = outcome.trace.last().map_or(0, |r| r.step);
    let cutoff = (last as f64 * 0.8).floor() as usize;
    let rows: Vec<&WeightStats> = outcome
        .trace
        .iter()
        .filter(|r| r.step > cutoff)
        .map(|r| if scheme_cl { &r.cl } else { &r.sft })
        .collect();
    if rows.is_empty() {
        return 0.0;
    }
    let pooled: f64 = rows
        .iter()
        .map(|s| (s.underflow_pos + n_negatives as f64 * s.underflow_neg) / (1 + n_negatives) as f64)
        .sum();
    pooled / rows.len() as f64
}

/// Run every cell of a probe across the configured seeds.
pub fn run_probe(cfg: &RunConfigFile, probe: ProbeName) -> Result<(Vec<ProbeRow>, Vec<String>), CliError> {
    let cells = probe_cells(cfg, probe);
    let mut rows = Vec::new();
    let mut aux = Vec::new();
    for spec in &cells {
        for &seed in &cfg.probe.seeds {
            let result = run_cell(cfg, spec, seed)?;
            rows.push(ProbeRow {
                probe: probe.as_str().into(),
                cell: spec.label.clone(),
                seed,
                ndcg: result.ndcg,
                recall: result.recall,
            });
            if probe == ProbeName::Precision {
                aux.push(format!(
                    "{},{seed},{},{}",
                    spec.label,
                    late_underflow(&result.outcome, result.n_negatives, true),
                    late_underflow(&result.outcome, result.n_negatives, false),
                ));
            }
        }
    }
    Ok((rows, aux))
}

pub fn cmd_probe(cfg: &RunConfigFile, probe: ProbeName) -> Result<ProbeOutput, CliError> {
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let (rows, aux) = run_probe(cfg, probe)?;

    let csv_path = out.join(format!("probe_{}.csv", probe.as_str()));
    let header = format!("probe,cell,seed,ndcg_at_{},recall_at_{}", cfg.eval.ndcg_k, cfg.eval.recall_k);
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{},{},{},{},{}", r.probe, r.cell, r.seed, r.ndcg, r.recall))
        .collect();
    write_csv(&csv_path, &header, &lines)?;

    let aux_path = if probe == ProbeName::Precision {
        let p = out.join("probe_precision_underflow.csv");
        write_csv(&p, "cell,seed,underflow_cl,underflow_sft", &aux)?;
        Some(p)
    } else {
        None
    };

    Ok(ProbeOutput { csv_path, aux_path, rows })
}

// ─── small shared helpers ───────────────────────────────────────────────────


/// True when corpus generation knobs make `data::Example` mining feasible.
pub fn ensure_feasible(cfg: &RunConfigFile) -> Result<(), CliError> {
    let needed = cfg.mining.n_total;
    if cfg.corpus.n_docs <= needed {
        return Err(CliError::Validation(format!(
            "corpus.n_docs = {} cannot supply {needed} negatives",
            cfg.corpus.n_docs
        )));
    }
    Ok(())
}
