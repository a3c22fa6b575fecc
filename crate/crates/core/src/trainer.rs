//! Deterministic mini-batch training and the finite-difference harness.
//!
//! Batches are assembled from a fixed per-epoch shuffle of the run seed,
//! gradients merge in example-index order, and the optimizer step is
//! single-threaded, so identical (seed, config, data) reproduce loss curves
//! bit for bit. Every log point records batch-mean weights for *both* the
//! contrastive and classification schemes from the same logits, plus the
//! fraction of each that would round to exactly zero under binary16
//! emulation.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::numerics::{PrecisionMode, Rng};
use crate::objectives::{
    closed_form_grad, compute_weights, loss_cl_with_temperature, loss_sft_merged,
    loss_sft_multitoken, unified_scalar, DirectionScheme, ObjectiveConfig, WeightScheme,
};
use crate::scorer::{
    backward, encode_cached, project, ForwardCache, GradAccum, PairInput, PairLogits, ScorerParams,
};
use crate::{Error, Result};

/// Parameter-update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    AdamLike { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::AdamLike { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Training-run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub log_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Batch-mean weight statistics for one scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub mean_w_pos: f64,
    pub mean_w_neg: f64,
    /// Share of positive weights that are > 0 in 64-bit arithmetic but
    /// exactly 0 when the weight chain is recomputed under binary16.
    pub underflow_pos: f64,
    pub underflow_neg: f64,
}

/// One trace log point.
///
/// `active` describes the weight scheme actually training; `cl` and `sft`
/// are recomputed from the same batch logits so the two schemes stay
/// comparable point by point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTraceRow {
    pub step: usize,
    pub loss: f64,
    pub active: WeightStats,
    pub cl: WeightStats,
    pub sft: WeightStats,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ScorerParams,
    pub trace: Vec<WeightTraceRow>,
    /// Batch-mean surrogate loss per step.
    pub losses: Vec<f64>,
}

struct OptimizerState {
    kind: OptimizerKind,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        OptimizerState { kind, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn apply(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for i in 0..theta.len() {
                    self.m[i] = momentum * self.m[i] + grad[i];
                    theta[i] -= lr * self.m[i];
                }
            }
            OptimizerKind::AdamLike { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for i in 0..theta.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    theta[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// Forward all pairs of one example, keeping the backward caches.
pub fn forward_pairs(
    params: &ScorerParams,
    inputs: &[PairInput],
    use_learned: bool,
) -> Result<(Vec<PairLogits>, Vec<ForwardCache>)> {
    let mut logits = Vec::with_capacity(inputs.len());
    let mut caches = Vec::with_capacity(inputs.len());
    for input in inputs {
        let (h, cache) = encode_cached(params, input)?;
        logits.push(project(&params.head, &h, use_learned)?);
        caches.push(cache);
    }
    Ok((logits, caches))
}

struct WeightCollector {
    pos64: Vec<f64>,
    neg64: Vec<f64>,
    pos16: Vec<f64>,
    neg16: Vec<f64>,
}

impl WeightCollector {
    fn new() -> Self {
        WeightCollector { pos64: vec![], neg64: vec![], pos16: vec![], neg16: vec![] }
    }

    fn push(&mut self, config: &ObjectiveConfig, pairs: &[PairLogits]) -> Result<()> {
        let mut full = config.clone();
        full.precision = PrecisionMode::Full64;
        let mut half = config.clone();
        half.precision = PrecisionMode::Emulated16;
        let w64 = compute_weights(&full, pairs)?;
        let w16 = compute_weights(&half, pairs)?;
        self.pos64.push(w64.w_pos);
        self.pos16.push(w16.w_pos);
        self.neg64.extend_from_slice(&w64.w_neg);
        self.neg16.extend_from_slice(&w16.w_neg);
        Ok(())
    }

    fn stats(&self) -> WeightStats {
        WeightStats {
            mean_w_pos: mean(&self.pos64),
            mean_w_neg: mean(&self.neg64),
            underflow_pos: underflow_fraction(&self.pos64, &self.pos16),
            underflow_neg: underflow_fraction(&self.neg64, &self.neg16),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn underflow_fraction(full: &[f64], half: &[f64]) -> f64 {
    if full.is_empty() {
        return 0.0;
    }
    let n = full
        .iter()
        .zip(half)
        .filter(|(&w64, &w16)| w64 > 0.0 && w16 == 0.0)
        .count();
    n as f64 / full.len() as f64
}

/// Train a scorer on examples under the configured objective.
///
/// Deterministic given (seed, config, data). Aborts with the step index if
/// the surrogate loss goes non-finite.
pub fn train(initial: ScorerParams, data: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training needs at least one example".into()));
    }
    let use_learned = cfg.objective.direction.uses_learned();
    if use_learned && initial.head.learned_direction.is_none() {
        return Err(Error::InvalidConfig(
            "learned direction objective needs a model initialized with one".into(),
        ));
    }

    let inputs: Vec<Vec<PairInput>> = data.iter().map(Example::pair_inputs).collect();

    let mut params = initial;
    let mut opt = OptimizerState::new(cfg.optimizer, params.param_count());
    let mut shuffle_rng = Rng::substream(cfg.seed, 0xBA7C);
    let mut order: Vec<usize> = (0..data.len()).collect();
    shuffle_rng.shuffle(&mut order);
    let mut cursor = 0usize;

    let mut cl_probe = ObjectiveConfig::new(WeightScheme::Cl, cfg.objective.direction);
    cl_probe.cl_temperature = cfg.objective.cl_temperature;
    let sft_probe = ObjectiveConfig::new(WeightScheme::Sft, cfg.objective.direction);

    let mut trace = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut accum = GradAccum::zeros_like(&params);
        let mut batch_loss = 0.0;
        let mut active_w = WeightCollector::new();
        let mut cl_w = WeightCollector::new();
        let mut sft_w = WeightCollector::new();

        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                shuffle_rng.shuffle(&mut order);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;

            let (logits, caches) = forward_pairs(&params, &inputs[idx], use_learned)?;
            // Logits must stay finite, and inside binary16 range: the weight
            // comparison always recomputes both schemes under Emulated16, so
            // a logit past the fp16 overflow point means the run diverged.
            let in_range = |x: f64| x.is_finite() && crate::numerics::round_binary16(x).is_finite();
            if logits
                .iter()
                .any(|l| !in_range(l.s_yes) || !in_range(l.s_no) || l.extra.iter().any(|&x| !in_range(x)))
            {
                return Err(Error::NonFiniteLoss { step });
            }
            let packet = closed_form_grad(&cfg.objective, &logits, &params.head)?;
            batch_loss += packet.loss;
            for (g, cache) in packet.dlogits.iter().zip(&caches) {
                backward(&params, cache, g, use_learned, &mut accum)?;
            }
            // like-for-like weight logging from the same logits
            active_w.push(&cfg.objective, &logits)?;
            if inputs[idx].len() >= 2 {
                cl_w.push(&cl_probe, &logits)?;
            }
            sft_w.push(&sft_probe, &logits)?;
        }

        let loss = batch_loss / cfg.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        accum.scale(1.0 / cfg.batch_size as f64);

        let mut theta = params.to_flat();
        opt.apply(&mut theta, &accum.to_flat(), cfg.learning_rate);
        params.assign_from_flat(&theta)?;

        losses.push(loss);
        if step % cfg.log_every == 0 || step == cfg.steps {
            trace.push(WeightTraceRow {
                step,
                loss,
                active: active_w.stats(),
                cl: cl_w.stats(),
                sft: sft_w.stats(),
            });
        }
    }

    Ok(TrainOutcome { params, trace, losses })
}

// ─── gradient checking ──────────────────────────────────────────────────────

/// Tolerances for [`gradcheck`].
#[derive(Debug, Clone, Copy)]
pub struct GradcheckConfig {
    /// Per-parameter step is `epsilon_scale · max(1, |θ|)`.
    pub epsilon_scale: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Denominator floor: below this magnitude the comparison is absolute,
    /// keeping central-difference cancellation noise (~1e-10 for O(1)
    /// losses) from inflating the relative error of near-zero gradients.
    pub denom_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { epsilon_scale: 1e-6, tolerance: 1e-5, denom_floor: 1e-4 }
    }
}

/// Which scalar the numeric side differenced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradcheckMode {
    /// The real example loss (matched weight/direction pairs only).
    DirectLoss,
    /// The unified scalar with weights frozen at their unperturbed values —
    /// the correct target for mixed weight/direction combinations, whose
    /// gradients are defined through the stop-gradient.
    FrozenWeights,
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub mode: GradcheckMode,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub params_checked: usize,
    pub passed: bool,
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compare the analytic parameter gradient against central differences of
/// the direct loss (matched configurations) or of the frozen-weight unified
/// scalar (all other combinations).
///
/// Refuses binary16-emulated objectives: difference quotients through a
/// rounding staircase are meaningless.
pub fn gradcheck(
    model: &ScorerParams,
    example: &Example,
    objective: &ObjectiveConfig,
    check: &GradcheckConfig,
) -> Result<GradcheckReport> {
    objective.validate()?;
    if objective.precision == PrecisionMode::Emulated16 {
        return Err(Error::InvalidConfig(
            "gradcheck refuses Emulated16: the rounded weight chain is not differentiable".into(),
        ));
    }

    // Freezing is a training policy, not part of the derivative being
    // validated; bypass it so token-row entries can be compared too.
    let mut params = model.clone();
    params.head.frozen = false;

    let use_learned = objective.direction.uses_learned();
    let inputs = example.pair_inputs();
    let (logits, caches) = forward_pairs(&params, &inputs, use_learned)?;

    let mode = match (objective.weight, objective.direction) {
        (WeightScheme::Cl, DirectionScheme::Cl) => GradcheckMode::DirectLoss,
        (WeightScheme::Sft, DirectionScheme::Sft) => GradcheckMode::DirectLoss,
        _ => GradcheckMode::FrozenWeights,
    };
    let frozen_weights = compute_weights(objective, &logits)?;

    // analytic path: closed-form per-pair gradients through backward
    let packet = closed_form_grad(objective, &logits, &params.head)?;
    let mut accum = GradAccum::zeros_like(&params);
    for (g, cache) in packet.dlogits.iter().zip(&caches) {
        backward(&params, cache, g, use_learned, &mut accum)?;
    }
    let analytic = accum.to_flat();

    let objective = objective.clone();
    let eval = |flat: &[f64]| -> Result<f64> {
        let mut p = params.clone();
        p.assign_from_flat(flat)?;
        let (logits, _) = forward_pairs(&p, &inputs, use_learned)?;
        match mode {
            GradcheckMode::DirectLoss => match objective.weight {
                WeightScheme::Cl => {
                    let yes: Vec<f64> = logits.iter().map(|l| l.s_yes).collect();
                    loss_cl_with_temperature(&yes, objective.cl_temperature)
                }
                _ => {
                    if objective.token_set_size > 2 {
                        let rows: Vec<Vec<f64>> = logits.iter().map(PairLogits::to_vec).collect();
                        let labels: Vec<usize> =
                            (0..logits.len()).map(|i| usize::from(i != 0)).collect();
                        loss_sft_multitoken(&rows, &labels)
                    } else {
                        loss_sft_merged(&logits)
                    }
                }
            },
            GradcheckMode::FrozenWeights => {
                unified_scalar(&frozen_weights, objective.direction, &logits, objective.cl_temperature)
            }
        }
    };

    let theta = params.to_flat();
    let mut report = GradcheckReport {
        mode,
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        params_checked: theta.len(),
        passed: true,
    };
    for i in 0..theta.len() {
        let eps = check.epsilon_scale * theta[i].abs().max(1.0);
        let mut plus = theta.clone();
        plus[i] += eps;
        let mut minus = theta.clone();
        minus[i] -= eps;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let err = rel_err(analytic[i], numeric, check.denom_floor);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    report.passed = report.max_rel_err <= check.tolerance;
    Ok(report)
}
