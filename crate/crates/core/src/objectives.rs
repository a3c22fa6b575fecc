//! Reranking objectives decomposed into weight and direction components.
//!
//! One training example holds a query, one positive document, and N
//! negatives. Two classic per-example losses apply:
//!
//! - contrastive: InfoNCE over the yes-logits of all N+1 pairs, and
//! - classification: independent yes/no cross-entropy per pair, summed.
//!
//! The per-document gradient of either loss w.r.t. the hidden feature has
//! the shape `∓ weight · direction`: a detached scalar weight (update
//! magnitude) times a direction vector built from the head's token rows.
//! [`closed_form_grad`] evaluates those closed forms, and [`unified_loss`]
//! recombines any weight scheme with any direction scheme — its gradient
//! with the weights held constant reproduces the closed forms exactly, so
//! weight and direction can be ablated independently.

use serde::{Deserialize, Serialize};

use crate::numerics::{logistic_in, logsumexp, softmax, softmax_in, PrecisionMode};
use crate::scorer::{PairLogits, ProjectionHead};
use crate::{Error, Result};

/// Softmax temperature used by the constant-positive baseline weights.
pub const DEFAULT_BASE_BETA: f64 = 5e-2;

/// How per-document weights are computed (always detached).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightScheme {
    /// Softmax over the example's yes-logits: the positive gets the missing
    /// probability mass, each negative its own softmax share.
    Cl,
    /// Per-pair classification weights: 1−σ for the positive, σ for each
    /// negative, no cross-document coupling.
    Sft,
    /// Constant 1 on the positive; negatives share a temperature-β softmax
    /// of their σ scores.
    Base { beta: f64 },
    /// `Base` plus confidence masking: weights of pairs already classified
    /// within τ of certainty are zeroed.
    BaseTauMask { beta: f64, tau: f64 },
    /// `Base` multiplied entrywise by the per-pair classification weights.
    BaseTimesSft { beta: f64 },
    /// Every weight pinned to the same constant.
    Const { value: f64 },
}

impl WeightScheme {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            WeightScheme::Cl | WeightScheme::Sft => Ok(()),
            WeightScheme::Base { beta } | WeightScheme::BaseTimesSft { beta } => {
                if beta > 0.0 && beta.is_finite() {
                    Ok(())
                } else {
                    bad(format!("weight temperature beta must be positive, got {beta}"))
                }
            }
            WeightScheme::BaseTauMask { beta, tau } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    bad(format!("weight temperature beta must be positive, got {beta}"))
                } else if tau > 0.0 && tau < 0.5 {
                    Ok(())
                } else {
                    bad(format!("mask threshold tau must lie in (0, 0.5), got {tau}"))
                }
            }
            WeightScheme::Const { value } => {
                if (0.0..=1.0).contains(&value) {
                    Ok(())
                } else {
                    bad(format!("constant weight must lie in [0, 1], got {value}"))
                }
            }
        }
    }

    /// Short config label for CSV cells and reports.
    pub fn label(&self) -> String {
        match *self {
            WeightScheme::Cl => "cl".into(),
            WeightScheme::Sft => "sft".into(),
            WeightScheme::Base { .. } => "base".into(),
            WeightScheme::BaseTauMask { tau, .. } => format!("base_tau{tau:e}"),
            WeightScheme::BaseTimesSft { .. } => "base_x_sft".into(),
            WeightScheme::Const { value } => format!("const{value}"),
        }
    }
}

/// Which direction vector multiplies the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionScheme {
    /// Yes row only.
    Cl,
    /// Yes row minus no row.
    Sft,
    /// A separately trained row replacing the yes row.
    Learned,
}

impl DirectionScheme {
    pub fn label(self) -> &'static str {
        match self {
            DirectionScheme::Cl => "cl",
            DirectionScheme::Sft => "sft",
            DirectionScheme::Learned => "learned",
        }
    }

    /// Whether the yes slot reads the learned row instead of the yes token row.
    pub fn uses_learned(self) -> bool {
        self == DirectionScheme::Learned
    }
}

/// Batch reduction; examples are summed internally, the batch is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    MeanOverBatch,
}

/// Full objective configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub weight: WeightScheme,
    pub direction: DirectionScheme,
    pub precision: PrecisionMode,
    /// Number of head token rows in play; values above 2 switch to the
    /// expanded-token classification loss.
    pub token_set_size: usize,
    pub reduction: Reduction,
    /// InfoNCE temperature; 1 recovers the plain loss and is the only value
    /// used by the acceptance runs.
    pub cl_temperature: f64,
}

impl ObjectiveConfig {
    pub fn new(weight: WeightScheme, direction: DirectionScheme) -> Self {
        ObjectiveConfig {
            weight,
            direction,
            precision: PrecisionMode::Full64,
            token_set_size: 2,
            reduction: Reduction::MeanOverBatch,
            cl_temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weight.validate()?;
        if self.token_set_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "token_set_size must be at least 2, got {}",
                self.token_set_size
            )));
        }
        if self.token_set_size > 2
            && (self.weight != WeightScheme::Sft || self.direction != DirectionScheme::Sft)
        {
            return Err(Error::InvalidConfig(
                "token_set_size above 2 is only valid with the expanded-token classification loss \
                 (weight=sft, direction=sft)"
                    .into(),
            ));
        }
        if !(self.cl_temperature > 0.0 && self.cl_temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cl_temperature must be positive, got {}",
                self.cl_temperature
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("w={};d={}", self.weight.label(), self.direction.label())
    }
}

/// Detached scalar weights of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub w_pos: f64,
    pub w_neg: Vec<f64>,
}

/// Per-pair gradients of one example's loss.
#[derive(Debug, Clone)]
pub struct GradPacket {
    /// dL/d(s_yes, s_no, extras) per pair, index 0 = positive.
    pub dlogits: Vec<Vec<f64>>,
    /// dL/dh per pair.
    pub dh: Vec<Vec<f64>>,
    /// Scalar loss value. For the unified loss this is the detached-weight
    /// surrogate, not the InfoNCE / cross-entropy value.
    pub loss: f64,
}

// ─── relevance scores ───────────────────────────────────────────────────────

/// Classification relevance score: two-way softmax of (yes, no) logits,
/// i.e. logistic(s_yes − s_no). Strictly monotone in s_yes.
pub fn relevance_score_sft(l: &PairLogits) -> f64 {
    logistic_in(l.s_yes - l.s_no, PrecisionMode::Full64)
}

/// Contrastive relevance score: the raw yes logit.
pub fn relevance_score_cl(l: &PairLogits) -> f64 {
    l.s_yes
}

fn sigma_in(l: &PairLogits, mode: PrecisionMode) -> f64 {
    logistic_in(mode.quantize(l.s_yes - l.s_no), mode)
}

// ─── example losses ─────────────────────────────────────────────────────────

/// InfoNCE over the example's yes-logits (index 0 = positive).
///
/// Requires at least one negative; the contrastive loss is undefined
/// without anything to contrast against.
pub fn loss_cl(yes_logits: &[f64]) -> Result<f64> {
    loss_cl_with_temperature(yes_logits, 1.0)
}

/// InfoNCE with a temperature divisor on the logits (1 = plain loss).
pub fn loss_cl_with_temperature(yes_logits: &[f64], temperature: f64) -> Result<f64> {
    if yes_logits.len() < 2 {
        return Err(Error::InvalidInput(
            "contrastive loss needs at least one negative".into(),
        ));
    }
    let scaled: Vec<f64> = yes_logits.iter().map(|x| x / temperature).collect();
    Ok(logsumexp(&scaled)? - scaled[0])
}

/// log(1 + e^z), overflow-safe.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Merged per-pair classification loss of one example (index 0 = positive):
/// −log σ(pair₀) − Σ log(1 − σ(pairᵢ)). Accepts N = 0 (a single binary term).
pub fn loss_sft_merged(pairs: &[PairLogits]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("classification loss needs a positive pair".into()));
    }
    let mut total = softplus(-(pairs[0].s_yes - pairs[0].s_no));
    for p in &pairs[1..] {
        total += softplus(p.s_yes - p.s_no);
    }
    Ok(total)
}

/// Cross-entropy over an expanded token set: Σ over pairs of
/// −log softmax(row)[label]. Reduces to [`loss_sft_merged`] when K = 2.
pub fn loss_sft_multitoken(token_logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if token_logits.is_empty() || token_logits.len() != labels.len() {
        return Err(Error::InvalidInput(
            "expanded-token loss needs one label per logit row".into(),
        ));
    }
    let k = token_logits[0].len();
    if k < 2 {
        return Err(Error::InvalidInput("token rows need at least yes and no slots".into()));
    }
    let mut total = 0.0;
    for (row, &label) in token_logits.iter().zip(labels) {
        if row.len() != k {
            return Err(Error::DimensionMismatch {
                context: "expanded-token logit row",
                expected: k,
                got: row.len(),
            });
        }
        if label >= k {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {k} tokens"
            )));
        }
        total += logsumexp(row)? - row[label];
    }
    Ok(total)
}

// ─── weights ────────────────────────────────────────────────────────────────

/// Contrastive weights: softmax of the yes-logits under the chosen
/// precision; the positive takes the complementary mass.
pub fn weights_cl(yes_logits: &[f64], mode: PrecisionMode) -> Result<WeightSet> {
    if yes_logits.len() < 2 {
        return Err(Error::InvalidInput(
            "contrastive weights need at least one negative".into(),
        ));
    }
    let p = softmax_in(yes_logits, mode)?;
    Ok(WeightSet {
        w_pos: mode.quantize(1.0 - p[0]),
        w_neg: p[1..].to_vec(),
    })
}

/// Classification weights: 1−σ for the positive, σ per negative; strictly
/// per-pair, no coupling across documents.
pub fn weights_sft(pairs: &[PairLogits], mode: PrecisionMode) -> Result<WeightSet> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("classification weights need a positive pair".into()));
    }
    let w_pos = logistic_in(mode.quantize(pairs[0].s_no - pairs[0].s_yes), mode);
    let w_neg = pairs[1..].iter().map(|p| sigma_in(p, mode)).collect();
    Ok(WeightSet { w_pos, w_neg })
}

/// Constant-positive baseline: w_pos = 1 exactly, negatives share a
/// temperature-β softmax of their σ scores (so they sum to 1).
pub fn weights_base(neg_scores: &[f64], beta: f64, mode: PrecisionMode) -> Result<WeightSet> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "weight temperature beta must be positive, got {beta}"
        )));
    }
    if neg_scores.is_empty() {
        return Err(Error::InvalidInput("baseline weights need at least one negative".into()));
    }
    let scaled: Vec<f64> = neg_scores.iter().map(|s| mode.quantize(s / beta)).collect();
    Ok(WeightSet {
        w_pos: 1.0,
        w_neg: softmax_in(&scaled, mode)?,
    })
}

/// Zero out weights of pairs that are already confidently correct:
/// σ(positive) > 1−τ masks the positive; σ(negative) < τ masks that negative.
///
/// `scores` are σ values with index 0 = positive.
pub fn apply_tau_mask(mut w: WeightSet, scores: &[f64], tau: f64) -> Result<WeightSet> {
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "mask threshold tau must lie in (0, 0.5), got {tau}"
        )));
    }
    if scores.len() != w.w_neg.len() + 1 {
        return Err(Error::DimensionMismatch {
            context: "tau mask scores",
            expected: w.w_neg.len() + 1,
            got: scores.len(),
        });
    }
    if scores[0] > 1.0 - tau {
        w.w_pos = 0.0;
    }
    for (wn, &s) in w.w_neg.iter_mut().zip(&scores[1..]) {
        if s < tau {
            *wn = 0.0;
        }
    }
    Ok(w)
}

/// Dispatch on the configured weight scheme. The whole chain — σ scores,
/// softmaxes, products — runs under the configured precision; weights come
/// back widened to f64 and are treated as constants from here on.
pub fn compute_weights(config: &ObjectiveConfig, pairs: &[PairLogits]) -> Result<WeightSet> {
    let mode = config.precision;
    match config.weight {
        WeightScheme::Cl => {
            let yes = scaled_yes_logits(pairs, config.cl_temperature, mode);
            weights_cl(&yes, mode)
        }
        WeightScheme::Sft => weights_sft(pairs, mode),
        WeightScheme::Base { beta } => {
            let neg: Vec<f64> = pairs[1..].iter().map(|p| sigma_in(p, mode)).collect();
            weights_base(&neg, beta, mode)
        }
        WeightScheme::BaseTauMask { beta, tau } => {
            let sigma: Vec<f64> = pairs.iter().map(|p| sigma_in(p, mode)).collect();
            let base = weights_base(&sigma[1..], beta, mode)?;
            apply_tau_mask(base, &sigma, tau)
        }
        WeightScheme::BaseTimesSft { beta } => {
            let sigma: Vec<f64> = pairs.iter().map(|p| sigma_in(p, mode)).collect();
            let base = weights_base(&sigma[1..], beta, mode)?;
            let sft = weights_sft(pairs, mode)?;
            Ok(WeightSet {
                w_pos: mode.quantize(base.w_pos * sft.w_pos),
                w_neg: base
                    .w_neg
                    .iter()
                    .zip(&sft.w_neg)
                    .map(|(b, s)| mode.quantize(b * s))
                    .collect(),
            })
        }
        WeightScheme::Const { value } => {
            config.weight.validate()?;
            Ok(WeightSet {
                w_pos: value,
                w_neg: vec![value; pairs.len().saturating_sub(1)],
            })
        }
    }
}

fn scaled_yes_logits(pairs: &[PairLogits], temperature: f64, mode: PrecisionMode) -> Vec<f64> {
    pairs
        .iter()
        .map(|p| mode.quantize(p.s_yes / temperature))
        .collect()
}

// ─── closed-form gradients and the unified loss ─────────────────────────────

/// Closed-form per-pair gradients for the configured weight/direction pair.
///
/// dL/dh of the positive is −W⁺·D⁺ and of negative i is −Wᵢ⁻·Dᵢ⁻, where the
/// direction of the positive is the yes row (contrastive / learned) or the
/// yes-minus-no row difference (classification), and negatives carry the
/// opposite sign. Weights are computed under the configured precision and
/// then treated as constants. With `token_set_size > 2` this switches to the
/// direct expanded-token cross-entropy gradient instead.
pub fn closed_form_grad(
    config: &ObjectiveConfig,
    pairs: &[PairLogits],
    head: &ProjectionHead,
) -> Result<GradPacket> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("an example needs at least the positive pair".into()));
    }
    let k = head.token_count();
    for p in pairs {
        if p.token_count() != k {
            return Err(Error::DimensionMismatch {
                context: "pair logits vs head rows",
                expected: k,
                got: p.token_count(),
            });
        }
    }
    if config.token_set_size > k {
        return Err(Error::DimensionMismatch {
            context: "token_set_size vs head rows",
            expected: config.token_set_size,
            got: k,
        });
    }

    if config.token_set_size > 2 {
        return multitoken_grad(pairs, head);
    }

    let weights = compute_weights(config, pairs)?;
    let temp = config.cl_temperature;
    let mut dlogits = Vec::with_capacity(pairs.len());
    let mut loss = 0.0;
    for (i, pair) in pairs.iter().enumerate() {
        let (w, sign) = if i == 0 {
            (weights.w_pos, -1.0)
        } else {
            (weights.w_neg[i - 1], 1.0)
        };
        let mut g = vec![0.0; k];
        match config.direction {
            DirectionScheme::Sft => {
                // scalar direction term: ∓(s_yes − s_no)
                g[0] = sign * w;
                g[1] = -sign * w;
                loss += w * sign * (pair.s_yes - pair.s_no);
            }
            DirectionScheme::Cl | DirectionScheme::Learned => {
                g[0] = sign * w / temp;
                loss += w * sign * pair.s_yes / temp;
            }
        }
        dlogits.push(g);
    }

    let dh = dlogits
        .iter()
        .map(|g| logit_grad_to_dh(g, head, config.direction.uses_learned()))
        .collect::<Result<Vec<_>>>()?;

    Ok(GradPacket { dlogits, dh, loss })
}

fn multitoken_grad(pairs: &[PairLogits], head: &ProjectionHead) -> Result<GradPacket> {
    let rows: Vec<Vec<f64>> = pairs.iter().map(PairLogits::to_vec).collect();
    let labels: Vec<usize> = (0..pairs.len()).map(|i| usize::from(i != 0)).collect();
    let loss = loss_sft_multitoken(&rows, &labels)?;
    let mut dlogits = Vec::with_capacity(pairs.len());
    for (row, &label) in rows.iter().zip(&labels) {
        let mut p = softmax(row)?;
        p[label] -= 1.0;
        dlogits.push(p);
    }
    let dh = dlogits
        .iter()
        .map(|g| logit_grad_to_dh(g, head, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradPacket { dlogits, dh, loss })
}

fn logit_grad_to_dh(grad: &[f64], head: &ProjectionHead, use_learned: bool) -> Result<Vec<f64>> {
    let d = head.hidden_dim();
    let mut dh = vec![0.0; d];
    for (slot, &g) in grad.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row: &[f64] = if slot == 0 {
            head.yes_row(use_learned)?
        } else {
            &head.token_rows[slot]
        };
        for (acc, r) in dh.iter_mut().zip(row) {
            *acc += g * r;
        }
    }
    Ok(dh)
}

/// The unified loss of one example: Σ over documents of weight × scalar
/// direction term, weights detached.
///
/// Returns the scalar value and the gradient packet; differentiating the
/// scalar with the weights frozen reproduces `dlogits` exactly. The value
/// itself is a surrogate — it is not the InfoNCE or cross-entropy value.
pub fn unified_loss(
    config: &ObjectiveConfig,
    pairs: &[PairLogits],
    head: &ProjectionHead,
) -> Result<(f64, GradPacket)> {
    let packet = closed_form_grad(config, pairs, head)?;
    Ok((packet.loss, packet))
}

/// The unified scalar recomputed from externally supplied (frozen) weights.
///
/// Exists so the stop-gradient contract can be finite-difference checked:
/// perturb the logits, keep `weights` fixed, and difference this value.
pub fn unified_scalar(
    weights: &WeightSet,
    direction: DirectionScheme,
    pairs: &[PairLogits],
    cl_temperature: f64,
) -> Result<f64> {
    if pairs.len() != weights.w_neg.len() + 1 {
        return Err(Error::DimensionMismatch {
            context: "unified scalar pairs vs weights",
            expected: weights.w_neg.len() + 1,
            got: pairs.len(),
        });
    }
    let mut loss = 0.0;
    for (i, pair) in pairs.iter().enumerate() {
        let (w, sign) = if i == 0 {
            (weights.w_pos, -1.0)
        } else {
            (weights.w_neg[i - 1], 1.0)
        };
        loss += match direction {
            DirectionScheme::Sft => w * sign * (pair.s_yes - pair.s_no),
            DirectionScheme::Cl | DirectionScheme::Learned => w * sign * pair.s_yes / cl_temperature,
        };
    }
    Ok(loss)
}

/// Smallest uniform positive-over-negatives margin at which every
/// contrastive weight of a well-separated example rounds to exactly zero
/// under binary16 emulation while staying positive in 64-bit arithmetic.
///
/// Bisects on the margin; the all-zero predicate is monotone because every
/// weight decreases as the margin grows.
pub fn cl_underflow_margin(n_negatives: usize) -> f64 {
    assert!(n_negatives >= 1);
    let all_zero = |margin: f64| {
        let mut yes = vec![0.0; n_negatives + 1];
        yes[0] = margin;
        let w16 = weights_cl(&yes, PrecisionMode::Emulated16).unwrap();
        w16.w_pos == 0.0 && w16.w_neg.iter().all(|&w| w == 0.0)
    };
    let (mut lo, mut hi) = (0.0, 64.0);
    debug_assert!(all_zero(hi));
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if all_zero(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn pair(s_yes: f64, s_no: f64) -> PairLogits {
        PairLogits { s_yes, s_no, extra: vec![] }
    }

    fn head_k2(d: usize, seed: u64) -> ProjectionHead {
        let mut r = Rng::seeded(seed);
        ProjectionHead {
            token_rows: (0..2).map(|_| (0..d).map(|_| r.uniform(-1.0, 1.0)).collect()).collect(),
            frozen: false,
            learned_direction: None,
        }
    }

    #[test]
    fn sft_score_values() {
        assert_eq!(relevance_score_sft(&pair(0.0, 0.0)), 0.5);
        assert!((relevance_score_sft(&pair(2.0, 0.0)) - 0.8807970779778823).abs() < 1e-12);
        for s in [-3.0, 0.0, 7.5] {
            assert_eq!(relevance_score_sft(&pair(s, s)), 0.5);
        }
    }

    #[test]
    fn cl_score_is_the_yes_logit() {
        assert_eq!(relevance_score_cl(&pair(3.2, -1.0)), 3.2);
        assert_eq!(relevance_score_cl(&pair(0.0, 5.0)), 0.0);
    }

    #[test]
    fn infonce_symmetric_case() {
        let v = loss_cl(&[1.0; 5]).unwrap();
        assert!((v - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infonce_direct_evaluation() {
        // −log(e²/(e² + 2)) evaluated in 64-bit
        let v = loss_cl(&[2.0, 0.0, 0.0]).unwrap();
        assert!((v - 0.2395447662218846).abs() < 1e-12, "{v}");
    }

    #[test]
    fn infonce_vanishes_with_dominant_positive() {
        let v = loss_cl(&[60.0, 0.0, 0.0]).unwrap();
        assert!(v < 1e-20);
        assert!(v >= 0.0);
    }

    #[test]
    fn infonce_rejects_missing_negatives() {
        assert!(loss_cl(&[1.0]).is_err());
        assert!(loss_cl(&[]).is_err());
    }

    #[test]
    fn merged_loss_values() {
        let v = loss_sft_merged(&[pair(0.0, 0.0), pair(0.0, 0.0)]).unwrap();
        assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        // no negatives: single binary cross-entropy term
        let v0 = loss_sft_merged(&[pair(0.0, 0.0)]).unwrap();
        assert!((v0 - std::f64::consts::LN_2).abs() < 1e-15);
        // both pairs confidently correct: loss approaches zero
        let lim = loss_sft_merged(&[pair(40.0, 0.0), pair(0.0, 40.0)]).unwrap();
        assert!(lim < 1e-15);
    }

    #[test]
    fn multitoken_reduces_to_merged_at_k2() {
        let mut rng = Rng::seeded(77);
        for _ in 0..50 {
            let pairs: Vec<PairLogits> =
                (0..4).map(|_| pair(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0))).collect();
            let rows: Vec<Vec<f64>> = pairs.iter().map(PairLogits::to_vec).collect();
            let labels: Vec<usize> = (0..4).map(|i| usize::from(i != 0)).collect();
            let a = loss_sft_multitoken(&rows, &labels).unwrap();
            let b = loss_sft_merged(&pairs).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn multitoken_uniform_row() {
        let v = loss_sft_multitoken(&[vec![0.0, 0.0, 0.0]], &[0]).unwrap();
        assert!((v - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn multitoken_distractors_barely_move_the_loss() {
        // 14 extra tokens at logit −10 add about 14·e⁻¹⁰ of softmax mass
        let mut row = vec![0.0, 0.0];
        row.extend(std::iter::repeat(-10.0).take(14));
        let wide = loss_sft_multitoken(&[row], &[0]).unwrap();
        let narrow = loss_sft_multitoken(&[vec![0.0, 0.0]], &[0]).unwrap();
        assert!((wide - narrow).abs() < 1e-3);
        assert!(wide > narrow);
    }

    #[test]
    fn multitoken_rejects_out_of_range_label() {
        assert!(loss_sft_multitoken(&[vec![0.0, 0.0]], &[2]).is_err());
    }

    #[test]
    fn contrastive_weights_symmetric() {
        let w = weights_cl(&[0.5; 5], PrecisionMode::Full64).unwrap();
        assert!((w.w_pos - 0.8).abs() < 1e-12);
        for wn in &w.w_neg {
            assert!((wn - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_weights_direct_evaluation() {
        // softmax([2,0,0]) = [e²,1,1]/(e²+2)
        let w = weights_cl(&[2.0, 0.0, 0.0], PrecisionMode::Full64).unwrap();
        assert!((w.w_pos - 0.2130139578384015).abs() < 1e-12, "{}", w.w_pos);
        for wn in &w.w_neg {
            assert!((wn - 0.10650697891920075).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_weight_underflow_margin() {
        // At margin 12 the positive weight already rounds away (the binary16
        // sum 1 + Σe^{-12} collapses to 1) but the per-negative subnormals
        // survive; full underflow needs the exponentials themselves to drop
        // below half the smallest subnormal, at margin 25·ln2 ≈ 17.33.
        let w12 = weights_cl(&[12.0, 0.0, 0.0, 0.0, 0.0], PrecisionMode::Emulated16).unwrap();
        assert_eq!(w12.w_pos, 0.0);
        assert!(w12.w_neg.iter().all(|&w| w > 0.0));

        let margin = cl_underflow_margin(4);
        assert!((17.0..18.0).contains(&margin), "margin {margin}");
        // the exponential's argument is itself on the binary16 grid (ulp
        // 1/64 around 17), so the threshold sits within one ulp of 25·ln2
        assert!((margin - 25.0 * std::f64::consts::LN_2).abs() < 0.02, "margin {margin}");

        let mut yes = vec![0.0; 5];
        yes[0] = margin + 1e-6;
        let w16 = weights_cl(&yes, PrecisionMode::Emulated16).unwrap();
        assert_eq!(w16.w_pos, 0.0);
        assert!(w16.w_neg.iter().all(|&w| w == 0.0));
        let w64 = weights_cl(&yes, PrecisionMode::Full64).unwrap();
        assert!(w64.w_pos > 0.0);
        assert!(w64.w_neg.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn classification_weights_values() {
        let w = weights_sft(&[pair(1.0, -1.0), pair(0.5, 0.5)], PrecisionMode::Full64).unwrap();
        assert!((w.w_pos - 0.11920292202211755).abs() < 1e-12);
        assert!((w.w_neg[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn classification_weights_are_per_pair() {
        let negs = [pair(0.3, -0.2), pair(-1.0, 0.7), pair(2.0, 1.0)];
        let mut pairs = vec![pair(0.9, -0.4)];
        pairs.extend_from_slice(&negs);
        let w = weights_sft(&pairs, PrecisionMode::Full64).unwrap();

        // permuting the negatives permutes the weights identically
        let mut permuted = vec![pair(0.9, -0.4), negs[2].clone(), negs[0].clone(), negs[1].clone()];
        let wp = weights_sft(&permuted, PrecisionMode::Full64).unwrap();
        assert_eq!(wp.w_neg, vec![w.w_neg[2], w.w_neg[0], w.w_neg[1]]);

        // mutating one pair leaves the others untouched
        permuted[1] = pair(5.0, -5.0);
        let wm = weights_sft(&permuted, PrecisionMode::Full64).unwrap();
        assert_eq!(wm.w_neg[1], wp.w_neg[1]);
        assert_eq!(wm.w_neg[2], wp.w_neg[2]);
        assert_eq!(wm.w_pos, wp.w_pos);
    }

    #[test]
    fn base_weights_values() {
        let w = weights_base(&[0.6, 0.4], 0.05, PrecisionMode::Full64).unwrap();
        assert_eq!(w.w_pos, 1.0);
        assert!((w.w_neg[0] - 0.9820137900379085).abs() < 1e-12);
        assert!((w.w_neg[1] - 0.017986209962091555).abs() < 1e-12);

        let eq = weights_base(&[0.5; 4], 0.05, PrecisionMode::Full64).unwrap();
        for wn in &eq.w_neg {
            assert!((wn - 0.25).abs() < 1e-12);
        }
        assert!(weights_base(&[0.5], 0.0, PrecisionMode::Full64).is_err());
        assert!(weights_base(&[0.5], -1.0, PrecisionMode::Full64).is_err());
    }

    #[test]
    fn tau_mask_boundaries() {
        let base = WeightSet { w_pos: 0.7, w_neg: vec![0.2, 0.3] };
        let tau = 1e-3;

        let masked = apply_tau_mask(base.clone(), &[0.9995, 0.5, 0.5], tau).unwrap();
        assert_eq!(masked.w_pos, 0.0);
        assert_eq!(masked.w_neg, base.w_neg);

        let masked = apply_tau_mask(base.clone(), &[0.5, 0.0005, 0.5], tau).unwrap();
        assert_eq!(masked.w_pos, base.w_pos);
        assert_eq!(masked.w_neg, vec![0.0, 0.3]);

        let kept = apply_tau_mask(base.clone(), &[0.9985, 0.0015, 0.5], tau).unwrap();
        assert_eq!(kept.w_pos, base.w_pos);
        assert_eq!(kept.w_neg, base.w_neg);

        assert!(apply_tau_mask(base, &[0.5, 0.5, 0.5], 0.6).is_err());
    }

    #[test]
    fn closed_form_contrastive_symmetric() {
        let head = head_k2(3, 1);
        let pairs: Vec<PairLogits> = (0..5).map(|_| pair(1.0, 0.3)).collect();
        let cfg = ObjectiveConfig::new(WeightScheme::Cl, DirectionScheme::Cl);
        let packet = closed_form_grad(&cfg, &pairs, &head).unwrap();
        let expect = [-0.8, 0.2, 0.2, 0.2, 0.2];
        for (g, e) in packet.dlogits.iter().zip(expect) {
            assert!((g[0] - e).abs() < 1e-12);
            assert_eq!(g[1], 0.0);
        }
    }

    #[test]
    fn closed_form_classification_balanced_pair() {
        let head = head_k2(3, 2);
        let cfg = ObjectiveConfig::new(WeightScheme::Sft, DirectionScheme::Sft);
        let packet = closed_form_grad(&cfg, &[pair(0.0, 0.0)], &head).unwrap();
        assert!((packet.dlogits[0][0] + 0.5).abs() < 1e-15);
        assert!((packet.dlogits[0][1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dh_is_dlogits_through_token_rows() {
        let head = head_k2(4, 3);
        let pairs = vec![pair(0.4, -0.2), pair(-0.6, 0.1), pair(0.9, 0.9)];
        for (w, d) in [
            (WeightScheme::Cl, DirectionScheme::Cl),
            (WeightScheme::Sft, DirectionScheme::Sft),
            (WeightScheme::Sft, DirectionScheme::Cl),
            (WeightScheme::Cl, DirectionScheme::Sft),
        ] {
            let cfg = ObjectiveConfig::new(w, d);
            let packet = closed_form_grad(&cfg, &pairs, &head).unwrap();
            for (g, dh) in packet.dlogits.iter().zip(&packet.dh) {
                for i in 0..4 {
                    let expect: f64 = g
                        .iter()
                        .enumerate()
                        .map(|(slot, gs)| gs * head.token_rows[slot][i])
                        .sum();
                    assert!((dh[i] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_weight_gradient_ignores_logits() {
        let head = head_k2(3, 4);
        let cfg = ObjectiveConfig::new(WeightScheme::Const { value: 1.0 }, DirectionScheme::Sft);
        for (y, n) in [(0.0, 0.0), (8.0, -3.0), (-2.5, 4.0)] {
            let packet = closed_form_grad(&cfg, &[pair(y, n)], &head).unwrap();
            assert_eq!(packet.dlogits[0], vec![-1.0, 1.0]);
        }
    }

    #[test]
    fn learned_direction_requires_the_row() {
        let head = head_k2(3, 5);
        let cfg = ObjectiveConfig::new(WeightScheme::Cl, DirectionScheme::Learned);
        assert!(closed_form_grad(&cfg, &[pair(0.0, 0.0), pair(0.0, 0.0)], &head).is_err());
    }

    #[test]
    fn expanded_token_set_needs_matching_config() {
        let mut cfg = ObjectiveConfig::new(WeightScheme::Cl, DirectionScheme::Cl);
        cfg.token_set_size = 4;
        assert!(cfg.validate().is_err());
        let mut ok = ObjectiveConfig::new(WeightScheme::Sft, DirectionScheme::Sft);
        ok.token_set_size = 4;
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn unified_scalar_matches_packet_loss() {
        let head = head_k2(3, 6);
        let pairs = vec![pair(0.7, -0.1), pair(-0.2, 0.5), pair(0.1, 0.1)];
        for (w, d) in [
            (WeightScheme::Cl, DirectionScheme::Cl),
            (WeightScheme::Sft, DirectionScheme::Sft),
            (WeightScheme::Base { beta: 0.05 }, DirectionScheme::Sft),
        ] {
            let cfg = ObjectiveConfig::new(w, d);
            let (loss, packet) = unified_loss(&cfg, &pairs, &head).unwrap();
            let weights = compute_weights(&cfg, &pairs).unwrap();
            let recomputed = unified_scalar(&weights, cfg.direction, &pairs, 1.0).unwrap();
            assert!((loss - recomputed).abs() < 1e-12);
            assert_eq!(loss, packet.loss);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn logit_pairs(n: usize) -> impl Strategy<Value = Vec<PairLogits>> {
            proptest::collection::vec((-8.0f64..8.0, -8.0f64..8.0), 2..n)
                .prop_map(|v| v.into_iter().map(|(y, n)| pair(y, n)).collect())
        }

        proptest! {
            #[test]
            fn weights_stay_in_unit_interval(pairs in logit_pairs(9)) {
                for scheme in [
                    WeightScheme::Cl,
                    WeightScheme::Sft,
                    WeightScheme::Base { beta: 0.05 },
                    WeightScheme::BaseTauMask { beta: 0.05, tau: 1e-3 },
                    WeightScheme::BaseTimesSft { beta: 0.05 },
                    WeightScheme::Const { value: 0.25 },
                ] {
                    let cfg = ObjectiveConfig::new(scheme, DirectionScheme::Sft);
                    let w = compute_weights(&cfg, &pairs).unwrap();
                    prop_assert!((0.0..=1.0).contains(&w.w_pos));
                    prop_assert!(w.w_neg.iter().all(|x| (0.0..=1.0).contains(x)));
                }
            }

            #[test]
            fn contrastive_mass_balance(pairs in logit_pairs(9)) {
                let yes: Vec<f64> = pairs.iter().map(|p| p.s_yes).collect();
                let w = weights_cl(&yes, PrecisionMode::Full64).unwrap();
                let neg_sum: f64 = w.w_neg.iter().sum();
                prop_assert!((w.w_pos - neg_sum).abs() < 1e-12);
            }

            #[test]
            fn raising_a_negative_raises_its_weight(
                pairs in logit_pairs(8),
                bump in 0.01f64..2.0,
            ) {
                let idx = 1;
                let mut bumped = pairs.clone();
                bumped[idx].s_yes += bump;

                let yes: Vec<f64> = pairs.iter().map(|p| p.s_yes).collect();
                let yes_b: Vec<f64> = bumped.iter().map(|p| p.s_yes).collect();
                let cl = weights_cl(&yes, PrecisionMode::Full64).unwrap();
                let cl_b = weights_cl(&yes_b, PrecisionMode::Full64).unwrap();
                prop_assert!(cl_b.w_neg[idx - 1] > cl.w_neg[idx - 1]);

                let sft = weights_sft(&pairs, PrecisionMode::Full64).unwrap();
                let sft_b = weights_sft(&bumped, PrecisionMode::Full64).unwrap();
                prop_assert!(sft_b.w_neg[idx - 1] > sft.w_neg[idx - 1]);
            }

            #[test]
            fn base_negative_mass_sums_to_one(
                scores in proptest::collection::vec(0.0f64..1.0, 1..9),
            ) {
                let w = weights_base(&scores, 0.05, PrecisionMode::Full64).unwrap();
                prop_assert_eq!(w.w_pos, 1.0);
                let sum: f64 = w.w_neg.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
