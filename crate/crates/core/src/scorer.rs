//! Toy differentiable scorer: feature encoder plus token-projection head.
//!
//! Stands in for the scoring backbone at desk scale: a one-hidden-layer
//! tanh encoder maps a query-document pair's feature vector to a hidden
//! vector `h`, and a projection head of per-token rows maps `h` to scalar
//! token logits (row 0 = "yes", row 1 = "no", further rows optional). Small
//! enough that every gradient can be checked against finite differences,
//! but with a real head/encoder split so head-freezing and learned-direction
//! probes are meaningful.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::Rng;
use crate::{Error, Result};

/// Feature vector of one (query, document) pair; dimension is fixed per corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInput {
    pub features: Vec<f64>,
}

/// Hidden representation produced by [`encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Scalar token logits for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLogits {
    pub s_yes: f64,
    pub s_no: f64,
    /// Logits of the optional extra tokens (head rows 2..).
    pub extra: Vec<f64>,
}

impl PairLogits {
    pub fn token_count(&self) -> usize {
        2 + self.extra.len()
    }

    /// Logits in head-row order: yes, no, extras.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.token_count());
        v.push(self.s_yes);
        v.push(self.s_no);
        v.extend_from_slice(&self.extra);
        v
    }
}

/// Projection from hidden vectors to token logits.
///
/// `token_rows[0]` is the "yes" row, `token_rows[1]` the "no" row. When
/// `frozen` is set, no gradient is ever accumulated into `token_rows`.
/// `learned_direction`, when present, replaces the yes row — but only for
/// callers that ask for it (the learned-direction probe); it stays trainable
/// even under a frozen head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub token_rows: Vec<Vec<f64>>,
    pub frozen: bool,
    pub learned_direction: Option<Vec<f64>>,
}

impl ProjectionHead {
    pub fn token_count(&self) -> usize {
        self.token_rows.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.token_rows.first().map_or(0, Vec::len)
    }

    /// Row used for the yes slot under the given scheme.
    pub fn yes_row(&self, use_learned: bool) -> Result<&[f64]> {
        if use_learned {
            self.learned_direction
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("learned direction requested but absent".into()))
        } else {
            Ok(&self.token_rows[0])
        }
    }
}

/// All trainable parameters of the scorer.
///
/// Encoder: `h = W2 · tanh(W1 · x + b1) + b2` with `W1: d×m`, `W2: d×d`,
/// both stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub head: ProjectionHead,
}

/// Initialization choices for [`ScorerParams::init`].
#[derive(Debug, Clone)]
pub struct InitConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub token_count: usize,
    pub frozen_head: bool,
    pub with_learned_direction: bool,
}

impl ScorerParams {
    /// Deterministic initialization from a seed.
    ///
    /// Encoder weights are uniform in ±1/√fan_in with zero biases. Head
    /// token rows are i.i.d. uniform in ±1/√d, simulating distinct
    /// pre-trained token embeddings; the learned direction draws from a
    /// separate stream so it never coincides with the yes row.
    pub fn init(seed: u64, cfg: &InitConfig) -> Result<Self> {
        if cfg.token_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "head needs at least the yes/no rows, got token_count={}",
                cfg.token_count
            )));
        }
        if cfg.input_dim == 0 || cfg.hidden_dim == 0 {
            return Err(Error::InvalidConfig("zero-sized scorer dimension".into()));
        }
        let (m, d) = (cfg.input_dim, cfg.hidden_dim);
        let bound1 = 1.0 / (m as f64).sqrt();
        let bound2 = 1.0 / (d as f64).sqrt();
        let mut r1 = Rng::substream(seed, 1);
        let mut r2 = Rng::substream(seed, 2);
        let mut r3 = Rng::substream(seed, 3);
        let mut r4 = Rng::substream(seed, 4);
        let w1 = (0..d * m).map(|_| r1.uniform(-bound1, bound1)).collect();
        let w2 = (0..d * d).map(|_| r2.uniform(-bound2, bound2)).collect();
        let token_rows = (0..cfg.token_count)
            .map(|_| (0..d).map(|_| r3.uniform(-bound2, bound2)).collect())
            .collect();
        let learned_direction = cfg
            .with_learned_direction
            .then(|| (0..d).map(|_| r4.uniform(-bound2, bound2)).collect());
        Ok(ScorerParams {
            input_dim: m,
            hidden_dim: d,
            w1,
            b1: vec![0.0; d],
            w2,
            b2: vec![0.0; d],
            head: ProjectionHead {
                token_rows,
                frozen: cfg.frozen_head,
                learned_direction,
            },
        })
    }

    /// All-zero parameters with the given shape (useful as a degenerate fixture).
    pub fn zeros(cfg: &InitConfig) -> Self {
        let (m, d) = (cfg.input_dim, cfg.hidden_dim);
        ScorerParams {
            input_dim: m,
            hidden_dim: d,
            w1: vec![0.0; d * m],
            b1: vec![0.0; d],
            w2: vec![0.0; d * d],
            b2: vec![0.0; d],
            head: ProjectionHead {
                token_rows: vec![vec![0.0; d]; cfg.token_count],
                frozen: cfg.frozen_head,
                learned_direction: cfg.with_learned_direction.then(|| vec![0.0; d]),
            },
        }
    }

    /// Total number of scalar parameters, in flattening order.
    pub fn param_count(&self) -> usize {
        let d = self.hidden_dim;
        let mut n = self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len();
        n += self.head.token_rows.len() * d;
        if self.head.learned_direction.is_some() {
            n += d;
        }
        n
    }

    /// Flatten every parameter into one vector.
    ///
    /// Order: w1, b1, w2, b2, token rows (row-major), learned direction.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        for row in &self.head.token_rows {
            out.extend_from_slice(row);
        }
        if let Some(ld) = &self.head.learned_direction {
            out.extend_from_slice(ld);
        }
        out
    }

    /// Overwrite every parameter from a flat vector (same order as [`Self::to_flat`]).
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "assign_from_flat",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        take(&mut self.w1);
        take(&mut self.b1);
        take(&mut self.w2);
        take(&mut self.b2);
        for row in &mut self.head.token_rows {
            take(row);
        }
        if let Some(ld) = &mut self.head.learned_direction {
            take(ld);
        }
        Ok(())
    }
}

/// Intermediate activations kept from a forward pass for use by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// tanh(W1·x + b1)
    hidden: Vec<f64>,
    /// final feature vector h
    feature: Vec<f64>,
}

impl ForwardCache {
    pub fn feature(&self) -> FeatureVector {
        FeatureVector {
            values: self.feature.clone(),
        }
    }
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] = dot(row, x);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Encode a pair input into its hidden feature vector.
pub fn encode(params: &ScorerParams, input: &PairInput) -> Result<FeatureVector> {
    Ok(encode_cached(params, input)?.0)
}

/// Encode and keep the activations needed for the backward pass.
pub fn encode_cached(params: &ScorerParams, input: &PairInput) -> Result<(FeatureVector, ForwardCache)> {
    let (m, d) = (params.input_dim, params.hidden_dim);
    if input.features.len() != m {
        return Err(Error::DimensionMismatch {
            context: "encode input",
            expected: m,
            got: input.features.len(),
        });
    }
    let mut pre = vec![0.0; d];
    matvec(&params.w1, d, m, &input.features, &mut pre);
    for (p, b) in pre.iter_mut().zip(&params.b1) {
        *p = (*p + b).tanh();
    }
    let hidden = pre;
    let mut h = vec![0.0; d];
    matvec(&params.w2, d, d, &hidden, &mut h);
    for (v, b) in h.iter_mut().zip(&params.b2) {
        *v += b;
    }
    let feature = FeatureVector { values: h.clone() };
    Ok((
        feature,
        ForwardCache {
            input: input.features.clone(),
            hidden,
            feature: h,
        },
    ))
}

/// Project a hidden vector onto the head's token rows.
///
/// With `use_learned_yes` the yes slot reads the learned direction row and
/// the stored yes row is never touched.
pub fn project(head: &ProjectionHead, h: &FeatureVector, use_learned_yes: bool) -> Result<PairLogits> {
    let d = head.hidden_dim();
    if h.values.len() != d {
        return Err(Error::DimensionMismatch {
            context: "project hidden vector",
            expected: d,
            got: h.values.len(),
        });
    }
    let s_yes = dot(head.yes_row(use_learned_yes)?, &h.values);
    let s_no = dot(&head.token_rows[1], &h.values);
    let extra = head.token_rows[2..]
        .iter()
        .map(|row| dot(row, &h.values))
        .collect();
    Ok(PairLogits { s_yes, s_no, extra })
}

/// Parameter-gradient accumulator shaped like [`ScorerParams`].
#[derive(Debug, Clone)]
pub struct GradAccum {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub token_rows: Vec<Vec<f64>>,
    pub learned_direction: Option<Vec<f64>>,
}

impl GradAccum {
    pub fn zeros_like(params: &ScorerParams) -> Self {
        GradAccum {
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
            token_rows: params
                .head
                .token_rows
                .iter()
                .map(|r| vec![0.0; r.len()])
                .collect(),
            learned_direction: params.head.learned_direction.as_ref().map(|r| vec![0.0; r.len()]),
        }
    }

    /// Flatten in the same order as [`ScorerParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        for row in &self.token_rows {
            out.extend_from_slice(row);
        }
        if let Some(ld) = &self.learned_direction {
            out.extend_from_slice(ld);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        let apply = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= factor);
        apply(&mut self.w1);
        apply(&mut self.b1);
        apply(&mut self.w2);
        apply(&mut self.b2);
        for row in &mut self.token_rows {
            row.iter_mut().for_each(|x| *x *= factor);
        }
        if let Some(ld) = &mut self.learned_direction {
            ld.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

/// Backpropagate a per-token logit gradient through head and encoder.
///
/// `grad_wrt_logits` holds dL/d(s_yes, s_no, extras) for the pair cached in
/// `cache`. Gradients accumulate into `accum` (so callers sum over pairs and
/// examples); when the head is frozen its token-row gradients are discarded
/// while the learned direction, if active, still trains. Returns dL/dh.
pub fn backward(
    params: &ScorerParams,
    cache: &ForwardCache,
    grad_wrt_logits: &[f64],
    use_learned_yes: bool,
    accum: &mut GradAccum,
) -> Result<Vec<f64>> {
    let k = params.head.token_count();
    let d = params.hidden_dim;
    if grad_wrt_logits.len() != k {
        return Err(Error::DimensionMismatch {
            context: "backward logit gradient",
            expected: k,
            got: grad_wrt_logits.len(),
        });
    }
    if cache.feature.len() != d || cache.input.len() != params.input_dim {
        return Err(Error::InvalidInput(
            "forward cache does not match these parameters".into(),
        ));
    }

    // dL/dh = Σ_k g_k · row_k, with the yes slot's row swapped under the
    // learned-direction scheme.
    let mut dh = vec![0.0; d];
    for (slot, &g) in grad_wrt_logits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row: &[f64] = if slot == 0 {
            params.head.yes_row(use_learned_yes)?
        } else {
            &params.head.token_rows[slot]
        };
        for (acc, r) in dh.iter_mut().zip(row) {
            *acc += g * r;
        }
    }

    // head row gradients: dL/drow_k = g_k · h
    for (slot, &g) in grad_wrt_logits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        if slot == 0 && use_learned_yes {
            let gl = accum
                .learned_direction
                .as_mut()
                .ok_or_else(|| Error::InvalidConfig("learned direction requested but absent".into()))?;
            for (acc, hv) in gl.iter_mut().zip(&cache.feature) {
                *acc += g * hv;
            }
        } else if !params.head.frozen {
            for (acc, hv) in accum.token_rows[slot].iter_mut().zip(&cache.feature) {
                *acc += g * hv;
            }
        }
    }

    // encoder: h = W2·t + b2, t = tanh(W1·x + b1)
    for r in 0..d {
        let g = dh[r];
        if g == 0.0 {
            continue;
        }
        accum.b2[r] += g;
        let row = &mut accum.w2[r * d..(r + 1) * d];
        for (acc, t) in row.iter_mut().zip(&cache.hidden) {
            *acc += g * t;
        }
    }
    let mut dhidden = vec![0.0; d];
    for r in 0..d {
        let g = dh[r];
        if g == 0.0 {
            continue;
        }
        let row = &params.w2[r * d..(r + 1) * d];
        for (acc, w) in dhidden.iter_mut().zip(row) {
            *acc += g * w;
        }
    }
    let m = params.input_dim;
    for r in 0..d {
        let t = cache.hidden[r];
        let g = dhidden[r] * (1.0 - t * t);
        if g == 0.0 {
            continue;
        }
        accum.b1[r] += g;
        let row = &mut accum.w1[r * m..(r + 1) * m];
        for (acc, x) in row.iter_mut().zip(&cache.input) {
            *acc += g * x;
        }
    }

    Ok(dh)
}

// ─── checkpoint I/O ─────────────────────────────────────────────────────────

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    dims: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    input_dim: usize,
    hidden_dim: usize,
    frozen_head: bool,
    params: BTreeMap<String, TensorEntry>,
}

/// Write a versioned JSON checkpoint: parameter path → row-major array + dims.
pub fn save_checkpoint(params: &ScorerParams, path: &Path) -> Result<()> {
    let d = params.hidden_dim;
    let k = params.head.token_count();
    let mut map = BTreeMap::new();
    map.insert(
        "encoder.linear1.weight".to_string(),
        TensorEntry { dims: vec![d, params.input_dim], data: params.w1.clone() },
    );
    map.insert(
        "encoder.linear1.bias".to_string(),
        TensorEntry { dims: vec![d], data: params.b1.clone() },
    );
    map.insert(
        "encoder.linear2.weight".to_string(),
        TensorEntry { dims: vec![d, d], data: params.w2.clone() },
    );
    map.insert(
        "encoder.linear2.bias".to_string(),
        TensorEntry { dims: vec![d], data: params.b2.clone() },
    );
    map.insert(
        "head.token_rows".to_string(),
        TensorEntry {
            dims: vec![k, d],
            data: params.head.token_rows.iter().flatten().copied().collect(),
        },
    );
    if let Some(ld) = &params.head.learned_direction {
        map.insert(
            "head.learned_direction".to_string(),
            TensorEntry { dims: vec![d], data: ld.clone() },
        );
    }
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        input_dim: params.input_dim,
        hidden_dim: params.hidden_dim,
        frozen_head: params.head.frozen,
        params: map,
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ScorerParams> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported checkpoint version {}",
            file.format_version
        )));
    }
    let (m, d) = (file.input_dim, file.hidden_dim);
    let get = |name: &str, dims: &[usize]| -> Result<Vec<f64>> {
        let entry = file
            .params
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("checkpoint missing tensor {name}")))?;
        if entry.dims != dims || entry.data.len() != dims.iter().product::<usize>() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint tensor {name} has dims {:?}, expected {dims:?}",
                entry.dims
            )));
        }
        Ok(entry.data.clone())
    };
    let rows_entry = file
        .params
        .get("head.token_rows")
        .ok_or_else(|| Error::InvalidConfig("checkpoint missing tensor head.token_rows".into()))?;
    if rows_entry.dims.len() != 2 || rows_entry.dims[1] != d {
        return Err(Error::InvalidConfig("bad head.token_rows dims".into()));
    }
    let k = rows_entry.dims[0];
    if rows_entry.data.len() != k * d || k < 2 {
        return Err(Error::InvalidConfig("bad head.token_rows payload".into()));
    }
    let token_rows = rows_entry.data.chunks(d).map(<[f64]>::to_vec).collect();
    let learned_direction = match file.params.get("head.learned_direction") {
        Some(e) if e.dims == vec![d] && e.data.len() == d => Some(e.data.clone()),
        Some(_) => return Err(Error::InvalidConfig("bad head.learned_direction dims".into())),
        None => None,
    };
    Ok(ScorerParams {
        input_dim: m,
        hidden_dim: d,
        w1: get("encoder.linear1.weight", &[d, m])?,
        b1: get("encoder.linear1.bias", &[d])?,
        w2: get("encoder.linear2.weight", &[d, d])?,
        b2: get("encoder.linear2.bias", &[d])?,
        head: ProjectionHead {
            token_rows,
            frozen: file.frozen_head,
            learned_direction,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> InitConfig {
        InitConfig {
            input_dim: 6,
            hidden_dim: 4,
            token_count: 3,
            frozen_head: false,
            with_learned_direction: true,
        }
    }

    fn fixed_input() -> PairInput {
        PairInput {
            features: vec![0.5, -1.25, 0.75, 2.0, -0.1, 0.3],
        }
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let params = ScorerParams::zeros(&small_cfg());
        let h = encode(&params, &fixed_input()).unwrap();
        assert!(h.values.iter().all(|&v| v == 0.0));
        let logits = project(&params.head, &h, false).unwrap();
        assert_eq!(logits.s_yes, 0.0);
        assert_eq!(logits.s_no, 0.0);
        assert!(logits.extra.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_input_through_identity_first_layer_is_zero() {
        let mut cfg = small_cfg();
        cfg.input_dim = 4;
        let mut params = ScorerParams::init(5, &cfg).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                params.w1[r * 4 + c] = f64::from(u8::from(r == c));
            }
        }
        params.b1 = vec![0.0; 4];
        params.b2 = vec![0.0; 4];
        let h = encode(&params, &PairInput { features: vec![0.0; 4] }).unwrap();
        assert!(h.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_rejects_unknown_version() {
        let dir = std::env::temp_dir().join(format!("scorer-ckpt-ver-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let params = ScorerParams::init(3, &small_cfg()).unwrap();
        save_checkpoint(&params, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 99");
        std::fs::write(&path, text).unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn encode_rejects_dimension_mismatch() {
        let params = ScorerParams::zeros(&small_cfg());
        let bad = PairInput { features: vec![1.0; 5] };
        assert!(encode(&params, &bad).is_err());
    }

    #[test]
    fn basis_projection() {
        let mut params = ScorerParams::zeros(&small_cfg());
        params.head.token_rows[0] = vec![1.0, 0.0, 0.0, 0.0];
        let h = FeatureVector { values: vec![3.0, -1.0, 2.0, 0.5] };
        let logits = project(&params.head, &h, false).unwrap();
        assert_eq!(logits.s_yes, 3.0);
    }

    #[test]
    fn encode_is_deterministic() {
        let params = ScorerParams::init(9, &small_cfg()).unwrap();
        let a = encode(&params, &fixed_input()).unwrap();
        let b = encode(&params, &fixed_input()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_golden_snapshot_seed_42() {
        // Regression oracle: frozen from the first implementation run.
        let params = ScorerParams::init(42, &small_cfg()).unwrap();
        let h = encode(&params, &fixed_input()).unwrap();
        let golden = [
            0.1432954091558803,
            0.21265247494075035,
            -0.13248950208617294,
            0.14933832649711365,
        ];
        for (a, e) in h.values.iter().zip(golden) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
    }

    #[test]
    fn project_golden_snapshot_seed_7() {
        let params = ScorerParams::init(7, &small_cfg()).unwrap();
        let h = FeatureVector { values: vec![0.2, -0.4, 0.6, -0.8] };
        let logits = project(&params.head, &h, false).unwrap();
        let golden = [0.24418495802110549, -0.2693302284471664, -0.2838824250165069];
        assert!((logits.s_yes - golden[0]).abs() < 1e-15);
        assert!((logits.s_no - golden[1]).abs() < 1e-15);
        assert!((logits.extra[0] - golden[2]).abs() < 1e-15);
    }

    #[test]
    fn learned_scheme_never_reads_yes_row() {
        let mut params = ScorerParams::init(3, &small_cfg()).unwrap();
        params.head.token_rows[0] = vec![f64::NAN; 4];
        let h = FeatureVector { values: vec![1.0, 2.0, 3.0, 4.0] };
        let logits = project(&params.head, &h, true).unwrap();
        assert!(logits.s_yes.is_finite());
    }

    #[test]
    fn learned_scheme_requires_row() {
        let mut cfg = small_cfg();
        cfg.with_learned_direction = false;
        let params = ScorerParams::init(3, &cfg).unwrap();
        let h = FeatureVector { values: vec![0.0; 4] };
        assert!(project(&params.head, &h, true).is_err());
    }

    #[test]
    fn zero_logit_gradient_accumulates_nothing() {
        let params = ScorerParams::init(11, &small_cfg()).unwrap();
        let (_, cache) = encode_cached(&params, &fixed_input()).unwrap();
        let mut accum = GradAccum::zeros_like(&params);
        let dh = backward(&params, &cache, &[0.0, 0.0, 0.0], false, &mut accum).unwrap();
        assert!(dh.iter().all(|&v| v == 0.0));
        assert!(accum.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dh_equals_logit_grad_times_token_rows() {
        let params = ScorerParams::init(13, &small_cfg()).unwrap();
        let (_, cache) = encode_cached(&params, &fixed_input()).unwrap();
        let mut accum = GradAccum::zeros_like(&params);
        let g = [0.3, -0.7, 0.2];
        let dh = backward(&params, &cache, &g, false, &mut accum).unwrap();
        for i in 0..params.hidden_dim {
            let expect: f64 = g
                .iter()
                .enumerate()
                .map(|(k, gk)| gk * params.head.token_rows[k][i])
                .sum();
            assert!((dh[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_head_blocks_token_row_gradients_only() {
        let input = fixed_input();
        let g = [0.4, -0.2, 0.1];

        let mut unfrozen = ScorerParams::init(17, &small_cfg()).unwrap();
        unfrozen.head.frozen = false;
        let (_, cache) = encode_cached(&unfrozen, &input).unwrap();
        let mut acc_unfrozen = GradAccum::zeros_like(&unfrozen);
        backward(&unfrozen, &cache, &g, false, &mut acc_unfrozen).unwrap();

        let mut frozen = unfrozen.clone();
        frozen.head.frozen = true;
        let (_, cache) = encode_cached(&frozen, &input).unwrap();
        let mut acc_frozen = GradAccum::zeros_like(&frozen);
        backward(&frozen, &cache, &g, false, &mut acc_frozen).unwrap();

        assert!(acc_frozen.token_rows.iter().flatten().all(|&v| v == 0.0));
        assert!(acc_unfrozen.token_rows.iter().flatten().any(|&v| v != 0.0));
        assert_eq!(acc_frozen.w1, acc_unfrozen.w1);
        assert_eq!(acc_frozen.w2, acc_unfrozen.w2);
        assert_eq!(acc_frozen.b1, acc_unfrozen.b1);
        assert_eq!(acc_frozen.b2, acc_unfrozen.b2);
    }

    #[test]
    fn backward_matches_finite_differences_on_probe_loss() {
        // scalar probe loss: fixed linear combination of the three logits
        let coeffs = [0.8, -1.1, 0.45];
        let input = fixed_input();
        let params = ScorerParams::init(23, &small_cfg()).unwrap();

        let loss = |flat: &[f64]| -> f64 {
            let mut p = params.clone();
            p.assign_from_flat(flat).unwrap();
            let h = encode(&p, &input).unwrap();
            let l = project(&p.head, &h, false).unwrap();
            coeffs[0] * l.s_yes + coeffs[1] * l.s_no + coeffs[2] * l.extra[0]
        };

        let (_, cache) = encode_cached(&params, &input).unwrap();
        let mut accum = GradAccum::zeros_like(&params);
        backward(&params, &cache, &coeffs, false, &mut accum).unwrap();
        let analytic = accum.to_flat();

        let theta = params.to_flat();
        for i in 0..theta.len() {
            let eps = 1e-6 * theta[i].abs().max(1.0);
            let mut plus = theta.clone();
            plus[i] += eps;
            let mut minus = theta.clone();
            minus[i] -= eps;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic[i] - numeric).abs() / denom <= 1e-6,
                "param {i}: analytic {} vs numeric {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let dir = std::env::temp_dir().join(format!("scorer-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let params = ScorerParams::init(29, &small_cfg()).unwrap();
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(params, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flatten_round_trip() {
        let params = ScorerParams::init(31, &small_cfg()).unwrap();
        let flat = params.to_flat();
        assert_eq!(flat.len(), params.param_count());
        let mut other = ScorerParams::zeros(&small_cfg());
        other.assign_from_flat(&flat).unwrap();
        assert_eq!(params.w1, other.w1);
        assert_eq!(params.head.token_rows, other.head.token_rows);
    }
}
