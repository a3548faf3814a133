//! Toy transformer inference on the modeled datapaths.
//!
//! Projections run on the TINT array, W_O and the FFN are split between the
//! TINT array and the BoothFlex array in ternary mode, and both attention
//! matmuls run on BoothFlex in INT8 mode. LOP picks which cached K/V rows the
//! attention reads. Every integer intermediate can be recorded and compared
//! against [`reference`].

mod model;
pub mod reference;

use serde::{Deserialize, Serialize};

pub use model::{LayerWeights, ProjectionScales, ToyModel};

use crate::booth::{boothflex_matmul, PrecisionMode, Weights};
use crate::codec::TritTensor;
use crate::error::{Error, Result};
use crate::lop::{ema_savings, select_kv, LoVector, DEFAULT_TOP_K};
use crate::nonlinear::{
    softmax_stage1, FusedScale, QuantParams, RmsState, SoftmaxState, DEFAULT_RMS_EPS, DEFAULT_UNIFIED_MAX,
};
use crate::perf::{schedule_heads, HardwareSpec, PhaseTrace, Stage, Toggles};
use crate::tensor::{IntMatrix, QTensor};
use crate::tint;

/// Softmax tile width in stage 1.
const SOFTMAX_TILE: usize = 8;
const ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnActivation {
    #[default]
    SquaredRelu,
    Relu,
}

impl FfnActivation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        let r = x.max(0.0);
        match self {
            FfnActivation::SquaredRelu => r * r,
            FfnActivation::Relu => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// LOP gating of KV reads while decoding.
    pub lop: bool,
    /// LOP gating while processing the prompt.
    pub lop_in_prefill: bool,
    pub k: usize,
    pub unified_max: f64,
    pub seed: u64,
    pub max_new_tokens: usize,
    pub rope: bool,
    pub ffn_activation: FfnActivation,
    /// Share W_O and FFN rows with the BoothFlex array.
    pub dual_core: bool,
    /// Keep per-token integer intermediates.
    pub record: bool,
    pub hw: HardwareSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lop: true,
            lop_in_prefill: false,
            k: DEFAULT_TOP_K,
            unified_max: DEFAULT_UNIFIED_MAX,
            seed: 0,
            max_new_tokens: 16,
            rope: false,
            ffn_activation: FfnActivation::default(),
            dual_core: true,
            record: false,
            hw: HardwareSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !self.unified_max.is_finite() {
            return Err(Error::Config("unified_max must be finite".into()));
        }
        self.hw.validate()
    }

    fn lop_for(&self, stage: Stage) -> bool {
        match stage {
            Stage::Prefill => self.lop_in_prefill,
            Stage::Decode => self.lop,
        }
    }
}

/// INT8 K/V rows of one head with per-token scales and their LO features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadCache {
    pub k: Vec<Vec<i8>>,
    pub k_scale: Vec<f64>,
    pub v: Vec<Vec<i8>>,
    pub v_scale: Vec<f64>,
    pub lo: Vec<LoVector>,
}

impl HeadCache {
    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    fn push(&mut self, k: Vec<i8>, k_scale: f64, v: Vec<i8>, v_scale: f64) {
        self.lo.push(LoVector::from_i8(&k));
        self.k.push(k);
        self.k_scale.push(k_scale);
        self.v.push(v);
        self.v_scale.push(v_scale);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KVCache {
    /// `[layer][head]`.
    pub heads: Vec<Vec<HeadCache>>,
}

impl KVCache {
    pub fn new(layers: usize, heads: usize) -> Self {
        Self { heads: vec![vec![HeadCache::default(); heads]; layers] }
    }

    /// Tokens cached (taken from the first layer).
    pub fn len(&self) -> usize {
        self.heads.first().and_then(|l| l.first()).map_or(0, HeadCache::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every LO entry matches the stored K row and all lengths agree.
    pub fn is_coherent(&self) -> bool {
        let n = self.len();
        self.heads.iter().flatten().all(|h| {
            h.k.len() == n
                && h.v.len() == n
                && h.k_scale.len() == n
                && h.v_scale.len() == n
                && h.lo.len() == n
                && h.k.iter().zip(&h.lo).all(|(k, lo)| LoVector::from_i8(k) == *lo)
        })
    }
}

/// Integer intermediates of one token in one layer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenRecord {
    pub layer: usize,
    pub pos: usize,
    pub x_q: Vec<i8>,
    pub q: Vec<i32>,
    pub k: Vec<i32>,
    pub v: Vec<i32>,
    /// Per head: quantized query, key and value rows.
    pub head_q: Vec<Vec<i8>>,
    pub head_k: Vec<Vec<i8>>,
    pub head_v: Vec<Vec<i8>>,
    /// Per head: surrogate scores over the whole cache when LOP ran.
    pub surrogate: Vec<Vec<i64>>,
    /// Per head: attended cache positions, ascending.
    pub selected: Vec<Vec<usize>>,
    pub scores: Vec<Vec<i32>>,
    pub probs_q: Vec<Vec<i8>>,
    pub attn_out: Vec<Vec<i32>>,
    pub attn_q: Vec<i8>,
    pub o_proj: Vec<i32>,
    pub ffn_in_q: Vec<i8>,
    pub ffn_up: Vec<i32>,
    pub ffn_mid_q: Vec<i8>,
    pub ffn_down: Vec<i32>,
    /// Block output (real).
    pub output: Vec<f64>,
}

/// DRAM traffic of one generated token.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmaCounters {
    pub weight_bytes: u64,
    pub kv_dense_bytes: u64,
    pub kv_fetched_bytes: u64,
    pub lo_feature_bytes: u64,
}

impl EmaCounters {
    pub fn total(&self) -> u64 {
        self.weight_bytes + self.kv_fetched_bytes + self.lo_feature_bytes
    }
}

fn rms_norm(x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let mut st = RmsState::new(DEFAULT_RMS_EPS);
    let partial = st.stage1(x, w)?;
    let inv = st.inv_rms();
    Ok(partial.into_iter().map(|p| p * inv).collect())
}

/// Per-row absmax quantization into one integer batch plus row scales.
fn quantize_rows(rows: &[Vec<f64>]) -> Result<(QTensor, Vec<f64>)> {
    let cols = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(rows.len() * cols);
    let mut scales = Vec::with_capacity(rows.len());
    for r in rows {
        let q = QuantParams::for_vector(r);
        data.extend(r.iter().map(|&v| q.quantize(v)));
        scales.push(q.scale);
    }
    Ok((QTensor::from_ints(rows.len(), cols, data)?, scales))
}

fn dequant(ints: &[i32], weight_scale: f64, act_scale: f64) -> Vec<f64> {
    ints.iter().map(|&v| v as f64 * weight_scale / act_scale).collect()
}

/// Rotates consecutive pairs of `x` by position-dependent angles.
pub(crate) fn rope(x: &mut [f64], pos: usize) {
    let d = x.len();
    for i in 0..d / 2 {
        let theta = pos as f64 * ROPE_BASE.powf(-2.0 * i as f64 / d as f64);
        let (s, c) = theta.sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        x[2 * i] = a * c - b * s;
        x[2 * i + 1] = a * s + b * c;
    }
}

/// Output rows of a dual-core projection given to the TINT arrays, in
/// whole 8-row tiles, proportional to array count.
fn tint_rows(n: usize, hw: &HardwareSpec) -> usize {
    let tile = hw.pe_rows;
    let tiles = n.div_ceil(tile);
    let c = hw.tint_core_count;
    let tint_tiles = (tiles * c).div_ceil(c + hw.boothflex_count);
    (tint_tiles * tile).min(n)
}

/// Ternary projection split by output rows between the TINT array and the
/// BoothFlex array in ternary mode.
fn dual_matmul(act: &QTensor, w: &TritTensor, cfg: &RunConfig) -> Result<IntMatrix> {
    let n = w.rows();
    let split = if cfg.dual_core { tint_rows(n, &cfg.hw) } else { n };
    if split == n {
        return tint::matmul(act, w);
    }
    let a = tint::matmul(act, &w.row_slice(0, split)?)?;
    let b = boothflex_matmul(act, Weights::Ternary(&w.row_slice(split, n)?), PrecisionMode::TernaryInt8)?.out;
    let m = act.rows();
    let mut out = IntMatrix::zeros(m, n);
    for r in 0..m {
        for c in 0..split {
            out.set(r, c, a.get(r, c));
        }
        for c in split..n {
            out.set(r, c, b.get(r, c - split));
        }
    }
    Ok(out)
}

struct HeadAttention {
    out: Vec<f64>,
    surrogate: Vec<i64>,
    selected: Vec<usize>,
    scores: Vec<i32>,
    probs_q: Vec<i8>,
    out_int: Vec<i32>,
}

/// One query head against its cache on the BoothFlex array.
fn attend(q: &[i8], q_scale: f64, cache: &HeadCache, use_lop: bool, cfg: &RunConfig) -> Result<HeadAttention> {
    let hd = q.len();
    let (surrogate, mut selected) = if use_lop && cache.len() > cfg.k {
        let sel = select_kv(q, &cache.lo, cfg.k)?;
        let all = {
            let qv = LoVector::from_i8(q);
            cache.lo.iter().map(|k| crate::lop::surrogate_score(&qv, k)).collect::<Result<Vec<_>>>()?
        };
        (all, sel.indices)
    } else {
        (Vec::new(), (0..cache.len()).collect())
    };
    selected.sort_unstable();
    let n = selected.len();

    let q_t = QTensor::from_ints(1, hd, q.to_vec())?;
    let k_rows: Vec<i8> = selected.iter().flat_map(|&j| cache.k[j].iter().copied()).collect();
    let k_t = QTensor::from_ints(n, hd, k_rows)?;
    let scores = boothflex_matmul(&q_t, Weights::Int8(&k_t), PrecisionMode::Int8Int8)?.out.data;

    let inv_sqrt = 1.0 / (hd as f64).sqrt();
    let real: Vec<f64> =
        scores.iter().zip(&selected).map(|(&s, &j)| s as f64 / (q_scale * cache.k_scale[j]) * inv_sqrt).collect();
    let mut st = SoftmaxState::new(cfg.unified_max);
    let mut partials = Vec::with_capacity(n);
    for tile in real.chunks(SOFTMAX_TILE) {
        partials.extend(softmax_stage1(tile, &mut st));
    }
    if !(st.running_sum > 0.0) {
        return Err(Error::ZeroSum);
    }
    // V scales fold into the deferred softmax divisor
    let divisors: Vec<f64> = selected.iter().map(|&j| st.running_sum * cache.v_scale[j]).collect();
    let folded: Vec<f64> = partials.iter().zip(&divisors).map(|(&e, &dv)| e / dv).collect();
    let pq = QuantParams::for_vector(&folded);
    let probs_q: Vec<i8> = partials.iter().zip(&divisors).map(|(&e, &dv)| FusedScale::new(dv, pq).apply(e)).collect();

    let p_t = QTensor::from_ints(1, n, probs_q.clone())?;
    let mut v_t = vec![0i8; hd * n];
    for (col, &j) in selected.iter().enumerate() {
        for (r, &v) in cache.v[j].iter().enumerate() {
            v_t[r * n + col] = v;
        }
    }
    let v_t = QTensor::from_ints(hd, n, v_t)?;
    let out_int = boothflex_matmul(&p_t, Weights::Int8(&v_t), PrecisionMode::Int8Int8)?.out.data;
    let out = out_int.iter().map(|&v| v as f64 / pq.scale).collect();
    Ok(HeadAttention { out, surrogate, selected, scores, probs_q, out_int })
}

/// Runs `x` (one row per new token, positions continuing the cache) through
/// one block. K/V rows are appended to the cache as each token is reached, so
/// attention is causal within the batch.
pub fn forward_block(
    x: &[Vec<f64>],
    layer: usize,
    model: &ToyModel,
    cache: &mut KVCache,
    stage: Stage,
    cfg: &RunConfig,
    records: Option<&mut Vec<TokenRecord>>,
) -> Result<Vec<Vec<f64>>> {
    let spec = &model.spec;
    let lw = model.layers.get(layer).ok_or_else(|| Error::Config(format!("layer {layer} out of range")))?;
    let (d, heads, hd) = (spec.d_model, spec.heads, spec.head_dim);
    if x.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(Error::LengthMismatch { left: r.len(), right: d });
    }
    let m = x.len();
    let pos0 = cache.heads[layer][0].len();
    let s = &lw.scales;

    let normed = x.iter().map(|r| rms_norm(r, &lw.attn_norm)).collect::<Result<Vec<_>>>()?;
    let (xq, xs) = quantize_rows(&normed)?;
    let q_int = tint::matmul(&xq, &lw.wq)?;
    let k_int = tint::matmul(&xq, &lw.wk)?;
    let v_int = tint::matmul(&xq, &lw.wv)?;

    let mut recs: Vec<TokenRecord> = Vec::new();
    let mut attn_rows = Vec::with_capacity(m);
    let use_lop = cfg.lop_for(stage);
    for t in 0..m {
        let pos = pos0 + t;
        let mut q_real = dequant(q_int.row(t), s.q, xs[t]);
        let mut k_real = dequant(k_int.row(t), s.k, xs[t]);
        let v_real = dequant(v_int.row(t), s.v, xs[t]);
        let mut rec = TokenRecord {
            layer,
            pos,
            x_q: xq.row(t).to_vec(),
            q: q_int.row(t).to_vec(),
            k: k_int.row(t).to_vec(),
            v: v_int.row(t).to_vec(),
            ..TokenRecord::default()
        };
        let mut row = Vec::with_capacity(d);
        for h in 0..heads {
            let span = h * hd..(h + 1) * hd;
            if cfg.rope {
                rope(&mut q_real[span.clone()], pos);
                rope(&mut k_real[span.clone()], pos);
            }
            let qp = QuantParams::for_vector(&q_real[span.clone()]);
            let kp = QuantParams::for_vector(&k_real[span.clone()]);
            let vp = QuantParams::for_vector(&v_real[span.clone()]);
            let hq: Vec<i8> = q_real[span.clone()].iter().map(|&v| qp.quantize(v)).collect();
            let hk: Vec<i8> = k_real[span.clone()].iter().map(|&v| kp.quantize(v)).collect();
            let hv: Vec<i8> = v_real[span.clone()].iter().map(|&v| vp.quantize(v)).collect();
            let hc = &mut cache.heads[layer][h];
            hc.push(hk.clone(), kp.scale, hv.clone(), vp.scale);
            let att = attend(&hq, qp.scale, hc, use_lop, cfg)?;
            row.extend_from_slice(&att.out);
            rec.head_q.push(hq);
            rec.head_k.push(hk);
            rec.head_v.push(hv);
            rec.surrogate.push(att.surrogate);
            rec.selected.push(att.selected);
            rec.scores.push(att.scores);
            rec.probs_q.push(att.probs_q);
            rec.attn_out.push(att.out_int);
        }
        attn_rows.push(row);
        recs.push(rec);
    }

    let (aq, as_) = quantize_rows(&attn_rows)?;
    let o_int = dual_matmul(&aq, &lw.wo, cfg)?;
    let mut h1: Vec<Vec<f64>> = Vec::with_capacity(m);
    for t in 0..m {
        let o = dequant(o_int.row(t), s.o, as_[t]);
        h1.push(x[t].iter().zip(&o).map(|(a, b)| a + b).collect());
    }

    let normed = h1.iter().map(|r| rms_norm(r, &lw.ffn_norm)).collect::<Result<Vec<_>>>()?;
    let (fq, fs) = quantize_rows(&normed)?;
    let up_int = dual_matmul(&fq, &lw.w_up, cfg)?;
    let mid: Vec<Vec<f64>> = (0..m)
        .map(|t| dequant(up_int.row(t), s.up, fs[t]).into_iter().map(|v| cfg.ffn_activation.apply(v)).collect())
        .collect();
    let (mq, ms) = quantize_rows(&mid)?;
    let down_int = dual_matmul(&mq, &lw.w_down, cfg)?;
    let mut out = Vec::with_capacity(m);
    for t in 0..m {
        let dn = dequant(down_int.row(t), s.down, ms[t]);
        out.push(h1[t].iter().zip(&dn).map(|(a, b)| a + b).collect::<Vec<f64>>());
    }

    if let Some(sink) = records {
        for (t, mut rec) in recs.into_iter().enumerate() {
            rec.attn_q = aq.row(t).to_vec();
            rec.o_proj = o_int.row(t).to_vec();
            rec.ffn_in_q = fq.row(t).to_vec();
            rec.ffn_up = up_int.row(t).to_vec();
            rec.ffn_mid_q = mq.row(t).to_vec();
            rec.ffn_down = down_int.row(t).to_vec();
            rec.output = out[t].clone();
            sink.push(rec);
        }
    }
    Ok(out)
}

/// Final norm and tied output head.
pub fn logits(model: &ToyModel, x: &[f64]) -> Result<Vec<f64>> {
    let h = rms_norm(x, &model.final_norm)?;
    let d = model.spec.d_model;
    Ok(model.embedding.chunks(d).map(|e| e.iter().zip(&h).map(|(a, b)| a * b).sum()).collect())
}

/// Highest logit, lowest index on ties.
pub fn argmax(xs: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// Prompt followed by generated tokens.
    pub tokens: Vec<u32>,
    pub prompt_len: usize,
    /// One schedule per generated token.
    pub traces: Vec<PhaseTrace>,
    pub ema: Vec<EmaCounters>,
    pub records: Vec<TokenRecord>,
}

impl Generation {
    pub fn generated(&self) -> &[u32] {
        &self.tokens[self.prompt_len..]
    }
}

fn pass(
    model: &ToyModel,
    cache: &mut KVCache,
    x: Vec<Vec<f64>>,
    stage: Stage,
    cfg: &RunConfig,
    records: &mut Vec<TokenRecord>,
) -> Result<Vec<f64>> {
    let mut h = x;
    for layer in 0..model.spec.layers {
        let sink = if cfg.record { Some(&mut *records) } else { None };
        h = forward_block(&h, layer, model, cache, stage, cfg, sink)?;
    }
    logits(model, h.last().expect("non-empty pass"))
}

fn token_counters(model: &ToyModel, context: usize, stage: Stage, cfg: &RunConfig) -> EmaCounters {
    let spec = &model.spec;
    let weight_bytes = (spec.ternary_params() as f64 * cfg.hw.weight_bits_per_trit / 8.0).ceil() as u64;
    let k = if cfg.lop_for(stage) { cfg.k } else { context };
    let st = ema_savings(context, k, 2 * spec.head_dim, spec.head_dim);
    let n = (spec.layers * spec.kv_heads) as u64;
    EmaCounters {
        weight_bytes,
        kv_dense_bytes: st.dense_bytes * n,
        kv_fetched_bytes: st.fetched_bytes * n,
        lo_feature_bytes: st.lo_feature_bytes * n,
    }
}

/// Greedy generation: one prefill pass over the prompt, then one decode pass
/// per further token.
pub fn generate(model: &ToyModel, prompt: &[u32], cfg: &RunConfig) -> Result<Generation> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(Error::Config("prompt must not be empty".into()));
    }
    let spec = &model.spec;
    let mut cache = KVCache::new(spec.layers, spec.heads);
    let mut gen = Generation {
        tokens: prompt.to_vec(),
        prompt_len: prompt.len(),
        traces: Vec::new(),
        ema: Vec::new(),
        records: Vec::new(),
    };
    if cfg.max_new_tokens == 0 {
        return Ok(gen);
    }
    let toggles = Toggles {
        lop: cfg.lop,
        prefill_lop: cfg.lop_in_prefill,
        top_k: cfg.k,
        dual_core: cfg.dual_core,
        ..Toggles::default()
    };
    let x = prompt.iter().map(|&t| model.embed(t)).collect::<Result<Vec<_>>>()?;
    let mut lg = pass(model, &mut cache, x, Stage::Prefill, cfg, &mut gen.records)?;
    gen.traces.push(schedule_heads(spec, &cfg.hw, Stage::Prefill, prompt.len(), toggles));
    gen.ema.push(token_counters(model, prompt.len(), Stage::Prefill, cfg));
    gen.tokens.push(argmax(&lg));

    for _ in 1..cfg.max_new_tokens {
        let last = *gen.tokens.last().expect("non-empty");
        lg = pass(model, &mut cache, vec![model.embed(last)?], Stage::Decode, cfg, &mut gen.records)?;
        let ctx = cache.len();
        gen.traces.push(schedule_heads(spec, &cfg.hw, Stage::Decode, ctx, toggles));
        gen.ema.push(token_counters(model, ctx, Stage::Decode, cfg));
        gen.tokens.push(argmax(&lg));
    }
    debug_assert!(cache.is_coherent());
    Ok(gen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64) -> ToyModel {
        ToyModel::random(ToyModel::default_spec(), seed, 1.0 / 3.0).unwrap()
    }

    #[test]
    fn zero_weights_pass_residual() {
        let m = toy(1).zeroed().unwrap();
        let cfg = RunConfig::default();
        let x = vec![m.embed(3).unwrap(), m.embed(7).unwrap()];
        let mut cache = KVCache::new(m.spec.layers, m.spec.heads);
        let y = forward_block(&x, 0, &m, &mut cache, Stage::Prefill, &cfg, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn no_new_tokens_returns_prompt() {
        let cfg = RunConfig { max_new_tokens: 0, ..RunConfig::default() };
        let g = generate(&toy(2), &[1, 2, 3], &cfg).unwrap();
        assert_eq!(g.tokens, vec![1, 2, 3]);
        assert!(g.generated().is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let m = toy(3);
        let cfg = RunConfig { max_new_tokens: 6, record: true, ..RunConfig::default() };
        let a = generate(&m, &[5, 9], &cfg).unwrap();
        let b = generate(&m, &[5, 9], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.generated().len(), 6);
        assert_eq!(a.traces.len(), 6);
    }

    #[test]
    fn dual_split_matches_single_core() {
        let m = toy(4);
        let w = &m.layers[0].w_up;
        let act = QTensor::from_ints(3, w.cols(), (0..3 * w.cols()).map(|i| ((i % 255) as i32 - 127) as i8).collect()).unwrap();
        let cfg = RunConfig::default();
        assert!(tint_rows(w.rows(), &cfg.hw) < w.rows());
        assert_eq!(dual_matmul(&act, w, &cfg).unwrap(), tint::matmul(&act, w).unwrap());
    }

    #[test]
    fn cache_stays_coherent() {
        let m = toy(5);
        let cfg = RunConfig::default();
        let mut cache = KVCache::new(m.spec.layers, m.spec.heads);
        let x: Vec<_> = (0..5).map(|t| m.embed(t).unwrap()).collect();
        forward_block(&x, 0, &m, &mut cache, Stage::Prefill, &cfg, None).unwrap();
        assert_eq!(cache.heads[0][0].len(), 5);
        assert!(cache.heads.iter().flatten().all(|h| h.k.iter().zip(&h.lo).all(|(k, lo)| LoVector::from_i8(k) == *lo)));
    }

    #[test]
    fn rope_preserves_norm() {
        let mut x: Vec<f64> = (0..16).map(|i| i as f64 - 7.5).collect();
        let n0: f64 = x.iter().map(|v| v * v).sum();
        rope(&mut x, 37);
        let n1: f64 = x.iter().map(|v| v * v).sum();
        assert!((n0 - n1).abs() < 1e-9);
    }

    #[test]
    fn save_load_round_trip() {
        let m = toy(6);
        let dir = std::env::temp_dir().join(format!("ternacc-toy-{}", std::process::id()));
        m.save(&dir).unwrap();
        let back = ToyModel::load(&dir).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(back, m);
    }
}
