//! Two-stage nonlinear operators and activation quantization.
//!
//! Stage 1 consumes tiles as they arrive: it emits the element-wise part of
//! the operator and accumulates the global statistic. Stage 2 applies the
//! deferred normalization once the whole vector has been seen, fused into the
//! quantization scale that follows it. Softmax uses a static unified maximum
//! instead of the dynamic one so stage 1 never waits on a global reduction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::QTensor;

pub const DEFAULT_UNIFIED_MAX: f64 = 16.0;
pub const DEFAULT_RMS_EPS: f64 = 1e-5;
/// Symmetric INT8 clamp bound.
pub const QMAX: f64 = 127.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxState {
    pub unified_max: f64,
    pub running_sum: f64,
    /// Inputs seen above `unified_max`. They are still exponentiated as-is.
    pub overflow_count: u64,
}

impl Default for SoftmaxState {
    fn default() -> Self {
        Self::new(DEFAULT_UNIFIED_MAX)
    }
}

impl SoftmaxState {
    pub fn new(unified_max: f64) -> Self {
        Self { unified_max, running_sum: 0.0, overflow_count: 0 }
    }
}

/// Emits `exp(x - M_unified)` for each element and folds them into the running sum.
pub fn softmax_stage1(tile: &[f64], state: &mut SoftmaxState) -> Vec<f64> {
    tile.iter()
        .map(|&x| {
            if x > state.unified_max {
                state.overflow_count += 1;
            }
            let e = (x - state.unified_max).exp();
            state.running_sum += e;
            e
        })
        .collect()
}

pub fn softmax_stage2(state: &SoftmaxState, partials: &[f64]) -> Result<Vec<f64>> {
    if !(state.running_sum > 0.0) {
        return Err(Error::ZeroSum);
    }
    let inv = 1.0 / state.running_sum;
    Ok(partials.iter().map(|&p| p * inv).collect())
}

/// Whole-vector two-stage softmax, tiled by `tile`.
pub fn softmax_two_stage(x: &[f64], unified_max: f64, tile: usize) -> Result<(Vec<f64>, SoftmaxState)> {
    let mut state = SoftmaxState::new(unified_max);
    let mut partials = Vec::with_capacity(x.len());
    for t in x.chunks(tile.max(1)) {
        partials.extend(softmax_stage1(t, &mut state));
    }
    Ok((softmax_stage2(&state, &partials)?, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsState {
    pub running_sq_sum: f64,
    pub count: usize,
    pub epsilon: f64,
}

impl RmsState {
    pub fn new(epsilon: f64) -> Self {
        Self { running_sq_sum: 0.0, count: 0, epsilon }
    }

    /// Stage 1 on one tile: returns `x_i * w_i`, accumulates `Σ x_i²`.
    pub fn stage1(&mut self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        if x.len() != w.len() {
            return Err(Error::LengthMismatch { left: x.len(), right: w.len() });
        }
        self.count += x.len();
        Ok(x.iter()
            .zip(w)
            .map(|(&xi, &wi)| {
                self.running_sq_sum += xi * xi;
                xi * wi
            })
            .collect())
    }

    /// The deferred factor `1 / sqrt(mean(x²) + eps)`.
    pub fn inv_rms(&self) -> f64 {
        let mean = if self.count == 0 { 0.0 } else { self.running_sq_sum / self.count as f64 };
        1.0 / (mean + self.epsilon).sqrt()
    }
}

pub fn rmsnorm_two_stage(x: &[f64], w: &[f64], eps: f64) -> Result<Vec<f64>> {
    let mut st = RmsState::new(eps);
    let partial = st.stage1(x, w)?;
    let inv = st.inv_rms();
    Ok(partial.into_iter().map(|p| p * inv).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    /// `127 / max|x|`, or 1 for an all-zero source.
    pub scale: f64,
}

impl QuantParams {
    pub fn from_absmax(absmax: f64) -> Self {
        if absmax > 0.0 {
            Self { scale: QMAX / absmax }
        } else {
            Self { scale: 1.0 }
        }
    }

    pub fn for_vector(x: &[f64]) -> Self {
        Self::from_absmax(x.iter().fold(0.0f64, |m, &v| m.max(v.abs())))
    }

    /// Round half away from zero, clamp to ±127.
    #[inline]
    pub fn quantize(&self, x: f64) -> i8 {
        (x * self.scale).round().clamp(-QMAX, QMAX) as i8
    }
}

pub fn absmax_quantize(x: &[f64]) -> Result<QTensor> {
    if x.is_empty() {
        return Err(Error::ShapeMismatch("cannot quantize an empty vector".into()));
    }
    let q = QuantParams::for_vector(x);
    QTensor::new(1, x.len(), x.iter().map(|&v| q.quantize(v)).collect(), q.scale)
}

/// Deferred divisor folded into the quantization scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedScale {
    pub factor: f64,
}

impl FusedScale {
    pub fn new(divisor: f64, q: QuantParams) -> Self {
        Self { factor: q.scale / divisor }
    }

    #[inline]
    pub fn apply(&self, partial: f64) -> i8 {
        (partial * self.factor).round().clamp(-QMAX, QMAX) as i8
    }
}

/// Single-multiply path for `quantize(partial / divisor)`.
pub fn fused_output(partial: f64, divisor: f64, q: QuantParams) -> i8 {
    FusedScale::new(divisor, q).apply(partial)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleEvent {
    Tile { vector: usize, tile: usize, cycle: u64 },
    /// Quantization barrier closing `vector`.
    Barrier { vector: usize, cycle: u64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub events: Vec<ScheduleEvent>,
}

impl ScheduleTrace {
    pub fn tile_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, ScheduleEvent::Tile { .. })).count()
    }

    pub fn barrier_count(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, ScheduleEvent::Barrier { .. })).count()
    }

    /// Cycles in which no tile issued between the first and last tile of a vector.
    pub fn intra_vector_stalls(&self) -> u64 {
        let mut stalls = 0;
        let mut last: Option<(usize, u64)> = None;
        for e in &self.events {
            match *e {
                ScheduleEvent::Tile { vector, cycle, .. } => {
                    if let Some((v, c)) = last {
                        if v == vector {
                            stalls += cycle - c - 1;
                        }
                    }
                    last = Some((vector, cycle));
                }
                ScheduleEvent::Barrier { .. } => last = None,
            }
        }
        stalls
    }
}

/// Output of the two-level RMSNorm→quantize pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelOutput {
    pub trace: ScheduleTrace,
    pub quantized: Vec<QTensor>,
}

/// Runs RMSNorm + absmax quantization over a stream of vectors, each
/// arriving as tiles. Tiles of one vector issue back to back, one per cycle;
/// the quantizer closes each vector with a barrier before the next vector
/// starts.
pub fn two_level_schedule(vectors: &[Vec<Vec<f64>>], norm_weight: &[f64], eps: f64) -> Result<TwoLevelOutput> {
    let mut trace = ScheduleTrace::default();
    let mut quantized = Vec::with_capacity(vectors.len());
    let mut cycle = 0u64;
    for (v, tiles) in vectors.iter().enumerate() {
        let mut st = RmsState::new(eps);
        let mut partial = Vec::new();
        let mut offset = 0;
        for (t, tile) in tiles.iter().enumerate() {
            let end = offset + tile.len();
            if end > norm_weight.len() {
                return Err(Error::LengthMismatch { left: end, right: norm_weight.len() });
            }
            partial.extend(st.stage1(tile, &norm_weight[offset..end])?);
            offset = end;
            trace.events.push(ScheduleEvent::Tile { vector: v, tile: t, cycle });
            cycle += 1;
        }
        if offset != norm_weight.len() {
            return Err(Error::LengthMismatch { left: offset, right: norm_weight.len() });
        }
        let inv = st.inv_rms();
        // absmax of the normalized vector is inv * absmax of the partials
        let q = QuantParams::from_absmax(partial.iter().fold(0.0f64, |m, &p| m.max((p * inv).abs())));
        let data = partial.iter().map(|&p| q.quantize(p * inv)).collect();
        quantized.push(QTensor::new(1, partial.len(), data, q.scale)?);
        trace.events.push(ScheduleEvent::Barrier { vector: v, cycle });
        cycle += 1;
    }
    Ok(TwoLevelOutput { trace, quantized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_softmax(x: &[f64]) -> Vec<f64> {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn stage1_examples() {
        let mut st = SoftmaxState::default();
        assert_eq!(softmax_stage1(&[16.0], &mut st), vec![1.0]);
        assert_eq!(st.running_sum, 1.0);
        let mut st = SoftmaxState::default();
        assert_eq!(softmax_stage1(&[0.0, 0.0], &mut st), vec![(-16.0f64).exp(); 2]);
        let mut st = SoftmaxState::default();
        softmax_stage1(&[20.0], &mut st);
        assert_eq!(st.overflow_count, 1);
    }

    #[test]
    fn stage2_examples() {
        let (y, _) = softmax_two_stage(&[3.0; 4], 16.0, 2).unwrap();
        for v in y {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let (y, _) = softmax_two_stage(&[16.0, 16.0], 16.0, 1).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
        assert_eq!(softmax_stage2(&SoftmaxState::default(), &[]), Err(Error::ZeroSum));
    }

    #[test]
    fn softmax_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let n = rng.random_range(1..200);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..=16.0)).collect();
            let (y, st) = softmax_two_stage(&x, 16.0, 8).unwrap();
            let r = reference_softmax(&x);
            for (a, b) in y.iter().zip(&r) {
                assert!((a - b).abs() <= 1e-6 * b.abs());
            }
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(st.overflow_count, 0);
        }
    }

    #[test]
    fn overflow_counter_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..24.0)).collect();
        let (_, st) = softmax_two_stage(&x, 16.0, 16).unwrap();
        assert_eq!(st.overflow_count as usize, x.iter().filter(|&&v| v > 16.0).count());
    }

    #[test]
    fn rmsnorm_examples() {
        let y = rmsnorm_two_stage(&[1.0; 4], &[1.0; 4], 0.0).unwrap();
        assert_eq!(y, vec![1.0; 4]);
        let y = rmsnorm_two_stage(&[2.0, 2.0], &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(y, vec![1.0, 1.0]);
        assert!(matches!(rmsnorm_two_stage(&[1.0], &[1.0, 2.0], 1e-5), Err(Error::LengthMismatch { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let n = rng.random_range(1..100);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64 + 1e-5).sqrt();
            let y = rmsnorm_two_stage(&x, &w, 1e-5).unwrap();
            for i in 0..n {
                let e = x[i] / rms * w[i];
                assert!((y[i] - e).abs() <= 1e-6 * e.abs().max(1e-12));
                assert_eq!(y[i].signum() * (x[i] * w[i]).signum() >= 0.0, true);
            }
        }
    }

    #[test]
    fn quantize_examples() {
        let q = absmax_quantize(&[0.5, -1.0]).unwrap();
        assert_eq!(q.scale(), 127.0);
        assert_eq!(q.data(), &[64, -127]);
        let q = absmax_quantize(&[0.0; 3]).unwrap();
        assert_eq!(q.data(), &[0, 0, 0]);
        assert_eq!(q.scale(), 1.0);
        assert_eq!(absmax_quantize(&[1.0]).unwrap().data(), &[127]);
        assert!(absmax_quantize(&[]).is_err());
    }

    #[test]
    fn quantization_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let n = rng.random_range(1..64);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let q = absmax_quantize(&x).unwrap();
            let amax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (d, &xi) in q.dequantize().iter().zip(&x) {
                assert!((d - xi).abs() <= 0.5 * amax / 127.0 + 1e-12);
            }
        }
    }

    #[test]
    fn fused_examples() {
        let q = QuantParams { scale: 127.0 };
        assert_eq!(fused_output(3.5, 3.5, q), 127);
        assert_eq!(fused_output(0.0, 2.0, q), 0);
    }

    #[test]
    fn schedule_counts() {
        let w = vec![1.0; 8];
        let one = vec![vec![vec![1.0, 2.0]; 4]];
        let out = two_level_schedule(&one, &w, 1e-5).unwrap();
        assert_eq!(out.trace.tile_count(), 4);
        assert_eq!(out.trace.barrier_count(), 1);
        assert_eq!(out.trace.intra_vector_stalls(), 0);

        let many: Vec<Vec<Vec<f64>>> = (0..5).map(|v| (0..4).map(|t| vec![v as f64 - t as f64, 0.5]).collect()).collect();
        let out = two_level_schedule(&many, &w, 1e-5).unwrap();
        assert_eq!(out.trace.tile_count(), 20);
        assert_eq!(out.trace.barrier_count(), 5);
        assert_eq!(out.trace.intra_vector_stalls(), 0);
        // barrier sits between the last tile of vector t and the first of t+1
        for (i, e) in out.trace.events.iter().enumerate() {
            if let ScheduleEvent::Barrier { vector, .. } = *e {
                assert!(matches!(out.trace.events[i - 1], ScheduleEvent::Tile { vector: v, tile: 3, .. } if v == vector));
            }
        }
    }

    #[test]
    fn schedule_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w: Vec<f64> = (0..32).map(|_| rng.random_range(0.5..1.5)).collect();
        let vectors: Vec<Vec<f64>> = (0..6).map(|_| (0..32).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
        let tiled: Vec<Vec<Vec<f64>>> = vectors.iter().map(|v| v.chunks(8).map(|c| c.to_vec()).collect()).collect();
        let out = two_level_schedule(&tiled, &w, 1e-5).unwrap();
        for (v, q) in vectors.iter().zip(&out.quantized) {
            let seq = absmax_quantize(&rmsnorm_two_stage(v, &w, 1e-5).unwrap()).unwrap();
            assert_eq!(q.data(), seq.data());
        }
    }
}
