//! Analytical performance model.

mod schedule;
mod spec;

use serde::{Deserialize, Serialize};

pub use schedule::{
    buffer_requirement, schedule_heads, simulate_layer, Core, LayerSchedule, Op, Phase, PhaseKind, PhaseTrace, Stage,
    Toggles, TraceEvent,
};
pub use spec::{HardwareSpec, ModelSpec, PRESET_NAMES};

use crate::error::{Error, Result};

/// Cached tokens used for decode figures unless stated otherwise.
pub const DEFAULT_DECODE_CONTEXT: usize = 2048;
/// Prompt length of the prefill figure.
pub const DEFAULT_PROMPT_LEN: usize = 64;
/// Decode throughput the TINT array count is calibrated against (3B preset).
pub const CALIBRATION_TARGET_TPS: f64 = 70.70;

fn seconds(cycles: u64, hw: &HardwareSpec) -> f64 {
    cycles as f64 / hw.frequency_hz
}

/// Tokens per second for one decode step attending to `seq_len` cached tokens.
pub fn estimate_decode_throughput(model: &ModelSpec, hw: &HardwareSpec, seq_len: usize, toggles: Toggles) -> f64 {
    let layer = simulate_layer(model, hw, Stage::Decode, seq_len.max(1), toggles);
    let latency = model.layers as f64 * seconds(layer.cycles, hw);
    if latency == 0.0 {
        f64::INFINITY
    } else {
        1.0 / latency
    }
}

/// Wall time of the prompt pass over all layers.
pub fn estimate_prefill_latency(model: &ModelSpec, hw: &HardwareSpec, prompt_len: usize, toggles: Toggles) -> f64 {
    if prompt_len == 0 {
        return 0.0;
    }
    let layer = simulate_layer(model, hw, Stage::Prefill, prompt_len, toggles);
    model.layers as f64 * seconds(layer.cycles, hw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthProfile {
    /// Highest sustained read rate of any phase, GB/s.
    pub peak_read_gbps: f64,
    pub peak_write_gbps: f64,
    /// Same figures had every phase run at compute pace.
    pub demanded_read_gbps: f64,
    pub demanded_write_gbps: f64,
}

/// Per-phase DRAM rates over one layer.
///
/// Phases whose demand exceeds `dram_bw_gbps` are stretched to the limit.
/// If every phase is stretched the schedule cannot be rate-matched anywhere
/// and `InfeasibleSchedule` is returned.
pub fn bandwidth_profile(
    model: &ModelSpec,
    hw: &HardwareSpec,
    stage: Stage,
    seq_len: usize,
    toggles: Toggles,
) -> Result<BandwidthProfile> {
    let layer = simulate_layer(model, hw, stage, seq_len, toggles);
    let mut p = BandwidthProfile { peak_read_gbps: 0.0, peak_write_gbps: 0.0, demanded_read_gbps: 0.0, demanded_write_gbps: 0.0 };
    if layer.phases.is_empty() {
        return Ok(p);
    }
    if layer.phases.iter().all(Phase::is_bandwidth_bound) {
        return Err(Error::InfeasibleSchedule(format!(
            "{} {:?}: every phase demands more than {} GB/s",
            model.name, stage, hw.dram_bw_gbps
        )));
    }
    for ph in &layer.phases {
        p.peak_read_gbps = p.peak_read_gbps.max(ph.read_gbps(hw));
        p.peak_write_gbps = p.peak_write_gbps.max(ph.write_gbps(hw));
        p.demanded_read_gbps = p.demanded_read_gbps.max(ph.demanded_read_gbps(hw));
        p.demanded_write_gbps = p.demanded_write_gbps.max(ph.demanded_write_gbps(hw));
    }
    Ok(p)
}

/// Throughput ratios with one feature on versus off, all others on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub model: String,
    pub seq_len: usize,
    /// Attention phase, head pipelining on / off.
    pub head_pipeline_attention: f64,
    pub head_pipeline_overall: f64,
    /// Output projection plus FFN, dual-core on / off.
    pub dual_core_ffn: f64,
    pub dual_core_overall: f64,
    /// Both scheduling features on / both off.
    pub scheduling_overall: f64,
    pub lop_attention: f64,
    pub lop_overall: f64,
    /// Dense KV bytes over fetched KV bytes.
    pub lop_kv_ema_reduction: f64,
    /// Dense KV bytes over fetched KV plus LO feature bytes.
    pub lop_kv_ema_reduction_net: f64,
}

impl AblationReport {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("head_pipeline.attention", self.head_pipeline_attention),
            ("head_pipeline.overall", self.head_pipeline_overall),
            ("dual_core.ffn", self.dual_core_ffn),
            ("dual_core.overall", self.dual_core_overall),
            ("scheduling.overall", self.scheduling_overall),
            ("lop.attention", self.lop_attention),
            ("lop.overall", self.lop_overall),
            ("lop.kv_ema_reduction", self.lop_kv_ema_reduction),
            ("lop.kv_ema_reduction_net", self.lop_kv_ema_reduction_net),
        ]
    }
}

fn ffn_cycles(l: &LayerSchedule) -> u64 {
    [PhaseKind::OutProj, PhaseKind::FfnUp, PhaseKind::FfnDown].iter().map(|&k| l.phase(k).duration).sum()
}

fn ratio(off: u64, on: u64) -> f64 {
    off as f64 / on as f64
}

/// Decode-step ablation at `seq_len` cached tokens with top-`k` selection.
pub fn ablate(model: &ModelSpec, hw: &HardwareSpec, seq_len: usize, k: usize) -> AblationReport {
    let all = Toggles { top_k: k, ..Toggles::default() };
    let run = |t: Toggles| simulate_layer(model, hw, Stage::Decode, seq_len, t);
    let on = run(all);
    let no_hlp = run(Toggles { head_pipeline: false, ..all });
    let no_dual = run(Toggles { dual_core: false, ..all });
    let no_sched = run(Toggles { head_pipeline: false, dual_core: false, ..all });
    let no_lop = run(Toggles { lop: false, ..all });
    let att = |l: &LayerSchedule| l.phase(PhaseKind::Attention).duration;
    let kv = |l: &LayerSchedule| l.phase(PhaseKind::Attention).kv_read_bytes;
    let lo = |l: &LayerSchedule| l.phase(PhaseKind::Attention).lo_read_bytes;
    AblationReport {
        model: model.name.clone(),
        seq_len,
        head_pipeline_attention: ratio(att(&no_hlp), att(&on)),
        head_pipeline_overall: ratio(no_hlp.cycles, on.cycles),
        dual_core_ffn: ratio(ffn_cycles(&no_dual), ffn_cycles(&on)),
        dual_core_overall: ratio(no_dual.cycles, on.cycles),
        scheduling_overall: ratio(no_sched.cycles, on.cycles),
        lop_attention: ratio(att(&no_lop), att(&on)),
        lop_overall: ratio(no_lop.cycles, on.cycles),
        lop_kv_ema_reduction: kv(&no_lop) / kv(&on),
        lop_kv_ema_reduction_net: kv(&no_lop) / (kv(&on) + lo(&on)),
    }
}

/// Picks the TINT array count whose decode throughput lands closest to
/// `target_tps`. Returns the count and its predicted throughput.
pub fn calibrate_tint_cores(
    model: &ModelSpec,
    hw: &HardwareSpec,
    target_tps: f64,
    seq_len: usize,
    max_cores: usize,
) -> (usize, f64) {
    (1..=max_cores.max(1))
        .map(|c| {
            let h = HardwareSpec { tint_core_count: c, ..hw.clone() };
            (c, estimate_decode_throughput(model, &h, seq_len, Toggles::default()))
        })
        .min_by(|a, b| (a.1 - target_tps).abs().total_cmp(&(b.1 - target_tps).abs()))
        .expect("at least one candidate")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub model: String,
    pub tint_core_count: usize,
    pub decode_context: usize,
    pub prompt_len: usize,
    pub toggles: Toggles,
    pub prefill_seconds: f64,
    pub decode_tokens_per_s: f64,
    /// Decode-stage peak rates, GB/s.
    pub peak_read_gbps: f64,
    pub peak_write_gbps: f64,
    pub prefill_peak_read_gbps: f64,
    pub prefill_peak_write_gbps: f64,
    /// DRAM bytes moved per decoded token.
    pub ema_bytes: f64,
    pub buffer_heads_required: usize,
}

impl PerfReport {
    pub fn build(model: &ModelSpec, hw: &HardwareSpec, decode_context: usize, prompt_len: usize, toggles: Toggles) -> Result<Self> {
        let decode = bandwidth_profile(model, hw, Stage::Decode, decode_context, toggles)?;
        let prefill = bandwidth_profile(model, hw, Stage::Prefill, prompt_len, toggles)?;
        let layer = simulate_layer(model, hw, Stage::Decode, decode_context, toggles);
        Ok(Self {
            model: model.name.clone(),
            tint_core_count: hw.tint_core_count,
            decode_context,
            prompt_len,
            toggles,
            prefill_seconds: estimate_prefill_latency(model, hw, prompt_len, toggles),
            decode_tokens_per_s: estimate_decode_throughput(model, hw, decode_context, toggles),
            peak_read_gbps: decode.peak_read_gbps,
            peak_write_gbps: decode.peak_write_gbps,
            prefill_peak_read_gbps: prefill.peak_read_gbps,
            prefill_peak_write_gbps: prefill.peak_write_gbps,
            ema_bytes: model.layers as f64 * layer.ema_bytes(),
            buffer_heads_required: buffer_requirement(&layer.trace),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hw() -> HardwareSpec {
        HardwareSpec::default()
    }

    #[test]
    fn calibration_selects_default() {
        let (c, tps) = calibrate_tint_cores(&ModelSpec::bitnet_3b(), &hw(), CALIBRATION_TARGET_TPS, DEFAULT_DECODE_CONTEXT, 16);
        assert_eq!(c, hw().tint_core_count);
        assert!((tps / CALIBRATION_TARGET_TPS - 1.0).abs() < 0.15, "{tps}");
    }

    #[test]
    fn infinite_bandwidth_hits_compute_plateau() {
        let m = ModelSpec::bitnet_7b();
        let fast = HardwareSpec { dram_bw_gbps: 1e12, ..hw() };
        let faster = HardwareSpec { dram_bw_gbps: 1e15, ..hw() };
        let a = estimate_decode_throughput(&m, &fast, 2048, Toggles::default());
        let b = estimate_decode_throughput(&m, &faster, 2048, Toggles::default());
        assert_eq!(a, b);
        let l = simulate_layer(&m, &faster, Stage::Decode, 2048, Toggles::default());
        assert!(l.phases.iter().all(|p| p.duration == p.compute_cycles));
    }

    #[test]
    fn bandwidth_monotone() {
        let m = ModelSpec::bitnet_3b();
        let mut prev = 0.0;
        for bw in [5.0, 10.0, 20.0, 40.0, 76.8, 150.0, 1000.0] {
            let h = HardwareSpec { dram_bw_gbps: bw, ..hw() };
            let t = estimate_decode_throughput(&m, &h, 2048, Toggles::default());
            assert!(t >= prev, "{bw}: {t} < {prev}");
            prev = t;
        }
    }

    #[test]
    fn zero_work_edges() {
        let mut m = ModelSpec::bitnet_3b();
        m.layers = 0;
        let p = bandwidth_profile(&m, &hw(), Stage::Decode, 2048, Toggles::default()).unwrap();
        assert_eq!((p.peak_read_gbps, p.peak_write_gbps), (0.0, 0.0));
        assert_eq!(estimate_prefill_latency(&ModelSpec::bitnet_3b(), &hw(), 0, Toggles::default()), 0.0);
    }

    #[test]
    fn starved_bandwidth_is_infeasible() {
        let h = HardwareSpec { dram_bw_gbps: 0.001, ..hw() };
        let r = bandwidth_profile(&ModelSpec::bitnet_3b(), &h, Stage::Decode, 2048, Toggles::default());
        assert!(matches!(r, Err(Error::InfeasibleSchedule(_))));
    }

    #[test]
    fn report_json_fields() {
        let r = PerfReport::build(&ModelSpec::bitnet_3b(), &hw(), DEFAULT_DECODE_CONTEXT, DEFAULT_PROMPT_LEN, Toggles::default()).unwrap();
        assert_eq!(r.buffer_heads_required, 2);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["prefill_seconds", "decode_tokens_per_s", "peak_read_gbps", "peak_write_gbps", "ema_bytes", "buffer_heads_required"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
