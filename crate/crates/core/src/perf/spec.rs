use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tint::CoreGeometry;

/// Accelerator configuration. Bandwidth is per direction: reads and writes
/// each get `dram_bw_gbps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareSpec {
    /// TINT arrays in the projection cluster. The single calibration knob.
    pub tint_core_count: usize,
    pub pe_rows: usize,
    pub pe_cols: usize,
    pub boothflex_count: usize,
    pub frequency_hz: f64,
    /// Peak DRAM bandwidth in GB/s (10^9 bytes per second).
    pub dram_bw_gbps: f64,
    pub weight_bits_per_trit: f64,
    pub activation_bits: u32,
    pub lo_feature_bits: u32,
    /// Shift-and-add scoring units in the LOP core.
    pub lop_lanes: usize,
    /// On-chip activation buffer; phase inputs larger than this stream from DRAM.
    pub quant_buffer_bytes: usize,
    /// Cost of one quantization barrier per vector.
    pub barrier_cycles: u64,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        Self {
            tint_core_count: 3,
            pe_rows: 8,
            pe_cols: 8,
            boothflex_count: 1,
            frequency_hz: 1e9,
            dram_bw_gbps: 76.8,
            weight_bits_per_trit: 1.6,
            activation_bits: 8,
            lo_feature_bits: 4,
            lop_lanes: 64,
            quant_buffer_bytes: 26_112,
            barrier_cycles: 1,
        }
    }
}

impl HardwareSpec {
    pub fn geometry(&self) -> CoreGeometry {
        CoreGeometry { pe_rows: self.pe_rows, pe_cols: self.pe_cols }
    }

    /// DRAM bytes per core cycle.
    pub fn bytes_per_cycle(&self) -> f64 {
        self.dram_bw_gbps * 1e9 / self.frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("tint_core_count", self.tint_core_count),
            ("pe_rows", self.pe_rows),
            ("pe_cols", self.pe_cols),
            ("boothflex_count", self.boothflex_count),
            ("lop_lanes", self.lop_lanes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let reals = [
            ("frequency_hz", self.frequency_hz),
            ("dram_bw_gbps", self.dram_bw_gbps),
            ("weight_bits_per_trit", self.weight_bits_per_trit),
        ];
        for (name, v) in reals {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.activation_bits == 0 || self.lo_feature_bits == 0 {
            return Err(Error::Config("bit widths must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let hw: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        hw.validate()?;
        Ok(hw)
    }

    /// `"default"` or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if name_or_path == "default" {
            return Ok(Self::default());
        }
        Self::from_toml_str(&std::fs::read_to_string(Path::new(name_or_path))?)
    }
}

/// Transformer dimensions. Query heads times head dim equals the model width;
/// grouped-query models share each K/V head across `heads / kv_heads` queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    /// Gated FFNs carry three projections, plain ones two.
    pub ffn_gated: bool,
    pub vocab: usize,
    pub tied_embeddings: bool,
    /// Published parameter count.
    pub param_count: f64,
}

pub const PRESET_NAMES: [&str; 4] = ["2b", "3b", "7b", "13b"];

impl ModelSpec {
    /// BitNet b1.58 2B4T model card dimensions.
    pub fn bitnet_2b() -> Self {
        Self {
            name: "2b".into(),
            layers: 30,
            d_model: 2560,
            heads: 20,
            kv_heads: 5,
            head_dim: 128,
            ffn_dim: 6912,
            ffn_gated: true,
            vocab: 128_256,
            tied_embeddings: true,
            param_count: 2.41e9,
        }
    }

    /// BitNet b1.58 3B (LLaMA layout) model card dimensions.
    pub fn bitnet_3b() -> Self {
        Self {
            name: "3b".into(),
            layers: 26,
            d_model: 3200,
            heads: 32,
            kv_heads: 32,
            head_dim: 100,
            ffn_dim: 8640,
            ffn_gated: true,
            vocab: 32_002,
            tied_embeddings: false,
            param_count: 3.32e9,
        }
    }

    /// LLaMA-2 7B dimensions with ternary projections.
    pub fn bitnet_7b() -> Self {
        Self {
            name: "7b".into(),
            layers: 32,
            d_model: 4096,
            heads: 32,
            kv_heads: 32,
            head_dim: 128,
            ffn_dim: 11_008,
            ffn_gated: true,
            vocab: 32_000,
            tied_embeddings: false,
            param_count: 6.74e9,
        }
    }

    /// LLaMA-2 13B dimensions with ternary projections.
    pub fn bitnet_13b() -> Self {
        Self {
            name: "13b".into(),
            layers: 40,
            d_model: 5120,
            heads: 40,
            kv_heads: 40,
            head_dim: 128,
            ffn_dim: 13_824,
            ffn_gated: true,
            vocab: 32_000,
            tied_embeddings: false,
            param_count: 13.02e9,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "2b" => Ok(Self::bitnet_2b()),
            "3b" => Ok(Self::bitnet_3b()),
            "7b" => Ok(Self::bitnet_7b()),
            "13b" => Ok(Self::bitnet_13b()),
            other => Err(Error::Config(format!("unknown model preset {other:?} (expected one of {PRESET_NAMES:?} or a file)"))),
        }
    }

    /// A preset name or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Self::preset(name_or_path);
        }
        Self::from_toml_str(&std::fs::read_to_string(Path::new(name_or_path))?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let m: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    #[inline]
    pub fn q_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    #[inline]
    pub fn kv_dim(&self) -> usize {
        self.kv_heads * self.head_dim
    }

    #[inline]
    pub fn ffn_matrices(&self) -> usize {
        if self.ffn_gated {
            3
        } else {
            2
        }
    }

    /// Query heads sharing one K/V head.
    #[inline]
    pub fn group_size(&self) -> usize {
        self.heads / self.kv_heads
    }

    /// Ternary weights per transformer block.
    pub fn ternary_params_per_layer(&self) -> u64 {
        let d = self.d_model as u64;
        let attn = d * self.q_dim() as u64 * 2 + d * self.kv_dim() as u64 * 2;
        let ffn = self.ffn_matrices() as u64 * d * self.ffn_dim as u64;
        attn + ffn
    }

    pub fn ternary_params(&self) -> u64 {
        self.layers as u64 * self.ternary_params_per_layer()
    }

    /// Parameters implied by the dimensions, including embeddings and norms.
    pub fn computed_params(&self) -> f64 {
        let d = self.d_model as f64;
        let norms = self.layers as f64 * 2.0 * d + d;
        let emb = self.vocab as f64 * d * if self.tied_embeddings { 1.0 } else { 2.0 };
        self.ternary_params() as f64 + norms + emb
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.head_dim == 0 || self.kv_heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(format!("{}: dimensions must be positive", self.name)));
        }
        if self.q_dim() != self.d_model {
            return Err(Error::Config(format!(
                "{}: heads x head_dim = {} but d_model = {}",
                self.name,
                self.q_dim(),
                self.d_model
            )));
        }
        if self.heads % self.kv_heads != 0 {
            return Err(Error::Config(format!("{}: kv_heads must divide heads", self.name)));
        }
        let computed = self.computed_params();
        let rel = (computed - self.param_count).abs() / self.param_count;
        if !(rel <= 0.05) {
            return Err(Error::Config(format!(
                "{}: declared {:.3e} parameters but dimensions give {:.3e} ({:.1}% off)",
                self.name,
                self.param_count,
                computed,
                rel * 100.0
            )));
        }
        Ok(())
    }
}
