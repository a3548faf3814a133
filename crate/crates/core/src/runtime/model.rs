use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Trit, TritTensor};
use crate::error::{Error, Result};
use crate::perf::ModelSpec;

/// Per-tensor real multipliers of the ternary projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionScales {
    pub q: f64,
    pub k: f64,
    pub v: f64,
    pub o: f64,
    pub up: f64,
    pub down: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: TritTensor,
    pub wk: TritTensor,
    pub wv: TritTensor,
    pub wo: TritTensor,
    pub w_up: TritTensor,
    pub w_down: TritTensor,
    pub scales: ProjectionScales,
    pub attn_norm: Vec<f64>,
    pub ffn_norm: Vec<f64>,
}

impl LayerWeights {
    fn tensors(&self) -> [(&'static str, &TritTensor); 6] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("w_up", &self.w_up),
            ("w_down", &self.w_down),
        ]
    }
}

/// Small transformer with ternary projections and a real, tied embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub spec: ModelSpec,
    pub layers: Vec<LayerWeights>,
    /// `vocab × d_model`, row-major. Also the output head.
    pub embedding: Vec<f64>,
    pub final_norm: Vec<f64>,
}

/// Everything that is not a ternary tensor, stored next to the packed files.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    spec: ModelSpec,
    scales: Vec<ProjectionScales>,
    attn_norm: Vec<Vec<f64>>,
    ffn_norm: Vec<Vec<f64>>,
    final_norm: Vec<f64>,
    embedding: Vec<f64>,
}

const SIDECAR: &str = "model.json";

fn sample_trits(rng: &mut ChaCha8Rng, rows: usize, cols: usize, zero_frac: f64) -> Result<TritTensor> {
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < zero_frac {
                Trit::Zero
            } else if rng.random::<bool>() {
                Trit::Pos
            } else {
                Trit::Neg
            }
        })
        .collect();
    TritTensor::new(rows, cols, data)
}

impl ToyModel {
    /// 2 layers, width 64, 4 heads, plain FFN of width 256, 256-token vocab.
    pub fn default_spec() -> ModelSpec {
        let mut spec = ModelSpec {
            name: "toy".into(),
            layers: 2,
            d_model: 64,
            heads: 4,
            kv_heads: 4,
            head_dim: 16,
            ffn_dim: 256,
            ffn_gated: false,
            vocab: 256,
            tied_embeddings: true,
            param_count: 0.0,
        };
        spec.param_count = spec.computed_params();
        spec
    }

    /// Seeded weights; each trit is zero with probability `zero_frac`,
    /// otherwise ±1 with equal odds.
    pub fn random(spec: ModelSpec, seed: u64, zero_frac: f64) -> Result<Self> {
        if spec.ffn_gated {
            return Err(Error::Config("toy runtime supports plain (two-matrix) FFNs only".into()));
        }
        if spec.kv_heads != spec.heads {
            return Err(Error::Config("toy runtime expects one K/V head per query head".into()));
        }
        if !(0.0..=1.0).contains(&zero_frac) {
            return Err(Error::Config(format!("zero fraction {zero_frac} outside [0, 1]")));
        }
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.d_model;
        let f = spec.ffn_dim;
        let mut layers = Vec::with_capacity(spec.layers);
        for _ in 0..spec.layers {
            let dense = (1.0 - zero_frac).max(1e-3);
            let s_d = 1.0 / (d as f64 * dense).sqrt();
            let s_f = 1.0 / (f as f64 * dense).sqrt();
            layers.push(LayerWeights {
                wq: sample_trits(&mut rng, spec.q_dim(), d, zero_frac)?,
                wk: sample_trits(&mut rng, spec.kv_dim(), d, zero_frac)?,
                wv: sample_trits(&mut rng, spec.kv_dim(), d, zero_frac)?,
                wo: sample_trits(&mut rng, d, spec.q_dim(), zero_frac)?,
                w_up: sample_trits(&mut rng, f, d, zero_frac)?,
                w_down: sample_trits(&mut rng, d, f, zero_frac)?,
                scales: ProjectionScales { q: s_d * 2.0, k: s_d * 2.0, v: s_d, o: s_d, up: s_d, down: s_f },
                attn_norm: (0..d).map(|_| rng.random_range(0.8..1.2)).collect(),
                ffn_norm: (0..d).map(|_| rng.random_range(0.8..1.2)).collect(),
            });
        }
        let embedding = (0..spec.vocab * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let final_norm = vec![1.0; d];
        Ok(Self { spec, layers, embedding, final_norm })
    }

    /// Same shapes with every projection set to zero.
    pub fn zeroed(&self) -> Result<Self> {
        let mut m = self.clone();
        for l in &mut m.layers {
            for t in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w_up, &mut l.w_down] {
                *t = TritTensor::zeros(t.rows(), t.cols())?;
            }
        }
        Ok(m)
    }

    pub fn embed(&self, token: u32) -> Result<Vec<f64>> {
        let t = token as usize;
        if t >= self.spec.vocab {
            return Err(Error::Config(format!("token {token} outside vocabulary of {}", self.spec.vocab)));
        }
        let d = self.spec.d_model;
        Ok(self.embedding[t * d..(t + 1) * d].to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spec;
        let (d, f) = (s.d_model, s.ffn_dim);
        if self.layers.len() != s.layers || self.embedding.len() != s.vocab * d || self.final_norm.len() != d {
            return Err(Error::ShapeMismatch("toy model tensors disagree with its spec".into()));
        }
        for l in &self.layers {
            let want = [(s.q_dim(), d), (s.kv_dim(), d), (s.kv_dim(), d), (d, s.q_dim()), (f, d), (d, f)];
            for ((name, t), (r, c)) in l.tensors().into_iter().zip(want) {
                if (t.rows(), t.cols()) != (r, c) {
                    return Err(Error::ShapeMismatch(format!("{name} is {}x{}, expected {r}x{c}", t.rows(), t.cols())));
                }
            }
            if l.attn_norm.len() != d || l.ffn_norm.len() != d {
                return Err(Error::ShapeMismatch("norm weight length".into()));
            }
        }
        Ok(())
    }

    /// Writes `layer{i}.{name}.tpk` packed files plus a JSON sidecar.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in l.tensors() {
                t.write_packed(BufWriter::new(File::create(dir.join(format!("layer{i}.{name}.tpk")))?))?;
            }
        }
        let side = Sidecar {
            spec: self.spec.clone(),
            scales: self.layers.iter().map(|l| l.scales).collect(),
            attn_norm: self.layers.iter().map(|l| l.attn_norm.clone()).collect(),
            ffn_norm: self.layers.iter().map(|l| l.ffn_norm.clone()).collect(),
            final_norm: self.final_norm.clone(),
            embedding: self.embedding.clone(),
        };
        let f = BufWriter::new(File::create(dir.join(SIDECAR))?);
        serde_json::to_writer(f, &side).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(dir.join(SIDECAR))?);
        let side: Sidecar = serde_json::from_reader(f).map_err(|e| Error::Format(e.to_string()))?;
        let n = side.spec.layers;
        if side.scales.len() != n || side.attn_norm.len() != n || side.ffn_norm.len() != n {
            return Err(Error::Format(format!("sidecar lists do not match {n} layers")));
        }
        let read = |i: usize, name: &str| -> Result<TritTensor> {
            TritTensor::read_packed(BufReader::new(File::open(dir.join(format!("layer{i}.{name}.tpk")))?))
        };
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            layers.push(LayerWeights {
                wq: read(i, "wq")?,
                wk: read(i, "wk")?,
                wv: read(i, "wv")?,
                wo: read(i, "wo")?,
                w_up: read(i, "w_up")?,
                w_down: read(i, "w_down")?,
                scales: side.scales[i],
                attn_norm: side.attn_norm[i].clone(),
                ffn_norm: side.ffn_norm[i].clone(),
            });
        }
        let m = Self { spec: side.spec, layers, embedding: side.embedding, final_norm: side.final_norm };
        m.validate()?;
        Ok(m)
    }
}
