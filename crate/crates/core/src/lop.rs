//! Leading-one prediction for sparse KV fetching.
//!
//! Each INT8 element is reduced to a sign bit and the position of its
//! leading one. The surrogate similarity of a query and a key is
//! `Σ sgn(q_i)·sgn(k_i)·2^(lo(q_i) + lo(k_i))`, evaluated with shifts and
//! adds. The top-k surrogate scores select which full-precision K/V rows are
//! fetched from DRAM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens fetched per query by default.
pub const DEFAULT_TOP_K: usize = 32;

/// Bits per compressed element (sign + 3-bit position).
pub const LO_FEATURE_BITS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LoFeature {
    pub negative: bool,
    pub lo_pos: u8,
    pub is_zero: bool,
}

impl LoFeature {
    pub const ZERO: LoFeature = LoFeature { negative: false, lo_pos: 0, is_zero: true };

    #[inline]
    pub fn sign(self) -> i64 {
        if self.is_zero {
            0
        } else if self.negative {
            -1
        } else {
            1
        }
    }

    /// 4-bit hardware form: bit 3 = sign, bits 0..3 = position.
    /// Zero shares the `+, lo 0` pattern and is told apart by the zero bitmap.
    #[inline]
    pub fn nibble(self) -> u8 {
        if self.is_zero {
            0
        } else {
            ((self.negative as u8) << 3) | self.lo_pos
        }
    }
}

/// Sign and `floor(log2 |x|)`; zero gets the zero flag.
#[inline]
pub fn lo_compress(x: i8) -> LoFeature {
    if x == 0 {
        return LoFeature::ZERO;
    }
    let mag = x.unsigned_abs();
    LoFeature { negative: x < 0, lo_pos: (7 - mag.leading_zeros()) as u8, is_zero: false }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoVector(pub Vec<LoFeature>);

impl LoVector {
    pub fn from_i8(xs: &[i8]) -> Self {
        Self(xs.iter().map(|&x| lo_compress(x)).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Serialized size for `d` elements: packed nibbles then the zero bitmap.
    pub fn serialized_len(d: usize) -> usize {
        d.div_ceil(2) + d.div_ceil(8)
    }

    /// Two features per byte (first in the low nibble), followed by a
    /// per-element zero bitmap, LSB first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.len();
        let mut out = vec![0u8; Self::serialized_len(d)];
        for (i, f) in self.0.iter().enumerate() {
            out[i / 2] |= f.nibble() << (4 * (i % 2));
        }
        let base = d.div_ceil(2);
        for (i, f) in self.0.iter().enumerate() {
            if f.is_zero {
                out[base + i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], d: usize) -> Result<Self> {
        if bytes.len() != Self::serialized_len(d) {
            return Err(Error::Format(format!(
                "LO vector of {d} elements needs {} bytes, got {}",
                Self::serialized_len(d),
                bytes.len()
            )));
        }
        let base = d.div_ceil(2);
        let features = (0..d)
            .map(|i| {
                if bytes[base + i / 8] >> (i % 8) & 1 == 1 {
                    return Ok(LoFeature::ZERO);
                }
                let nib = (bytes[i / 2] >> (4 * (i % 2))) & 0xF;
                Ok(LoFeature { negative: nib & 0x8 != 0, lo_pos: nib & 0x7, is_zero: false })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self(features))
    }
}

/// ExpAdd: sign-merged shift of one for each element pair, summed.
pub fn surrogate_score(q: &LoVector, k: &LoVector) -> Result<i64> {
    if q.len() != k.len() {
        return Err(Error::LengthMismatch { left: q.len(), right: k.len() });
    }
    let mut acc = 0i64;
    for (a, b) in q.0.iter().zip(&k.0) {
        if a.is_zero || b.is_zero {
            continue;
        }
        let term = 1i64 << (a.lo_pos + b.lo_pos);
        if a.negative != b.negative {
            acc -= term;
        } else {
            acc += term;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKResult {
    /// Selected positions, highest score first, ties by lower index.
    pub indices: Vec<usize>,
    pub scores: Vec<i64>,
}

/// Order-preserving map of a signed score onto unsigned bit planes.
#[inline]
fn offset_binary(s: i64) -> u64 {
    (s as u64) ^ (1u64 << 63)
}

/// Comparison-free top-k: walks the bit planes of the offset-binary scores
/// from the MSB. At each plane, if the surviving candidates with a 1 can
/// fill the remaining slots they become the only survivors; otherwise they
/// are all accepted and the search continues among the 0s. Candidates still
/// tied after the last plane are taken in index order.
pub fn topk_bitwise(scores: &[i64], k: usize) -> Result<TopKResult> {
    if k > scores.len() {
        return Err(Error::KTooLarge { k, len: scores.len() });
    }
    let keys: Vec<u64> = scores.iter().map(|&s| offset_binary(s)).collect();
    let mut accepted: Vec<usize> = Vec::with_capacity(k);
    let mut survivors: Vec<usize> = (0..scores.len()).collect();
    let mut remaining = k;
    for plane in (0..64).rev() {
        if remaining == 0 {
            break;
        }
        let (ones, zeros): (Vec<usize>, Vec<usize>) = survivors.iter().partition(|&&i| keys[i] >> plane & 1 == 1);
        if ones.len() >= remaining {
            survivors = ones;
        } else {
            remaining -= ones.len();
            accepted.extend(ones);
            survivors = zeros;
        }
    }
    // survivors share one value and are already in index order
    accepted.extend(survivors.into_iter().take(remaining));

    accepted.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
    let picked = accepted.iter().map(|&i| scores[i]).collect();
    Ok(TopKResult { indices: accepted, scores: picked })
}

/// Scores a quantized query against the LO cache and picks the tokens whose
/// full K/V rows are fetched. Caches of at most `k` tokens are returned whole.
pub fn select_kv(q: &[i8], cache: &[LoVector], k: usize) -> Result<TopKResult> {
    let qv = LoVector::from_i8(q);
    let scores = cache.iter().map(|key| surrogate_score(&qv, key)).collect::<Result<Vec<_>>>()?;
    if cache.len() <= k {
        return Ok(TopKResult { indices: (0..cache.len()).collect(), scores });
    }
    topk_bitwise(&scores, k)
}

/// KV traffic accounting for one LOP-gated attention step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseAttnStats {
    pub tokens_total: usize,
    pub tokens_fetched: usize,
    /// `max(0, 1 - k/M)`.
    pub fraction_saved: f64,
    pub dense_bytes: u64,
    pub fetched_bytes: u64,
    /// LO features read to score every cached token.
    pub lo_feature_bytes: u64,
    /// `dense - fetched - lo_feature`, may be negative for short caches.
    pub net_bytes_saved: i64,
}

impl SparseAttnStats {
    pub fn bytes_saved(&self) -> u64 {
        self.dense_bytes - self.fetched_bytes
    }
}

pub fn ema_savings(m: usize, k: usize, kv_bytes_per_token: usize, lo_elems_per_token: usize) -> SparseAttnStats {
    let fetched = k.min(m);
    let fraction_saved = if m > k { 1.0 - k as f64 / m as f64 } else { 0.0 };
    let dense_bytes = (m * kv_bytes_per_token) as u64;
    let fetched_bytes = (fetched * kv_bytes_per_token) as u64;
    let lo_feature_bytes = if m > k { (m * lo_elems_per_token * LO_FEATURE_BITS).div_ceil(8) as u64 } else { 0 };
    SparseAttnStats {
        tokens_total: m,
        tokens_fetched: fetched,
        fraction_saved,
        dense_bytes,
        fetched_bytes,
        lo_feature_bytes,
        net_bytes_saved: dense_bytes as i64 - fetched_bytes as i64 - lo_feature_bytes as i64,
    }
}
