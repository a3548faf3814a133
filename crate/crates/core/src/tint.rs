//! Multiplier-free Ternary×INT8 PE array with an output-stationary dataflow.
//!
//! PE `(r, c)` owns the accumulator for weight row (output channel) `n0 + r`
//! and activation row (token) `m0 + c`. Activations are broadcast down a
//! column, weights are unicast per PE, and accumulators stay inside the
//! array until the tile is drained.

use serde::{Deserialize, Serialize};

use crate::codec::{Trit, TritTensor};
use crate::error::{Error, Result};
use crate::tensor::{IntMatrix, QTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreGeometry {
    pub pe_rows: usize,
    pub pe_cols: usize,
}

impl Default for CoreGeometry {
    fn default() -> Self {
        Self { pe_rows: 8, pe_cols: 8 }
    }
}

impl CoreGeometry {
    pub fn new(pe_rows: usize, pe_cols: usize) -> Result<Self> {
        if pe_rows == 0 || pe_cols == 0 {
            return Err(Error::Config(format!("PE array must be non-empty, got {pe_rows}x{pe_cols}")));
        }
        Ok(Self { pe_rows, pe_cols })
    }

    /// MACs per cycle at full occupancy.
    #[inline]
    pub fn ops_per_cycle(&self) -> usize {
        self.pe_rows * self.pe_cols
    }
}

/// Ternary select: `+a`, `0` or `-a`, at accumulator width.
#[inline]
pub fn sel(w: Trit, a: i8) -> i32 {
    match w {
        Trit::Pos => a as i32,
        Trit::Zero => 0,
        Trit::Neg => -(a as i32),
    }
}

/// External-memory traffic and timing seen by one PE array.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounters {
    /// Partial sums read back from outside the array.
    pub psum_reads: u64,
    /// Values written out of the array.
    pub psum_writes: u64,
    pub activation_reads: u64,
    pub weight_reads: u64,
    pub cycles: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeState {
    pub accumulator: i32,
}

/// One TINT PE array and its local accumulators.
#[derive(Debug, Clone)]
pub struct PeArray {
    geom: CoreGeometry,
    pes: Vec<PeState>,
    counters: TrafficCounters,
}

impl PeArray {
    pub fn new(geom: CoreGeometry) -> Self {
        Self { geom, pes: vec![PeState::default(); geom.ops_per_cycle()], counters: TrafficCounters::default() }
    }

    #[inline]
    pub fn geometry(&self) -> CoreGeometry {
        self.geom
    }

    #[inline]
    pub fn counters(&self) -> TrafficCounters {
        self.counters
    }

    #[inline]
    pub fn accumulator(&self, r: usize, c: usize) -> i32 {
        self.pes[r * self.geom.pe_cols + c].accumulator
    }

    pub fn set_accumulator(&mut self, r: usize, c: usize, v: i32) {
        self.pes[r * self.geom.pe_cols + c].accumulator = v;
    }

    /// Streams one tile through the array: every PE adds
    /// `Σ_k sel(w[r,k], a[c,k])` into its accumulator, one k per cycle.
    pub fn accumulate_tile(&mut self, act_tile: &QTensor, w_tile: &TritTensor) -> Result<()> {
        let acts: Vec<&[i8]> = (0..act_tile.rows()).map(|r| act_tile.row(r)).collect();
        let ws: Vec<&[Trit]> = (0..w_tile.rows()).map(|r| w_tile.row(r)).collect();
        self.accumulate_rows(&acts, &ws)
    }

    pub(crate) fn accumulate_rows(&mut self, acts: &[&[i8]], ws: &[&[Trit]]) -> Result<()> {
        if acts.len() > self.geom.pe_cols || ws.len() > self.geom.pe_rows {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} tile does not fit a {}x{} array",
                ws.len(),
                acts.len(),
                self.geom.pe_rows,
                self.geom.pe_cols
            )));
        }
        let k = acts.first().map(|a| a.len()).or_else(|| ws.first().map(|w| w.len())).unwrap_or(0);
        if acts.iter().any(|a| a.len() != k) || ws.iter().any(|w| w.len() != k) {
            return Err(Error::ShapeMismatch("tile operands disagree on the inner dimension".into()));
        }
        let cols = self.geom.pe_cols;
        for (r, w_row) in ws.iter().enumerate() {
            for (c, a_row) in acts.iter().enumerate() {
                let pe = &mut self.pes[r * cols + c];
                let mut acc = pe.accumulator;
                for (&w, &a) in w_row.iter().zip(a_row.iter()) {
                    acc += sel(w, a);
                }
                pe.accumulator = acc;
            }
        }
        // Rows/columns beyond the operands see zero padding and stay put.
        self.counters.cycles += k as u64;
        self.counters.activation_reads += (acts.len() * k) as u64;
        self.counters.weight_reads += (ws.len() * k) as u64;
        Ok(())
    }

    /// Writes the live `rows × cols` corner of the array to `out` at
    /// `(m0, n0)` and clears every accumulator.
    pub fn drain(&mut self, out: &mut IntMatrix, m0: usize, n0: usize, rows: usize, cols: usize) {
        for r in 0..rows {
            for c in 0..cols {
                out.set(m0 + c, n0 + r, self.accumulator(r, c));
                self.counters.psum_writes += 1;
            }
        }
        self.pes.iter_mut().for_each(|pe| pe.accumulator = 0);
    }
}

fn check_inner(act: &QTensor, w: &TritTensor) -> Result<()> {
    if act.cols() != w.cols() {
        return Err(Error::ShapeMismatch(format!(
            "activation inner dim {} vs weight inner dim {}",
            act.cols(),
            w.cols()
        )));
    }
    Ok(())
}

/// `out[m, n] = Σ_k act[m, k] · w[n, k]` on a single PE array, tile by tile.
pub fn matmul_on(array: &mut PeArray, act: &QTensor, w: &TritTensor) -> Result<IntMatrix> {
    check_inner(act, w)?;
    let geom = array.geometry();
    let (m, n) = (act.rows(), w.rows());
    let mut out = IntMatrix::zeros(m, n);
    for m0 in (0..m).step_by(geom.pe_cols) {
        let tm = geom.pe_cols.min(m - m0);
        let acts: Vec<&[i8]> = (m0..m0 + tm).map(|r| act.row(r)).collect();
        for n0 in (0..n).step_by(geom.pe_rows) {
            let tn = geom.pe_rows.min(n - n0);
            let ws: Vec<&[Trit]> = (n0..n0 + tn).map(|r| w.row(r)).collect();
            array.accumulate_rows(&acts, &ws)?;
            array.drain(&mut out, m0, n0, tn, tm);
        }
    }
    Ok(out)
}

pub fn matmul(act: &QTensor, w: &TritTensor) -> Result<IntMatrix> {
    matmul_on(&mut PeArray::new(CoreGeometry::default()), act, w)
}

/// Decode-time vector×matrix with the inner dimension split across PE
/// columns: column `c` accumulates k-slice `c`, then the column partials of
/// each row are reduced. Keeps all PEs busy for a single token.
pub fn matvec_ksplit(act_row: &[i8], w: &TritTensor, geom: CoreGeometry) -> Result<Vec<i32>> {
    if act_row.len() != w.cols() {
        return Err(Error::LengthMismatch { left: act_row.len(), right: w.cols() });
    }
    let lanes = geom.pe_cols;
    let slice = w.cols().div_ceil(lanes);
    let mut out = Vec::with_capacity(w.rows());
    for n in 0..w.rows() {
        let row = w.row(n);
        let mut partials = vec![0i32; lanes];
        for (lane, p) in partials.iter_mut().enumerate() {
            let lo = (lane * slice).min(row.len());
            let hi = ((lane + 1) * slice).min(row.len());
            *p = row[lo..hi].iter().zip(&act_row[lo..hi]).map(|(&w, &a)| sel(w, a)).sum();
        }
        out.push(partials.iter().sum());
    }
    Ok(out)
}

/// Cycles for an `m × n × k` output-stationary matmul on one array: one MAC
/// per PE per cycle, `k` cycles per output tile.
pub fn tint_cycles(m: usize, n: usize, k: usize, geom: CoreGeometry) -> u64 {
    (m.div_ceil(geom.pe_cols) * n.div_ceil(geom.pe_rows) * k) as u64
}

/// Cycles for a k-split vector×matrix (`n` outputs, inner dim `k`).
pub fn tint_matvec_cycles(n: usize, k: usize, geom: CoreGeometry) -> u64 {
    (n.div_ceil(geom.pe_rows) * k.div_ceil(geom.pe_cols)) as u64
}
