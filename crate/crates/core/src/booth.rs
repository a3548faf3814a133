//! Radix-4 Booth datapath shared by INT8×INT8 attention and Ternary×INT8
//! projections, plus the nibble-serial variant for 4/8/12/16-bit activations.
//!
//! The multiplier operand is recoded into overlapping 3-bit windows
//! `(x[2i+1], x[2i], x[2i-1])` with `x[-1] = 0`; each window selects a factor
//! in `{-2, -1, 0, +1, +2}` of the multiplicand. Windows are consumed most
//! significant first and folded with `sum = (sum << 2) + Σ pp`, so a single
//! accumulator per output suffices.

use serde::{Deserialize, Serialize};

use crate::codec::{encode_2bit, Trit, TritTensor};
use crate::error::{Error, Result};
use crate::tensor::{IntMatrix, QTensor};
use crate::tint::{tint_cycles, CoreGeometry};

/// Partial products summed per Booth step (one PE row of the array).
pub const REDUCTION_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BoothWindow {
    pub hi: bool,
    pub mid: bool,
    pub lo: bool,
}

impl BoothWindow {
    /// Window from a 3-bit pattern `0b(hi)(mid)(lo)`.
    pub const fn from_bits(bits: u8) -> Self {
        Self { hi: bits & 0b100 != 0, mid: bits & 0b010 != 0, lo: bits & 0b001 != 0 }
    }

    pub const fn bits(self) -> u8 {
        ((self.hi as u8) << 2) | ((self.mid as u8) << 1) | self.lo as u8
    }
}

/// Booth factor in `{-2, -1, 0, +1, +2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoothFactor(i8);

impl BoothFactor {
    #[inline]
    pub const fn value(self) -> i8 {
        self.0
    }
}

#[inline]
pub const fn booth_encode(w: BoothWindow) -> BoothFactor {
    BoothFactor(-2 * w.hi as i8 + w.mid as i8 + w.lo as i8)
}

/// Maps a stored 2-bit ternary code onto a Booth window by appending a zero
/// LSB, so the encoder can only emit `0` or `±1`.
pub fn pad_ternary(code: u8) -> Result<BoothWindow> {
    match code {
        0b00 | 0b01 | 0b11 => Ok(BoothWindow::from_bits(code << 1)),
        other => Err(Error::InvalidCode(other)),
    }
}

#[inline]
fn bit(x: i64, j: i32) -> bool {
    // x[-1] is the implicit zero; arithmetic shift sign-extends above the MSB.
    j >= 0 && (x >> j.min(63)) & 1 == 1
}

/// `levels` overlapping windows of `x`, most significant first. `x` must be
/// representable in `2 * levels` signed bits for the recoding to be exact.
pub fn booth_windows(x: i64, levels: usize) -> Vec<BoothWindow> {
    (0..levels as i32)
        .rev()
        .map(|i| BoothWindow { hi: bit(x, 2 * i + 1), mid: bit(x, 2 * i), lo: bit(x, 2 * i - 1) })
        .collect()
}

/// Five windows of an INT8 value sign-extended to 10 bits.
pub fn booth_windows_int8(x: i8) -> [BoothWindow; 5] {
    let w = booth_windows(x as i64, 5);
    [w[0], w[1], w[2], w[3], w[4]]
}

/// Horner fold in radix 4: each step shifts the running sum left by two bits
/// and adds that step's spatial partial products.
pub fn iterative_accumulate(steps: &[[i64; REDUCTION_GROUP]]) -> i64 {
    steps.iter().fold(0i64, |sum, pps| (sum << 2) + pps.iter().sum::<i64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrecisionMode {
    TernaryInt8,
    Int8Int8,
    /// Nibble-serial activations of the given width (4, 8, 12 or 16 bits).
    BitSerial(u32),
}

impl PrecisionMode {
    pub fn bit_serial(width: u32) -> Result<Self> {
        match width {
            4 | 8 | 12 | 16 => Ok(Self::BitSerial(width)),
            other => Err(Error::Config(format!("bit-serial width must be 4, 8, 12 or 16, got {other}"))),
        }
    }

    /// Cycles per accumulation step: 1 for ternary, ⌈(8+2)/2⌉ = 5 for INT8,
    /// one per nibble for bit-serial.
    pub fn iterations(self) -> u32 {
        match self {
            Self::TernaryInt8 => 1,
            Self::Int8Int8 => 5,
            Self::BitSerial(w) => w / 4,
        }
    }
}

/// A product together with the datapath cycles spent on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Product {
    pub value: i64,
    pub cycles: u32,
}

fn check_width(value: i64, width: u32) -> Result<()> {
    let lo = -(1i64 << (width - 1));
    let hi = (1i64 << (width - 1)) - 1;
    if value < lo || value > hi {
        return Err(Error::Range { value, width });
    }
    Ok(())
}

/// `x · y` on the Booth datapath. `x` is the Booth-recoded operand (the
/// weight side), `y` the multiplicand (the activation side).
pub fn booth_multiply(x: i64, y: i64, mode: PrecisionMode) -> Result<Product> {
    match mode {
        PrecisionMode::TernaryInt8 => {
            let t = Trit::from_i64(x).map_err(|_| Error::Range { value: x, width: 2 })?;
            check_width(y, 8)?;
            let window = pad_ternary(encode_2bit(t).bits())?;
            Ok(Product { value: booth_encode(window).value() as i64 * y, cycles: 1 })
        }
        PrecisionMode::Int8Int8 => {
            check_width(x, 8)?;
            check_width(y, 8)?;
            let value = booth_windows_int8(x as i8)
                .iter()
                .fold(0i64, |acc, &w| (acc << 2) + booth_encode(w).value() as i64 * y);
            Ok(Product { value, cycles: mode.iterations() })
        }
        PrecisionMode::BitSerial(width) => {
            PrecisionMode::bit_serial(width)?;
            bs_multiply(y, x, width, 8)
        }
    }
}

/// Activation split into 4-bit nibbles, most significant first. Only the
/// leading nibble is signed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BsNibbleStream {
    pub nibbles: Vec<i8>,
}

impl BsNibbleStream {
    pub fn recompose(&self) -> i64 {
        self.nibbles.iter().fold(0i64, |acc, &n| acc * 16 + n as i64)
    }
}

pub fn bs_slice(y: i64, width: u32) -> Result<BsNibbleStream> {
    PrecisionMode::bit_serial(width)?;
    check_width(y, width)?;
    let count = (width / 4) as i32;
    let nibbles = (0..count)
        .rev()
        .map(|i| {
            let shifted = y >> (4 * i);
            if i == count - 1 {
                shifted as i8
            } else {
                (shifted & 0xF) as i8
            }
        })
        .collect();
    Ok(BsNibbleStream { nibbles })
}

/// Partial product of one nibble through the 4-bit Booth levels. A signed
/// nibble needs two radix-4 levels; an unsigned one needs a third for its
/// implicit zero sign bit. Levels are combined with a shift by 2.
fn nibble_partial_product(nibble: i8, signed: bool, multiplicand: i64) -> i64 {
    let levels = if signed { 2 } else { 3 };
    booth_windows(nibble as i64, levels)
        .into_iter()
        .fold(0i64, |acc, w| (acc << 2) + booth_encode(w).value() as i64 * multiplicand)
}

/// Bit-serial multiply: the activation streams through in nibbles, MSB
/// first, with `acc = (acc << 4) + pp`. Costs one cycle per nibble.
pub fn bs_multiply(activation: i64, weight: i64, act_width: u32, weight_width: u32) -> Result<Product> {
    if !(2..=32).contains(&weight_width) {
        return Err(Error::Config(format!("weight width {weight_width} unsupported")));
    }
    check_width(weight, weight_width)?;
    let stream = bs_slice(activation, act_width)?;
    let value = stream
        .nibbles
        .iter()
        .enumerate()
        .fold(0i64, |acc, (i, &nib)| (acc << 4) + nibble_partial_product(nib, i == 0, weight));
    Ok(Product { value, cycles: stream.nibbles.len() as u32 })
}

/// Weight operand of the BoothFlex array.
#[derive(Debug, Clone, Copy)]
pub enum Weights<'a> {
    Ternary(&'a TritTensor),
    Int8(&'a QTensor),
}

impl Weights<'_> {
    fn rows(&self) -> usize {
        match self {
            Weights::Ternary(t) => t.rows(),
            Weights::Int8(q) => q.rows(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            Weights::Ternary(t) => t.cols(),
            Weights::Int8(q) => q.cols(),
        }
    }

    #[inline]
    fn get(&self, r: usize, c: usize) -> i64 {
        match self {
            Weights::Ternary(t) => t.get(r, c).value() as i64,
            Weights::Int8(q) => q.get(r, c) as i64,
        }
    }
}

/// Matmul result with its modeled cycle count on one array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoothflexOutput {
    pub out: IntMatrix,
    pub cycles: u64,
}

/// `out[m, n] = Σ_k act[m, k] · w[n, k]` on the BoothFlex array in `mode`.
/// Each output accumulates groups of eight products through the radix-4
/// recurrence; the cycle count is the ternary tiling cost times the mode's
/// iterations.
pub fn boothflex_matmul(act: &QTensor, w: Weights<'_>, mode: PrecisionMode) -> Result<BoothflexOutput> {
    if act.cols() != w.cols() {
        return Err(Error::ShapeMismatch(format!("activation inner dim {} vs weight inner dim {}", act.cols(), w.cols())));
    }
    match (mode, &w) {
        (PrecisionMode::TernaryInt8, Weights::Int8(_)) => {
            return Err(Error::ModeMismatch("ternary mode requires ternary weights".into()))
        }
        (PrecisionMode::Int8Int8, Weights::Ternary(_)) => {
            return Err(Error::ModeMismatch("INT8 mode expects INT8 weights".into()))
        }
        (PrecisionMode::BitSerial(width), _) => {
            PrecisionMode::bit_serial(width)?;
            if let Some(&a) = act.data().iter().find(|&&a| check_width(a as i64, width).is_err()) {
                return Err(Error::Range { value: a as i64, width });
            }
        }
        _ => {}
    }

    let (m, n, k) = (act.rows(), w.rows(), act.cols());
    let mut out = IntMatrix::zeros(m, n);
    for r in 0..m {
        let a_row = act.row(r);
        for c in 0..n {
            let mut acc = 0i64;
            for k0 in (0..k).step_by(REDUCTION_GROUP) {
                let len = REDUCTION_GROUP.min(k - k0);
                acc += group_dot(&a_row[k0..k0 + len], |j| w.get(c, k0 + j), mode)?;
            }
            out.set(r, c, i32::try_from(acc).map_err(|_| Error::Range { value: acc, width: 32 })?);
        }
    }
    let cycles = tint_cycles(m, n, k, CoreGeometry::default()) * mode.iterations() as u64;
    Ok(BoothflexOutput { out, cycles })
}

/// One PE-row reduction of up to eight products.
fn group_dot(acts: &[i8], weight: impl Fn(usize) -> i64, mode: PrecisionMode) -> Result<i64> {
    match mode {
        PrecisionMode::TernaryInt8 => {
            let mut pps = [0i64; REDUCTION_GROUP];
            for (j, &a) in acts.iter().enumerate() {
                let t = Trit::from_i64(weight(j))?;
                let f = booth_encode(pad_ternary(encode_2bit(t).bits())?).value() as i64;
                pps[j] = f * a as i64;
            }
            Ok(iterative_accumulate(&[pps]))
        }
        PrecisionMode::Int8Int8 => {
            let windows: Vec<[BoothWindow; 5]> = (0..acts.len()).map(|j| booth_windows_int8(weight(j) as i8)).collect();
            let mut steps = [[0i64; REDUCTION_GROUP]; 5];
            for (i, step) in steps.iter_mut().enumerate() {
                for (j, &a) in acts.iter().enumerate() {
                    step[j] = booth_encode(windows[j][i]).value() as i64 * a as i64;
                }
            }
            Ok(iterative_accumulate(&steps))
        }
        PrecisionMode::BitSerial(width) => {
            let mut sum = 0i64;
            for (j, &a) in acts.iter().enumerate() {
                sum += bs_multiply(a as i64, weight(j), width, 8)?.value;
            }
            Ok(sum)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TABLE: [(u8, i8); 8] =
        [(0b000, 0), (0b001, 1), (0b010, 1), (0b011, 2), (0b100, -2), (0b101, -1), (0b110, -1), (0b111, 0)];

    #[test]
    fn encoder_matches_radix4_table() {
        for (bits, f) in TABLE {
            assert_eq!(booth_encode(BoothWindow::from_bits(bits)).value(), f, "window {bits:03b}");
        }
    }

    #[test]
    fn ternary_padding() {
        assert_eq!(pad_ternary(0b01).unwrap().bits(), 0b010);
        assert_eq!(pad_ternary(0b11).unwrap().bits(), 0b110);
        assert_eq!(pad_ternary(0b00).unwrap().bits(), 0b000);
        assert_eq!(booth_encode(pad_ternary(0b01).unwrap()).value(), 1);
        assert_eq!(booth_encode(pad_ternary(0b11).unwrap()).value(), -1);
        assert_eq!(booth_encode(pad_ternary(0b00).unwrap()).value(), 0);
        assert_eq!(pad_ternary(0b10), Err(Error::InvalidCode(0b10)));
    }

    fn recompose(ws: &[BoothWindow]) -> i64 {
        // ws is MSB first: position of ws[i] is len-1-i
        ws.iter().enumerate().map(|(i, &w)| booth_encode(w).value() as i64 * 4i64.pow((ws.len() - 1 - i) as u32)).sum()
    }

    #[test]
    fn int8_windows() {
        assert!(booth_windows_int8(0).iter().all(|w| w.bits() == 0));
        assert_eq!(recompose(&booth_windows_int8(-1)), -1);
        assert_eq!(recompose(&booth_windows_int8(3)), 3);
        for x in i8::MIN..=i8::MAX {
            assert_eq!(recompose(&booth_windows_int8(x)), x as i64);
        }
    }

    #[test]
    fn accumulate_cases() {
        assert_eq!(iterative_accumulate(&[[0; 8]; 5]), 0);
        assert_eq!(iterative_accumulate(&[[5, 0, 0, 0, 0, 0, 0, 0]]), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let xs: [i8; 8] = rng.random();
            let ys: [i8; 8] = rng.random();
            let exact: i64 = xs.iter().zip(&ys).map(|(&x, &y)| x as i64 * y as i64).sum();
            let ws: Vec<_> = xs.iter().map(|&x| booth_windows_int8(x)).collect();
            let mut steps = [[0i64; 8]; 5];
            for i in 0..5 {
                for j in 0..8 {
                    steps[i][j] = booth_encode(ws[j][i]).value() as i64 * ys[j] as i64;
                }
            }
            assert_eq!(iterative_accumulate(&steps), exact);
        }
    }

    #[test]
    fn multiply_examples() {
        assert_eq!(booth_multiply(7, -3, PrecisionMode::Int8Int8).unwrap(), Product { value: -21, cycles: 5 });
        for y in -128..=127 {
            assert_eq!(booth_multiply(0, y, PrecisionMode::Int8Int8).unwrap().value, 0);
            assert_eq!(booth_multiply(-1, y, PrecisionMode::TernaryInt8).unwrap(), Product { value: -y, cycles: 1 });
        }
        assert!(matches!(booth_multiply(2, 1, PrecisionMode::TernaryInt8), Err(Error::Range { .. })));
        assert!(matches!(booth_multiply(128, 1, PrecisionMode::Int8Int8), Err(Error::Range { .. })));
        assert!(matches!(booth_multiply(1, -129, PrecisionMode::Int8Int8), Err(Error::Range { .. })));
    }

    #[test]
    fn slicing() {
        assert_eq!(bs_slice(-1, 8).unwrap().nibbles, vec![-1, 15]);
        assert_eq!(bs_slice(123, 8).unwrap().nibbles, vec![7, 11]);
        assert_eq!(bs_slice(5, 4).unwrap().nibbles, vec![5]);
        assert_eq!(bs_slice(-32768, 16).unwrap().recompose(), -32768);
        assert!(matches!(bs_slice(8, 4), Err(Error::Range { .. })));
        assert!(bs_slice(1, 6).is_err());
    }

    #[test]
    fn bit_serial_examples() {
        assert_eq!(bs_multiply(123, -5, 8, 8).unwrap(), Product { value: -615, cycles: 2 });
        assert_eq!(bs_multiply(30000, -2, 16, 8).unwrap(), Product { value: -60000, cycles: 4 });
        for w in [4, 8, 12, 16] {
            assert_eq!(bs_multiply(0, 77, w, 8).unwrap().value, 0);
            assert_eq!(bs_multiply(3, 0, w, 8).unwrap().value, 0);
        }
        assert!(matches!(bs_multiply(1, 128, 8, 8), Err(Error::Range { .. })));
    }

    #[test]
    fn bs_generalizes_int8() {
        for x in (-128i64..=127).step_by(3) {
            for y in -128i64..=127 {
                assert_eq!(bs_multiply(y, x, 8, 8).unwrap().value, booth_multiply(x, y, PrecisionMode::Int8Int8).unwrap().value);
            }
        }
    }

    fn random_q(rng: &mut ChaCha8Rng, r: usize, c: usize) -> QTensor {
        QTensor::from_ints(r, c, (0..r * c).map(|_| rng.random::<i8>()).collect()).unwrap()
    }

    #[test]
    fn matmul_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let act = random_q(&mut rng, 8, 8);
        let wq = random_q(&mut rng, 8, 8);
        let int8 = boothflex_matmul(&act, Weights::Int8(&wq), PrecisionMode::Int8Int8).unwrap();
        for m in 0..8 {
            for n in 0..8 {
                let e: i32 = (0..8).map(|k| act.get(m, k) as i32 * wq.get(n, k) as i32).sum();
                assert_eq!(int8.out.get(m, n), e);
            }
        }
        let wt = TritTensor::from_i8(8, 8, &(0..64).map(|_| rng.random_range(-1..=1)).collect::<Vec<i8>>()).unwrap();
        let tern = boothflex_matmul(&act, Weights::Ternary(&wt), PrecisionMode::TernaryInt8).unwrap();
        assert_eq!(tern.out, crate::tint::matmul(&act, &wt).unwrap());
        assert_eq!(int8.cycles, 5 * tern.cycles);

        let bs = boothflex_matmul(&act, Weights::Int8(&wq), PrecisionMode::BitSerial(8)).unwrap();
        assert_eq!(bs.out, int8.out);
        assert_eq!(bs.cycles, 2 * tern.cycles);
    }

    #[test]
    fn identity_weights_return_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let act = random_q(&mut rng, 5, 8);
        let mut eye = vec![0i8; 64];
        for i in 0..8 {
            eye[i * 8 + i] = 1;
        }
        let eye = QTensor::from_ints(8, 8, eye).unwrap();
        let r = boothflex_matmul(&act, Weights::Int8(&eye), PrecisionMode::Int8Int8).unwrap();
        let back: Vec<i32> = act.data().iter().map(|&a| a as i32).collect();
        assert_eq!(r.out.data, back);
    }

    #[test]
    fn mode_mismatch() {
        let act = QTensor::from_ints(1, 2, vec![1, 2]).unwrap();
        let q = QTensor::from_ints(1, 2, vec![1, 2]).unwrap();
        let t = TritTensor::zeros(1, 2).unwrap();
        assert!(matches!(boothflex_matmul(&act, Weights::Int8(&q), PrecisionMode::TernaryInt8), Err(Error::ModeMismatch(_))));
        assert!(matches!(boothflex_matmul(&act, Weights::Ternary(&t), PrecisionMode::Int8Int8), Err(Error::ModeMismatch(_))));
        let wide = QTensor::from_ints(1, 2, vec![100, 2]).unwrap();
        assert!(matches!(boothflex_matmul(&wide, Weights::Int8(&q), PrecisionMode::BitSerial(4)), Err(Error::Range { .. })));
    }
}
