//! Ternary weight storage: the 2-bit per-weight code consumed by the Booth
//! encoder and the dense 5-trits-per-byte packing used on the DRAM side.
//!
//! A packed byte holds five trits as a base-3 number. Digit `i` is
//! `trit_i + 1` and carries weight `3^i`, with the first trit of the group in
//! the least significant digit. A trailing partial group is padded with zero
//! trits, which are arithmetic no-ops in a select-accumulate.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of trits stored in one packed byte.
pub const TRITS_PER_BYTE: usize = 5;

/// Number of valid packed byte values (3^5).
pub const PACKED_CODES: usize = 243;

/// A single ternary weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
#[repr(i8)]
pub enum Trit {
    Neg = -1,
    #[default]
    Zero = 0,
    Pos = 1,
}

impl Trit {
    pub const ALL: [Trit; 3] = [Trit::Neg, Trit::Zero, Trit::Pos];

    #[inline]
    pub const fn value(self) -> i8 {
        self as i8
    }

    pub fn from_i64(v: i64) -> Result<Trit> {
        match v {
            -1 => Ok(Trit::Neg),
            0 => Ok(Trit::Zero),
            1 => Ok(Trit::Pos),
            other => Err(Error::InvalidTrit(other)),
        }
    }

    /// Base-3 digit used by the byte packing.
    #[inline]
    const fn digit(self) -> u8 {
        (self as i8 + 1) as u8
    }

    #[inline]
    const fn from_digit(d: u8) -> Trit {
        match d {
            0 => Trit::Neg,
            1 => Trit::Zero,
            _ => Trit::Pos,
        }
    }
}

impl TryFrom<i8> for Trit {
    type Error = Error;
    fn try_from(v: i8) -> Result<Self> {
        Trit::from_i64(v as i64)
    }
}

impl From<Trit> for i8 {
    fn from(t: Trit) -> i8 {
        t.value()
    }
}

impl fmt::Display for Trit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// Row-major ternary matrix. Rows are output channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TritTensor {
    rows: usize,
    cols: usize,
    data: Vec<Trit>,
}

impl TritTensor {
    pub fn new(rows: usize, cols: usize, data: Vec<Trit>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch(format!("ternary tensor must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} tensor needs {} trits, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![Trit::Zero; rows * cols])
    }

    pub fn from_i8(rows: usize, cols: usize, values: &[i8]) -> Result<Self> {
        let data = values.iter().map(|&v| Trit::try_from(v)).collect::<Result<Vec<_>>>()?;
        Self::new(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[Trit] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Trit {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[Trit] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of rows `start..end`.
    pub fn row_slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows {
            return Err(Error::ShapeMismatch(format!("row range {start}..{end} of {} rows", self.rows)));
        }
        Self::new(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    /// Writes the packed weight file: a 16-byte header (`TPK1`, rows, cols,
    /// reserved zero; little-endian u32s) followed by each row packed
    /// independently.
    pub fn write_packed<W: Write>(&self, mut w: W) -> Result<()> {
        let rows = u32::try_from(self.rows).map_err(|_| Error::Format("row count exceeds u32".into()))?;
        let cols = u32::try_from(self.cols).map_err(|_| Error::Format("column count exceeds u32".into()))?;
        w.write_all(PACKED_MAGIC)?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        for r in 0..self.rows {
            w.write_all(pack_trits(self.row(r)).bytes())?;
        }
        Ok(())
    }

    pub fn read_packed<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(|e| Error::Format(format!("short header: {e}")))?;
        if &header[0..4] != PACKED_MAGIC {
            return Err(Error::Format("bad magic, expected TPK1".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let (rows, cols, reserved) = (word(4) as usize, word(8) as usize, word(12));
        if reserved != 0 {
            return Err(Error::Format(format!("reserved header word is {reserved}, expected 0")));
        }
        let row_bytes = packed_len(cols);
        let mut buf = vec![0u8; row_bytes];
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
            let stream = PackedTritStream::from_parts(buf.clone(), cols)?;
            data.extend(stream.unpack()?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after payload", rest.len())));
        }
        Self::new(rows, cols, data)
    }
}

/// Magic bytes at the start of a packed weight file.
pub const PACKED_MAGIC: &[u8; 4] = b"TPK1";

/// 2-bit stored form of a trit: `+1 -> 01`, `0 -> 00`, `-1 -> 11`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TwoBitCode(u8);

impl TwoBitCode {
    pub fn new(code: u8) -> Result<Self> {
        match code {
            0b00 | 0b01 | 0b11 => Ok(Self(code)),
            other => Err(Error::InvalidCode(other)),
        }
    }

    #[inline]
    pub fn bits(self) -> u8 {
        self.0
    }
}

#[inline]
pub fn encode_2bit(t: Trit) -> TwoBitCode {
    match t {
        Trit::Pos => TwoBitCode(0b01),
        Trit::Zero => TwoBitCode(0b00),
        Trit::Neg => TwoBitCode(0b11),
    }
}

/// Decodes a raw 2-bit code. `0b10` has no ternary meaning and is rejected.
pub fn decode_2bit(code: u8) -> Result<Trit> {
    match code {
        0b01 => Ok(Trit::Pos),
        0b00 => Ok(Trit::Zero),
        0b11 => Ok(Trit::Neg),
        other => Err(Error::InvalidCode(other)),
    }
}

/// Trits packed five per byte.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PackedTritStream {
    bytes: Vec<u8>,
    trit_count: usize,
}

/// Bytes needed for `n` trits.
#[inline]
pub fn packed_len(n: usize) -> usize {
    n.div_ceil(TRITS_PER_BYTE)
}

impl PackedTritStream {
    pub fn from_parts(bytes: Vec<u8>, trit_count: usize) -> Result<Self> {
        if bytes.len() != packed_len(trit_count) {
            return Err(Error::Format(format!(
                "{trit_count} trits need {} bytes, got {}",
                packed_len(trit_count),
                bytes.len()
            )));
        }
        if let Some(&b) = bytes.iter().find(|&&b| b as usize >= PACKED_CODES) {
            return Err(Error::InvalidPackedByte(b));
        }
        Ok(Self { bytes, trit_count })
    }

    #[inline]
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    #[inline]
    pub fn trit_count(&self) -> usize {
        self.trit_count
    }

    /// Storage cost in bits per trit; 1.6 for any stream whose length is a multiple of five.
    pub fn bits_per_trit(&self) -> f64 {
        if self.trit_count == 0 {
            return 0.0;
        }
        (self.bytes.len() * 8) as f64 / self.trit_count as f64
    }

    pub fn unpack(&self) -> Result<Vec<Trit>> {
        let mut out = Vec::with_capacity(self.bytes.len() * TRITS_PER_BYTE);
        for &b in &self.bytes {
            out.extend_from_slice(&unpack_byte(b)?);
        }
        out.truncate(self.trit_count);
        Ok(out)
    }
}

pub fn pack_trits(trits: &[Trit]) -> PackedTritStream {
    let bytes = trits
        .chunks(TRITS_PER_BYTE)
        .map(|group| {
            // Missing trailing trits are zero weights (digit 1).
            let mut byte = 0u8;
            for i in (0..TRITS_PER_BYTE).rev() {
                let d = group.get(i).copied().unwrap_or(Trit::Zero).digit();
                byte = byte * 3 + d;
            }
            byte
        })
        .collect();
    PackedTritStream { bytes, trit_count: trits.len() }
}

const fn build_unpack_lut() -> [[Trit; TRITS_PER_BYTE]; PACKED_CODES] {
    let mut lut = [[Trit::Zero; TRITS_PER_BYTE]; PACKED_CODES];
    let mut b = 0;
    while b < PACKED_CODES {
        let mut v = b as u8;
        let mut i = 0;
        while i < TRITS_PER_BYTE {
            lut[b][i] = Trit::from_digit(v % 3);
            v /= 3;
            i += 1;
        }
        b += 1;
    }
    lut
}

static UNPACK_LUT: [[Trit; TRITS_PER_BYTE]; PACKED_CODES] = build_unpack_lut();

#[inline]
pub fn unpack_byte(b: u8) -> Result<[Trit; TRITS_PER_BYTE]> {
    UNPACK_LUT.get(b as usize).copied().ok_or(Error::InvalidPackedByte(b))
}

/// Weight storage schemes compared for DRAM traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Packing {
    FiveTritByte,
    TwoBit,
}

/// Exact bits-per-weight as a (numerator, denominator) pair.
pub fn traffic_ratio(packing: Packing) -> (u32, u32) {
    match packing {
        Packing::FiveTritByte => (8, 5),
        Packing::TwoBit => (2, 1),
    }
}

pub fn bits_per_weight(packing: Packing) -> f64 {
    let (n, d) = traffic_ratio(packing);
    n as f64 / d as f64
}

/// Fractional traffic reduction of `packing` relative to `baseline`, as an exact rational.
pub fn traffic_reduction(packing: Packing, baseline: Packing) -> (u32, u32) {
    let (pn, pd) = traffic_ratio(packing);
    let (bn, bd) = traffic_ratio(baseline);
    // 1 - (pn/pd)/(bn/bd) = (pd*bn - pn*bd) / (pd*bn)
    let num = pd * bn - pn * bd;
    let den = pd * bn;
    let g = gcd(num, den);
    (num / g, den / g)
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}
