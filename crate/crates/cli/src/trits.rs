//! Trit text files: one row per line, `-`, `0` or `+` per weight.

use anyhow::{bail, Result};
use ternacc::codec::{Trit, TritTensor};

pub fn parse(text: &str) -> Result<TritTensor> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            bail!("line {}: empty row", i + 1);
        }
        let before = data.len();
        for (j, ch) in line.chars().enumerate() {
            data.push(match ch {
                '-' => Trit::Neg,
                '0' => Trit::Zero,
                '+' => Trit::Pos,
                other => bail!("line {}, column {}: {other:?} is not a trit", i + 1, j + 1),
            });
        }
        let n = data.len() - before;
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => bail!("line {}: {n} trits, expected {c}", i + 1),
            _ => {}
        }
        rows += 1;
    }
    let Some(cols) = cols else { bail!("no rows") };
    Ok(TritTensor::new(rows, cols, data)?)
}

pub fn render(t: &TritTensor) -> String {
    let mut s = String::with_capacity(t.rows() * (t.cols() + 1));
    for r in 0..t.rows() {
        s.extend(t.row(r).iter().map(|tr| match tr {
            Trit::Neg => '-',
            Trit::Zero => '0',
            Trit::Pos => '+',
        }));
        s.push('\n');
    }
    s
}
