//! Straight-line reference of the toy forward pass.
//!
//! Plain loops over plain integers: no PE arrays, no Booth recoding, no
//! bit-plane selection. One token at a time, in position order. Real-valued
//! steps use the same operation order as the datapath so quantized values
//! can be compared exactly.

use super::{rope, RunConfig, TokenRecord, ToyModel};
use crate::codec::TritTensor;
use crate::error::{Error, Result};

const EPS: f64 = 1e-5;

fn norm(x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut sq = 0.0;
    let mut partial = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        sq += x[i] * x[i];
        partial.push(x[i] * w[i]);
    }
    let inv = 1.0 / (sq / x.len() as f64 + EPS).sqrt();
    partial.iter().map(|p| p * inv).collect()
}

fn scale_of(x: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for v in x {
        m = m.max(v.abs());
    }
    if m > 0.0 {
        127.0 / m
    } else {
        1.0
    }
}

fn to_i8(x: f64) -> i8 {
    x.round().clamp(-127.0, 127.0) as i8
}

fn quant(x: &[f64]) -> (Vec<i8>, f64) {
    let s = scale_of(x);
    (x.iter().map(|&v| to_i8(v * s)).collect(), s)
}

fn ternary_dot_rows(w: &TritTensor, a: &[i8]) -> Vec<i32> {
    (0..w.rows())
        .map(|r| {
            let mut acc = 0i32;
            for (c, &x) in a.iter().enumerate() {
                acc += w.get(r, c).value() as i32 * x as i32;
            }
            acc
        })
        .collect()
}

fn real(ints: &[i32], ws: f64, xs: f64) -> Vec<f64> {
    ints.iter().map(|&v| v as f64 * ws / xs).collect()
}

fn leading_one(x: i8) -> Option<(bool, u32)> {
    if x == 0 {
        None
    } else {
        Some((x < 0, x.unsigned_abs().ilog2()))
    }
}

fn lo_score(q: &[i8], k: &[i8]) -> i64 {
    let mut s = 0i64;
    for (&a, &b) in q.iter().zip(k) {
        if let (Some((na, la)), Some((nb, lb))) = (leading_one(a), leading_one(b)) {
            let t = 1i64 << (la + lb);
            s += if na == nb { t } else { -t };
        }
    }
    s
}

#[derive(Default, Clone)]
struct Rows {
    k: Vec<Vec<i8>>,
    ks: Vec<f64>,
    v: Vec<Vec<i8>>,
    vs: Vec<f64>,
}

/// Reference generation; returns the token sequence and per-(position,
/// layer) records in that order.
pub fn generate(model: &ToyModel, prompt: &[u32], cfg: &RunConfig) -> Result<(Vec<u32>, Vec<TokenRecord>)> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(Error::Config("prompt must not be empty".into()));
    }
    let spec = &model.spec;
    let (d, heads, hd) = (spec.d_model, spec.heads, spec.head_dim);
    let mut cache = vec![vec![Rows::default(); heads]; spec.layers];
    let mut tokens = prompt.to_vec();
    let mut records = Vec::new();
    if cfg.max_new_tokens == 0 {
        return Ok((tokens, records));
    }
    let total = prompt.len() + cfg.max_new_tokens - 1;
    for pos in 0..total {
        let in_prompt = pos < prompt.len();
        let use_lop = if in_prompt { cfg.lop_in_prefill } else { cfg.lop };
        let mut x = model.embed(tokens[pos])?;
        for (layer, lw) in model.layers.iter().enumerate() {
            let s = &lw.scales;
            let mut rec = TokenRecord { layer, pos, ..TokenRecord::default() };
            let (xq, xs) = quant(&norm(&x, &lw.attn_norm));
            let qi = ternary_dot_rows(&lw.wq, &xq);
            let ki = ternary_dot_rows(&lw.wk, &xq);
            let vi = ternary_dot_rows(&lw.wv, &xq);
            let mut qr = real(&qi, s.q, xs);
            let mut kr = real(&ki, s.k, xs);
            let vr = real(&vi, s.v, xs);
            let mut att = vec![0.0; d];
            for h in 0..heads {
                let sp = h * hd..(h + 1) * hd;
                if cfg.rope {
                    rope(&mut qr[sp.clone()], pos);
                    rope(&mut kr[sp.clone()], pos);
                }
                let (hq, qs) = quant(&qr[sp.clone()]);
                let (hk, ks) = quant(&kr[sp.clone()]);
                let (hv, vs) = quant(&vr[sp.clone()]);
                let c = &mut cache[layer][h];
                c.k.push(hk.clone());
                c.ks.push(ks);
                c.v.push(hv.clone());
                c.vs.push(vs);
                let n = c.k.len();

                let mut surrogate = Vec::new();
                let mut sel: Vec<usize> = (0..n).collect();
                if use_lop && n > cfg.k {
                    surrogate = c.k.iter().map(|k| lo_score(&hq, k)).collect();
                    sel.sort_by(|&a, &b| surrogate[b].cmp(&surrogate[a]).then(a.cmp(&b)));
                    sel.truncate(cfg.k);
                    sel.sort_unstable();
                }

                let mut scores = Vec::with_capacity(sel.len());
                for &j in &sel {
                    let mut acc = 0i32;
                    for i in 0..hd {
                        acc += hq[i] as i32 * c.k[j][i] as i32;
                    }
                    scores.push(acc);
                }
                let inv_sqrt = 1.0 / (hd as f64).sqrt();
                let mut sum = 0.0;
                let mut e = Vec::with_capacity(sel.len());
                for (i, &j) in sel.iter().enumerate() {
                    let r = scores[i] as f64 / (qs * c.ks[j]) * inv_sqrt;
                    let v = (r - cfg.unified_max).exp();
                    sum += v;
                    e.push(v);
                }
                let div: Vec<f64> = sel.iter().map(|&j| sum * c.vs[j]).collect();
                let folded: Vec<f64> = e.iter().zip(&div).map(|(a, b)| a / b).collect();
                let ps = scale_of(&folded);
                let probs: Vec<i8> = e.iter().zip(&div).map(|(&a, &b)| to_i8(a * (ps / b))).collect();
                let mut out = vec![0i32; hd];
                for (i, &j) in sel.iter().enumerate() {
                    for (o, &v) in out.iter_mut().zip(&c.v[j]) {
                        *o += probs[i] as i32 * v as i32;
                    }
                }
                for (dst, &o) in att[sp].iter_mut().zip(&out) {
                    *dst = o as f64 / ps;
                }
                rec.head_q.push(hq);
                rec.head_k.push(hk);
                rec.head_v.push(hv);
                rec.surrogate.push(surrogate);
                rec.selected.push(sel);
                rec.scores.push(scores);
                rec.probs_q.push(probs);
                rec.attn_out.push(out);
            }
            let (aq, as_) = quant(&att);
            let oi = ternary_dot_rows(&lw.wo, &aq);
            let o = real(&oi, s.o, as_);
            let h1: Vec<f64> = x.iter().zip(&o).map(|(a, b)| a + b).collect();
            let (fq, fs) = quant(&norm(&h1, &lw.ffn_norm));
            let ui = ternary_dot_rows(&lw.w_up, &fq);
            let mid: Vec<f64> = real(&ui, s.up, fs).into_iter().map(|v| cfg.ffn_activation.apply(v)).collect();
            let (mq, ms) = quant(&mid);
            let di = ternary_dot_rows(&lw.w_down, &mq);
            let dn = real(&di, s.down, ms);
            x = h1.iter().zip(&dn).map(|(a, b)| a + b).collect();

            rec.x_q = xq;
            rec.q = qi;
            rec.k = ki;
            rec.v = vi;
            rec.attn_q = aq;
            rec.o_proj = oi;
            rec.ffn_in_q = fq;
            rec.ffn_up = ui;
            rec.ffn_mid_q = mq;
            rec.ffn_down = di;
            rec.output = x.clone();
            if cfg.record {
                records.push(rec);
            }
        }
        if pos + 1 >= prompt.len() {
            let h = norm(&x, &model.final_norm);
            let mut best = (0usize, f64::NEG_INFINITY);
            for t in 0..spec.vocab {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += model.embedding[t * d + i] * h[i];
                }
                if acc > best.1 {
                    best = (t, acc);
                }
            }
            tokens.push(best.0 as u32);
        }
    }
    Ok((tokens, records))
}

/// First disagreement between two record streams, if any. Integer fields
/// must match exactly; real outputs within `rel_tol` relative.
pub fn compare_records(datapath: &[TokenRecord], reference: &[TokenRecord], rel_tol: f64) -> Option<String> {
    let mut a: Vec<&TokenRecord> = datapath.iter().collect();
    let mut b: Vec<&TokenRecord> = reference.iter().collect();
    a.sort_by_key(|r| (r.pos, r.layer));
    b.sort_by_key(|r| (r.pos, r.layer));
    if a.len() != b.len() {
        return Some(format!("{} records vs {}", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(&b) {
        let at = format!("pos {} layer {}", x.pos, x.layer);
        let ints = [
            ("x_q", x.x_q == y.x_q),
            ("q", x.q == y.q),
            ("k", x.k == y.k),
            ("v", x.v == y.v),
            ("head_q", x.head_q == y.head_q),
            ("head_k", x.head_k == y.head_k),
            ("head_v", x.head_v == y.head_v),
            ("surrogate", x.surrogate == y.surrogate),
            ("selected", x.selected == y.selected),
            ("scores", x.scores == y.scores),
            ("probs_q", x.probs_q == y.probs_q),
            ("attn_out", x.attn_out == y.attn_out),
            ("attn_q", x.attn_q == y.attn_q),
            ("o_proj", x.o_proj == y.o_proj),
            ("ffn_in_q", x.ffn_in_q == y.ffn_in_q),
            ("ffn_up", x.ffn_up == y.ffn_up),
            ("ffn_mid_q", x.ffn_mid_q == y.ffn_mid_q),
            ("ffn_down", x.ffn_down == y.ffn_down),
        ];
        if (x.pos, x.layer) != (y.pos, y.layer) {
            return Some(format!("{at}: position/layer mismatch"));
        }
        if let Some((name, _)) = ints.iter().find(|(_, ok)| !ok) {
            return Some(format!("{at}: {name} differs"));
        }
        for (i, (&p, &q)) in x.output.iter().zip(&y.output).enumerate() {
            let denom = p.abs().max(q.abs()).max(1e-12);
            if (p - q).abs() / denom > rel_tol {
                return Some(format!("{at}: output[{i}] {p} vs {q}"));
            }
        }
    }
    None
}
