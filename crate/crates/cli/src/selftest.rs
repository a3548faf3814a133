//! Reduced invariant suite for quick checks from the command line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ternacc::booth::{booth_multiply, bs_multiply, PrecisionMode};
use ternacc::codec::{pack_trits, unpack_byte, Trit, TritTensor};
use ternacc::lop::{select_kv, topk_bitwise, LoVector};
use ternacc::nonlinear::softmax_two_stage;
use ternacc::perf::{ablate, estimate_decode_throughput, schedule_heads, HardwareSpec, ModelSpec, Stage, Toggles};
use ternacc::runtime::{generate, reference, RunConfig, ToyModel};
use ternacc::tensor::QTensor;
use ternacc::tint;

type Check = fn(&mut ChaCha8Rng) -> Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn booth(_: &mut ChaCha8Rng) -> Result<(), String> {
    for x in i8::MIN..=i8::MAX {
        for y in i8::MIN..=i8::MAX {
            let p = booth_multiply(x as i64, y as i64, PrecisionMode::Int8Int8).map_err(|e| e.to_string())?;
            ensure(p.value == x as i64 * y as i64, || format!("{x} x {y}"))?;
        }
        for t in Trit::ALL {
            let p = booth_multiply(t.value() as i64, x as i64, PrecisionMode::TernaryInt8).map_err(|e| e.to_string())?;
            ensure(p.value == (t.value() as i64) * x as i64, || format!("ternary {t} x {x}"))?;
        }
    }
    Ok(())
}

fn bit_serial(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..20_000 {
        let w = rng.random_range(4..=16) / 4 * 4;
        let lim = 1i64 << (w - 1);
        let (a, b) = (rng.random_range(-lim..lim), rng.random_range(-128..128));
        let p = bs_multiply(a, b, w, 8).map_err(|e| e.to_string())?;
        ensure(p.value == a * b && p.cycles == w / 4, || format!("{a} x {b} at {w} bits"))?;
    }
    Ok(())
}

fn codec(_: &mut ChaCha8Rng) -> Result<(), String> {
    for b in 0u8..243 {
        let t = unpack_byte(b).map_err(|e| e.to_string())?;
        ensure(pack_trits(&t).bytes() == [b], || format!("code {b}"))?;
    }
    Ok(())
}

fn tint_matmul(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..10 {
        let (m, n, k) = (rng.random_range(1..48), rng.random_range(1..48), rng.random_range(1..96));
        let a: Vec<i8> = (0..m * k).map(|_| rng.random()).collect();
        let w: Vec<i8> = (0..n * k).map(|_| rng.random_range(-1..=1)).collect();
        let out = tint::matmul(&QTensor::from_ints(m, k, a.clone()).unwrap(), &TritTensor::from_i8(n, k, &w).unwrap())
            .map_err(|e| e.to_string())?;
        for i in 0..m {
            for j in 0..n {
                let exact: i32 = (0..k).map(|l| a[i * k + l] as i32 * w[j * k + l] as i32).sum();
                ensure(out.get(i, j) == exact, || format!("{m}x{n}x{k} at ({i},{j})"))?;
            }
        }
    }
    Ok(())
}

fn softmax(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..1000 {
        let x: Vec<f64> = (0..rng.random_range(1..64)).map(|_| rng.random_range(-20.0..16.0)).collect();
        let (y, _) = softmax_two_stage(&x, 16.0, 8).map_err(|e| e.to_string())?;
        let s: f64 = y.iter().sum();
        ensure((s - 1.0).abs() <= 1e-9, || format!("sum {s}"))?;
    }
    Ok(())
}

fn topk(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..1000 {
        let scores: Vec<i64> = (0..rng.random_range(1..100)).map(|_| rng.random_range(-8..8)).collect();
        let k = rng.random_range(0..=scores.len());
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
        idx.truncate(k);
        let got = topk_bitwise(&scores, k).map_err(|e| e.to_string())?;
        ensure(got.indices == idx, || format!("{scores:?} k={k}"))?;
    }
    let q: Vec<i8> = (0..32).map(|i| if i % 3 == 0 { -4 } else { 8 }).collect();
    let cache: Vec<LoVector> = (0..10).map(|j| LoVector::from_i8(&vec![j as i8; 32])).collect();
    ensure(select_kv(&q, &cache, 32).map_err(|e| e.to_string())?.indices.len() == 10, || "dense fallback".into())
}

fn perf(_: &mut ChaCha8Rng) -> Result<(), String> {
    let hw = HardwareSpec::default();
    let tps = estimate_decode_throughput(&ModelSpec::bitnet_3b(), &hw, 2048, Toggles::default());
    ensure((tps / 70.70 - 1.0).abs() <= 0.15, || format!("3b decode {tps:.2} tk/s"))?;
    let a = ablate(&ModelSpec::bitnet_3b(), &hw, 2048, 32);
    ensure(a.head_pipeline_attention >= 1.5 && a.dual_core_ffn > 1.0 && a.lop_kv_ema_reduction >= 50.0, || format!("{a:?}"))?;
    schedule_heads(&ModelSpec::bitnet_7b(), &hw, Stage::Decode, 2048, Toggles::default()).validate()
}

fn end_to_end(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let model = ToyModel::random(ToyModel::default_spec(), rng.random(), 1.0 / 3.0).map_err(|e| e.to_string())?;
    let cfg = RunConfig { k: 4, max_new_tokens: 8, record: true, ..RunConfig::default() };
    let g = generate(&model, &[3, 1, 4, 1, 5], &cfg).map_err(|e| e.to_string())?;
    let (tokens, recs) = reference::generate(&model, &[3, 1, 4, 1, 5], &cfg).map_err(|e| e.to_string())?;
    ensure(g.tokens == tokens, || "tokens differ from reference".into())?;
    match reference::compare_records(&g.records, &recs, 1e-5) {
        None => Ok(()),
        Some(d) => Err(d),
    }
}

pub fn run(seed: u64, json: bool) -> Result<(), String> {
    let checks: [(&str, Check); 8] = [
        ("booth", booth),
        ("bit_serial", bit_serial),
        ("codec", codec),
        ("tint_matmul", tint_matmul),
        ("softmax", softmax),
        ("topk", topk),
        ("perf", perf),
        ("end_to_end", end_to_end),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failed = Vec::new();
    for (name, f) in checks {
        let r = f(&mut rng);
        if json {
            println!("{}", json!({"check": name, "pass": r.is_ok(), "detail": r.as_ref().err()}));
        } else {
            match &r {
                Ok(()) => println!("ok    {name}"),
                Err(e) => println!("FAIL  {name}: {e}"),
            }
        }
        if r.is_err() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(format!("selftest failed: {}", failed.join(", ")))
    }
}
