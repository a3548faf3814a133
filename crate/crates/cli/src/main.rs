mod selftest;
mod trits;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ternacc::booth::{booth_multiply, boothflex_matmul, bs_multiply, PrecisionMode, Weights};
use ternacc::codec::{Trit, TritTensor};
use ternacc::lop::{ema_savings, select_kv, LoVector};
use ternacc::perf::{
    ablate, calibrate_tint_cores, simulate_layer, HardwareSpec, ModelSpec, PerfReport, Stage, Toggles,
    CALIBRATION_TARGET_TPS, DEFAULT_DECODE_CONTEXT, DEFAULT_PROMPT_LEN, PRESET_NAMES,
};
use ternacc::runtime::{generate, RunConfig, ToyModel};
use ternacc::tensor::QTensor;
use ternacc::tint::{self, sel};

#[derive(Parser)]
#[command(name = "ternacc", version, about = "Ternary LLM accelerator simulator and performance model")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Hardware config: "default" or a TOML file.
    #[arg(long, global = true, default_value = "default")]
    hw: String,
    /// Model preset (2b, 3b, 7b, 13b) or a TOML file.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Enable LOP top-k KV selection (`--lop false` disables).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    lop: Option<bool>,
    /// Tokens kept by top-k selection.
    #[arg(long, global = true, default_value_t = 32)]
    k: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Machine-readable output and error records.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Trit text file (rows of `-`, `0`, `+`) to packed TPK1 file.
    Pack { input: PathBuf },
    /// Packed TPK1 file back to trit text.
    Unpack { input: PathBuf },
    /// Check the datapaths against exact integer arithmetic.
    Matmul(MatmulArgs),
    /// LOP recall study; emits CSV.
    Attn(AttnArgs),
    /// Greedy generation on the toy model.
    Infer(InferArgs),
    /// Performance report for a model preset.
    Perf(PerfArgs),
    /// Feature ablation ratios.
    Ablate {
        #[arg(long, default_value_t = DEFAULT_DECODE_CONTEXT)]
        seq_len: usize,
    },
    /// Run the invariant suite.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ternary,
    Int8,
    Bs,
}

#[derive(Args)]
struct MatmulArgs {
    #[arg(long, value_enum, default_value = "ternary")]
    mode: Mode,
    /// Every operand pair instead of random matrices.
    #[arg(long)]
    exhaustive: bool,
    /// Activation width for bit-serial mode.
    #[arg(long, default_value_t = 8)]
    width: u32,
    #[arg(long, default_value_t = 16)]
    trials: usize,
    /// Largest random dimension.
    #[arg(long, default_value_t = 64)]
    max_dim: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Pow2,
}

#[derive(Args)]
struct AttnArgs {
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048")]
    seq_lens: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    head_dim: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    dist: Dist,
}

#[derive(Args)]
struct InferArgs {
    /// Comma-separated prompt token ids.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    prompt: Vec<u32>,
    #[arg(long, default_value_t = 16)]
    max_new_tokens: usize,
    /// Load weights from a directory written by `--save-weights`.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    save_weights: Option<PathBuf>,
    /// Fraction of zero trits in generated weights.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    zero_fraction: f64,
    #[arg(long)]
    rope: bool,
    /// Write the schedule of the last generated token as CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct PerfArgs {
    #[arg(long, default_value_t = DEFAULT_DECODE_CONTEXT)]
    seq_len: usize,
    #[arg(long, default_value_t = DEFAULT_PROMPT_LEN)]
    prompt_len: usize,
    /// Re-fit the TINT array count to the 3B decode figure first.
    #[arg(long)]
    calibrate: bool,
    #[arg(long)]
    no_head_pipeline: bool,
    #[arg(long)]
    no_dual_core: bool,
    /// Write one decode layer's schedule as CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

/// Outcome classes mapped to exit codes 1 and 2.
enum Failure {
    Usage(anyhow::Error),
    Verify(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<ternacc::Error> for Failure {
    fn from(e: ternacc::Error) -> Self {
        Failure::Usage(e.into())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn sink(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_hw(g: &Global) -> anyhow::Result<HardwareSpec> {
    HardwareSpec::load(&g.hw).with_context(|| format!("loading hardware spec {:?}", g.hw))
}

fn load_model(name: &str) -> anyhow::Result<ModelSpec> {
    ModelSpec::load(name).with_context(|| format!("loading model {name:?}"))
}

fn cmd_pack(g: &Global, input: &Path) -> Outcome {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let t = trits::parse(&text)?;
    let Some(out) = &g.out else { return Err(Failure::Usage(anyhow::anyhow!("pack needs --out"))) };
    t.write_packed(BufWriter::new(File::create(out)?))?;
    if g.json {
        println!("{}", json!({"rows": t.rows(), "cols": t.cols(), "bytes": std::fs::metadata(out)?.len()}));
    }
    Ok(())
}

fn cmd_unpack(g: &Global, input: &Path) -> Outcome {
    let f = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let t = TritTensor::read_packed(BufReader::new(f))?;
    let mut w = sink(&g.out)?;
    w.write_all(trits::render(&t).as_bytes())?;
    w.flush()?;
    Ok(())
}

fn report(g: &Global, label: &str, passed: u64, total: u64) -> Outcome {
    if g.json {
        println!("{}", json!({"check": label, "passed": passed, "total": total}));
    } else {
        println!("{label}: {passed}/{total} pass");
    }
    if passed == total {
        Ok(())
    } else {
        Err(Failure::Verify(format!("{label}: {} failures", total - passed)))
    }
}

fn cmd_matmul(g: &Global, a: &MatmulArgs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let (mut passed, mut total) = (0u64, 0u64);
    let label;
    if a.exhaustive {
        match a.mode {
            Mode::Int8 => {
                label = "int8 booth multiply";
                for x in i8::MIN..=i8::MAX {
                    for y in i8::MIN..=i8::MAX {
                        total += 1;
                        let p = booth_multiply(x as i64, y as i64, PrecisionMode::Int8Int8)?;
                        passed += (p.value == x as i64 * y as i64) as u64;
                    }
                }
            }
            Mode::Ternary => {
                label = "ternary booth multiply";
                for w in Trit::ALL {
                    for y in i8::MIN..=i8::MAX {
                        total += 1;
                        let p = booth_multiply(w.value() as i64, y as i64, PrecisionMode::TernaryInt8)?;
                        passed += (p.value == sel(w, y) as i64) as u64;
                    }
                }
            }
            Mode::Bs => {
                label = "bit-serial multiply";
                PrecisionMode::bit_serial(a.width)?;
                if a.width > 8 {
                    return Err(Failure::Usage(anyhow::anyhow!("exhaustive bit-serial supports widths 4 and 8")));
                }
                let lim = 1i64 << (a.width - 1);
                for x in -lim..lim {
                    for w in -lim..lim {
                        total += 1;
                        passed += (bs_multiply(x, w, a.width, a.width)?.value == x * w) as u64;
                    }
                }
            }
        }
        return report(g, label, passed, total);
    }
    if a.max_dim == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--max-dim must be positive")));
    }
    label = match a.mode {
        Mode::Ternary => "ternary matmul (TINT and BoothFlex)",
        Mode::Int8 => "int8 matmul (BoothFlex)",
        Mode::Bs => "bit-serial matmul (BoothFlex)",
    };
    let mode = match a.mode {
        Mode::Ternary => PrecisionMode::TernaryInt8,
        Mode::Int8 => PrecisionMode::Int8Int8,
        Mode::Bs => PrecisionMode::bit_serial(a.width)?,
    };
    for _ in 0..a.trials {
        let (m, n, k) = (rng.random_range(1..=a.max_dim), rng.random_range(1..=a.max_dim), rng.random_range(1..=a.max_dim));
        let act_lim = if matches!(a.mode, Mode::Bs) { 1i64 << (a.width.min(8) - 1) } else { 128 };
        let acts: Vec<i8> = (0..m * k).map(|_| rng.random_range(-act_lim..act_lim) as i8).collect();
        let act = QTensor::from_ints(m, k, acts.clone())?;
        let (wv, outs): (Vec<i8>, Vec<_>) = if matches!(a.mode, Mode::Ternary) {
            let wv: Vec<i8> = (0..n * k).map(|_| rng.random_range(-1..=1)).collect();
            let wt = TritTensor::from_i8(n, k, &wv)?;
            let outs = vec![tint::matmul(&act, &wt)?, boothflex_matmul(&act, Weights::Ternary(&wt), mode)?.out];
            (wv, outs)
        } else {
            let wv: Vec<i8> = (0..n * k).map(|_| rng.random()).collect();
            let wq = QTensor::from_ints(n, k, wv.clone())?;
            (wv, vec![boothflex_matmul(&act, Weights::Int8(&wq), mode)?.out])
        };
        for out in outs {
            total += 1;
            let ok = (0..m).all(|i| {
                (0..n).all(|j| {
                    let exact: i32 = (0..k).map(|l| acts[i * k + l] as i32 * wv[j * k + l] as i32).sum();
                    out.get(i, j) == exact
                })
            });
            passed += ok as u64;
        }
    }
    report(g, label, passed, total)
}

fn cmd_attn(g: &Global, a: &AttnArgs) -> Outcome {
    if a.head_dim == 0 || a.trials == 0 || g.k == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--head-dim, --trials and --k must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let sample = |rng: &mut ChaCha8Rng| -> i8 {
        match a.dist {
            Dist::Uniform => rng.random_range(-127..=127),
            Dist::Pow2 => {
                let m = 1i8 << rng.random_range(0..=6);
                if rng.random_bool(0.5) {
                    -m
                } else {
                    m
                }
            }
        }
    };
    let mut w = sink(&g.out)?;
    writeln!(w, "seq_len,k,trials,recall_mean,recall_min,fraction_saved,net_bytes_saved")?;
    for &m in &a.seq_lens {
        if m == 0 {
            return Err(Failure::Usage(anyhow::anyhow!("sequence lengths must be positive")));
        }
        let k = g.k.min(m);
        let (mut sum, mut min) = (0.0f64, 1.0f64);
        for _ in 0..a.trials {
            let q: Vec<i8> = (0..a.head_dim).map(|_| sample(&mut rng)).collect();
            let keys: Vec<Vec<i8>> = (0..m).map(|_| (0..a.head_dim).map(|_| sample(&mut rng)).collect()).collect();
            let cache: Vec<LoVector> = keys.iter().map(|r| LoVector::from_i8(r)).collect();
            let got = select_kv(&q, &cache, k)?;
            let exact: Vec<i64> = keys.iter().map(|r| r.iter().zip(&q).map(|(&x, &y)| x as i64 * y as i64).sum()).collect();
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&x, &y| exact[y].cmp(&exact[x]).then(x.cmp(&y)));
            idx.truncate(k);
            let hits = got.indices.iter().filter(|i| idx.contains(i)).count();
            let r = hits as f64 / k as f64;
            sum += r;
            min = min.min(r);
        }
        let st = ema_savings(m, g.k, 2 * a.head_dim, a.head_dim);
        writeln!(
            w,
            "{m},{},{},{:.6},{:.6},{:.6},{}",
            g.k,
            a.trials,
            sum / a.trials as f64,
            min,
            st.fraction_saved,
            st.net_bytes_saved
        )?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_infer(g: &Global, a: &InferArgs) -> Outcome {
    let model = match &a.weights {
        Some(dir) => ToyModel::load(dir).with_context(|| format!("loading weights from {}", dir.display()))?,
        None => {
            let spec = match &g.model {
                Some(m) => load_model(m)?,
                None => ToyModel::default_spec(),
            };
            ToyModel::random(spec, g.seed, a.zero_fraction)?
        }
    };
    if let Some(dir) = &a.save_weights {
        model.save(dir)?;
    }
    let cfg = RunConfig {
        lop: g.lop.unwrap_or(true),
        k: g.k,
        seed: g.seed,
        max_new_tokens: a.max_new_tokens,
        rope: a.rope,
        hw: load_hw(g)?,
        ..RunConfig::default()
    };
    let gen = generate(&model, &a.prompt, &cfg)?;
    if let (Some(p), Some(tr)) = (&a.trace_out, gen.traces.last()) {
        tr.write_csv(BufWriter::new(File::create(p)?))?;
    }
    let mut w = sink(&g.out)?;
    if g.json {
        let v = json!({
            "prompt": &a.prompt,
            "generated": gen.generated(),
            "tokens": &gen.tokens,
            "ema": &gen.ema,
        });
        writeln!(w, "{v}")?;
    } else {
        let fmt = |ts: &[u32]| ts.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
        writeln!(w, "prompt:    {}", fmt(&a.prompt))?;
        writeln!(w, "generated: {}", fmt(gen.generated()))?;
        let bytes: u64 = gen.ema.iter().map(|e| e.total()).sum();
        writeln!(w, "dram bytes: {bytes}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_perf(g: &Global, a: &PerfArgs) -> Outcome {
    let mut hw = load_hw(g)?;
    let model = load_model(g.model.as_deref().unwrap_or("3b"))?;
    if a.calibrate {
        let (c, _) = calibrate_tint_cores(&ModelSpec::bitnet_3b(), &hw, CALIBRATION_TARGET_TPS, a.seq_len, 64);
        hw.tint_core_count = c;
    }
    let toggles = Toggles {
        lop: g.lop.unwrap_or(true),
        top_k: g.k,
        head_pipeline: !a.no_head_pipeline,
        dual_core: !a.no_dual_core,
        ..Toggles::default()
    };
    let r = PerfReport::build(&model, &hw, a.seq_len, a.prompt_len, toggles)?;
    if let Some(p) = &a.trace_out {
        simulate_layer(&model, &hw, Stage::Decode, a.seq_len, toggles).trace.write_csv(BufWriter::new(File::create(p)?))?;
    }
    let mut w = sink(&g.out)?;
    if g.json {
        writeln!(w, "{}", r.to_json())?;
    } else {
        writeln!(w, "model               {}", r.model)?;
        writeln!(w, "tint_core_count     {}", r.tint_core_count)?;
        writeln!(w, "decode              {:.2} tokens/s at {} cached tokens", r.decode_tokens_per_s, r.decode_context)?;
        writeln!(w, "prefill             {:.3} s for {} tokens", r.prefill_seconds, r.prompt_len)?;
        writeln!(w, "decode peak         read {:.1} GB/s, write {:.2} GB/s", r.peak_read_gbps, r.peak_write_gbps)?;
        writeln!(w, "prefill peak        read {:.1} GB/s, write {:.2} GB/s", r.prefill_peak_read_gbps, r.prefill_peak_write_gbps)?;
        writeln!(w, "dram per token      {:.3e} bytes", r.ema_bytes)?;
        writeln!(w, "heads buffered      {}", r.buffer_heads_required)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_ablate(g: &Global, seq_len: usize) -> Outcome {
    let hw = load_hw(g)?;
    let models: Vec<ModelSpec> = match &g.model {
        Some(m) => vec![load_model(m)?],
        None => PRESET_NAMES.iter().map(|n| load_model(n)).collect::<anyhow::Result<_>>()?,
    };
    let mut w = sink(&g.out)?;
    for m in &models {
        let a = ablate(m, &hw, seq_len, g.k);
        if g.json {
            writeln!(w, "{}", serde_json::to_string(&a).map_err(anyhow::Error::from)?)?;
        } else {
            writeln!(w, "{} (seq_len {seq_len}, k {})", m.name, g.k)?;
            for (name, v) in a.rows() {
                writeln!(w, "  {name:<28} {v:>8.3}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    match &cli.command {
        Command::Pack { input } => cmd_pack(g, input),
        Command::Unpack { input } => cmd_unpack(g, input),
        Command::Matmul(a) => cmd_matmul(g, a),
        Command::Attn(a) => cmd_attn(g, a),
        Command::Infer(a) => cmd_infer(g, a),
        Command::Perf(a) => cmd_perf(g, a),
        Command::Ablate { seq_len } => cmd_ablate(g, *seq_len),
        Command::Selftest => selftest::run(g.seed, g.json).map_err(Failure::Verify),
    }
}

fn fail(json: bool, kind: &str, msg: &str) {
    if json {
        println!("{}", json!({"error": kind, "message": msg}));
    } else {
        eprintln!("error: {msg}");
    }
}

fn main() -> ExitCode {
    let json = std::env::args().any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if json {
                fail(true, "usage", e.to_string().trim());
            } else {
                let _ = e.print();
            }
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            fail(json, "input", &format!("{e:#}"));
            ExitCode::from(1)
        }
        Err(Failure::Verify(msg)) => {
            fail(json, "verification", &msg);
            ExitCode::from(2)
        }
    }
}
