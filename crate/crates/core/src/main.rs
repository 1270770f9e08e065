use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nnblend::dataset::{self, PatchFile, SynthParams};
use nnblend::engine::{self, BlendRequest, DEFAULT_BIT_DEPTH};
use nnblend::gating::{self, CuMeta, GatingMode};
use nnblend::metrics::{self, RdPoint};
use nnblend::model::{NetworkConfig, Weights, WEIGHTS_MAGIC};
use nnblend::quantizer::{self, CalibrationSet, QuantizedWeights, QUANT_MAGIC};
use nnblend::{tensor, Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "nnblend", version, about = "Integer CNN blending of bi-prediction blocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter count, MAC/pixel and peak activation memory of a network size.
    NetInfo(NetInfoArgs),
    /// Write a float weight file (random init or plain averaging).
    InitWeights(InitWeightsArgs),
    /// Calibrate float weights on a patch file and write the int16 network.
    Quantize(QuantizeArgs),
    /// Blend two raw prediction planes.
    Infer(InferArgs),
    /// Time the int16 engine on one patch.
    Benchmark(BenchmarkArgs),
    /// Gating decision for one CU.
    Gate(GateArgs),
    /// Generate or extract patch files.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Compare network blending against average blending on a patch file.
    Eval(EvalArgs),
    /// Bjontegaard delta rate between two RD curves.
    Bdrate(BdrateArgs),
}

#[derive(Args)]
struct NetInfoArgs {
    /// Number of convolution layers (N >= 4).
    #[arg(long)]
    n: usize,
    /// Block size for MAC/pixel.
    #[arg(long, default_value_t = 16)]
    block: usize,
    /// Block size for peak memory.
    #[arg(long, default_value_t = 32)]
    memory_block: usize,
    #[arg(long)]
    csv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Random,
    Average,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = InitKind::Random)]
    kind: InitKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    /// Float weight file (NNBB).
    #[arg(long)]
    weights: PathBuf,
    /// Calibration patches (NNBP).
    #[arg(long)]
    calib: PathBuf,
    /// Output int16 network (NNBQ).
    #[arg(long)]
    out: PathBuf,
    /// Skip the error search and keep the range-derived fractional bits.
    #[arg(long)]
    ranges_only: bool,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct InferArgs {
    /// NNBB (float path) or NNBQ (int16 path).
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    pred0: PathBuf,
    #[arg(long)]
    pred1: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = DEFAULT_BIT_DEPTH)]
    bit_depth: u8,
    /// Output plane, (width - 2N) x (height - 2N) samples.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// NNBQ network; without it a seeded random network is calibrated.
    #[arg(long, conflicts_with = "n")]
    weights: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output block side.
    #[arg(long, default_value_t = 32)]
    patch: usize,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct GateArgs {
    /// CU fields as key=value (affine, ciip, bcw, smvd, bi, poc_cur, poc_ref0,
    /// poc_ref1, width, height).
    pairs: Vec<String>,
    /// Report one mode only.
    #[arg(long)]
    mode: Option<GatingMode>,
    #[arg(long)]
    affine: bool,
    #[arg(long)]
    ciip: bool,
    #[arg(long)]
    bcw: bool,
    #[arg(long)]
    smvd: bool,
    /// Uni-predicted CU (always rejected).
    #[arg(long)]
    uni: bool,
    #[arg(long)]
    poc_cur: Option<i32>,
    #[arg(long)]
    poc_ref0: Option<i32>,
    #[arg(long)]
    poc_ref1: Option<i32>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    csv: bool,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Synthetic textured patches with symmetric motion.
    Gen(GenArgs),
    /// Patches from three consecutive raw frames.
    Extract(ExtractArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    displacement: usize,
    #[arg(long, default_value_t = 4.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Border N of the target network.
    #[arg(long, default_value_t = 6)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_BIT_DEPTH)]
    bit_depth: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    prev: PathBuf,
    #[arg(long)]
    cur: PathBuf,
    #[arg(long)]
    next: PathBuf,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    stride: usize,
    #[arg(long, default_value_t = 6)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_BIT_DEPTH)]
    bit_depth: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// NNBB or NNBQ network.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    patches: PathBuf,
    /// Per-patch rows plus an aggregate row.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct BdrateArgs {
    /// CSV of rate,psnr rows.
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

enum Network {
    Float(Weights),
    Int(QuantizedWeights),
}

impl Network {
    fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        match bytes.get(..4) {
            Some(m) if m == QUANT_MAGIC => Ok(Network::Int(QuantizedWeights::from_bytes(&bytes)?)),
            Some(m) if m == WEIGHTS_MAGIC => Ok(Network::Float(Weights::from_bytes(&bytes)?)),
            _ => Ok(Network::Float(Weights::from_bytes(&bytes)?)),
        }
    }

    fn config(&self) -> &NetworkConfig {
        match self {
            Network::Float(w) => w.config(),
            Network::Int(q) => q.config(),
        }
    }

    fn blend(&self, req: &BlendRequest) -> Result<Tensor<i16>> {
        match self {
            Network::Float(w) => engine::forward_float(w, req),
            Network::Int(q) => engine::forward_int16(q, req),
        }
    }
}

fn net_info(args: &NetInfoArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = NetworkConfig::new(args.n)?;
    let r = cfg.complexity(args.block, args.memory_block)?;
    if args.csv {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "params",
            "param_bytes",
            "mac_block",
            "mac_per_pixel",
            "memory_block",
            "peak_memory_bytes",
        ])
        .map_err(csv_error)?;
        w.write_record([
            r.n_layers.to_string(),
            r.param_count.to_string(),
            r.parameter_memory.to_string(),
            r.mac_block.to_string(),
            format!("{:.1}", r.mac_per_pixel),
            r.memory_block.to_string(),
            r.peak_memory.to_string(),
        ])
        .map_err(csv_error)?;
        w.flush()?;
    } else {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

fn init_weights(args: &InitWeightsArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = NetworkConfig::new(args.n)?;
    let w = match args.kind {
        InitKind::Random => Weights::random(&cfg, args.seed),
        InitKind::Average => Weights::average_blend(&cfg),
    };
    fs::write(&args.out, w.to_bytes())?;
    writeln!(out, "wrote {} ({} parameters)", args.out.display(), cfg.param_count())?;
    Ok(())
}

fn quantize(args: &QuantizeArgs, out: &mut dyn Write) -> Result<()> {
    let w = Weights::from_bytes(&fs::read(&args.weights)?)?;
    let patches = PatchFile::read(&args.calib)?;
    let calib = CalibrationSet::from_records(&patches.records)?;
    let qw = if args.ranges_only {
        quantizer::quantize_from_ranges(&w, &calib)?
    } else {
        quantizer::quantize_direct(&w, &calib)?
    };
    let fracs = &qw.output_frac()[..qw.output_frac().len() - 1];
    let report = quantizer::quantization_report(&w, &qw, &calib)?;
    fs::write(&args.out, qw.to_bytes())?;
    let fracs: Vec<String> = fracs.iter().map(i32::to_string).collect();
    let shifts: Vec<String> = qw.layers().iter().map(|l| format!("{}/{}", l.weight_shift, l.activation_shift)).collect();
    if args.csv {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["patches", "frac_bits", "shifts", "mean_abs", "max_abs", "mse"]).map_err(csv_error)?;
        wr.write_record([
            calib.len().to_string(),
            fracs.join(" "),
            shifts.join(" "),
            format!("{:.6}", report.mean_abs),
            format!("{:.6}", report.max_abs),
            format!("{:.6}", report.mse),
        ])
        .map_err(csv_error)?;
        wr.flush()?;
    } else {
        writeln!(out, "calibrated on {} patches", calib.len())?;
        writeln!(out, "fractional bits: {}", fracs.join(" "))?;
        writeln!(out, "weight/activation shifts: {}", shifts.join(" "))?;
        writeln!(
            out,
            "int16 vs float: mean {:.4} LSB, max {:.4} LSB, mse {:.6}",
            report.mean_abs, report.max_abs, report.mse
        )?;
        writeln!(out, "wrote {}", args.out.display())?;
    }
    Ok(())
}

fn infer(args: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let net = Network::load(&args.weights)?;
    let plane = |p: &Path| -> Result<Tensor<i16>> {
        dataset::read_raw_plane(&fs::read(p)?, args.width, args.height, args.bit_depth)
    };
    let req = BlendRequest::new(plane(&args.pred0)?, plane(&args.pred1)?, args.bit_depth)?;
    let blended = net.blend(&req)?;
    fs::write(&args.out, dataset::raw_plane_bytes(&blended))?;
    writeln!(out, "wrote {}x{} samples to {}", blended.width(), blended.height(), args.out.display())?;
    Ok(())
}

fn benchmark(args: &BenchmarkArgs, out: &mut dyn Write) -> Result<()> {
    let qw = match (&args.weights, args.n) {
        (Some(path), _) => QuantizedWeights::from_bytes(&fs::read(path)?)?,
        (None, n) => {
            let cfg = NetworkConfig::new(n.unwrap_or(6))?;
            let w = Weights::random(&cfg, args.seed);
            let params = SynthParams { count: 32, seed: args.seed, n_border: cfg.border(), ..Default::default() };
            let calib = CalibrationSet::from_records(&dataset::synth_generate(&params)?)?;
            quantizer::calibrate(&w, &calib)?.0
        }
    };
    let side = args.patch + 2 * qw.config().border();
    let max = engine::max_sample(qw.bit_depth()) as u64;
    let sample = |k: u64| move |_, y: usize, x: usize| ((y as u64 * 131 + x as u64 * 71 + k * 17) % (max + 1)) as i16;
    let req = BlendRequest::new(
        Tensor::from_fn(1, side, side, sample(0))?,
        Tensor::from_fn(1, side, side, sample(1))?,
        qw.bit_depth(),
    )?;
    let report = engine::benchmark(&qw, &req, args.iterations)?;
    if args.csv {
        let ms = |d: std::time::Duration| format!("{:.4}", d.as_secs_f64() * 1e3);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["implementation", "patch", "iterations", "cold_ms", "warm_ms"]).map_err(csv_error)?;
        w.write_record([
            "this build (int16)".to_string(),
            report.patch_size.to_string(),
            report.iterations.to_string(),
            ms(report.cold_start),
            report.warm_start.map_or(String::new(), ms),
        ])
        .map_err(csv_error)?;
        w.write_record([
            "reference (int16)".to_string(),
            String::new(),
            String::new(),
            format!("{:.1}", engine::REFERENCE_INT16_MS.0),
            format!("{:.1}", engine::REFERENCE_INT16_MS.1),
        ])
        .map_err(csv_error)?;
        w.flush()?;
    } else {
        writeln!(out, "{report}")?;
    }
    Ok(())
}

fn parse_flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Argument(format!("{key}={v}: expected a boolean"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Argument(format!("{key}={v}: expected an integer")))
}

fn gate_meta(args: &GateArgs) -> Result<CuMeta> {
    let mut cu = CuMeta {
        is_affine: args.affine,
        uses_ciip: args.ciip,
        uses_bcw: args.bcw,
        uses_smvd: args.smvd,
        is_biprediction: !args.uni,
        ..CuMeta::default()
    };
    if let Some(v) = args.poc_cur {
        cu.poc_current = v;
    }
    if let Some(v) = args.poc_ref0 {
        cu.poc_ref0 = v;
    }
    if let Some(v) = args.poc_ref1 {
        cu.poc_ref1 = v;
    }
    if let Some(v) = args.width {
        cu.width = v;
    }
    if let Some(v) = args.height {
        cu.height = v;
    }
    for pair in &args.pairs {
        let (key, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("{pair:?} is not key=value")))?;
        match key.replace('-', "_").as_str() {
            "affine" => cu.is_affine = parse_flag(key, v)?,
            "ciip" => cu.uses_ciip = parse_flag(key, v)?,
            "bcw" => cu.uses_bcw = parse_flag(key, v)?,
            "smvd" => cu.uses_smvd = parse_flag(key, v)?,
            "bi" | "biprediction" => cu.is_biprediction = parse_flag(key, v)?,
            "poc_cur" | "poc_current" => cu.poc_current = parse_num(key, v)?,
            "poc_ref0" => cu.poc_ref0 = parse_num(key, v)?,
            "poc_ref1" => cu.poc_ref1 = parse_num(key, v)?,
            "width" => cu.width = parse_num(key, v)?,
            "height" => cu.height = parse_num(key, v)?,
            _ => return Err(Error::Argument(format!("unknown CU field {key:?}"))),
        }
    }
    Ok(cu)
}

fn gate(args: &GateArgs, out: &mut dyn Write) -> Result<()> {
    let cu = gate_meta(args)?;
    match args.mode {
        Some(mode) => {
            let apply = gating::should_apply(&cu, mode)?;
            if args.csv {
                writeln!(out, "mode,apply\n{mode},{apply}")?;
            } else {
                writeln!(out, "apply={apply}")?;
            }
        }
        None => {
            let d = gating::decide(&cu)?;
            if args.csv {
                writeln!(out, "default,fast,slow\n{},{},{}", d.default, d.fast, d.slow)?;
            } else {
                writeln!(out, "default={} fast={} slow={}", d.default, d.fast, d.slow)?;
            }
        }
    }
    Ok(())
}

fn dataset_gen(args: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let params = SynthParams {
        count: args.count,
        displacement: args.displacement,
        noise_amplitude: args.noise,
        seed: args.seed,
        n_border: args.n,
        bit_depth: args.bit_depth,
    };
    let file = PatchFile::new(args.bit_depth, args.n, dataset::synth_generate(&params)?)?;
    file.write(&args.out)?;
    writeln!(out, "wrote {} records to {}", file.records.len(), args.out.display())?;
    Ok(())
}

fn dataset_extract(args: &ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let plane = |p: &Path| -> Result<Tensor<i16>> {
        dataset::read_raw_plane(&fs::read(p)?, args.width, args.height, args.bit_depth)
    };
    let records = dataset::extract_triplets(
        &plane(&args.prev)?,
        &plane(&args.cur)?,
        &plane(&args.next)?,
        args.stride,
        args.n,
        args.bit_depth,
    )?;
    let file = PatchFile::new(args.bit_depth, args.n, records)?;
    file.write(&args.out)?;
    writeln!(out, "wrote {} records to {}", file.records.len(), args.out.display())?;
    Ok(())
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let net = Network::load(&args.weights)?;
    let file = PatchFile::read(&args.patches)?;
    if file.n_border != net.config().border() {
        return Err(Error::Argument(format!(
            "patches carry a border of {}, the network needs {}",
            file.n_border,
            net.config().border()
        )));
    }
    let max = engine::max_sample(file.bit_depth) as f64;
    let mut rows = Vec::with_capacity(file.records.len());
    let (mut se_nn, mut se_avg, mut satd_nn, mut satd_avg, mut samples) = (0.0, 0.0, 0u64, 0u64, 0usize);
    for r in &file.records {
        let nn = net.blend(&r.request()?)?;
        let margin = file.n_border;
        let avg = metrics::average_blend(
            &tensor::center_crop(r.pred0(), margin)?,
            &tensor::center_crop(r.pred1(), margin)?,
        )?;
        let (e_nn, e_avg) = (metrics::squared_error(&nn, r.target())?, metrics::squared_error(&avg, r.target())?);
        let (s_nn, s_avg) = (metrics::satd(&nn, r.target())?, metrics::satd(&avg, r.target())?);
        let n = r.target().as_slice().len();
        rows.push((
            metrics::psnr_from_mse(e_nn / n as f64, max),
            metrics::psnr_from_mse(e_avg / n as f64, max),
            s_nn,
            s_avg,
        ));
        se_nn += e_nn;
        se_avg += e_avg;
        satd_nn += s_nn;
        satd_avg += s_avg;
        samples += n;
    }
    let psnr_nn = metrics::psnr_from_mse(se_nn / samples as f64, max);
    let psnr_avg = metrics::psnr_from_mse(se_avg / samples as f64, max);
    if args.csv {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["patch", "psnr_nn", "psnr_avg", "satd_nn", "satd_avg"]).map_err(csv_error)?;
        for (i, (p_nn, p_avg, s_nn, s_avg)) in rows.iter().enumerate() {
            w.write_record([i.to_string(), format!("{p_nn:.4}"), format!("{p_avg:.4}"), s_nn.to_string(), s_avg.to_string()])
                .map_err(csv_error)?;
        }
        w.write_record([
            "all".to_string(),
            format!("{psnr_nn:.4}"),
            format!("{psnr_avg:.4}"),
            satd_nn.to_string(),
            satd_avg.to_string(),
        ])
        .map_err(csv_error)?;
        w.flush()?;
    } else {
        writeln!(out, "patches:          {}", rows.len())?;
        writeln!(out, "PSNR nn / avg:    {psnr_nn:.4} / {psnr_avg:.4} dB ({:+.4} dB)", psnr_nn - psnr_avg)?;
        writeln!(out, "SATD nn / avg:    {satd_nn} / {satd_avg}")?;
    }
    Ok(())
}

fn read_curve(path: &Path) -> Result<Vec<RdPoint>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_error)?;
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != 2 {
            return Err(Error::Argument(format!("{}: row {} needs rate,psnr", path.display(), i + 1)));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(rate), Ok(psnr)) => points.push(RdPoint::new(rate, psnr)),
            // a header row
            _ if i == 0 => continue,
            _ => return Err(Error::Argument(format!("{}: row {} is not numeric", path.display(), i + 1))),
        }
    }
    Ok(points)
}

fn bdrate(args: &BdrateArgs, out: &mut dyn Write) -> Result<()> {
    let delta = metrics::bd_rate(&read_curve(&args.anchor)?, &read_curve(&args.test)?)?;
    let shown = if format!("{delta:.2}") == "-0.00" { 0.0 } else { delta };
    writeln!(out, "BD-rate: {shown:.2}%")?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Argument(format!("csv: {e}"))
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::NetInfo(a) => net_info(a, &mut out),
        Command::InitWeights(a) => init_weights(a, &mut out),
        Command::Quantize(a) => quantize(a, &mut out),
        Command::Infer(a) => infer(a, &mut out),
        Command::Benchmark(a) => benchmark(a, &mut out),
        Command::Gate(a) => gate(a, &mut out),
        Command::Dataset { command: DatasetCommand::Gen(a) } => dataset_gen(a, &mut out),
        Command::Dataset { command: DatasetCommand::Extract(a) } => dataset_extract(a, &mut out),
        Command::Eval(a) => eval(a, &mut out),
        Command::Bdrate(a) => bdrate(a, &mut out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
