//! Forward passes of the blending network: a float path (generic over the
//! real type, `f64` being the reference) and the bit-exact int16 path, plus
//! the cold/warm benchmark harness.
//!
//! Both paths run over two ping-pong activation buffers sized for the widest
//! activation. The cropped network inputs are written into channels 0 and 1
//! of the buffer that receives the 14-channel pre-concatenation activation
//! (channels 2..16), so the final layer reads one contiguous 16-channel
//! tensor.

use std::fmt;
use std::ops::Range;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{Activation, NetworkConfig, Weights, INPUT_CHANNELS};
use crate::quantizer::{integer_requantize, QuantLayer, QuantizedWeights};
use crate::tensor::{self, ConvElement, Real, Tensor};

pub const DEFAULT_BIT_DEPTH: u8 = 10;
pub const MAX_BIT_DEPTH: u8 = 14;

/// Two co-located prediction blocks, each carrying the network border.
#[derive(Debug, Clone)]
pub struct BlendRequest {
    pub pred0: Tensor<i16>,
    pub pred1: Tensor<i16>,
    pub bit_depth: u8,
}

impl BlendRequest {
    pub fn new(pred0: Tensor<i16>, pred1: Tensor<i16>, bit_depth: u8) -> Result<Self> {
        if !(1..=MAX_BIT_DEPTH).contains(&bit_depth) {
            return Err(Error::Argument(format!("bit depth {bit_depth} outside 1..={MAX_BIT_DEPTH}")));
        }
        if pred0.channels() != 1 || pred0.shape() != pred1.shape() {
            return Err(Error::Shape(format!(
                "predictions must be equal single-channel blocks, got {:?} and {:?}",
                pred0.shape(),
                pred1.shape()
            )));
        }
        let max = max_sample(bit_depth);
        if pred0.as_slice().iter().chain(pred1.as_slice()).any(|&v| v < 0 || v > max) {
            return Err(Error::Argument(format!("prediction sample outside [0, {max}]")));
        }
        Ok(Self { pred0, pred1, bit_depth })
    }

    pub fn height(&self) -> usize {
        self.pred0.height()
    }

    pub fn width(&self) -> usize {
        self.pred0.width()
    }

    /// Output block size for a network with the given border.
    pub fn output_size(&self, cfg: &NetworkConfig) -> Result<(usize, usize)> {
        let b = 2 * cfg.border();
        if self.height() <= b || self.width() <= b {
            return Err(Error::Shape(format!(
                "{}x{} input leaves no output with a border of {}",
                self.height(),
                self.width(),
                cfg.border()
            )));
        }
        Ok((self.height() - b, self.width() - b))
    }
}

pub fn max_sample(bit_depth: u8) -> i16 {
    ((1i32 << bit_depth) - 1) as i16
}

/// Accumulate one output channel of a valid 3x3 convolution into `acc`.
///
/// `acc` keeps the input row stride: output `(y, x)` lands at `y * iw + x`,
/// and the last two columns of each row hold wrapped-around junk. This turns
/// every tap into one long contiguous multiply-add over the plane.
/// Integer accumulators wrap instead of trapping; quantized networks are
/// validated against the worst-case accumulator bound on construction.
#[inline(always)]
fn accumulate<T: ConvElement>(
    src: &[T],
    cin: usize,
    ih: usize,
    iw: usize,
    taps: &[T],
    bias: T::Acc,
    acc: &mut [T::Acc],
) {
    let len = (ih - 2) * iw - 2;
    let acc = &mut acc[..len];
    acc.fill(bias);
    for i in 0..cin {
        let plane = &src[i * ih * iw..(i + 1) * ih * iw];
        for (j, &tap) in taps[i * 9..i * 9 + 9].iter().enumerate() {
            let k = tap.widen();
            let off = (j / 3) * iw + j % 3;
            for (o, &s) in acc.iter_mut().zip(&plane[off..off + len]) {
                *o = s.mac_unchecked(*o, k);
            }
        }
    }
}

/// Rows of a strided accumulator paired with the rows of a dense plane.
fn strided_rows<'a, A, D>(
    acc: &'a [A],
    dst: &'a mut [D],
    iw: usize,
    ow: usize,
) -> impl Iterator<Item = (&'a mut [D], &'a [A])> {
    dst.chunks_exact_mut(ow).zip(acc.chunks(iw).map(move |r| &r[..ow]))
}

/// [`accumulate`] for the int16 path, compiled for AVX2 when the CPU has it.
fn accumulate_int(src: &[i16], cin: usize, ih: usize, iw: usize, taps: &[i16], bias: i32, acc: &mut [i32]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { accumulate_avx2(src, cin, ih, iw, taps, bias, acc) };
    }
    accumulate(src, cin, ih, iw, taps, bias, acc)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn accumulate_avx2(src: &[i16], cin: usize, ih: usize, iw: usize, taps: &[i16], bias: i32, acc: &mut [i32]) {
    accumulate(src, cin, ih, iw, taps, bias, acc)
}

// ---------------------------------------------------------------------------
// float path

struct FloatLayer<T> {
    cin: usize,
    cout: usize,
    kernels: Vec<T>,
    biases: Vec<T>,
}

/// Runs the float network and returns the clipped output (not rounded).
/// Everything is carried in sample units: the network is defined on samples
/// divided by the peak sample value, and since it is piecewise linear this
/// only scales the biases and the clip ceiling.
///
/// `observe` sees every activation after its nonlinearity; for the
/// pre-concatenation layer it sees only the 14 computed channels.
pub(crate) fn run_float<T: Real>(
    w: &Weights,
    req: &BlendRequest,
    observe: &mut dyn FnMut(usize, &[T]),
) -> Result<Tensor<T>> {
    let cfg = w.config();
    let (out_h, out_w) = req.output_size(cfg)?;
    let scale = max_sample(req.bit_depth) as f64;
    let layers: Vec<FloatLayer<T>> = w
        .layers()
        .iter()
        .map(|l| FloatLayer {
            cin: l.in_channels,
            cout: l.out_channels,
            kernels: l.kernels.iter().map(|&v| T::from_f64(v as f64)).collect(),
            biases: l.biases.iter().map(|&v| T::from_f64(v as f64 * scale)).collect(),
        })
        .collect();
    let (ih, iw) = (req.height(), req.width());
    let mut input = Vec::with_capacity(2 * ih * iw);
    input.extend(req.pred0.as_slice().iter().map(|&v| T::from_f64(v as f64)));
    input.extend(req.pred1.as_slice().iter().map(|&v| T::from_f64(v as f64)));

    let buf_len = cfg.activation_buffer_len(out_h, out_w);
    let mut a = vec![T::default(); buf_len];
    let mut b = vec![T::default(); buf_len];
    let mut acc = vec![T::default(); (ih - 2) * iw];
    let mut out = vec![T::default(); out_h * out_w];

    let zero = T::default();
    let ceil = T::from_f64(scale);
    let last = layers.len() - 1;
    let pre = cfg.preconcat_layer();
    let margin = cfg.skip_margin();
    let (mut h, mut wd) = (ih, iw);
    for (k, layer) in layers.iter().enumerate() {
        let (oh, ow) = (h - 2, wd - 2);
        let area = oh * ow;
        {
            let src: &[T] = if k == 0 { &input } else { &b };
            let dst: &mut [T] = if k == last { &mut out } else { &mut a };
            let offset = if k == pre { INPUT_CHANNELS * area } else { 0 };
            for o in 0..layer.cout {
                let taps = &layer.kernels[o * layer.cin * 9..(o + 1) * layer.cin * 9];
                accumulate(src, layer.cin, h, wd, taps, layer.biases[o], &mut acc);
                let plane = &mut dst[offset + o * area..offset + (o + 1) * area];
                for (drow, arow) in strided_rows(&acc, plane, wd, ow) {
                    for (d, &v) in drow.iter_mut().zip(arow) {
                        *d = if v < zero {
                            zero
                        } else if k == last && v > ceil {
                            ceil
                        } else {
                            v
                        };
                    }
                }
            }
            if k < last {
                observe(k, &dst[offset..offset + layer.cout * area]);
            }
        }
        if k == pre {
            for ch in 0..INPUT_CHANNELS {
                let plane = &input[ch * ih * iw..(ch + 1) * ih * iw];
                for y in 0..oh {
                    let row = &plane[(y + margin) * iw + margin..(y + margin) * iw + margin + ow];
                    a[ch * area + y * ow..ch * area + (y + 1) * ow].copy_from_slice(row);
                }
            }
        }
        std::mem::swap(&mut a, &mut b);
        h = oh;
        wd = ow;
    }
    Tensor::new(1, out_h, out_w, out)
}

/// Float forward pass in real arithmetic of type `T`; the result is the
/// clipped output rescaled to sample units, before rounding.
pub fn forward_float_real<T: Real>(w: &Weights, req: &BlendRequest) -> Result<Tensor<T>> {
    run_float(w, req, &mut |_, _| {})
}

/// Reference float output (`f64`) in sample units, before rounding.
pub fn forward_float_unrounded(w: &Weights, req: &BlendRequest) -> Result<Tensor<f64>> {
    forward_float_real::<f64>(w, req)
}

/// Float forward pass rounded to the integer sample domain.
pub fn forward_float(w: &Weights, req: &BlendRequest) -> Result<Tensor<i16>> {
    Ok(forward_float_unrounded(w, req)?.map(|v| v.round() as i16))
}

// ---------------------------------------------------------------------------
// integer path

/// Per-call private buffers of the integer engine.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    input: Vec<i16>,
    ping: Vec<i16>,
    pong: Vec<i16>,
    acc: Vec<i32>,
}

impl Scratch {
    pub fn new(cfg: &NetworkConfig, out_h: usize, out_w: usize) -> Self {
        let mut s = Self::default();
        s.reserve(cfg, out_h, out_w);
        s
    }

    fn reserve(&mut self, cfg: &NetworkConfig, out_h: usize, out_w: usize) {
        let b = 2 * cfg.border();
        let len = cfg.activation_buffer_len(out_h, out_w);
        let acc = (out_h + b - 2) * (out_w + b);
        let input = INPUT_CHANNELS * (out_h + b) * (out_w + b);
        for (v, n) in [(&mut self.ping, len), (&mut self.pong, len), (&mut self.input, input)] {
            if v.len() < n {
                v.resize(n, 0);
            }
        }
        if self.acc.len() < acc {
            self.acc.resize(acc, 0);
        }
    }

    /// Bytes held by the two activation buffers.
    pub fn activation_bytes(&self) -> usize {
        (self.ping.len() + self.pong.len()) * std::mem::size_of::<i16>()
    }
}

#[inline]
fn int_layer(
    layer: &QuantLayer,
    activation: Activation,
    clip_max: i16,
    src: &[i16],
    ih: usize,
    iw: usize,
    acc: &mut [i32],
    dst: &mut [i16],
) {
    let (oh, ow) = (ih - 2, iw - 2);
    let area = oh * ow;
    let shift = layer.activation_shift as u32;
    for o in 0..layer.out_channels {
        let taps = &layer.kernels[o * layer.in_channels * 9..(o + 1) * layer.in_channels * 9];
        accumulate_int(src, layer.in_channels, ih, iw, taps, layer.biases[o], acc);
        let plane = &mut dst[o * area..(o + 1) * area];
        match activation {
            Activation::Relu => {
                for (drow, arow) in strided_rows(acc, plane, iw, ow) {
                    for (d, &v) in drow.iter_mut().zip(arow) {
                        *d = integer_requantize(v, shift).max(0);
                    }
                }
            }
            Activation::Clip => {
                for (drow, arow) in strided_rows(acc, plane, iw, ow) {
                    for (d, &v) in drow.iter_mut().zip(arow) {
                        *d = integer_requantize(v, shift).clamp(0, clip_max);
                    }
                }
            }
        }
    }
}

/// Shape of an intermediate integer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Runs layers `range` of the integer network on `src` (the input of layer
/// `range.start`, with shape `dims`) and stores the output of the last layer
/// in `out`. When the range covers the pre-concatenation layer the returned
/// activation includes the two shifted skip channels.
pub(crate) fn run_int(
    qw: &QuantizedWeights,
    range: Range<usize>,
    src: &[i16],
    dims: Dims,
    req: &BlendRequest,
    scratch: &mut Scratch,
    out: &mut Vec<i16>,
) -> Dims {
    let cfg = qw.config();
    let pre = cfg.preconcat_layer();
    let margin = cfg.skip_margin();
    let clip_max = max_sample(qw.bit_depth());
    let skip_shift = qw.skip_shift();
    let (rh, rw) = (req.height(), req.width());

    let Scratch { ping, pong, acc, .. } = scratch;
    let acc_len = (dims.height - 2) * dims.width;
    if acc.len() < acc_len {
        acc.resize(acc_len, 0);
    }
    let mut a: &mut Vec<i16> = ping;
    let mut b: &mut Vec<i16> = pong;
    let (mut h, mut w) = (dims.height, dims.width);
    let mut channels = dims.channels;
    let end = range.end;
    for k in range.clone() {
        let spec = cfg.layers()[k];
        let layer = &qw.layers()[k];
        let (oh, ow) = (h - 2, w - 2);
        let area = oh * ow;
        let out_channels = if k == pre { spec.out_channels + INPUT_CHANNELS } else { spec.out_channels };
        let src_slice: &[i16] = if k == range.start { src } else { &b[..channels * h * w] };
        let dst: &mut Vec<i16> = if k + 1 == end { &mut *out } else { &mut *a };
        if dst.len() < out_channels * area {
            dst.resize(out_channels * area, 0);
        }
        let offset = if k == pre { INPUT_CHANNELS * area } else { 0 };
        int_layer(layer, spec.activation, clip_max, src_slice, h, w, acc, &mut dst[offset..]);
        if k == pre {
            for (ch, pred) in [&req.pred0, &req.pred1].into_iter().enumerate() {
                let plane = pred.as_slice();
                for y in 0..oh {
                    let row = &plane[(y + margin) * rw + margin..(y + margin) * rw + margin + ow];
                    for (d, &s) in dst[ch * area + y * ow..ch * area + (y + 1) * ow].iter_mut().zip(row) {
                        *d = s << skip_shift;
                    }
                }
            }
        }
        debug_assert_eq!(rh - 2 * (k + 1), oh);
        if k + 1 < end {
            std::mem::swap(&mut a, &mut b);
        }
        h = oh;
        w = ow;
        channels = out_channels;
    }
    out.truncate(channels * h * w);
    Dims { channels, height: h, width: w }
}

/// Stack both predictions into `dst` as a two-channel activation.
pub(crate) fn stack_inputs(req: &BlendRequest, dst: &mut Vec<i16>) -> Dims {
    dst.clear();
    dst.extend_from_slice(req.pred0.as_slice());
    dst.extend_from_slice(req.pred1.as_slice());
    Dims { channels: INPUT_CHANNELS, height: req.height(), width: req.width() }
}

fn check_int_request(qw: &QuantizedWeights, req: &BlendRequest) -> Result<(usize, usize)> {
    if req.bit_depth != qw.bit_depth() {
        return Err(Error::Argument(format!(
            "request bit depth {} does not match quantized network ({})",
            req.bit_depth,
            qw.bit_depth()
        )));
    }
    req.output_size(qw.config())
}

pub fn forward_int16(qw: &QuantizedWeights, req: &BlendRequest) -> Result<Tensor<i16>> {
    let (oh, ow) = check_int_request(qw, req)?;
    let mut scratch = Scratch::new(qw.config(), oh, ow);
    forward_int16_with(qw, req, &mut scratch)
}

pub fn forward_int16_with(
    qw: &QuantizedWeights,
    req: &BlendRequest,
    scratch: &mut Scratch,
) -> Result<Tensor<i16>> {
    let mut out = Vec::new();
    let (oh, ow) = forward_int16_into(qw, req, scratch, &mut out)?;
    Tensor::new(1, oh, ow, out)
}

/// Integer forward pass writing the output block into `out`, reusing the
/// buffers in `scratch`.
pub fn forward_int16_into(
    qw: &QuantizedWeights,
    req: &BlendRequest,
    scratch: &mut Scratch,
    out: &mut Vec<i16>,
) -> Result<(usize, usize)> {
    let (oh, ow) = check_int_request(qw, req)?;
    scratch.reserve(qw.config(), oh, ow);
    let mut input = std::mem::take(&mut scratch.input);
    let dims = stack_inputs(req, &mut input);
    let n = qw.config().n_layers();
    run_int(qw, 0..n, &input, dims, req, scratch, out);
    scratch.input = input;
    Ok((oh, ow))
}

/// Result of replaying the integer network with 64-bit accumulators.
#[derive(Debug, Clone)]
pub struct AccumulatorTrace {
    /// Largest accumulator magnitude seen in each layer.
    pub peaks: Vec<i64>,
    pub output: Tensor<i16>,
}

impl AccumulatorTrace {
    pub fn fits_int32(&self) -> bool {
        self.peaks.iter().all(|&p| p <= i32::MAX as i64)
    }
}

/// Replays the integer dataflow through the tensor primitives with 64-bit
/// accumulators, recording the largest accumulator per layer. Errors if any
/// accumulator leaves the int32 range.
pub fn trace_accumulators(qw: &QuantizedWeights, req: &BlendRequest) -> Result<AccumulatorTrace> {
    check_int_request(qw, req)?;
    let cfg = qw.config();
    let clip_max = max_sample(qw.bit_depth()) as i32;
    let skip_shift = qw.skip_shift();
    let skip = tensor::concat_channels(&req.pred0, &req.pred1)?;
    let mut act: Tensor<i32> = skip.map(|v| v as i32);
    let mut peaks = Vec::with_capacity(cfg.n_layers());
    for (k, (spec, layer)) in cfg.layers().iter().zip(qw.layers()).enumerate() {
        let kernels: Vec<i32> = layer.kernels.iter().map(|&v| v as i32).collect();
        let biases: Vec<i64> = layer.biases.iter().map(|&v| v as i64).collect();
        let acc = tensor::conv3x3_valid(&act, &kernels, &biases)?;
        let peak = acc.as_slice().iter().map(|v| v.abs()).max().unwrap_or(0);
        peaks.push(peak);
        if peak > i32::MAX as i64 {
            return Err(Error::Bookkeeping(format!(
                "layer {k}: accumulator magnitude {peak} exceeds int32"
            )));
        }
        let shift = layer.activation_shift as u32;
        let requant = acc.map(|v| integer_requantize(v as i32, shift) as i32);
        act = match spec.activation {
            Activation::Relu => tensor::relu(&requant),
            Activation::Clip => tensor::clip(&requant, 0, clip_max)?,
        };
        if k == cfg.preconcat_layer() {
            let cropped = tensor::center_crop(&skip, cfg.skip_margin())?.map(|v| (v as i32) << skip_shift);
            act = tensor::concat_channels(&cropped, &act)?;
        }
    }
    Ok(AccumulatorTrace { peaks, output: act.map(|v| v as i16) })
}

// ---------------------------------------------------------------------------
// benchmark

/// An integer network bound to private scratch buffers for one block size.
pub struct Int16Engine {
    weights: QuantizedWeights,
    scratch: Scratch,
    out: Vec<i16>,
}

impl Int16Engine {
    pub fn new(qw: &QuantizedWeights, out_h: usize, out_w: usize) -> Self {
        Self {
            weights: qw.clone(),
            scratch: Scratch::new(qw.config(), out_h, out_w),
            out: Vec::with_capacity(out_h * out_w),
        }
    }

    pub fn run(&mut self, req: &BlendRequest) -> Result<&[i16]> {
        forward_int16_into(&self.weights, req, &mut self.scratch, &mut self.out)?;
        Ok(&self.out)
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub patch_size: usize,
    pub iterations: usize,
    /// Time to the first result from flushed caches: parsing the serialized
    /// network, engine setup and one inference.
    pub cold_start: Duration,
    /// Median of the calls after the first; `None` with a single iteration.
    pub warm_start: Option<Duration>,
}

/// Published single-thread reference timings for the int16 engine on a 32x32
/// patch, in milliseconds (cold, warm).
pub const REFERENCE_INT16_MS: (f64, f64) = (1.3, 1.0);

impl fmt::Display for BenchmarkReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        writeln!(f, "patch {0}x{0}, {1} iterations, single thread", self.patch_size, self.iterations)?;
        writeln!(f, "{:<24}{:>12}{:>12}", "inference", "cold (ms)", "warm (ms)")?;
        let warm = self.warm_start.map_or("n/a".to_string(), |d| format!("{:.3}", ms(d)));
        writeln!(f, "{:<24}{:>12.3}{:>12}", "this build (int16)", ms(self.cold_start), warm)?;
        write!(
            f,
            "{:<24}{:>12.1}{:>12.1}",
            "reference (int16)", REFERENCE_INT16_MS.0, REFERENCE_INT16_MS.1
        )
    }
}

/// Streamed through before the cold start to flush the data caches.
const EVICTION_BYTES: usize = 32 << 20;

/// Times the int16 engine on one request. The cold start is the first call:
/// parsing the serialized network, engine setup and one inference, after the
/// data caches were flushed by streaming through a large buffer. It is most
/// meaningful as the first inference of a process. The warm figure is the
/// median of the `iterations - 1` calls that follow on the same engine.
pub fn benchmark(qw: &QuantizedWeights, req: &BlendRequest, iterations: usize) -> Result<BenchmarkReport> {
    if iterations == 0 {
        return Err(Error::Argument("benchmark needs at least one iteration".into()));
    }
    let (oh, ow) = check_int_request(qw, req)?;
    let image = qw.to_bytes();
    let mut eviction = vec![0u8; EVICTION_BYTES];
    for line in eviction.chunks_mut(64) {
        line[0] = 1;
    }
    std::hint::black_box(&eviction);
    drop(eviction);

    let start = Instant::now();
    let loaded = QuantizedWeights::from_bytes(std::hint::black_box(&image))?;
    let mut engine = Int16Engine::new(&loaded, oh, ow);
    std::hint::black_box(engine.run(req)?);
    let cold_start = start.elapsed();

    let mut warm: Vec<Duration> = (1..iterations)
        .map(|_| {
            let start = Instant::now();
            engine.run(std::hint::black_box(req)).map(|o| {
                std::hint::black_box(o);
                start.elapsed()
            })
        })
        .collect::<Result<_>>()?;
    warm.sort();
    let warm_start = (!warm.is_empty()).then(|| warm[warm.len() / 2]);
    Ok(BenchmarkReport { patch_size: oh.max(ow), iterations, cold_start, warm_start })
}
