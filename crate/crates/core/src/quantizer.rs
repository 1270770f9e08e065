//! Direct post-training fixed-point quantization.
//!
//! Weights are stored as `round(w * 2^weight_shift)` in int16, products are
//! summed in int32, and every layer output is brought back to int16 by a
//! rounding right shift (`activation_shift`). All scales are powers of two.
//!
//! Scale bookkeeping is expressed in fractional bits relative to the sample
//! domain: an int16 activation `a` with `f` fractional bits stands for the
//! normalized real value `a / ((2^bit_depth - 1) * 2^f)`. Network inputs have
//! `f = 0`, so the first layer consumes raw samples. A layer with input
//! fraction `f_in` accumulates at `f_in + weight_shift` and outputs
//! `f_out = f_in + weight_shift - activation_shift`. The cropped inputs are
//! shifted left by the pre-concatenation layer's `f_out` so that both halves
//! of the concatenation share one scale, and the final layer must land on
//! `f_out = 0` (plain samples).

use std::ops::RangeInclusive;

use crate::codec::Reader;
use crate::dataset::PatchRecord;
use crate::engine::{self, max_sample, BlendRequest, Dims, Scratch};
use crate::error::{Error, FormatError, Result};
use crate::model::{LayerWeights, NetworkConfig, Weights, MIN_LAYERS};

pub const QUANT_MAGIC: &[u8; 4] = b"NNBQ";
pub const QUANT_VERSION: u16 = 1;

/// Upper end of the weight-shift search; reached only by near-zero layers.
pub const MAX_WEIGHT_SHIFT: u32 = 24;
/// Range of fractional bits an intermediate activation may carry.
pub const FRAC_BITS: RangeInclusive<i32> = -8..=16;
/// Candidate window around the range-derived starting point of each layer.
pub const WINDOW_BELOW: i32 = 4;
pub const WINDOW_ABOVE: i32 = 2;
/// Joint search spaces up to this many tuples are searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 512;

const MAX_SHIFT: i32 = 48;

/// `(acc + 2^(shift-1)) >> shift`, saturated to int16. Shift 0 only
/// saturates.
#[inline]
pub fn integer_requantize(acc: i32, shift: u32) -> i16 {
    let v = if shift == 0 {
        acc as i64
    } else {
        (acc as i64 + (1i64 << (shift - 1))) >> shift
    };
    v.clamp(i16::MIN as i64, i16::MAX as i64) as i16
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight_shift: u8,
    pub activation_shift: u8,
    /// `[out][in][ky][kx]`
    pub kernels: Vec<i16>,
    /// At the accumulator scale of the layer.
    pub biases: Vec<i32>,
}

/// Integer network with derived, validated scale bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedWeights {
    cfg: NetworkConfig,
    bit_depth: u8,
    layers: Vec<QuantLayer>,
    /// Fractional bits of each layer's output.
    output_frac: Vec<i32>,
}

impl QuantizedWeights {
    pub fn new(cfg: NetworkConfig, bit_depth: u8, layers: Vec<QuantLayer>) -> Result<Self> {
        if !(1..=engine::MAX_BIT_DEPTH).contains(&bit_depth) {
            return Err(Error::Argument(format!("bit depth {bit_depth} unsupported")));
        }
        if layers.len() != cfg.n_layers() {
            return Err(Error::Shape(format!(
                "{} quantized layers for a {}-layer network",
                layers.len(),
                cfg.n_layers()
            )));
        }
        let mut output_frac = Vec::with_capacity(layers.len());
        let mut frac_in = 0i32;
        for (k, (layer, spec)) in layers.iter().zip(cfg.layers()).enumerate() {
            if layer.in_channels != spec.in_channels
                || layer.out_channels != spec.out_channels
                || layer.kernels.len() != spec.in_channels * spec.out_channels * 9
                || layer.biases.len() != spec.out_channels
            {
                return Err(Error::Shape(format!("layer {k}: dimensions do not match the network")));
            }
            if layer.weight_shift as i32 > MAX_SHIFT || layer.activation_shift as i32 > MAX_SHIFT {
                return Err(Error::Bookkeeping(format!("layer {k}: shift above {MAX_SHIFT}")));
            }
            let max_in = max_input(k, bit_depth);
            for o in 0..layer.out_channels {
                let taps = &layer.kernels[o * layer.in_channels * 9..(o + 1) * layer.in_channels * 9];
                let bound = accumulator_bound(taps, layer.biases[o] as i64, max_in);
                if bound > i32::MAX as i64 {
                    return Err(Error::Bookkeeping(format!(
                        "layer {k}, output {o}: worst-case accumulator {bound} exceeds int32"
                    )));
                }
            }
            let f_out = frac_in + layer.weight_shift as i32 - layer.activation_shift as i32;
            output_frac.push(f_out);
            frac_in = f_out;
        }
        let skip = output_frac[cfg.preconcat_layer()];
        let max_skip = skip_shift_limit(bit_depth);
        if !(0..=max_skip).contains(&skip) {
            return Err(Error::Bookkeeping(format!(
                "pre-concatenation activation has {skip} fractional bits; inputs can only be aligned to 0..={max_skip}"
            )));
        }
        if *output_frac.last().expect("layers") != 0 {
            return Err(Error::Bookkeeping(format!(
                "final layer outputs {} fractional bits instead of 0",
                output_frac.last().unwrap()
            )));
        }
        Ok(Self { cfg, bit_depth, layers, output_frac })
    }

    /// All-zero integer network with shifts that keep the scale chain valid.
    pub fn zeros(cfg: &NetworkConfig, bit_depth: u8) -> Self {
        let layers = cfg
            .layers()
            .iter()
            .map(|s| QuantLayer {
                in_channels: s.in_channels,
                out_channels: s.out_channels,
                weight_shift: 0,
                activation_shift: 0,
                kernels: vec![0; s.in_channels * s.out_channels * 9],
                biases: vec![0; s.out_channels],
            })
            .collect();
        Self::new(cfg.clone(), bit_depth, layers).expect("zero network is consistent")
    }

    /// Quantize `w` so that each non-final layer outputs `output_frac[k]`
    /// fractional bits (one entry per layer except the last). Each weight
    /// shift is the largest feasible one for its input scale.
    pub fn from_fractional_bits(w: &Weights, bit_depth: u8, output_frac: &[i32]) -> Result<Self> {
        let cfg = w.config();
        let n = cfg.n_layers();
        if output_frac.len() != n - 1 {
            return Err(Error::Argument(format!(
                "{} fractional-bit entries for {} quantized layers",
                output_frac.len(),
                n - 1
            )));
        }
        let mut layers = Vec::with_capacity(n);
        let mut frac_in = 0;
        for (k, lw) in w.layers().iter().enumerate() {
            let f_out = if k + 1 == n { 0 } else { output_frac[k] };
            let q = quantize_layer(lw, k, frac_in, bit_depth)?;
            let shift = frac_in + q.weight_shift as i32 - f_out;
            if !(0..=MAX_SHIFT).contains(&shift) {
                return Err(Error::Bookkeeping(format!(
                    "layer {k}: activation shift {shift} needed to reach {f_out} fractional bits"
                )));
            }
            layers.push(QuantLayer {
                in_channels: lw.in_channels,
                out_channels: lw.out_channels,
                weight_shift: q.weight_shift as u8,
                activation_shift: shift as u8,
                kernels: q.kernels,
                biases: q.biases,
            });
            frac_in = f_out;
        }
        Self::new(cfg.clone(), bit_depth, layers)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn layers(&self) -> &[QuantLayer] {
        &self.layers
    }

    /// Fractional bits of each layer's output.
    pub fn output_frac(&self) -> &[i32] {
        &self.output_frac
    }

    /// Fractional bits of each layer's input.
    pub fn input_frac(&self) -> Vec<i32> {
        std::iter::once(0).chain(self.output_frac[..self.output_frac.len() - 1].iter().copied()).collect()
    }

    /// Left shift applied to the cropped inputs before concatenation.
    pub fn skip_shift(&self) -> u32 {
        self.output_frac[self.cfg.preconcat_layer()] as u32
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(QUANT_MAGIC);
        out.extend_from_slice(&QUANT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.cfg.n_layers() as u16).to_le_bytes());
        out.extend_from_slice(&(self.bit_depth as u16).to_le_bytes());
        for layer in &self.layers {
            out.push(layer.weight_shift);
            out.push(layer.activation_shift);
            layer.kernels.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            layer.biases.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(QUANT_MAGIC)?;
        r.version(QUANT_VERSION)?;
        let n = r.u16().ok_or_else(|| FormatError::Truncated { section: "layer count".into() })?;
        let bit_depth = r.u16().ok_or_else(|| FormatError::Truncated { section: "bit depth".into() })?;
        let cfg = NetworkConfig::new(n as usize)
            .map_err(|_| FormatError::InvalidValue(format!("layer count {n} below {MIN_LAYERS}")))?;
        if bit_depth == 0 || bit_depth > engine::MAX_BIT_DEPTH as u16 {
            return Err(FormatError::InvalidValue(format!("bit depth {bit_depth}")).into());
        }
        let mut layers = Vec::with_capacity(cfg.n_layers());
        for (k, spec) in cfg.layers().iter().enumerate() {
            let weight_shift = r.u8().ok_or(FormatError::TruncatedLayer { layer: k, part: "shifts" })?;
            let activation_shift = r.u8().ok_or(FormatError::TruncatedLayer { layer: k, part: "shifts" })?;
            let kernels = r
                .i16s(spec.in_channels * spec.out_channels * 9)
                .ok_or(FormatError::TruncatedLayer { layer: k, part: "kernels" })?;
            let biases = r
                .i32s(spec.out_channels)
                .ok_or(FormatError::TruncatedLayer { layer: k, part: "biases" })?;
            layers.push(QuantLayer {
                in_channels: spec.in_channels,
                out_channels: spec.out_channels,
                weight_shift,
                activation_shift,
                kernels,
                biases,
            });
        }
        r.finish()?;
        Self::new(cfg, bit_depth as u8, layers)
    }
}

fn skip_shift_limit(bit_depth: u8) -> i32 {
    15 - bit_depth as i32
}

/// Largest magnitude an input sample of layer `k` can take.
fn max_input(k: usize, bit_depth: u8) -> i64 {
    if k == 0 {
        max_sample(bit_depth) as i64
    } else {
        i16::MAX as i64
    }
}

fn accumulator_bound(taps: &[i16], bias: i64, max_in: i64) -> i64 {
    taps.iter().map(|&t| (t as i64).abs()).sum::<i64>() * max_in + bias.abs()
}

/// Integer parameters of one layer at its chosen weight shift.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerQuantization {
    pub weight_shift: u32,
    pub kernels: Vec<i16>,
    pub biases: Vec<i32>,
}

fn scaled_round(v: f32, exp: i32) -> f64 {
    (v as f64 * 2f64.powi(exp)).round()
}

fn try_shift(lw: &LayerWeights, layer: usize, frac_in: i32, bit_depth: u8, shift: u32) -> Option<LayerQuantization> {
    let kernels = lw
        .kernels
        .iter()
        .map(|&w| {
            let q = scaled_round(w, shift as i32);
            (q.abs() <= i16::MAX as f64).then_some(q as i16)
        })
        .collect::<Option<Vec<i16>>>()?;
    let scale = max_sample(bit_depth) as f64 * 2f64.powi(frac_in + shift as i32);
    let biases = lw
        .biases
        .iter()
        .map(|&b| {
            let q = (b as f64 * scale).round();
            (q.abs() <= i32::MAX as f64).then_some(q as i32)
        })
        .collect::<Option<Vec<i32>>>()?;
    let max_in = max_input(layer, bit_depth);
    let n = lw.in_channels * 9;
    let fits = (0..lw.out_channels)
        .all(|o| accumulator_bound(&kernels[o * n..(o + 1) * n], biases[o] as i64, max_in) <= i32::MAX as i64);
    fits.then_some(LayerQuantization { weight_shift: shift, kernels, biases })
}

/// Whether `shift` keeps layer `layer` (input carrying `frac_in` fractional
/// bits) inside int16 weights and worst-case int32 accumulation.
pub fn weight_shift_feasible(lw: &LayerWeights, layer: usize, frac_in: i32, bit_depth: u8, shift: u32) -> bool {
    try_shift(lw, layer, frac_in, bit_depth, shift).is_some()
}

/// Quantize one layer at the largest feasible weight shift.
pub fn quantize_layer(lw: &LayerWeights, layer: usize, frac_in: i32, bit_depth: u8) -> Result<LayerQuantization> {
    (0..=MAX_WEIGHT_SHIFT)
        .rev()
        .find_map(|s| try_shift(lw, layer, frac_in, bit_depth, s))
        .ok_or_else(|| {
            let peak = lw.kernels.iter().fold(0f32, |m, w| m.max(w.abs()));
            let reason = if peak.round() > i16::MAX as f32 {
                format!("weight magnitude {peak} exceeds int16 at shift 0")
            } else {
                "worst-case accumulator exceeds int32 at shift 0".to_string()
            };
            Error::Infeasible { layer, reason }
        })
}

// ---------------------------------------------------------------------------
// calibration

#[derive(Debug, Clone)]
pub struct CalibrationSet {
    requests: Vec<BlendRequest>,
}

impl CalibrationSet {
    pub fn new(requests: Vec<BlendRequest>) -> Result<Self> {
        let first = requests
            .first()
            .ok_or_else(|| Error::Argument("calibration set is empty".into()))?;
        if requests.iter().any(|r| r.bit_depth != first.bit_depth) {
            return Err(Error::Argument("calibration patches mix bit depths".into()));
        }
        Ok(Self { requests })
    }

    pub fn from_records(records: &[PatchRecord]) -> Result<Self> {
        Self::new(records.iter().map(PatchRecord::request).collect::<Result<_>>()?)
    }

    pub fn requests(&self) -> &[BlendRequest] {
        &self.requests
    }

    pub fn bit_depth(&self) -> u8 {
        self.requests[0].bit_depth
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }
}

/// Record of one calibration run.
#[derive(Debug, Clone)]
pub struct SearchTrace {
    /// Candidate fractional bits per non-final layer.
    pub windows: Vec<RangeInclusive<i32>>,
    /// Starting point derived from the float activation ranges.
    pub initial: Vec<i32>,
    /// Every evaluated tuple with its mean squared output error.
    pub visited: Vec<(Vec<i32>, f64)>,
    pub chosen: Vec<i32>,
    pub error: f64,
}

/// Float reference outputs and activation peaks over a calibration set.
struct FloatReference {
    outputs: Vec<Vec<f64>>,
    peaks: Vec<f64>,
}

fn float_reference(w: &Weights, calib: &CalibrationSet) -> Result<FloatReference> {
    let n = w.config().n_layers();
    let mut peaks = vec![0f64; n - 1];
    let mut outputs = Vec::with_capacity(calib.len());
    for req in calib.requests() {
        let out = engine::run_float::<f64>(w, req, &mut |k, act| {
            let m = act.iter().fold(0f64, |m, v| m.max(v.abs()));
            peaks[k] = peaks[k].max(m);
        })?;
        outputs.push(out.into_vec());
    }
    Ok(FloatReference { outputs, peaks })
}

/// Candidate windows and the starting tuple derived from activation peaks:
/// the largest fractional bit count that keeps the observed peak in int16.
fn initial_fracs(cfg: &NetworkConfig, bit_depth: u8, peaks: &[f64]) -> (Vec<i32>, Vec<RangeInclusive<i32>>) {
    let pre = cfg.preconcat_layer();
    let mut init = Vec::with_capacity(peaks.len());
    let mut windows = Vec::with_capacity(peaks.len());
    for (k, &peak) in peaks.iter().enumerate() {
        let (lo, hi) = if k == pre {
            (0.max(*FRAC_BITS.start()), skip_shift_limit(bit_depth).min(*FRAC_BITS.end()))
        } else {
            (*FRAC_BITS.start(), *FRAC_BITS.end())
        };
        let f = if peak > 0.0 {
            (i16::MAX as f64 / peak).log2().floor() as i32
        } else {
            hi
        };
        let f = f.clamp(lo, hi);
        init.push(f);
        windows.push((f - WINDOW_BELOW).max(lo)..=(f + WINDOW_ABOVE).min(hi));
    }
    (init, windows)
}

struct Evaluator<'a> {
    w: &'a Weights,
    calib: &'a CalibrationSet,
    reference: &'a FloatReference,
    scratch: Scratch,
    out: Vec<i16>,
    visited: Vec<(Vec<i32>, f64)>,
}

impl Evaluator<'_> {
    /// Integer activations entering layer `start` for every calibration
    /// patch, under `fracs`.
    fn prefix(&mut self, qw: &QuantizedWeights, start: usize) -> Vec<(Vec<i16>, Dims)> {
        self.calib
            .requests()
            .iter()
            .map(|req| {
                let mut input = Vec::new();
                let dims = engine::stack_inputs(req, &mut input);
                if start == 0 {
                    return (input, dims);
                }
                let mut act = Vec::new();
                let dims = engine::run_int(qw, 0..start, &input, dims, req, &mut self.scratch, &mut act);
                (act, dims)
            })
            .collect()
    }

    /// Mean squared error against the float outputs, or `None` when the tuple
    /// admits no consistent integer network.
    fn error(&mut self, fracs: &[i32], start: usize, cached: &[(Vec<i16>, Dims)]) -> Option<f64> {
        let qw = QuantizedWeights::from_fractional_bits(self.w, self.calib.bit_depth(), fracs).ok()?;
        let n = qw.config().n_layers();
        let mut sum = 0f64;
        let mut count = 0usize;
        for ((req, (act, dims)), reference) in
            self.calib.requests().iter().zip(cached).zip(&self.reference.outputs)
        {
            engine::run_int(&qw, start..n, act, *dims, req, &mut self.scratch, &mut self.out);
            for (&q, &f) in self.out.iter().zip(reference) {
                let d = q as f64 - f;
                sum += d * d;
            }
            count += reference.len();
        }
        let mse = sum / count as f64;
        self.visited.push((fracs.to_vec(), mse));
        Some(mse)
    }
}

/// Lower any layer whose requested fraction would need a negative
/// activation shift, walking input to output.
fn make_feasible(w: &Weights, bit_depth: u8, fracs: &mut [i32]) -> Result<()> {
    let mut frac_in = 0;
    for (k, f) in fracs.iter_mut().enumerate() {
        let q = quantize_layer(&w.layers()[k], k, frac_in, bit_depth)?;
        *f = (*f).min(frac_in + q.weight_shift as i32);
        frac_in = *f;
    }
    QuantizedWeights::from_fractional_bits(w, bit_depth, fracs).map(|_| ())
}

/// Greedy layer-by-layer choice, input to output, then one refinement sweep
/// in the same order. Returns the error of the final tuple.
fn coordinate_search(
    eval: &mut Evaluator,
    bit_depth: u8,
    windows: &[RangeInclusive<i32>],
    fracs: &mut [i32],
) -> Result<f64> {
    let mut best_err = f64::INFINITY;
    for _pass in 0..2 {
        for k in 0..fracs.len() {
            let qw = QuantizedWeights::from_fractional_bits(eval.w, bit_depth, fracs)?;
            let cached = eval.prefix(&qw, k);
            let mut best = fracs[k];
            best_err = f64::INFINITY;
            let mut candidates: Vec<i32> = windows[k].clone().collect();
            if !windows[k].contains(&fracs[k]) {
                candidates.push(fracs[k]);
            }
            candidates.sort_unstable();
            let mut trial = fracs.to_vec();
            for &cand in candidates.iter().rev() {
                trial[k] = cand;
                if let Some(err) = eval.error(&trial, k, &cached) {
                    if err < best_err {
                        best_err = err;
                        best = cand;
                    }
                }
            }
            fracs[k] = best;
        }
    }
    Ok(best_err)
}

/// Every tuple in the windows, visited in descending lexicographic order so
/// that ties keep the larger fractions of earlier layers. `fracs` keeps its
/// value when no tuple in the windows is feasible.
fn exhaustive(eval: &mut Evaluator, bit_depth: u8, windows: &[RangeInclusive<i32>], fracs: &mut [i32]) -> f64 {
    let last = windows.len() - 1;
    let tails: Vec<i32> = windows[last].clone().rev().collect();
    let mut best_err = f64::INFINITY;
    let mut best: Option<Vec<i32>> = None;
    let mut tuple: Vec<i32> = windows.iter().map(|r| *r.end()).collect();
    loop {
        let feasible = tails.iter().find_map(|&t| {
            tuple[last] = t;
            QuantizedWeights::from_fractional_bits(eval.w, bit_depth, &tuple).ok()
        });
        if let Some(qw) = feasible {
            let cached = eval.prefix(&qw, last);
            for &t in &tails {
                tuple[last] = t;
                if let Some(err) = eval.error(&tuple, last, &cached) {
                    if err < best_err {
                        best_err = err;
                        best = Some(tuple.clone());
                    }
                }
            }
        }
        // step the head (all but the last layer) downward like an odometer
        let mut k = last;
        loop {
            if k == 0 {
                if let Some(b) = best {
                    fracs.copy_from_slice(&b);
                } else {
                    let inputs = eval_inputs(eval);
                    best_err = eval.error(fracs, 0, &inputs).unwrap_or(f64::INFINITY);
                }
                return best_err;
            }
            k -= 1;
            if tuple[k] > *windows[k].start() {
                tuple[k] -= 1;
                for j in k + 1..last {
                    tuple[j] = *windows[j].end();
                }
                break;
            }
        }
    }
}

fn eval_inputs(eval: &mut Evaluator) -> Vec<(Vec<i16>, Dims)> {
    eval.calib
        .requests()
        .iter()
        .map(|req| {
            let mut input = Vec::new();
            let dims = engine::stack_inputs(req, &mut input);
            (input, dims)
        })
        .collect()
}

/// Direct quantization with a full record of the shift search.
///
/// Weight shifts are always the largest feasible ones. The fractional bits
/// of each intermediate activation start from the float activation range and
/// are searched within a window around that start to minimize the mean
/// squared error between the integer and float outputs over the calibration
/// set. When the joint window holds at most [`EXHAUSTIVE_LIMIT`] tuples every
/// tuple is tried; otherwise the fractions are chosen layer by layer, input to
/// output, followed by one refinement sweep in the same order. Ties prefer
/// larger fractions.
pub fn calibrate(w: &Weights, calib: &CalibrationSet) -> Result<(QuantizedWeights, SearchTrace)> {
    let cfg = w.config();
    let bit_depth = calib.bit_depth();
    for (k, lw) in w.layers().iter().enumerate() {
        // infeasibility of raw weights does not depend on scales
        if lw.kernels.iter().any(|v| v.abs().round() > i16::MAX as f32) {
            return Err(Error::Infeasible {
                layer: k,
                reason: "weight magnitude exceeds int16 at shift 0".into(),
            });
        }
    }
    for req in calib.requests() {
        req.output_size(cfg)?;
    }
    let reference = float_reference(w, calib)?;
    let (initial, windows) = initial_fracs(cfg, bit_depth, &reference.peaks);
    let mut fracs = initial.clone();
    make_feasible(w, bit_depth, &mut fracs)?;

    let mut eval = Evaluator {
        w,
        calib,
        reference: &reference,
        scratch: Scratch::default(),
        out: Vec::new(),
        visited: Vec::new(),
    };
    let space: usize = windows.iter().map(|r| r.clone().count()).product();
    let best_err = if space <= EXHAUSTIVE_LIMIT {
        exhaustive(&mut eval, bit_depth, &windows, &mut fracs)
    } else {
        coordinate_search(&mut eval, bit_depth, &windows, &mut fracs)?
    };
    let qw = QuantizedWeights::from_fractional_bits(w, bit_depth, &fracs)?;
    let trace = SearchTrace { windows, initial, visited: eval.visited, chosen: fracs, error: best_err };
    Ok((qw, trace))
}

/// Direct quantization: [`calibrate`] without the trace.
pub fn quantize_direct(w: &Weights, calib: &CalibrationSet) -> Result<QuantizedWeights> {
    calibrate(w, calib).map(|(qw, _)| qw)
}

/// Range-only quantization: the starting point of [`calibrate`] without the
/// error-driven search.
pub fn quantize_from_ranges(w: &Weights, calib: &CalibrationSet) -> Result<QuantizedWeights> {
    for req in calib.requests() {
        req.output_size(w.config())?;
    }
    let reference = float_reference(w, calib)?;
    let (mut fracs, _) = initial_fracs(w.config(), calib.bit_depth(), &reference.peaks);
    make_feasible(w, calib.bit_depth(), &mut fracs)?;
    QuantizedWeights::from_fractional_bits(w, calib.bit_depth(), &fracs)
}

/// Mean squared error of the integer network against the float network over
/// `calib`, in squared sample units.
pub fn output_mse(w: &Weights, qw: &QuantizedWeights, calib: &CalibrationSet) -> Result<f64> {
    let report = quantization_report(w, qw, calib)?;
    Ok(report.mse)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchError {
    pub mean_abs: f64,
    pub max_abs: f64,
}

/// Integer-versus-float output differences in sample units.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantReport {
    pub per_patch: Vec<PatchError>,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub mse: f64,
}

pub fn quantization_report(w: &Weights, qw: &QuantizedWeights, calib: &CalibrationSet) -> Result<QuantReport> {
    if w.config() != qw.config() {
        return Err(Error::Argument(format!(
            "float network has {} layers, quantized network {}",
            w.config().n_layers(),
            qw.config().n_layers()
        )));
    }
    let mut scratch = Scratch::default();
    let mut per_patch = Vec::with_capacity(calib.len());
    let (mut sum_abs, mut sum_sq, mut count, mut max_abs) = (0f64, 0f64, 0usize, 0f64);
    for req in calib.requests() {
        let float = engine::forward_float_unrounded(w, req)?;
        let int = engine::forward_int16_with(qw, req, &mut scratch)?;
        let (mut s, mut m) = (0f64, 0f64);
        for (&q, &f) in int.as_slice().iter().zip(float.as_slice()) {
            let d = (q as f64 - f).abs();
            s += d;
            sum_sq += d * d;
            m = m.max(d);
        }
        let n = float.as_slice().len();
        per_patch.push(PatchError { mean_abs: s / n as f64, max_abs: m });
        sum_abs += s;
        count += n;
        max_abs = max_abs.max(m);
    }
    Ok(QuantReport {
        per_patch,
        mean_abs: sum_abs / count as f64,
        max_abs,
        mse: sum_sq / count as f64,
    })
}
