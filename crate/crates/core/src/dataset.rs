//! Training and evaluation patches: `(pred0, pred1, target)` triples of luma
//! blocks, the `NNBP` container, extraction from frame triplets, and a
//! seeded synthetic generator.

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::Reader;
use crate::engine::{max_sample, BlendRequest, MAX_BIT_DEPTH};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

/// Side of the target block of every record.
pub const PATCH_SIZE: usize = 16;
pub const PATCH_MAGIC: &[u8; 4] = b"NNBP";
pub const PATCH_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pred0: Tensor<i16>,
    pred1: Tensor<i16>,
    target: Tensor<i16>,
    bit_depth: u8,
    n_border: usize,
}

impl PatchRecord {
    pub fn new(
        pred0: Tensor<i16>,
        pred1: Tensor<i16>,
        target: Tensor<i16>,
        bit_depth: u8,
        n_border: usize,
    ) -> Result<Self> {
        if !(1..=MAX_BIT_DEPTH).contains(&bit_depth) {
            return Err(Error::Argument(format!("bit depth {bit_depth} unsupported")));
        }
        let side = window_side(n_border);
        for (name, t, s) in [("pred0", &pred0, side), ("pred1", &pred1, side), ("target", &target, PATCH_SIZE)] {
            if t.shape() != (1, s, s) {
                return Err(Error::Shape(format!("{name} is {:?}, expected 1x{s}x{s}", t.shape())));
            }
        }
        let max = max_sample(bit_depth);
        let all = pred0.as_slice().iter().chain(pred1.as_slice()).chain(target.as_slice());
        if all.into_iter().any(|&v| !(0..=max).contains(&v)) {
            return Err(Error::Argument(format!("sample outside [0, {max}]")));
        }
        Ok(Self { pred0, pred1, target, bit_depth, n_border })
    }

    pub fn pred0(&self) -> &Tensor<i16> {
        &self.pred0
    }

    pub fn pred1(&self) -> &Tensor<i16> {
        &self.pred1
    }

    pub fn target(&self) -> &Tensor<i16> {
        &self.target
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    pub fn n_border(&self) -> usize {
        self.n_border
    }

    pub fn request(&self) -> Result<BlendRequest> {
        BlendRequest::new(self.pred0.clone(), self.pred1.clone(), self.bit_depth)
    }
}

/// Side of a bordered prediction window.
pub fn window_side(n_border: usize) -> usize {
    PATCH_SIZE + 2 * n_border
}

/// Decoded contents of an `NNBP` container.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFile {
    pub bit_depth: u8,
    pub n_border: usize,
    pub records: Vec<PatchRecord>,
}

impl PatchFile {
    pub fn new(bit_depth: u8, n_border: usize, records: Vec<PatchRecord>) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.bit_depth != bit_depth || r.n_border != n_border) {
            return Err(Error::Argument(format!(
                "record with bit depth {} and border {} in a file declaring {bit_depth} and {n_border}",
                r.bit_depth, r.n_border
            )));
        }
        if n_border > u8::MAX as usize {
            return Err(Error::Argument(format!("border {n_border} does not fit the header")));
        }
        Ok(Self { bit_depth, n_border, records })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let side = window_side(self.n_border);
        let per_record = (2 * side * side + PATCH_SIZE * PATCH_SIZE) * 2;
        let mut out = Vec::with_capacity(12 + per_record * self.records.len());
        out.extend_from_slice(PATCH_MAGIC);
        out.extend_from_slice(&PATCH_VERSION.to_le_bytes());
        out.push(self.bit_depth);
        out.push(self.n_border as u8);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            for t in [&r.pred0, &r.pred1, &r.target] {
                t.as_slice().iter().for_each(|&v| out.extend_from_slice(&(v as u16).to_le_bytes()));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PATCH_MAGIC)?;
        r.version(PATCH_VERSION)?;
        let header = |section: &str| FormatError::Truncated { section: section.into() };
        let bit_depth = r.u8().ok_or_else(|| header("bit depth"))?;
        let n_border = r.u8().ok_or_else(|| header("border"))? as usize;
        let count = r.u32().ok_or_else(|| header("record count"))? as usize;
        if !(1..=MAX_BIT_DEPTH).contains(&bit_depth) {
            return Err(FormatError::InvalidValue(format!("bit depth {bit_depth}")).into());
        }
        let side = window_side(n_border);
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let truncated = || FormatError::TruncatedRecords { declared: count, present: i };
            let pred0 = r.u16s(side * side).ok_or_else(truncated)?;
            let pred1 = r.u16s(side * side).ok_or_else(truncated)?;
            let target = r.u16s(PATCH_SIZE * PATCH_SIZE).ok_or_else(truncated)?;
            let plane = |v: Vec<u16>, s: usize| Tensor::new(1, s, s, v.into_iter().map(|x| x as i16).collect());
            let record = PatchRecord::new(
                plane(pred0, side)?,
                plane(pred1, side)?,
                plane(target, PATCH_SIZE)?,
                bit_depth,
                n_border,
            )
            .map_err(|e| FormatError::InvalidValue(format!("record {i}: {e}")))?;
            records.push(record);
        }
        r.finish()?;
        Ok(Self { bit_depth, n_border, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Cuts co-located patches out of three consecutive frames: targets from the
/// middle frame, bordered predictions from its neighbours. Windows sit on a
/// regular grid with the given stride; windows that would leave the plane are
/// skipped.
pub fn extract_triplets(
    prev: &Tensor<i16>,
    cur: &Tensor<i16>,
    next: &Tensor<i16>,
    stride: usize,
    n_border: usize,
    bit_depth: u8,
) -> Result<Vec<PatchRecord>> {
    if prev.shape() != cur.shape() || next.shape() != cur.shape() || cur.channels() != 1 {
        return Err(Error::Argument(format!(
            "frames must be equal single planes, got {:?}, {:?}, {:?}",
            prev.shape(),
            cur.shape(),
            next.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::Argument("stride must be positive".into()));
    }
    let side = window_side(n_border);
    let (h, w) = (cur.height(), cur.width());
    let mut records = Vec::new();
    if h < side || w < side {
        return Ok(records);
    }
    let window = |t: &Tensor<i16>, y0: usize, x0: usize, s: usize| {
        Tensor::from_fn(1, s, s, |_, y, x| t.get(0, y0 + y, x0 + x))
    };
    for y0 in (0..=h - side).step_by(stride) {
        for x0 in (0..=w - side).step_by(stride) {
            records.push(PatchRecord::new(
                window(prev, y0, x0, side)?,
                window(next, y0, x0, side)?,
                window(cur, y0 + n_border, x0 + n_border, PATCH_SIZE)?,
                bit_depth,
                n_border,
            )?);
        }
    }
    Ok(records)
}

/// Parameters of the synthetic patch generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub count: usize,
    /// Opposite translations applied to the two predictions, in samples.
    pub displacement: usize,
    /// Half-width of the uniform noise added to each prediction sample.
    pub noise_amplitude: f64,
    pub seed: u64,
    pub n_border: usize,
    pub bit_depth: u8,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { count: 1000, displacement: 2, noise_amplitude: 4.0, seed: 0, n_border: 6, bit_depth: 10 }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Band-limited value noise: hashed lattice values, smoothly interpolated,
/// summed over three octaves. Returns values in [0, 1].
struct ValueNoise {
    key: u64,
}

impl ValueNoise {
    const OCTAVES: [(f64, f64); 3] = [(12.0, 0.55), (6.0, 0.3), (3.0, 0.15)];

    fn lattice(&self, octave: usize, ix: i64, iy: i64) -> f64 {
        let h = splitmix64(
            self.key
                ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
                ^ (octave as u64).wrapping_mul(0x1656_67B1_9E37_79F9),
        );
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        Self::OCTAVES
            .iter()
            .enumerate()
            .map(|(o, &(spacing, amp))| {
                let (gx, gy) = (x / spacing, y / spacing);
                let (ix, iy) = (gx.floor() as i64, gy.floor() as i64);
                let (tx, ty) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
                let top = self.lattice(o, ix, iy) * (1.0 - tx) + self.lattice(o, ix + 1, iy) * tx;
                let bottom = self.lattice(o, ix, iy + 1) * (1.0 - tx) + self.lattice(o, ix + 1, iy + 1) * tx;
                amp * (top * (1.0 - ty) + bottom * ty)
            })
            .sum()
    }
}

const DIRECTIONS: [(i64, i64); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

/// One synthetic record. The texture, its placement and the motion direction
/// depend only on `(seed, index)`, so changing the displacement or noise
/// keeps the ground truth fixed.
pub fn synth_record(params: &SynthParams, index: u64) -> Result<PatchRecord> {
    let key = splitmix64(params.seed ^ splitmix64(index));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let max = max_sample(params.bit_depth) as f64;
    let noise = ValueNoise { key: rng.random() };
    let mean = rng.random_range(0.3..0.7) * max;
    let contrast = rng.random_range(0.8..2.4) * max;
    let ox = rng.random_range(0.0..4096.0);
    let oy = rng.random_range(0.0..4096.0);
    let (dx, dy) = DIRECTIONS[rng.random_range(0..DIRECTIONS.len())];

    let truth = |x: i64, y: i64| -> f64 {
        let v = mean + contrast * (noise.sample(ox + x as f64, oy + y as f64) - 0.5);
        v.round().clamp(0.0, max)
    };
    let nb = params.n_border as i64;
    let side = window_side(params.n_border);
    let d = params.displacement as i64;
    let amp = params.noise_amplitude;
    let mut predict = |sx: i64, sy: i64| {
        Tensor::from_fn(1, side, side, |_, y, x| {
            let v = truth(x as i64 - nb + sx, y as i64 - nb + sy);
            let n = if amp > 0.0 { rng.random_range(-amp..=amp) } else { 0.0 };
            (v + n).round().clamp(0.0, max) as i16
        })
    };
    let pred0 = predict(d * dx, d * dy)?;
    let pred1 = predict(-d * dx, -d * dy)?;
    let target = Tensor::from_fn(1, PATCH_SIZE, PATCH_SIZE, |_, y, x| truth(x as i64, y as i64) as i16)?;
    PatchRecord::new(pred0, pred1, target, params.bit_depth, params.n_border)
}

pub fn synth_generate(params: &SynthParams) -> Result<Vec<PatchRecord>> {
    if params.count == 0 {
        return Err(Error::Argument("synthetic set needs at least one record".into()));
    }
    if !(params.noise_amplitude >= 0.0) {
        return Err(Error::Argument("noise amplitude must be non-negative".into()));
    }
    (0..params.count as u64).map(|i| synth_record(params, i)).collect()
}

/// Decode a headerless plane of little-endian 16-bit samples.
pub fn read_raw_plane(bytes: &[u8], width: usize, height: usize, bit_depth: u8) -> Result<Tensor<i16>> {
    if bytes.len() != width * height * 2 {
        return Err(Error::Argument(format!(
            "raw plane has {} bytes, expected {} for {width}x{height}",
            bytes.len(),
            width * height * 2
        )));
    }
    let max = max_sample(bit_depth) as u16;
    let samples = bytes
        .chunks_exact(2)
        .map(|b| {
            let v = u16::from_le_bytes([b[0], b[1]]);
            if v > max {
                Err(Error::Argument(format!("raw sample {v} exceeds {bit_depth}-bit range")))
            } else {
                Ok(v as i16)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(1, height, width, samples)
}

pub fn raw_plane_bytes(plane: &Tensor<i16>) -> Vec<u8> {
    plane.as_slice().iter().flat_map(|&v| (v as u16).to_le_bytes()).collect()
}
