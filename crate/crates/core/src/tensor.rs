//! Planar multi-channel tensors and the primitive layer operations the
//! blending network is built from.
//!
//! Samples are stored channel-major, then row-major, so every channel plane
//! is one contiguous slice. All operations are pure: they borrow their inputs
//! and return fresh tensors.

use std::fmt;
use std::ops::{Add, AddAssign, Mul};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Real64,
    Real32,
    Int16,
    Int32,
    /// Only produced by the accumulator trace of the integer path.
    Int64,
}

pub trait Element: Copy + Default + PartialOrd + fmt::Debug + Send + Sync + 'static {
    const KIND: ElementKind;

    fn to_f64(self) -> f64;
}

/// Element types a 3x3 convolution can consume. `Acc` is the type products
/// are summed in.
pub trait ConvElement: Element {
    type Acc: Element + Add<Output = Self::Acc> + Mul<Output = Self::Acc> + AddAssign;

    fn widen(self) -> Self::Acc;

    /// `acc + k * self` without overflow checks. Integer callers must have
    /// bounded the accumulator beforehand.
    fn mac_unchecked(self, acc: Self::Acc, k: Self::Acc) -> Self::Acc;
}

/// Floating-point element used by the reference and production float paths.
pub trait Real: ConvElement<Acc = Self> + Add<Output = Self> + Mul<Output = Self> + AddAssign {
    fn from_f64(v: f64) -> Self;
}

macro_rules! impl_element {
    ($t:ty, $kind:ident) => {
        impl Element for $t {
            const KIND: ElementKind = ElementKind::$kind;

            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_element!(f64, Real64);
impl_element!(f32, Real32);
impl_element!(i16, Int16);
impl_element!(i32, Int32);
impl_element!(i64, Int64);

macro_rules! impl_conv {
    ($t:ty => $acc:ty, |$a:ident, $k:ident, $s:ident| $mac:expr) => {
        impl ConvElement for $t {
            type Acc = $acc;

            #[inline(always)]
            fn widen(self) -> $acc {
                self as $acc
            }

            #[inline(always)]
            fn mac_unchecked(self, $a: $acc, $k: $acc) -> $acc {
                let $s = self as $acc;
                $mac
            }
        }
    };
}

impl_conv!(f64 => f64, |a, k, s| a + k * s);
impl_conv!(f32 => f32, |a, k, s| a + k * s);
impl_conv!(i16 => i32, |a, k, s| a.wrapping_add(k.wrapping_mul(s)));
impl_conv!(i32 => i64, |a, k, s| a.wrapping_add(k.wrapping_mul(s)));

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "tensor dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} elements do not fill a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![T::default(); channels * height * width])
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn kind(&self) -> ElementKind {
        T::KIND
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[T] {
        let area = self.height * self.width;
        &self.data[channel * area..(channel + 1) * area]
    }

    #[inline]
    pub fn get(&self, channel: usize, y: usize, x: usize) -> T {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor<{:?}>[{}x{}x{}]",
            T::KIND,
            self.channels,
            self.height,
            self.width
        )
    }
}

/// Valid (unpadded) 3x3 convolution.
///
/// `kernels` is laid out `[out][in][ky][kx]`; the output channel count is
/// `biases.len()`.
pub fn conv3x3_valid<T: ConvElement>(
    input: &Tensor<T>,
    kernels: &[T],
    biases: &[T::Acc],
) -> Result<Tensor<T::Acc>> {
    let (cin, h, w) = input.shape();
    let cout = biases.len();
    if h < 3 || w < 3 {
        return Err(Error::Shape(format!("3x3 convolution needs at least 3x3 input, got {h}x{w}")));
    }
    if cout == 0 {
        return Err(Error::Shape("convolution with zero output channels".into()));
    }
    if kernels.len() != cout * cin * 9 {
        return Err(Error::Shape(format!(
            "{} kernel taps do not match {cout} outputs x {cin} inputs x 9",
            kernels.len()
        )));
    }
    let (oh, ow) = (h - 2, w - 2);
    let mut out = vec![T::Acc::default(); cout * oh * ow];
    for (o, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        plane.fill(biases[o]);
        for i in 0..cin {
            let src = input.plane(i);
            let taps = &kernels[(o * cin + i) * 9..(o * cin + i + 1) * 9];
            for y in 0..oh {
                let dst = &mut plane[y * ow..(y + 1) * ow];
                for (t, &k) in taps.iter().enumerate() {
                    let (ky, kx) = (t / 3, t % 3);
                    let k = k.widen();
                    let row = &src[(y + ky) * w + kx..(y + ky) * w + kx + ow];
                    for (d, &s) in dst.iter_mut().zip(row) {
                        *d += k * s.widen();
                    }
                }
            }
        }
    }
    Tensor::new(cout, oh, ow, out)
}

pub fn relu<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    let zero = T::default();
    t.map(|v| if v > zero { v } else { zero })
}

pub fn clip<T: Element>(t: &Tensor<T>, lo: T, hi: T) -> Result<Tensor<T>> {
    if !(lo <= hi) {
        return Err(Error::Argument(format!("clip bounds out of order: {lo:?} > {hi:?}")));
    }
    Ok(t.map(|v| {
        if v < lo {
            lo
        } else if v > hi {
            hi
        } else {
            v
        }
    }))
}

pub fn center_crop<T: Element>(t: &Tensor<T>, margin: usize) -> Result<Tensor<T>> {
    let (c, h, w) = t.shape();
    if h <= 2 * margin || w <= 2 * margin {
        return Err(Error::Shape(format!("margin {margin} too large for {h}x{w} tensor")));
    }
    Tensor::from_fn(c, h - 2 * margin, w - 2 * margin, |ch, y, x| {
        t.get(ch, y + margin, x + margin)
    })
}

/// Channels of `a` followed by channels of `b`.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Shape(format!(
            "cannot concatenate {}x{} with {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::new(a.channels + b.channels, a.height, a.width, data)
}
