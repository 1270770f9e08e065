//! Distortion measures, the average-blend baseline and Bjøntegaard delta rate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn same_shape(a: &Tensor<i16>, b: &Tensor<i16>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Rounded mean of two predictions, `(a + b + 1) >> 1`.
pub fn average_blend(p0: &Tensor<i16>, p1: &Tensor<i16>) -> Result<Tensor<i16>> {
    same_shape(p0, p1)?;
    let data = p0
        .as_slice()
        .iter()
        .zip(p1.as_slice())
        .map(|(&a, &b)| ((a as i32 + b as i32 + 1) >> 1) as i16)
        .collect();
    Tensor::new(p0.channels(), p0.height(), p0.width(), data)
}

/// In-place 8-point Walsh-Hadamard butterfly (natural order; the ordering
/// does not change the sum of magnitudes).
fn hadamard8(v: &mut [i64; 8]) {
    let mut h = 1;
    while h < 8 {
        for i in (0..8).step_by(2 * h) {
            for j in i..i + h {
                let (x, y) = (v[j], v[j + h]);
                v[j] = x + y;
                v[j + h] = x - y;
            }
        }
        h *= 2;
    }
}

/// SATD of one 8x8 residual block given row-major.
pub fn satd8x8(residual: &[i64; 64]) -> u64 {
    let mut m = *residual;
    for r in 0..8 {
        let mut row: [i64; 8] = m[r * 8..r * 8 + 8].try_into().unwrap();
        hadamard8(&mut row);
        m[r * 8..r * 8 + 8].copy_from_slice(&row);
    }
    let mut total = 0u64;
    for c in 0..8 {
        let mut col = [0i64; 8];
        for r in 0..8 {
            col[r] = m[r * 8 + c];
        }
        hadamard8(&mut col);
        total += col.iter().map(|v| v.unsigned_abs()).sum::<u64>();
    }
    total
}

/// Sum over 8x8 tiles of the absolute unnormalized Hadamard coefficients of
/// `a - b`. Every plane must have sides that are multiples of 8.
pub fn satd(a: &Tensor<i16>, b: &Tensor<i16>) -> Result<u64> {
    same_shape(a, b)?;
    let (c, h, w) = a.shape();
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Argument(format!("SATD needs sides divisible by 8, got {h}x{w}")));
    }
    let mut total = 0;
    let mut tile = [0i64; 64];
    for ch in 0..c {
        for ty in (0..h).step_by(8) {
            for tx in (0..w).step_by(8) {
                for y in 0..8 {
                    for x in 0..8 {
                        tile[y * 8 + x] = a.get(ch, ty + y, tx + x) as i64 - b.get(ch, ty + y, tx + x) as i64;
                    }
                }
                total += satd8x8(&tile);
            }
        }
    }
    Ok(total)
}

pub fn squared_error(a: &Tensor<i16>, b: &Tensor<i16>) -> Result<f64> {
    same_shape(a, b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum())
}

pub fn mse(a: &Tensor<i16>, b: &Tensor<i16>) -> Result<f64> {
    let n = a.as_slice().len();
    if n == 0 {
        return Err(Error::Argument("empty tensors".into()));
    }
    Ok(squared_error(a, b)? / n as f64)
}

/// PSNR in dB from a mean squared error; zero error maps to `f64::INFINITY`.
pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

pub fn psnr(a: &Tensor<i16>, b: &Tensor<i16>, max_value: f64) -> Result<f64> {
    if !(max_value > 0.0) {
        return Err(Error::Argument(format!("max value {max_value} must be positive")));
    }
    Ok(psnr_from_mse(mse(a, b)?, max_value))
}

/// One rate-distortion operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub rate: f64,
    /// PSNR in dB.
    pub distortion: f64,
}

impl RdPoint {
    pub fn new(rate: f64, distortion: f64) -> Self {
        Self { rate, distortion }
    }
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes with
/// the usual one-sided three-point ends).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::Argument("interpolation needs at least two matched points".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("abscissae must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d.fill(del[0]);
            return Ok(Self { x, y, d });
        }
        for k in 1..n - 1 {
            let (a, b) = (del[k - 1], del[k]);
            if a == 0.0 || b == 0.0 || a.signum() != b.signum() {
                continue;
            }
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
        let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
            let s = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
            if s.signum() != m0.signum() {
                0.0
            } else if m0.signum() != m1.signum() && s.abs() > 3.0 * m0.abs() {
                3.0 * m0
            } else {
                s
            }
        };
        d[0] = end(h[0], h[1], del[0], del[1]);
        d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        Ok(Self { x, y, d })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        self.x[1..n - 1].partition_point(|&v| v <= t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[i]
            + (s3 - 2.0 * s2 + s) * h * self.d[i]
            + (-2.0 * s3 + 3.0 * s2) * self.y[i + 1]
            + (s3 - s2) * h * self.d[i + 1]
    }

    /// Integral over segment `i` from its left end to local coordinate `s`.
    fn partial(&self, i: usize, s: f64) -> f64 {
        let h = self.x[i + 1] - self.x[i];
        let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
        h * ((s4 / 2.0 - s3 + s) * self.y[i]
            + h * (s4 / 4.0 - 2.0 * s3 / 3.0 + s2 / 2.0) * self.d[i]
            + (-s4 / 2.0 + s3) * self.y[i + 1]
            + h * (s4 / 4.0 - s3 / 3.0) * self.d[i + 1])
    }

    /// Antiderivative measured from the first abscissa.
    fn antiderivative(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let full: f64 = (0..i).map(|j| self.partial(j, 1.0)).sum();
        full + self.partial(i, (t - self.x[i]) / (self.x[i + 1] - self.x[i]))
    }

    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        self.antiderivative(b) - self.antiderivative(a)
    }
}

fn log_rate_curve(points: &[RdPoint], which: &str) -> Result<Pchip> {
    if points.len() < 4 {
        return Err(Error::Argument(format!("{which} curve has {} points, need at least 4", points.len())));
    }
    if points.iter().any(|p| !(p.rate > 0.0) || !p.distortion.is_finite()) {
        return Err(Error::Argument(format!("{which} curve has a non-positive rate or non-finite PSNR")));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    if sorted.windows(2).any(|w| !(w[1].rate > w[0].rate) || !(w[1].distortion > w[0].distortion)) {
        return Err(Error::Argument(format!("{which} curve is not strictly monotone")));
    }
    Pchip::new(
        sorted.iter().map(|p| p.distortion).collect(),
        sorted.iter().map(|p| p.rate.ln()).collect(),
    )
}

/// Average rate difference of `test` against `anchor` at equal PSNR, in
/// percent, over the PSNR interval both curves cover.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    let a = log_rate_curve(anchor, "anchor")?;
    let t = log_rate_curve(test, "test")?;
    let lo = a.x[0].max(t.x[0]);
    let hi = a.x[a.x.len() - 1].min(t.x[t.x.len() - 1]);
    if !(hi > lo) {
        return Err(Error::Argument("curves share no PSNR interval".into()));
    }
    let avg = (t.integrate(lo, hi) - a.integrate(lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> i16) -> Tensor<i16> {
        Tensor::from_fn(1, h, w, |_, y, x| f(y, x)).unwrap()
    }

    #[test]
    fn average_blend_examples() {
        let a = plane(1, 3, |_, x| [100, 3, 7][x]);
        let b = plane(1, 3, |_, x| [200, 4, 7][x]);
        assert_eq!(average_blend(&a, &b).unwrap().as_slice(), &[150, 4, 7]);
        assert!(average_blend(&a, &plane(1, 2, |_, _| 0)).is_err());
    }

    #[test]
    fn satd_examples() {
        let a = plane(8, 8, |y, x| (y * 8 + x) as i16);
        assert_eq!(satd(&a, &a).unwrap(), 0);
        let b = plane(8, 8, |y, x| (y * 8 + x) as i16 + 1);
        assert_eq!(satd(&b, &a).unwrap(), 64);
        assert!(matches!(satd(&plane(8, 12, |_, _| 0), &plane(8, 12, |_, _| 0)), Err(Error::Argument(_))));
    }

    #[test]
    fn psnr_examples() {
        let a = plane(4, 4, |_, _| 100);
        assert!(psnr(&a, &a, 255.0).unwrap().is_infinite());
        let two = psnr(&a, &plane(4, 4, |_, _| 102), 255.0).unwrap();
        assert!((two - 42.1102).abs() < 1e-3);
        let four = psnr(&a, &plane(4, 4, |_, _| 96), 255.0).unwrap();
        assert!((two - four - 20.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn pchip_reproduces_linear_data_and_integrates_exactly() {
        let p = Pchip::new(vec![0.0, 1.0, 3.0, 4.5], vec![1.0, 3.0, 7.0, 10.0]).unwrap();
        for t in [0.0, 0.5, 2.2, 4.5] {
            assert!((p.eval(t) - (1.0 + 2.0 * t)).abs() < 1e-12);
        }
        assert!((p.integrate(0.5, 4.0) - (4.0 + 16.0 - 0.5 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn bd_rate_examples() {
        let anchor: Vec<RdPoint> = [(1000.0, 34.0), (1800.0, 36.5), (3300.0, 39.0), (6100.0, 41.2), (11000.0, 43.0)]
            .iter()
            .map(|&(r, d)| RdPoint::new(r, d))
            .collect();
        assert_eq!(bd_rate(&anchor, &anchor).unwrap(), 0.0);
        let cheaper: Vec<RdPoint> = anchor.iter().map(|p| RdPoint::new(p.rate * 0.9, p.distortion)).collect();
        assert!((bd_rate(&anchor, &cheaper).unwrap() + 10.0).abs() < 1e-9);
        assert!(bd_rate(&anchor[..3], &anchor[..3]).is_err());
        let far: Vec<RdPoint> = anchor.iter().map(|p| RdPoint::new(p.rate, p.distortion + 20.0)).collect();
        assert!(bd_rate(&anchor, &far).is_err());
    }
}
