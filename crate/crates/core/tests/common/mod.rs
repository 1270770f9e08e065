//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the engine or quantizer; the network structure is
//! restated from scratch.
#![allow(dead_code)]

use nnblend::engine::BlendRequest;
use nnblend::metrics::RdPoint;
use nnblend::model::{LayerWeights, NetworkConfig, Weights};
use nnblend::quantizer::QuantizedWeights;
use nnblend::Tensor;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `[channel][y][x]`
pub type Planes<T> = Vec<Vec<Vec<T>>>;

/// (in, out) channel counts of an N-layer network.
pub fn layer_shapes(n: usize) -> Vec<(usize, usize)> {
    let mut v = vec![(2, 16)];
    v.extend(std::iter::repeat_n((16, 16), n - 3));
    v.push((16, 14));
    v.push((16, 1));
    v
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random weights in a range wide enough to exercise clipping.
pub fn random_weights(n: usize, rng: &mut ChaCha8Rng, scale: f32) -> Weights {
    let cfg = NetworkConfig::new(n).unwrap();
    let layers = layer_shapes(n)
        .into_iter()
        .map(|(cin, cout)| LayerWeights {
            in_channels: cin,
            out_channels: cout,
            kernels: (0..cin * cout * 9).map(|_| rng.random_range(-scale..scale)).collect(),
            biases: (0..cout).map(|_| rng.random_range(-0.1f32..0.1)).collect(),
        })
        .collect();
    Weights::new(cfg, layers).unwrap()
}

pub fn random_plane(h: usize, w: usize, max: i16, rng: &mut ChaCha8Rng) -> Tensor<i16> {
    Tensor::from_fn(1, h, w, |_, _, _| rng.random_range(0..=max)).unwrap()
}

pub fn random_request(n: usize, out_h: usize, out_w: usize, bit_depth: u8, rng: &mut ChaCha8Rng) -> BlendRequest {
    let max = ((1i32 << bit_depth) - 1) as i16;
    let (h, w) = (out_h + 2 * n, out_w + 2 * n);
    BlendRequest::new(random_plane(h, w, max, rng), random_plane(h, w, max, rng), bit_depth).unwrap()
}

fn to_planes<T: nnblend::tensor::Element, U>(t: &Tensor<T>, f: impl Fn(T) -> U) -> Planes<U> {
    (0..t.channels())
        .map(|c| (0..t.height()).map(|y| (0..t.width()).map(|x| f(t.get(c, y, x))).collect()).collect())
        .collect()
}

fn crop<T: Copy>(p: &Planes<T>, m: usize) -> Planes<T> {
    p.iter()
        .map(|c| c[m..c.len() - m].iter().map(|r| r[m..r.len() - m].to_vec()).collect())
        .collect()
}

/// Textbook valid 3x3 convolution, `k(o, i, ky, kx)` and bias `b(o)`.
fn conv<A, K, B>(x: &Planes<A>, cout: usize, k: K, b: B) -> Planes<A>
where
    A: Copy + std::ops::Add<Output = A> + std::ops::Mul<Output = A>,
    K: Fn(usize, usize, usize, usize) -> A,
    B: Fn(usize) -> A,
{
    let (h, w) = (x[0].len() - 2, x[0][0].len() - 2);
    (0..cout)
        .map(|o| {
            (0..h)
                .map(|y| {
                    (0..w)
                        .map(|xx| {
                            let mut s = b(o);
                            for (i, plane) in x.iter().enumerate() {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        s = s + k(o, i, ky, kx) * plane[y + ky][xx + kx];
                                    }
                                }
                            }
                            s
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Float network, f64 throughout, output in sample units before rounding.
pub fn float_oracle(w: &Weights, req: &BlendRequest) -> Vec<f64> {
    let n = w.layers().len();
    let max = ((1u32 << req.bit_depth) - 1) as f64;
    let p0 = to_planes(&req.pred0, |v| v as f64 / max);
    let p1 = to_planes(&req.pred1, |v| v as f64 / max);
    let input: Planes<f64> = vec![p0[0].clone(), p1[0].clone()];
    let mut x = input.clone();
    for (k, lw) in w.layers().iter().enumerate() {
        let mut y = conv(&x, lw.out_channels, |o, i, ky, kx| lw.tap(o, i, ky, kx) as f64, |o| lw.biases[o] as f64);
        for v in y.iter_mut().flatten().flatten() {
            *v = if k + 1 == n { v.clamp(0.0, 1.0) } else { v.max(0.0) };
        }
        if k == n - 2 {
            let mut cat = crop(&input, n - 1);
            cat.extend(y);
            y = cat;
        }
        x = y;
    }
    x[0].iter().flatten().map(|v| v * max).collect()
}

/// Integer network in 64-bit arithmetic with explicit round-half-up shifts;
/// also returns the largest accumulator magnitude seen.
pub fn int_oracle(qw: &QuantizedWeights, req: &BlendRequest) -> (Vec<i16>, i64) {
    let n = qw.layers().len();
    let max = (1i64 << qw.bit_depth()) - 1;
    let input: Planes<i64> = vec![to_planes(&req.pred0, |v| v as i64).remove(0), to_planes(&req.pred1, |v| v as i64).remove(0)];
    let skip_shift = qw.output_frac()[n - 2];
    let mut x = input.clone();
    let mut peak = 0i64;
    for (k, l) in qw.layers().iter().enumerate() {
        let cin = l.in_channels;
        let mut y = conv(&x, l.out_channels, |o, i, ky, kx| l.kernels[((o * cin + i) * 3 + ky) * 3 + kx] as i64, |o| {
            l.biases[o] as i64
        });
        let s = l.activation_shift as u32;
        for v in y.iter_mut().flatten().flatten() {
            peak = peak.max(v.abs());
            let r = if s == 0 { *v } else { (*v + (1 << (s - 1))).div_euclid(1 << s) };
            let r = r.clamp(-32768, 32767);
            *v = if k + 1 == n { r.clamp(0, max) } else { r.max(0) };
        }
        if k == n - 2 {
            let mut cat = crop(&input, n - 1);
            for v in cat.iter_mut().flatten().flatten() {
                *v <<= skip_shift;
            }
            cat.extend(y);
            y = cat;
        }
        x = y;
    }
    (x[0].iter().flatten().map(|&v| v as i16).collect(), peak)
}

/// FNV-1a over little-endian samples.
pub fn fnv1a(samples: impl IntoIterator<Item = i16>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for s in samples {
        for b in s.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Unnormalized order-8 Hadamard matrix by the Sylvester construction.
pub fn hadamard8() -> [[i64; 8]; 8] {
    let mut h = [[0i64; 8]; 8];
    for (i, row) in h.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if (i & j).count_ones() % 2 == 0 { 1 } else { -1 };
        }
    }
    h
}

/// `sum |H r H^T|` by explicit matrix products.
pub fn satd_matrix(r: &[[i64; 8]; 8]) -> u64 {
    let h = hadamard8();
    let mut hr = [[0i64; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            hr[i][j] = (0..8).map(|k| h[i][k] * r[k][j]).sum();
        }
    }
    let mut total = 0u64;
    for i in 0..8 {
        for j in 0..8 {
            let t: i64 = (0..8).map(|k| hr[i][k] * h[j][k]).sum();
            total += t.unsigned_abs();
        }
    }
    total
}

/// Shape-preserving cubic slopes restated from the Fritsch-Carlson rule:
/// weighted harmonic mean inside, three-point one-sided estimate at the ends.
pub fn oracle_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        if del[i - 1] * del[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
        }
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
    d
}

pub fn oracle_eval(x: &[f64], y: &[f64], d: &[f64], t: f64) -> f64 {
    let i = (0..x.len() - 1).find(|&i| t <= x[i + 1]).unwrap_or(x.len() - 2);
    let h = x[i + 1] - x[i];
    let s = (t - x[i]) / h;
    let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
    let h10 = s.powi(3) - 2.0 * s * s + s;
    let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
    let h11 = s.powi(3) - s * s;
    h00 * y[i] + h10 * h * d[i] + h01 * y[i + 1] + h11 * h * d[i + 1]
}

/// Bjontegaard delta by trapezoidal integration of the log-rate gap at 200
/// evenly spaced PSNR values.
pub fn bd_rate_oracle(anchor: &[RdPoint], test: &[RdPoint]) -> f64 {
    let curve = |pts: &[RdPoint]| {
        let mut p = pts.to_vec();
        p.sort_by(|a, b| a.distortion.total_cmp(&b.distortion));
        let x: Vec<f64> = p.iter().map(|q| q.distortion).collect();
        let y: Vec<f64> = p.iter().map(|q| q.rate.ln()).collect();
        let d = oracle_slopes(&x, &y);
        (x, y, d)
    };
    let (ax, ay, ad) = curve(anchor);
    let (tx, ty, td) = curve(test);
    let lo = ax[0].max(tx[0]);
    let hi = ax[ax.len() - 1].min(tx[tx.len() - 1]);
    let m = 200;
    let step = (hi - lo) / (m - 1) as f64;
    let mut integral = 0.0;
    for i in 0..m - 1 {
        let (t0, t1) = (lo + i as f64 * step, lo + (i + 1) as f64 * step);
        let diff = |t| oracle_eval(&tx, &ty, &td, t) - oracle_eval(&ax, &ay, &ad, t);
        integral += 0.5 * (diff(t0) + diff(t1)) * step;
    }
    ((integral / (hi - lo)).exp() - 1.0) * 100.0
}
