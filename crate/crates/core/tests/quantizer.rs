mod common;

use common::*;
use nnblend::engine;
use nnblend::model::{LayerWeights, NetworkConfig, Weights};
use nnblend::quantizer::{self, CalibrationSet, QuantizedWeights};
use nnblend::{Error, Tensor};
use proptest::prelude::*;
use rand::RngExt;

fn calib_set(n: usize, count: usize, out: usize, seed: u64) -> CalibrationSet {
    let mut r = rng(seed);
    CalibrationSet::new((0..count).map(|_| random_request(n, out, out, 10, &mut r)).collect()).unwrap()
}

/// MSE of the integer output against the unrounded float output, computed
/// with the test oracles.
fn oracle_mse(w: &Weights, qw: &QuantizedWeights, calib: &CalibrationSet) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for req in calib.requests() {
        let f = float_oracle(w, req);
        let (q, _) = int_oracle(qw, req);
        for (a, b) in q.iter().zip(&f) {
            sum += (*a as f64 - b).powi(2);
        }
        count += f.len();
    }
    sum / count as f64
}

fn cartesian(windows: &[std::ops::RangeInclusive<i32>]) -> Vec<Vec<i32>> {
    windows.iter().fold(vec![vec![]], |acc, w| {
        acc.into_iter().flat_map(|p| w.clone().map(move |v| [p.clone(), vec![v]].concat())).collect()
    })
}

/// A random five-layer net with one of its 16-to-16 layers removed.
fn reduced_net(seed: u64) -> Weights {
    let full = Weights::random(&NetworkConfig::new(5).unwrap(), seed);
    let mut layers = full.layers().to_vec();
    layers.remove(1);
    Weights::new(NetworkConfig::new(4).unwrap(), layers).unwrap()
}

#[test]
fn search_matches_exhaustive_oracle_on_reduced_net() {
    for seed in [1u64, 2, 3] {
        let w = reduced_net(seed);
        let calib = calib_set(4, 1000, 2, 100 + seed);
        let (qw, trace) = quantizer::calibrate(&w, &calib).unwrap();
        let space: usize = trace.windows.iter().map(|r| r.clone().count()).product();
        assert!(space <= quantizer::EXHAUSTIVE_LIMIT);

        let floats: Vec<_> = calib.requests().iter().map(|r| float_oracle(&w, r)).collect();
        let mut best: Option<(f64, Vec<i32>)> = None;
        for tuple in cartesian(&trace.windows) {
            let Ok(cand) = QuantizedWeights::from_fractional_bits(&w, 10, &tuple) else { continue };
            let (mut sum, mut count) = (0.0, 0usize);
            for (req, f) in calib.requests().iter().zip(&floats) {
                let (q, _) = int_oracle(&cand, req);
                for (&a, b) in q.iter().zip(f) {
                    sum += (a as f64 - b).powi(2);
                }
                count += f.len();
            }
            let mse = sum / count as f64;
            // ties go to the lexicographically larger tuple
            let better = match &best {
                None => true,
                Some((e, t)) => mse < *e || (mse == *e && tuple > *t),
            };
            if better {
                best = Some((mse, tuple));
            }
        }
        let (best_err, best_tuple) = best.unwrap();
        assert!((trace.error - best_err).abs() <= 1e-9 * best_err, "seed {seed}: search {} vs exhaustive {best_err}", trace.error);
        assert_eq!(trace.chosen, best_tuple, "seed {seed}");
        assert_eq!(&qw.output_frac()[..3], &trace.chosen[..]);
    }
}

#[test]
fn larger_nets_use_the_coordinate_search() {
    let w = Weights::random(&NetworkConfig::new(6).unwrap(), 4);
    let calib = calib_set(6, 30, 4, 4);
    let (_, trace) = quantizer::calibrate(&w, &calib).unwrap();
    let space: usize = trace.windows.iter().map(|r| r.clone().count()).product();
    assert!(space > quantizer::EXHAUSTIVE_LIMIT);
    // two passes over five layers, at most eight candidates each
    assert!(trace.visited.len() <= 2 * 5 * 8);
}

#[test]
fn chosen_tuple_is_best_among_visited() {
    let w = Weights::random(&NetworkConfig::new(5).unwrap(), 9);
    let calib = calib_set(5, 40, 4, 9);
    let (qw, trace) = quantizer::calibrate(&w, &calib).unwrap();
    assert!(!trace.visited.is_empty());
    for (tuple, err) in &trace.visited {
        assert!(trace.error <= *err, "{tuple:?} has {err} below chosen {}", trace.error);
    }
    let recomputed = oracle_mse(&w, &qw, &calib);
    assert!((recomputed - trace.error).abs() <= 1e-9 * recomputed.max(1.0));
    assert!(trace.visited.iter().any(|(t, _)| t == &trace.chosen));
    for (k, window) in trace.windows.iter().enumerate() {
        assert!(window.contains(&trace.initial[k]));
    }
}

#[test]
fn quantized_parameters_follow_the_scale_chain() {
    let w = Weights::random(&NetworkConfig::new(6).unwrap(), 21);
    let calib = calib_set(6, 8, 4, 21);
    let qw = quantizer::quantize_direct(&w, &calib).unwrap();
    let fin = qw.input_frac();
    for (k, (lw, ql)) in w.layers().iter().zip(qw.layers()).enumerate() {
        let s = ql.weight_shift as i32;
        for (&f, &q) in lw.kernels.iter().zip(&ql.kernels) {
            let back = q as f64 * 2f64.powi(-s);
            assert!((f as f64 - back).abs() <= 2f64.powi(-s - 1) + 1e-15, "layer {k}");
        }
        let scale = 1023.0 * 2f64.powi(fin[k] + s);
        for (&b, &q) in lw.biases.iter().zip(&ql.biases) {
            assert_eq!(q as f64, (b as f64 * scale).round(), "layer {k}");
        }
        assert_eq!(fin[k] + s - ql.activation_shift as i32, qw.output_frac()[k]);
        let max_in: i64 = if k == 0 { 1023 } else { 32767 };
        let per_out = ql.in_channels * 9;
        for o in 0..ql.out_channels {
            let bound: i64 = ql.kernels[o * per_out..(o + 1) * per_out].iter().map(|&t| (t as i64).abs()).sum::<i64>()
                * max_in
                + (ql.biases[o] as i64).abs();
            assert!(bound < 1i64 << 31, "layer {k} output {o}");
        }
    }
    assert_eq!(*qw.output_frac().last().unwrap(), 0);
}

#[test]
fn calibration_is_deterministic() {
    let w = Weights::random(&NetworkConfig::new(5).unwrap(), 31);
    let calib = calib_set(5, 20, 4, 31);
    let (a, ta) = quantizer::calibrate(&w, &calib).unwrap();
    let (b, tb) = quantizer::calibrate(&w, &calib).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ta.visited, tb.visited);
}

/// Identity path through channel 0 of every hidden layer; the output is half
/// the cropped first prediction plus half its copy through the network.
fn dyadic_net(n: usize) -> Weights {
    let cfg = NetworkConfig::new(n).unwrap();
    let mut w = Weights::zeros(&cfg);
    let last = n - 1;
    for (k, layer) in w.layers_mut().iter_mut().enumerate() {
        if k < last {
            layer.set_tap(0, 0, 1, 1, 1.0);
        } else {
            layer.set_tap(0, 0, 1, 1, 0.5);
            layer.set_tap(0, 2, 1, 1, 0.5);
        }
    }
    w
}

#[test]
fn dyadic_net_quantizes_without_error() {
    for n in [4, 6] {
        let w = dyadic_net(n);
        let calib = calib_set(n, 10, 8, 40 + n as u64);
        let qw = quantizer::quantize_direct(&w, &calib).unwrap();
        let report = quantizer::quantization_report(&w, &qw, &calib).unwrap();
        assert_eq!(report.max_abs, 0.0);
        assert_eq!(report.mse, 0.0);
        for req in calib.requests() {
            let cropped = nnblend::tensor::center_crop(&req.pred0, n).unwrap();
            assert_eq!(engine::forward_int16(&qw, req).unwrap(), cropped);
        }
    }
}

#[test]
fn zero_network_reports_zero_error() {
    let cfg = NetworkConfig::new(5).unwrap();
    let w = Weights::zeros(&cfg);
    let calib = calib_set(5, 5, 4, 50);
    let qw = quantizer::quantize_direct(&w, &calib).unwrap();
    assert!(qw.layers().iter().all(|l| l.kernels.iter().all(|&v| v == 0) && l.biases.iter().all(|&v| v == 0)));
    assert!(qw.layers().iter().all(|l| l.weight_shift as u32 == quantizer::MAX_WEIGHT_SHIFT));
    let report = quantizer::quantization_report(&w, &qw, &calib).unwrap();
    assert_eq!((report.mean_abs, report.max_abs, report.mse), (0.0, 0.0, 0.0));
    assert!(report.per_patch.iter().all(|p| p.max_abs == 0.0));
    let z = QuantizedWeights::zeros(&cfg, 10);
    assert_eq!(quantizer::quantization_report(&w, &z, &calib).unwrap().max_abs, 0.0);
}

#[test]
fn errors_are_reported() {
    assert!(matches!(CalibrationSet::new(vec![]), Err(Error::Argument(_))));
    let mut w = Weights::random(&NetworkConfig::new(4).unwrap(), 1);
    w.layers_mut()[2].kernels[5] = 40000.0;
    let calib = calib_set(4, 2, 2, 1);
    match quantizer::quantize_direct(&w, &calib) {
        Err(Error::Infeasible { layer, .. }) => assert_eq!(layer, 2),
        other => panic!("{other:?}"),
    }
    let w5 = Weights::random(&NetworkConfig::new(5).unwrap(), 1);
    let qw4 = QuantizedWeights::zeros(&NetworkConfig::new(4).unwrap(), 10);
    assert!(matches!(quantizer::quantization_report(&w5, &qw4, &calib), Err(Error::Argument(_))));
    let tiny = CalibrationSet::new(vec![nnblend::engine::BlendRequest::new(
        Tensor::zeros(1, 8, 8).unwrap(),
        Tensor::zeros(1, 8, 8).unwrap(),
        10,
    )
    .unwrap()])
    .unwrap();
    assert!(quantizer::quantize_direct(&w5, &tiny).is_err());
}

#[test]
fn range_start_is_never_better_than_search() {
    let w = Weights::random(&NetworkConfig::new(5).unwrap(), 61);
    let calib = calib_set(5, 30, 4, 61);
    let direct = quantizer::quantize_direct(&w, &calib).unwrap();
    let ranges = quantizer::quantize_from_ranges(&w, &calib).unwrap();
    assert!(quantizer::output_mse(&w, &direct, &calib).unwrap() <= quantizer::output_mse(&w, &ranges, &calib).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weight_shift_feasibility_is_monotone(scale in 0.001f32..5000.0, seed in any::<u64>(), frac_in in -4i32..8, layer in 0usize..3) {
        let mut r = rng(seed);
        let (cin, cout) = layer_shapes(4)[layer];
        let lw = LayerWeights {
            in_channels: cin,
            out_channels: cout,
            kernels: (0..cin * cout * 9).map(|_| r.random_range(-scale..scale)).collect(),
            biases: (0..cout).map(|_| r.random_range(-1.0f32..1.0)).collect(),
        };
        let feasible: Vec<bool> = (0..=quantizer::MAX_WEIGHT_SHIFT)
            .map(|s| quantizer::weight_shift_feasible(&lw, layer, frac_in, 10, s))
            .collect();
        if let Some(top) = feasible.iter().rposition(|&f| f) {
            prop_assert!(feasible[..=top].iter().all(|&f| f));
            let q = quantizer::quantize_layer(&lw, layer, frac_in, 10).unwrap();
            prop_assert_eq!(q.weight_shift as usize, top);
            for (&f, &v) in lw.kernels.iter().zip(&q.kernels) {
                let s = q.weight_shift as i32;
                prop_assert!((f as f64 - v as f64 * 2f64.powi(-s)).abs() <= 2f64.powi(-s - 1) + 1e-12);
            }
        } else {
            prop_assert!(quantizer::quantize_layer(&lw, layer, frac_in, 10).is_err());
        }
    }

    #[test]
    fn requantize_matches_floor_division(acc in any::<i32>(), shift in 0u32..31) {
        let want = if shift == 0 {
            acc as i64
        } else {
            (acc as i64 + (1i64 << (shift - 1))).div_euclid(1i64 << shift)
        };
        prop_assert_eq!(quantizer::integer_requantize(acc, shift) as i64, want.clamp(-32768, 32767));
    }
}
