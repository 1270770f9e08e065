use nnblend::gating::{decide, should_apply, CuMeta, GatingMode};
use nnblend::Error;
use proptest::prelude::*;

/// The mode conditions restated as plain boolean formulas.
fn expected(cu: &CuMeta) -> (bool, bool, bool) {
    let d_past = cu.poc_current as i64 - cu.poc_ref0 as i64;
    let d_future = cu.poc_ref1 as i64 - cu.poc_current as i64;
    let sym = d_past > 0 && d_past == d_future;
    let slow = !(cu.is_affine || cu.uses_ciip || cu.uses_bcw);
    let default = slow && sym && !cu.uses_smvd;
    let fast = default && cu.width >= 9 && cu.height >= 9;
    (default, fast, slow)
}

#[test]
fn truth_table() {
    let mut seen = [0usize; 3];
    for bits in 0u32..32 {
        for (poc_cur, poc0, poc1) in [(4, 2, 6), (4, 0, 16)] {
            for side in [8u32, 16] {
                // the fifth flag toggles between a square and a tall block
                let cu = CuMeta {
                    is_affine: bits & 1 != 0,
                    uses_ciip: bits & 2 != 0,
                    uses_bcw: bits & 4 != 0,
                    uses_smvd: bits & 8 != 0,
                    poc_current: poc_cur,
                    poc_ref0: poc0,
                    poc_ref1: poc1,
                    width: side,
                    height: if bits & 16 != 0 { 32 } else { side },
                    is_biprediction: true,
                };
                let (d, f, s) = expected(&cu);
                let got = decide(&cu).unwrap();
                assert_eq!((got.default, got.fast, got.slow), (d, f, s), "{cu:?}");
                for (i, v) in [d, f, s].into_iter().enumerate() {
                    seen[i] += v as usize;
                }
            }
        }
    }
    // every mode is exercised both ways
    assert!(seen.iter().all(|&n| n > 0 && n < 128));
}

#[test]
fn table_rows() {
    let affine = CuMeta { is_affine: true, ..Default::default() };
    for mode in GatingMode::ALL {
        assert!(!should_apply(&affine, mode).unwrap());
    }
    let small = CuMeta { width: 8, height: 8, poc_current: 4, poc_ref0: 2, poc_ref1: 6, ..Default::default() };
    assert!(should_apply(&small, GatingMode::Default).unwrap());
    assert!(!should_apply(&small, GatingMode::Fast).unwrap());
    let asym = CuMeta { poc_current: 4, poc_ref0: 0, poc_ref1: 16, ..Default::default() };
    assert!(!should_apply(&asym, GatingMode::Default).unwrap());
    assert!(should_apply(&asym, GatingMode::Slow).unwrap());
    let nine = CuMeta { width: 9, height: 9, ..Default::default() };
    assert!(should_apply(&nine, GatingMode::Fast).unwrap());
}

#[test]
fn invalid_cus() {
    let uni = CuMeta { is_biprediction: false, ..Default::default() };
    assert!(matches!(should_apply(&uni, GatingMode::Slow), Err(Error::Precondition(_))));
    let tiny = CuMeta { width: 2, ..Default::default() };
    assert!(matches!(should_apply(&tiny, GatingMode::Default), Err(Error::Argument(_))));
    assert!("medium".parse::<GatingMode>().is_err());
    for mode in GatingMode::ALL {
        assert_eq!(mode.to_string().parse::<GatingMode>().unwrap(), mode);
    }
}

fn any_cu() -> impl Strategy<Value = CuMeta> {
    (any::<[bool; 4]>(), -64i32..64, -64i32..64, -64i32..64, 4u32..130, 4u32..130).prop_map(
        |(f, cur, r0, r1, width, height)| CuMeta {
            is_affine: f[0],
            uses_ciip: f[1],
            uses_bcw: f[2],
            uses_smvd: f[3],
            poc_current: cur,
            poc_ref0: r0,
            poc_ref1: r1,
            width,
            height,
            is_biprediction: true,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn modes_are_nested(cu in any_cu()) {
        let d = decide(&cu).unwrap();
        prop_assert!(!d.fast || d.default);
        prop_assert!(!d.default || d.slow);
        prop_assert_eq!((d.default, d.fast, d.slow), expected(&cu));
    }

    #[test]
    fn same_side_references_are_never_symmetric(cur in -1000i32..1000, a in 1i32..500, b in 1i32..500, past in any::<bool>()) {
        let (r0, r1) = if past { (cur - a, cur - b) } else { (cur + a, cur + b) };
        let cu = CuMeta { poc_current: cur, poc_ref0: r0, poc_ref1: r1, ..Default::default() };
        prop_assert!(!cu.symmetric_poc());
    }
}
