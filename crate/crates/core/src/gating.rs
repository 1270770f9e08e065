//! Per-CU decision on whether NN blending replaces the default average.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Codec metadata of one coding unit, as far as gating needs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CuMeta {
    pub is_affine: bool,
    pub uses_ciip: bool,
    /// Non-default BCW weight.
    pub uses_bcw: bool,
    pub uses_smvd: bool,
    pub poc_current: i32,
    pub poc_ref0: i32,
    pub poc_ref1: i32,
    pub width: u32,
    pub height: u32,
    pub is_biprediction: bool,
}

impl Default for CuMeta {
    /// A clean 16x16 bi-predicted CU with references one picture either side.
    fn default() -> Self {
        Self {
            is_affine: false,
            uses_ciip: false,
            uses_bcw: false,
            uses_smvd: false,
            poc_current: 1,
            poc_ref0: 0,
            poc_ref1: 2,
            width: 16,
            height: 16,
            is_biprediction: true,
        }
    }
}

impl CuMeta {
    /// Reference 0 strictly in the past, reference 1 strictly in the future,
    /// at equal distance.
    pub fn symmetric_poc(&self) -> bool {
        let past = self.poc_current as i64 - self.poc_ref0 as i64;
        let future = self.poc_ref1 as i64 - self.poc_current as i64;
        past == future && past > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GatingMode {
    Default,
    Fast,
    Slow,
}

impl GatingMode {
    pub const ALL: [GatingMode; 3] = [GatingMode::Default, GatingMode::Fast, GatingMode::Slow];
}

impl fmt::Display for GatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatingMode::Default => "default",
            GatingMode::Fast => "fast",
            GatingMode::Slow => "slow",
        })
    }
}

impl FromStr for GatingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "default" => Ok(GatingMode::Default),
            "fast" => Ok(GatingMode::Fast),
            "slow" => Ok(GatingMode::Slow),
            other => Err(Error::Argument(format!("unknown gating mode {other:?}"))),
        }
    }
}

pub fn should_apply(cu: &CuMeta, mode: GatingMode) -> Result<bool> {
    if !cu.is_biprediction {
        return Err(Error::Precondition("gating needs a bi-predicted CU".into()));
    }
    if cu.width < 4 || cu.height < 4 {
        return Err(Error::Argument(format!("CU {}x{} below the 4x4 minimum", cu.width, cu.height)));
    }
    let slow = !cu.is_affine && !cu.uses_ciip && !cu.uses_bcw;
    let default = slow && cu.symmetric_poc() && !cu.uses_smvd;
    Ok(match mode {
        GatingMode::Slow => slow,
        GatingMode::Default => default,
        GatingMode::Fast => default && cu.width > 8 && cu.height > 8,
    })
}

/// Decisions under all three modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateDecision {
    pub default: bool,
    pub fast: bool,
    pub slow: bool,
}

pub fn decide(cu: &CuMeta) -> Result<GateDecision> {
    Ok(GateDecision {
        default: should_apply(cu, GatingMode::Default)?,
        fast: should_apply(cu, GatingMode::Fast)?,
        slow: should_apply(cu, GatingMode::Slow)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_never_applies() {
        let cu = CuMeta { is_affine: true, ..Default::default() };
        for mode in GatingMode::ALL {
            assert!(!should_apply(&cu, mode).unwrap());
        }
    }

    #[test]
    fn eight_by_eight_is_not_fast() {
        let cu = CuMeta { width: 8, height: 8, ..Default::default() };
        assert!(should_apply(&cu, GatingMode::Default).unwrap());
        assert!(!should_apply(&cu, GatingMode::Fast).unwrap());
    }

    #[test]
    fn asymmetric_poc_only_in_slow() {
        let cu = CuMeta { poc_current: 4, poc_ref0: 0, poc_ref1: 16, ..Default::default() };
        assert!(!should_apply(&cu, GatingMode::Default).unwrap());
        assert!(should_apply(&cu, GatingMode::Slow).unwrap());
    }

    #[test]
    fn same_side_references_are_not_symmetric() {
        for (r0, r1) in [(0, 2), (6, 8), (4, 4), (8, 0)] {
            let cu = CuMeta { poc_current: 4, poc_ref0: r0, poc_ref1: r1, ..Default::default() };
            assert!(!cu.symmetric_poc(), "{r0} {r1}");
        }
    }

    #[test]
    fn uni_prediction_is_rejected() {
        let cu = CuMeta { is_biprediction: false, ..Default::default() };
        assert!(matches!(should_apply(&cu, GatingMode::Slow), Err(Error::Precondition(_))));
    }

    #[test]
    fn mode_names_round_trip() {
        for mode in GatingMode::ALL {
            assert_eq!(mode.to_string().parse::<GatingMode>().unwrap(), mode);
        }
        assert!("medium".parse::<GatingMode>().is_err());
    }
}
