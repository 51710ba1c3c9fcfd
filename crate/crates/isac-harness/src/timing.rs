//! Frame-timing accounting from slot counts.

use isac_core::metrics::{FrameTiming, FrameVariant};
use isac_core::IsacError;

/// Slot counts and durations of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotBudget {
    pub tracking_slots: usize,
    pub inference_slots: usize,
    /// Hierarchical-training slots of the SSB stage; only charged to the RF-only variant.
    pub ssb_slots: usize,
    /// Slot duration (s).
    pub slot_s: f64,
    /// Subframe duration `T_RS + T_data` (s).
    pub subframe_s: f64,
    pub n_sub: usize,
}

/// Builds frame timing: `T_RS` from tracking plus inference slots, `T_data` as the rest of the
/// subframe, and `T_SSB` from the training slots for the RF-only variant and zero otherwise.
pub fn frame_timing_model(variant: FrameVariant, budget: SlotBudget) -> Result<FrameTiming, IsacError> {
    if !(budget.slot_s >= 0.0 && budget.subframe_s > 0.0) {
        return Err(IsacError::InfeasibleTiming("slot and subframe durations must be positive".into()));
    }
    let t_rs = (budget.tracking_slots + budget.inference_slots) as f64 * budget.slot_s;
    if t_rs >= budget.subframe_s {
        return Err(IsacError::InfeasibleTiming(format!(
            "reference-signal stage of {t_rs} s fills the {} s subframe",
            budget.subframe_s
        )));
    }
    let t_ssb = match variant {
        FrameVariant::RfOnly => budget.ssb_slots as f64 * budget.slot_s,
        FrameVariant::VisionAided => 0.0,
    };
    Ok(FrameTiming { t_ssb, t_rs, t_data: budget.subframe_s - t_rs, n_sub: budget.n_sub, variant })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget(tracking: usize, inference: usize, slot: f64, subframe: f64) -> SlotBudget {
        SlotBudget { tracking_slots: tracking, inference_slots: inference, ssb_slots: 16, slot_s: slot, subframe_s: subframe, n_sub: 10 }
    }

    #[test]
    fn vision_aided_stage_durations() {
        let t = frame_timing_model(FrameVariant::VisionAided, budget(2, 1, 0.5e-3, 0.1)).unwrap();
        assert!((t.t_rs - 1.5e-3).abs() < 1e-15);
        assert!((t.t_data - 98.5e-3).abs() < 1e-15);
        assert_eq!(t.t_ssb, 0.0);
    }

    #[test]
    fn zero_slots_give_zero_rs() {
        let t = frame_timing_model(FrameVariant::VisionAided, budget(0, 0, 0.5e-3, 0.1)).unwrap();
        assert_eq!(t.t_rs, 0.0);
        assert_eq!(t.t_data, 0.1);
    }

    #[test]
    fn rf_only_frame_is_longer() {
        let b = budget(2, 1, 0.5e-3, 0.1);
        let rf = frame_timing_model(FrameVariant::RfOnly, b).unwrap();
        let va = frame_timing_model(FrameVariant::VisionAided, b).unwrap();
        assert_eq!((rf.t_rs, rf.t_data), (va.t_rs, va.t_data));
        assert!(rf.t_frame() > va.t_frame());
    }

    #[test]
    fn full_rs_stage_is_infeasible() {
        let err = frame_timing_model(FrameVariant::VisionAided, budget(150, 50, 0.5e-3, 0.1)).unwrap_err();
        assert!(matches!(err, IsacError::InfeasibleTiming(_)));
    }
}
