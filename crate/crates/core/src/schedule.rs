use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    CosineAnnealing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(kind: ScheduleKind, lr_max: f64, lr_min: f64, total_steps: u64) -> Result<Self> {
        if !(lr_max > 0.0) || lr_min < 0.0 || lr_min > lr_max || !lr_max.is_finite() {
            return Err(Error::config(format!(
                "learning rate schedule needs 0 <= lr_min <= lr_max, got [{lr_min}, {lr_max}]"
            )));
        }
        if total_steps == 0 {
            return Err(Error::config("learning rate schedule needs total_steps >= 1"));
        }
        Ok(Self { kind, lr_max, lr_min, total_steps })
    }

    pub fn lr(&self, step: u64) -> Result<f64> {
        cosine_lr(self, step)
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total_steps))` for the cosine
/// schedule, `lr_max` for the constant one.
pub fn cosine_lr(schedule: &LrSchedule, step: u64) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(Error::config(format!(
            "schedule step {step} outside [0, {}]",
            schedule.total_steps
        )));
    }
    match schedule.kind {
        ScheduleKind::Constant => Ok(schedule.lr_max),
        ScheduleKind::CosineAnnealing => {
            let phase = std::f64::consts::PI * step as f64 / schedule.total_steps as f64;
            let lr = schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + phase.cos());
            Ok(lr.clamp(schedule.lr_min, schedule.lr_max))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> LrSchedule {
        LrSchedule::new(ScheduleKind::CosineAnnealing, 1e-3, 1e-5, 100).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let s = sched();
        assert_eq!(s.lr(0).unwrap(), 1e-3);
        assert_eq!(s.lr(100).unwrap(), 1e-5);
        assert!((s.lr(50).unwrap() - (1e-3 + 1e-5) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn monotone_non_increasing() {
        let s = LrSchedule::new(ScheduleKind::CosineAnnealing, 0.1, 0.0, 997).unwrap();
        let lrs: Vec<f64> = (0..=997).map(|t| s.lr(t).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn out_of_range_step() {
        assert!(matches!(sched().lr(101), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_bounds() {
        assert!(LrSchedule::new(ScheduleKind::Constant, 1e-3, 1e-2, 10).is_err());
        assert!(LrSchedule::new(ScheduleKind::Constant, 1e-3, 0.0, 0).is_err());
    }
}
