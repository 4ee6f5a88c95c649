//! Training schedules: the two-phase density blend and the one-cycle
//! learning rate.

use crate::error::{CoreError, Result};

/// Two-phase schedule: the blend factor rises linearly from 0 to 1 across
/// phase 1, then holds at 1 (pure learned density) for the rest of training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSchedule {
    pub total_steps: usize,
    pub phase1_fraction: f64,
}

impl PhaseSchedule {
    pub fn new(total_steps: usize, phase1_fraction: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(CoreError::invalid("total_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&phase1_fraction) {
            return Err(CoreError::invalid("phase1_fraction must lie in [0,1]"));
        }
        Ok(PhaseSchedule {
            total_steps,
            phase1_fraction,
        })
    }

    pub fn phase1_steps(&self) -> usize {
        (self.total_steps as f64 * self.phase1_fraction).round() as usize
    }

    pub fn gamma(&self, step: usize) -> f64 {
        let p1 = self.phase1_steps();
        if p1 == 0 || step >= p1 {
            1.0
        } else {
            step as f64 / p1 as f64
        }
    }

    pub fn in_phase1(&self, step: usize) -> bool {
        step < self.phase1_steps()
    }
}

/// One-cycle policy: linear warmup from max/25 to the maximum rate over the
/// warmup fraction, then cosine anneal toward zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycleLr {
    pub max_lr: f64,
    pub warmup_fraction: f64,
}

impl OneCycleLr {
    pub fn new(max_lr: f64, warmup_fraction: f64) -> Result<Self> {
        if !(max_lr > 0.0) {
            return Err(CoreError::invalid("max_lr must be positive"));
        }
        if !(0.0 < warmup_fraction && warmup_fraction < 1.0) {
            return Err(CoreError::invalid("warmup_fraction must lie in (0,1)"));
        }
        Ok(OneCycleLr {
            max_lr,
            warmup_fraction,
        })
    }

    pub fn lr(&self, step: usize, total_steps: usize) -> f64 {
        let t = step as f64 / total_steps.max(1) as f64;
        let start = self.max_lr / 25.0;
        if t < self.warmup_fraction {
            let p = t / self.warmup_fraction;
            start + (self.max_lr - start) * p
        } else {
            let p = (t - self.warmup_fraction) / (1.0 - self.warmup_fraction);
            self.max_lr * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_is_zero_then_one() {
        let s = PhaseSchedule::new(1000, 0.2).unwrap();
        assert_eq!(s.gamma(0), 0.0);
        assert!((s.gamma(100) - 0.5).abs() < 1e-12);
        assert_eq!(s.gamma(200), 1.0);
        assert_eq!(s.gamma(999), 1.0);
        assert!(s.in_phase1(199));
        assert!(!s.in_phase1(200));
        for w in 1..1000 {
            assert!(s.gamma(w) >= s.gamma(w - 1));
        }
    }

    #[test]
    fn disabled_phase1_is_always_one() {
        let s = PhaseSchedule::new(1000, 0.0).unwrap();
        assert_eq!(s.gamma(0), 1.0);
        assert!(!s.in_phase1(0));
    }

    #[test]
    fn one_cycle_peaks_at_warmup_boundary() {
        let lr = OneCycleLr::new(1.5e-4, 0.3).unwrap();
        let total = 1000;
        let peak = lr.lr(300, total);
        assert!((peak - 1.5e-4).abs() < 1e-9);
        assert!(lr.lr(0, total) < peak);
        assert!(lr.lr(999, total) < 1e-5);
        // monotone up then down
        for s in 1..300 {
            assert!(lr.lr(s, total) >= lr.lr(s - 1, total));
        }
        for s in 301..1000 {
            assert!(lr.lr(s, total) <= lr.lr(s - 1, total));
        }
    }
}
