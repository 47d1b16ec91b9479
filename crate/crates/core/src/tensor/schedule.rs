use super::{Result, TensorError};

/// Linear warm-up from 0 to `peak_lr`, then cosine decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    warmup_steps: u64,
    total_steps: u64,
    peak_lr: f64,
}

impl LrSchedule {
    pub fn new(warmup_steps: u64, total_steps: u64, peak_lr: f64) -> Result<Self> {
        if warmup_steps == 0 || warmup_steps >= total_steps {
            return Err(TensorError::Validation(format!(
                "need 0 < warmup_steps ({warmup_steps}) < total_steps ({total_steps})"
            )));
        }
        if !(peak_lr > 0.0 && peak_lr.is_finite()) {
            return Err(TensorError::Validation(format!("peak_lr must be positive, got {peak_lr}")));
        }
        Ok(Self { warmup_steps, total_steps, peak_lr })
    }

    pub fn warmup_steps(&self) -> u64 {
        self.warmup_steps
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn peak_lr(&self) -> f64 {
        self.peak_lr
    }

    pub fn lr_at_step(&self, step: u64) -> f64 {
        if step > self.total_steps {
            log::warn!("step {step} is past the schedule end ({}); using lr 0", self.total_steps);
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let progress = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_landmarks() {
        let s = LrSchedule::new(100, 300, 1e-3).unwrap();
        assert_eq!(s.lr_at_step(0), 0.0);
        assert_eq!(s.lr_at_step(100), 1e-3);
        assert!((s.lr_at_step(200) - 5e-4).abs() < 1e-18);
        assert!(s.lr_at_step(300).abs() < 1e-18);
        assert_eq!(s.lr_at_step(301), 0.0);
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        let s = LrSchedule::new(5000, 50_000, 5e-6).unwrap();
        let before = s.lr_at_step(4999);
        let at = s.lr_at_step(5000);
        let after = s.lr_at_step(5001);
        assert!((at - before).abs() <= 5e-6 / 5000.0 + 1e-18);
        assert!((at - after).abs() < 1e-12);
    }

    #[test]
    fn invalid_schedules() {
        assert!(LrSchedule::new(0, 10, 1.0).is_err());
        assert!(LrSchedule::new(10, 10, 1.0).is_err());
        assert!(LrSchedule::new(1, 10, 0.0).is_err());
    }
}
