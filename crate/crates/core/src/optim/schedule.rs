use serde::{Deserialize, Serialize};

/// Step decay: `initial_lr * decay_factor ^ floor(epoch / decay_every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial_lr: lr,
            decay_factor: 1.0,
            decay_every: usize::MAX,
        }
    }

    /// Starts at 0.1 and drops tenfold every 35 epochs.
    pub fn step_decay() -> Self {
        LrSchedule {
            initial_lr: 0.1,
            decay_factor: 0.1,
            decay_every: 35,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = epoch / self.decay_every.max(1);
        self.initial_lr * self.decay_factor.powi(drops as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_values() {
        let s = LrSchedule::step_decay();
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(34), 0.1);
        assert!((s.lr_at(35) - 0.01).abs() < 1e-17);
        assert!((s.lr_at(70) - 0.001).abs() < 1e-18);
        assert!((s.lr_at(99) - 0.001).abs() < 1e-18);
        assert_eq!(LrSchedule::constant(0.3).lr_at(1_000_000), 0.3);
    }
}
