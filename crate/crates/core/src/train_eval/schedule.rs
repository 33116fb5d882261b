//! Linear warmup followed by linear decay.

use serde::{Deserialize, Serialize};

use crate::error::{MdstError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub peak: f64,
    pub final_lr: f64,
}

impl LrSchedule {
    /// Warmup covers `round(warmup_fraction · total_steps)` optimizer steps.
    pub fn new(total_steps: usize, warmup_fraction: f64, peak: f64, final_lr: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(MdstError::Config("schedule needs at least one step".into()));
        }
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(MdstError::Config(format!("warmup fraction {warmup_fraction} outside [0,1)")));
        }
        if final_lr.is_nan() || final_lr > peak || final_lr < 0.0 {
            return Err(MdstError::Config(format!("final lr {final_lr} must lie in [0, peak {peak}]")));
        }
        let warmup_steps = ((warmup_fraction * total_steps as f64).round() as usize).min(total_steps - 1);
        Ok(Self {
            total_steps,
            warmup_steps,
            peak,
            final_lr,
        })
    }

    /// Learning rate at step `s ∈ [0, total_steps]`; the k-th update (1-based) uses `lr(k)`.
    pub fn lr(&self, step: usize) -> f64 {
        let s = step.min(self.total_steps) as f64;
        let w = self.warmup_steps as f64;
        if step <= self.warmup_steps && self.warmup_steps > 0 {
            return self.peak * s / w;
        }
        let t = self.total_steps as f64;
        self.peak + (self.final_lr - self.peak) * (s - w) / (t - w)
    }
}
