use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse-square-root schedule with linear warmup:
/// `scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub d_model: usize,
    pub warmup_steps: u64,
    pub scale: f64,
}

impl LrSchedule {
    pub fn new(d_model: usize, warmup_steps: u64) -> Result<Self> {
        Self::scaled(d_model, warmup_steps, 1.0)
    }

    pub fn scaled(d_model: usize, warmup_steps: u64, scale: f64) -> Result<Self> {
        if warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be at least 1".into()));
        }
        if d_model == 0 || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config("schedule needs d_model > 0 and a positive scale".into()));
        }
        Ok(Self {
            d_model,
            warmup_steps,
            scale,
        })
    }

    pub fn rate(&self, step: u64) -> Result<f64> {
        if step == 0 {
            return Err(Error::StepZero);
        }
        let s = step as f64;
        let w = self.warmup_steps as f64;
        Ok(self.scale * (self.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_zero_is_rejected() {
        let s = LrSchedule::new(64, 4000).unwrap();
        assert!(matches!(s.rate(0), Err(Error::StepZero)));
        assert!(LrSchedule::new(64, 0).is_err());
    }

    #[test]
    fn rises_then_falls() {
        let s = LrSchedule::new(64, 100).unwrap();
        let rates: Vec<f64> = (1..=300).map(|k| s.rate(k).unwrap()).collect();
        assert!(rates[..100].windows(2).all(|w| w[0] < w[1]));
        assert!(rates[99..].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn scale_multiplies() {
        let a = LrSchedule::new(16, 10).unwrap();
        let b = LrSchedule::scaled(16, 10, 4.0).unwrap();
        assert_eq!(b.rate(7).unwrap(), 4.0 * a.rate(7).unwrap());
    }
}
