use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform scalar quantizer over `[lo, hi]` with `n_bins` equal-width bins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerSpec {
    pub lo: f64,
    pub hi: f64,
    pub n_bins: usize,
}

impl Default for QuantizerSpec {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 1.0,
            n_bins: 256,
        }
    }
}

impl QuantizerSpec {
    pub fn new(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        let q = Self { lo, hi, n_bins };
        q.validate()?;
        Ok(q)
    }

    /// Unit-interval quantizer, the one used for normalized streams.
    pub fn unit(n_bins: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n_bins)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) {
            return Err(Error::DegenerateRange {
                lo: self.lo,
                hi: self.hi,
            });
        }
        if self.n_bins == 0 {
            return Err(Error::Config("quantizer needs at least one bin".into()));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.n_bins as f64
    }

    /// Largest possible `|dequantize(quantize(x)) - clamp(x)|`.
    pub fn max_error(&self) -> f64 {
        self.bin_width() / 2.0
    }

    pub fn quantize(&self, x: f64) -> usize {
        let x = if x.is_nan() { self.lo } else { x.clamp(self.lo, self.hi) };
        let bin = ((x - self.lo) / (self.hi - self.lo) * self.n_bins as f64).floor() as usize;
        bin.min(self.n_bins - 1)
    }

    /// Center of bin `b` (clamped to the last bin).
    pub fn dequantize(&self, b: usize) -> f64 {
        let b = b.min(self.n_bins - 1);
        self.lo + (b as f64 + 0.5) * self.bin_width()
    }

    pub fn quantize_all(&self, xs: &[f64]) -> Vec<usize> {
        xs.iter().map(|&x| self.quantize(x)).collect()
    }

    pub fn dequantize_all(&self, bins: &[usize]) -> Vec<f64> {
        bins.iter().map(|&b| self.dequantize(b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let q = QuantizerSpec::default();
        assert_eq!(q.quantize(0.0), 0);
        assert_eq!(q.quantize(1.0), 255);
        assert_eq!(q.quantize(-3.0), 0);
        assert_eq!(q.quantize(7.0), 255);
        assert_eq!(q.dequantize(0), 0.5 / 256.0);
    }

    #[test]
    fn dense_grid_round_trip_and_monotone() {
        let q = QuantizerSpec::default();
        let mut prev = 0;
        for i in 0..10_000 {
            let x = i as f64 / 9_999.0;
            let b = q.quantize(x);
            assert!(b >= prev);
            prev = b;
            assert!((q.dequantize(b) - x).abs() <= 1.0 / 512.0);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(QuantizerSpec::new(1.0, 1.0, 8).is_err());
        assert!(QuantizerSpec::new(0.0, 1.0, 0).is_err());
    }
}
