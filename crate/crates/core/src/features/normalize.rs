use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Min/max of one stream, taken over the training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    /// Min and max of the finite values, or `None` if there are none.
    pub fn of<'a>(values: impl IntoIterator<Item = &'a f64>) -> Option<Self> {
        values
            .into_iter()
            .filter(|v| v.is_finite())
            .fold(None, |acc, &v| match acc {
                None => Some(Bounds { lo: v, hi: v }),
                Some(b) => Some(Bounds {
                    lo: b.lo.min(v),
                    hi: b.hi.max(v),
                }),
            })
    }

    pub fn normalize(&self, values: &[f64]) -> Result<Vec<f64>> {
        normalize_stream(values, self.lo, self.hi)
    }

    /// Maps normalized values back to original units.
    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| self.lo + v * (self.hi - self.lo)).collect()
    }
}

/// `v -> (v - lo) / (hi - lo)`, clamped to `[0, 1]`.
pub fn normalize_stream(values: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(hi > lo) {
        return Err(Error::DegenerateRange { lo, hi });
    }
    Ok(values
        .iter()
        .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let out = normalize_stream(&[-2.0, 6.0, 2.0, 100.0], -2.0, 6.0).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.5, 1.0]);
    }

    #[test]
    fn degenerate_range() {
        let err = normalize_stream(&[1.0], 3.0, 3.0).unwrap_err();
        assert!(err.to_string().contains("degenerate range"));
    }

    #[test]
    fn denormalize_inverts_in_range() {
        let b = Bounds { lo: -10.0, hi: 30.0 };
        let raw = [-10.0, 0.0, 12.5, 30.0];
        let back = b.denormalize(&b.normalize(&raw).unwrap());
        for (x, y) in raw.iter().zip(back) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
