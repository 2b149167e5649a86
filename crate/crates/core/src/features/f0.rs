use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis hop of every F0 track, in seconds.
pub const F0_HOP_S: f64 = 0.005;
/// Lower bound of the F0 range of human speech, in Hz.
pub const F0_MIN_HZ: f64 = 50.0;
/// Upper bound of the F0 range of human speech, in Hz.
pub const F0_MAX_HZ: f64 = 550.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Frame {
    pub value: f64,
    pub voiced: bool,
}

/// Frame-level fundamental frequency at a fixed 5 ms hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Track {
    pub frames: Vec<F0Frame>,
    pub hop_s: f64,
}

impl F0Track {
    /// Builds a track from raw values where `0`, negative and non-finite
    /// entries mark unvoiced frames.
    pub fn from_values(values: &[f64]) -> Self {
        let frames = values
            .iter()
            .map(|&v| F0Frame {
                value: if v.is_finite() && v > 0.0 { v } else { 0.0 },
                voiced: v.is_finite() && v > 0.0,
            })
            .collect();
        Self {
            frames,
            hop_s: F0_HOP_S,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 * self.hop_s
    }

    pub fn values(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.value).collect()
    }

    pub fn is_defined(&self) -> bool {
        self.frames.iter().all(|f| f.voiced)
    }
}

/// Fills unvoiced runs by linear interpolation between the nearest voiced
/// neighbours. Leading and trailing runs copy the nearest voiced value.
/// Voiced frames are left untouched.
pub fn interpolate_f0(track: &F0Track) -> Result<F0Track> {
    let voiced: Vec<usize> = (0..track.len()).filter(|&i| track.frames[i].voiced).collect();
    let (Some(&first), Some(&last)) = (voiced.first(), voiced.last()) else {
        return Err(Error::EmptyVoicing);
    };
    let mut values = track.values();
    for v in &mut values[..first] {
        *v = track.frames[first].value;
    }
    for v in &mut values[last + 1..] {
        *v = track.frames[last].value;
    }
    for pair in voiced.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (track.frames[a].value, track.frames[b].value);
        let span = (b - a) as f64;
        for (i, v) in values.iter_mut().enumerate().take(b).skip(a + 1) {
            *v = va + (vb - va) * (i - a) as f64 / span;
        }
    }
    Ok(F0Track {
        frames: values
            .into_iter()
            .map(|value| F0Frame { value, voiced: true })
            .collect(),
        hop_s: track.hop_s,
    })
}

/// Clamps every frame to the 50..=550 Hz speech range.
pub fn clip_f0(track: &F0Track) -> F0Track {
    F0Track {
        frames: track
            .frames
            .iter()
            .map(|f| F0Frame {
                value: f.value.clamp(F0_MIN_HZ, F0_MAX_HZ),
                voiced: f.voiced,
            })
            .collect(),
        hop_s: track.hop_s,
    }
}

/// Interpolation followed by clipping.
pub fn prepare_f0(track: &F0Track) -> Result<F0Track> {
    Ok(clip_f0(&interpolate_f0(track)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(values: &[Option<f64>]) -> F0Track {
        F0Track::from_values(&values.iter().map(|v| v.unwrap_or(0.0)).collect::<Vec<_>>())
    }

    #[test]
    fn interior_gap_is_linear() {
        let out = interpolate_f0(&track(&[Some(100.0), None, None, Some(200.0)])).unwrap();
        let v = out.values();
        assert_eq!(v[0], 100.0);
        assert!((v[1] - 100.0 - 100.0 / 3.0).abs() < 1e-12);
        assert!((v[2] - 100.0 - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(v[3], 200.0);
        assert!(out.is_defined());
    }

    #[test]
    fn edges_extend_nearest_voiced_value() {
        let out = interpolate_f0(&track(&[None, Some(120.0), None])).unwrap();
        assert_eq!(out.values(), vec![120.0; 3]);
    }

    #[test]
    fn fully_voiced_is_identity() {
        let t = track(&[Some(90.0), Some(95.5), Some(310.0)]);
        assert_eq!(interpolate_f0(&t).unwrap(), t);
    }

    #[test]
    fn no_voiced_frame_is_an_error() {
        let err = interpolate_f0(&track(&[None, None])).unwrap_err();
        assert!(err.to_string().contains("empty voicing"));
    }

    #[test]
    fn clip_bounds() {
        let out = clip_f0(&track(&[Some(30.0), Some(600.0), Some(200.0)]));
        assert_eq!(out.values(), vec![50.0, 550.0, 200.0]);
    }

    proptest! {
        #[test]
        fn preparation_is_idempotent(
            raw in proptest::collection::vec(prop_oneof![Just(0.0), 1.0f64..900.0], 1..60)
        ) {
            prop_assume!(raw.iter().any(|&v| v > 0.0));
            let once = prepare_f0(&F0Track::from_values(&raw)).unwrap();
            let twice = prepare_f0(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.values().iter().all(|&v| (F0_MIN_HZ..=F0_MAX_HZ).contains(&v)));
        }
    }
}
