use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{DatasetMeta, Ipu, PaddedSeq, Stream};
use crate::Scalar;

/// Per-word network input.
#[derive(Clone, Debug, PartialEq)]
pub struct WordInput<T> {
    /// Normalized F0 frames padded to the configured maximum.
    pub f0: PaddedSeq<T>,
    pub emb: Vec<T>,
    /// Batch padding word, masked out of attention.
    pub pad: bool,
}

/// One IPU in the form the network consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    pub id: String,
    pub words: Vec<WordInput<T>>,
    /// `true` for padded frames; its length is the decoder length.
    pub frame_pad: Vec<bool>,
    /// Quantized targets per stream, one token per frame (padded frames
    /// hold arbitrary tokens and are never scored).
    pub targets: Option<Vec<Vec<usize>>>,
}

impl<T: Scalar> ModelInput<T> {
    /// Normalizes and snaps F0 to the quantizer grid, pads per-word F0 to
    /// `max_f0_len`, and quantizes the (already normalized) targets.
    pub fn from_ipu(ipu: &Ipu, meta: &DatasetMeta, cfg: &ModelConfig) -> Result<Self> {
        if meta.quantizer.n_bins != cfg.n_bins {
            return Err(Error::Config(format!(
                "dataset quantizer has {} bins, model expects {}",
                meta.quantizer.n_bins, cfg.n_bins
            )));
        }
        let q = meta.quantizer;
        let mut words = Vec::with_capacity(ipu.words.len());
        for w in &ipu.words {
            if w.emb.len() != cfg.d_emb {
                return Err(Error::Config(format!(
                    "IPU `{}`: embedding of `{}` has dimension {}, model expects {}",
                    ipu.id,
                    w.text,
                    w.emb.len(),
                    cfg.d_emb
                )));
            }
            let f0: Vec<T> = meta
                .f0_bounds
                .normalize(&w.f0)?
                .into_iter()
                .map(|v| T::of(q.dequantize(q.quantize(v))))
                .collect();
            words.push(WordInput {
                f0: PaddedSeq::pad(&f0, cfg.max_f0_len),
                emb: w.emb.iter().map(|&v| T::of(v)).collect(),
                pad: false,
            });
        }
        let n = ipu.targets.len().min(cfg.max_out_len);
        let targets = Stream::ALL
            .iter()
            .map(|&s| q.quantize_all(&ipu.targets.stream(s)[..n]))
            .collect();
        Ok(Self {
            id: ipu.id.clone(),
            words,
            frame_pad: vec![false; n],
            targets: Some(targets),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frame_pad.len()
    }

    pub fn true_frames(&self) -> usize {
        self.frame_pad.iter().filter(|&&p| !p).count()
    }

    pub fn word_padding(&self) -> Vec<bool> {
        self.words.iter().map(|w| w.pad).collect()
    }

    pub fn without_targets(&self) -> Self {
        Self {
            targets: None,
            ..self.clone()
        }
    }

    /// Appends padding words up to `n` words.
    pub fn pad_words(&mut self, n: usize, cfg: &ModelConfig) {
        while self.words.len() < n {
            self.words.push(WordInput {
                f0: PaddedSeq::pad(&[], cfg.max_f0_len),
                emb: vec![T::zero(); cfg.d_emb],
                pad: true,
            });
        }
    }

    /// Appends padded frames up to `n` frames.
    pub fn pad_frames(&mut self, n: usize, cfg: &ModelConfig) {
        while self.frame_pad.len() < n {
            self.frame_pad.push(true);
            if let Some(t) = &mut self.targets {
                for s in t.iter_mut() {
                    s.push(cfg.pad());
                }
            }
        }
    }
}
