//! JSON-lines dataset of IPUs plus its normalization/quantizer sidecar.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ipu::{Ipu, Split, Stream, TARGET_FPS};
use super::normalize::Bounds;
use super::quantize::QuantizerSpec;
use super::F0_HOP_S;
use crate::error::{Error, Result};

pub const META_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub ipus: usize,
    pub words: usize,
    pub silences: usize,
    pub per_split: BTreeMap<String, usize>,
}

impl Counts {
    pub fn of(ipus: &[Ipu]) -> Self {
        let mut c = Counts {
            ipus: ipus.len(),
            ..Counts::default()
        };
        for split in [Split::Train, Split::ValSd, Split::TestSd, Split::TestSi] {
            c.per_split.insert(split.name().to_string(), 0);
        }
        for ipu in ipus {
            c.words += ipu.spoken_word_count();
            c.silences += ipu.words.len() - ipu.spoken_word_count();
            *c.per_split.entry(ipu.split.name().to_string()).or_default() += 1;
        }
        c
    }
}

/// Sidecar stored next to the dataset: per-stream bounds (training split),
/// F0 bounds, the quantizer and the frame geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub version: u32,
    pub target_bounds: BTreeMap<String, Bounds>,
    pub f0_bounds: Bounds,
    pub quantizer: QuantizerSpec,
    pub fps: f64,
    pub hop_s: f64,
    pub max_f0_len: usize,
    pub max_out_len: usize,
    pub d_emb: usize,
    pub counts: Counts,
}

impl DatasetMeta {
    pub fn bounds(&self, s: Stream) -> Result<Bounds> {
        self.target_bounds
            .get(s.name())
            .copied()
            .ok_or_else(|| Error::Dataset(format!("sidecar has no bounds for {s}")))
    }

    /// Sidecar for already-normalized data: identity bounds everywhere.
    pub fn unit(n_bins: usize, d_emb: usize, max_f0_len: usize, max_out_len: usize) -> Self {
        Self {
            version: META_VERSION,
            target_bounds: Stream::ALL
                .iter()
                .map(|s| (s.name().to_string(), Bounds { lo: 0.0, hi: 1.0 }))
                .collect(),
            f0_bounds: Bounds {
                lo: super::F0_MIN_HZ,
                hi: super::F0_MAX_HZ,
            },
            quantizer: QuantizerSpec {
                lo: 0.0,
                hi: 1.0,
                n_bins,
            },
            fps: TARGET_FPS,
            hop_s: F0_HOP_S,
            max_f0_len,
            max_out_len,
            d_emb,
            counts: Counts::default(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let meta: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if meta.version != META_VERSION {
            return Err(Error::Dataset(format!(
                "sidecar version {} unsupported",
                meta.version
            )));
        }
        meta.quantizer.validate()?;
        Ok(meta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub ipus: Vec<Ipu>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Ipu> {
        self.ipus.iter().filter(|i| i.split == split).collect()
    }

    pub fn speakers(&self, split: Split) -> Vec<&str> {
        let mut s: Vec<&str> = self
            .split(split)
            .iter()
            .map(|i| i.speaker_id.as_str())
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn load(jsonl: impl AsRef<Path>, meta: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            ipus: read_ipus(jsonl)?,
            meta: DatasetMeta::load(meta)?,
        })
    }

    pub fn save(&self, jsonl: impl AsRef<Path>, meta: impl AsRef<Path>) -> Result<()> {
        write_ipus(jsonl, &self.ipus)?;
        self.meta.save(meta)
    }
}

pub fn write_ipus(path: impl AsRef<Path>, ipus: &[Ipu]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ipu in ipus {
        serde_json::to_writer(&mut out, ipu)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one IPU per non-empty line; parse errors name the line.
pub fn read_ipus(path: impl AsRef<Path>) -> Result<Vec<Ipu>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut ipus = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ipu: Ipu = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset(format!("line {}: {e}", i + 1)))?;
        ipus.push(ipu);
    }
    Ok(ipus)
}
