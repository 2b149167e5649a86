//! Raw utterances to IPU dataset.
//!
//! Raw input is JSON lines, one utterance per line:
//!
//! ```json
//! {"id": "talk1", "speaker_id": "spk1",
//!  "words": [{"text": "hello", "start_s": 0.10, "end_s": 0.42}, ...],
//!  "f0": [0, 0, 181.2, ...],
//!  "targets": {"AU01": [...], ..., "RZ": [...]}}
//! ```
//!
//! `f0` is sampled every 5 ms with `0` for unvoiced frames; targets are in
//! original units at 24 frames per second, starting at time zero.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Counts, Dataset, DatasetMeta, META_VERSION};
use super::embed::pseudo_embed;
use super::f0::{prepare_f0, F0Track, F0_HOP_S};
use super::ipu::{
    frame_span, segment_ipus, word_f0_frames, Ipu, Split, Stream, Targets, TimedWord, WordToken,
    SILENCE_TEXT, TARGET_FPS,
};
use super::normalize::Bounds;
use super::quantize::QuantizerSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawWord {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawUtterance {
    pub id: String,
    pub speaker_id: String,
    pub words: Vec<RawWord>,
    pub f0: Vec<f64>,
    pub targets: Targets,
}

/// Writes one utterance per line, the format read by [`read_raw_utterances`].
pub fn write_raw_utterances(path: impl AsRef<Path>, utterances: &[RawUtterance]) -> Result<()> {
    let mut out = String::new();
    for u in utterances {
        out.push_str(&serde_json::to_string(u)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses raw utterances; errors carry the 1-based line number.
pub fn read_raw_utterances(path: impl AsRef<Path>) -> Result<Vec<RawUtterance>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: RawUtterance = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset(format!("line {}: {e}", i + 1)))?;
        check_words(&utt).map_err(|e| Error::Dataset(format!("line {}: {e}", i + 1)))?;
        out.push(utt);
    }
    Ok(out)
}

fn check_words(utt: &RawUtterance) -> Result<()> {
    for (i, w) in utt.words.iter().enumerate() {
        if !(w.end_s > w.start_s) || w.start_s < 0.0 {
            return Err(Error::TimingOutOfRange(format!(
                "word {i} `{}` has interval [{}, {})",
                w.text, w.start_s, w.end_s
            )));
        }
        if i > 0 && w.start_s < utt.words[i - 1].end_s {
            return Err(Error::TimingOutOfRange(format!(
                "word {i} `{}` overlaps or precedes its predecessor",
                w.text
            )));
        }
    }
    Ok(())
}

/// Where word embeddings come from.
#[derive(Clone, Debug)]
pub enum EmbeddingSource {
    /// Hash-seeded stand-in vectors of the given dimension.
    Pseudo(usize),
    /// Precomputed vectors keyed by `utterance_id:word_index`, plus an entry
    /// keyed `,` used for inserted silences.
    Table { dim: usize, vectors: HashMap<String, Vec<f64>> },
}

impl EmbeddingSource {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSource::Pseudo(d) | EmbeddingSource::Table { dim: d, .. } => *d,
        }
    }

    /// Reads a `.emb` file: one `key v1 v2 ...` entry per line, whitespace
    /// separated, `#` comments allowed.
    pub fn read_table(path: impl AsRef<Path>) -> Result<Self> {
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default().to_string();
            let v: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Dataset(format!("embedding line {}: {e}", i + 1)))?;
            if *dim.get_or_insert(v.len()) != v.len() || v.is_empty() {
                return Err(Error::Dataset(format!(
                    "embedding line {}: dimension {} differs from {}",
                    i + 1,
                    v.len(),
                    dim.unwrap_or(0)
                )));
            }
            vectors.insert(key, v);
        }
        let dim = dim.ok_or_else(|| Error::Dataset("embedding file is empty".into()))?;
        Ok(EmbeddingSource::Table { dim, vectors })
    }

    fn lookup(&self, utt: &str, w: &TimedWord) -> Result<Vec<f64>> {
        match self {
            EmbeddingSource::Pseudo(d) => Ok(pseudo_embed(&w.text, *d)),
            EmbeddingSource::Table { vectors, .. } => {
                let key = match w.source_index {
                    Some(i) if !w.is_silence => format!("{utt}:{i}"),
                    _ => SILENCE_TEXT.to_string(),
                };
                vectors
                    .get(&key)
                    .cloned()
                    .ok_or_else(|| Error::Dataset(format!("no embedding for `{key}`")))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub seed: u64,
    /// Speakers held out entirely for the speaker-independent test split.
    pub si_speakers: BTreeSet<String>,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub n_bins: usize,
    pub max_f0_len: usize,
    pub max_out_len: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            si_speakers: BTreeSet::new(),
            train_fraction: 0.8,
            val_fraction: 0.1,
            n_bins: 256,
            max_f0_len: 100,
            max_out_len: 124,
        }
    }
}

/// Runs the full feature pipeline: F0 preparation, IPU segmentation, word F0
/// assignment, embeddings, target slicing, split assignment and
/// normalization with training-split bounds.
pub fn preprocess(
    utterances: &[RawUtterance],
    embeddings: &EmbeddingSource,
    opts: &PreprocessOptions,
) -> Result<Dataset> {
    let quantizer = QuantizerSpec::unit(opts.n_bins)?;
    let mut ipus = Vec::new();
    for utt in utterances {
        ipus.extend(utterance_ipus(utt, embeddings, opts)?);
    }
    assign_splits(&mut ipus, opts);

    let train: Vec<&Ipu> = ipus.iter().filter(|i| i.split == Split::Train).collect();
    if train.is_empty() {
        return Err(Error::EmptySplit(Split::Train.name().into()));
    }
    let mut target_bounds = std::collections::BTreeMap::new();
    for s in Stream::ALL {
        let b = Bounds::of(train.iter().flat_map(|i| i.targets.stream(s))).expect("train is non-empty");
        target_bounds.insert(s.name().to_string(), widen_degenerate(b, s.name()));
    }
    let f0_bounds = Bounds::of(train.iter().flat_map(|i| i.words.iter().flat_map(|w| &w.f0)))
        .map(|b| widen_degenerate(b, "F0"))
        .unwrap_or(Bounds {
            lo: super::F0_MIN_HZ,
            hi: super::F0_MAX_HZ,
        });

    for ipu in &mut ipus {
        let streams = Stream::ALL
            .iter()
            .map(|s| target_bounds[s.name()].normalize(ipu.targets.stream(*s)))
            .collect::<Result<Vec<_>>>()?;
        ipu.targets = Targets::new(streams)?;
    }

    let counts = Counts::of(&ipus);
    info!(
        "preprocessed {} IPUs, {} words ({} silence tokens)",
        counts.ipus, counts.words, counts.silences
    );
    Ok(Dataset {
        meta: DatasetMeta {
            version: META_VERSION,
            target_bounds,
            f0_bounds,
            quantizer,
            fps: TARGET_FPS,
            hop_s: F0_HOP_S,
            max_f0_len: opts.max_f0_len,
            max_out_len: opts.max_out_len,
            d_emb: embeddings.dim(),
            counts,
        },
        ipus,
    })
}

fn widen_degenerate(b: Bounds, what: &str) -> Bounds {
    if b.hi > b.lo {
        b
    } else {
        warn!("{what} is constant ({}) on the training split; using [lo, lo + 1]", b.lo);
        Bounds {
            lo: b.lo,
            hi: b.lo + 1.0,
        }
    }
}

fn utterance_ipus(
    utt: &RawUtterance,
    embeddings: &EmbeddingSource,
    opts: &PreprocessOptions,
) -> Result<Vec<Ipu>> {
    let ctx = |e: Error| Error::Dataset(format!("utterance `{}`: {e}", utt.id));
    let track = prepare_f0(&F0Track::from_values(&utt.f0)).map_err(ctx)?;
    let words: Vec<TimedWord> = utt
        .words
        .iter()
        .enumerate()
        .map(|(i, w)| TimedWord {
            source_index: Some(i),
            ..TimedWord::new(w.text.clone(), w.start_s, w.end_s)
        })
        .collect();

    let mut out = Vec::new();
    for seg in segment_ipus(&words) {
        let (start, end) = (seg[0].start_s, seg[seg.len() - 1].end_s);
        let (a, b) = frame_span(start, end, TARGET_FPS);
        if b > utt.targets.len() {
            return Err(ctx(Error::TimingOutOfRange(format!(
                "IPU [{start}, {end}) needs target frames up to {b}, utterance has {}",
                utt.targets.len()
            ))));
        }
        if a == b {
            warn!("utterance `{}`: IPU at {start:.3}s is shorter than one frame, skipped", utt.id);
            continue;
        }
        let b = b.min(a + opts.max_out_len);
        let targets = Targets::new(
            utt.targets
                .streams()
                .iter()
                .map(|s| s[a..b].to_vec())
                .collect(),
        )?;
        let tokens = seg
            .iter()
            .map(|w| {
                Ok(WordToken {
                    text: w.text.clone(),
                    start_s: w.start_s,
                    end_s: w.end_s,
                    f0: word_f0_frames(w.start_s, w.end_s, &track, opts.max_f0_len)?,
                    emb: embeddings.lookup(&utt.id, w)?,
                    is_silence: w.is_silence,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(ctx)?;
        out.push(Ipu {
            id: format!("{}-{:03}", utt.id, out.len()),
            speaker_id: utt.speaker_id.clone(),
            split: Split::Train,
            words: tokens,
            targets,
        });
    }
    Ok(out)
}

/// Held-out speakers go to `test_SI`; the rest are shuffled with `seed` and
/// split by the configured fractions. Record order is preserved.
fn assign_splits(ipus: &mut [Ipu], opts: &PreprocessOptions) {
    let mut pool: Vec<usize> = Vec::new();
    for (i, ipu) in ipus.iter_mut().enumerate() {
        if opts.si_speakers.contains(&ipu.speaker_id) {
            ipu.split = Split::TestSi;
        } else {
            pool.push(i);
        }
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let n = pool.len() as f64;
    let n_train = (n * opts.train_fraction).round() as usize;
    let n_val = ((n * opts.val_fraction).round() as usize).min(pool.len() - n_train.min(pool.len()));
    for (rank, &i) in pool.iter().enumerate() {
        ipus[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::ValSd
        } else {
            Split::TestSd
        };
    }
}
