use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::f0::F0Track;
use crate::error::{Error, Result};

/// Pauses longer than this (seconds) split two inter-pausal units.
pub const PAUSE_THRESHOLD_S: f64 = 0.2;
/// Frame rate of the facial and head target streams.
pub const TARGET_FPS: f64 = 24.0;
/// Text of the token inserted for a short pause inside an IPU.
pub const SILENCE_TEXT: &str = ",";

/// The nine output streams, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    Au01,
    Au02,
    Au04,
    Au05,
    Au06,
    Au07,
    Rx,
    Ry,
    Rz,
}

impl Stream {
    pub const ALL: [Stream; 9] = [
        Stream::Au01,
        Stream::Au02,
        Stream::Au04,
        Stream::Au05,
        Stream::Au06,
        Stream::Au07,
        Stream::Rx,
        Stream::Ry,
        Stream::Rz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Au01 => "AU01",
            Stream::Au02 => "AU02",
            Stream::Au04 => "AU04",
            Stream::Au05 => "AU05",
            Stream::Au06 => "AU06",
            Stream::Au07 => "AU07",
            Stream::Rx => "RX",
            Stream::Ry => "RY",
            Stream::Rz => "RZ",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Action-unit streams carry activation metrics; head rotations do not.
    pub fn is_action_unit(self) -> bool {
        !matches!(self, Stream::Rx | Stream::Ry | Stream::Rz)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Stream {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Stream {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Stream::from_name(&name).ok_or_else(|| serde::de::Error::custom(format!("unknown stream `{name}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val_SD")]
    ValSd,
    #[serde(rename = "test_SD")]
    TestSd,
    #[serde(rename = "test_SI")]
    TestSi,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValSd => "val_SD",
            Split::TestSd => "test_SD",
            Split::TestSi => "test_SI",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" | "val_sd" => Some(Split::ValSd),
            "test" | "test_sd" | "sd" => Some(Split::TestSd),
            "test_si" | "si" => Some(Split::TestSi),
            _ => None,
        }
    }
}

/// A word (or inserted silence) with timing only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_silence: bool,
    /// Position in the source transcript; `None` for inserted silences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_index: Option<usize>,
}

impl TimedWord {
    pub fn new(text: impl Into<String>, start_s: f64, end_s: f64) -> Self {
        Self {
            text: text.into(),
            start_s,
            end_s,
            is_silence: false,
            source_index: None,
        }
    }

    fn silence(start_s: f64, end_s: f64) -> Self {
        Self {
            text: SILENCE_TEXT.to_string(),
            start_s,
            end_s,
            is_silence: true,
            source_index: None,
        }
    }
}

/// One model input token: timing, its F0 frames (true length, at most the
/// configured maximum) and its embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordToken {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    pub f0: Vec<f64>,
    pub emb: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_silence: bool,
}

/// The nine frame-level target streams of one IPU, sharing one length.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    streams: Vec<Vec<f64>>,
}

impl Targets {
    pub fn new(streams: Vec<Vec<f64>>) -> Result<Self> {
        if streams.len() != Stream::ALL.len() {
            return Err(Error::Dataset(format!(
                "expected {} target streams, got {}",
                Stream::ALL.len(),
                streams.len()
            )));
        }
        let n = streams[0].len();
        if streams.iter().any(|s| s.len() != n) {
            return Err(Error::Dataset("target streams differ in length".into()));
        }
        Ok(Self { streams })
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.streams[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stream(&self, s: Stream) -> &[f64] {
        &self.streams[s.index()]
    }

    pub fn streams(&self) -> &[Vec<f64>] {
        &self.streams
    }

    pub fn truncate(&mut self, n: usize) {
        for s in &mut self.streams {
            s.truncate(n);
        }
    }
}

impl Serialize for Targets {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.streams.len()))?;
        for (s, values) in Stream::ALL.iter().zip(&self.streams) {
            map.serialize_entry(s.name(), values)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Targets {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let mut map = BTreeMap::<String, Vec<f64>>::deserialize(deserializer)?;
        let mut streams = Vec::with_capacity(Stream::ALL.len());
        for s in Stream::ALL {
            streams.push(
                map.remove(s.name())
                    .ok_or_else(|| D::Error::custom(format!("missing stream {}", s.name())))?,
            );
        }
        if let Some(extra) = map.keys().next() {
            return Err(D::Error::custom(format!("unknown stream {extra}")));
        }
        Targets::new(streams).map_err(D::Error::custom)
    }
}

/// Inter-pausal unit: words plus normalized frame-level targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ipu {
    pub id: String,
    pub speaker_id: String,
    pub split: Split,
    pub words: Vec<WordToken>,
    pub targets: Targets,
}

impl Ipu {
    pub fn start_s(&self) -> f64 {
        self.words.first().map_or(0.0, |w| w.start_s)
    }

    pub fn end_s(&self) -> f64 {
        self.words.last().map_or(0.0, |w| w.end_s)
    }

    /// Output length implied by the IPU duration at 24 fps, capped at `max`.
    pub fn frame_count(&self, max: usize) -> usize {
        let (a, b) = frame_span(self.start_s(), self.end_s(), TARGET_FPS);
        (b - a).min(max)
    }

    pub fn spoken_word_count(&self) -> usize {
        self.words.iter().filter(|w| !w.is_silence).count()
    }
}

/// Indices of the frames at `rate` Hz whose timestamps `i / rate` fall in
/// `[start_s, end_s)`.
pub fn frame_span(start_s: f64, end_s: f64, rate: f64) -> (usize, usize) {
    let idx = |t: f64| (t * rate - 1e-9).ceil().max(0.0) as usize;
    let (a, b) = (idx(start_s), idx(end_s));
    (a, b.max(a))
}

/// Groups time-sorted words into IPUs. A gap above 0.2 s starts a new IPU;
/// a shorter non-zero gap becomes a silence token inside the current one.
pub fn segment_ipus(words: &[TimedWord]) -> Vec<Vec<TimedWord>> {
    let mut out: Vec<Vec<TimedWord>> = Vec::new();
    let mut current: Vec<TimedWord> = Vec::new();
    for w in words {
        if let Some(prev) = current.last() {
            let gap = w.start_s - prev.end_s;
            if gap > PAUSE_THRESHOLD_S {
                out.push(std::mem::take(&mut current));
            } else if gap > 0.0 {
                let end = prev.end_s;
                current.push(TimedWord::silence(end, w.start_s));
            }
        }
        current.push(w.clone());
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Slices the F0 frames covering `[start_s, end_s)` of every word, truncated
/// to `max_f0_len`. Fails when a word lies outside the track.
pub fn assign_word_f0(ipu: &Ipu, track: &F0Track, max_f0_len: usize) -> Result<Ipu> {
    let mut out = ipu.clone();
    for w in &mut out.words {
        w.f0 = word_f0_frames(w.start_s, w.end_s, track, max_f0_len)?;
    }
    Ok(out)
}

pub(crate) fn word_f0_frames(
    start_s: f64,
    end_s: f64,
    track: &F0Track,
    max_f0_len: usize,
) -> Result<Vec<f64>> {
    if !(end_s > start_s) || start_s < 0.0 {
        return Err(Error::TimingOutOfRange(format!(
            "word interval [{start_s}, {end_s}) is invalid"
        )));
    }
    let (a, b) = frame_span(start_s, end_s, 1.0 / track.hop_s);
    if b > track.len() {
        return Err(Error::TimingOutOfRange(format!(
            "word interval [{start_s}, {end_s}) exceeds F0 track of {:.3} s",
            track.duration_s()
        )));
    }
    Ok(track.frames[a..b.min(a + max_f0_len)]
        .iter()
        .map(|f| f.value)
        .collect())
}

/// A sequence padded with zeros to a fixed length, remembering its true
/// length.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedSeq<T> {
    pub values: Vec<T>,
    pub true_len: usize,
}

impl<T: Copy + Default> PaddedSeq<T> {
    /// Truncates to `max_len` or pads with `T::default()` up to it.
    pub fn pad(values: &[T], max_len: usize) -> Self {
        let true_len = values.len().min(max_len);
        let mut v = values[..true_len].to_vec();
        v.resize(max_len, T::default());
        Self {
            values: v,
            true_len,
        }
    }

    /// `true` at padded positions.
    pub fn padding_flags(&self) -> Vec<bool> {
        (0..self.values.len()).map(|i| i >= self.true_len).collect()
    }

    pub fn strip(&self) -> &[T] {
        &self.values[..self.true_len]
    }
}
