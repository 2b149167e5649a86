//! Deterministic toy corpora. Gestures are a fixed function of the words
//! and their pitch, so a model can both memorize and generalize them.
//!
//! Brows (AU01, AU02) rise with pitch, AU04 follows negative words, AU06 and
//! AU07 follow positive words, AU05 follows emphatic words, and the head
//! nods (RX) with pitch, turns (RY) with word position and tilts (RZ) with
//! the pitch level.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::{
    frame_span, pseudo_embed, Counts, Dataset, DatasetMeta, Ipu, RawUtterance, RawWord, Split,
    Targets, WordToken, F0_HOP_S, TARGET_FPS,
};

/// `(word, valence, emphasis)`
const VOCABULARY: [(&str, i8, bool); 16] = [
    ("yes", 1, true),
    ("no", -1, true),
    ("never", -1, true),
    ("great", 1, true),
    ("really", 0, true),
    ("the", 0, false),
    ("idea", 0, false),
    ("bad", -1, false),
    ("love", 1, false),
    ("we", 0, false),
    ("think", 0, false),
    ("wrong", -1, false),
    ("happy", 1, false),
    ("maybe", 0, false),
    ("very", 0, true),
    ("people", 0, false),
];

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub seed: u64,
    pub d_emb: usize,
    pub n_bins: usize,
    pub max_f0_len: usize,
    pub max_out_len: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            d_emb: 16,
            n_bins: 32,
            max_f0_len: 100,
            max_out_len: 124,
            min_words: 2,
            max_words: 3,
        }
    }
}

#[derive(Clone, Debug)]
struct SpokenWord {
    text: &'static str,
    valence: i8,
    emphasis: bool,
    start_s: f64,
    end_s: f64,
    /// Pitch level in `[0, 1]`.
    pitch: f64,
}

fn bump(t: f64, w: &SpokenWord) -> f64 {
    if t < w.start_s || t >= w.end_s {
        return 0.0;
    }
    (PI * (t - w.start_s) / (w.end_s - w.start_s)).sin()
}

/// Normalized gesture curves for frames `first..first + n` of `words`.
fn curves(words: &[SpokenWord], first: usize, n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(n); 9];
    for i in first..first + n {
        let t = i as f64 / TARGET_FPS;
        let (k, w) = words
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let d = |w: &SpokenWord| (t - (w.start_s + w.end_s) / 2.0).abs();
                d(a.1).total_cmp(&d(b.1))
            })
            .expect("at least one word");
        let b = bump(t, w);
        let neg = f64::from(w.valence < 0);
        let pos = f64::from(w.valence > 0);
        let emph = f64::from(w.emphasis);
        let values = [
            0.1 + 0.8 * w.pitch * b,
            0.1 + 0.8 * w.pitch * w.pitch * b,
            0.15 + 0.75 * neg * b,
            0.2 + 0.6 * emph * b,
            0.1 + 0.8 * pos * b,
            0.15 + 0.45 * pos * b + 0.3 * neg * b,
            0.5 + 0.35 * w.pitch * (2.0 * PI * 1.5 * t).sin(),
            0.5 + 0.3 * (2.0 * PI * (0.7 * t + 0.25 * k as f64)).sin(),
            0.35 + 0.3 * w.pitch + 0.05 * (2.0 * PI * 0.5 * t).cos(),
        ];
        for (s, v) in out.iter_mut().zip(values) {
            s.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Pitch in Hz at time `t` inside `w`, for a speaker with base pitch `base`.
fn pitch_hz(t: f64, w: &SpokenWord, base: f64) -> f64 {
    base * (1.0 + 0.8 * w.pitch) * (1.0 + 0.03 * (2.0 * PI * 5.0 * t).sin())
}

fn draw_words(rng: &mut ChaCha8Rng, opts: &SynthOptions, start_s: f64) -> Vec<SpokenWord> {
    let n = rng.gen_range(opts.min_words..=opts.max_words.max(opts.min_words));
    let mut t = start_s;
    (0..n)
        .map(|_| {
            let (text, valence, emphasis) = VOCABULARY[rng.gen_range(0..VOCABULARY.len())];
            let dur = rng.gen_range(0.25..0.45);
            let w = SpokenWord {
                text,
                valence,
                emphasis,
                start_s: t,
                end_s: t + dur,
                pitch: rng.gen_range(0.1..1.0),
            };
            t += dur;
            w
        })
        .collect()
}

fn speaker_base(speaker: usize) -> f64 {
    110.0 + 45.0 * (speaker % 4) as f64
}

/// `n` normalized IPUs for one speaker, ids `{speaker}-{first + k}`.
pub fn synth_ipus(opts: &SynthOptions, split: Split, speaker: usize, first: usize, n: usize) -> Vec<Ipu> {
    let base = speaker_base(speaker);
    (first..first + n)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((speaker as u64) << 32) ^ k as u64);
            let start = rng.gen_range(0.0..0.1);
            let words = draw_words(&mut rng, opts, start);
            let (a, b) = frame_span(start, words.last().unwrap().end_s, TARGET_FPS);
            let n_frames = (b - a).min(opts.max_out_len);
            let tokens = words
                .iter()
                .map(|w| {
                    let (fa, fb) = frame_span(w.start_s, w.end_s, 1.0 / F0_HOP_S);
                    let f0 = (fa..fb)
                        .take(opts.max_f0_len)
                        .map(|i| pitch_hz(i as f64 * F0_HOP_S, w, base))
                        .collect();
                    WordToken {
                        text: w.text.to_string(),
                        start_s: w.start_s,
                        end_s: w.end_s,
                        f0,
                        emb: pseudo_embed(w.text, opts.d_emb),
                        is_silence: false,
                    }
                })
                .collect();
            Ipu {
                id: format!("spk{speaker}-{k:03}"),
                speaker_id: format!("spk{speaker}"),
                split,
                words: tokens,
                targets: Targets::new(curves(&words, a, n_frames)).expect("nine streams"),
            }
        })
        .collect()
}

/// Normalized dataset with identity target bounds. Speakers 0 and 1 supply
/// train, validation and SD test IPUs; speaker 2 supplies the SI test IPUs.
pub fn toy_dataset(opts: &SynthOptions, n_train: usize, n_val: usize, n_test_sd: usize, n_test_si: usize) -> Dataset {
    let mut ipus = Vec::new();
    for (split, n, offset) in [
        (Split::Train, n_train, 0),
        (Split::ValSd, n_val, 1000),
        (Split::TestSd, n_test_sd, 2000),
    ] {
        ipus.extend(synth_ipus(opts, split, 0, offset, n.div_ceil(2)));
        ipus.extend(synth_ipus(opts, split, 1, offset, n / 2));
    }
    ipus.extend(synth_ipus(opts, Split::TestSi, 2, 3000, n_test_si));
    let mut meta = DatasetMeta::unit(opts.n_bins, opts.d_emb, opts.max_f0_len, opts.max_out_len);
    meta.counts = Counts::of(&ipus);
    Dataset { ipus, meta }
}

/// Raw utterances (Hz pitch with unvoiced gaps, un-normalized targets at
/// 24 fps) for exercising the full preprocessing pipeline. Action units are
/// on a 0-5 intensity scale, rotations in degrees.
pub fn raw_corpus(opts: &SynthOptions, n_speakers: usize, per_speaker: usize) -> Result<Vec<RawUtterance>> {
    let mut out = Vec::new();
    for speaker in 0..n_speakers {
        let base = speaker_base(speaker);
        for u in 0..per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((speaker as u64) << 40) ^ (u as u64) << 8);
            let mut words = Vec::new();
            let mut t = 0.1;
            for phrase in 0..rng.gen_range(2..4) {
                if phrase > 0 {
                    t += if rng.gen_bool(0.5) { 0.4 } else { 0.1 };
                }
                let w = draw_words(&mut rng, opts, t);
                t = w.last().unwrap().end_s;
                words.extend(w);
            }
            let total = t + 0.2;
            let n_f0 = (total / F0_HOP_S).ceil() as usize;
            let f0 = (0..n_f0)
                .map(|i| {
                    let time = i as f64 * F0_HOP_S;
                    words
                        .iter()
                        .find(|w| time >= w.start_s && time < w.end_s)
                        .filter(|w| time - w.start_s > 0.03)
                        .map_or(0.0, |w| pitch_hz(time, w, base))
                })
                .collect();
            let n_frames = (total * TARGET_FPS).ceil() as usize;
            let streams = curves(&words, 0, n_frames)
                .into_iter()
                .enumerate()
                .map(|(j, s)| {
                    s.into_iter()
                        .map(|v| if j < 6 { 5.0 * v } else { 40.0 * (v - 0.5) })
                        .collect()
                })
                .collect();
            out.push(RawUtterance {
                id: format!("spk{speaker}-utt{u:02}"),
                speaker_id: format!("spk{speaker}"),
                words: words
                    .iter()
                    .map(|w| RawWord {
                        text: w.text.to_string(),
                        start_s: w.start_s,
                        end_s: w.end_s,
                    })
                    .collect(),
                f0,
                targets: Targets::new(streams)?,
            });
        }
    }
    Ok(out)
}
