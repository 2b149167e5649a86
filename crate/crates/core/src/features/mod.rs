//! Feature preparation: F0 tracks, IPU segmentation, normalization,
//! quantization, stand-in embeddings and the on-disk dataset.

mod dataset;
mod embed;
mod f0;
mod ipu;
mod normalize;
mod preprocess;
mod quantize;

pub use dataset::{read_ipus, write_ipus, Counts, Dataset, DatasetMeta, META_VERSION};
pub use embed::pseudo_embed;
pub use f0::{clip_f0, interpolate_f0, prepare_f0, F0Frame, F0Track, F0_HOP_S, F0_MAX_HZ, F0_MIN_HZ};
pub use ipu::{
    assign_word_f0, frame_span, segment_ipus, Ipu, PaddedSeq, Split, Stream, Targets, TimedWord,
    WordToken, PAUSE_THRESHOLD_S, SILENCE_TEXT, TARGET_FPS,
};
pub use normalize::{normalize_stream, Bounds};
pub use preprocess::{
    preprocess, read_raw_utterances, write_raw_utterances, EmbeddingSource, PreprocessOptions,
    RawUtterance, RawWord,
};
pub use quantize::QuantizerSpec;
