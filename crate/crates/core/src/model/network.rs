//! The gesture network: F0 encoder, transformer encoder, cross-modality
//! block, one causal decoder per output stream, and the AU/R decoder that
//! mixes the streams before the per-stream output layers.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Ablation, ModelConfig};
use super::input::{ModelInput, WordInput};
use super::layers::{
    causal_mask, key_padding_mask, Conv, DecoderLayer, EncoderLayer, Linear, ParamBuilder, Session,
};
use crate::error::{Error, Result};
use crate::features::{QuantizerSpec, Stream};
use crate::numerics::{Graph, Padding, ParamId, ParamStore, Tensor, Var};
use crate::Scalar;

/// Sinusoidal position table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding<T: Scalar>(length: usize, d_model: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(length * d_model);
    for pos in 0..length {
        for dim in 0..d_model {
            let pair = (dim / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d_model as f64);
            data.push(T::of(if dim % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![length, d_model], data).expect("shape matches")
}

#[derive(Clone, Debug)]
struct F0Encoder {
    convs: Vec<Conv>,
    proj: Linear,
}

#[derive(Clone, Debug)]
struct StreamDecoder {
    embedding: ParamId,
    layers: Vec<DecoderLayer>,
}

#[derive(Clone, Debug)]
struct AurDecoder {
    convs: Vec<Conv>,
    dense: Vec<Linear>,
}

/// Encoder-side tensors shared by every stream decoder.
#[derive(Clone, Copy, Debug)]
pub struct EncoderMemory {
    /// Transformer encoder output, `[n_words x d_model]`.
    pub z: Var,
    /// Cross-modality output the decoders attend to, `[n_words x d_model]`.
    pub fused: Var,
}

/// How [`GestureModel::generate`] picks each next token.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Decoding {
    #[default]
    Greedy,
    /// Samples from the softmax at the given temperature.
    Sample { temperature: f64, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GestureModel<T> {
    config: ModelConfig,
    ablation: Ablation,
    params: ParamStore<T>,
    f0_encoder: Option<F0Encoder>,
    text_proj: Option<Linear>,
    encoder: Vec<EncoderLayer>,
    cmam: Option<Vec<DecoderLayer>>,
    decoders: Vec<StreamDecoder>,
    aur: AurDecoder,
}

impl<T: Scalar> GestureModel<T> {
    /// Builds the network with Glorot-uniform weights drawn from `seed`.
    pub fn new(config: ModelConfig, ablation: Ablation, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut params = ParamStore::new();
        let mut b = ParamBuilder::new(&mut params, seed);

        let f0_encoder = (ablation != Ablation::Speech).then(|| {
            let convs = (0..c.n_conv_layers)
                .map(|i| {
                    let c_in = if i == 0 { 1 } else { c.conv_filters };
                    b.conv(&format!("f0_encoder.conv{i}"), c_in, c.conv_filters, c.conv_kernel, Padding::Same)
                })
                .collect();
            F0Encoder {
                convs,
                proj: b.linear("f0_encoder.proj", c.conv_filters, c.d_model),
            }
        });
        let text_proj = (ablation != Ablation::Text).then(|| b.linear("text_proj", c.d_emb, c.d_model));
        let encoder = (0..c.n_enc_layers)
            .map(|i| b.encoder_layer(&format!("encoder.layer{i}"), c.d_model, c.n_heads, c.d_ff))
            .collect();
        let cmam = (ablation != Ablation::Cmam).then(|| {
            (0..c.n_cmam_layers)
                .map(|i| b.decoder_layer(&format!("cmam.layer{i}"), c.d_model, c.n_heads, c.d_ff))
                .collect()
        });
        let decoders = Stream::ALL
            .iter()
            .map(|s| StreamDecoder {
                embedding: b.embedding(&format!("decoder.{s}.embedding"), c.vocab(), c.d_model),
                layers: (0..c.n_dec_layers)
                    .map(|i| b.decoder_layer(&format!("decoder.{s}.layer{i}"), c.d_model, c.n_heads, c.d_ff))
                    .collect(),
            })
            .collect();
        let convs: Vec<Conv> = if ablation == Ablation::AurDecoder {
            Vec::new()
        } else {
            (0..c.n_conv_layers)
                .map(|i| {
                    let c_in = if i == 0 { c.d_model * c.n_streams } else { c.conv_filters };
                    b.conv(&format!("aur_decoder.conv{i}"), c_in, c.conv_filters, c.conv_kernel, Padding::Causal)
                })
                .collect()
        };
        let dense_in = if convs.is_empty() { c.d_model } else { c.conv_filters };
        let dense = Stream::ALL
            .iter()
            .map(|s| b.linear(&format!("aur_decoder.dense.{s}"), dense_in, c.n_bins))
            .collect();

        Ok(Self {
            config,
            ablation,
            params,
            f0_encoder,
            text_proj,
            encoder,
            cmam,
            decoders,
            aur: AurDecoder { convs, dense },
        })
    }

    /// Builds the network and loads `params`, which must match its layout.
    pub fn from_params(config: ModelConfig, ablation: Ablation, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, ablation, 0)?;
        model.params.check_layout(&params)?;
        model.params.copy_matching(&params);
        Ok(model)
    }

    /// The same network with `kind` applied; weights of retained parts are
    /// copied over.
    pub fn with_ablation(&self, kind: Ablation) -> Result<Self> {
        let mut model = Self::new(self.config.clone(), kind, 0)?;
        model.params.copy_matching(&self.params);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Exact number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn shared_params(&self) -> Vec<Rc<Tensor<T>>> {
        self.params.tensors().iter().cloned().map(Rc::new).collect()
    }

    /// Binds the parameters to `graph`. `dropout_seed` enables dropout.
    pub fn session<'g>(&self, graph: &'g Graph<T>, dropout_seed: Option<u64>, grad: bool) -> Session<'g, T> {
        Session::new(graph, &self.shared_params(), self.config.dropout, dropout_seed, grad)
    }

    fn positions(&self, s: &Session<T>, n: usize) -> Var {
        s.graph.constant(positional_encoding(n, self.config.d_model))
    }

    /// Word-level F0 vector `[1 x d_model]`: convolutions over the unpadded
    /// frames, mean pooling, linear projection. Zero for an empty word.
    pub fn f0_encode(&self, s: &Session<T>, word: &WordInput<T>) -> Result<Var> {
        let g = s.graph;
        let d = self.config.d_model;
        let Some(enc) = &self.f0_encoder else {
            return Ok(g.constant(Tensor::zeros(&[1, d])));
        };
        let n = word.f0.true_len;
        if n == 0 {
            return Ok(g.constant(Tensor::zeros(&[1, d])));
        }
        let mut h = g.constant(Tensor::new(vec![n, 1], word.f0.strip().to_vec())?);
        for conv in &enc.convs {
            h = g.relu(conv.forward(s, h)?);
        }
        let pool = g.constant(Tensor::filled(&[1, n], T::one() / T::of(n as f64)));
        let pooled = g.matmul(pool, h)?;
        enc.proj.forward(s, pooled)
    }

    fn text_vectors(&self, s: &Session<T>, words: &[WordInput<T>]) -> Result<Option<Var>> {
        let Some(proj) = &self.text_proj else {
            return Ok(None);
        };
        let rows: Vec<Vec<T>> = words.iter().map(|w| w.emb.clone()).collect();
        let x = s.graph.constant(Tensor::from_rows(&rows)?);
        Ok(Some(proj.forward(s, x)?))
    }

    /// Transformer encoder over the speech vectors, then the cross-modality
    /// block with text as queries and the encoder output as keys/values.
    pub fn encode(&self, s: &Session<T>, input: &ModelInput<T>) -> Result<EncoderMemory> {
        let g = s.graph;
        let pad = input.word_padding();
        if pad.iter().all(|&p| p) {
            return Err(Error::EmptyIpu);
        }
        let n = pad.len();
        let pe = self.positions(s, n);
        let text = self.text_vectors(s, &input.words)?;

        let speech = if self.f0_encoder.is_some() {
            let rows = input
                .words
                .iter()
                .map(|w| self.f0_encode(s, w))
                .collect::<Result<Vec<_>>>()?;
            g.concat(&rows, 0)?
        } else {
            text.expect("speech and text ablations are exclusive")
        };
        let mut x = s.dropout(g.add(speech, pe)?)?;
        let mask = key_padding_mask(n, &pad);
        for (i, layer) in self.encoder.iter().enumerate() {
            x = layer.forward(s, &format!("encoder{i}"), x, Rc::clone(&mask))?;
        }
        let z = x;

        let fused = match &self.cmam {
            None => z,
            Some(layers) => {
                let master = match text {
                    Some(t) => g.add(t, pe)?,
                    None => pe,
                };
                let mut m = s.dropout(master)?;
                for (i, layer) in layers.iter().enumerate() {
                    m = layer.forward(s, &format!("cmam{i}"), m, Rc::clone(&mask), z, Rc::clone(&mask))?;
                }
                m
            }
        };
        Ok(EncoderMemory { z, fused })
    }

    /// Latents `[t x d_model]` of one stream decoder for input `tokens`.
    pub fn decode_stream(
        &self,
        s: &Session<T>,
        stream: usize,
        tokens: &[usize],
        memory: &EncoderMemory,
        word_pad: &[bool],
    ) -> Result<Var> {
        let g = s.graph;
        let c = &self.config;
        if tokens.len() > c.max_out_len {
            return Err(Error::LengthExceeded {
                requested: tokens.len(),
                max: c.max_out_len,
            });
        }
        let dec = &self.decoders[stream];
        let emb = g.embedding(s.p(dec.embedding), tokens)?;
        let emb = g.scale(emb, T::of((c.d_model as f64).sqrt()));
        let t = tokens.len();
        let mut x = s.dropout(g.add(emb, self.positions(s, t))?)?;
        let self_mask = causal_mask(t);
        let cross_mask = key_padding_mask(t, word_pad);
        let name = Stream::ALL[stream].name();
        for (i, layer) in dec.layers.iter().enumerate() {
            x = layer.forward(
                s,
                &format!("decoder.{name}{i}"),
                x,
                Rc::clone(&self_mask),
                memory.fused,
                Rc::clone(&cross_mask),
            )?;
        }
        Ok(x)
    }

    /// Mixes the stream latents with causal convolutions along time and maps
    /// each stream to `[t x n_bins]` logits.
    pub fn aur_decode(&self, s: &Session<T>, latents: &[Var]) -> Result<Vec<Var>> {
        let g = s.graph;
        let shapes: Vec<Vec<usize>> = latents.iter().map(|&v| g.shape(v)).collect();
        if latents.len() != self.decoders.len() || shapes.iter().any(|sh| sh[0] != shapes[0][0]) {
            let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
            return Err(crate::error::shape_err("aur_decode", &refs));
        }
        if self.aur.convs.is_empty() {
            return latents
                .iter()
                .zip(&self.aur.dense)
                .map(|(&x, dense)| dense.forward(s, x))
                .collect();
        }
        let mut h = g.concat(latents, 1)?;
        for conv in &self.aur.convs {
            h = g.relu(conv.forward(s, h)?);
        }
        self.aur.dense.iter().map(|dense| dense.forward(s, h)).collect()
    }

    /// Decoder input for teacher forcing: `[BOS, y_0, ..., y_{n-2}]`.
    pub fn shifted_inputs(&self, targets: &[usize]) -> Vec<usize> {
        std::iter::once(self.config.bos())
            .chain(targets.iter().take(targets.len().saturating_sub(1)).copied())
            .collect()
    }

    /// Logits per stream, `[n_frames x n_bins]`, where row `i` predicts the
    /// target token of frame `i` from the tokens of frames `< i`.
    pub fn forward_teacher_forced(&self, s: &Session<T>, input: &ModelInput<T>) -> Result<Vec<Var>> {
        let targets = input
            .targets
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("IPU `{}` has no targets", input.id)))?;
        if input.n_frames() == 0 {
            return Err(Error::Dataset(format!("IPU `{}` has no frames", input.id)));
        }
        let memory = self.encode(s, input)?;
        let word_pad = input.word_padding();
        let latents = targets
            .iter()
            .enumerate()
            .map(|(j, y)| self.decode_stream(s, j, &self.shifted_inputs(y), &memory, &word_pad))
            .collect::<Result<Vec<_>>>()?;
        self.aur_decode(s, &latents)
    }

    /// Autoregressive generation of `n_frames` tokens per stream from text
    /// and F0 only. All streams advance together because the AU/R decoder
    /// couples them.
    pub fn generate(&self, input: &ModelInput<T>, n_frames: usize, decoding: Decoding) -> Result<Vec<Vec<usize>>> {
        let c = &self.config;
        if n_frames > c.max_out_len {
            return Err(Error::LengthExceeded {
                requested: n_frames,
                max: c.max_out_len,
            });
        }
        if n_frames == 0 {
            return Err(Error::Dataset(format!("IPU `{}`: zero frames requested", input.id)));
        }
        let shared = self.shared_params();
        let word_pad = input.word_padding();
        let (z, fused) = {
            let g = Graph::new();
            let s = Session::new(&g, &shared, c.dropout, None, false);
            let m = self.encode(&s, input)?;
            (g.value(m.z), g.value(m.fused))
        };
        let mut rng = match decoding {
            Decoding::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Decoding::Greedy => None,
        };

        let n_streams = self.decoders.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::with_capacity(n_frames); n_streams];
        for step in 0..n_frames {
            let g = Graph::new();
            let s = Session::new(&g, &shared, c.dropout, None, false);
            let memory = EncoderMemory {
                z: g.leaf_shared(Rc::clone(&z), false),
                fused: g.leaf_shared(Rc::clone(&fused), false),
            };
            let latents = (0..n_streams)
                .map(|j| {
                    let tokens: Vec<usize> = std::iter::once(c.bos()).chain(out[j].iter().copied()).collect();
                    self.decode_stream(&s, j, &tokens, &memory, &word_pad)
                })
                .collect::<Result<Vec<_>>>()?;
            let logits = self.aur_decode(&s, &latents)?;
            for (j, &l) in logits.iter().enumerate() {
                let value = g.value(l);
                let row = value.row(step);
                let token = match (&decoding, rng.as_mut()) {
                    (Decoding::Sample { temperature, .. }, Some(rng)) => sample(row, *temperature, rng),
                    _ => argmax(row),
                };
                out[j].push(token);
            }
        }
        Ok(out)
    }

    /// Generated tokens mapped to bin centers in `[0, 1]`.
    pub fn generate_curves(
        &self,
        input: &ModelInput<T>,
        n_frames: usize,
        quantizer: &QuantizerSpec,
        decoding: Decoding,
    ) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .generate(input, n_frames, decoding)?
            .iter()
            .map(|tokens| quantizer.dequantize_all(tokens))
            .collect())
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample<T: Scalar>(row: &[T], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let t = temperature.max(1e-6);
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row.iter().map(|v| ((v.as_f64() - max) / t).exp()).collect();
    let mut u = rng.gen::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    row.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_input(cfg: &ModelConfig, n_words: usize, n_frames: usize, seed: u64) -> ModelInput<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = (0..n_words)
            .map(|_| {
                let len = rng.gen_range(3..12);
                let f0: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
                WordInput {
                    f0: crate::features::PaddedSeq::pad(&f0, cfg.max_f0_len),
                    emb: (0..cfg.d_emb).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    pad: false,
                }
            })
            .collect();
        let targets = (0..cfg.n_streams)
            .map(|_| (0..n_frames).map(|_| rng.gen_range(0..cfg.n_bins)).collect())
            .collect();
        ModelInput {
            id: "toy".into(),
            words,
            frame_pad: vec![false; n_frames],
            targets: Some(targets),
        }
    }

    fn logits(model: &GestureModel<f64>, input: &ModelInput<f64>) -> Vec<Tensor<f64>> {
        let g = Graph::new();
        let s = model.session(&g, None, false);
        let out = model.forward_teacher_forced(&s, input).unwrap();
        out.iter().map(|&v| (*g.value(v)).clone()).collect()
    }

    fn loss(model: &GestureModel<f64>, input: &ModelInput<f64>) -> f64 {
        let g = Graph::new();
        let s = model.session(&g, None, false);
        let out = model.forward_teacher_forced(&s, input).unwrap();
        let keep: Vec<bool> = input.frame_pad.iter().map(|p| !p).collect();
        let targets = input.targets.as_ref().unwrap();
        let total: f64 = out
            .iter()
            .zip(targets)
            .map(|(&l, t)| g.value(g.cross_entropy(l, t, &keep).unwrap()).data()[0])
            .sum();
        total / out.len() as f64
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding::<f64>(3, 6);
        for d in 0..6 {
            assert_eq!(pe.at2(0, d), if d % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((pe.at2(1, 0) - 0.841471).abs() < 1e-6);
        assert!((pe.at2(1, 1) - 1f64.cos()).abs() < 1e-15);
        assert!((pe.at2(2, 2) - (2.0 / 10000f64.powf(2.0 / 6.0)).sin()).abs() < 1e-15);
        assert!(positional_encoding::<f64>(50, 16).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
    }

    #[test]
    fn f0_encoding_ignores_padded_frames() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 3).unwrap();
        let input = toy_input(&cfg, 1, 4, 1);
        let mut noisy = input.words[0].clone();
        let n = noisy.f0.true_len;
        for v in &mut noisy.f0.values[n..] {
            *v = 123.0;
        }
        let g = Graph::new();
        let s = model.session(&g, None, false);
        let a = model.f0_encode(&s, &input.words[0]).unwrap();
        let b = model.f0_encode(&s, &noisy).unwrap();
        assert_eq!(g.shape(a), vec![1, cfg.d_model]);
        assert_eq!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn output_shapes() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 3).unwrap();
        let out = logits(&model, &toy_input(&cfg, 3, 7, 2));
        assert_eq!(out.len(), 9);
        assert!(out.iter().all(|t| t.shape() == [7, cfg.n_bins]));
    }

    #[test]
    fn padded_words_receive_no_attention() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 5).unwrap();
        let mut input = toy_input(&cfg, 3, 5, 4);
        input.pad_words(5, &cfg);
        let g = Graph::new();
        let s = model.session(&g, None, false);
        model.forward_teacher_forced(&s, &input).unwrap();
        let records = s.attention_records();
        assert!(!records.is_empty());
        for r in records {
            let p = g.value(r.probs);
            let (rows, cols) = p.dims2().unwrap();
            for i in 0..rows {
                let row = p.row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for k in 0..cols {
                    if !r.allowed[i * cols + k] {
                        assert_eq!(row[k], 0.0);
                    }
                }
            }
            if !r.block.ends_with(".self") {
                for i in 0..rows {
                    assert_eq!(p.row(i)[3..].iter().sum::<f64>(), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_word_gets_full_attention() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 5).unwrap();
        let input = toy_input(&cfg, 1, 4, 4);
        let g = Graph::new();
        let s = model.session(&g, None, false);
        model.forward_teacher_forced(&s, &input).unwrap();
        for r in s.attention_records().iter().filter(|r| r.block.contains("cross")) {
            assert!(g.value(r.probs).data().iter().all(|&p| (p - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn all_padded_ipu_is_rejected() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 5).unwrap();
        let mut input = toy_input(&cfg, 0, 4, 4);
        input.pad_words(2, &cfg);
        let g = Graph::new();
        let s = model.session(&g, None, false);
        assert!(matches!(model.encode(&s, &input), Err(Error::EmptyIpu)));
    }

    #[test]
    fn decoding_is_causal() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 9).unwrap();
        let input = toy_input(&cfg, 3, 8, 6);
        let base = logits(&model, &input);
        let k = 4;
        let mut changed = input.clone();
        for t in changed.targets.as_mut().unwrap() {
            t[k] = (t[k] + 3) % cfg.n_bins;
        }
        let after = logits(&model, &changed);
        for (a, b) in base.iter().zip(&after) {
            for i in 0..=k {
                assert_eq!(a.row(i), b.row(i), "row {i} depends on frame {k}");
            }
            assert_ne!(a.row(k + 1), b.row(k + 1));
        }
    }

    #[test]
    fn text_and_speech_change_the_output() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 9).unwrap();
        let input = toy_input(&cfg, 3, 5, 6);
        let base = logits(&model, &input);
        let mut text = input.clone();
        text.words[1].emb[0] += 0.5;
        let mut speech = input.clone();
        speech.words[1].f0.values[0] += 0.5;
        assert_ne!(base, logits(&model, &text));
        assert_ne!(base, logits(&model, &speech));
    }

    #[test]
    fn ablations_remove_their_inputs() {
        let cfg = ModelConfig::toy();
        let full = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 9).unwrap();
        let input = toy_input(&cfg, 3, 5, 6);
        let mut text = input.clone();
        text.words[1].emb[0] += 0.5;
        let mut speech = input.clone();
        speech.words[1].f0.values[0] += 0.5;

        let no_text = full.with_ablation(Ablation::Text).unwrap();
        assert_eq!(logits(&no_text, &input), logits(&no_text, &text));
        let no_speech = full.with_ablation(Ablation::Speech).unwrap();
        assert_eq!(logits(&no_speech, &input), logits(&no_speech, &speech));
        for a in Ablation::VARIANTS {
            let m = full.with_ablation(a).unwrap();
            assert!(m.param_count() < full.param_count(), "{a}");
            assert!(logits(&m, &input).iter().all(|t| t.shape() == [5, cfg.n_bins]));
        }
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let cfg = ModelConfig::default();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 11).unwrap();
        let l = loss(&model, &toy_input(&cfg, 4, 12, 8));
        assert!((l - 256f64.ln()).abs() < 0.3, "loss {l}");
    }

    #[test]
    fn padded_frames_do_not_change_the_loss() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 11).unwrap();
        let input = toy_input(&cfg, 3, 6, 8);
        let mut padded = input.clone();
        padded.pad_frames(12, &cfg);
        assert!((loss(&model, &input) - loss(&model, &padded)).abs() < 1e-12);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = GestureModel::<f64>::new(ModelConfig::toy(), Ablation::None, 1).unwrap();
        let b = GestureModel::<f64>::new(ModelConfig::toy(), Ablation::None, 1).unwrap();
        let c = GestureModel::<f64>::new(ModelConfig::toy(), Ablation::None, 2).unwrap();
        assert_eq!(a.params().tensors(), b.params().tensors());
        assert_ne!(a.params().tensors(), c.params().tensors());
    }

    #[test]
    fn generation_ignores_targets() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 4).unwrap();
        let input = toy_input(&cfg, 3, 6, 8);
        let a = model.generate(&input, 6, Decoding::Greedy).unwrap();
        let b = model.generate(&input.without_targets(), 6, Decoding::Greedy).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9);
        assert!(a.iter().all(|s| s.len() == 6 && s.iter().all(|&t| t < cfg.n_bins)));
        assert!(matches!(
            model.generate(&input, cfg.max_out_len + 1, Decoding::Greedy),
            Err(Error::LengthExceeded { .. })
        ));
    }

    #[test]
    fn greedy_generation_matches_teacher_forcing_on_its_own_output() {
        let cfg = ModelConfig::toy();
        let model = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 4).unwrap();
        let mut input = toy_input(&cfg, 3, 6, 8);
        let generated = model.generate(&input, 6, Decoding::Greedy).unwrap();
        input.targets = Some(generated.clone());
        for (l, tokens) in logits(&model, &input).iter().zip(&generated) {
            for (i, &t) in tokens.iter().enumerate() {
                assert_eq!(argmax(l.row(i)), t);
            }
        }
    }

    #[test]
    fn parameter_count_matches_layer_sizes() {
        let c = ModelConfig::toy();
        let (d, ff, f, k, b) = (c.d_model, c.d_ff, c.conv_filters, c.conv_kernel, c.n_bins);
        let linear = |i: usize, o: usize| i * o + o;
        let conv = |i: usize, o: usize| o * i * k + o;
        let attn = 4 * linear(d, d);
        let ffn = linear(d, ff) + linear(ff, d);
        let enc_layer = attn + ffn + 2 * 2 * d;
        let dec_layer = 2 * attn + ffn + 3 * 2 * d;
        let f0 = conv(1, f) + 2 * conv(f, f) + linear(f, d);
        let text = linear(c.d_emb, d);
        let decoders = 9 * ((b + 2) * d + dec_layer);
        let aur = conv(9 * d, f) + 2 * conv(f, f) + 9 * linear(f, b);
        let expected = f0 + text + enc_layer + dec_layer + decoders + aur;
        let model = GestureModel::<f64>::new(c, Ablation::None, 0).unwrap();
        assert_eq!(model.param_count(), expected);
    }

    #[test]
    fn f32_and_f64_agree() {
        let cfg = ModelConfig::toy();
        let m64 = GestureModel::<f64>::new(cfg.clone(), Ablation::None, 4).unwrap();
        let m32 = GestureModel::<f32>::from_params(cfg.clone(), Ablation::None, m64.params().cast()).unwrap();
        let input = toy_input(&cfg, 3, 5, 8);
        let input32 = ModelInput::<f32> {
            id: input.id.clone(),
            words: input
                .words
                .iter()
                .map(|w| WordInput {
                    f0: crate::features::PaddedSeq {
                        values: w.f0.values.iter().map(|&v| v as f32).collect(),
                        true_len: w.f0.true_len,
                    },
                    emb: w.emb.iter().map(|&v| v as f32).collect(),
                    pad: w.pad,
                })
                .collect(),
            frame_pad: input.frame_pad.clone(),
            targets: input.targets.clone(),
        };
        let g = Graph::new();
        let s = m32.session(&g, None, false);
        let out32 = m32.forward_teacher_forced(&s, &input32).unwrap();
        for (a, &b) in logits(&m64, &input).iter().zip(&out32) {
            for (x, y) in a.data().iter().zip(g.value(b).data()) {
                assert!((x - *y as f64).abs() < 1e-3);
            }
        }
    }
}
