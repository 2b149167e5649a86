//! Building blocks shared by the encoder, the cross-modality block and the
//! stream decoders. Layers only hold [`ParamId`]s; values live in the
//! model's [`ParamStore`] and are bound to a graph by a [`Session`].

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Graph, Padding, ParamId, ParamStore, Tensor, Var};
use crate::Scalar;

/// One forward pass of a model over one [`Graph`].
pub struct Session<'g, T: Scalar> {
    pub graph: &'g Graph<T>,
    leaves: Vec<Var>,
    dropout: f64,
    dropout_seed: Option<u64>,
    dropout_calls: Cell<u64>,
    attention: RefCell<Vec<AttentionRecord>>,
}

/// Attention probabilities of one head, kept for inspection.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub block: String,
    pub head: usize,
    pub probs: Var,
    /// Row-major `[queries x keys]` mask that was applied.
    pub allowed: Rc<Vec<bool>>,
}

impl<'g, T: Scalar> Session<'g, T> {
    /// Binds `params` to `graph`. Dropout is active only when
    /// `dropout_seed` is set; `grad` decides whether parameters receive
    /// gradients.
    pub fn new(
        graph: &'g Graph<T>,
        params: &[Rc<Tensor<T>>],
        dropout: f64,
        dropout_seed: Option<u64>,
        grad: bool,
    ) -> Self {
        let leaves = params
            .iter()
            .map(|t| graph.leaf_shared(Rc::clone(t), grad))
            .collect();
        Self {
            graph,
            leaves,
            dropout,
            dropout_seed,
            dropout_calls: Cell::new(0),
            attention: RefCell::new(Vec::new()),
        }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.leaves[id.0]
    }

    /// Parameter leaves in store order.
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    pub fn training(&self) -> bool {
        self.dropout_seed.is_some()
    }

    pub fn dropout(&self, x: Var) -> Result<Var> {
        let Some(seed) = self.dropout_seed else {
            return Ok(x);
        };
        let call = self.dropout_calls.get();
        self.dropout_calls.set(call + 1);
        self.graph
            .dropout(x, self.dropout, true, mix_seed(seed, call))
    }

    pub fn attention_records(&self) -> Vec<AttentionRecord> {
        self.attention.borrow().clone()
    }

    fn record(&self, rec: AttentionRecord) {
        self.attention.borrow_mut().push(rec);
    }
}

/// SplitMix64 finalizer over `a` and `b`.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Registers parameters with Glorot-uniform initial values.
pub struct ParamBuilder<'s, T> {
    store: &'s mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'s, T: Scalar> ParamBuilder<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize, fan_out: usize) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(self.rng.gen_range(-limit..limit)))
            .collect();
        self.store
            .insert(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.insert(name, Tensor::filled(shape, T::of(value)))
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear {
            weight: self.uniform(format!("{name}.weight"), &[d_in, d_out], d_in, d_out),
            bias: self.fill(format!("{name}.bias"), &[d_out], 0.0),
        }
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize, padding: Padding) -> Conv {
        Conv {
            weight: self.uniform(
                format!("{name}.weight"),
                &[c_out, c_in, kernel],
                c_in * kernel,
                c_out * kernel,
            ),
            bias: self.fill(format!("{name}.bias"), &[c_out], 0.0),
            padding,
        }
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gain: self.fill(format!("{name}.gain"), &[d], 1.0),
            bias: self.fill(format!("{name}.bias"), &[d], 0.0),
        }
    }

    pub fn embedding(&mut self, name: &str, vocab: usize, d: usize) -> ParamId {
        self.uniform(name.to_string(), &[vocab, d], vocab, d)
    }

    pub fn attention(&mut self, name: &str, d: usize, n_heads: usize) -> Attention {
        Attention {
            query: self.linear(&format!("{name}.query"), d, d),
            key: self.linear(&format!("{name}.key"), d, d),
            value: self.linear(&format!("{name}.value"), d, d),
            output: self.linear(&format!("{name}.output"), d, d),
            n_heads,
        }
    }

    pub fn feed_forward(&mut self, name: &str, d: usize, d_ff: usize) -> FeedForward {
        FeedForward {
            inner: self.linear(&format!("{name}.inner"), d, d_ff),
            outer: self.linear(&format!("{name}.outer"), d_ff, d),
        }
    }

    pub fn encoder_layer(&mut self, name: &str, d: usize, n_heads: usize, d_ff: usize) -> EncoderLayer {
        EncoderLayer {
            self_attn: self.attention(&format!("{name}.self_attn"), d, n_heads),
            norm1: self.layer_norm(&format!("{name}.norm1"), d),
            ffn: self.feed_forward(&format!("{name}.ffn"), d, d_ff),
            norm2: self.layer_norm(&format!("{name}.norm2"), d),
        }
    }

    pub fn decoder_layer(&mut self, name: &str, d: usize, n_heads: usize, d_ff: usize) -> DecoderLayer {
        DecoderLayer {
            self_attn: self.attention(&format!("{name}.self_attn"), d, n_heads),
            norm1: self.layer_norm(&format!("{name}.norm1"), d),
            cross_attn: self.attention(&format!("{name}.cross_attn"), d, n_heads),
            norm2: self.layer_norm(&format!("{name}.norm2"), d),
            ffn: self.feed_forward(&format!("{name}.ffn"), d, d_ff),
            norm3: self.layer_norm(&format!("{name}.norm3"), d),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let y = s.graph.matmul(x, s.p(self.weight))?;
        s.graph.add_bias(y, s.p(self.bias))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: Padding,
}

impl Conv {
    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        s.graph
            .conv1d(x, s.p(self.weight), s.p(self.bias), self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        s.graph.layer_norm(x, s.p(self.gain), s.p(self.bias), 1)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
}

impl Attention {
    /// `queries` is `[n x d]`, `memory` is `[m x d]`, `allowed` is the
    /// row-major `[n x m]` mask of keys each query may see.
    pub fn forward<T: Scalar>(
        &self,
        s: &Session<T>,
        block: &str,
        queries: Var,
        memory: Var,
        allowed: Rc<Vec<bool>>,
    ) -> Result<Var> {
        let g = s.graph;
        let q = self.query.forward(s, queries)?;
        let k = self.key.forward(s, memory)?;
        let v = self.value.forward(s, memory)?;
        let d = g.shape(q)[1];
        let dk = d / self.n_heads;
        let scale = T::of(1.0 / (dk as f64).sqrt());
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    g.narrow(q, 1, h * dk, dk)?,
                    g.narrow(k, 1, h * dk, dk)?,
                    g.narrow(v, 1, h * dk, dk)?,
                )
            };
            let scores = g.scale(g.matmul(qh, g.transpose(kh)?)?, scale);
            let probs = g.masked_softmax(scores, &allowed)?;
            s.record(AttentionRecord {
                block: block.to_string(),
                head: h,
                probs,
                allowed: Rc::clone(&allowed),
            });
            heads.push(g.matmul(probs, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat(&heads, 1)?
        };
        self.output.forward(s, joined)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: Var) -> Result<Var> {
        let h = s.graph.relu(self.inner.forward(s, x)?);
        self.outer.forward(s, h)
    }
}

/// `LayerNorm(x + Dropout(sublayer))`
fn residual<T: Scalar>(s: &Session<T>, norm: &LayerNorm, x: Var, sub: Var) -> Result<Var> {
    let sub = s.dropout(sub)?;
    norm.forward(s, s.graph.add(x, sub)?)
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn forward<T: Scalar>(&self, s: &Session<T>, block: &str, x: Var, allowed: Rc<Vec<bool>>) -> Result<Var> {
        let a = self.self_attn.forward(s, block, x, x, allowed)?;
        let x = residual(s, &self.norm1, x, a)?;
        let f = self.ffn.forward(s, x)?;
        residual(s, &self.norm2, x, f)
    }
}

/// Self-attention, cross-attention to a memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub cross_attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn forward<T: Scalar>(
        &self,
        s: &Session<T>,
        block: &str,
        x: Var,
        self_allowed: Rc<Vec<bool>>,
        memory: Var,
        cross_allowed: Rc<Vec<bool>>,
    ) -> Result<Var> {
        let a = self
            .self_attn
            .forward(s, &format!("{block}.self"), x, x, self_allowed)?;
        let x = residual(s, &self.norm1, x, a)?;
        let c = self
            .cross_attn
            .forward(s, &format!("{block}.cross"), x, memory, cross_allowed)?;
        let x = residual(s, &self.norm2, x, c)?;
        let f = self.ffn.forward(s, x)?;
        residual(s, &self.norm3, x, f)
    }
}

/// Mask letting every query see every unpadded key.
pub fn key_padding_mask(n_queries: usize, key_pad: &[bool]) -> Rc<Vec<bool>> {
    let mut m = Vec::with_capacity(n_queries * key_pad.len());
    for _ in 0..n_queries {
        m.extend(key_pad.iter().map(|&p| !p));
    }
    Rc::new(m)
}

/// Mask letting query `i` see keys `k <= i`.
pub fn causal_mask(n: usize) -> Rc<Vec<bool>> {
    Rc::new((0..n * n).map(|idx| idx % n <= idx / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_mask_is_lower_triangular() {
        let m = causal_mask(4);
        for i in 0..4 {
            for k in 0..4 {
                assert_eq!(m[i * 4 + k], k <= i);
            }
        }
    }

    #[test]
    fn key_padding_mask_hides_padded_keys() {
        let m = key_padding_mask(2, &[false, true, false]);
        assert_eq!(*m, vec![true, false, true, true, false, true]);
    }
}
