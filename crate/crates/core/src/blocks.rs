//! Multi-head attention, the encoder layer used by both representation
//! modules, and the interaction block.
//!
//! Weights multiply row vectors from the right: a linear layer maps `x` to
//! `x·W + b`. Attention scales each head's logits by `1/sqrt(n/h)`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{MacKind, Tensor};

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-12;

/// Produces initial values for weight tensors of the given dims.
pub trait WeightInit {
    fn weight(&mut self, dims: &[usize]) -> Tensor;
}

impl<F: FnMut(&[usize]) -> Tensor> WeightInit for F {
    fn weight(&mut self, dims: &[usize]) -> Tensor {
        self(dims)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        init: &mut dyn WeightInit,
    ) -> Self {
        Linear {
            weight: store.add(format!("{prefix}.weight"), init.weight(&[n_in, n_out])),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[n_out])),
        }
    }

    pub fn forward<'a, G: Graph<'a>>(
        &self,
        g: &mut G,
        store: &'a ParamStore,
        x: &G::Node,
        kind: MacKind,
    ) -> Result<G::Node> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, &w, kind)?;
        g.add_row(&xw, &b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn register(store: &mut ParamStore, prefix: &str, n: usize) -> Self {
        Norm {
            gain: store.add(format!("{prefix}.gain"), Tensor::full(&[n], 1.0)),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[n])),
        }
    }

    pub fn forward<'a, G: Graph<'a>>(&self, g: &mut G, store: &'a ParamStore, x: &G::Node) -> Result<G::Node> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, &gain, &bias, LN_EPS)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}

/// Keys and values for an attention call: either the raw sequence to
/// project, or head-major `h×b×(n/h)` projections computed earlier.
#[derive(Clone, Copy, Debug)]
pub enum KeyValues<'n, N> {
    Raw(&'n N),
    Projected { keys: &'n N, values: &'n N },
}

/// Attention output plus one `a×b` weight matrix per head.
#[derive(Clone, Debug)]
pub struct Attended<N> {
    pub output: N,
    pub weights: Vec<N>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl Attention {
    /// Panics unless `heads` divides `n`.
    pub fn register(store: &mut ParamStore, prefix: &str, n: usize, heads: usize, init: &mut dyn WeightInit) -> Self {
        assert!(
            heads > 0 && n.is_multiple_of(heads),
            "hidden size {n} not divisible by {heads} heads"
        );
        Attention {
            query: Linear::register(store, &format!("{prefix}.query"), n, n, init),
            key: Linear::register(store, &format!("{prefix}.key"), n, n, init),
            value: Linear::register(store, &format!("{prefix}.value"), n, n, init),
            output: Linear::register(store, &format!("{prefix}.output"), n, n, init),
            heads,
        }
    }

    pub fn params(&self) -> [ParamId; 8] {
        let [a, b] = self.query.params();
        let [c, d] = self.key.params();
        let [e, f] = self.value.params();
        let [h, i] = self.output.params();
        [a, b, c, d, e, f, h, i]
    }

    /// Head-major key and value projections of `y`.
    pub fn project_kv<'a, G: Graph<'a>>(
        &self,
        g: &mut G,
        store: &'a ParamStore,
        y: &G::Node,
    ) -> Result<(G::Node, G::Node)> {
        let k = self.key.forward(g, store, y, MacKind::Projection)?;
        let v = self.value.forward(g, store, y, MacKind::Projection)?;
        Ok((g.split_heads(&k, self.heads)?, g.split_heads(&v, self.heads)?))
    }

    /// Scaled dot-product multi-head attention from `x` to the keys and
    /// values. `key_mask[j] == false` removes key `j` from every softmax.
    pub fn attend<'a, G: Graph<'a>>(
        &self,
        g: &mut G,
        store: &'a ParamStore,
        x: &G::Node,
        kv: KeyValues<'_, G::Node>,
        key_mask: Option<&[bool]>,
    ) -> Result<Attended<G::Node>> {
        let projected;
        let (keys, values) = match kv {
            KeyValues::Raw(y) => {
                projected = self.project_kv(g, store, y)?;
                (&projected.0, &projected.1)
            }
            KeyValues::Projected { keys, values } => (keys, values),
        };
        self.attend_projected(g, store, x, keys, values, key_mask)
    }

    // Both key/value sources meet here, so they run identical arithmetic.
    fn attend_projected<'a, G: Graph<'a>>(
        &self,
        g: &mut G,
        store: &'a ParamStore,
        x: &G::Node,
        keys: &G::Node,
        values: &G::Node,
        key_mask: Option<&[bool]>,
    ) -> Result<Attended<G::Node>> {
        let n = g.value(x).cols();
        let dh = n / self.heads;
        let kdims = g.value(keys).dims().to_vec();
        if kdims.len() != 3 || kdims[0] != self.heads || kdims[2] != dh || g.value(values).dims() != &kdims[..] {
            return Err(Error::shape("attend keys/values", &kdims, g.value(values).dims()));
        }
        if let Some(mask) = key_mask {
            if mask.len() != kdims[1] {
                return Err(Error::shape("attend mask", &kdims, &[mask.len()]));
            }
        }
        let scale = 1.0 / libm::sqrt(dh as f64);
        let q = self.query.forward(g, store, x, MacKind::Projection)?;
        let q = g.split_heads(&q, self.heads)?;
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.head(&q, h)?;
            let kh = g.head(keys, h)?;
            let vh = g.head(values, h)?;
            let kt = g.transpose(&kh)?;
            let logits = g.matmul(&qh, &kt, MacKind::AttnScore)?;
            let logits = g.scale(&logits, scale)?;
            let probs = g.softmax_rows(&logits, key_mask)?;
            contexts.push(g.matmul(&probs, &vh, MacKind::AttnContext)?);
            weights.push(probs);
        }
        let merged = g.concat_cols(&contexts)?;
        let output = self.output.forward(g, store, &merged, MacKind::Projection)?;
        Ok(Attended { output, weights })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn register(store: &mut ParamStore, prefix: &str, n: usize, f: usize, init: &mut dyn WeightInit) -> Self {
        FeedForward {
            inner: Linear::register(store, &format!("{prefix}.inner"), n, f, init),
            outer: Linear::register(store, &format!("{prefix}.outer"), f, n, init),
        }
    }

    pub fn forward<'a, G: Graph<'a>>(&self, g: &mut G, store: &'a ParamStore, x: &G::Node) -> Result<G::Node> {
        let h = self.inner.forward(g, store, x, MacKind::Ffn)?;
        let h = g.gelu(&h)?;
        self.outer.forward(g, store, &h, MacKind::Ffn)
    }

    pub fn params(&self) -> [ParamId; 4] {
        let [a, b] = self.inner.params();
        let [c, d] = self.outer.params();
        [a, b, c, d]
    }
}

/// Post-norm Transformer encoder layer:
/// `h = LN(Attend(x, x) + x)`, `out = LN(FFN(h) + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderLayer {
    pub attn: Attention,
    pub attn_norm: Norm,
    pub ffn: FeedForward,
    pub ffn_norm: Norm,
}

impl EncoderLayer {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        n: usize,
        heads: usize,
        f: usize,
        init: &mut dyn WeightInit,
    ) -> Self {
        EncoderLayer {
            attn: Attention::register(store, &format!("{prefix}.attn"), n, heads, init),
            attn_norm: Norm::register(store, &format!("{prefix}.attn_norm"), n),
            ffn: FeedForward::register(store, &format!("{prefix}.ffn"), n, f, init),
            ffn_norm: Norm::register(store, &format!("{prefix}.ffn_norm"), n),
        }
    }

    /// Returns the layer output and the self-attention weights per head.
    pub fn forward<'a, G: Graph<'a>>(
        &self,
        g: &mut G,
        store: &'a ParamStore,
        x: &G::Node,
        mask: Option<&[bool]>,
    ) -> Result<(G::Node, Vec<G::Node>)> {
        let att = self.attn.attend(g, store, x, KeyValues::Raw(x), mask)?;
        let h = g.add(&att.output, x)?;
        let h = self.attn_norm.forward(g, store, &h)?;
        let f = self.ffn.forward(g, store, &h)?;
        let out = g.add(&f, &h)?;
        let out = self.ffn_norm.forward(g, store, &out)?;
        Ok((out, att.weights))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = Vec::with_capacity(16);
        v.extend(self.attn.params());
        v.extend(self.attn_norm.params());
        v.extend(self.ffn.params());
        v.extend(self.ffn_norm.params());
        v
    }
}

/// Output of one interaction block.
#[derive(Clone, Debug)]
pub struct BlockOutput<N> {
    pub hidden: N,
    pub cross_weights: Vec<N>,
    pub self_weights: Vec<N>,
}

/// Query-to-document cross-attention, then query self-attention, then a
/// feed-forward network, each followed by a residual add and layer norm.
/// The document side is only read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InteractionBlock {
    pub cross: Attention,
    pub cross_norm: Norm,
    pub self_attn: Attention,
    pub self_norm: Norm,
    pub ffn: FeedForward,
    pub ffn_norm: Norm,
}

impl InteractionBlock {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        n: usize,
        heads: usize,
        f: usize,
        init: &mut dyn WeightInit,
    ) -> Self {
        InteractionBlock {
            cross: Attention::register(store, &format!("{prefix}.cross"), n, heads, init),
            cross_norm: Norm::register(store, &format!("{prefix}.cross_norm"), n),
            self_attn: Attention::register(store, &format!("{prefix}.self"), n, heads, init),
            self_norm: Norm::register(store, &format!("{prefix}.self_norm"), n),
            ffn: FeedForward::register(store, &format!("{prefix}.ffn"), n, f, init),
            ffn_norm: Norm::register(store, &format!("{prefix}.ffn_norm"), n),
        }
    }

    pub fn forward<'a, G: Graph<'a>>(
        &self,
        g: &mut G,
        store: &'a ParamStore,
        q: &G::Node,
        doc: KeyValues<'_, G::Node>,
        doc_mask: Option<&[bool]>,
        query_mask: Option<&[bool]>,
    ) -> Result<BlockOutput<G::Node>> {
        let cross = self.cross.attend(g, store, q, doc, doc_mask)?;
        let qx = g.add(&cross.output, q)?;
        let qx = self.cross_norm.forward(g, store, &qx)?;
        let this = self.self_attn.attend(g, store, &qx, KeyValues::Raw(&qx), query_mask)?;
        let qs = g.add(&this.output, &qx)?;
        let qs = self.self_norm.forward(g, store, &qs)?;
        let f = self.ffn.forward(g, store, &qs)?;
        let out = g.add(&f, &qs)?;
        let hidden = self.ffn_norm.forward(g, store, &out)?;
        Ok(BlockOutput {
            hidden,
            cross_weights: cross.weights,
            self_weights: this.weights,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = Vec::with_capacity(28);
        v.extend(self.cross.params());
        v.extend(self.cross_norm.params());
        v.extend(self.self_attn.params());
        v.extend(self.self_norm.params());
        v.extend(self.ffn.params());
        v.extend(self.ffn_norm.params());
        v
    }
}

/// Word and learned position embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embeddings {
    pub word: ParamId,
    pub position: ParamId,
}

impl Embeddings {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        vocab: usize,
        positions: usize,
        n: usize,
        init: &mut dyn WeightInit,
    ) -> Self {
        Embeddings {
            word: store.add(format!("{prefix}.word"), init.weight(&[vocab, n])),
            position: store.add(format!("{prefix}.position"), init.weight(&[positions, n])),
        }
    }

    /// Word embedding plus position embedding, positions counted from 0.
    pub fn forward<'a, G: Graph<'a>>(&self, g: &mut G, store: &'a ParamStore, ids: &[u32]) -> Result<G::Node> {
        let max = store.get(self.position).rows();
        if ids.is_empty() || ids.len() > max {
            return Err(Error::Length { len: ids.len(), max });
        }
        let word = g.param(store, self.word);
        let pos = g.param(store, self.position);
        let w = g.embed(&word, ids)?;
        let positions: Vec<u32> = (0..ids.len() as u32).collect();
        let p = g.embed(&pos, &positions)?;
        g.add(&w, &p)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.word, self.position]
    }
}
