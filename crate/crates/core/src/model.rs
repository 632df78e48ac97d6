//! Document/query representation modules, the interaction module, the
//! scoring head, the monolithic baseline, and split initialization from a
//! donor encoder.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::blocks::{BlockOutput, Embeddings, EncoderLayer, InteractionBlock, KeyValues, WeightInit};
use crate::error::{Error, Result};
use crate::graph::{Eager, EagerNode, Graph};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{MacKind, Tensor};

/// Reserved vocabulary ids.
pub mod special {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const CLS: u32 = 2;
    pub const SEP: u32 = 3;
    /// First id available to ordinary tokens.
    pub const FIRST_TOKEN: u32 = 4;
}

/// Standard deviation of freshly initialized weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HyperParams {
    /// Hidden size `n`.
    pub hidden: usize,
    pub heads: usize,
    /// Feed-forward inner size `f`.
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// `M`: document representation layers.
    pub doc_layers: usize,
    /// `N`: query representation layers.
    pub query_layers: usize,
    /// `K`: interaction blocks.
    pub interaction_blocks: usize,
    /// Layer count of the donor encoder.
    pub source_layers: usize,
}

impl HyperParams {
    /// Shape of a donor (or monolithic baseline) encoder: the three module
    /// layer counts are zero.
    pub fn donor(
        hidden: usize,
        heads: usize,
        ffn: usize,
        vocab_size: usize,
        max_positions: usize,
        source_layers: usize,
    ) -> Self {
        HyperParams {
            hidden,
            heads,
            ffn,
            vocab_size,
            max_positions,
            doc_layers: 0,
            query_layers: 0,
            interaction_blocks: 0,
            source_layers,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn is_donor(&self) -> bool {
        self.doc_layers == 0 && self.query_layers == 0 && self.interaction_blocks == 0
    }

    fn validate_common(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.ffn == 0 {
            return Err(Error::Config("ffn size must be positive".into()));
        }
        if self.vocab_size <= special::FIRST_TOKEN as usize {
            return Err(Error::Config(format!(
                "vocabulary of {} leaves no room beyond the reserved ids",
                self.vocab_size
            )));
        }
        if self.max_positions < 2 {
            return Err(Error::Config("max_positions must be at least 2".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        if self.doc_layers == 0 || self.query_layers == 0 || self.interaction_blocks == 0 {
            return Err(Error::Config(format!(
                "need M, N, K >= 1, got M={} N={} K={}",
                self.doc_layers, self.query_layers, self.interaction_blocks
            )));
        }
        Ok(())
    }

    pub fn validate_donor(&self) -> Result<()> {
        self.validate_common()?;
        if !self.is_donor() || self.source_layers == 0 {
            return Err(Error::Config(format!(
                "donor shape needs M = N = K = 0 and source_layers >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub(crate) fn normal_init(seed: u64) -> impl FnMut(&[usize]) -> Tensor {
    normal_init_std(seed, INIT_STD)
}

fn normal_init_std(seed: u64, std: f64) -> impl FnMut(&[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("valid std");
    move |dims: &[usize]| {
        let numel = dims.iter().product();
        let data = (0..numel).map(|_| normal.sample(&mut rng)).collect();
        Tensor::new(dims.to_vec(), data).expect("dims match")
    }
}

fn zero_init(dims: &[usize]) -> Tensor {
    Tensor::zeros(dims)
}

/// Embeddings followed by a stack of encoder layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderStack {
    pub embeddings: Embeddings,
    pub layers: Vec<EncoderLayer>,
}

/// Final hidden states plus each layer's per-head attention weights.
#[derive(Clone, Debug)]
pub struct Encoded<N> {
    pub hidden: N,
    pub attention: Vec<Vec<N>>,
}

impl EncoderStack {
    fn register(
        store: &mut ParamStore,
        prefix: &str,
        hp: &HyperParams,
        layers: usize,
        init: &mut dyn WeightInit,
    ) -> Self {
        let embeddings = Embeddings::register(
            store,
            &format!("{prefix}.embed"),
            hp.vocab_size,
            hp.max_positions,
            hp.hidden,
            init,
        );
        let layers = (0..layers)
            .map(|i| {
                EncoderLayer::register(
                    store,
                    &format!("{prefix}.layers.{i}"),
                    hp.hidden,
                    hp.heads,
                    hp.ffn,
                    init,
                )
            })
            .collect();
        EncoderStack { embeddings, layers }
    }

    pub fn forward<'a, G: Graph<'a>>(
        &self,
        g: &mut G,
        store: &'a ParamStore,
        ids: &[u32],
        mask: Option<&[bool]>,
    ) -> Result<Encoded<G::Node>> {
        if let Some(m) = mask {
            if m.len() != ids.len() {
                return Err(Error::shape("sequence mask", &[ids.len()], &[m.len()]));
            }
        }
        let mut h = self.embeddings.forward(g, store, ids)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, w) = layer.forward(g, store, &h, mask)?;
            h = out;
            attention.push(w);
        }
        Ok(Encoded { hidden: h, attention })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.embeddings.params().to_vec();
        for l in &self.layers {
            v.extend(l.params());
        }
        v
    }
}

/// Projects a row to a scalar: `w·x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ScoreHead {
    fn register(store: &mut ParamStore, n: usize, init: &mut dyn WeightInit) -> Self {
        ScoreHead {
            weight: store.add("score.weight".into(), init.weight(&[n])),
            bias: store.add("score.bias".into(), Tensor::zeros(&[1])),
        }
    }

    /// Scores row 0 of `hidden`; returns a one-element node.
    pub fn forward<'a, G: Graph<'a>>(&self, g: &mut G, store: &'a ParamStore, hidden: &G::Node) -> Result<G::Node> {
        let n = g.value(hidden).cols();
        let cls = g.row(hidden, 0)?;
        let w = g.param(store, self.weight);
        let w = g.reshape(&w, &[n, 1])?;
        let b = g.param(store, self.bias);
        let s = g.matmul(&cls, &w, MacKind::Head)?;
        let s = g.reshape(&s, &[1])?;
        g.add(&s, &b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Key and value projections of a document for one interaction block,
/// each head-major `h×d×(n/h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KvPair {
    pub keys: Tensor,
    pub values: Tensor,
}

/// How the document reaches the interaction module.
#[derive(Clone, Copy, Debug)]
pub enum DocRepr<'t> {
    /// The document representation `D`, `d×n`.
    Raw(&'t Tensor),
    /// One key/value pair per interaction block.
    Projected(&'t [KvPair]),
}

impl DocRepr<'_> {
    pub fn len(&self) -> usize {
        match self {
            DocRepr::Raw(d) => d.rows(),
            DocRepr::Projected(kv) => kv.first().map_or(0, |p| p.keys.dims()[1]),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Document side of the interaction module as graph nodes.
#[derive(Clone, Copy, Debug)]
pub enum DocNodes<'n, N> {
    Raw(&'n N),
    Projected(&'n [(N, N)]),
}

/// Final interaction hidden state and every block's outputs.
#[derive(Clone, Debug)]
pub struct Interaction<N> {
    pub hidden: N,
    pub blocks: Vec<BlockOutput<N>>,
}

/// Attention weights of one interaction block, one `(q+1)×d` or
/// `(q+1)×(q+1)` matrix per head.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockAttention {
    pub cross: Vec<Tensor>,
    pub self_attn: Vec<Tensor>,
}

/// Every attention matrix produced while scoring one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub doc: Vec<Vec<Tensor>>,
    pub query: Vec<Vec<Tensor>>,
    pub blocks: Vec<BlockAttention>,
}

fn to_tensors(nodes: Vec<EagerNode<'_>>) -> Vec<Tensor> {
    nodes.into_iter().map(EagerNode::into_tensor).collect()
}

/// The modular ranker: independent document and query representation
/// modules feeding a stack of interaction blocks and a scoring head.
#[derive(Clone, Debug, PartialEq)]
pub struct MoresModel {
    hp: HyperParams,
    store: ParamStore,
    doc: EncoderStack,
    query: EncoderStack,
    blocks: Vec<InteractionBlock>,
    head: ScoreHead,
}

impl MoresModel {
    fn build(hp: HyperParams, init: &mut dyn WeightInit) -> Result<Self> {
        hp.validate()?;
        let mut store = ParamStore::new();
        let doc = EncoderStack::register(&mut store, "doc", &hp, hp.doc_layers, init);
        let query = EncoderStack::register(&mut store, "query", &hp, hp.query_layers, init);
        let blocks = (0..hp.interaction_blocks)
            .map(|i| {
                InteractionBlock::register(
                    &mut store,
                    &format!("interaction.blocks.{i}"),
                    hp.hidden,
                    hp.heads,
                    hp.ffn,
                    init,
                )
            })
            .collect();
        let head = ScoreHead::register(&mut store, hp.hidden, init);
        Ok(MoresModel {
            hp,
            store,
            doc,
            query,
            blocks,
            head,
        })
    }

    /// Weights drawn from `normal(0, 0.02)`; biases and norm shifts zero,
    /// norm gains one.
    pub fn random(hp: HyperParams, seed: u64) -> Result<Self> {
        Self::build(hp, &mut normal_init(seed))
    }

    /// Rebuilds a model from named tensors, requiring an exact match of
    /// names and dims.
    pub fn from_tensors<I>(hp: HyperParams, named: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Tensor)>,
    {
        let mut model = Self::build(hp, &mut zero_init)?;
        model.store.fill_from(named)?;
        Ok(model)
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn doc_module(&self) -> &EncoderStack {
        &self.doc
    }

    pub fn query_module(&self) -> &EncoderStack {
        &self.query
    }

    pub fn blocks(&self) -> &[InteractionBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &ScoreHead {
        &self.head
    }

    /// Parameters of both representation modules, embeddings included.
    pub fn representation_params(&self) -> Vec<ParamId> {
        let mut v = self.doc.params();
        v.extend(self.query.params());
        v
    }

    /// Parameters of the interaction blocks and the scoring head.
    pub fn interaction_params(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.blocks.iter().flat_map(InteractionBlock::params).collect();
        v.extend(self.head.params());
        v
    }

    fn check_doc(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > self.hp.max_positions {
            return Err(Error::Length {
                len: tokens.len(),
                max: self.hp.max_positions,
            });
        }
        Ok(())
    }

    pub fn encode_document_in<'a, G: Graph<'a>>(
        &'a self,
        g: &mut G,
        tokens: &[u32],
        mask: Option<&[bool]>,
    ) -> Result<Encoded<G::Node>> {
        self.check_doc(tokens)?;
        self.doc.forward(g, &self.store, tokens, mask)
    }

    /// Prepends `[CLS]` to `tokens` and runs the query module. The result
    /// has `tokens.len() + 1` rows; row 0 is the CLS position.
    pub fn encode_query_in<'a, G: Graph<'a>>(
        &'a self,
        g: &mut G,
        tokens: &[u32],
        mask: Option<&[bool]>,
    ) -> Result<Encoded<G::Node>> {
        let max = self.hp.max_positions - 1;
        if tokens.is_empty() || tokens.len() > max {
            return Err(Error::Length { len: tokens.len(), max });
        }
        let mut ids = Vec::with_capacity(tokens.len() + 1);
        ids.push(special::CLS);
        ids.extend_from_slice(tokens);
        let mask = mask.map(|m| {
            let mut full = Vec::with_capacity(m.len() + 1);
            full.push(true);
            full.extend_from_slice(m);
            full
        });
        if let Some(m) = &mask {
            if m.len() != ids.len() {
                return Err(Error::shape("query mask", &[tokens.len()], &[m.len() - 1]));
            }
        }
        self.query.forward(g, &self.store, &ids, mask.as_deref())
    }

    /// Key/value projections of `doc` under every block's cross-attention.
    pub fn project_document_in<'a, G: Graph<'a>>(
        &'a self,
        g: &mut G,
        doc: &G::Node,
    ) -> Result<Vec<(G::Node, G::Node)>> {
        self.blocks
            .iter()
            .map(|b| b.cross.project_kv(g, &self.store, doc))
            .collect()
    }

    /// Runs the interaction blocks over `q` against a fixed document side.
    pub fn interact_in<'a, G: Graph<'a>>(
        &'a self,
        g: &mut G,
        q: &G::Node,
        doc: DocNodes<'_, G::Node>,
        doc_mask: Option<&[bool]>,
        query_mask: Option<&[bool]>,
    ) -> Result<Interaction<G::Node>> {
        if let DocNodes::Projected(kv) = doc {
            if kv.len() != self.blocks.len() {
                return Err(Error::shape("projected document", &[self.blocks.len()], &[kv.len()]));
            }
        }
        let mut h = q.clone();
        let mut outs = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let side = match doc {
                DocNodes::Raw(d) => KeyValues::Raw(d),
                DocNodes::Projected(kv) => KeyValues::Projected {
                    keys: &kv[i].0,
                    values: &kv[i].1,
                },
            };
            let out = block.forward(g, &self.store, &h, side, doc_mask, query_mask)?;
            h = out.hidden.clone();
            outs.push(out);
        }
        Ok(Interaction {
            hidden: h,
            blocks: outs,
        })
    }

    pub fn score_head_in<'a, G: Graph<'a>>(&'a self, g: &mut G, hidden: &G::Node) -> Result<G::Node> {
        self.head.forward(g, &self.store, hidden)
    }

    /// End-to-end relevance logit for one pair; used for training.
    pub fn forward_pair_in<'a, G: Graph<'a>>(&'a self, g: &mut G, query: &[u32], doc: &[u32]) -> Result<G::Node> {
        let d = self.encode_document_in(g, doc, None)?.hidden;
        let q = self.encode_query_in(g, query, None)?.hidden;
        let inter = self.interact_in(g, &q, DocNodes::Raw(&d), None, None)?;
        self.score_head_in(g, &inter.hidden)
    }

    /// Document representation `D`, `d×n`.
    pub fn encode_document(&self, tokens: &[u32], mask: Option<&[bool]>) -> Result<Tensor> {
        let mut g = Eager::new();
        Ok(self.encode_document_in(&mut g, tokens, mask)?.hidden.into_tensor())
    }

    /// Query representation with the CLS row first, `(q+1)×n`.
    pub fn encode_query(&self, tokens: &[u32], mask: Option<&[bool]>) -> Result<Tensor> {
        let mut g = Eager::new();
        Ok(self.encode_query_in(&mut g, tokens, mask)?.hidden.into_tensor())
    }

    /// Per-block key/value projections of `D`, as stored for reuse.
    pub fn project_document(&self, doc: &Tensor) -> Result<Vec<KvPair>> {
        let mut g = Eager::new();
        let d = g.constant(doc);
        Ok(self
            .project_document_in(&mut g, &d)?
            .into_iter()
            .map(|(k, v)| KvPair {
                keys: k.into_tensor(),
                values: v.into_tensor(),
            })
            .collect())
    }

    fn score_eager<'a>(
        &'a self,
        g: &mut Eager,
        q: &'a Tensor,
        doc: DocRepr<'a>,
        doc_mask: Option<&[bool]>,
        query_mask: Option<&[bool]>,
    ) -> Result<(f64, Vec<BlockOutput<EagerNode<'a>>>)> {
        if let Some(m) = doc_mask {
            if m.len() != doc.len() {
                return Err(Error::shape("document mask", &[doc.len()], &[m.len()]));
            }
        }
        let qn = g.constant(q);
        let inter = match doc {
            DocRepr::Raw(d) => {
                let dn = g.constant(d);
                self.interact_in(g, &qn, DocNodes::Raw(&dn), doc_mask, query_mask)?
            }
            DocRepr::Projected(kv) => {
                let nodes: Vec<_> = kv
                    .iter()
                    .map(|p| (g.constant(&p.keys), g.constant(&p.values)))
                    .collect();
                self.interact_in(g, &qn, DocNodes::Projected(&nodes), doc_mask, query_mask)?
            }
        };
        let s = self.score_head_in(g, &inter.hidden)?;
        Ok((s.tensor().data()[0], inter.blocks))
    }

    /// Relevance score of a query representation against a document.
    pub fn score(
        &self,
        q: &Tensor,
        doc: DocRepr<'_>,
        doc_mask: Option<&[bool]>,
        query_mask: Option<&[bool]>,
    ) -> Result<f64> {
        self.score_counted(q, doc, doc_mask, query_mask).map(|(s, _)| s)
    }

    /// As [`score`](Self::score), also returning the multiply-accumulates spent.
    pub fn score_counted(
        &self,
        q: &Tensor,
        doc: DocRepr<'_>,
        doc_mask: Option<&[bool]>,
        query_mask: Option<&[bool]>,
    ) -> Result<(f64, crate::tensor::MacCounter)> {
        let mut g = Eager::new();
        let (s, _) = self.score_eager(&mut g, q, doc, doc_mask, query_mask)?;
        Ok((s, g.into_macs()))
    }

    /// Score plus each interaction block's attention weights.
    pub fn score_with_attention(
        &self,
        q: &Tensor,
        doc: DocRepr<'_>,
        doc_mask: Option<&[bool]>,
        query_mask: Option<&[bool]>,
    ) -> Result<(f64, Vec<BlockAttention>)> {
        let mut g = Eager::new();
        let (s, blocks) = self.score_eager(&mut g, q, doc, doc_mask, query_mask)?;
        let att = blocks
            .into_iter()
            .map(|b| BlockAttention {
                cross: to_tensors(b.cross_weights),
                self_attn: to_tensors(b.self_weights),
            })
            .collect();
        Ok((s, att))
    }

    /// Every attention matrix for one (query, document) pair.
    pub fn trace(&self, query: &[u32], doc: &[u32]) -> Result<(f64, AttentionTrace)> {
        let mut g = Eager::new();
        let d = self.encode_document_in(&mut g, doc, None)?;
        let q = self.encode_query_in(&mut g, query, None)?;
        let inter = self.interact_in(&mut g, &q.hidden, DocNodes::Raw(&d.hidden), None, None)?;
        let s = self.score_head_in(&mut g, &inter.hidden)?;
        let trace = AttentionTrace {
            doc: d.attention.into_iter().map(to_tensors).collect(),
            query: q.attention.into_iter().map(to_tensors).collect(),
            blocks: inter
                .blocks
                .into_iter()
                .map(|b| BlockAttention {
                    cross: to_tensors(b.cross_weights),
                    self_attn: to_tensors(b.self_weights),
                })
                .collect(),
        };
        Ok((s.tensor().data()[0], trace))
    }
}

/// Full-attention baseline over `[CLS] query [SEP] document`; also the
/// shape of a donor checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct MonolithicModel {
    hp: HyperParams,
    store: ParamStore,
    encoder: EncoderStack,
    head: ScoreHead,
}

impl MonolithicModel {
    fn build(hp: HyperParams, init: &mut dyn WeightInit) -> Result<Self> {
        hp.validate_donor()?;
        let mut store = ParamStore::new();
        let encoder = EncoderStack::register(&mut store, "encoder", &hp, hp.source_layers, init);
        let head = ScoreHead::register(&mut store, hp.hidden, init);
        Ok(MonolithicModel {
            hp,
            store,
            encoder,
            head,
        })
    }

    /// Seeded synthetic encoder in donor shape.
    pub fn random(hp: HyperParams, seed: u64) -> Result<Self> {
        Self::build(hp, &mut normal_init(seed))
    }

    /// As [`MonolithicModel::random`] with weights drawn from
    /// `normal(0, std)`.
    pub fn random_with_std(hp: HyperParams, seed: u64, std: f64) -> Result<Self> {
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::Config(format!(
                "init std must be positive and finite, got {std}"
            )));
        }
        Self::build(hp, &mut normal_init_std(seed, std))
    }

    pub fn from_tensors<I>(hp: HyperParams, named: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Tensor)>,
    {
        let mut model = Self::build(hp, &mut zero_init)?;
        model.store.fill_from(named)?;
        Ok(model)
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &EncoderStack {
        &self.encoder
    }

    pub fn head(&self) -> &ScoreHead {
        &self.head
    }

    /// `[CLS] query [SEP] doc` and its key mask.
    pub fn pair_input(&self, query: &[u32], doc: &[u32], doc_mask: Option<&[bool]>) -> Result<(Vec<u32>, Vec<bool>)> {
        let len = query.len() + doc.len() + 2;
        if query.is_empty() || doc.is_empty() || len > self.hp.max_positions {
            return Err(Error::Length {
                len,
                max: self.hp.max_positions,
            });
        }
        if let Some(m) = doc_mask {
            if m.len() != doc.len() {
                return Err(Error::shape("document mask", &[doc.len()], &[m.len()]));
            }
        }
        let mut ids = Vec::with_capacity(len);
        ids.push(special::CLS);
        ids.extend_from_slice(query);
        ids.push(special::SEP);
        ids.extend_from_slice(doc);
        let mut mask = vec![true; query.len() + 2];
        match doc_mask {
            Some(m) => mask.extend_from_slice(m),
            None => mask.resize(len, true),
        }
        Ok((ids, mask))
    }

    pub fn score_in<'a, G: Graph<'a>>(
        &'a self,
        g: &mut G,
        query: &[u32],
        doc: &[u32],
        doc_mask: Option<&[bool]>,
    ) -> Result<G::Node> {
        let (ids, mask) = self.pair_input(query, doc, doc_mask)?;
        let mask = doc_mask.map(|_| mask);
        let enc = self.encoder.forward(g, &self.store, &ids, mask.as_deref())?;
        self.head.forward(g, &self.store, &enc.hidden)
    }

    pub fn score(&self, query: &[u32], doc: &[u32], doc_mask: Option<&[bool]>) -> Result<f64> {
        self.score_counted(query, doc, doc_mask).map(|(s, _)| s)
    }

    pub fn score_counted(
        &self,
        query: &[u32],
        doc: &[u32],
        doc_mask: Option<&[bool]>,
    ) -> Result<(f64, crate::tensor::MacCounter)> {
        let mut g = Eager::new();
        let s = self.score_in(&mut g, query, doc, doc_mask)?;
        let v = s.tensor().data()[0];
        Ok((v, g.into_macs()))
    }
}

/// How interaction-block cross-attention is initialized by
/// [`split_initialize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossInit {
    /// Same weights as the donor layer's self-attention.
    Copy,
    /// Seeded `normal(0, 0.02)` weights and zero biases.
    Random,
}

fn copy_params(dst: &mut ParamStore, dst_ids: &[ParamId], src: &ParamStore, src_ids: &[ParamId]) {
    debug_assert_eq!(dst_ids.len(), src_ids.len());
    for (&d, &s) in dst_ids.iter().zip(src_ids) {
        *dst.get_mut(d) = src.get(s).clone();
    }
}

/// Builds a modular model from a donor encoder with `L` layers.
///
/// The document module receives a full copy of the donor. The query module
/// receives donor layers `1..=L-K` and its own copy of the embeddings.
/// Interaction block `i` takes donor layer `L-K+i` for its self-attention,
/// feed-forward and norms; its cross-attention either copies that layer's
/// self-attention or is drawn at random. The cross-attention norm copies
/// the donor's attention norm in both modes. The scoring vector is drawn
/// from `normal(0, 0.02)` and its bias starts at zero.
pub fn split_initialize(
    donor: &MonolithicModel,
    blocks: usize,
    cross_init: CrossInit,
    seed: u64,
) -> Result<MoresModel> {
    let dhp = donor.hp;
    dhp.validate_donor()?;
    if donor.encoder.layers.len() != dhp.source_layers {
        return Err(Error::Config(format!(
            "donor declares {} layers but holds {}",
            dhp.source_layers,
            donor.encoder.layers.len()
        )));
    }
    if blocks == 0 || blocks >= dhp.source_layers {
        return Err(Error::Config(format!(
            "interaction blocks must lie in 1..{}, got {blocks}",
            dhp.source_layers
        )));
    }
    let hp = HyperParams {
        doc_layers: dhp.source_layers,
        query_layers: dhp.source_layers - blocks,
        interaction_blocks: blocks,
        ..dhp
    };
    let mut model = MoresModel::build(hp, &mut zero_init)?;
    let src = &donor.store;
    let split = hp.query_layers;

    copy_params(&mut model.store, &model.doc.params(), src, &donor.encoder.params());
    copy_params(
        &mut model.store,
        &model.query.embeddings.params(),
        src,
        &donor.encoder.embeddings.params(),
    );
    for (dst, layer) in model.query.layers.iter().zip(&donor.encoder.layers[..split]) {
        copy_params(&mut model.store, &dst.params(), src, &layer.params());
    }

    let mut rng = normal_init(seed);
    for (block, layer) in model.blocks.iter().zip(&donor.encoder.layers[split..]) {
        let store = &mut model.store;
        copy_params(store, &block.self_attn.params(), src, &layer.attn.params());
        copy_params(store, &block.self_norm.params(), src, &layer.attn_norm.params());
        copy_params(store, &block.ffn.params(), src, &layer.ffn.params());
        copy_params(store, &block.ffn_norm.params(), src, &layer.ffn_norm.params());
        copy_params(store, &block.cross_norm.params(), src, &layer.attn_norm.params());
        match cross_init {
            CrossInit::Copy => copy_params(store, &block.cross.params(), src, &layer.attn.params()),
            CrossInit::Random => {
                for lin in [
                    block.cross.query,
                    block.cross.key,
                    block.cross.value,
                    block.cross.output,
                ] {
                    let dims = store.get(lin.weight).dims().to_vec();
                    *store.get_mut(lin.weight) = rng(&dims);
                    *store.get_mut(lin.bias) = Tensor::zeros(&[hp.hidden]);
                }
            }
        }
    }
    let w = model.head.weight;
    *model.store.get_mut(w) = rng(&[hp.hidden]);
    Ok(model)
}
