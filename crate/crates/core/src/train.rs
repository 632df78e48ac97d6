//! Pointwise training, module freezing, gradient checking and a synthetic
//! token-overlap relevance task.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{pointwise_loss, Eager, Graph};
use crate::metrics::{reciprocal_rank, Qrels};
use crate::model::{special, MoresModel};
use crate::params::ParamId;
use crate::reuse::{sort_ranking, Ranked};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::ADAM
    }
}

/// Which parameters stay fixed during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FreezeMode {
    #[default]
    None,
    /// Only the interaction blocks and scoring head train.
    AdaptInteraction,
    /// Only the representation modules train; the head stays with the
    /// interaction blocks.
    AdaptRepresentation,
}

impl FreezeMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(FreezeMode::None),
            "adapt-interaction" => Some(FreezeMode::AdaptInteraction),
            "adapt-representation" => Some(FreezeMode::AdaptRepresentation),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FreezeMode::None => "none",
            FreezeMode::AdaptInteraction => "adapt-interaction",
            FreezeMode::AdaptRepresentation => "adapt-representation",
        }
    }

    /// Parameters held fixed under this mode.
    pub fn frozen(self, model: &MoresModel) -> Vec<ParamId> {
        match self {
            FreezeMode::None => Vec::new(),
            FreezeMode::AdaptInteraction => model.representation_params(),
            FreezeMode::AdaptRepresentation => model.interaction_params(),
        }
    }

    /// `mask[id] == true` for trainable parameters.
    pub fn trainable_mask(self, model: &MoresModel) -> Vec<bool> {
        let mut mask = vec![true; model.store().len()];
        for id in self.frozen(model) {
            mask[id.index()] = false;
        }
        mask
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub optimizer: Optimizer,
    pub freeze: FreezeMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            steps: 200,
            optimizer: Optimizer::ADAM,
            freeze: FreezeMode::None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ToyExample {
    pub query: Vec<u32>,
    pub doc: Vec<u32>,
    pub label: u8,
}

struct OptimState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    fn new(model: &MoresModel) -> Self {
        let sizes: Vec<usize> = model.store().iter().map(|(_, t)| t.len()).collect();
        OptimState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn apply(&mut self, opt: Optimizer, lr: f64, id: ParamId, param: &mut Tensor, grad: &Tensor) {
        match opt {
            Optimizer::Sgd => {
                for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - libm::pow(beta1, t as f64);
                let c2 = 1.0 - libm::pow(beta2, t as f64);
                let m = &mut self.m[id.index()];
                let v = &mut self.v[id.index()];
                for (i, (p, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    *p -= lr * mh / (libm::sqrt(vh) + eps);
                }
            }
        }
    }
}

/// Mean pointwise loss over `batch` and its gradients, on a tape that
/// treats parameters with `mask[id] == false` as constants.
pub fn batch_gradients(
    model: &MoresModel,
    batch: &[&ToyExample],
    mask: Vec<bool>,
) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
    let mut tape = Tape::with_trainable(mask);
    let mut total = None;
    for ex in batch {
        let s = model.forward_pair_in(&mut tape, &ex.query, &ex.doc)?;
        let l = tape.bce_with_logits(&s, ex.label as f64)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(&t, &l)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
    let loss = tape.scale(&total, 1.0 / batch.len() as f64)?;
    let value = tape.value(&loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads.params().map(|(id, g)| (id, g.clone())).collect()))
}

/// Trains `model` in place and returns the per-step batch loss, measured
/// before each update. Batches are drawn from a seeded reshuffle of
/// `data`, one epoch after another.
pub fn train(model: &mut MoresModel, data: &[ToyExample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    let mask = cfg.freeze.trainable_mask(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut state = OptimState::new(model);
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = batch_gradients(model, &batch, mask.clone())?;
        trace.push(loss);
        state.step += 1;
        for (id, g) in grads {
            debug_assert!(mask[id.index()]);
            let p = model.store_mut().get_mut(id);
            state.apply(cfg.optimizer, cfg.learning_rate, id, p, &g);
        }
    }
    Ok(trace)
}

/// Pointwise loss of one example evaluated without a tape.
pub fn example_loss(model: &MoresModel, ex: &ToyExample) -> Result<f64> {
    let mut g = Eager::new();
    let s = model.forward_pair_in(&mut g, &ex.query, &ex.doc)?;
    Ok(pointwise_loss(s.tensor().data()[0], ex.label as f64))
}

/// Largest relative error within one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < self.tol)
    }

    pub fn worst(&self) -> Option<&GroupError> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares tape gradients with central differences
/// `(L(θ+h) − L(θ−h)) / 2h` for every element of every parameter tensor,
/// scoring `|analytic − numeric| / max(1, |numeric|)`. Parameters frozen
/// by `freeze` are expected to receive no tape gradient and are compared
/// against zero.
pub fn grad_check(
    model: &MoresModel,
    ex: &ToyExample,
    h: f64,
    tol: f64,
    freeze: FreezeMode,
) -> Result<GradCheckReport> {
    let mask = freeze.trainable_mask(model);
    let (_, grads) = batch_gradients(model, &[ex], mask.clone())?;
    let mut analytic: Vec<Option<Tensor>> = vec![None; model.store().len()];
    for (id, g) in grads {
        analytic[id.index()] = Some(g);
    }
    let mut probe = model.clone();
    let ids: Vec<ParamId> = model.store().ids().collect();
    let mut groups = Vec::with_capacity(ids.len());
    for id in ids {
        let frozen = !mask[id.index()];
        let name = String::from(model.store().name(id));
        let len = model.store().get(id).len();
        let mut worst: f64 = 0.0;
        for i in 0..len {
            let orig = probe.store().get(id).data()[i];
            probe.store_mut().get_mut(id).data_mut()[i] = orig + h;
            let up = example_loss(&probe, ex)?;
            probe.store_mut().get_mut(id).data_mut()[i] = orig - h;
            let down = example_loss(&probe, ex)?;
            probe.store_mut().get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let tape = analytic[id.index()].as_ref().map_or(0.0, |g| g.data()[i]);
            let reference = if frozen { 0.0 } else { numeric };
            let err = libm::fabs(tape - reference) / libm::fmax(1.0, libm::fabs(reference));
            worst = libm::fmax(worst, err);
        }
        groups.push(GroupError {
            name,
            max_rel_error: worst,
            frozen,
        });
    }
    Ok(GradCheckReport { groups, tol })
}

fn ordinary_range(vocab_size: usize) -> core::ops::Range<u32> {
    special::FIRST_TOKEN..vocab_size as u32
}

fn sample_distinct(rng: &mut ChaCha8Rng, pool: &[u32], count: usize) -> Vec<u32> {
    pool.choose_multiple(rng, count).copied().collect()
}

fn toy_doc(rng: &mut ChaCha8Rng, query: &[u32], filler: &[u32], d_len: usize, relevant: bool) -> Vec<u32> {
    let mut doc: Vec<u32> = (0..d_len).map(|_| *filler.choose(rng).expect("non-empty")).collect();
    if relevant {
        let need = query.len().div_ceil(2);
        let shared = rng.random_range(need..=query.len().min(d_len));
        let chosen = sample_distinct(rng, query, shared);
        let mut slots: Vec<usize> = (0..d_len).collect();
        slots.shuffle(rng);
        for (tok, slot) in chosen.into_iter().zip(slots) {
            doc[slot] = tok;
        }
    }
    doc
}

fn check_toy_sizes(vocab_size: usize, q_len: usize, d_len: usize) -> Result<usize> {
    let pool = vocab_size.saturating_sub(special::FIRST_TOKEN as usize);
    if q_len == 0 || d_len < q_len.div_ceil(2) {
        return Err(Error::Config(format!(
            "toy lengths need q_len >= 1 and d_len >= ceil(q_len/2), got {q_len} and {d_len}"
        )));
    }
    if pool < q_len + 1 {
        return Err(Error::Config(format!(
            "vocabulary of {vocab_size} cannot hold {q_len} query tokens plus disjoint filler"
        )));
    }
    Ok(pool)
}

fn query_and_filler(rng: &mut ChaCha8Rng, vocab_size: usize, q_len: usize) -> (Vec<u32>, Vec<u32>) {
    let all: Vec<u32> = ordinary_range(vocab_size).collect();
    let query = sample_distinct(rng, &all, q_len);
    let filler = all.into_iter().filter(|t| !query.contains(t)).collect();
    (query, filler)
}

/// Balanced synthetic pairs: even indices are relevant (the document
/// contains at least half of the query's distinct tokens), odd indices are
/// irrelevant (no shared token). Ordinary ids only.
pub fn gen_toy_data(vocab_size: usize, q_len: usize, d_len: usize, count: usize, seed: u64) -> Result<Vec<ToyExample>> {
    check_toy_sizes(vocab_size, q_len, d_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|i| {
            let relevant = i % 2 == 0;
            let (query, filler) = query_and_filler(&mut rng, vocab_size, q_len);
            let doc = toy_doc(&mut rng, &query, &filler, d_len, relevant);
            ToyExample {
                query,
                doc,
                label: relevant as u8,
            }
        })
        .collect())
}

/// A held-out query with labelled candidates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyQuery {
    pub query: Vec<u32>,
    pub candidates: Vec<(Vec<u32>, u8)>,
}

/// Queries with `candidates` documents each, exactly one relevant, placed
/// at a random position.
pub fn gen_toy_ranking(
    vocab_size: usize,
    q_len: usize,
    d_len: usize,
    queries: usize,
    candidates: usize,
    seed: u64,
) -> Result<Vec<ToyQuery>> {
    check_toy_sizes(vocab_size, q_len, d_len)?;
    if candidates == 0 {
        return Err(Error::Config("need at least one candidate per query".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..queries)
        .map(|_| {
            let (query, filler) = query_and_filler(&mut rng, vocab_size, q_len);
            let hit = rng.random_range(0..candidates);
            let candidates = (0..candidates)
                .map(|c| (toy_doc(&mut rng, &query, &filler, d_len, c == hit), (c == hit) as u8))
                .collect();
            ToyQuery { query, candidates }
        })
        .collect())
}

/// Mean reciprocal rank at `k` over held-out queries, ranking each
/// query's candidates by model score.
pub fn toy_mrr(model: &MoresModel, queries: &[ToyQuery], k: usize) -> Result<f64> {
    if queries.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (qi, tq) in queries.iter().enumerate() {
        let qid = format!("{qi}");
        let q = model.encode_query(&tq.query, None)?;
        let mut qrels = Qrels::new();
        let mut ranked = Vec::with_capacity(tq.candidates.len());
        for (ci, (doc, label)) in tq.candidates.iter().enumerate() {
            let id = format!("{ci:06}");
            if *label == 1 {
                qrels.insert(qid.clone(), id.clone(), 1);
            }
            let d = model.encode_document(doc, None)?;
            let score = model.score(&q, crate::model::DocRepr::Raw(&d), None, None)?;
            ranked.push(Ranked { doc_id: id, score });
        }
        sort_ranking(&mut ranked);
        total += reciprocal_rank(&qid, &ranked, &qrels, Some(k));
    }
    Ok(total / queries.len() as f64)
}
