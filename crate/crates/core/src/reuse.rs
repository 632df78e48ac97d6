//! Offline document precompute and online reranking against stored
//! representations.
//!
//! `S1` stores the document representation `D` (`d×n`). `S2` stores, for
//! every interaction block, the cross-attention key and value projections
//! of `D` in head-major `h×d×(n/h)` layout, so `2K` tensors per document.
//! Both feed the same post-projection attention code, so for the same
//! stored floats they produce bit-identical scores.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{DocRepr, HyperParams, KvPair, MoresModel};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    S1,
    S2,
}

impl Strategy {
    pub fn code(self) -> u8 {
        match self {
            Strategy::S1 => 1,
            Strategy::S2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Strategy::S1),
            2 => Some(Strategy::S2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::S1 => "s1",
            Strategy::S2 => "s2",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    S1(Tensor),
    S2(Vec<KvPair>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocRecord {
    pub len: usize,
    pub payload: Payload,
}

impl DocRecord {
    pub fn strategy(&self) -> Strategy {
        match self.payload {
            Payload::S1(_) => Strategy::S1,
            Payload::S2(_) => Strategy::S2,
        }
    }

    pub fn repr(&self) -> DocRepr<'_> {
        match &self.payload {
            Payload::S1(d) => DocRepr::Raw(d),
            Payload::S2(kv) => DocRepr::Projected(kv),
        }
    }

    /// Number of stored floats: `d·n` for S1, `2·K·d·n` for S2.
    pub fn payload_floats(&self) -> usize {
        match &self.payload {
            Payload::S1(d) => d.len(),
            Payload::S2(kv) => kv.iter().map(|p| p.keys.len() + p.values.len()).sum(),
        }
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_floats() * 8
    }

    /// Payload floats in storage order: `D` row-major, or for each block
    /// its keys then its values, head-major.
    pub fn payload_values(&self) -> impl Iterator<Item = f64> + '_ {
        let parts: Vec<&[f64]> = match &self.payload {
            Payload::S1(d) => alloc::vec![d.data()],
            Payload::S2(kv) => kv.iter().flat_map(|p| [p.keys.data(), p.values.data()]).collect(),
        };
        parts.into_iter().flat_map(|s| s.iter().copied())
    }

    /// Rebuilds a record from floats laid out as by
    /// [`payload_values`](Self::payload_values).
    pub fn from_values(strategy: Strategy, len: usize, shape: &IndexShape, values: Vec<f64>) -> Result<Self> {
        let expected = shape.payload_floats(strategy, len);
        if values.len() != expected || len == 0 {
            return Err(Error::shape("record payload", &[expected], &[values.len()]));
        }
        let payload = match strategy {
            Strategy::S1 => Payload::S1(Tensor::new(alloc::vec![len, shape.hidden], values)?),
            Strategy::S2 => {
                let dims = [shape.heads, len, shape.hidden / shape.heads];
                let chunk = len * shape.hidden;
                let mut kv = Vec::with_capacity(shape.blocks);
                let mut it = values.chunks_exact(chunk);
                for _ in 0..shape.blocks {
                    let keys = Tensor::new(dims.to_vec(), it.next().expect("sized").to_vec())?;
                    let values = Tensor::new(dims.to_vec(), it.next().expect("sized").to_vec())?;
                    kv.push(KvPair { keys, values });
                }
                Payload::S2(kv)
            }
        };
        Ok(DocRecord { len, payload })
    }
}

/// Model dimensions an index is laid out for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexShape {
    pub blocks: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl IndexShape {
    pub fn of(hp: &HyperParams) -> Self {
        IndexShape {
            blocks: hp.interaction_blocks,
            hidden: hp.hidden,
            heads: hp.heads,
        }
    }

    pub fn payload_floats(&self, strategy: Strategy, len: usize) -> usize {
        match strategy {
            Strategy::S1 => len * self.hidden,
            Strategy::S2 => 2 * self.blocks * len * self.hidden,
        }
    }

    fn check(&self, record: &DocRecord) -> Result<()> {
        let ok = match &record.payload {
            Payload::S1(d) => d.dims() == [record.len, self.hidden],
            Payload::S2(kv) => {
                let dims = [self.heads, record.len, self.hidden / self.heads];
                kv.len() == self.blocks && kv.iter().all(|p| p.keys.dims() == dims && p.values.dims() == dims)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "index record",
                &[self.blocks, self.hidden, self.heads],
                &[record.len, record.payload_floats()],
            ))
        }
    }
}

/// Precomputed records keyed by document id, tied to one model by its
/// fingerprint.
#[derive(Clone, Debug, PartialEq)]
pub struct ReuseIndex {
    strategy: Strategy,
    fingerprint: u64,
    shape: IndexShape,
    records: BTreeMap<String, DocRecord>,
}

impl ReuseIndex {
    pub fn new(strategy: Strategy, fingerprint: u64, shape: IndexShape) -> Self {
        ReuseIndex {
            strategy,
            fingerprint,
            shape,
            records: BTreeMap::new(),
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn shape(&self) -> IndexShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&DocRecord> {
        self.records.get(doc_id)
    }

    /// Records in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &DocRecord)> {
        self.records.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, doc_id: String, record: DocRecord) -> Result<()> {
        if record.strategy() != self.strategy {
            return Err(Error::Strategy {
                found: record.strategy().name(),
                wanted: self.strategy.name(),
            });
        }
        self.shape.check(&record)?;
        if self.records.contains_key(&doc_id) {
            return Err(Error::DuplicateDoc(doc_id));
        }
        self.records.insert(doc_id, record);
        Ok(())
    }

    /// Fails unless the index was built for `fingerprint` with `wanted`.
    pub fn ensure_compatible(&self, fingerprint: u64, wanted: Option<Strategy>) -> Result<()> {
        if self.fingerprint != fingerprint {
            return Err(Error::StaleIndex {
                index: self.fingerprint,
                model: fingerprint,
            });
        }
        if let Some(w) = wanted {
            if w != self.strategy {
                return Err(Error::Strategy {
                    found: self.strategy.name(),
                    wanted: w.name(),
                });
            }
        }
        Ok(())
    }
}

/// Offline work for one document.
pub fn build_record(model: &MoresModel, tokens: &[u32], strategy: Strategy) -> Result<DocRecord> {
    let d = model.encode_document(tokens, None)?;
    let payload = match strategy {
        Strategy::S1 => Payload::S1(d),
        Strategy::S2 => Payload::S2(model.project_document(&d)?),
    };
    Ok(DocRecord {
        len: tokens.len(),
        payload,
    })
}

/// Precomputes every document of `corpus`. Ids must be unique.
pub fn build_index<I, S>(model: &MoresModel, fingerprint: u64, corpus: I, strategy: Strategy) -> Result<ReuseIndex>
where
    I: IntoIterator<Item = (String, S)>,
    S: AsRef<[u32]>,
{
    let mut index = ReuseIndex::new(strategy, fingerprint, IndexShape::of(model.hyper_params()));
    for (id, tokens) in corpus {
        if index.records.contains_key(&id) {
            return Err(Error::DuplicateDoc(id));
        }
        let record = build_record(model, tokens.as_ref(), strategy)?;
        index.insert(id, record)?;
    }
    Ok(index)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranked {
    pub doc_id: String,
    pub score: f64,
}

/// Score descending, then id ascending.
pub fn sort_ranking(list: &mut [Ranked]) {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
}

/// Reranks `candidates` for one query against stored records. The query
/// is encoded once.
pub fn rank_candidates<S: AsRef<str>>(
    model: &MoresModel,
    fingerprint: u64,
    query: &[u32],
    candidates: &[S],
    index: &ReuseIndex,
    wanted: Option<Strategy>,
) -> Result<Vec<Ranked>> {
    index.ensure_compatible(fingerprint, wanted)?;
    let missing: Vec<String> = candidates
        .iter()
        .map(AsRef::as_ref)
        .filter(|id| index.get(id).is_none())
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingDocs(missing));
    }
    let q = model.encode_query(query, None)?;
    let mut out = candidates
        .iter()
        .map(|id| {
            let id = id.as_ref();
            let rec = index.get(id).expect("checked above");
            Ok(Ranked {
                doc_id: String::from(id),
                score: model.score(&q, rec.repr(), None, None)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranking(&mut out);
    Ok(out)
}

/// Reranks without an index, encoding every candidate online.
pub fn rank_on_the_fly<S: AsRef<str>, T: AsRef<[u32]>>(
    model: &MoresModel,
    query: &[u32],
    candidates: &[(S, T)],
) -> Result<Vec<Ranked>> {
    let q = model.encode_query(query, None)?;
    let mut out = candidates
        .iter()
        .map(|(id, tokens)| {
            let d = model.encode_document(tokens.as_ref(), None)?;
            Ok(Ranked {
                doc_id: String::from(id.as_ref()),
                score: model.score(&q, DocRepr::Raw(&d), None, None)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranking(&mut out);
    Ok(out)
}
