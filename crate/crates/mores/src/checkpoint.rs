//! Checkpoint files.
//!
//! ```text
//! "MORS" | u32 version = 1
//! | u32 × 9: n, heads, f, vocab_size, max_positions, M, N, K, source_layers
//! | u32 tensor_count
//! | per tensor: u16 name_len, UTF-8 name, u8 rank, rank × u64 dims,
//!   product(dims) × f64
//! ```
//!
//! All integers and floats are little-endian. A donor or monolithic
//! baseline checkpoint has `M = N = K = 0`.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use mores_core::{HyperParams, MonolithicModel, MoresModel, ParamStore, Tensor};

use crate::bytes::{expect_magic, put_f64s, put_u16, put_u32, put_u64, Reader};
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"MORS";
pub const VERSION: u32 = 1;

/// 64-bit FNV-1a hash of a checkpoint's bytes, used to tie indexes to the
/// model that built them.
pub fn fingerprint(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub hp: HyperParams,
    pub tensors: Vec<(String, Tensor)>,
}

/// Either model shape a checkpoint can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Mores(MoresModel),
    Monolithic(MonolithicModel),
}

impl Checkpoint {
    fn from_store(hp: HyperParams, store: &ParamStore) -> Self {
        Checkpoint {
            hp,
            tensors: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn from_mores(model: &MoresModel) -> Self {
        Self::from_store(*model.hyper_params(), model.store())
    }

    pub fn from_monolithic(model: &MonolithicModel) -> Self {
        Self::from_store(*model.hyper_params(), model.store())
    }

    pub fn into_model(self) -> Result<Model> {
        if self.hp.is_donor() {
            Ok(Model::Monolithic(MonolithicModel::from_tensors(self.hp, self.tensors)?))
        } else {
            Ok(Model::Mores(MoresModel::from_tensors(self.hp, self.tensors)?))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        let hp = &self.hp;
        for v in [
            hp.hidden,
            hp.heads,
            hp.ffn,
            hp.vocab_size,
            hp.max_positions,
            hp.doc_layers,
            hp.query_layers,
            hp.interaction_blocks,
            hp.source_layers,
        ] {
            put_u32(&mut out, v as u32);
        }
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_u16(&mut out, name.len() as u16);
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.dims() {
                put_u64(&mut out, d as u64);
            }
            put_f64s(&mut out, t.data().iter().copied());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        expect_magic(&mut r, MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let mut f = [0usize; 9];
        for v in &mut f {
            *v = r.u32("hyperparameters")? as usize;
        }
        let hp = HyperParams {
            hidden: f[0],
            heads: f[1],
            ffn: f[2],
            vocab_size: f[3],
            max_positions: f[4],
            doc_layers: f[5],
            query_layers: f[6],
            interaction_blocks: f[7],
            source_layers: f[8],
        };
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?).map_err(|_| FormatError::Name)?;
            let rank = r.u8("rank")? as usize;
            let mut raw = Vec::with_capacity(rank);
            for _ in 0..rank {
                raw.push(r.u64("dims")?);
            }
            let numel = raw
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining() as u64))
                .ok_or_else(|| FormatError::DimOverflow(raw.clone()))?;
            let dims: Vec<usize> = raw.iter().map(|&d| d as usize).collect();
            let data = r.f64s(numel as usize, "tensor data")?;
            let t = Tensor::new(dims, data).map_err(|_| FormatError::DimOverflow(raw))?;
            tensors.push((name.to_string(), t));
        }
        if r.remaining() != 0 {
            return Err(FormatError::Trailing(r.remaining()));
        }
        Ok(Checkpoint { hp, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    /// Reads a checkpoint and returns it with its fingerprint.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        let ck = Self::from_bytes(&bytes).map_err(|source| Error::Format {
            path: path.to_path_buf(),
            source,
        })?;
        Ok((ck, fingerprint(&bytes)))
    }
}

/// Loads a modular model and its fingerprint; a donor-shaped file is a
/// data error.
pub fn load_mores(path: &Path) -> Result<(MoresModel, u64)> {
    let (ck, fp) = Checkpoint::load(path)?;
    match ck.into_model()? {
        Model::Mores(m) => Ok((m, fp)),
        Model::Monolithic(_) => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "checkpoint holds a donor/monolithic encoder, not a modular model".into(),
        }),
    }
}

pub fn load_monolithic(path: &Path) -> Result<MonolithicModel> {
    let (ck, _) = Checkpoint::load(path)?;
    match ck.into_model()? {
        Model::Monolithic(m) => Ok(m),
        Model::Mores(_) => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "checkpoint holds a modular model, not a donor encoder".into(),
        }),
    }
}
