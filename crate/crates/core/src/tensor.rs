//! Dense row-major `f64` tensors and the multiply-accumulate counter.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major array of `f64`. Every extent is at least one.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) || numel != data.len() {
            return Err(Error::shape("tensor", &dims, &[data.len()]));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        assert!(
            !dims.is_empty() && !dims.contains(&0),
            "tensor extents must be positive: {dims:?}"
        );
        let numel = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Tensor {
            dims: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape("matrix", &self.dims, &[0, 0])),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.dims.len());
        let mut flat = 0;
        for (i, d) in index.iter().zip(&self.dims) {
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn reshaped(&self, dims: &[usize]) -> Result<Tensor> {
        Tensor::new(dims.to_vec(), self.data.clone())
    }

    /// Equality of dims and of every value's bit pattern.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }
}

/// Which matmul in the documented inventory a multiply-accumulate belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MacKind {
    /// Linear projections inside attention (query, key, value, output).
    Projection,
    /// Query-key dot products.
    AttnScore,
    /// Attention-weighted sum of values.
    AttnContext,
    /// Both feed-forward matmuls.
    Ffn,
    /// Scoring head.
    Head,
    Other,
}

impl MacKind {
    pub const ALL: [MacKind; 6] = [
        MacKind::Projection,
        MacKind::AttnScore,
        MacKind::AttnContext,
        MacKind::Ffn,
        MacKind::Head,
        MacKind::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MacKind::Projection => "projection",
            MacKind::AttnScore => "attn_score",
            MacKind::AttnContext => "attn_context",
            MacKind::Ffn => "ffn",
            MacKind::Head => "head",
            MacKind::Other => "other",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Exact count of scalar multiply-accumulates executed by forward matmuls.
///
/// A counter lives in each evaluation context rather than in a process
/// global, so concurrent evaluations attribute their work exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MacCounter {
    by_kind: [u64; 6],
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, kind: MacKind, m: usize, k: usize, p: usize) {
        self.by_kind[kind.slot()] += (m as u64) * (k as u64) * (p as u64);
    }

    pub fn total(&self) -> u64 {
        self.by_kind.iter().sum()
    }

    pub fn get(&self, kind: MacKind) -> u64 {
        self.by_kind[kind.slot()]
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn merge(&mut self, other: &MacCounter) {
        for (a, b) in self.by_kind.iter_mut().zip(other.by_kind) {
            *a += b;
        }
    }

    pub fn difference(&self, earlier: &MacCounter) -> MacCounter {
        let mut out = *self;
        for (a, b) in out.by_kind.iter_mut().zip(earlier.by_kind) {
            *a -= b;
        }
        out
    }
}
