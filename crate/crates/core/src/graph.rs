//! Evaluation contexts.
//!
//! Model code is written once against [`Graph`]. [`Eager`] evaluates and
//! drops intermediates as it goes; [`Tape`](crate::tape::Tape) records the
//! same operations for reverse-mode differentiation. Both compute forward
//! values through [`forward`], so their outputs agree bit for bit.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{MacCounter, MacKind, Tensor};

/// A graph operation together with its non-tensor attributes.
#[doc(hidden)]
#[derive(Clone, Debug)]
pub enum Op {
    MatMul(MacKind),
    Transpose,
    Add,
    Mul,
    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    AddRow,
    Scale(f64),
    Sum,
    Softmax {
        key_mask: Option<Vec<bool>>,
    },
    /// Inputs: x, gain, bias.
    LayerNorm {
        eps: f64,
    },
    Gelu,
    /// Inputs: table. Gathers rows.
    Embed {
        ids: Vec<u32>,
    },
    /// `b×n` to head-major `h×b×(n/h)`.
    SplitHeads {
        heads: usize,
    },
    /// Slice `i` of a head-major tensor.
    Head {
        index: usize,
    },
    ConcatCols,
    Row {
        index: usize,
    },
    Reshape {
        dims: Vec<usize>,
    },
    /// Binary cross-entropy on sigmoid of a scalar logit.
    BceWithLogits {
        label: f64,
    },
}

/// Values kept from the forward pass beyond inputs and output.
pub(crate) enum Saved {
    None,
    Norm(ops::NormSaved),
}

fn expect_inputs(op: &'static str, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::shape(op, &[inputs.len()], &[n]));
    }
    Ok(())
}

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, a.dims(), b.dims()));
    }
    Ok(())
}

/// Computes the forward value of `op`.
pub(crate) fn forward(op: &Op, inputs: &[&Tensor], macs: &mut MacCounter) -> Result<(Tensor, Saved)> {
    let plain = |t: Tensor| Ok((t, Saved::None));
    match op {
        Op::MatMul(kind) => {
            expect_inputs("matmul", inputs, 2)?;
            plain(ops::matmul_counted(inputs[0], inputs[1], *kind, macs)?)
        }
        Op::Transpose => {
            expect_inputs("transpose", inputs, 1)?;
            plain(ops::transpose(inputs[0])?)
        }
        Op::Add | Op::Mul => {
            expect_inputs("elementwise", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            same_dims("elementwise", a, b)?;
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| if matches!(op, Op::Add) { x + y } else { x * y })
                .collect();
            plain(Tensor::new(a.dims().to_vec(), data)?)
        }
        Op::AddRow => {
            expect_inputs("add_row", inputs, 2)?;
            let (a, bias) = (inputs[0], inputs[1]);
            let (_, n) = a.matrix_dims()?;
            if bias.len() != n {
                return Err(Error::shape("add_row", a.dims(), bias.dims()));
            }
            let mut data = a.data().to_vec();
            for row in data.chunks_exact_mut(n) {
                for (v, b) in row.iter_mut().zip(bias.data()) {
                    *v += b;
                }
            }
            plain(Tensor::new(a.dims().to_vec(), data)?)
        }
        Op::Scale(s) => {
            expect_inputs("scale", inputs, 1)?;
            let data = inputs[0].data().iter().map(|v| v * s).collect();
            plain(Tensor::new(inputs[0].dims().to_vec(), data)?)
        }
        Op::Sum => {
            expect_inputs("sum", inputs, 1)?;
            plain(Tensor::scalar(inputs[0].data().iter().sum()))
        }
        Op::Softmax { key_mask } => {
            expect_inputs("softmax", inputs, 1)?;
            plain(ops::softmax_keys(inputs[0], key_mask.as_deref())?)
        }
        Op::LayerNorm { eps } => {
            expect_inputs("layer_norm", inputs, 3)?;
            let (y, saved) = ops::layer_norm_saved(inputs[0], inputs[1], inputs[2], *eps)?;
            Ok((y, Saved::Norm(saved)))
        }
        Op::Gelu => {
            expect_inputs("gelu", inputs, 1)?;
            plain(ops::gelu(inputs[0]))
        }
        Op::Embed { ids } => {
            expect_inputs("embed", inputs, 1)?;
            let table = inputs[0];
            let (vocab, n) = table.matrix_dims()?;
            if ids.is_empty() {
                return Err(Error::Length { len: 0, max: vocab });
            }
            let mut data = Vec::with_capacity(ids.len() * n);
            for &id in ids {
                if id as usize >= vocab {
                    return Err(Error::Vocab { id, vocab_size: vocab });
                }
                data.extend_from_slice(table.row(id as usize));
            }
            plain(Tensor::new(vec![ids.len(), n], data)?)
        }
        Op::SplitHeads { heads } => {
            expect_inputs("split_heads", inputs, 1)?;
            let x = inputs[0];
            let (b, n) = x.matrix_dims()?;
            if *heads == 0 || n % heads != 0 {
                return Err(Error::shape("split_heads", x.dims(), &[*heads]));
            }
            let dh = n / heads;
            let mut data = Vec::with_capacity(b * n);
            for h in 0..*heads {
                for r in 0..b {
                    data.extend_from_slice(&x.row(r)[h * dh..(h + 1) * dh]);
                }
            }
            plain(Tensor::new(vec![*heads, b, dh], data)?)
        }
        Op::Head { index } => {
            expect_inputs("head", inputs, 1)?;
            let x = inputs[0];
            let [h, b, dh] = x.dims()[..] else {
                return Err(Error::shape("head", x.dims(), &[0, 0, 0]));
            };
            if *index >= h {
                return Err(Error::shape("head", x.dims(), &[*index]));
            }
            let chunk = b * dh;
            plain(Tensor::new(
                vec![b, dh],
                x.data()[index * chunk..(index + 1) * chunk].to_vec(),
            )?)
        }
        Op::ConcatCols => {
            let first = inputs.first().ok_or_else(|| Error::shape("concat", &[], &[]))?;
            let (rows, _) = first.matrix_dims()?;
            let mut widths = Vec::with_capacity(inputs.len());
            for t in inputs {
                let (r, c) = t.matrix_dims()?;
                if r != rows {
                    return Err(Error::shape("concat", first.dims(), t.dims()));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for t in inputs {
                    data.extend_from_slice(t.row(r));
                }
            }
            plain(Tensor::new(vec![rows, total], data)?)
        }
        Op::Row { index } => {
            expect_inputs("row", inputs, 1)?;
            let (r, c) = inputs[0].matrix_dims()?;
            if *index >= r {
                return Err(Error::shape("row", inputs[0].dims(), &[*index]));
            }
            plain(Tensor::new(vec![1, c], inputs[0].row(*index).to_vec())?)
        }
        Op::Reshape { dims } => {
            expect_inputs("reshape", inputs, 1)?;
            plain(inputs[0].reshaped(dims)?)
        }
        Op::BceWithLogits { label } => {
            expect_inputs("bce", inputs, 1)?;
            let s = inputs[0];
            if s.len() != 1 {
                return Err(Error::shape("bce", s.dims(), &[1]));
            }
            plain(Tensor::scalar(pointwise_loss(s.data()[0], *label)))
        }
    }
}

/// Binary cross-entropy of `sigmoid(score)` against `label`, in the
/// overflow-free form `softplus(s) - label * s`.
pub fn pointwise_loss(score: f64, label: f64) -> f64 {
    ops::softplus(score) - label * score
}

/// Evaluation context the model is written against.
pub trait Graph<'a> {
    type Node: Clone;

    /// A constant borrowed for the lifetime of the context.
    fn constant(&mut self, t: &'a Tensor) -> Self::Node;
    fn constant_owned(&mut self, t: Tensor) -> Self::Node;
    fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Self::Node;
    fn value<'s>(&'s self, node: &'s Self::Node) -> &'s Tensor;
    fn macs(&self) -> &MacCounter;

    #[doc(hidden)]
    fn apply(&mut self, op: Op, inputs: &[&Self::Node]) -> Result<Self::Node>;

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node, kind: MacKind) -> Result<Self::Node> {
        self.apply(Op::MatMul(kind), &[a, b])
    }
    fn transpose(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Transpose, &[a])
    }
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Add, &[a, b])
    }
    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Mul, &[a, b])
    }
    fn add_row(&mut self, a: &Self::Node, bias: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::AddRow, &[a, bias])
    }
    fn scale(&mut self, a: &Self::Node, s: f64) -> Result<Self::Node> {
        self.apply(Op::Scale(s), &[a])
    }
    fn sum(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Sum, &[a])
    }
    fn softmax_rows(&mut self, a: &Self::Node, key_mask: Option<&[bool]>) -> Result<Self::Node> {
        let key_mask = key_mask.map(<[bool]>::to_vec);
        self.apply(Op::Softmax { key_mask }, &[a])
    }
    fn layer_norm(&mut self, x: &Self::Node, gain: &Self::Node, bias: &Self::Node, eps: f64) -> Result<Self::Node> {
        self.apply(Op::LayerNorm { eps }, &[x, gain, bias])
    }
    fn gelu(&mut self, a: &Self::Node) -> Result<Self::Node> {
        self.apply(Op::Gelu, &[a])
    }
    fn embed(&mut self, table: &Self::Node, ids: &[u32]) -> Result<Self::Node> {
        self.apply(Op::Embed { ids: ids.to_vec() }, &[table])
    }
    fn split_heads(&mut self, a: &Self::Node, heads: usize) -> Result<Self::Node> {
        self.apply(Op::SplitHeads { heads }, &[a])
    }
    fn head(&mut self, a: &Self::Node, index: usize) -> Result<Self::Node> {
        self.apply(Op::Head { index }, &[a])
    }
    fn concat_cols(&mut self, parts: &[Self::Node]) -> Result<Self::Node> {
        let refs: Vec<&Self::Node> = parts.iter().collect();
        self.apply(Op::ConcatCols, &refs)
    }
    fn row(&mut self, a: &Self::Node, index: usize) -> Result<Self::Node> {
        self.apply(Op::Row { index }, &[a])
    }
    fn reshape(&mut self, a: &Self::Node, dims: &[usize]) -> Result<Self::Node> {
        self.apply(Op::Reshape { dims: dims.to_vec() }, &[a])
    }
    fn bce_with_logits(&mut self, score: &Self::Node, label: f64) -> Result<Self::Node> {
        self.apply(Op::BceWithLogits { label }, &[score])
    }
}

/// Node of an [`Eager`] context.
#[derive(Clone, Debug)]
pub enum EagerNode<'a> {
    Borrowed(&'a Tensor),
    Owned(Rc<Tensor>),
}

impl EagerNode<'_> {
    pub fn tensor(&self) -> &Tensor {
        match self {
            EagerNode::Borrowed(t) => t,
            EagerNode::Owned(t) => t,
        }
    }

    pub fn into_tensor(self) -> Tensor {
        match self {
            EagerNode::Borrowed(t) => t.clone(),
            EagerNode::Owned(t) => Rc::try_unwrap(t).unwrap_or_else(|rc| (*rc).clone()),
        }
    }
}

/// Gradient-free evaluation. Intermediates are released as soon as their
/// last handle drops.
#[derive(Debug, Default)]
pub struct Eager {
    macs: MacCounter,
}

impl Eager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_macs(self) -> MacCounter {
        self.macs
    }
}

impl<'a> Graph<'a> for Eager {
    type Node = EagerNode<'a>;

    fn constant(&mut self, t: &'a Tensor) -> Self::Node {
        EagerNode::Borrowed(t)
    }

    fn constant_owned(&mut self, t: Tensor) -> Self::Node {
        EagerNode::Owned(Rc::new(t))
    }

    fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Self::Node {
        EagerNode::Borrowed(store.get(id))
    }

    fn value<'s>(&'s self, node: &'s Self::Node) -> &'s Tensor {
        node.tensor()
    }

    fn macs(&self) -> &MacCounter {
        &self.macs
    }

    fn apply(&mut self, op: Op, inputs: &[&Self::Node]) -> Result<Self::Node> {
        let values: Vec<&Tensor> = inputs.iter().map(|n| n.tensor()).collect();
        let (out, _) = forward(&op, &values, &mut self.macs)?;
        Ok(EagerNode::Owned(Rc::new(out)))
    }
}
