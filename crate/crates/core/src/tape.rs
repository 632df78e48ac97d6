//! Reverse-mode differentiation over a recorded operation list.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::graph::{forward, Graph, Op, Saved};
use crate::ops;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{MacCounter, Tensor};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(0);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    index: usize,
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Option<Op>,
    inputs: Vec<usize>,
    saved: Saved,
    requires_grad: bool,
}

/// Records operations in creation order, which is a topological order.
pub struct Tape<'a> {
    id: u32,
    nodes: Vec<Node<'a>>,
    params: BTreeMap<ParamId, usize>,
    trainable: Option<Vec<bool>>,
    macs: MacCounter,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: BTreeMap::new(),
            trainable: None,
            macs: MacCounter::new(),
        }
    }

    /// A tape on which parameters with `trainable[id] == false` enter as
    /// constants and receive no gradient.
    pub fn with_trainable(trainable: Vec<bool>) -> Self {
        Tape {
            trainable: Some(trainable),
            ..Self::new()
        }
    }

    /// A differentiable leaf that is not a parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), None, Vec::new(), Saved::None, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        value: Cow<'a, Tensor>,
        op: Option<Op>,
        inputs: Vec<usize>,
        saved: Saved,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            saved,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape(format!("{v:?} was not recorded on this tape")));
        }
        Ok(v.index)
    }

    /// Gradients of the scalar `loss` with respect to every differentiable
    /// leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.check(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got dims {:?}",
                self.nodes[root].value.dims()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(op) = &node.op {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &*self.nodes[j].value).collect();
                let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
                let local = input_grads(op, &inputs, &node.value, &node.saved, &g, &needs)?;
                for ((&j, gj), need) in node.inputs.iter().zip(local).zip(needs) {
                    if !need {
                        continue;
                    }
                    let gj = gj.expect("gradient computed for required input");
                    match &mut grads[j] {
                        Some(acc) => acc.iter_mut().zip(&gj).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(gj),
                    }
                }
            }
            grads[i] = Some(g);
        }
        let mut leaves = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.op.is_none() && node.requires_grad {
                let g = match grads.get_mut(i).and_then(Option::take) {
                    Some(g) => Tensor::new(node.value.dims().to_vec(), g)?,
                    None => Tensor::zeros(node.value.dims()),
                };
                leaves.insert(i, g);
            }
        }
        Ok(Gradients {
            tape: self.id,
            leaves,
            params: self.params.clone(),
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    leaves: BTreeMap<usize, Tensor>,
    params: BTreeMap<ParamId, usize>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::leaf`] or a trainable parameter.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.leaves.get(&v.index)
    }

    /// Gradient of a parameter, or `None` when it never entered the tape
    /// as a differentiable leaf.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|i| self.leaves.get(i))
    }

    /// Parameters that received a gradient, in id order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(id, i)| self.leaves.get(i).map(|g| (*id, g)))
    }
}

impl<'a> Graph<'a> for Tape<'a> {
    type Node = Var;

    fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), None, Vec::new(), Saved::None, false)
    }

    fn constant_owned(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), None, Vec::new(), Saved::None, false)
    }

    fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        if let Some(&i) = self.params.get(&id) {
            return Var {
                tape: self.id,
                index: i,
            };
        }
        let trainable = self.trainable.as_ref().is_none_or(|t| t[id.index()]);
        let v = self.push(Cow::Borrowed(store.get(id)), None, Vec::new(), Saved::None, trainable);
        if trainable {
            self.params.insert(id, v.index);
        }
        v
    }

    fn value<'s>(&'s self, node: &'s Var) -> &'s Tensor {
        let i = self.check(*node).expect("var from this tape");
        &self.nodes[i].value
    }

    fn macs(&self) -> &MacCounter {
        &self.macs
    }

    fn apply(&mut self, op: Op, inputs: &[&Var]) -> Result<Var> {
        let idx = inputs.iter().map(|v| self.check(**v)).collect::<Result<Vec<_>>>()?;
        let values: Vec<&Tensor> = idx.iter().map(|&i| &*self.nodes[i].value).collect();
        let (out, saved) = forward(&op, &values, &mut self.macs)?;
        let requires_grad = idx.iter().any(|&i| self.nodes[i].requires_grad);
        // Nodes off the gradient path keep only their value.
        let (op, saved) = if requires_grad {
            (Some(op), saved)
        } else {
            (None, Saved::None)
        };
        let inputs = if requires_grad { idx } else { Vec::new() };
        Ok(self.push(Cow::Owned(out), op, inputs, saved, requires_grad))
    }
}

/// Vector-Jacobian products of `op` for each input flagged in `needs`.
fn input_grads(
    op: &Op,
    inputs: &[&Tensor],
    out: &Tensor,
    saved: &Saved,
    g: &[f64],
    needs: &[bool],
) -> Result<Vec<Option<Vec<f64>>>> {
    let mut res: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
    match op {
        Op::MatMul(_) => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = a.matrix_dims()?;
            let (_, p) = b.matrix_dims()?;
            if needs[0] {
                let bt = ops::transpose_raw(b.data(), k, p);
                res[0] = Some(ops::matmul_raw(g, &bt, m, p, k));
            }
            if needs[1] {
                let at = ops::transpose_raw(a.data(), m, k);
                res[1] = Some(ops::matmul_raw(&at, g, k, m, p));
            }
        }
        Op::Transpose => {
            let (r, c) = inputs[0].matrix_dims()?;
            res[0] = Some(ops::transpose_raw(g, c, r));
        }
        Op::Add => {
            res[0] = Some(g.to_vec());
            res[1] = Some(g.to_vec());
        }
        Op::Mul => {
            res[0] = Some(g.iter().zip(inputs[1].data()).map(|(g, b)| g * b).collect());
            res[1] = Some(g.iter().zip(inputs[0].data()).map(|(g, a)| g * a).collect());
        }
        Op::AddRow => {
            let n = inputs[1].len();
            res[0] = Some(g.to_vec());
            let mut gb = vec![0.0; n];
            for row in g.chunks_exact(n) {
                gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            res[1] = Some(gb);
        }
        Op::Scale(s) => res[0] = Some(g.iter().map(|v| v * s).collect()),
        Op::Sum => res[0] = Some(vec![g[0]; inputs[0].len()]),
        Op::Softmax { .. } => {
            // dx = y * (dy - <dy, y>) per row; excluded positions have y = 0.
            let k = out.cols();
            let mut gx = vec![0.0; g.len()];
            for ((y, dy), dx) in out
                .data()
                .chunks_exact(k)
                .zip(g.chunks_exact(k))
                .zip(gx.chunks_exact_mut(k))
            {
                let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                for j in 0..k {
                    dx[j] = y[j] * (dy[j] - dot);
                }
            }
            res[0] = Some(gx);
        }
        Op::LayerNorm { .. } => {
            let Saved::Norm(saved) = saved else {
                return Err(Error::Tape("layer norm without saved statistics".into()));
            };
            let gain = inputs[1].data();
            let n = gain.len();
            let mut gx = vec![0.0; g.len()];
            let mut gg = vec![0.0; n];
            let mut gbias = vec![0.0; n];
            for (i, (dy, xhat)) in g.chunks_exact(n).zip(saved.xhat.chunks_exact(n)).enumerate() {
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for j in 0..n {
                    gg[j] += dy[j] * xhat[j];
                    gbias[j] += dy[j];
                    let d = dy[j] * gain[j];
                    sum_d += d;
                    sum_dx += d * xhat[j];
                }
                let inv = saved.inv_std[i];
                let nf = n as f64;
                for j in 0..n {
                    let d = dy[j] * gain[j];
                    gx[i * n + j] = inv / nf * (nf * d - sum_d - xhat[j] * sum_dx);
                }
            }
            res[0] = Some(gx);
            res[1] = Some(gg);
            res[2] = Some(gbias);
        }
        Op::Gelu => {
            res[0] = Some(
                g.iter()
                    .zip(inputs[0].data())
                    .map(|(g, &x)| g * ops::gelu_derivative(x))
                    .collect(),
            );
        }
        Op::Embed { ids } => {
            let table = inputs[0];
            let n = table.cols();
            let mut gt = vec![0.0; table.len()];
            for (r, &id) in ids.iter().enumerate() {
                let dst = &mut gt[id as usize * n..(id as usize + 1) * n];
                dst.iter_mut().zip(&g[r * n..(r + 1) * n]).for_each(|(a, b)| *a += b);
            }
            res[0] = Some(gt);
        }
        Op::SplitHeads { heads } => {
            let (b, n) = inputs[0].matrix_dims()?;
            let dh = n / heads;
            let mut gx = vec![0.0; b * n];
            for h in 0..*heads {
                for r in 0..b {
                    let src = &g[(h * b + r) * dh..(h * b + r + 1) * dh];
                    gx[r * n + h * dh..r * n + (h + 1) * dh].copy_from_slice(src);
                }
            }
            res[0] = Some(gx);
        }
        Op::Head { index } => {
            let mut gx = vec![0.0; inputs[0].len()];
            gx[index * g.len()..(index + 1) * g.len()].copy_from_slice(g);
            res[0] = Some(gx);
        }
        Op::ConcatCols => {
            let total = out.cols();
            let mut offset = 0;
            for (slot, t) in res.iter_mut().zip(inputs) {
                let (rows, c) = t.matrix_dims()?;
                let mut gt = Vec::with_capacity(rows * c);
                for r in 0..rows {
                    gt.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                }
                *slot = Some(gt);
                offset += c;
            }
        }
        Op::Row { index } => {
            let c = inputs[0].cols();
            let mut gx = vec![0.0; inputs[0].len()];
            gx[index * c..(index + 1) * c].copy_from_slice(g);
            res[0] = Some(gx);
        }
        Op::Reshape { .. } => res[0] = Some(g.to_vec()),
        Op::BceWithLogits { label } => {
            let s = inputs[0].data()[0];
            res[0] = Some(vec![g[0] * (ops::sigmoid(s) - label)]);
        }
    }
    Ok(res)
}
