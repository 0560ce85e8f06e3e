use std::cell::{Cell, Ref, RefCell};
use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Recorded primitive. Saved data is whatever the backward rule needs beyond
/// the parent and output values.
#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    Affine(T),
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(T),
    Elu(T),
    Exp,
    Ln,
    Square,
    Sum,
    Mean,
    MeanRows,
    Softmax,
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize),
    SliceRows(usize),
    GatherRows(Vec<usize>),
    Cosine,
    CrossEntropy { targets: Vec<usize>, probs: Vec<T> },
    LayerNorm { inv_std: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    param: Option<String>,
}

/// Ordered record of operations. Nodes are appended as operations run, so
/// every node's parents precede it.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    generation: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
    generation: u64,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T> {
    generation: u64,
    leaves: BTreeMap<usize, Tensor<T>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to a leaf recorded with `requires_grad`.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        (var.generation == self.generation)
            .then(|| self.leaves.get(&var.id))
            .flatten()
    }

    /// Gradient accumulated over every use of the named parameter.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn mat<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    t.dims2().expect("tape values are matrices")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            generation: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Outstanding [`Var`]s become stale.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.generation.set(self.generation.get() + 1);
    }

    /// Records a leaf. It participates in differentiation when the tensor has
    /// `requires_grad` set.
    pub fn leaf(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        let rg = value.requires_grad();
        self.push_leaf(value, rg, None)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.push_leaf(value, false, None)
    }

    /// Records a named parameter leaf; its gradient is reported under `name`.
    pub fn param(&self, name: &str, value: &Tensor<T>) -> Result<Var<'_, T>> {
        self.push_leaf(value.detached(), value.requires_grad(), Some(name.to_string()))
    }

    fn push_leaf(&self, value: Tensor<T>, requires_grad: bool, param: Option<String>) -> Result<Var<'_, T>> {
        let (r, c) = value.dims2()?;
        let value = if value.shape().len() == 2 {
            value.detached()
        } else {
            Tensor::new(vec![r, c], value.into_data())?
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad,
            param,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
        })
    }

    fn check(&self, v: &Var<'_, T>) -> Result<()> {
        if v.generation != self.generation.get() || v.id >= self.nodes.borrow().len() {
            return Err(Error::StaleVar);
        }
        Ok(())
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        let (op, parents) = if requires_grad {
            (op, parents.to_vec())
        } else {
            (Op::Leaf, Vec::new())
        };
        nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
            param: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
        }
    }

    /// Reverse pass from a single-element `loss`. Populates gradients for
    /// every leaf that requires them, then clears the tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        self.check(&loss)?;
        let result = self.reverse(loss.id);
        self.clear();
        result
    }

    fn reverse(&self, loss: usize) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss].value.numel() != 1 {
            return Err(Error::NonScalarLoss(nodes[loss].value.dims2().map(|(r, c)| vec![r, c])?));
        }
        let mut out = Gradients {
            generation: self.generation.get(),
            leaves: BTreeMap::new(),
            params: BTreeMap::new(),
        };
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss + 1, || None);
        grads[loss] = Some(vec![T::one()]);

        for id in (0..=loss).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                let shape = node.value.shape().to_vec();
                if let Some(name) = &node.param {
                    match out.params.get_mut(name) {
                        Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => {
                            out.params.insert(name.clone(), Tensor::new(shape.clone(), g.clone())?);
                        }
                    }
                }
                out.leaves.insert(id, Tensor::new(shape, g)?);
                continue;
            }
            let contributions = backward_rule(node, &nodes, &g);
            for (parent, pg) in node.parents.iter().zip(contributions) {
                if let Some(pg) = pg {
                    if nodes[*parent].requires_grad {
                        add_into(&mut grads[*parent], pg);
                    }
                }
            }
        }
        Ok(out)
    }

    // ---- forward primitives -------------------------------------------------

    fn unary(&self, a: &Var<'_, T>, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var<'_, T>> {
        self.check(a)?;
        let value = self.value(a.id).map(f);
        Ok(self.push(value, op, &[a.id]))
    }

    fn same_shape(&self, op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (mat(&self.value(a.id)), mat(&self.value(b.id)));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&self, op_name: &'static str, a: &Var<'_, T>, b: &Var<'_, T>, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var<'_, T>> {
        self.same_shape(op_name, a, b)?;
        let value = {
            let (va, vb) = (self.value(a.id), self.value(b.id));
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        };
        Ok(self.push(value, op, &[a.id, b.id]))
    }

    fn matmul(&self, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<Var<'_, T>> {
        self.check(a)?;
        self.check(b)?;
        let value = {
            let (va, vb) = (self.value(a.id), self.value(b.id));
            let ((m, k), (k2, n)) = (mat(&va), mat(&vb));
            if k != k2 {
                return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
            }
            Tensor::matrix(m, n, matmul_raw(va.data(), vb.data(), m, k, n))?
        };
        Ok(self.push(value, Op::MatMul, &[a.id, b.id]))
    }

    fn transpose(&self, a: &Var<'_, T>) -> Result<Var<'_, T>> {
        self.check(a)?;
        let value = {
            let va = self.value(a.id);
            let (m, n) = mat(&va);
            Tensor::matrix(n, m, transpose_raw(va.data(), m, n))?
        };
        Ok(self.push(value, Op::Transpose, &[a.id]))
    }

    fn row_broadcast(&self, op_name: &'static str, a: &Var<'_, T>, b: &Var<'_, T>, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var<'_, T>> {
        self.check(a)?;
        self.check(b)?;
        let value = {
            let (va, vb) = (self.value(a.id), self.value(b.id));
            let ((m, n), (r, c)) = (mat(&va), mat(&vb));
            if r != 1 || c != n {
                return Err(Error::shape(op_name, format!("[{m}, {n}] with row [{r}, {c}]")));
            }
            let data = va
                .data()
                .chunks(n)
                .flat_map(|row| row.iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
                .collect();
            Tensor::matrix(m, n, data)?
        };
        Ok(self.push(value, op, &[a.id, b.id]))
    }

    fn reduce(&self, a: &Var<'_, T>, op: Op<T>) -> Result<Var<'_, T>> {
        self.check(a)?;
        let value = {
            let va = self.value(a.id);
            let s: T = va.data().iter().copied().sum();
            match op {
                Op::Mean => Tensor::scalar(s / T::lit(va.numel() as f64)),
                _ => Tensor::scalar(s),
            }
        };
        Ok(self.push(value, op, &[a.id]))
    }

    fn mean_rows(&self, a: &Var<'_, T>) -> Result<Var<'_, T>> {
        self.check(a)?;
        let value = {
            let va = self.value(a.id);
            let (m, n) = mat(&va);
            let mut acc = vec![T::zero(); n];
            for row in va.data().chunks(n) {
                acc.iter_mut().zip(row).for_each(|(a, &x)| *a += x);
            }
            let inv = T::one() / T::lit(m as f64);
            Tensor::matrix(1, n, acc.into_iter().map(|x| x * inv).collect())?
        };
        Ok(self.push(value, Op::MeanRows, &[a.id]))
    }

    fn softmax(&self, a: &Var<'_, T>, mask: Option<&[bool]>) -> Result<Var<'_, T>> {
        self.check(a)?;
        let value = {
            let va = self.value(a.id);
            let (m, n) = mat(&va);
            if let Some(mask) = mask {
                if mask.len() != m * n {
                    return Err(Error::shape("masked_softmax", format!("mask of {} for [{m}, {n}]", mask.len())));
                }
            }
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                let keep = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
                let row = &va.data()[i * n..(i + 1) * n];
                let max = (0..n).filter(|&j| keep(j)).map(|j| row[j]).fold(None, |acc: Option<T>, x| {
                    Some(acc.map_or(x, |a| a.max(x)))
                });
                let Some(max) = max else {
                    return Err(Error::shape("masked_softmax", format!("row {i} fully masked")));
                };
                let mut z = T::zero();
                for j in (0..n).filter(|&j| keep(j)) {
                    let e = (row[j] - max).exp();
                    out[i * n + j] = e;
                    z += e;
                }
                out[i * n..(i + 1) * n].iter_mut().for_each(|x| *x /= z);
            }
            Tensor::matrix(m, n, out)?
        };
        Ok(self.push(value, Op::Softmax, &[a.id]))
    }

    fn concat(&self, parts: &[Var<'_, T>], cols: bool) -> Result<Var<'_, T>> {
        let op_name = if cols { "concat_cols" } else { "concat_rows" };
        if parts.is_empty() {
            return Err(Error::shape(op_name, "no inputs"));
        }
        for p in parts {
            self.check(p)?;
        }
        let (value, sizes) = {
            let values: Vec<_> = parts.iter().map(|p| self.value(p.id)).collect();
            let dims: Vec<_> = values.iter().map(|v| mat(v)).collect();
            let (r0, c0) = dims[0];
            if cols {
                if let Some((r, _)) = dims.iter().find(|(r, _)| *r != r0) {
                    return Err(Error::shape(op_name, format!("row counts {r0} and {r}")));
                }
                let widths: Vec<usize> = dims.iter().map(|d| d.1).collect();
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(r0 * total);
                for i in 0..r0 {
                    for (v, &w) in values.iter().zip(&widths) {
                        data.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
                    }
                }
                (Tensor::matrix(r0, total, data)?, widths)
            } else {
                if let Some((_, c)) = dims.iter().find(|(_, c)| *c != c0) {
                    return Err(Error::shape(op_name, format!("column counts {c0} and {c}")));
                }
                let heights: Vec<usize> = dims.iter().map(|d| d.0).collect();
                let total: usize = heights.iter().sum();
                let mut data = Vec::with_capacity(total * c0);
                for v in &values {
                    data.extend_from_slice(v.data());
                }
                (Tensor::matrix(total, c0, data)?, heights)
            }
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let op = if cols { Op::ConcatCols(sizes) } else { Op::ConcatRows(sizes) };
        Ok(self.push(value, op, &ids))
    }

    fn slice(&self, a: &Var<'_, T>, start: usize, end: usize, cols: bool) -> Result<Var<'_, T>> {
        self.check(a)?;
        let op_name = if cols { "slice_cols" } else { "slice_rows" };
        let value = {
            let va = self.value(a.id);
            let (m, n) = mat(&va);
            let limit = if cols { n } else { m };
            if start >= end || end > limit {
                return Err(Error::shape(op_name, format!("range {start}..{end} of {limit}")));
            }
            if cols {
                let w = end - start;
                let data = va.data().chunks(n).flat_map(|row| row[start..end].to_vec()).collect();
                Tensor::matrix(m, w, data)?
            } else {
                Tensor::matrix(end - start, n, va.data()[start * n..end * n].to_vec())?
            }
        };
        let op = if cols { Op::SliceCols(start) } else { Op::SliceRows(start) };
        Ok(self.push(value, op, &[a.id]))
    }

    fn gather_rows(&self, a: &Var<'_, T>, idx: &[usize]) -> Result<Var<'_, T>> {
        self.check(a)?;
        let value = {
            let va = self.value(a.id);
            let (m, n) = mat(&va);
            if idx.is_empty() {
                return Err(Error::shape("gather_rows", "empty index list"));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
                return Err(Error::shape("gather_rows", format!("row {bad} of {m}")));
            }
            let mut data = Vec::with_capacity(idx.len() * n);
            for &i in idx {
                data.extend_from_slice(&va.data()[i * n..(i + 1) * n]);
            }
            Tensor::matrix(idx.len(), n, data)?
        };
        Ok(self.push(value, Op::GatherRows(idx.to_vec()), &[a.id]))
    }

    fn cosine(&self, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<Var<'_, T>> {
        self.same_shape("cosine_similarity", a, b)?;
        let value = {
            let (va, vb) = (self.value(a.id), self.value(b.id));
            Tensor::scalar(cosine_raw(va.data(), vb.data()))
        };
        Ok(self.push(value, Op::Cosine, &[a.id, b.id]))
    }

    fn cross_entropy(&self, logits: &Var<'_, T>, targets: &[usize]) -> Result<Var<'_, T>> {
        self.check(logits)?;
        let (value, probs) = {
            let v = self.value(logits.id);
            let (m, n) = mat(&v);
            if targets.len() != m {
                return Err(Error::shape("cross_entropy", format!("{} targets for {m} rows", targets.len())));
            }
            if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
                return Err(Error::shape("cross_entropy", format!("target {bad} of {n} classes")));
            }
            let mut probs = vec![T::zero(); m * n];
            let mut loss = T::zero();
            for i in 0..m {
                let row = &v.data()[i * n..(i + 1) * n];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let z: T = row.iter().map(|&x| (x - max).exp()).sum();
                let log_z = z.ln() + max;
                for j in 0..n {
                    probs[i * n + j] = (row[j] - log_z).exp();
                }
                loss += log_z - row[targets[i]];
            }
            (Tensor::scalar(loss / T::lit(m as f64)), probs)
        };
        Ok(self.push(
            value,
            Op::CrossEntropy {
                targets: targets.to_vec(),
                probs,
            },
            &[logits.id],
        ))
    }

    fn layer_norm(&self, a: &Var<'_, T>, eps: T) -> Result<Var<'_, T>> {
        self.check(a)?;
        let (value, inv_std) = {
            let va = self.value(a.id);
            let (m, n) = mat(&va);
            let nf = T::lit(n as f64);
            let mut out = Vec::with_capacity(m * n);
            let mut inv_std = Vec::with_capacity(m);
            for row in va.data().chunks(n) {
                let mu = row.iter().copied().sum::<T>() / nf;
                let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>() / nf;
                let inv = T::one() / (var + eps).sqrt();
                out.extend(row.iter().map(|&x| (x - mu) * inv));
                inv_std.push(inv);
            }
            (Tensor::matrix(m, n, out)?, inv_std)
        };
        Ok(self.push(value, Op::LayerNorm { inv_std }, &[a.id]))
    }
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            out_row.iter_mut().zip(b_row).for_each(|(o, &y)| *o += x * y);
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn cosine_raw<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        T::zero()
    } else {
        dot / (na * nb)
    }
}

/// Gradient contributions for each parent of `node`, given its output gradient.
fn backward_rule<T: Scalar>(node: &Node<T>, nodes: &[Node<T>], g: &[T]) -> Vec<Option<Vec<T>>> {
    let pv = |i: usize| &nodes[node.parents[i]].value;
    let y = node.value.data();
    let elementwise = |f: &dyn Fn(usize) -> T| -> Vec<Option<Vec<T>>> {
        vec![Some((0..g.len()).map(|i| g[i] * f(i)).collect())]
    };
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::MatMul => {
            let (a, b) = (pv(0), pv(1));
            let ((m, k), (_, n)) = (mat(a), mat(b));
            let bt = transpose_raw(b.data(), k, n);
            let at = transpose_raw(a.data(), m, k);
            vec![Some(matmul_raw(g, &bt, m, n, k)), Some(matmul_raw(&at, g, k, m, n))]
        }
        Op::Transpose => {
            let (m, n) = mat(pv(0));
            vec![Some(transpose_raw(g, n, m))]
        }
        Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&x| -x).collect())],
        Op::Mul => {
            let (a, b) = (pv(0).data(), pv(1).data());
            vec![
                Some(g.iter().zip(b).map(|(&x, &y)| x * y).collect()),
                Some(g.iter().zip(a).map(|(&x, &y)| x * y).collect()),
            ]
        }
        Op::AddRow => {
            let (_, n) = mat(pv(0));
            let mut db = vec![T::zero(); n];
            for row in g.chunks(n) {
                db.iter_mut().zip(row).for_each(|(d, &x)| *d += x);
            }
            vec![Some(g.to_vec()), Some(db)]
        }
        Op::MulRow => {
            let (a, r) = (pv(0), pv(1));
            let (_, n) = mat(a);
            let mut dr = vec![T::zero(); n];
            let mut da = Vec::with_capacity(g.len());
            for (grow, arow) in g.chunks(n).zip(a.data().chunks(n)) {
                for j in 0..n {
                    da.push(grow[j] * r.data()[j]);
                    dr[j] += grow[j] * arow[j];
                }
            }
            vec![Some(da), Some(dr)]
        }
        Op::Affine(scale) => vec![Some(g.iter().map(|&x| x * *scale).collect())],
        Op::Sigmoid => elementwise(&|i| y[i] * (T::one() - y[i])),
        Op::Tanh => elementwise(&|i| T::one() - y[i] * y[i]),
        Op::Relu => {
            let x = pv(0).data();
            elementwise(&|i| if x[i] > T::zero() { T::one() } else { T::zero() })
        }
        Op::LeakyRelu(slope) => {
            let x = pv(0).data();
            elementwise(&|i| if x[i] > T::zero() { T::one() } else { *slope })
        }
        Op::Elu(alpha) => {
            let x = pv(0).data();
            elementwise(&|i| if x[i] > T::zero() { T::one() } else { y[i] + *alpha })
        }
        Op::Exp => elementwise(&|i| y[i]),
        Op::Ln => {
            let x = pv(0).data();
            elementwise(&|i| T::one() / x[i])
        }
        Op::Square => {
            let x = pv(0).data();
            elementwise(&|i| T::lit(2.0) * x[i])
        }
        Op::Sum => vec![Some(vec![g[0]; pv(0).numel()])],
        Op::Mean => {
            let n = pv(0).numel();
            vec![Some(vec![g[0] / T::lit(n as f64); n])]
        }
        Op::MeanRows => {
            let (m, _) = mat(pv(0));
            let inv = T::one() / T::lit(m as f64);
            let row: Vec<T> = g.iter().map(|&x| x * inv).collect();
            vec![Some(row.repeat(m))]
        }
        Op::Softmax => {
            let (_, n) = mat(&node.value);
            let mut da = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(n).zip(y.chunks(n)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                da.extend(grow.iter().zip(yrow).map(|(&gi, &yi)| yi * (gi - dot)));
            }
            vec![Some(da)]
        }
        Op::ConcatCols(widths) => {
            let (m, total) = mat(&node.value);
            let mut offset = 0;
            widths
                .iter()
                .map(|&w| {
                    let mut part = Vec::with_capacity(m * w);
                    for i in 0..m {
                        part.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    Some(part)
                })
                .collect()
        }
        Op::ConcatRows(heights) => {
            let (_, n) = mat(&node.value);
            let mut offset = 0;
            heights
                .iter()
                .map(|&h| {
                    let part = g[offset * n..(offset + h) * n].to_vec();
                    offset += h;
                    Some(part)
                })
                .collect()
        }
        Op::SliceCols(start) => {
            let (m, n) = mat(pv(0));
            let (_, w) = mat(&node.value);
            let mut da = vec![T::zero(); m * n];
            for i in 0..m {
                da[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
            }
            vec![Some(da)]
        }
        Op::SliceRows(start) => {
            let (m, n) = mat(pv(0));
            let mut da = vec![T::zero(); m * n];
            da[start * n..start * n + g.len()].copy_from_slice(g);
            vec![Some(da)]
        }
        Op::GatherRows(idx) => {
            let (m, n) = mat(pv(0));
            let mut da = vec![T::zero(); m * n];
            for (k, &i) in idx.iter().enumerate() {
                da[i * n..(i + 1) * n]
                    .iter_mut()
                    .zip(&g[k * n..(k + 1) * n])
                    .for_each(|(d, &x)| *d += x);
            }
            vec![Some(da)]
        }
        Op::Cosine => {
            let (a, b) = (pv(0).data(), pv(1).data());
            let na2: T = a.iter().map(|&x| x * x).sum();
            let nb2: T = b.iter().map(|&x| x * x).sum();
            if na2 == T::zero() || nb2 == T::zero() {
                return vec![Some(vec![T::zero(); a.len()]), Some(vec![T::zero(); b.len()])];
            }
            let c = y[0];
            let inv = T::one() / (na2.sqrt() * nb2.sqrt());
            let da = a.iter().zip(b).map(|(&ai, &bi)| g[0] * (bi * inv - c * ai / na2)).collect();
            let db = a.iter().zip(b).map(|(&ai, &bi)| g[0] * (ai * inv - c * bi / nb2)).collect();
            vec![Some(da), Some(db)]
        }
        Op::CrossEntropy { targets, probs } => {
            let (m, n) = mat(pv(0));
            let scale = g[0] / T::lit(m as f64);
            let mut da: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                da[i * n + t] -= scale;
            }
            vec![Some(da)]
        }
        Op::LayerNorm { inv_std } => {
            let (_, n) = mat(pv(0));
            let nf = T::lit(n as f64);
            let mut da = Vec::with_capacity(g.len());
            for ((grow, yrow), &inv) in g.chunks(n).zip(y.chunks(n)).zip(inv_std) {
                let mean_g = grow.iter().copied().sum::<T>() / nf;
                let mean_gy = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<T>() / nf;
                da.extend(grow.iter().zip(yrow).map(|(&gi, &yi)| inv * (gi - mean_g - yi * mean_gy)));
            }
            vec![Some(da)]
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id).detached()
    }

    pub fn dims(&self) -> (usize, usize) {
        mat(&self.tape.value(self.id))
    }

    pub fn item(&self) -> Option<T> {
        self.tape.value(self.id).item()
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.matmul(self, other)
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        self.tape.transpose(self)
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.zip("add", self, other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.zip("sub", self, other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.zip("mul", self, other, Op::Mul, |a, b| a * b)
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&self, row: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.row_broadcast("add_row", self, row, Op::AddRow, |a, b| a + b)
    }

    /// Multiplies every row of an `m x n` matrix elementwise by a `1 x n` row.
    pub fn mul_row(&self, row: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.row_broadcast("mul_row", self, row, Op::MulRow, |a, b| a * b)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: T, shift: T) -> Result<Var<'t, T>> {
        self.tape.unary(self, Op::Affine(scale), move |x| scale * x + shift)
    }

    pub fn scale(&self, s: T) -> Result<Var<'t, T>> {
        self.affine(s, T::zero())
    }

    pub fn sigmoid(&self) -> Result<Var<'t, T>> {
        self.tape.unary(self, Op::Sigmoid, |x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn tanh(&self) -> Result<Var<'t, T>> {
        self.tape.unary(self, Op::Tanh, T::tanh)
    }

    pub fn relu(&self) -> Result<Var<'t, T>> {
        self.tape.unary(self, Op::Relu, |x| x.max(T::zero()))
    }

    pub fn leaky_relu(&self, slope: T) -> Result<Var<'t, T>> {
        self.tape
            .unary(self, Op::LeakyRelu(slope), move |x| if x > T::zero() { x } else { slope * x })
    }

    pub fn elu(&self, alpha: T) -> Result<Var<'t, T>> {
        self.tape
            .unary(self, Op::Elu(alpha), move |x| if x > T::zero() { x } else { alpha * (x.exp() - T::one()) })
    }

    pub fn exp(&self) -> Result<Var<'t, T>> {
        self.tape.unary(self, Op::Exp, T::exp)
    }

    pub fn ln(&self) -> Result<Var<'t, T>> {
        self.tape.unary(self, Op::Ln, T::ln)
    }

    pub fn square(&self) -> Result<Var<'t, T>> {
        self.tape.unary(self, Op::Square, |x| x * x)
    }

    pub fn sum(&self) -> Result<Var<'t, T>> {
        self.tape.reduce(self, Op::Sum)
    }

    pub fn mean(&self) -> Result<Var<'t, T>> {
        self.tape.reduce(self, Op::Mean)
    }

    /// Column means: `m x n` to `1 x n`.
    pub fn mean_rows(&self) -> Result<Var<'t, T>> {
        self.tape.mean_rows(self)
    }

    /// Softmax along each row.
    pub fn softmax(&self) -> Result<Var<'t, T>> {
        self.tape.softmax(self, None)
    }

    /// Row softmax restricted to entries where `mask` is true; the rest are 0.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Var<'t, T>> {
        self.tape.softmax(self, Some(mask))
    }

    /// Row softmax of a square score matrix where row `i` sees columns `0..=i`.
    pub fn causal_softmax(&self) -> Result<Var<'t, T>> {
        let (m, n) = self.dims();
        if m != n {
            return Err(Error::shape("causal_softmax", format!("non-square [{m}, {n}]")));
        }
        let mask: Vec<bool> = (0..m * n).map(|k| k % n <= k / n).collect();
        self.masked_softmax(&mask)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t, T>> {
        self.tape.slice(self, start, end, true)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t, T>> {
        self.tape.slice(self, start, end, false)
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t, T>> {
        self.tape.gather_rows(self, idx)
    }

    /// Cosine similarity of two equally shaped tensors, as a `1 x 1` value.
    /// Zero vectors give 0.
    pub fn cosine_similarity(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.cosine(self, other)
    }

    /// Mean negative log-likelihood of `targets` under row-softmaxed logits.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Var<'t, T>> {
        self.tape.cross_entropy(self, targets)
    }

    /// Per-row standardisation without affine terms.
    pub fn layer_norm(&self, eps: T) -> Result<Var<'t, T>> {
        self.tape.layer_norm(self, eps)
    }
}

/// Concatenates along columns; all parts share a row count.
pub fn concat_cols<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
    first.tape.concat(parts, true)
}

/// Stacks along rows; all parts share a column count.
pub fn concat_rows<'t, T: Scalar>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
    first.tape.concat(parts, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(t(1, 2, &[0.0, 0.0])).unwrap();
        assert_eq!(x.softmax().unwrap().value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_matmul_returns_input() {
        let tape = Tape::new();
        let eye = tape.constant(Tensor::identity(3)).unwrap();
        let x = tape.constant(t(3, 1, &[1.5, -2.0, 0.25])).unwrap();
        assert_eq!(eye.matmul(&x).unwrap().value().data(), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0)).unwrap();
        assert_eq!(x.leaky_relu(0.2).unwrap().item(), Some(-0.2));
    }

    #[test]
    fn matmul_shape_error_names_op_and_dims() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
        assert!(err.contains("[2, 3] x [2, 3]"), "{err}");
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]).with_requires_grad()).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn independent_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]).with_requires_grad()).unwrap();
        let y = tape.leaf(t(1, 2, &[3.0, 4.0]).with_requires_grad()).unwrap();
        let loss = x.add(&x.scale(0.0).unwrap()).unwrap().sum().unwrap();
        let _ = y;
        let grads = tape.backward(loss).unwrap();
        // y never reached the loss, so its gradient is absent, i.e. zero
        assert!(grads.wrt(y).is_none_or(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(t(1, 2, &[1.0, 2.0]).with_requires_grad()).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn stale_var_after_backward() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0).with_requires_grad()).unwrap();
        let loss = x.square().unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(x.exp(), Err(Error::StaleVar)));
    }

    #[test]
    fn constants_are_not_recorded_with_parents() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(2.0)).unwrap();
        let y = x.square().unwrap();
        assert!(tape.nodes.borrow()[y.id].parents.is_empty());
    }

    #[test]
    fn fully_masked_row_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        assert!(x.masked_softmax(&[false, false]).is_err());
    }

    #[test]
    fn causal_softmax_is_lower_triangular() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[3, 3])).unwrap();
        let y = x.causal_softmax().unwrap().value();
        assert_eq!(y.row_slice(0), &[1.0, 0.0, 0.0]);
        assert_eq!(y.row_slice(1), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn works_in_single_precision() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::row(vec![1.0f32, 2.0]).with_requires_grad()).unwrap();
        let loss = x.square().unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0f32, 4.0]);
    }
}
