//! Reverse-mode differentiation over a linear tape of vector operations.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order for gradient propagation. Parameters are read
//! straight from the bound [`ParamStore`] and are never copied onto the tape.

use std::collections::{BTreeMap, HashMap};

use super::params::{Gradients, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<F> {
    Input,
    Param(usize),
    Embed {
        table: usize,
        row: usize,
    },
    MatVec {
        w: usize,
        x: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    OneMinus(usize),
    Sigmoid(usize),
    Tanh(usize),
    Concat(Vec<usize>),
    Sum(Vec<usize>),
    Dot(usize, usize),
    Stack(Vec<usize>),
    Softmax(usize),
    WeightedSum {
        weights: usize,
        items: Vec<usize>,
    },
    SoftmaxCe {
        logits: usize,
        target: usize,
        probs: Vec<F>,
    },
    SigmoidBce {
        logit: usize,
        label: F,
    },
}

struct Node<F> {
    op: Op<F>,
    value: Vec<F>,
    shape: Vec<usize>,
}

/// Records a forward computation against a borrowed parameter store.
pub struct Tape<'p, F: Real = f32> {
    params: &'p ParamStore<F>,
    param_refs: Vec<&'p Tensor<F>>,
    param_nodes: HashMap<&'p str, NodeId>,
    nodes: Vec<Node<F>>,
    consumed: bool,
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Numerically stable softmax restricted to `mask` (masked entries are 0).
pub(crate) fn masked_softmax<F: Real>(logits: &[F], mask: Option<&[bool]>) -> Vec<F> {
    let on = |i: usize| mask.is_none_or(|m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| on(i))
        .map(|(_, &v)| v)
        .fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = logits
        .iter()
        .enumerate()
        .map(|(i, &v)| if on(i) { (v - max).exp() } else { F::zero() })
        .collect();
    let z: F = out.iter().copied().sum();
    for v in &mut out {
        *v = *v / z;
    }
    out
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Tape {
            params,
            param_refs: Vec::new(),
            param_nodes: HashMap::new(),
            nodes: Vec::with_capacity(256),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    fn push(&mut self, op: Op<F>, value: Vec<F>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, value, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &[F] {
        match self.nodes[i].op {
            Op::Param(p) => self.param_refs[p].data(),
            _ => &self.nodes[i].value,
        }
    }

    pub fn value(&self, id: NodeId) -> &[F] {
        self.val(id.0)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: NodeId) -> F {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "node is not a scalar");
        v[0]
    }

    pub fn tensor(&self, id: NodeId) -> Tensor<F> {
        Tensor::new(self.shape(id).to_vec(), self.value(id).to_vec())
            .expect("node shapes are consistent")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient outside the tape.
    pub fn input(&mut self, t: &Tensor<F>) -> NodeId {
        self.push(Op::Input, t.data().to_vec(), t.shape().to_vec())
    }

    pub fn input_vec(&mut self, v: Vec<F>) -> NodeId {
        let n = v.len();
        self.push(Op::Input, v, vec![n])
    }

    /// Node for a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.param_nodes.get(name) {
            return id;
        }
        let (key, t) = self
            .params
            .entry(name)
            .unwrap_or_else(|| panic!("parameter {name} is not in the store"));
        self.param_refs.push(t);
        let p = self.param_refs.len() - 1;
        let id = self.push(Op::Param(p), Vec::new(), t.shape().to_vec());
        self.param_nodes.insert(key, id);
        id
    }

    /// Row `row` of a rank-2 node.
    pub fn embed(&mut self, table: NodeId, row: usize) -> NodeId {
        let shape = &self.nodes[table.0].shape;
        assert_eq!(shape.len(), 2, "embed needs a matrix");
        let (rows, cols) = (shape[0], shape[1]);
        assert!(row < rows, "row {row} out of range for {rows} rows");
        let v = self.val(table.0)[row * cols..(row + 1) * cols].to_vec();
        self.push(
            Op::Embed {
                table: table.0,
                row,
            },
            v,
            vec![cols],
        )
    }

    pub fn embed_param(&mut self, name: &str, row: usize) -> NodeId {
        let t = self.param(name);
        self.embed(t, row)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let shape = &self.nodes[w.0].shape;
        assert_eq!(shape.len(), 2, "matvec needs a matrix");
        let (m, n) = (shape[0], shape[1]);
        let xv = self.val(x.0);
        assert_eq!(xv.len(), n, "matvec: {m}x{n} times {}", xv.len());
        let wv = self.val(w.0);
        let out = (0..m)
            .map(|i| {
                wv[i * n..(i + 1) * n]
                    .iter()
                    .zip(xv)
                    .fold(F::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect();
        self.push(Op::MatVec { w: w.0, x: x.0 }, out, vec![m])
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op<F>, f: impl Fn(F, F) -> F) -> NodeId {
        let (av, bv) = (self.val(a.0), self.val(b.0));
        assert_eq!(av.len(), bv.len(), "elementwise length mismatch");
        let out = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(op, out, shape)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_with(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    fn map(&mut self, a: NodeId, op: Op<F>, f: impl Fn(F) -> F) -> NodeId {
        let out = self.val(a.0).iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(op, out, shape)
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::OneMinus(a.0), |x| F::one() - x)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a.0), F::tanh)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.val(p.0));
        }
        let n = out.len();
        self.push(
            Op::Concat(parts.iter().map(|p| p.0).collect()),
            out,
            vec![n],
        )
    }

    /// Elementwise sum of equally sized nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "sum of nothing");
        let mut out = self.val(parts[0].0).to_vec();
        for p in &parts[1..] {
            let v = self.val(p.0);
            assert_eq!(v.len(), out.len(), "sum length mismatch");
            for (o, &x) in out.iter_mut().zip(v) {
                *o = *o + x;
            }
        }
        let shape = self.nodes[parts[0].0].shape.clone();
        self.push(Op::Sum(parts.iter().map(|p| p.0).collect()), out, shape)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.val(a.0), self.val(b.0));
        assert_eq!(av.len(), bv.len(), "dot length mismatch");
        let s = av
            .iter()
            .zip(bv)
            .fold(F::zero(), |acc, (&x, &y)| acc + x * y);
        self.push(Op::Dot(a.0, b.0), vec![s], vec![1])
    }

    /// Packs scalar nodes into a vector.
    pub fn stack(&mut self, scalars: &[NodeId]) -> NodeId {
        let out: Vec<F> = scalars
            .iter()
            .map(|s| {
                let v = self.val(s.0);
                assert_eq!(v.len(), 1, "stack takes scalars");
                v[0]
            })
            .collect();
        let n = out.len();
        self.push(
            Op::Stack(scalars.iter().map(|s| s.0).collect()),
            out,
            vec![n],
        )
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let out = masked_softmax(self.val(x.0), None);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Softmax(x.0), out, shape)
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> NodeId {
        let w = self.val(weights.0).to_vec();
        assert_eq!(w.len(), items.len(), "one weight per item");
        assert!(!items.is_empty(), "weighted sum of nothing");
        let dim = self.val(items[0].0).len();
        let mut out = vec![F::zero(); dim];
        for (wi, it) in w.iter().zip(items) {
            let v = self.val(it.0);
            assert_eq!(v.len(), dim, "weighted sum length mismatch");
            for (o, &x) in out.iter_mut().zip(v) {
                *o = *o + *wi * x;
            }
        }
        self.push(
            Op::WeightedSum {
                weights: weights.0,
                items: items.iter().map(|i| i.0).collect(),
            },
            out,
            vec![dim],
        )
    }

    /// Negative log-probability of `target` under the masked softmax of `logits`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        mask: Option<&[bool]>,
        target: usize,
    ) -> NodeId {
        let lv = self.val(logits.0);
        assert!(target < lv.len(), "target {target} out of range");
        if let Some(m) = mask {
            assert_eq!(m.len(), lv.len(), "mask length mismatch");
            assert!(m[target], "target {target} is masked out");
        }
        let on = |i: usize| mask.is_none_or(|m| m[i]);
        let max = lv
            .iter()
            .enumerate()
            .filter(|&(i, _)| on(i))
            .map(|(_, &v)| v)
            .fold(F::neg_infinity(), F::max);
        let z: F = lv
            .iter()
            .enumerate()
            .filter(|&(i, _)| on(i))
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let loss = z.ln() + max - lv[target];
        let probs = masked_softmax(lv, mask);
        self.push(
            Op::SoftmaxCe {
                logits: logits.0,
                target,
                probs,
            },
            vec![loss],
            vec![1],
        )
    }

    /// Binary cross-entropy of `sigmoid(logit)` against `label` in {0, 1}.
    pub fn sigmoid_bce(&mut self, logit: NodeId, label: bool) -> NodeId {
        let z = self.scalar(logit);
        let y = if label { F::one() } else { F::zero() };
        let loss = z.max(F::zero()) - y * z + (F::one() + (-z.abs()).exp()).ln();
        self.push(
            Op::SigmoidBce {
                logit: logit.0,
                label: y,
            },
            vec![loss],
            vec![1],
        )
    }

    /// Propagates d(loss)/d(node) back to every parameter in the bound store.
    /// Parameters the loss does not reach get zero gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<F>> {
        if self.consumed {
            return Err(Error::State(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return invalid("backward needs a scalar loss");
        }
        self.consumed = true;

        let mut grads: Vec<Vec<F>> = (0..=loss.0).map(|_| Vec::new()).collect();
        grads[loss.0] = vec![F::one()];

        fn slot<F: Real>(grads: &mut [Vec<F>], i: usize, len: usize) -> &mut Vec<F> {
            if grads[i].is_empty() {
                grads[i] = vec![F::zero(); len];
            }
            &mut grads[i]
        }

        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Param(_) | Op::Input) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            match &self.nodes[i].op {
                Op::Input | Op::Param(_) => unreachable!(),
                Op::Embed { table, row } => {
                    let len = self.val(*table).len();
                    let cols = self.nodes[*table].shape[1];
                    let dst = slot(&mut grads, *table, len);
                    for (d, &gv) in dst[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *d = *d + gv;
                    }
                }
                Op::MatVec { w, x } => {
                    let (w, x) = (*w, *x);
                    let n = self.nodes[w].shape[1];
                    let wv = self.val(w);
                    let xv = self.val(x);
                    let mut dx = vec![F::zero(); n];
                    for (r, &gi) in g.iter().enumerate() {
                        let wrow = &wv[r * n..(r + 1) * n];
                        for (d, &wj) in dx.iter_mut().zip(wrow) {
                            *d = *d + wj * gi;
                        }
                    }
                    let dw = slot(&mut grads, w, wv.len());
                    for (r, &gi) in g.iter().enumerate() {
                        for (d, &xj) in dw[r * n..(r + 1) * n].iter_mut().zip(xv) {
                            *d = *d + gi * xj;
                        }
                    }
                    let dxs = slot(&mut grads, x, n);
                    for (d, v) in dxs.iter_mut().zip(dx) {
                        *d = *d + v;
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(self.nodes[i].op, Op::Sub(..)) {
                        -F::one()
                    } else {
                        F::one()
                    };
                    let (a, b) = (*a, *b);
                    let n = g.len();
                    for (d, &gv) in slot(&mut grads, a, n).iter_mut().zip(&g) {
                        *d = *d + gv;
                    }
                    for (d, &gv) in slot(&mut grads, b, n).iter_mut().zip(&g) {
                        *d = *d + sign * gv;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let n = g.len();
                    let da: Vec<F> = g.iter().zip(self.val(b)).map(|(&x, &y)| x * y).collect();
                    let db: Vec<F> = g.iter().zip(self.val(a)).map(|(&x, &y)| x * y).collect();
                    for (d, v) in slot(&mut grads, a, n).iter_mut().zip(da) {
                        *d = *d + v;
                    }
                    for (d, v) in slot(&mut grads, b, n).iter_mut().zip(db) {
                        *d = *d + v;
                    }
                }
                Op::OneMinus(a) => {
                    let a = *a;
                    for (d, &gv) in slot(&mut grads, a, g.len()).iter_mut().zip(&g) {
                        *d = *d - gv;
                    }
                }
                Op::Sigmoid(a) | Op::Tanh(a) => {
                    let is_tanh = matches!(self.nodes[i].op, Op::Tanh(_));
                    let a = *a;
                    let y = &self.nodes[i].value;
                    let local: Vec<F> = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| {
                            if is_tanh {
                                gv * (F::one() - yv * yv)
                            } else {
                                gv * yv * (F::one() - yv)
                            }
                        })
                        .collect();
                    for (d, v) in slot(&mut grads, a, g.len()).iter_mut().zip(local) {
                        *d = *d + v;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.val(p).len();
                        for (d, &gv) in slot(&mut grads, p, n).iter_mut().zip(&g[off..off + n]) {
                            *d = *d + gv;
                        }
                        off += n;
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        for (d, &gv) in slot(&mut grads, p, g.len()).iter_mut().zip(&g) {
                            *d = *d + gv;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let gs = g[0];
                    let n = self.val(a).len();
                    let da: Vec<F> = self.val(b).iter().map(|&v| gs * v).collect();
                    let db: Vec<F> = self.val(a).iter().map(|&v| gs * v).collect();
                    for (d, v) in slot(&mut grads, a, n).iter_mut().zip(da) {
                        *d = *d + v;
                    }
                    for (d, v) in slot(&mut grads, b, n).iter_mut().zip(db) {
                        *d = *d + v;
                    }
                }
                Op::Stack(items) => {
                    for (&it, &gv) in items.iter().zip(&g) {
                        let d = slot(&mut grads, it, 1);
                        d[0] = d[0] + gv;
                    }
                }
                Op::Softmax(x) => {
                    let x = *x;
                    let y = &self.nodes[i].value;
                    let s: F = g.iter().zip(y).map(|(&gv, &yv)| gv * yv).sum();
                    let local: Vec<F> = g.iter().zip(y).map(|(&gv, &yv)| yv * (gv - s)).collect();
                    for (d, v) in slot(&mut grads, x, g.len()).iter_mut().zip(local) {
                        *d = *d + v;
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.val(*weights).to_vec();
                    let dw: Vec<F> = items
                        .iter()
                        .map(|&it| {
                            self.val(it)
                                .iter()
                                .zip(&g)
                                .fold(F::zero(), |acc, (&s, &gv)| acc + s * gv)
                        })
                        .collect();
                    let weights = *weights;
                    let items = items.clone();
                    for (d, v) in slot(&mut grads, weights, w.len()).iter_mut().zip(dw) {
                        *d = *d + v;
                    }
                    for (&it, &wi) in items.iter().zip(&w) {
                        for (d, &gv) in slot(&mut grads, it, g.len()).iter_mut().zip(&g) {
                            *d = *d + wi * gv;
                        }
                    }
                }
                Op::SoftmaxCe {
                    logits,
                    target,
                    probs,
                } => {
                    let gs = g[0];
                    let local: Vec<F> = probs
                        .iter()
                        .enumerate()
                        .map(|(k, &p)| {
                            let t = if k == *target { F::one() } else { F::zero() };
                            gs * (p - t)
                        })
                        .collect();
                    let logits = *logits;
                    for (d, v) in slot(&mut grads, logits, local.len()).iter_mut().zip(local) {
                        *d = *d + v;
                    }
                }
                Op::SigmoidBce { logit, label } => {
                    let z = self.val(*logit)[0];
                    let local = g[0] * (sigmoid(z) - *label);
                    let d = slot(&mut grads, *logit, 1);
                    d[0] = d[0] + local;
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, t) in self.params.iter() {
            let g = match self.param_nodes.get(name) {
                Some(id) if id.0 <= loss.0 && !grads[id.0].is_empty() => {
                    Tensor::new(t.shape().to_vec(), std::mem::take(&mut grads[id.0]))?
                }
                _ => Tensor::zeros(t.shape()),
            };
            out.insert(name.to_string(), g);
        }
        Ok(Gradients::from_map(out))
    }
}
