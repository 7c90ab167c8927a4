//! Reverse-mode differentiation over a linear tape of matrix ops.
//!
//! Activations are tape nodes; parameters live in a [`ParamStore`] and are
//! referenced by id, so a forward pass never copies weights.

use super::tensor::{gemm, Tensor};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }
}

/// Ragged multi-head attention: each query row attends over the key rows of
/// its own segment plus a learned null key/value.
#[derive(Debug, Clone)]
struct AttentionOp {
    q: NodeId,
    k: NodeId,
    v: NodeId,
    q_off: Vec<usize>,
    k_off: Vec<usize>,
    null_k: ParamId,
    null_v: ParamId,
    heads: usize,
    /// Softmax weights, per (query row, head): segment keys then the null slot.
    probs: Vec<f64>,
    prob_off: Vec<usize>,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Linear { x: NodeId, w: ParamId, b: Option<ParamId> },
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Concat(Vec<NodeId>),
    RepeatParam { p: ParamId },
    Attention(Box<AttentionOp>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input)
    }

    /// `x * W + b`, W stored as (in x out).
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: Option<ParamId>) -> NodeId {
        let xv = &self.nodes[x].value;
        let wv = &self.params.tensors[w];
        let mut y = Tensor::zeros(xv.rows, wv.cols);
        if let Some(b) = b {
            let bv = &self.params.tensors[b];
            for r in 0..y.rows {
                y.row_mut(r).copy_from_slice(&bv.data);
            }
            gemm(xv, false, wv, false, &mut y, 1.0);
        } else {
            gemm(xv, false, wv, false, &mut y, 0.0);
        }
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut y = self.nodes[x].value.clone();
        y.data.iter_mut().for_each(|v| *v = v.tanh());
        self.push(y, Op::Tanh(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut y = self.nodes[a].value.clone();
        y.add_assign(&self.nodes[b].value);
        self.push(y, Op::Add(a, b))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut y = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c = 0;
            for &p in parts {
                let src = self.nodes[p].value.row(r);
                y.row_mut(r)[c..c + src.len()].copy_from_slice(src);
                c += src.len();
            }
        }
        self.push(y, Op::Concat(parts.to_vec()))
    }

    /// A (1 x n) parameter repeated `rows` times.
    pub fn repeat_param(&mut self, p: ParamId, rows: usize) -> NodeId {
        let pv = &self.params.tensors[p];
        let mut y = Tensor::zeros(rows, pv.cols);
        for r in 0..rows {
            y.row_mut(r).copy_from_slice(&pv.data);
        }
        self.push(y, Op::RepeatParam { p })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        q_off: &[usize],
        k_off: &[usize],
        null_k: ParamId,
        null_v: ParamId,
        heads: usize,
    ) -> NodeId {
        let (qv, kv, vv) = (&self.nodes[q].value, &self.nodes[k].value, &self.nodes[v].value);
        let dim = qv.cols;
        assert!(heads > 0 && dim % heads == 0, "width must divide into heads");
        assert_eq!(q_off.len(), k_off.len());
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (nk, nv) = (&self.params.tensors[null_k].data, &self.params.tensors[null_v].data);
        let mut out = Tensor::zeros(qv.rows, vv.cols);
        let mut prob_off = Vec::with_capacity(qv.rows + 1);
        let mut total = 0;
        for s in 0..q_off.len() - 1 {
            let nks = k_off[s + 1] - k_off[s] + 1;
            for _ in q_off[s]..q_off[s + 1] {
                prob_off.push(total);
                total += nks * heads;
            }
        }
        prob_off.push(total);
        let mut probs = vec![0.0; total];
        for s in 0..q_off.len() - 1 {
            let keys = k_off[s]..k_off[s + 1];
            let nks = keys.len() + 1;
            for i in q_off[s]..q_off[s + 1] {
                let qi = qv.row(i);
                for h in 0..heads {
                    let hs = h * dh..(h + 1) * dh;
                    let p = &mut probs[prob_off[i] + h * nks..prob_off[i] + (h + 1) * nks];
                    for (slot, j) in keys.clone().enumerate() {
                        p[slot] = dot(&qi[hs.clone()], &kv.row(j)[hs.clone()]) * scale;
                    }
                    p[nks - 1] = dot(&qi[hs.clone()], &nk[hs.clone()]) * scale;
                    softmax_in_place(p);
                    let o = &mut out.row_mut(i)[hs.clone()];
                    for (slot, j) in keys.clone().enumerate() {
                        axpy(p[slot], &vv.row(j)[hs.clone()], o);
                    }
                    axpy(p[nks - 1], &nv[hs.clone()], o);
                }
            }
        }
        let op = AttentionOp {
            q,
            k,
            v,
            q_off: q_off.to_vec(),
            k_off: k_off.to_vec(),
            null_k,
            null_v,
            heads,
            probs,
            prob_off,
        };
        self.push(out, Op::Attention(Box::new(op)))
    }

    /// Backpropagate the given output gradients; returns one gradient per parameter.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor)>) -> Vec<Tensor> {
        let mut pgrad = self.params.zeros_like();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            accumulate(&mut grads[id], g);
        }
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.params.tensors[*w];
                    gemm(xv, true, &g, false, &mut pgrad[*w], 1.0);
                    if let Some(b) = b {
                        let bg = &mut pgrad[*b].data;
                        for r in 0..g.rows {
                            for (a, v) in bg.iter_mut().zip(g.row(r)) {
                                *a += v;
                            }
                        }
                    }
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    gemm(&g, false, wv, true, &mut dx, 0.0);
                    accumulate(&mut grads[*x], dx);
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[id].value;
                    let mut dx = g;
                    for (d, yv) in dx.data.iter_mut().zip(&y.data) {
                        *d *= 1.0 - yv * yv;
                    }
                    accumulate(&mut grads[*x], dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], g.clone());
                    accumulate(&mut grads[*b], g);
                }
                Op::Concat(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let cols = self.nodes[p].value.cols;
                        let mut dp = Tensor::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[c..c + cols]);
                        }
                        c += cols;
                        accumulate(&mut grads[p], dp);
                    }
                }
                Op::RepeatParam { p } => {
                    let pg = &mut pgrad[*p].data;
                    for r in 0..g.rows {
                        for (a, v) in pg.iter_mut().zip(g.row(r)) {
                            *a += v;
                        }
                    }
                }
                Op::Attention(op) => self.attention_backward(op, &g, &mut grads, &mut pgrad),
            }
        }
        pgrad
    }

    fn attention_backward(&self, op: &AttentionOp, g: &Tensor, grads: &mut [Option<Tensor>], pgrad: &mut [Tensor]) {
        let (qv, kv, vv) = (&self.nodes[op.q].value, &self.nodes[op.k].value, &self.nodes[op.v].value);
        let heads = op.heads;
        let dh = qv.cols / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let nk = &self.params.tensors[op.null_k].data;
        let nv = &self.params.tensors[op.null_v].data;
        let mut dq = Tensor::zeros(qv.rows, qv.cols);
        let mut dk = Tensor::zeros(kv.rows, kv.cols);
        let mut dv = Tensor::zeros(vv.rows, vv.cols);
        let mut dnk = vec![0.0; nk.len()];
        let mut dnv = vec![0.0; nv.len()];
        let mut ds = Vec::new();
        for s in 0..op.q_off.len() - 1 {
            let keys = op.k_off[s]..op.k_off[s + 1];
            let nks = keys.len() + 1;
            for i in op.q_off[s]..op.q_off[s + 1] {
                let gi = g.row(i);
                for h in 0..heads {
                    let hs = h * dh..(h + 1) * dh;
                    let p = &op.probs[op.prob_off[i] + h * nks..op.prob_off[i] + (h + 1) * nks];
                    let go = &gi[hs.clone()];
                    // dp_slot = go . v_slot ; ds = p * (dp - sum p dp)
                    ds.clear();
                    for j in keys.clone() {
                        ds.push(dot(go, &vv.row(j)[hs.clone()]));
                    }
                    ds.push(dot(go, &nv[hs.clone()]));
                    let mean: f64 = p.iter().zip(&ds).map(|(a, b)| a * b).sum();
                    for (d, pv) in ds.iter_mut().zip(p) {
                        *d = pv * (*d - mean) * scale;
                    }
                    for (slot, j) in keys.clone().enumerate() {
                        axpy(p[slot], go, &mut dv.row_mut(j)[hs.clone()]);
                        axpy(ds[slot], &qv.row(i)[hs.clone()], &mut dk.row_mut(j)[hs.clone()]);
                        let kj = &kv.row(j)[hs.clone()];
                        axpy(ds[slot], kj, &mut dq.row_mut(i)[hs.clone()]);
                    }
                    axpy(p[nks - 1], go, &mut dnv[hs.clone()]);
                    axpy(ds[nks - 1], &qv.row(i)[hs.clone()], &mut dnk[hs.clone()]);
                    axpy(ds[nks - 1], &nk[hs.clone()], &mut dq.row_mut(i)[hs.clone()]);
                }
            }
        }
        for (a, b) in pgrad[op.null_k].data.iter_mut().zip(&dnk) {
            *a += b;
        }
        for (a, b) in pgrad[op.null_v].data.iter_mut().zip(&dnv) {
            *a += b;
        }
        accumulate(&mut grads[op.q], dq);
        accumulate(&mut grads[op.k], dk);
        accumulate(&mut grads[op.v], dv);
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
