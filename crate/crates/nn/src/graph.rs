use std::cell::RefCell;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{gemm, matmul, softmax_in_place, MatRef};
use crate::{Grads, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<Tensor> },
    Gather { table: Var, idx: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
    Dropout { x: Var, mask: Vec<f64> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    StraightThrough(Var),
    Mse { x: Var, target: Tensor },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Operations append nodes; [`Graph::backward`] walks them
/// in reverse and returns parameter gradients.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: RefCell<Vec<Node>>,
    rng: RefCell<Option<ChaCha8Rng>>,
}

impl<'p> Graph<'p> {
    /// Graph without dropout.
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: RefCell::new(Vec::new()), rng: RefCell::new(None) }
    }

    /// Graph whose dropout masks are drawn from `rng`.
    pub fn with_dropout(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        Self { params, nodes: RefCell::new(Vec::new()), rng: RefCell::new(Some(rng)) }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Returns the dropout stream so the caller can continue it.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng.into_inner()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn push_arc(&self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes.borrow()[v.0].value.shape()
    }

    fn needs(&self, vs: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vs.iter().any(|v| nodes[v.0].needs_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.push_arc(self.params.arc(id), Op::Param(id), true)
    }

    /// Same value, no gradient flow.
    pub fn detach(&self, x: Var) -> Var {
        self.push_arc(self.value(x), Op::Leaf, false)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols, vb.rows, "matmul shape mismatch {:?} x {:?}", va.shape(), vb.shape());
        let out = matmul(MatRef::of(&va), MatRef::of(&vb));
        self.push(out, Op::MatMul(a, b), self.needs(&[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols, vb.cols, "matmul_t shape mismatch {:?} x {:?}ᵀ", va.shape(), vb.shape());
        let out = matmul(MatRef::of(&va), MatRef::of(&vb).t());
        self.push(out, Op::MatMulT(a, b), self.needs(&[a, b]))
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, what: &str) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "{what} shape mismatch");
        Tensor::from_vec(va.rows, va.cols, va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x + y, "add");
        self.push(out, Op::Add(a, b), self.needs(&[a, b]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x * y, "mul");
        self.push(out, Op::Mul(a, b), self.needs(&[a, b]))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert!(vr.rows == 1 && vr.cols == va.cols, "add_row shape mismatch");
        let mut out = (*va).clone();
        for r in 0..out.rows {
            for (x, b) in out.row_mut(r).iter_mut().zip(&vr.data) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row), self.needs(&[a, row]))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let mut out = (*self.value(a)).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(a, s), self.needs(&[a]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data.iter().map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())).collect();
        self.push(Tensor::from_vec(va.rows, va.cols, data), Op::Gelu(a), self.needs(&[a]))
    }

    pub fn softmax(&self, a: Var) -> Var {
        let mut out = (*self.value(a)).clone();
        crate::tensor::softmax_rows(&mut out);
        self.push(out, Op::Softmax(a), self.needs(&[a]))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × n`).
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = vx.cols;
        assert!(vg.shape() == [1, n] && vb.shape() == [1, n], "layer_norm affine shape mismatch");
        let mut xhat = Tensor::zeros(vx.rows, n);
        let mut inv_std = Vec::with_capacity(vx.rows);
        let mut out = Tensor::zeros(vx.rows, n);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat.data[r * n + c] = h;
                out.data[r * n + c] = h * vg.data[c] + vb.data[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, self.needs(&[x, gamma, beta]))
    }

    /// Multi-head scaled dot-product attention over already projected `q`
    /// (`Lq × d`), `k`, `v` (`Lk × d`). With `causal`, query `i` sees keys `0..=i`.
    pub fn attention(&self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let d = vq.cols;
        assert!(heads > 0 && d.is_multiple_of(heads), "model dim {d} not divisible by {heads} heads");
        assert!(vk.cols == d && vv.cols == d && vk.rows == vv.rows, "attention shape mismatch");
        assert!(!causal || vq.rows == vk.rows, "causal attention needs equal query and key lengths");
        let (lq, lk, dh) = (vq.rows, vk.rows, d / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(lq, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut s = Tensor::zeros(lq, lk);
            gemm(scale, MatRef::of(&vq).cols(h * dh, dh), MatRef::of(&vk).cols(h * dh, dh).t(), 0.0, &mut s.data, 0, lk, 1);
            for i in 0..lq {
                let row = s.row_mut(i);
                if causal {
                    row[i + 1..].iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
                }
                softmax_in_place(row);
            }
            gemm(1.0, MatRef::of(&s), MatRef::of(&vv).cols(h * dh, dh), 0.0, &mut out.data, h * dh, d, 1);
            probs.push(s);
        }
        self.push(out, Op::Attention { q, k, v, heads, probs }, self.needs(&[q, k, v]))
    }

    /// Rows `idx` of `table`.
    pub fn gather(&self, table: Var, idx: &[usize]) -> Var {
        let vt = self.value(table);
        let mut out = Tensor::zeros(idx.len(), vt.cols);
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < vt.rows, "gather index {i} out of range for {} rows", vt.rows);
            out.row_mut(r).copy_from_slice(vt.row(i));
        }
        self.push(out, Op::Gather { table, idx: idx.to_vec() }, self.needs(&[table]))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.rows, targets.len(), "cross_entropy target count mismatch");
        let mut probs = (*vl).clone();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < vl.cols, "target class {t} out of range");
            let row = probs.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let n = targets.len().max(1) as f64;
        self.push(
            Tensor::scalar(loss / n),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            self.needs(&[logits]),
        )
    }

    /// Inverted dropout. Identity when the graph has no dropout stream or `p == 0`.
    pub fn dropout(&self, x: Var, p: f64) -> Var {
        let mut rng = self.rng.borrow_mut();
        let Some(rng) = rng.as_mut().filter(|_| p > 0.0) else { return x };
        let vx = self.value(x);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..vx.len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let data = vx.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.push(Tensor::from_vec(vx.rows, vx.cols, data), Op::Dropout { x, mask }, self.needs(&[x]))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let vals: Vec<Arc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let cols = vals[0].cols;
        assert!(vals.iter().all(|v| v.cols == cols), "concat_rows column mismatch");
        let mut data = Vec::with_capacity(vals.iter().map(|v| v.len()).sum());
        for v in &vals {
            data.extend_from_slice(&v.data);
        }
        let rows = data.len() / cols.max(1);
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), self.needs(parts))
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        assert!(start + len <= vx.rows, "slice_rows out of range");
        self.push(vx.rows_slice(start, len), Op::SliceRows { x, start }, self.needs(&[x]))
    }

    /// Forward value `replacement`, gradient passed to `x` unchanged.
    pub fn straight_through(&self, x: Var, replacement: Tensor) -> Var {
        assert_eq!(self.shape(x), replacement.shape(), "straight_through shape mismatch");
        self.push(replacement, Op::StraightThrough(x), self.needs(&[x]))
    }

    /// Mean squared difference from a constant target.
    pub fn mse(&self, x: Var, target: Tensor) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.shape(), target.shape(), "mse shape mismatch");
        let s = vx.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        self.push(Tensor::scalar(s / vx.len().max(1) as f64), Op::Mse { x, target }, self.needs(&[x]))
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), self.needs(&[x]))
    }

    pub fn mean(&self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), self.needs(&[x]))
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut g = Grads::for_store(self.params);
        self.backward_into(loss, &mut g);
        g
    }

    /// Accumulates gradients of `loss` into `grads`.
    pub fn backward_into(&self, loss: Var, grads: &mut Grads) {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.len(), 1, "backward needs a scalar loss");
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, g: Tensor| {
                if nodes[v.0].needs_grad {
                    match &mut adj[v.0] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            let wants = |v: Var| nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.add(*id, dy),
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        send(*a, matmul(MatRef::of(&dy), MatRef::of(val(*b)).t()));
                    }
                    if wants(*b) {
                        send(*b, matmul(MatRef::of(val(*a)).t(), MatRef::of(&dy)));
                    }
                }
                Op::MatMulT(a, b) => {
                    if wants(*a) {
                        send(*a, matmul(MatRef::of(&dy), MatRef::of(val(*b))));
                    }
                    if wants(*b) {
                        send(*b, matmul(MatRef::of(&dy).t(), MatRef::of(val(*a))));
                    }
                }
                Op::Add(a, b) => {
                    if wants(*b) {
                        send(*b, dy.clone());
                    }
                    send(*a, dy);
                }
                Op::AddRow(a, row) => {
                    if wants(*row) {
                        let mut s = Tensor::zeros(1, dy.cols);
                        for r in 0..dy.rows {
                            for (acc, x) in s.data.iter_mut().zip(dy.row(r)) {
                                *acc += x;
                            }
                        }
                        send(*row, s);
                    }
                    send(*a, dy);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    if wants(*a) {
                        send(*a, Tensor::from_vec(dy.rows, dy.cols, dy.data.iter().zip(&vb.data).map(|(d, y)| d * y).collect()));
                    }
                    if wants(*b) {
                        send(*b, Tensor::from_vec(dy.rows, dy.cols, dy.data.iter().zip(&va.data).map(|(d, x)| d * x).collect()));
                    }
                }
                Op::Scale(a, s) => {
                    let mut d = dy;
                    d.scale_assign(*s);
                    send(*a, d);
                }
                Op::Gelu(a) => {
                    let x = val(*a);
                    let data = x
                        .data
                        .iter()
                        .zip(&dy.data)
                        .map(|(&x, &d)| {
                            let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                            d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x))
                        })
                        .collect();
                    send(*a, Tensor::from_vec(x.rows, x.cols, data));
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, dr) = (y.row(r), dy.row(r));
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for (o, (yv, dv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(dr)) {
                            *o = yv * (dv - dot);
                        }
                    }
                    send(*a, dx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let vg = val(*gamma);
                    let n = xhat.cols;
                    if wants(*gamma) || wants(*beta) {
                        let mut dg = Tensor::zeros(1, n);
                        let mut db = Tensor::zeros(1, n);
                        for r in 0..xhat.rows {
                            for c in 0..n {
                                dg.data[c] += dy.at(r, c) * xhat.at(r, c);
                                db.data[c] += dy.at(r, c);
                            }
                        }
                        send(*gamma, dg);
                        send(*beta, db);
                    }
                    if wants(*x) {
                        let mut dx = Tensor::zeros(xhat.rows, n);
                        for r in 0..xhat.rows {
                            let dh: Vec<f64> = (0..n).map(|c| dy.at(r, c) * vg.data[c]).collect();
                            let s1: f64 = dh.iter().sum();
                            let s2: f64 = dh.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                            for c in 0..n {
                                dx.data[r * n + c] =
                                    inv_std[r] / n as f64 * (n as f64 * dh[c] - s1 - xhat.at(r, c) * s2);
                            }
                        }
                        send(*x, dx);
                    }
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (vq, vk, vv) = (val(*q), val(*k), val(*v));
                    let d = vq.cols;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (lq, lk) = (vq.rows, vk.rows);
                    let mut dq = Tensor::zeros(lq, d);
                    let mut dk = Tensor::zeros(lk, d);
                    let mut dv = Tensor::zeros(lk, d);
                    for (h, p) in probs.iter().enumerate() {
                        let off = h * dh;
                        let dout = MatRef::of(&dy).cols(off, dh);
                        gemm(1.0, MatRef::of(p).t(), dout, 0.0, &mut dv.data, off, d, 1);
                        let mut dp = Tensor::zeros(lq, lk);
                        gemm(1.0, dout, MatRef::of(vv).cols(off, dh).t(), 0.0, &mut dp.data, 0, lk, 1);
                        for i in 0..lq {
                            let pr = p.row(i);
                            let dr = dp.row_mut(i);
                            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                            for (x, pv) in dr.iter_mut().zip(pr) {
                                *x = pv * (*x - dot);
                            }
                        }
                        gemm(scale, MatRef::of(&dp), MatRef::of(vk).cols(off, dh), 0.0, &mut dq.data, off, d, 1);
                        gemm(scale, MatRef::of(&dp).t(), MatRef::of(vq).cols(off, dh), 0.0, &mut dk.data, off, d, 1);
                    }
                    send(*q, dq);
                    send(*k, dk);
                    send(*v, dv);
                }
                Op::Gather { table, idx } => {
                    let vt = val(*table);
                    let mut dt = Tensor::zeros(vt.rows, vt.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (acc, x) in dt.row_mut(i).iter_mut().zip(dy.row(r)) {
                            *acc += x;
                        }
                    }
                    send(*table, dt);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let s = dy.item() / targets.len().max(1) as f64;
                    let mut dl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        dl.data[r * dl.cols + t] -= 1.0;
                    }
                    dl.scale_assign(s);
                    send(*logits, dl);
                }
                Op::Dropout { x, mask } => {
                    let data = dy.data.iter().zip(mask).map(|(d, m)| d * m).collect();
                    send(*x, Tensor::from_vec(dy.rows, dy.cols, data));
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = nodes[p.0].value.rows;
                        if wants(p) {
                            send(p, dy.rows_slice(start, rows));
                        }
                        start += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    let vx = val(*x);
                    let mut dx = Tensor::zeros(vx.rows, vx.cols);
                    dx.data[start * vx.cols..start * vx.cols + dy.len()].copy_from_slice(&dy.data);
                    send(*x, dx);
                }
                Op::StraightThrough(x) => send(*x, dy),
                Op::Mse { x, target } => {
                    let vx = val(*x);
                    let s = 2.0 * dy.item() / vx.len().max(1) as f64;
                    let data = vx.data.iter().zip(&target.data).map(|(a, b)| s * (a - b)).collect();
                    send(*x, Tensor::from_vec(vx.rows, vx.cols, data));
                }
                Op::Sum(x) => {
                    let vx = val(*x);
                    send(*x, Tensor::full(vx.rows, vx.cols, dy.item()));
                }
                Op::Mean(x) => {
                    let vx = val(*x);
                    send(*x, Tensor::full(vx.rows, vx.cols, dy.item() / vx.len().max(1) as f64));
                }
            }
        }
    }
}
