//! Reverse-mode automatic differentiation over 2-D values.
//!
//! Every operation appends a node holding its output and whatever the
//! backward pass needs (normalized rows, attention probabilities, ...).
//! `backward` walks the nodes once in reverse order. Parameters enter the
//! tape by reference, so building a tape never copies model weights; their
//! gradients come back as a [`Gradients`] value that callers fold into the
//! owning tensors.

use std::ops::Deref;

use super::kernels::{self, MatRef};
use super::tensor::{softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Index of a trainable tensor inside a parameter collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<'a> {
    Owned(Vec<f64>),
    Borrowed(&'a [f64]),
}

impl Deref for Value<'_> {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

enum Op {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    NllRanking {
        scores: Var,
        probs: Vec<f64>,
    },
}

struct Node<'a> {
    value: Value<'a>,
    rows: usize,
    cols: usize,
    op: Op,
    requires_grad: bool,
}

/// Parameter gradients produced by one backward pass, sorted by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    entries: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries
            .binary_search_by_key(&id, |(p, _)| *p)
            .ok()
            .map(|i| self.entries[i].1.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.entries.iter().map(|(p, g)| (*p, g.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn add_entry(&mut self, id: ParamId, grad: Vec<f64>) {
        match self.entries.binary_search_by_key(&id, |(p, _)| *p) {
            Ok(i) => add_into(&mut self.entries[i].1, &grad),
            Err(i) => self.entries.insert(i, (id, grad)),
        }
    }

    /// Adds every entry of `other` into `self`.
    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.entries {
            self.add_entry(id, g);
        }
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn grad_slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node<'_>], v: Var) -> &'g mut [f64] {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value: Value::Owned(value),
            rows,
            cols,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a tensor onto the tape, viewed as a matrix.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.data().to_vec(), t.rows(), t.cols(), Op::Input, t.requires_grad())
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::shape("matrix", format!("{rows}x{cols} from {} values", data.len())));
        }
        Ok(self.push(data, rows, cols, Op::Input, requires_grad))
    }

    /// Registers a parameter by reference; its gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t.data()),
            rows: t.rows(),
            cols: t.cols(),
            op: Op::Param(id),
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// Saved post-softmax probabilities of an attention node, laid out
    /// `[heads][query rows][key rows]`.
    pub fn attention_probs(&self, v: Var) -> Option<(&[f64], usize)> {
        match &self.node(v).op {
            Op::Attention { probs, heads, .. } => Some((probs, *heads)),
            _ => None,
        }
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            MatRef::new(self.value(a), ac, ta),
            MatRef::new(self.value(b), bc, tb),
            &mut out,
            n,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, m, n, Op::MatMul { a, b, m, k, n, ta, tb }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, r, c, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, r, c, Op::Mul(a, b), rg))
    }

    /// Broadcast-adds a `[1×cols]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(row) != (1, c) {
            return Err(Error::shape("add_row", format!("row {:?} for {c} cols", self.shape(row))));
        }
        let bias = self.value(row);
        let out = self
            .value(x)
            .chunks(c)
            .flat_map(|xr| xr.iter().zip(bias).map(|(a, b)| a + b))
            .collect();
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, r, c, Op::AddRow { x, row }, rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| v * s).collect();
        let rg = self.rg(x);
        self.push(out, r, c, Op::Scale(x, s), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let rg = self.rg(x);
        self.push(out, r, c, Op::Gelu(x), rg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain` and `bias` (both `[1×cols]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(Error::shape("layer_norm", format!("affine params must be 1x{c}")));
        }
        let (out, xhat, rstd) =
            kernels::layer_norm_rows(self.value(x), c, self.value(gain), self.value(bias), eps);
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, r, c, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// Softmax along each row.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).to_vec();
        out.chunks_mut(c).for_each(softmax_in_place);
        let rg = self.rg(x);
        self.push(out, r, c, Op::Softmax(x), rg)
    }

    /// Multi-head scaled dot-product attention of `q` rows over `k`/`v` rows.
    /// Heads split the columns evenly; probabilities are kept for inspection
    /// and for the backward pass.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (m, d) = self.shape(q);
        let (n, dk) = self.shape(k);
        if dk != d || self.shape(v) != (n, d) {
            return Err(Error::shape("attention", "q, k, v must share width; k and v share rows"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("{heads} heads for width {d}")));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * m * n];
        let mut out = vec![0.0; m * d];
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        for h in 0..heads {
            let off = h * dh;
            let p = &mut probs[h * m * n..(h + 1) * m * n];
            kernels::gemm(
                m,
                dh,
                n,
                MatRef::new(&qv[off..], d, false),
                MatRef::new(&kv[off..], d, true),
                p,
                n,
                false,
            );
            for row in p.chunks_mut(n) {
                row.iter_mut().for_each(|s| *s *= scale);
                softmax_in_place(row);
            }
            kernels::gemm(
                m,
                n,
                dh,
                MatRef::new(p, n, false),
                MatRef::new(&vv[off..], d, false),
                &mut out[off..],
                d,
                false,
            );
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(out, m, d, Op::Attention { q, k, v, heads, probs }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let c = self.shape(first).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.shape(p);
            if pc != c {
                return Err(Error::shape("concat_rows", format!("{pc} cols vs {c}")));
            }
            out.extend_from_slice(self.value(p));
            rows += r;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, rows, c, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(table);
        if ids.is_empty() {
            return Err(Error::EmptyInput("gather"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather", format!("row {bad} of {r}")));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(table);
        Ok(self.push(out, ids.len(), c, Op::Gather { table, ids: ids.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![total], 1, 1, Op::Sum(x), rg)
    }

    /// Negative log-likelihood of the first entry of `scores` under a softmax
    /// over all entries: positive first, negatives after.
    pub fn nll_ranking(&mut self, scores: Var) -> Result<Var> {
        let len = self.value(scores).len();
        if len < 2 {
            return Err(Error::contract("nll ranking loss needs at least one negative"));
        }
        let mut probs = self.value(scores).to_vec();
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + probs.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let loss = lse - probs[0];
        softmax_in_place(&mut probs);
        let rg = self.rg(scores);
        Ok(self.push(vec![loss], 1, 1, Op::NllRanking { scores, probs }, rg))
    }

    /// Gradient of an input node after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// Propagates d`loss`/d(node) through the tape. The loss must be a
    /// single value; a tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.grads.is_some() {
            return Err(Error::contract("backward already ran on this tape"));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            match node.op {
                Op::Input => grads[idx] = Some(g),
                Op::Param(id) => params.add_entry(id, g),
                _ => {}
            }
        }
        self.grads = Some(grads);
        Ok(params)
    }

    fn backprop_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {
                grad_slot(grads, nodes, $v)
            };
        }

        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul { a, b, m, k, n, ta, tb } => {
                let (m, k, n, ta, tb) = (*m, *k, *n, *ta, *tb);
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                let lda = if ta { m } else { k };
                let ldb = if tb { k } else { n };
                if needs(*a) {
                    let da = acc!(*a);
                    if !ta {
                        kernels::gemm(
                            m,
                            n,
                            k,
                            MatRef::new(g, n, false),
                            MatRef::new(bv, ldb, !tb),
                            da,
                            k,
                            true,
                        );
                    } else {
                        kernels::gemm(
                            k,
                            n,
                            m,
                            MatRef::new(bv, ldb, tb),
                            MatRef::new(g, n, true),
                            da,
                            m,
                            true,
                        );
                    }
                }
                if needs(*b) {
                    let db = acc!(*b);
                    if !tb {
                        kernels::gemm(
                            k,
                            m,
                            n,
                            MatRef::new(av, lda, !ta),
                            MatRef::new(g, n, false),
                            db,
                            n,
                            true,
                        );
                    } else {
                        kernels::gemm(
                            n,
                            m,
                            k,
                            MatRef::new(g, n, true),
                            MatRef::new(av, lda, ta),
                            db,
                            k,
                            true,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        add_into(acc!(v), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let other = &nodes[b.0].value;
                    for ((d, gi), o) in acc!(*a).iter_mut().zip(g).zip(other.iter()) {
                        *d += gi * o;
                    }
                }
                if needs(*b) {
                    let other = &nodes[a.0].value;
                    for ((d, gi), o) in acc!(*b).iter_mut().zip(g).zip(other.iter()) {
                        *d += gi * o;
                    }
                }
            }
            Op::AddRow { x, row } => {
                if needs(*x) {
                    add_into(acc!(*x), g);
                }
                if needs(*row) {
                    let c = node.cols;
                    let dr = acc!(*row);
                    for gr in g.chunks(c) {
                        add_into(dr, gr);
                    }
                }
            }
            Op::Scale(x, s) => {
                if needs(*x) {
                    for (d, gi) in acc!(*x).iter_mut().zip(g) {
                        *d += s * gi;
                    }
                }
            }
            Op::Gelu(x) => {
                if needs(*x) {
                    let xv = &nodes[x.0].value;
                    for ((d, gi), xi) in acc!(*x).iter_mut().zip(g).zip(xv.iter()) {
                        *d += gi * kernels::gelu_grad(*xi);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let c = node.cols;
                let gv = &nodes[gain.0].value;
                if needs(*x) {
                    let dx = acc!(*x);
                    let mut dxhat = vec![0.0; c];
                    for (r, inv) in rstd.iter().enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut mean1 = 0.0;
                        let mut mean2 = 0.0;
                        for j in 0..c {
                            dxhat[j] = gr[j] * gv[j];
                            mean1 += dxhat[j];
                            mean2 += dxhat[j] * hr[j];
                        }
                        mean1 /= c as f64;
                        mean2 /= c as f64;
                        for j in 0..c {
                            dx[r * c + j] += inv * (dxhat[j] - mean1 - hr[j] * mean2);
                        }
                    }
                }
                if needs(*gain) {
                    let dg = acc!(*gain);
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if needs(*bias) {
                    let db = acc!(*bias);
                    for gr in g.chunks(c) {
                        add_into(db, gr);
                    }
                }
            }
            Op::Softmax(x) => {
                if needs(*x) {
                    let c = node.cols;
                    let dx = acc!(*x);
                    for (r, (yr, gr)) in node.value.chunks(c).zip(g.chunks(c)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, gi)| y * gi).sum();
                        for j in 0..c {
                            dx[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (m, d) = (node.rows, node.cols);
                let n = nodes[k.0].rows;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
                let mut dq = vec![0.0; m * d];
                let mut dk = vec![0.0; n * d];
                let mut dv = vec![0.0; n * d];
                let mut ds = vec![0.0; m * n];
                for h in 0..*heads {
                    let off = h * dh;
                    let p = &probs[h * m * n..(h + 1) * m * n];
                    let go = MatRef::new(&g[off..], d, false);
                    // dP = dO · Vᵀ
                    kernels::gemm(m, dh, n, go, MatRef::new(&vv[off..], d, true), &mut ds, n, false);
                    // dV += Pᵀ · dO
                    kernels::gemm(n, m, dh, MatRef::new(p, n, true), go, &mut dv[off..], d, true);
                    for (sr, pr) in ds.chunks_mut(n).zip(p.chunks(n)) {
                        let dot: f64 = sr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        for (s, pj) in sr.iter_mut().zip(pr) {
                            *s = pj * (*s - dot) * scale;
                        }
                    }
                    kernels::gemm(
                        m,
                        n,
                        dh,
                        MatRef::new(&ds, n, false),
                        MatRef::new(&kv[off..], d, false),
                        &mut dq[off..],
                        d,
                        true,
                    );
                    kernels::gemm(
                        n,
                        m,
                        dh,
                        MatRef::new(&ds, n, true),
                        MatRef::new(&qv[off..], d, false),
                        &mut dk[off..],
                        d,
                        true,
                    );
                }
                for (var, local) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if needs(var) {
                        add_into(acc!(var), &local);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if needs(p) {
                        add_into(acc!(p), &g[start..start + len]);
                    }
                    start += len;
                }
            }
            Op::Gather { table, ids } => {
                if needs(*table) {
                    let c = node.cols;
                    let dt = acc!(*table);
                    for (gr, &i) in g.chunks(c).zip(ids) {
                        add_into(&mut dt[i * c..(i + 1) * c], gr);
                    }
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    acc!(*x).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::NllRanking { scores, probs } => {
                if needs(*scores) {
                    let ds = acc!(*scores);
                    for (i, (d, p)) in ds.iter_mut().zip(probs).enumerate() {
                        let target = if i == 0 { 1.0 } else { 0.0 };
                        *d += g[0] * (p - target);
                    }
                }
            }
        }
    }
}
