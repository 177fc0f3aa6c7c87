//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse and returns a [`Gradients`]
//! table; gradients for parameter leaves can then be folded into a
//! [`ParamStore`] with [`ParamStore::accumulate`].

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::params::{ParamId, ParamStore};
use super::tensor::{dot, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Floor applied to the survival probability before taking its log.
pub const SURVIVAL_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    OverwriteRows(Var, Vec<usize>, Var),
    SoftmaxRows(Var),
    AttendLists {
        q: Var,
        k: Var,
        v: Var,
        lists: Vec<Vec<usize>>,
        scale: f64,
        weights: Vec<Vec<f64>>,
    },
    MeanRows(Var),
    MeanGroups(Var, Vec<Vec<usize>>),
    SumAll(Var),
    Fourier { omega: Var, phi: Var, dts: Vec<f64> },
    BceWithLogits(Var, Vec<f64>),
    NegLogSurvival(Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    survival_clamps: usize,
}

/// Gradient table produced by [`Tape::backward`]; indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of survival terms whose probability hit [`SURVIVAL_FLOOR`].
    pub fn survival_clamps(&self) -> usize {
        self.survival_clamps
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that gradients stop at (inputs and constants alike).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Bind a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.param_vars.insert(id, v);
        v
    }

    pub(crate) fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_vars.iter().map(|(&id, &v)| (id, v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`; with `b` a weight matrix `out x in`, this is a linear map of
    /// the rows of `a`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        self.push(value, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(bv.rows(), 1, "add_row expects a single row");
        assert_eq!(av.cols(), bv.cols(), "add_row width mismatch");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, y) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        let value = self.value(a).zip_map(c, |x, y| x + y);
        self.push(value, Op::AddConst(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(av.row(i));
        }
        let value = Tensor::from_vec(idx.len(), cols, data);
        self.push(value, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let mut value = Tensor::zeros(av.rows(), len);
        for r in 0..av.rows() {
            value.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(value, Op::SliceCols(a, start))
    }

    /// Copy of `base` with the rows listed in `idx` replaced by the rows of
    /// `rows`. Indices must be distinct.
    pub fn overwrite_rows(&mut self, base: Var, idx: &[usize], rows: Var) -> Var {
        let mut value = self.value(base).clone();
        let rv = self.value(rows);
        assert_eq!(rv.rows(), idx.len(), "overwrite_rows count mismatch");
        for (k, &i) in idx.iter().enumerate() {
            value.row_mut(i).copy_from_slice(rv.row(k));
        }
        self.push(value, Op::OverwriteRows(base, idx.to_vec(), rows))
    }

    /// Row-wise softmax. `allowed`, when given, is row-major with the same
    /// shape as `a`; disallowed entries get probability zero. A row with no
    /// allowed entries becomes all zeros.
    pub fn softmax_rows(&mut self, a: Var, allowed: Option<&[bool]>) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.shape();
        if let Some(mask) = allowed {
            assert_eq!(mask.len(), rows * cols, "softmax mask shape mismatch");
        }
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let ok = |c: usize| allowed.map_or(true, |m| m[r * cols + c]);
            let row = av.row(r);
            let max = (0..cols)
                .filter(|&c| ok(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let out = value.row_mut(r);
            let mut total = 0.0;
            for c in 0..cols {
                if ok(c) {
                    out[c] = (row[c] - max).exp();
                    total += out[c];
                }
            }
            for x in out.iter_mut() {
                *x /= total;
            }
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Attention with an explicit key list per query: row `r` of the result
    /// is `Σ_j α_j v[j]` over `j ∈ lists[r]`, with `α` the softmax of
    /// `scale · q[r]·k[j]`. An empty list yields a zero row.
    pub fn attend_lists(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        lists: &[Vec<usize>],
        scale: f64,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qv.rows(), lists.len(), "attend_lists needs one list per query");
        assert_eq!(qv.cols(), kv.cols(), "attend_lists query/key width mismatch");
        assert_eq!(kv.rows(), vv.rows(), "attend_lists key/value count mismatch");
        let mut value = Tensor::zeros(qv.rows(), vv.cols());
        let mut weights = Vec::with_capacity(lists.len());
        for (r, list) in lists.iter().enumerate() {
            let qr = qv.row(r);
            let logits: Vec<f64> = list.iter().map(|&j| scale * dot(qr, kv.row(j))).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut alpha: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
            let total: f64 = alpha.iter().sum();
            alpha.iter_mut().for_each(|a| *a /= total);
            let out = value.row_mut(r);
            for (&j, &a) in list.iter().zip(&alpha) {
                for (o, x) in out.iter_mut().zip(vv.row(j)) {
                    *o += a * x;
                }
            }
            weights.push(alpha);
        }
        self.push(
            value,
            Op::AttendLists {
                q,
                k,
                v,
                lists: lists.to_vec(),
                scale,
                weights,
            },
        )
    }

    /// Row `g` of the result is the mean of the rows of `a` listed in
    /// `groups[g]`; an empty group yields a zero row.
    pub fn mean_groups(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let av = self.value(a);
        let mut value = Tensor::zeros(groups.len(), av.cols());
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let scale = 1.0 / members.len() as f64;
            let out = value.row_mut(g);
            for &i in members {
                for (o, x) in out.iter_mut().zip(av.row(i)) {
                    *o += x * scale;
                }
            }
        }
        self.push(value, Op::MeanGroups(a, groups.to_vec()))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.shape();
        let mut value = Tensor::zeros(1, cols);
        for r in 0..rows {
            for (o, x) in value.data_mut().iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        value.scale_in_place(1.0 / rows as f64);
        self.push(value, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Sum of several `1 x 1` nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        match parts {
            [] => self.leaf(Tensor::scalar(0.0)),
            [first, rest @ ..] => rest.iter().fold(*first, |acc, &p| self.add(acc, p)),
        }
    }

    /// `out[k][i] = cos(omega_i * dts[k] + phi_i)`; `omega`, `phi` are `1 x d`.
    pub fn fourier(&mut self, omega: Var, phi: Var, dts: &[f64]) -> Var {
        let w = self.value(omega);
        let p = self.value(phi);
        assert_eq!(w.shape(), p.shape(), "fourier parameter shape mismatch");
        let d = w.cols();
        let mut value = Tensor::zeros(dts.len(), d);
        for (k, &dt) in dts.iter().enumerate() {
            let row = value.row_mut(k);
            for i in 0..d {
                row[i] = (w.data()[i] * dt + p.data()[i]).cos();
            }
        }
        self.push(
            value,
            Op::Fourier {
                omega,
                phi,
                dts: dts.to_vec(),
            },
        )
    }

    /// Summed binary cross-entropy of `logits` against `targets` (row-major,
    /// same length): `Σ softplus(x) − y·x`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len(), "bce target length mismatch");
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| softplus(x) - y * x)
            .sum();
        self.push(Tensor::scalar(total), Op::BceWithLogits(logits, targets.to_vec()))
    }

    /// `Σ −log(1 − Φ(z))` over all entries of `z`, with the survival
    /// probability floored at [`SURVIVAL_FLOOR`].
    pub fn neg_log_survival(&mut self, z: Var) -> Var {
        let zv = self.value(z);
        let mut clamped = Vec::with_capacity(zv.len());
        let mut total = 0.0;
        for &x in zv.data() {
            let s = normal_survival(x);
            if s < SURVIVAL_FLOOR {
                clamped.push(true);
                total -= SURVIVAL_FLOOR.ln();
            } else {
                clamped.push(false);
                total -= s.ln();
            }
        }
        let n_clamped = clamped.iter().filter(|&&c| c).count();
        if n_clamped > 0 {
            self.survival_clamps += n_clamped;
            log::debug!("{n_clamped} survival term(s) clamped at {SURVIVAL_FLOOR:e}");
        }
        self.push(Tensor::scalar(total), Op::NegLogSurvival(z, clamped))
    }

    /// Reverse pass seeded with ones at `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let (r, c) = self.shape(root);
        grads[root.0] = Some(Tensor::full(r, c, 1.0));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(grads, *a, g.matmul_nt(bv));
                accumulate(grads, *b, av.matmul_tn(g));
            }
            Op::MatMulNt(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                accumulate(grads, *a, g.matmul(bv));
                accumulate(grads, *b, g.matmul_tn(av));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let mut gb = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(grads, *b, gb);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddConst(a) => accumulate(grads, *a, g.clone()),
            Op::Tanh(a) => {
                accumulate(grads, *a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y)));
            }
            Op::Sigmoid(a) => {
                accumulate(grads, *a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y)));
            }
            Op::Exp(a) => accumulate(grads, *a, g.zip_map(&node.value, |x, y| x * y)),
            Op::Square(a) => {
                accumulate(grads, *a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let mut gp = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    accumulate(grads, p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let slice = &g.data()[offset * cols..(offset + rows) * cols];
                    accumulate(grads, p, Tensor::from_vec(rows, cols, slice.to_vec()));
                    offset += rows;
                }
            }
            Op::GatherRows(a, idx) => {
                let (rows, cols) = self.shape(*a);
                let mut ga = Tensor::zeros(rows, cols);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::OverwriteRows(base, idx, rows) => {
                let mut gbase = g.clone();
                let mut grows = Tensor::zeros(idx.len(), g.cols());
                for (k, &i) in idx.iter().enumerate() {
                    grows.row_mut(k).copy_from_slice(g.row(i));
                    gbase.row_mut(i).fill(0.0);
                }
                accumulate(grads, *base, gbase);
                accumulate(grads, *rows, grows);
            }
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let mut ga = Tensor::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let pr = p.row(r);
                    let gr = g.row(r);
                    let inner = dot(pr, gr);
                    for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = pr[c] * (gr[c] - inner);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::AttendLists {
                q,
                k,
                v,
                lists,
                scale,
                weights,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut gq = Tensor::zeros(qv.rows(), qv.cols());
                let mut gk = Tensor::zeros(kv.rows(), kv.cols());
                let mut gv = Tensor::zeros(vv.rows(), vv.cols());
                for (r, (list, alpha)) in lists.iter().zip(weights).enumerate() {
                    let gr = g.row(r);
                    let dalpha: Vec<f64> = list.iter().map(|&j| dot(gr, vv.row(j))).collect();
                    let inner: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                    for (n, &j) in list.iter().enumerate() {
                        let a = alpha[n];
                        for (o, x) in gv.row_mut(j).iter_mut().zip(gr) {
                            *o += a * x;
                        }
                        let ds = scale * a * (dalpha[n] - inner);
                        for (o, x) in gq.row_mut(r).iter_mut().zip(kv.row(j)) {
                            *o += ds * x;
                        }
                        for (o, x) in gk.row_mut(j).iter_mut().zip(qv.row(r)) {
                            *o += ds * x;
                        }
                    }
                }
                accumulate(grads, *q, gq);
                accumulate(grads, *k, gk);
                accumulate(grads, *v, gv);
            }
            Op::MeanGroups(a, groups) => {
                let (rows, cols) = self.shape(*a);
                let mut ga = Tensor::zeros(rows, cols);
                for (gi, members) in groups.iter().enumerate() {
                    if members.is_empty() {
                        continue;
                    }
                    let scale = 1.0 / members.len() as f64;
                    for &i in members {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(gi)) {
                            *o += x * scale;
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let (rows, cols) = self.shape(*a);
                let scale = 1.0 / rows as f64;
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for (o, x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                        *o = x * scale;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let (rows, cols) = self.shape(*a);
                accumulate(grads, *a, Tensor::full(rows, cols, g.item()));
            }
            Op::Fourier { omega, phi, dts } => {
                let w = self.value(*omega);
                let p = self.value(*phi);
                let d = w.cols();
                let mut gw = Tensor::zeros(1, d);
                let mut gp = Tensor::zeros(1, d);
                for (k, &dt) in dts.iter().enumerate() {
                    let gr = g.row(k);
                    for i in 0..d {
                        let s = -(w.data()[i] * dt + p.data()[i]).sin() * gr[i];
                        gw.data_mut()[i] += s * dt;
                        gp.data_mut()[i] += s;
                    }
                }
                accumulate(grads, *omega, gw);
                accumulate(grads, *phi, gp);
            }
            Op::BceWithLogits(logits, targets) => {
                let scale = g.item();
                let lv = self.value(*logits);
                let data = lv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| scale * (sigmoid(x) - y))
                    .collect();
                accumulate(grads, *logits, Tensor::from_vec(lv.rows(), lv.cols(), data));
            }
            Op::NegLogSurvival(z, clamped) => {
                let scale = g.item();
                let zv = self.value(*z);
                let data = zv
                    .data()
                    .iter()
                    .zip(clamped)
                    .map(|(&x, &c)| {
                        if c {
                            0.0
                        } else {
                            scale * normal_pdf(x) / normal_survival(x)
                        }
                    })
                    .collect();
                accumulate(grads, *z, Tensor::from_vec(zv.rows(), zv.cols(), data));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `1 − Φ(x)` for the standard normal.
pub fn normal_survival(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survival_matches_known_values() {
        assert!((normal_survival(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((log_sigmoid(0.0) + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn masked_softmax_zeroes_disallowed_entries() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let p = t.softmax_rows(x, Some(&[false, true, false, false]));
        assert_eq!(t.value(p).data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn clamped_survival_is_counted() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::row_vector(vec![0.0, 40.0]));
        let l = t.neg_log_survival(z);
        assert_eq!(t.survival_clamps(), 1);
        let expected = 2f64.ln() - SURVIVAL_FLOOR.ln();
        assert!((t.value(l).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn backward_through_shared_node_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x);
        let g = t.backward(y);
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn attend_lists_matches_softmax_weighting() {
        let mut t = Tape::new();
        let q = t.leaf(Tensor::from_vec(2, 1, vec![1.0, 0.0]));
        let k = t.leaf(Tensor::from_vec(2, 1, vec![0.0, 1.0]));
        let v = t.leaf(Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let out = t.attend_lists(q, k, v, &[vec![0, 1], vec![]], 1.0);
        let a = 1.0 / (1.0 + 1f64.exp());
        let o = t.value(out);
        assert!((o.get(0, 0) - a).abs() < 1e-15 && (o.get(0, 1) - (1.0 - a)).abs() < 1e-15);
        assert_eq!(o.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn grouped_ops_pass_gradient_checks() {
        use crate::nn::grad_check;
        let q = Tensor::from_vec(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        let k = Tensor::from_vec(3, 2, vec![0.2, 0.9, -0.6, 0.4, 0.8, -0.1]);
        let v = Tensor::from_vec(3, 2, vec![1.0, -0.5, 0.25, 0.75, -0.3, 0.6]);
        let lists = vec![vec![1, 2], vec![0], vec![0, 1, 2]];
        let check = grad_check(
            |t, x| {
                let a = t.attend_lists(x[0], x[1], x[2], &lists, 0.7);
                let a = t.tanh(a);
                Ok(t.mean_groups(a, &[vec![0, 2], vec![1], vec![]]))
            },
            &[q, k, v],
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-6, "{check:?}");
    }
}
