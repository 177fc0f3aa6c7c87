//! Differentiable building blocks composed from tape operations.
//!
//! Inputs are row-major: a batch of `k` vectors is a `k x d` tensor and every
//! layer maps rows independently.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn expect_cols(tape: &Tape, x: Var, cols: usize, what: &str) -> Result<()> {
    let (_, c) = tape.shape(x);
    if c != cols {
        return Err(Error::Shape(format!("{what}: expected width {cols}, got {c}")));
    }
    Ok(())
}

/// `W_1 · tanh(W_0 x + b_0) + b_1`.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub w0: ParamId,
    pub b0: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    d_in: usize,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Mlp2 {
            w0: store.add_uniform(format!("{prefix}.w0"), d_hidden, d_in, d_in, rng),
            b0: store.add_uniform(format!("{prefix}.b0"), 1, d_hidden, d_in, rng),
            w1: store.add_uniform(format!("{prefix}.w1"), d_out, d_hidden, d_hidden, rng),
            b1: store.add_uniform(format!("{prefix}.b1"), 1, d_out, d_hidden, rng),
            d_in,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        expect_cols(tape, x, self.d_in, "mlp2 input")?;
        let w0 = tape.param(store, self.w0);
        let b0 = tape.param(store, self.b0);
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let h = tape.matmul_nt(x, w0);
        let h = tape.add_row(h, b0);
        let h = tape.tanh(h);
        let o = tape.matmul_nt(h, w1);
        Ok(tape.add_row(o, b1))
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W x + U (r ⊙ h) + b)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    d_in: usize,
    d: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut gate = |name: &str, rng: &mut _| {
            (
                store.add_uniform(format!("{prefix}.w_{name}"), d, d_in, d, rng),
                store.add_uniform(format!("{prefix}.u_{name}"), d, d, d, rng),
                store.add_uniform(format!("{prefix}.b_{name}"), 1, d, d, rng),
            )
        };
        let (w_z, u_z, b_z) = gate("z", rng);
        let (w_r, u_r, b_r) = gate("r", rng);
        let (w_h, u_h, b_h) = gate("h", rng);
        GruCell {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            d_in,
            d,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        expect_cols(tape, x, self.d_in, "gru input")?;
        expect_cols(tape, h, self.d, "gru state")?;
        if tape.shape(x).0 != tape.shape(h).0 {
            return Err(Error::Shape("gru input and state row counts differ".into()));
        }
        let affine = |tape: &mut Tape, w, u, b, hv: Var| {
            let w = tape.param(store, w);
            let u = tape.param(store, u);
            let b = tape.param(store, b);
            let xw = tape.matmul_nt(x, w);
            let hu = tape.matmul_nt(hv, u);
            let s = tape.add(xw, hu);
            tape.add_row(s, b)
        };
        let z = affine(tape, self.w_z, self.u_z, self.b_z, h);
        let z = tape.sigmoid(z);
        let r = affine(tape, self.w_r, self.u_r, self.b_r, h);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let cand = affine(tape, self.w_h, self.u_h, self.b_h, rh);
        let cand = tape.tanh(cand);
        let delta = tape.sub(cand, h);
        let step = tape.mul(z, delta);
        Ok(tape.add(h, step))
    }
}

/// Scaled dot-product attention with `heads` heads, concatenated and passed
/// through an output projection. No biases.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    heads: usize,
    d_query: usize,
    d_kv: usize,
    d: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_query: usize,
        d_kv: usize,
        d: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "attention width {d} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            w_q: store.add_uniform(format!("{prefix}.w_q"), d, d_query, d_query, rng),
            w_k: store.add_uniform(format!("{prefix}.w_k"), d, d_kv, d_kv, rng),
            w_v: store.add_uniform(format!("{prefix}.w_v"), d, d_kv, d_kv, rng),
            w_o: store.add_uniform(format!("{prefix}.w_o"), d, d, d, rng),
            heads,
            d_query,
            d_kv,
            d,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Projects keys and values once; lets callers share projections across
    /// many queries.
    pub fn project_kv(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        keys: Var,
        values: Var,
    ) -> Result<(Var, Var)> {
        expect_cols(tape, keys, self.d_kv, "attention keys")?;
        expect_cols(tape, values, self.d_kv, "attention values")?;
        let w_k = tape.param(store, self.w_k);
        let w_v = tape.param(store, self.w_v);
        Ok((tape.matmul_nt(keys, w_k), tape.matmul_nt(values, w_v)))
    }

    /// `queries` is `m x d_query`; projected keys/values are `n x d` with
    /// `n ≥ 1`. Returns `m x d`.
    pub fn attend_projected(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys_p: Var,
        values_p: Var,
    ) -> Result<Var> {
        expect_cols(tape, queries, self.d_query, "attention query")?;
        let n = tape.shape(keys_p).0;
        if n == 0 || tape.shape(values_p).0 != n {
            return Err(Error::Shape(
                "attention needs a non-empty, equal-length key/value list".into(),
            ));
        }
        let w_q = tape.param(store, self.w_q);
        let w_o = tape.param(store, self.w_o);
        let q = tape.matmul_nt(queries, w_q);
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let qh = tape.slice_cols(q, head * dh, dh);
            let kh = tape.slice_cols(keys_p, head * dh, dh);
            let vh = tape.slice_cols(values_p, head * dh, dh);
            let logits = tape.matmul_nt(qh, kh);
            let logits = tape.scale(logits, scale);
            let alpha = tape.softmax_rows(logits, None);
            outs.push(tape.matmul(alpha, vh));
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        Ok(tape.matmul_nt(cat, w_o))
    }

    /// Many queries at once, each over its own subset of the key/value rows
    /// (`lists[r]` for query `r`). A query with an empty list yields zeros.
    pub fn forward_lists(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        values: Var,
        lists: &[Vec<usize>],
    ) -> Result<Var> {
        expect_cols(tape, queries, self.d_query, "attention query")?;
        if tape.shape(queries).0 != lists.len() {
            return Err(Error::Shape("one key list per query is required".into()));
        }
        let (kp, vp) = self.project_kv(tape, store, keys, values)?;
        let w_q = tape.param(store, self.w_q);
        let w_o = tape.param(store, self.w_o);
        let q = tape.matmul_nt(queries, w_q);
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let qh = tape.slice_cols(q, head * dh, dh);
            let kh = tape.slice_cols(kp, head * dh, dh);
            let vh = tape.slice_cols(vp, head * dh, dh);
            outs.push(tape.attend_lists(qh, kh, vh, lists, scale));
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        Ok(tape.matmul_nt(cat, w_o))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys: Var,
        values: Var,
    ) -> Result<Var> {
        if tape.shape(keys).0 == 0 {
            return Err(Error::Shape("attention over an empty key list".into()));
        }
        let (kp, vp) = self.project_kv(tape, store, keys, values)?;
        self.attend_projected(tape, store, queries, kp, vp)
    }
}

/// Learnable functional time encoding `ψ(Δt)_i = cos(ω_i Δt + φ_i)`.
#[derive(Debug, Clone)]
pub struct FourierEncoder {
    pub omega: ParamId,
    pub phi: ParamId,
    d: usize,
}

impl FourierEncoder {
    /// `ω` log-spaced over `[1/t_max, 1]`, `φ = 0`.
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, t_max: f64) -> Self {
        let lo = (1.0 / t_max.max(1.0)).ln();
        let omega = (0..d)
            .map(|i| {
                let frac = if d > 1 { i as f64 / (d - 1) as f64 } else { 1.0 };
                (lo * (1.0 - frac)).exp()
            })
            .collect();
        FourierEncoder {
            omega: store.add(format!("{prefix}.omega"), Tensor::row_vector(omega)),
            phi: store.add(format!("{prefix}.phi"), Tensor::zeros(1, d)),
            d,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// One row per entry of `dts`; every `Δt` must be non-negative.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, dts: &[f64]) -> Result<Var> {
        if let Some(bad) = dts.iter().find(|&&dt| !(dt >= 0.0)) {
            return Err(Error::TimeDelta(format!("non-negative, got {bad}")));
        }
        let omega = tape.param(store, self.omega);
        let phi = tape.param(store, self.phi);
        Ok(tape.fourier(omega, phi, dts))
    }
}
