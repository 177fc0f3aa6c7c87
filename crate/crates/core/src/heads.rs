//! The generative stages: a lognormal time model for which nodes fire next,
//! adjacency and size heads that propose candidate hyperedges, negative
//! sampling, and the loss terms.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::Side;
use crate::nn::layers::Mlp2;
use crate::nn::tape::{log_sigmoid, normal_survival, SURVIVAL_FLOOR};
use crate::nn::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::stream::{DirectedHyperedge, NodeId};

/// `μ = MLP_t(v)`, the location of the lognormal time to a node's next
/// event; `s_t` is fixed.
#[derive(Debug, Clone)]
pub struct TimeHead {
    pub mlp: Mlp2,
    pub s_t: f64,
}

impl TimeHead {
    pub fn new(store: &mut ParamStore, d: usize, s_t: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(s_t > 0.0 && s_t.is_finite()) {
            return Err(Error::InvalidConfig(format!("s_t must be positive, got {s_t}")));
        }
        Ok(TimeHead {
            mlp: Mlp2::new(store, "head.time", d, d, 1, rng),
            s_t,
        })
    }

    /// One `μ` per representation row (`n x 1`).
    pub fn mu(&self, tape: &mut Tape, store: &ParamStore, reps: Var) -> Result<Var> {
        self.mlp.forward(tape, store, reps)
    }

    /// `Σ_event (log Δt − μ)²/(2 s_t²) − Σ_non-event log(1 − Φ((log Δt − μ)/s_t))`.
    /// `dt_event[k]` and `dt_non_event[k]` pair with the rows of the `μ`
    /// columns; either part may be empty.
    pub fn node_event_nll(
        &self,
        tape: &mut Tape,
        mu_event: Option<Var>,
        dt_event: &[f64],
        mu_non_event: Option<Var>,
        dt_non_event: &[f64],
    ) -> Result<Var> {
        let s = self.s_t;
        let mut parts = Vec::with_capacity(2);
        for (mu, dts, event) in [(mu_event, dt_event, true), (mu_non_event, dt_non_event, false)] {
            let Some(mu) = mu else {
                if !dts.is_empty() {
                    return Err(Error::Shape("time deltas given without μ values".into()));
                }
                continue;
            };
            if tape.shape(mu) != (dts.len(), 1) {
                return Err(Error::Shape(format!(
                    "μ has shape {:?}, expected ({}, 1)",
                    tape.shape(mu),
                    dts.len()
                )));
            }
            if dts.is_empty() {
                continue;
            }
            if let Some(bad) = dts.iter().find(|&&dt| !(dt > 0.0 && dt.is_finite())) {
                return Err(Error::TimeDelta(format!("positive, got {bad}")));
            }
            let log_dt = tape.leaf(Tensor::column_vector(dts.iter().map(|dt| dt.ln()).collect()));
            let diff = tape.sub(log_dt, mu);
            if event {
                let sq = tape.square(diff);
                let total = tape.sum_all(sq);
                parts.push(tape.scale(total, 1.0 / (2.0 * s * s)));
            } else {
                let z = tape.scale(diff, 1.0 / s);
                parts.push(tape.neg_log_survival(z));
            }
        }
        Ok(tape.sum_scalars(&parts))
    }
}

/// Scalar reference for one node's time term.
pub fn node_time_term(mu: f64, dt: f64, s_t: f64, event: bool) -> f64 {
    let z = (dt.ln() - mu) / s_t;
    if event {
        0.5 * z * z
    } else {
        -normal_survival(z).max(SURVIVAL_FLOOR).ln()
    }
}

/// Point estimate `Δt̂ = exp(μ)`.
pub fn predict_event_time(mu: f64) -> f64 {
    mu.exp()
}

/// `θ = Mem · tanh(W_a0 v + b_a0)`: the output layer is the live memory
/// matrix, so the logits follow memory as it evolves.
#[derive(Debug, Clone)]
pub struct AdjacencyHead {
    pub w_right: ParamId,
    pub b_right: ParamId,
    pub w_left: ParamId,
    pub b_left: ParamId,
}

impl AdjacencyHead {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut impl Rng) -> Self {
        AdjacencyHead {
            w_right: store.add_uniform("head.adj_r.w0", d, d, d, rng),
            b_right: store.add_uniform("head.adj_r.b0", 1, d, d, rng),
            w_left: store.add_uniform("head.adj_l.w0", d, d, d, rng),
            b_left: store.add_uniform("head.adj_l.b0", 1, d, d, rng),
        }
    }

    /// Hidden activations `tanh(W_a0 v + b_a0)` (`n x d`).
    pub fn hidden(&self, tape: &mut Tape, store: &ParamStore, reps: Var, side: Side) -> Var {
        let (w, b) = match side {
            Side::Right => (self.w_right, self.b_right),
            Side::Left => (self.w_left, self.b_left),
        };
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        let h = tape.matmul_nt(reps, w);
        let h = tape.add_row(h, b);
        tape.tanh(h)
    }

    /// Logits over all nodes (`n x |V|`).
    pub fn logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        reps: Var,
        mem: Var,
        side: Side,
    ) -> Var {
        let h = self.hidden(tape, store, reps, side);
        tape.matmul_nt(h, mem)
    }
}

/// Multi-label size logits; bit `k − 1` stands for size exactly `k`.
#[derive(Debug, Clone)]
pub struct SizeHead {
    pub right: Mlp2,
    pub left: Mlp2,
}

impl SizeHead {
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        kr_max: usize,
        kl_max: usize,
        rng: &mut impl Rng,
    ) -> Self {
        SizeHead {
            right: Mlp2::new(store, "head.size_r", d, d, kr_max, rng),
            left: Mlp2::new(store, "head.size_l", d, d, kl_max, rng),
        }
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, reps: Var, side: Side) -> Result<Var> {
        match side {
            Side::Right => self.right.forward(tape, store, reps),
            Side::Left => self.left.forward(tape, store, reps),
        }
    }
}

/// Summed binary cross-entropy of adjacency logits against 0/1 targets.
pub fn adjacency_nll(tape: &mut Tape, logits: Var, targets: &[f64]) -> Var {
    tape.bce_with_logits(logits, targets)
}

/// Summed binary cross-entropy of size logits against 0/1 targets.
pub fn size_nll(tape: &mut Tape, logits: Var, targets: &[f64]) -> Var {
    tape.bce_with_logits(logits, targets)
}

/// Scalar reference: `−Σ a log σ(θ) + (1 − a) log(1 − σ(θ))`.
pub fn bce_value(logits: &[f64], targets: &[f64]) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(&x, &y)| -(y * log_sigmoid(x) + (1.0 - y) * log_sigmoid(-x)))
        .sum()
}

const MAX_ATTEMPTS_PER_SAMPLE: usize = 1000;

/// Corrupts `h` `count` times: one side (chosen uniformly) is kept and the
/// other is replaced by a uniformly sized set of uniformly drawn distinct
/// nodes. Draws equal to `h` or with identical sides are redrawn.
pub fn negative_sample(
    h: &DirectedHyperedge,
    count: usize,
    node_count: usize,
    kr_max: usize,
    kl_max: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DirectedHyperedge>> {
    if kr_max == 0 || kl_max == 0 {
        return Err(Error::Sampling("size bounds must be positive".into()));
    }
    let needed = kr_max.max(kl_max);
    if node_count < needed || node_count < 2 {
        return Err(Error::Sampling(format!(
            "{node_count} nodes cannot fill a side of size {needed}"
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > MAX_ATTEMPTS_PER_SAMPLE * count.max(1) {
            return Err(Error::Sampling(format!(
                "no valid corruption of {h:?} after {} attempts",
                attempts - 1
            )));
        }
        let replace_right = rng.random_bool(0.5);
        let k_max = if replace_right { kr_max } else { kl_max };
        let k = rng.random_range(1..=k_max);
        let fresh: Vec<NodeId> = sample(rng, node_count, k).into_iter().map(NodeId).collect();
        let candidate = if replace_right {
            DirectedHyperedge::new(fresh, h.left().iter().copied())
        } else {
            DirectedHyperedge::new(h.right().iter().copied(), fresh)
        };
        match candidate {
            Ok(c) if &c != h => out.push(c),
            _ => {}
        }
    }
    Ok(out)
}

/// `count` distinct nodes drawn uniformly from those outside `exclude`
/// (fewer if not enough remain), ascending.
pub fn non_event_sample(
    exclude: &[NodeId],
    count: usize,
    node_count: usize,
    rng: &mut impl Rng,
) -> Vec<NodeId> {
    let excluded: BTreeSet<NodeId> = exclude.iter().copied().collect();
    let pool: Vec<NodeId> = (0..node_count).map(NodeId).filter(|n| !excluded.contains(n)).collect();
    let k = count.min(pool.len());
    let mut picked: Vec<NodeId> = sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    picked.sort();
    picked
}

/// Indices of the `k` largest values, ties broken toward the lower index.
pub fn top_k(values: &[f64], k: usize, skip: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| !skip(i)).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// `1 + argmax` (ties toward the smaller size).
pub fn predicted_size(size_logits: &[f64]) -> usize {
    top_k(size_logits, 1, |_| false).first().map_or(1, |&i| i + 1)
}

/// The candidate proposed for event node `node`: its right side is the node
/// plus the `k̂^r − 1` other nodes with the highest right-adjacency logits,
/// its left side the `k̂^ℓ` highest left-adjacency logits among nodes not on
/// the right.
pub fn candidate_for_node(
    node: NodeId,
    theta_right: &[f64],
    theta_left: &[f64],
    kappa_right: &[f64],
    kappa_left: &[f64],
) -> Result<DirectedHyperedge> {
    let kr = predicted_size(kappa_right);
    let kl = predicted_size(kappa_left);
    let mut right = vec![node];
    right.extend(top_k(theta_right, kr - 1, |j| j == node.0).into_iter().map(NodeId));
    let on_right: BTreeSet<usize> = right.iter().map(|n| n.0).collect();
    let left: Vec<NodeId> = top_k(theta_left, kl, |j| on_right.contains(&j))
        .into_iter()
        .map(NodeId)
        .collect();
    DirectedHyperedge::new(right, left)
}

/// One candidate per event node, duplicates merged (first occurrence kept).
pub fn generate_candidates(per_node: impl IntoIterator<Item = DirectedHyperedge>) -> Vec<DirectedHyperedge> {
    let mut seen = BTreeSet::new();
    per_node.into_iter().filter(|h| seen.insert(h.clone())).collect()
}

/// The four loss terms of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub time: f64,
    pub size: f64,
    pub adjacency: f64,
    pub hyperedge: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.time + self.size + self.adjacency + self.hyperedge
    }

    pub fn add(&mut self, other: &LossParts) {
        self.time += other.time;
        self.size += other.size;
        self.adjacency += other.adjacency;
        self.hyperedge += other.hyperedge;
    }

    pub fn scaled(&self, c: f64) -> LossParts {
        LossParts {
            time: self.time * c,
            size: self.size * c,
            adjacency: self.adjacency * c,
            hyperedge: self.hyperedge * c,
        }
    }
}

/// Unweighted sum of the four component losses.
pub fn total_nll(tape: &mut Tape, time: Var, size: Var, adjacency: Var, hyperedge: Var) -> Var {
    tape.sum_scalars(&[time, size, adjacency, hyperedge])
}
