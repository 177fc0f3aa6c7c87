//! Directed hyperedge scorer.
//!
//! For each side of a candidate, cross-attention over the opposite side gives
//! `d^ch`, self-attention over `z = v + d^ch` gives `d^sh`, and the side
//! score is the mean over its nodes of
//! `W_o [(d^h − s^h)² ∥ (d^ch − s^h)²] + b_o` with `d^h = d^sh + d^ch` and
//! `s^h = W_s v`. The hyperedge score is the sum of both side scores.
//!
//! All candidates of a batch are scored together: node representations are
//! projected once and every candidate becomes a set of attention lists.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::memory::Side;
use crate::nn::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::stream::{DirectedHyperedge, NodeId};

/// Learnable weights of one side. `cq`, `ck`, `cv` are this side's
/// cross-attention maps (queries from this side, keys and values offered to
/// the other side); `sq`, `sk`, `sv` its self-attention maps.
#[derive(Debug, Clone)]
pub struct SideParams {
    pub cq: ParamId,
    pub ck: ParamId,
    pub cv: ParamId,
    pub sq: ParamId,
    pub sk: ParamId,
    pub sv: ParamId,
    pub ws: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl SideParams {
    fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Self {
        let mut square = |name: &str, rng: &mut _| {
            store.add_uniform(format!("{prefix}.{name}"), d, d, d, rng)
        };
        let cq = square("w_cq", rng);
        let ck = square("w_ck", rng);
        let cv = square("w_cv", rng);
        let sq = square("w_sq", rng);
        let sk = square("w_sk", rng);
        let sv = square("w_sv", rng);
        let ws = square("w_s", rng);
        SideParams {
            cq,
            ck,
            cv,
            sq,
            sk,
            sv,
            ws,
            wo: store.add_uniform(format!("{prefix}.w_o"), 1, 2 * d, 2 * d, rng),
            bo: store.add_uniform(format!("{prefix}.b_o"), 1, 1, 2 * d, rng),
        }
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.cq, self.ck, self.cv, self.sq, self.sk, self.sv, self.ws, self.wo, self.bo,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct HyperedgePredictor {
    pub right: SideParams,
    pub left: SideParams,
    d: usize,
}

/// A candidate expressed as row indices into a representation matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub right: Vec<usize>,
    pub left: Vec<usize>,
}

impl Candidate {
    /// Maps each member through `row_of`; fails when a member has no
    /// representation.
    pub fn from_hyperedge(
        h: &DirectedHyperedge,
        row_of: impl Fn(NodeId) -> Option<usize>,
    ) -> Result<Self> {
        let map = |side: &[NodeId]| -> Result<Vec<usize>> {
            side.iter()
                .map(|&n| {
                    row_of(n).ok_or_else(|| {
                        Error::Shape(format!("no representation supplied for node {n}"))
                    })
                })
                .collect()
        };
        Ok(Candidate {
            right: map(h.right())?,
            left: map(h.left())?,
        })
    }

    fn side(&self, side: Side) -> &[usize] {
        match side {
            Side::Right => &self.right,
            Side::Left => &self.left,
        }
    }
}

/// Intermediate values of one side for a batch of candidates. Slots are the
/// flattened node occurrences; `slots[c]` are the rows of candidate `c`.
#[derive(Debug, Clone)]
pub struct SideOutput {
    pub score: Var,
    pub cross: Var,
    pub self_attn: Var,
    pub dynamic: Var,
    pub slots: Vec<Range<usize>>,
}

#[derive(Debug, Clone)]
pub struct ScoreOutput {
    /// `λ_h`, one row per candidate.
    pub scores: Var,
    pub right: SideOutput,
    pub left: SideOutput,
}

struct Projected {
    cq: Var,
    ck: Var,
    cv: Var,
    s: Var,
}

impl HyperedgePredictor {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut impl Rng) -> Self {
        HyperedgePredictor {
            right: SideParams::new(store, "pred.right", d, rng),
            left: SideParams::new(store, "pred.left", d, rng),
            d,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.right.ids().into_iter().chain(self.left.ids()).collect()
    }

    fn params(&self, side: Side) -> &SideParams {
        match side {
            Side::Right => &self.right,
            Side::Left => &self.left,
        }
    }

    fn project(&self, tape: &mut Tape, store: &ParamStore, reps: Var, side: Side) -> Projected {
        let p = self.params(side);
        let mut lin = |id, transposed: bool| {
            let w = tape.param(store, id);
            if transposed {
                tape.matmul_nt(reps, w)
            } else {
                tape.matmul(reps, w)
            }
        };
        Projected {
            cq: lin(p.cq, false),
            ck: lin(p.ck, false),
            cv: lin(p.cv, false),
            s: lin(p.ws, true),
        }
    }

    /// Scores every candidate against `reps` (`n x d`, one row per node).
    pub fn score(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        reps: Var,
        candidates: &[Candidate],
    ) -> Result<ScoreOutput> {
        let (n, d) = tape.shape(reps);
        if d != self.d {
            return Err(Error::Shape(format!("representations have width {d}, expected {}", self.d)));
        }
        if candidates.is_empty() {
            return Err(Error::Shape("no candidates to score".into()));
        }
        for c in candidates {
            if c.right.is_empty() || c.left.is_empty() {
                return Err(Error::InvalidHyperedge("empty side".into()));
            }
            if let Some(&bad) = c.right.iter().chain(&c.left).find(|&&i| i >= n) {
                return Err(Error::Shape(format!("candidate row {bad} outside {n} representations")));
            }
        }
        let pr = self.project(tape, store, reps, Side::Right);
        let pl = self.project(tape, store, reps, Side::Left);
        let right = self.side(tape, store, reps, candidates, Side::Right, &pr, &pl)?;
        let left = self.side(tape, store, reps, candidates, Side::Left, &pl, &pr)?;
        let scores = tape.add(right.score, left.score);
        Ok(ScoreOutput {
            scores,
            right,
            left,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn side(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        reps: Var,
        candidates: &[Candidate],
        side: Side,
        own: &Projected,
        other: &Projected,
    ) -> Result<SideOutput> {
        let other_side = match side {
            Side::Right => Side::Left,
            Side::Left => Side::Right,
        };
        let mut own_rows = Vec::new();
        let mut other_rows = Vec::new();
        let mut slots = Vec::with_capacity(candidates.len());
        let mut cross_lists = Vec::new();
        let mut self_lists = Vec::new();
        for c in candidates {
            let mine = c.side(side);
            let theirs = c.side(other_side);
            let start = own_rows.len();
            let other_start = other_rows.len();
            own_rows.extend_from_slice(mine);
            other_rows.extend_from_slice(theirs);
            let range = start..own_rows.len();
            let other_range: Vec<usize> = (other_start..other_rows.len()).collect();
            for s in range.clone() {
                cross_lists.push(other_range.clone());
                self_lists.push(range.clone().filter(|&j| j != s).collect());
            }
            slots.push(range);
        }

        let q = tape.gather_rows(own.cq, &own_rows);
        let k = tape.gather_rows(other.ck, &other_rows);
        let v = tape.gather_rows(other.cv, &other_rows);
        let cross = tape.attend_lists(q, k, v, &cross_lists, 1.0);
        let cross = tape.tanh(cross);

        let p = self.params(side);
        let base = tape.gather_rows(reps, &own_rows);
        let z = tape.add(base, cross);
        let mut lin = |id| {
            let w = tape.param(store, id);
            tape.matmul(z, w)
        };
        let (zq, zk, zv) = (lin(p.sq), lin(p.sk), lin(p.sv));
        let self_attn = tape.attend_lists(zq, zk, zv, &self_lists, 1.0);
        let self_attn = tape.tanh(self_attn);
        let dynamic = tape.add(self_attn, cross);

        let s = tape.gather_rows(own.s, &own_rows);
        let a = tape.sub(dynamic, s);
        let a = tape.square(a);
        let b = tape.sub(cross, s);
        let b = tape.square(b);
        let feat = tape.concat_cols(&[a, b]);
        let groups: Vec<Vec<usize>> = slots.iter().map(|r| r.clone().collect()).collect();
        let pooled = tape.mean_groups(feat, &groups);
        let wo = tape.param(store, p.wo);
        let bo = tape.param(store, p.bo);
        let score = tape.matmul_nt(pooled, wo);
        let score = tape.add_row(score, bo);
        Ok(SideOutput {
            score,
            cross,
            self_attn,
            dynamic,
            slots,
        })
    }

    /// Scores hyperedges whose members index `reps` directly by node id.
    pub fn score_hyperedges(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        reps: Var,
        hyperedges: &[&DirectedHyperedge],
    ) -> Result<Var> {
        let n = tape.shape(reps).0;
        let candidates = hyperedges
            .iter()
            .map(|h| Candidate::from_hyperedge(h, |v| (v.0 < n).then_some(v.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.score(tape, store, reps, &candidates)?.scores)
    }
}

/// `Σ y log σ(λ) + (1 − y) log(1 − σ(λ))` over candidates (always ≤ 0).
pub fn hyperedge_loglik(tape: &mut Tape, scores: Var, labels: &[f64]) -> Var {
    let nll = tape.bce_with_logits(scores, labels);
    tape.scale(nll, -1.0)
}

/// Scalar reference for a single set of candidate scores.
pub fn hyperedge_loglik_value(scores: &[f64], labels: &[f64]) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&x, &y)| y * crate::nn::tape::log_sigmoid(x) + (1.0 - y) * crate::nn::tape::log_sigmoid(-x))
        .sum()
}

impl ScoreOutput {
    /// Row values of `d^h` for candidate `c` on `side`, aligned with its
    /// member order.
    pub fn dynamic_rows<'t>(&self, tape: &'t Tape, c: usize, side: Side) -> Vec<&'t [f64]> {
        let out = match side {
            Side::Right => &self.right,
            Side::Left => &self.left,
        };
        let value: &'t Tensor = tape.value(out.dynamic);
        out.slots[c].clone().map(|r| value.row(r)).collect()
    }
}
