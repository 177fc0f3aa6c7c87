//! The assembled model and its per-batch forward pass.
//!
//! A batch is scored entirely from the state left by earlier batches: staged
//! messages are folded into memory first, every needed node representation
//! is computed once at the time of the last processed event, and only then
//! are the batch's own hyperedges turned into new messages and cache
//! entries.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{
    adjacency_nll, negative_sample, non_event_sample, size_nll, AdjacencyHead, LossParts,
    SizeHead, TimeHead,
};
use crate::memory::{generate_messages, MemoryState, MemoryUpdate, Occurrence, Side, TemporalEncoder};
use crate::nn::{ParamStore, Tape, Tensor, Var};
use crate::predictor::{Candidate, HyperedgePredictor, ScoreOutput};
use crate::stream::{build_node_targets, DirectedHyperedge, EventStream, HyperedgeRef, NodeId, NodeTargets};

/// Everything that fixes the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub node_count: usize,
    pub kr_max: usize,
    pub kl_max: usize,
    pub d: usize,
    pub heads: usize,
    pub cache_depth: usize,
    pub s_t: f64,
    /// Time span used to initialize the time-encoder frequencies.
    pub t_max: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub dims: ModelDims,
    pub encoder: TemporalEncoder,
    pub predictor: HyperedgePredictor,
    pub time: TimeHead,
    pub adjacency: AdjacencyHead,
    pub size: SizeHead,
}

impl Model {
    /// Builds the model with freshly initialized parameters.
    pub fn new(dims: ModelDims, seed: u64) -> Result<(Model, ParamStore)> {
        if dims.d == 0 || dims.node_count == 0 || dims.kr_max == 0 || dims.kl_max == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = TemporalEncoder::new(&mut store, dims.d, dims.heads, dims.t_max, &mut rng)?;
        let predictor = HyperedgePredictor::new(&mut store, dims.d, &mut rng);
        let time = TimeHead::new(&mut store, dims.d, dims.s_t, &mut rng)?;
        let adjacency = AdjacencyHead::new(&mut store, dims.d, &mut rng);
        let size = SizeHead::new(&mut store, dims.d, dims.kr_max, dims.kl_max, &mut rng);
        let model = Model {
            dims,
            encoder,
            predictor,
            time,
            adjacency,
            size,
        };
        Ok((model, store))
    }

    pub fn new_state(&self) -> MemoryState {
        MemoryState::new(self.dims.node_count, self.dims.d, self.dims.cache_depth)
    }
}

/// Event-level supervision, carried by the first hyperedge of each event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTerms {
    /// Gap to the previous event; `None` for the first event of a stream.
    pub gap: Option<f64>,
    pub targets: BTreeMap<NodeId, NodeTargets>,
    /// Survival sample for the time term, disjoint from the event nodes.
    pub non_event: Vec<NodeId>,
}

/// One true hyperedge with its pre-drawn samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub time: f64,
    pub hyperedge: DirectedHyperedge,
    pub negatives: Vec<DirectedHyperedge>,
    pub event: Option<EventTerms>,
}

/// Turns a run of flattened hyperedges into batch items. `previous` is the
/// time of the event preceding `stream`'s first event, if any.
pub fn prepare_items(
    stream: &EventStream,
    refs: &[HyperedgeRef<'_>],
    previous: Option<f64>,
    negatives: usize,
    rng: &mut impl Rng,
) -> Result<Vec<BatchItem>> {
    let events = stream.events();
    refs.iter()
        .map(|r| {
            let negs = negative_sample(
                r.hyperedge,
                negatives,
                stream.node_count(),
                stream.kr_max(),
                stream.kl_max(),
                rng,
            )?;
            let event = if r.opens_event {
                let e = &events[r.event];
                let targets = build_node_targets(e, stream.node_count(), stream.kr_max(), stream.kl_max())?;
                let nodes: Vec<NodeId> = targets.keys().copied().collect();
                let non_event = non_event_sample(&nodes, nodes.len(), stream.node_count(), rng);
                let prev = if r.event == 0 { previous } else { Some(events[r.event - 1].time) };
                Some(EventTerms {
                    gap: prev.map(|p| e.time - p),
                    targets,
                    non_event,
                })
            } else {
                None
            };
            Ok(BatchItem {
                time: r.time,
                hyperedge: r.hyperedge.clone(),
                negatives: negs,
                event,
            })
        })
        .collect()
}

/// Rows of one event node in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventNode {
    pub item: usize,
    pub node: NodeId,
}

/// Tape handles and bookkeeping for one batch.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub loss: Var,
    pub parts: LossParts,
    pub update: MemoryUpdate,
    /// Nodes with a representation, ascending; `reps` rows follow this order.
    pub nodes: Vec<NodeId>,
    pub reps: Var,
    pub scores: ScoreOutput,
    /// `first_candidate[k]` is the true hyperedge of item `k`; its negatives
    /// follow it.
    pub first_candidate: Vec<usize>,
    /// Event nodes in row order of `mu_event`, `theta_*` and `kappa_*`.
    pub event_nodes: Vec<EventNode>,
    pub mu_event: Option<Var>,
    pub theta_right: Option<Var>,
    pub theta_left: Option<Var>,
    pub kappa_right: Option<Var>,
    pub kappa_left: Option<Var>,
    /// Time term rows: `(event-node row, gap)` pairs among `event_nodes`.
    pub timed_rows: Vec<(usize, f64)>,
}

impl Model {
    /// Scores a batch and builds all four losses (summed over the batch).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &MemoryState,
        items: &[BatchItem],
    ) -> Result<BatchForward> {
        if items.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let update = self.encoder.memory_update(tape, store, state)?;
        let mem = update.mem;
        let t_ref = match state.last_time() {
            Some(t) => t,
            None => items.iter().map(|i| i.time).fold(f64::INFINITY, f64::min),
        };

        let mut needed = BTreeSet::new();
        for it in items {
            needed.extend(it.hyperedge.nodes());
            for n in &it.negatives {
                needed.extend(n.nodes());
            }
            if let Some(ev) = &it.event {
                needed.extend(ev.targets.keys().copied());
                needed.extend(ev.non_event.iter().copied());
            }
        }
        let nodes: Vec<NodeId> = needed.into_iter().collect();
        let mut row_of = vec![usize::MAX; self.dims.node_count];
        for (r, n) in nodes.iter().enumerate() {
            if n.0 >= self.dims.node_count {
                return Err(Error::NodeIdOverflow {
                    id: n.0 as u64,
                    node_count: self.dims.node_count,
                });
            }
            row_of[n.0] = r;
        }
        let reps = self.encoder.node_representation(tape, store, mem, state, &nodes, t_ref)?;

        // Hyperedge term.
        let lookup = |n: NodeId| Some(row_of[n.0]);
        let mut candidates = Vec::new();
        let mut labels = Vec::new();
        let mut first_candidate = Vec::with_capacity(items.len());
        for it in items {
            first_candidate.push(candidates.len());
            candidates.push(Candidate::from_hyperedge(&it.hyperedge, lookup)?);
            labels.push(1.0);
            for n in &it.negatives {
                candidates.push(Candidate::from_hyperedge(n, lookup)?);
                labels.push(0.0);
            }
        }
        let scores = self.predictor.score(tape, store, reps, &candidates)?;
        let hyper = tape.bce_with_logits(scores.scores, &labels);

        // Event-level terms.
        let mut event_nodes = Vec::new();
        let mut timed_rows = Vec::new();
        let mut non_event_rows = Vec::new();
        let mut non_event_gaps = Vec::new();
        let (kr, kl, nv) = (self.dims.kr_max, self.dims.kl_max, self.dims.node_count);
        let mut adj_r = Vec::new();
        let mut adj_l = Vec::new();
        let mut size_r = Vec::new();
        let mut size_l = Vec::new();
        for (k, it) in items.iter().enumerate() {
            let Some(ev) = &it.event else { continue };
            for (&node, tg) in &ev.targets {
                if tg.adj_right.len() != nv || tg.size_right.len() != kr || tg.size_left.len() != kl {
                    return Err(Error::Shape("targets do not match the model dimensions".into()));
                }
                if let Some(gap) = ev.gap {
                    timed_rows.push((event_nodes.len(), gap));
                }
                event_nodes.push(EventNode { item: k, node });
                let bits = |v: &[bool]| v.iter().map(|&b| f64::from(u8::from(b))).collect::<Vec<_>>();
                adj_r.extend(bits(&tg.adj_right));
                adj_l.extend(bits(&tg.adj_left));
                size_r.extend(bits(&tg.size_right));
                size_l.extend(bits(&tg.size_left));
            }
            if let Some(gap) = ev.gap {
                for &n in &ev.non_event {
                    non_event_rows.push(row_of[n.0]);
                    non_event_gaps.push(gap);
                }
            }
        }

        let zero = |tape: &mut Tape| tape.leaf(Tensor::scalar(0.0));
        let mut out_mu = None;
        let (mut theta_right, mut theta_left, mut kappa_right, mut kappa_left) = (None, None, None, None);
        let (time_loss, size_loss, adj_loss) = if event_nodes.is_empty() {
            (zero(tape), zero(tape), zero(tape))
        } else {
            let ev_rows: Vec<usize> = event_nodes.iter().map(|e| row_of[e.node.0]).collect();
            let ev_reps = tape.gather_rows(reps, &ev_rows);

            let mu_all = self.time.mu(tape, store, ev_reps)?;
            out_mu = Some(mu_all);
            let mu_event = if timed_rows.is_empty() {
                None
            } else {
                let idx: Vec<usize> = timed_rows.iter().map(|&(r, _)| r).collect();
                Some(tape.gather_rows(mu_all, &idx))
            };
            let event_gaps: Vec<f64> = timed_rows.iter().map(|&(_, g)| g).collect();
            let mu_non = if non_event_rows.is_empty() {
                None
            } else {
                let ne_reps = tape.gather_rows(reps, &non_event_rows);
                Some(self.time.mu(tape, store, ne_reps)?)
            };
            let time_loss = self
                .time
                .node_event_nll(tape, mu_event, &event_gaps, mu_non, &non_event_gaps)?;

            let tr = self.adjacency.logits(tape, store, ev_reps, mem, Side::Right);
            let tl = self.adjacency.logits(tape, store, ev_reps, mem, Side::Left);
            let ar = adjacency_nll(tape, tr, &adj_r);
            let al = adjacency_nll(tape, tl, &adj_l);
            let adj_loss = tape.add(ar, al);

            let kr_logits = self.size.logits(tape, store, ev_reps, Side::Right)?;
            let kl_logits = self.size.logits(tape, store, ev_reps, Side::Left)?;
            let sr = size_nll(tape, kr_logits, &size_r);
            let sl = size_nll(tape, kl_logits, &size_l);
            let size_loss = tape.add(sr, sl);

            theta_right = Some(tr);
            theta_left = Some(tl);
            kappa_right = Some(kr_logits);
            kappa_left = Some(kl_logits);
            (time_loss, size_loss, adj_loss)
        };

        let parts = LossParts {
            time: tape.value(time_loss).item(),
            size: tape.value(size_loss).item(),
            adjacency: tape.value(adj_loss).item(),
            hyperedge: tape.value(hyper).item(),
        };
        let loss = crate::heads::total_nll(tape, time_loss, size_loss, adj_loss, hyper);
        Ok(BatchForward {
            loss,
            parts,
            update,
            nodes,
            reps,
            scores,
            first_candidate,
            event_nodes,
            mu_event: out_mu,
            theta_right,
            theta_left,
            kappa_right,
            kappa_left,
            timed_rows,
        })
    }

    /// Installs the batch's memory update, stages its messages (built from
    /// the true hyperedges' representations and dynamic hyperedge
    /// representations) and records its relations in the caches.
    pub fn finish_batch(
        &self,
        tape: &Tape,
        fwd: &BatchForward,
        state: &mut MemoryState,
        items: &[BatchItem],
    ) {
        state.commit(&fwd.update, tape.value(fwd.update.mem));
        let reps = tape.value(fwd.reps);
        let row = |n: NodeId| fwd.nodes.binary_search(&n).expect("member has a representation");
        let mut occurrences = Vec::new();
        let dynamic: Vec<[Vec<&[f64]>; 2]> = items
            .iter()
            .enumerate()
            .map(|(k, _)| {
                let c = fwd.first_candidate[k];
                [
                    fwd.scores.dynamic_rows(tape, c, Side::Right),
                    fwd.scores.dynamic_rows(tape, c, Side::Left),
                ]
            })
            .collect();
        for (k, it) in items.iter().enumerate() {
            for (s, side) in [Side::Right, Side::Left].into_iter().enumerate() {
                let members = match side {
                    Side::Right => it.hyperedge.right(),
                    Side::Left => it.hyperedge.left(),
                };
                for (m, &node) in members.iter().enumerate() {
                    occurrences.push(Occurrence {
                        node,
                        side,
                        time: it.time,
                        hyperedge: &it.hyperedge,
                        rep: reps.row(row(node)),
                        dynamic: dynamic[k][s][m],
                    });
                }
            }
        }
        let messages = generate_messages(state, &occurrences);
        state.stage(messages);
        state.cache_update(items.iter().map(|it| (&it.hyperedge, it.time)));
        if let Some(t) = items.iter().map(|i| i.time).reduce(f64::max) {
            state.advance_time(t);
        }
    }

    /// Folds any staged messages into memory without a batch.
    pub fn flush(&self, store: &ParamStore, state: &mut MemoryState) -> Result<()> {
        if !state.has_pending() {
            return Ok(());
        }
        let mut tape = Tape::new();
        let update = self.encoder.memory_update(&mut tape, store, state)?;
        state.commit(&update, tape.value(update.mem));
        Ok(())
    }
}
