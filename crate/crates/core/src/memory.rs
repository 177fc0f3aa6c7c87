//! Per-node memory, recent-relation caches and temporal node
//! representations.
//!
//! Memory changes only at batch boundaries. Messages produced by one batch
//! are staged as constants and folded into memory by a GRU at the start of
//! the next batch, on that batch's tape, so the GRU and the time encoder
//! receive gradients while memory entering a batch stays constant.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{FourierEncoder, GruCell, MultiHeadAttention};
use crate::nn::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::stream::{DirectedHyperedge, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Right,
    Left,
}

/// A staged message. The time encoding `ψ(elapsed)` is materialized when
/// the message is consumed so that the encoder parameters stay trainable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub rep: Vec<f64>,
    pub dynamic: Vec<f64>,
    pub time: f64,
    /// `t − t^p` at the time the message was generated.
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub hyperedge: DirectedHyperedge,
    pub time: f64,
}

/// The `depth` most recent relations of every node, per side, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborCache {
    depth: usize,
    right: Vec<VecDeque<CacheEntry>>,
    left: Vec<VecDeque<CacheEntry>>,
}

impl NeighborCache {
    pub fn new(node_count: usize, depth: usize) -> Self {
        NeighborCache {
            depth,
            right: vec![VecDeque::new(); node_count],
            left: vec![VecDeque::new(); node_count],
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn entries(&self, node: NodeId, side: Side) -> &VecDeque<CacheEntry> {
        match side {
            Side::Right => &self.right[node.0],
            Side::Left => &self.left[node.0],
        }
    }

    /// Appends each relation to the right cache of its right nodes and the
    /// left cache of its left nodes, evicting the oldest beyond `depth`.
    pub fn update<'a>(&mut self, relations: impl IntoIterator<Item = (&'a DirectedHyperedge, f64)>) {
        let depth = self.depth;
        let push = |q: &mut VecDeque<CacheEntry>, h: &DirectedHyperedge, time: f64| {
            if depth == 0 {
                return;
            }
            if q.len() == depth {
                q.pop_front();
            }
            q.push_back(CacheEntry {
                hyperedge: h.clone(),
                time,
            });
        };
        for (h, time) in relations {
            for &n in h.right() {
                push(&mut self.right[n.0], h, time);
            }
            for &n in h.left() {
                push(&mut self.left[n.0], h, time);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    mem: Tensor,
    last_update: Vec<Option<f64>>,
    pending_right: Vec<Option<Message>>,
    pending_left: Vec<Option<Message>>,
    cache: NeighborCache,
    last_time: Option<f64>,
}

impl MemoryState {
    pub fn new(node_count: usize, d: usize, cache_depth: usize) -> Self {
        MemoryState {
            mem: Tensor::zeros(node_count, d),
            last_update: vec![None; node_count],
            pending_right: vec![None; node_count],
            pending_left: vec![None; node_count],
            cache: NeighborCache::new(node_count, cache_depth),
            last_time: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.mem.rows()
    }

    pub fn dim(&self) -> usize {
        self.mem.cols()
    }

    pub fn mem(&self) -> &Tensor {
        &self.mem
    }

    pub fn cache(&self) -> &NeighborCache {
        &self.cache
    }

    pub fn last_update(&self, node: NodeId) -> Option<f64> {
        self.last_update[node.0]
    }

    /// Time of the latest event folded into the state.
    pub fn last_time(&self) -> Option<f64> {
        self.last_time
    }

    pub fn pending(&self, node: NodeId, side: Side) -> Option<&Message> {
        match side {
            Side::Right => self.pending_right[node.0].as_ref(),
            Side::Left => self.pending_left[node.0].as_ref(),
        }
    }

    pub fn has_pending(&self) -> bool {
        self.pending_right.iter().chain(&self.pending_left).any(Option::is_some)
    }

    fn pending_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| self.pending_right[i].is_some() || self.pending_left[i].is_some())
            .collect()
    }

    /// Installs the memory produced by [`TemporalEncoder::memory_update`] and
    /// clears the consumed messages.
    pub fn commit(&mut self, update: &MemoryUpdate, mem: &Tensor) {
        assert_eq!(mem.shape(), self.mem.shape(), "memory shape changed");
        self.mem = mem.clone();
        for (&i, &t) in update.nodes.iter().zip(&update.times) {
            self.last_update[i] = Some(t);
            self.pending_right[i] = None;
            self.pending_left[i] = None;
        }
    }

    /// Stages messages for the next memory update, replacing any staged for
    /// the same node and side.
    pub fn stage(&mut self, messages: BTreeMap<(NodeId, Side), Message>) {
        for ((node, side), m) in messages {
            match side {
                Side::Right => self.pending_right[node.0] = Some(m),
                Side::Left => self.pending_left[node.0] = Some(m),
            }
        }
    }

    pub fn cache_update<'a>(
        &mut self,
        relations: impl IntoIterator<Item = (&'a DirectedHyperedge, f64)>,
    ) {
        self.cache.update(relations);
    }

    pub fn advance_time(&mut self, t: f64) {
        self.last_time = Some(self.last_time.map_or(t, |p| p.max(t)));
    }
}

/// One node occurrence in a batch, with the values its message carries.
#[derive(Debug, Clone)]
pub struct Occurrence<'a> {
    pub node: NodeId,
    pub side: Side,
    pub time: f64,
    pub hyperedge: &'a DirectedHyperedge,
    pub rep: &'a [f64],
    pub dynamic: &'a [f64],
}

/// Builds `[v ∥ d^h ∥ ψ(t − t^p)]` messages, keeping the latest occurrence
/// per node and side. Occurrences at the same time are ordered by hyperedge
/// so the result does not depend on batch order.
pub fn generate_messages(
    state: &MemoryState,
    occurrences: &[Occurrence<'_>],
) -> BTreeMap<(NodeId, Side), Message> {
    let mut latest: BTreeMap<(NodeId, Side), &Occurrence<'_>> = BTreeMap::new();
    for o in occurrences {
        let newer = match latest.get(&(o.node, o.side)) {
            None => true,
            Some(p) => o.time > p.time || (o.time == p.time && o.hyperedge > p.hyperedge),
        };
        if newer {
            latest.insert((o.node, o.side), o);
        }
    }
    latest
        .into_iter()
        .map(|(key, o)| {
            let elapsed = state.last_update(o.node).map_or(0.0, |tp| (o.time - tp).max(0.0));
            let m = Message {
                rep: o.rep.to_vec(),
                dynamic: o.dynamic.to_vec(),
                time: o.time,
                elapsed,
            };
            (key, m)
        })
        .collect()
}

/// Result of folding staged messages into memory on a tape.
#[derive(Debug, Clone)]
pub struct MemoryUpdate {
    /// The full memory matrix after the update.
    pub mem: Var,
    /// Updated rows, ascending.
    pub nodes: Vec<usize>,
    /// New `t^p` for each updated row.
    pub times: Vec<f64>,
}

/// Parameters of the representation pipeline: time encoder, memory GRU,
/// neighbourhood attention and the final combination layer.
#[derive(Debug, Clone)]
pub struct TemporalEncoder {
    pub fourier: FourierEncoder,
    pub gru: GruCell,
    pub attn_right: MultiHeadAttention,
    pub attn_left: MultiHeadAttention,
    pub w_hr: ParamId,
    pub w_hl: ParamId,
    pub w_s: ParamId,
    pub w_r: ParamId,
    pub w_l: ParamId,
    pub b_v: ParamId,
    d: usize,
}

impl TemporalEncoder {
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        heads: usize,
        t_max: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fourier = FourierEncoder::new(store, "time", d, t_max);
        let gru = GruCell::new(store, "memory.gru", 6 * d, d, rng);
        let attn_right = MultiHeadAttention::new(store, "repr.attn_r", 2 * d, 2 * d, d, heads, rng)?;
        let attn_left = MultiHeadAttention::new(store, "repr.attn_l", 2 * d, 2 * d, d, heads, rng)?;
        let mut square = |name: &str| store.add_uniform(name, d, d, d, rng);
        let w_hr = square("repr.w_hr");
        let w_hl = square("repr.w_hl");
        let w_s = square("repr.w_s");
        let w_r = square("repr.w_r");
        let w_l = square("repr.w_l");
        let b_v = store.add_uniform("repr.b_v", 1, d, d, rng);
        Ok(TemporalEncoder {
            fourier,
            gru,
            attn_right,
            attn_left,
            w_hr,
            w_hl,
            w_s,
            w_r,
            w_l,
            b_v,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Folds every staged message into memory: GRU input
    /// `[msg^r ∥ msg^ℓ]` with a missing side zero-filled. Rows without
    /// messages are copied unchanged.
    pub fn memory_update(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: &MemoryState,
    ) -> Result<MemoryUpdate> {
        let base = tape.leaf(state.mem.clone());
        let nodes = state.pending_nodes();
        if nodes.is_empty() {
            return Ok(MemoryUpdate {
                mem: base,
                nodes,
                times: Vec::new(),
            });
        }
        let d = self.d;
        let n = nodes.len();
        let mut parts = Vec::with_capacity(4);
        let mut times = vec![f64::NEG_INFINITY; n];
        for side in [Side::Right, Side::Left] {
            let mut content = Tensor::zeros(n, 2 * d);
            let mut mask = Tensor::zeros(n, d);
            let mut elapsed = vec![0.0; n];
            for (k, &i) in nodes.iter().enumerate() {
                if let Some(m) = state.pending(NodeId(i), side) {
                    if m.rep.len() != d || m.dynamic.len() != d {
                        return Err(Error::Shape(format!(
                            "message for node {i} has widths ({}, {}), expected {d}",
                            m.rep.len(),
                            m.dynamic.len()
                        )));
                    }
                    let row = content.row_mut(k);
                    row[..d].copy_from_slice(&m.rep);
                    row[d..].copy_from_slice(&m.dynamic);
                    mask.row_mut(k).fill(1.0);
                    elapsed[k] = m.elapsed;
                    times[k] = times[k].max(m.time);
                }
            }
            let content = tape.leaf(content);
            let psi = self.fourier.encode(tape, store, &elapsed)?;
            let mask = tape.leaf(mask);
            let psi = tape.mul(psi, mask);
            parts.push(content);
            parts.push(psi);
        }
        let x = tape.concat_cols(&parts);
        let h = tape.gather_rows(base, &nodes);
        let h = self.gru.forward(tape, store, x, h)?;
        let mem = tape.overwrite_rows(base, &nodes, h);
        Ok(MemoryUpdate { mem, nodes, times })
    }

    /// `(1/|h^r|) Σ W^r_h Mem_i + (1/|h^ℓ|) Σ W^ℓ_h Mem_j`, one row per
    /// hyperedge.
    pub fn hyperedge_repr(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mem: Var,
        hyperedges: &[&DirectedHyperedge],
    ) -> Result<Var> {
        if hyperedges.is_empty() {
            return Ok(tape.leaf(Tensor::zeros(0, self.d)));
        }
        let mut out = Vec::with_capacity(2);
        for (side, w) in [(Side::Right, self.w_hr), (Side::Left, self.w_hl)] {
            let mut rows = Vec::new();
            let mut groups = Vec::with_capacity(hyperedges.len());
            for h in hyperedges {
                let members = match side {
                    Side::Right => h.right(),
                    Side::Left => h.left(),
                };
                if members.is_empty() {
                    return Err(Error::InvalidHyperedge("empty side".into()));
                }
                groups.push((rows.len()..rows.len() + members.len()).collect());
                rows.extend(members.iter().map(|n| n.0));
            }
            let gathered = tape.gather_rows(mem, &rows);
            let w = tape.param(store, w);
            let projected = tape.matmul_nt(gathered, w);
            out.push(tape.mean_groups(projected, &groups));
        }
        Ok(tape.add(out[0], out[1]))
    }

    /// Attention of `[Mem_i ∥ ψ(0)]` over `[h(t_e) ∥ ψ(t − t_e)]` for the
    /// cached relations of each node on `side`; zero rows for empty caches.
    pub fn neighborhood_features(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mem: Var,
        state: &MemoryState,
        nodes: &[NodeId],
        side: Side,
        t: f64,
    ) -> Result<Var> {
        let mut entries: Vec<&CacheEntry> = Vec::new();
        let mut lists = Vec::with_capacity(nodes.len());
        for &n in nodes {
            let cached = state.cache.entries(n, side);
            lists.push((entries.len()..entries.len() + cached.len()).collect::<Vec<_>>());
            entries.extend(cached.iter());
        }
        if entries.is_empty() {
            return Ok(tape.leaf(Tensor::zeros(nodes.len(), self.d)));
        }
        let hs: Vec<&DirectedHyperedge> = entries.iter().map(|e| &e.hyperedge).collect();
        let reprs = self.hyperedge_repr(tape, store, mem, &hs)?;
        let ages: Vec<f64> = entries.iter().map(|e| t - e.time).collect();
        let psi = self.fourier.encode(tape, store, &ages)?;
        let keys = tape.concat_cols(&[reprs, psi]);

        let idx: Vec<usize> = nodes.iter().map(|n| n.0).collect();
        let own = tape.gather_rows(mem, &idx);
        let psi0 = self.fourier.encode(tape, store, &vec![0.0; nodes.len()])?;
        let queries = tape.concat_cols(&[own, psi0]);
        let attn = match side {
            Side::Right => &self.attn_right,
            Side::Left => &self.attn_left,
        };
        attn.forward_lists(tape, store, queries, keys, keys, &lists)
    }

    /// `v_i(t) = tanh(W_s Mem_i + W^r v^r_i(t) + W^ℓ v^ℓ_i(t) + b_v)`, one
    /// row per entry of `nodes`.
    pub fn node_representation(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mem: Var,
        state: &MemoryState,
        nodes: &[NodeId],
        t: f64,
    ) -> Result<Var> {
        if let Some(bad) = nodes.iter().find(|n| n.0 >= state.node_count()) {
            return Err(Error::NodeIdOverflow {
                id: bad.0 as u64,
                node_count: state.node_count(),
            });
        }
        let vr = self.neighborhood_features(tape, store, mem, state, nodes, Side::Right, t)?;
        let vl = self.neighborhood_features(tape, store, mem, state, nodes, Side::Left, t)?;
        let idx: Vec<usize> = nodes.iter().map(|n| n.0).collect();
        let own = tape.gather_rows(mem, &idx);
        let mut acc = None;
        for (x, w) in [(own, self.w_s), (vr, self.w_r), (vl, self.w_l)] {
            let w = tape.param(store, w);
            let y = tape.matmul_nt(x, w);
            acc = Some(match acc {
                None => y,
                Some(a) => tape.add(a, y),
            });
        }
        let b = tape.param(store, self.b_v);
        let pre = tape.add_row(acc.expect("three terms"), b);
        Ok(tape.tanh(pre))
    }
}
