//! Next-event forecasts from a warmed memory state.
//!
//! Every node gets a waiting-time estimate `exp(μ)`. The nodes with the
//! shortest estimates are flagged as the next event's participants and each
//! proposes one candidate hyperedge, scored by the predictor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{candidate_for_node, predict_event_time, top_k};
use crate::memory::{MemoryState, Side};
use crate::model::Model;
use crate::nn::tape::sigmoid;
use crate::nn::{ParamStore, Tape};
use crate::stream::{DirectedHyperedge, EventStream, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeForecast {
    pub node: usize,
    /// Predicted time to the node's next event.
    pub delta_t: f64,
    /// Candidate proposed by a flagged node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<Vec<usize>>,
    /// `σ(λ)` of the candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl NodeForecast {
    pub fn candidate(&self) -> Option<Result<DirectedHyperedge>> {
        match (&self.right, &self.left) {
            (Some(r), Some(l)) => Some(DirectedHyperedge::from_indices(r, l)),
            _ => None,
        }
    }
}

/// Number of nodes flagged per forecast: the mean count of distinct
/// right-side nodes per event, rounded up.
pub fn flagged_count(stream: &EventStream) -> usize {
    let events = stream.events();
    if events.is_empty() {
        return 1;
    }
    let total: usize = events.iter().map(|e| e.right_nodes().len()).sum();
    total.div_ceil(events.len()).max(1)
}

/// Forecasts the event following the state's last processed event. Staged
/// messages are folded into `state` first.
pub fn forecast(
    model: &Model,
    store: &ParamStore,
    state: &mut MemoryState,
    flagged: usize,
) -> Result<Vec<NodeForecast>> {
    let t = state
        .last_time()
        .ok_or_else(|| Error::EmptySplit("forecasting needs at least one replayed event".into()))?;
    model.flush(store, state)?;
    let n = state.node_count();
    let nodes: Vec<NodeId> = (0..n).map(NodeId).collect();
    let mut tape = Tape::new();
    let mem = tape.leaf(state.mem().clone());
    let reps = model.encoder.node_representation(&mut tape, store, mem, state, &nodes, t)?;
    let mu = model.time.mu(&mut tape, store, reps)?;
    let theta_r = model.adjacency.logits(&mut tape, store, reps, mem, Side::Right);
    let theta_l = model.adjacency.logits(&mut tape, store, reps, mem, Side::Left);
    let kappa_r = model.size.logits(&mut tape, store, reps, Side::Right)?;
    let kappa_l = model.size.logits(&mut tape, store, reps, Side::Left)?;

    let delta: Vec<f64> = (0..n).map(|i| predict_event_time(tape.value(mu).get(i, 0))).collect();
    let neg_delta: Vec<f64> = delta.iter().map(|d| -d).collect();
    let flagged = top_k(&neg_delta, flagged.min(n), |_| false);

    let mut candidates = Vec::with_capacity(flagged.len());
    for &i in &flagged {
        let h = candidate_for_node(
            NodeId(i),
            tape.value(theta_r).row(i),
            tape.value(theta_l).row(i),
            tape.value(kappa_r).row(i),
            tape.value(kappa_l).row(i),
        )?;
        candidates.push((i, h));
    }
    let refs: Vec<&DirectedHyperedge> = candidates.iter().map(|(_, h)| h).collect();
    let scores = if refs.is_empty() {
        Vec::new()
    } else {
        let s = model.predictor.score_hyperedges(&mut tape, store, reps, &refs)?;
        tape.value(s).data().to_vec()
    };

    let mut out: Vec<NodeForecast> = delta
        .iter()
        .enumerate()
        .map(|(i, &d)| NodeForecast {
            node: i,
            delta_t: d,
            right: None,
            left: None,
            score: None,
        })
        .collect();
    for ((i, h), s) in candidates.into_iter().zip(scores) {
        let f = &mut out[i];
        f.right = Some(h.right().iter().map(|n| n.0).collect());
        f.left = Some(h.left().iter().map(|n| n.0).collect());
        f.score = Some(sigmoid(s));
    }
    Ok(out)
}

pub fn to_jsonl(forecasts: &[NodeForecast]) -> Result<String> {
    let mut s = String::new();
    for f in forecasts {
        s.push_str(&serde_json::to_string(f)?);
        s.push('\n');
    }
    Ok(s)
}
