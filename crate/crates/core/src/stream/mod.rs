//! Temporal directed hypergraphs: events, ingestion, targets, splitting and a
//! planted synthetic generator.

mod jsonl;
mod split;
mod stats;
mod synth;
mod targets;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{header_path, parse_jsonl, parse_jsonl_str, to_jsonl_string, write_jsonl, StreamHeader};
pub use split::{batch_iter, chronological_split, flatten, HyperedgeRef};
pub use stats::StreamStats;
pub use synth::{generate_synthetic, SynthConfig};
pub use targets::{build_node_targets, NodeTargets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A relation from the `right` node set to the `left` node set. Both sides
/// are kept sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirectedHyperedge {
    right: Vec<NodeId>,
    left: Vec<NodeId>,
}

fn canonical(side: impl IntoIterator<Item = NodeId>) -> Vec<NodeId> {
    side.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

impl DirectedHyperedge {
    /// Builds a hyperedge, dropping duplicate members. Fails on an empty
    /// side or when both sides hold the same node set.
    pub fn new(
        right: impl IntoIterator<Item = NodeId>,
        left: impl IntoIterator<Item = NodeId>,
    ) -> Result<Self> {
        let h = DirectedHyperedge {
            right: canonical(right),
            left: canonical(left),
        };
        if h.right.is_empty() || h.left.is_empty() {
            return Err(Error::InvalidHyperedge("empty side".into()));
        }
        if h.right == h.left {
            return Err(Error::InvalidHyperedge(
                "right and left sides hold the same node set".into(),
            ));
        }
        Ok(h)
    }

    pub fn from_indices(right: &[usize], left: &[usize]) -> Result<Self> {
        Self::new(
            right.iter().copied().map(NodeId),
            left.iter().copied().map(NodeId),
        )
    }

    pub fn right(&self) -> &[NodeId] {
        &self.right
    }

    pub fn left(&self) -> &[NodeId] {
        &self.left
    }

    /// `k = |right| + |left|`.
    pub fn size(&self) -> usize {
        self.right.len() + self.left.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.right.iter().chain(&self.left).copied()
    }

    pub fn max_node(&self) -> NodeId {
        self.nodes().max().expect("hyperedge sides are non-empty")
    }

    /// The hyperedge with its sides exchanged.
    pub fn reversed(&self) -> Self {
        DirectedHyperedge {
            right: self.left.clone(),
            left: self.right.clone(),
        }
    }
}

/// The concurrent hyperedges observed at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub time: f64,
    pub hyperedges: Vec<DirectedHyperedge>,
}

impl TimedEvent {
    /// Union of the right sides of all hyperedges, sorted.
    pub fn right_nodes(&self) -> Vec<NodeId> {
        canonical(self.hyperedges.iter().flat_map(|h| h.right.iter().copied()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    node_count: usize,
    kr_max: usize,
    kl_max: usize,
    events: Vec<TimedEvent>,
}

impl EventStream {
    /// Validates ordering, node range and size bounds.
    pub fn new(
        node_count: usize,
        kr_max: usize,
        kl_max: usize,
        events: Vec<TimedEvent>,
    ) -> Result<Self> {
        if kr_max == 0 || kl_max == 0 {
            return Err(Error::InvalidStream("size bounds must be positive".into()));
        }
        let mut previous: Option<f64> = None;
        for (n, e) in events.iter().enumerate() {
            if !(e.time.is_finite() && e.time >= 0.0) {
                return Err(Error::InvalidStream(format!(
                    "event {n}: time {} is not a finite non-negative number",
                    e.time
                )));
            }
            if let Some(p) = previous {
                if e.time <= p {
                    return Err(Error::InvalidStream(format!(
                        "event {n}: time {} does not increase past {p}",
                        e.time
                    )));
                }
            }
            previous = Some(e.time);
            if e.hyperedges.is_empty() {
                return Err(Error::InvalidStream(format!("event {n} has no hyperedges")));
            }
            for h in &e.hyperedges {
                let top = h.max_node();
                if top.0 >= node_count {
                    return Err(Error::NodeIdOverflow {
                        id: top.0 as u64,
                        node_count,
                    });
                }
                if h.right.len() > kr_max || h.left.len() > kl_max {
                    return Err(Error::InvalidStream(format!(
                        "event {n}: hyperedge sizes ({}, {}) exceed bounds ({kr_max}, {kl_max})",
                        h.right.len(),
                        h.left.len()
                    )));
                }
            }
        }
        Ok(EventStream {
            node_count,
            kr_max,
            kl_max,
            events,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn kr_max(&self) -> usize {
        self.kr_max
    }

    pub fn kl_max(&self) -> usize {
        self.kl_max
    }

    pub fn events(&self) -> &[TimedEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn hyperedge_count(&self) -> usize {
        self.events.iter().map(|e| e.hyperedges.len()).sum()
    }

    /// Time between the first and last event.
    pub fn time_span(&self) -> f64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    /// Durations between consecutive events.
    pub fn gaps(&self) -> Vec<f64> {
        self.events
            .windows(2)
            .map(|w| w[1].time - w[0].time)
            .collect()
    }

    pub fn mean_gap(&self) -> Option<f64> {
        let gaps = self.gaps();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    /// The stream with every time (relative to the first event) divided by
    /// `scale`; the first event keeps its time.
    pub fn rescaled(&self, scale: f64) -> Result<EventStream> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!("time scale {scale} must be positive")));
        }
        let origin = self.events.first().map_or(0.0, |e| e.time);
        let events = self
            .events
            .iter()
            .map(|e| TimedEvent {
                time: origin + (e.time - origin) / scale,
                hyperedges: e.hyperedges.clone(),
            })
            .collect();
        EventStream::new(self.node_count, self.kr_max, self.kl_max, events)
    }

    /// Rescales so the mean inter-event duration is one.
    pub fn normalized_by_mean_gap(&self) -> Result<EventStream> {
        match self.mean_gap() {
            Some(g) if g > 0.0 => self.rescaled(g),
            _ => Ok(self.clone()),
        }
    }

    /// A stream over the same node set and bounds holding `events`.
    pub fn with_events(&self, events: Vec<TimedEvent>) -> Result<EventStream> {
        EventStream::new(self.node_count, self.kr_max, self.kl_max, events)
    }

    /// Stream holding events `range` of this one.
    pub fn slice(&self, range: std::ops::Range<usize>) -> EventStream {
        EventStream {
            node_count: self.node_count,
            kr_max: self.kr_max,
            kl_max: self.kl_max,
            events: self.events[range].to_vec(),
        }
    }

    /// Concatenation of streams sharing node count and bounds.
    pub fn concat(parts: &[&EventStream]) -> Result<EventStream> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidStream("nothing to concatenate".into()))?;
        let events = parts.iter().flat_map(|s| s.events.iter().cloned()).collect();
        EventStream::new(first.node_count, first.kr_max, first.kl_max, events)
    }
}
