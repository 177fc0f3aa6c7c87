//! Dataset summary statistics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EventStream, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub nodes: usize,
    pub hyperedges: usize,
    pub events: usize,
    /// Distinct right-side node sets.
    pub unique_right: usize,
    /// Distinct left-side node sets.
    pub unique_left: usize,
    pub time_span: f64,
    pub gap_mean: Option<f64>,
    pub gap_max: Option<f64>,
    pub gap_min: Option<f64>,
    /// Largest number of hyperedges sharing one timestamp.
    pub max_concurrency: usize,
}

impl StreamStats {
    pub fn of(stream: &EventStream) -> Self {
        let mut right: BTreeSet<&[NodeId]> = BTreeSet::new();
        let mut left: BTreeSet<&[NodeId]> = BTreeSet::new();
        for e in stream.events() {
            for h in &e.hyperedges {
                right.insert(h.right());
                left.insert(h.left());
            }
        }
        let gaps = stream.gaps();
        StreamStats {
            nodes: stream.node_count(),
            hyperedges: stream.hyperedge_count(),
            events: stream.events().len(),
            unique_right: right.len(),
            unique_left: left.len(),
            time_span: stream.time_span(),
            gap_mean: stream.mean_gap(),
            gap_max: gaps.iter().copied().reduce(f64::max),
            gap_min: gaps.iter().copied().reduce(f64::min),
            max_concurrency: stream.events().iter().map(|e| e.hyperedges.len()).max().unwrap_or(0),
        }
    }

    /// Two-column text table.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x}"));
        let rows = [
            ("nodes", self.nodes.to_string()),
            ("hyperedges", self.hyperedges.to_string()),
            ("events", self.events.to_string()),
            ("unique right sets", self.unique_right.to_string()),
            ("unique left sets", self.unique_left.to_string()),
            ("time span", format!("{}", self.time_span)),
            ("mean gap", opt(self.gap_mean)),
            ("max gap", opt(self.gap_max)),
            ("min gap", opt(self.gap_min)),
            ("max concurrency", self.max_concurrency.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k:<18} {v}\n")).collect()
    }
}
