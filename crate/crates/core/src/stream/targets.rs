use std::collections::BTreeMap;

use super::{NodeId, TimedEvent};
use crate::error::{Error, Result};

/// Per-node prediction targets for one event, defined for each node on the
/// right side of some hyperedge of the event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeTargets {
    /// `adj_right[j]`: `j ≠ i` shares a right side with `i`.
    pub adj_right: Vec<bool>,
    /// `adj_left[j]`: `j` is on the left of a hyperedge with `i` on the right.
    pub adj_left: Vec<bool>,
    /// `size_right[k-1]`: `i` is on the right of a hyperedge with `|right| = k`.
    pub size_right: Vec<bool>,
    /// `size_left[k-1]`: `i` is on the right of a hyperedge with `|left| = k`.
    pub size_left: Vec<bool>,
}

pub fn build_node_targets(
    event: &TimedEvent,
    node_count: usize,
    kr_max: usize,
    kl_max: usize,
) -> Result<BTreeMap<NodeId, NodeTargets>> {
    let mut out: BTreeMap<NodeId, NodeTargets> = BTreeMap::new();
    for h in &event.hyperedges {
        if let Some(bad) = h.nodes().find(|n| n.0 >= node_count) {
            return Err(Error::NodeIdOverflow {
                id: bad.0 as u64,
                node_count,
            });
        }
        let (kr, kl) = (h.right().len(), h.left().len());
        if kr > kr_max || kl > kl_max {
            return Err(Error::InvalidHyperedge(format!(
                "sizes ({kr}, {kl}) exceed bounds ({kr_max}, {kl_max})"
            )));
        }
        for &i in h.right() {
            let t = out.entry(i).or_insert_with(|| NodeTargets {
                adj_right: vec![false; node_count],
                adj_left: vec![false; node_count],
                size_right: vec![false; kr_max],
                size_left: vec![false; kl_max],
            });
            for &j in h.right() {
                if j != i {
                    t.adj_right[j.0] = true;
                }
            }
            for &j in h.left() {
                t.adj_left[j.0] = true;
            }
            t.size_right[kr - 1] = true;
            t.size_left[kl - 1] = true;
        }
    }
    Ok(out)
}
