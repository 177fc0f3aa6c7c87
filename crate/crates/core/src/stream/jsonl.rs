//! JSON Lines dataset format: one hyperedge per line,
//! `{"t": <time>, "right": [ids], "left": [ids]}`. Lines sharing a time are
//! merged into one event.
//!
//! An optional sidecar `<stem>.header.json` holding
//! `{"node_count": N, "kr_max": a, "kl_max": b}` fixes the node range and size
//! caps. Without it node ids are compacted to `0..|V|` in ascending order and
//! the caps are the largest observed sizes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DirectedHyperedge, EventStream, NodeId, TimedEvent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamHeader {
    pub node_count: usize,
    pub kr_max: usize,
    pub kl_max: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    t: f64,
    right: Vec<u64>,
    left: Vec<u64>,
}

/// `data.jsonl` → `data.header.json`.
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("header.json")
}

pub fn parse_jsonl(path: &Path) -> Result<EventStream> {
    let text = fs::read_to_string(path)?;
    let hp = header_path(path);
    let header = if hp.exists() {
        Some(serde_json::from_str(&fs::read_to_string(hp)?)?)
    } else {
        None
    };
    parse_jsonl_str(&text, header)
}

pub fn parse_jsonl_str(text: &str, header: Option<StreamHeader>) -> Result<EventStream> {
    let mut raw: Vec<(usize, Line)> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !(parsed.t.is_finite() && parsed.t >= 0.0) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("time {} is not a finite non-negative number", parsed.t),
            });
        }
        if parsed.right.is_empty() || parsed.left.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty side".into(),
            });
        }
        if let Some((_, prev)) = raw.last() {
            if parsed.t < prev.t {
                return Err(Error::NonMonotoneTime {
                    line: line_no,
                    time: parsed.t,
                    previous: prev.t,
                });
            }
        }
        raw.push((line_no, parsed));
    }
    if raw.is_empty() {
        return Err(Error::InvalidStream("dataset holds no hyperedges".into()));
    }

    let remap: Option<BTreeMap<u64, usize>> = match header {
        Some(_) => None,
        None => {
            let ids: std::collections::BTreeSet<u64> = raw
                .iter()
                .flat_map(|(_, l)| l.right.iter().chain(&l.left).copied())
                .collect();
            Some(ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect())
        }
    };
    let node_count = match (&header, &remap) {
        (Some(h), _) => h.node_count,
        (None, Some(m)) => m.len(),
        (None, None) => unreachable!(),
    };
    let to_node = |id: u64| -> Result<NodeId> {
        match &remap {
            Some(m) => Ok(NodeId(m[&id])),
            None if (id as u128) < node_count as u128 => Ok(NodeId(id as usize)),
            None => Err(Error::NodeIdOverflow { id, node_count }),
        }
    };

    let mut events: Vec<TimedEvent> = Vec::new();
    let (mut kr, mut kl) = (0, 0);
    for (line_no, l) in raw {
        let right = l.right.iter().map(|&i| to_node(i)).collect::<Result<Vec<_>>>()?;
        let left = l.left.iter().map(|&i| to_node(i)).collect::<Result<Vec<_>>>()?;
        let h = DirectedHyperedge::new(right, left).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        kr = kr.max(h.right().len());
        kl = kl.max(h.left().len());
        match events.last_mut() {
            Some(e) if e.time == l.t => e.hyperedges.push(h),
            _ => events.push(TimedEvent {
                time: l.t,
                hyperedges: vec![h],
            }),
        }
    }
    let (kr_max, kl_max) = match header {
        Some(h) => (h.kr_max, h.kl_max),
        None => (kr, kl),
    };
    EventStream::new(node_count, kr_max, kl_max, events)
}

/// Serializes `stream` as JSON Lines (no header).
pub fn to_jsonl_string(stream: &EventStream) -> String {
    let mut out = String::new();
    for e in stream.events() {
        for h in &e.hyperedges {
            let line = Line {
                t: e.time,
                right: h.right().iter().map(|n| n.0 as u64).collect(),
                left: h.left().iter().map(|n| n.0 as u64).collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
            out.push('\n');
        }
    }
    out
}

/// Writes the dataset and its header sidecar, so that [`parse_jsonl`] gives
/// back an identical stream.
pub fn write_jsonl(stream: &EventStream, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_jsonl_string(stream).as_bytes())?;
    let header = StreamHeader {
        node_count: stream.node_count(),
        kr_max: stream.kr_max(),
        kl_max: stream.kl_max(),
    };
    fs::write(header_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}
