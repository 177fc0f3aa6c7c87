use super::{DirectedHyperedge, EventStream};
use crate::error::{Error, Result};

/// Splits by hyperedge count. An event goes to the split in which its first
/// hyperedge falls, so an event straddling a boundary stays whole in the
/// earlier split.
pub fn chronological_split(
    stream: &EventStream,
    fractions: [f64; 3],
) -> Result<(EventStream, EventStream, EventStream)> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let total = stream.hyperedge_count() as f64;
    let b1 = fractions[0] * total;
    let b2 = (fractions[0] + fractions[1]) * total;
    let mut cuts = [0usize; 2];
    let mut seen = 0usize;
    for (n, e) in stream.events().iter().enumerate() {
        let start = seen as f64;
        if start < b1 {
            cuts[0] = n + 1;
        }
        if start < b2 {
            cuts[1] = n + 1;
        }
        seen += e.hyperedges.len();
    }
    let n = stream.events().len();
    let parts = [0..cuts[0], cuts[0]..cuts[1], cuts[1]..n];
    for (name, r) in ["train", "validation", "test"].iter().zip(&parts) {
        if r.is_empty() {
            return Err(Error::EmptySplit(format!("{name} split holds no events")));
        }
    }
    let [a, b, c] = parts;
    Ok((stream.slice(a), stream.slice(b), stream.slice(c)))
}

/// One hyperedge of a flattened stream, tagged with its event.
#[derive(Debug, Clone, Copy)]
pub struct HyperedgeRef<'a> {
    pub event: usize,
    pub time: f64,
    /// The first hyperedge of its event; event-level terms attach here.
    pub opens_event: bool,
    pub hyperedge: &'a DirectedHyperedge,
}

pub fn flatten(stream: &EventStream) -> Vec<HyperedgeRef<'_>> {
    stream
        .events()
        .iter()
        .enumerate()
        .flat_map(|(n, e)| {
            e.hyperedges.iter().enumerate().map(move |(m, h)| HyperedgeRef {
                event: n,
                time: e.time,
                opens_event: m == 0,
                hyperedge: h,
            })
        })
        .collect()
}

/// Consecutive runs of `batch_size` hyperedges in stream order; the last
/// batch may be short.
pub fn batch_iter(
    stream: &EventStream,
    batch_size: usize,
) -> Result<impl Iterator<Item = Vec<HyperedgeRef<'_>>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let flat = flatten(stream);
    let batches: Vec<Vec<HyperedgeRef<'_>>> =
        flat.chunks(batch_size).map(|c| c.to_vec()).collect();
    Ok(batches.into_iter())
}
