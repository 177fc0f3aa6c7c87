//! Ranking, timing, adjacency and size metrics, and the report they feed.

use serde::{Deserialize, Serialize};

use crate::heads::LossParts;

/// Rank of the true score among negatives: strictly greater negatives count
/// one, ties one half.
pub fn tie_rank(true_score: f64, negatives: &[f64]) -> f64 {
    let greater = negatives.iter().filter(|&&s| s > true_score).count() as f64;
    let ties = negatives.iter().filter(|&&s| s == true_score).count() as f64;
    greater + 0.5 * ties
}

pub fn reciprocal_rank(true_score: f64, negatives: &[f64]) -> f64 {
    1.0 / (tie_rank(true_score, negatives) + 1.0)
}

/// `(1/N) Σ 1/(r_n + 1)`; zero for no ranks.
pub fn mrr_from_ranks(ranks: &[f64]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|r| 1.0 / (r + 1.0)).sum::<f64>() / ranks.len() as f64
}

/// ROC AUC by the rank statistic with mid-ranks for ties; `None` unless
/// both classes are present.
pub fn roc_auc(pairs: &[(f64, bool)]) -> Option<f64> {
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * sorted[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Macro AUC over labels with both classes present, and micro AUC over all
/// pooled pairs.
pub fn auc_macro_micro(per_label: &[Vec<(f64, bool)>]) -> (Option<f64>, Option<f64>) {
    let aucs: Vec<f64> = per_label.iter().filter_map(|l| roc_auc(l)).collect();
    let macro_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    let pooled: Vec<(f64, bool)> = per_label.iter().flatten().copied().collect();
    (macro_auc, roc_auc(&pooled))
}

/// Number of nodes flagged at `percent`% of `node_count` (at least one).
pub fn top_count(percent: f64, node_count: usize) -> usize {
    ((percent / 100.0 * node_count as f64).round() as usize).clamp(1, node_count.max(1))
}

/// `⟨a, â⟩ / ⟨a, a⟩` with `â` the indicator of the `k` largest logits;
/// `None` when `a` is empty.
pub fn recall_at(logits: &[f64], targets: &[bool], k: usize) -> Option<f64> {
    let positives = targets.iter().filter(|&&t| t).count();
    if positives == 0 {
        return None;
    }
    let picked = crate::heads::top_k(logits, k, |_| false);
    let hits = picked.iter().filter(|&&i| targets[i]).count();
    Some(hits as f64 / positives as f64)
}

/// Size buckets by `k = |h^r| + |h^ℓ|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeBucket {
    #[serde(rename = "k=2")]
    Two,
    #[serde(rename = "3<=k<=4")]
    ThreeToFour,
    #[serde(rename = "5<=k<=8")]
    FiveToEight,
    #[serde(rename = "k>=9")]
    NineUp,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 4] = [
        SizeBucket::Two,
        SizeBucket::ThreeToFour,
        SizeBucket::FiveToEight,
        SizeBucket::NineUp,
    ];

    pub fn of(k: usize) -> SizeBucket {
        match k {
            0..=2 => SizeBucket::Two,
            3..=4 => SizeBucket::ThreeToFour,
            5..=8 => SizeBucket::FiveToEight,
            _ => SizeBucket::NineUp,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SizeBucket::Two => "k=2",
            SizeBucket::ThreeToFour => "3<=k<=4",
            SizeBucket::FiveToEight => "5<=k<=8",
            SizeBucket::NineUp => "k>=9",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: SizeBucket,
    pub hyperedges: usize,
    pub mrr: Option<f64>,
    pub events: usize,
    pub mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub percent: f64,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hyperedges: usize,
    pub events: usize,
    pub mrr: f64,
    pub mae: Option<f64>,
    pub recall: Vec<RecallPoint>,
    pub auc_macro: Option<f64>,
    pub auc_micro: Option<f64>,
    pub buckets: Vec<BucketMetrics>,
    /// Loss terms averaged per hyperedge.
    pub loss: LossParts,
    /// Survival terms that hit the probability floor.
    pub survival_clamps: usize,
}

pub const RECALL_PERCENTS: [f64; 10] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0];

/// Streaming collector for [`MetricsReport`].
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    node_count: usize,
    ranks: Vec<(f64, SizeBucket)>,
    abs_errors: Vec<(f64, SizeBucket)>,
    recall_sum: [f64; RECALL_PERCENTS.len()],
    recall_count: [usize; RECALL_PERCENTS.len()],
    size_pairs: Vec<Vec<(f64, bool)>>,
    events: usize,
    loss: LossParts,
    survival_clamps: usize,
}

impl MetricsAccumulator {
    pub fn new(node_count: usize, kr_max: usize, kl_max: usize) -> Self {
        MetricsAccumulator {
            node_count,
            ranks: Vec::new(),
            abs_errors: Vec::new(),
            recall_sum: [0.0; RECALL_PERCENTS.len()],
            recall_count: [0; RECALL_PERCENTS.len()],
            size_pairs: vec![Vec::new(); kr_max + kl_max],
            events: 0,
            loss: LossParts::default(),
            survival_clamps: 0,
        }
    }

    pub fn add_ranking(&mut self, true_score: f64, negatives: &[f64], size: usize) {
        self.ranks.push((tie_rank(true_score, negatives), SizeBucket::of(size)));
    }

    pub fn add_event(&mut self) {
        self.events += 1;
    }

    /// One event's node-averaged absolute time error.
    pub fn add_time_error(&mut self, mean_abs_error: f64, size: usize) {
        self.abs_errors.push((mean_abs_error, SizeBucket::of(size)));
    }

    /// One event node on one side.
    pub fn add_adjacency(&mut self, logits: &[f64], targets: &[bool]) {
        for (p, &pct) in RECALL_PERCENTS.iter().enumerate() {
            if let Some(r) = recall_at(logits, targets, top_count(pct, self.node_count)) {
                self.recall_sum[p] += r;
                self.recall_count[p] += 1;
            }
        }
    }

    /// Right then left size logits and targets of one event node.
    pub fn add_sizes(&mut self, logits: &[f64], targets: &[bool]) {
        assert_eq!(logits.len(), self.size_pairs.len(), "size logits length");
        for (bit, (&s, &y)) in logits.iter().zip(targets).enumerate() {
            self.size_pairs[bit].push((s, y));
        }
    }

    pub fn add_loss(&mut self, parts: &LossParts, survival_clamps: usize) {
        self.loss.add(parts);
        self.survival_clamps += survival_clamps;
    }

    pub fn finish(&self) -> MetricsReport {
        let ranks: Vec<f64> = self.ranks.iter().map(|r| r.0).collect();
        let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let errors: Vec<f64> = self.abs_errors.iter().map(|e| e.0).collect();
        let buckets = SizeBucket::ALL
            .iter()
            .map(|&b| {
                let r: Vec<f64> = self.ranks.iter().filter(|x| x.1 == b).map(|x| x.0).collect();
                let e: Vec<f64> = self.abs_errors.iter().filter(|x| x.1 == b).map(|x| x.0).collect();
                BucketMetrics {
                    bucket: b,
                    hyperedges: r.len(),
                    mrr: (!r.is_empty()).then(|| mrr_from_ranks(&r)),
                    events: e.len(),
                    mae: mean(&e),
                }
            })
            .collect();
        let recall = RECALL_PERCENTS
            .iter()
            .enumerate()
            .map(|(p, &percent)| RecallPoint {
                percent,
                recall: (self.recall_count[p] > 0)
                    .then(|| self.recall_sum[p] / self.recall_count[p] as f64),
            })
            .collect();
        let (auc_macro, auc_micro) = auc_macro_micro(&self.size_pairs);
        let n = self.ranks.len().max(1) as f64;
        MetricsReport {
            hyperedges: self.ranks.len(),
            events: self.events,
            mrr: mrr_from_ranks(&ranks),
            mae: mean(&errors),
            recall,
            auc_macro,
            auc_micro,
            buckets,
            loss: self.loss.scaled(1.0 / n),
            survival_clamps: self.survival_clamps,
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}

impl MetricsReport {
    /// Converts time errors measured in rescaled units back by `scale`.
    pub fn with_time_scale(mut self, scale: f64) -> Self {
        self.mae = self.mae.map(|m| m * scale);
        for b in &mut self.buckets {
            b.mae = b.mae.map(|m| m * scale);
        }
        self
    }

    /// Flat `metric,bucket,value` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,bucket,value\n");
        let mut row = |m: &str, b: &str, v: String| out.push_str(&format!("{m},{b},{v}\n"));
        row("hyperedges", "all", self.hyperedges.to_string());
        row("events", "all", self.events.to_string());
        row("mrr", "all", format!("{}", self.mrr));
        row("mae", "all", opt(self.mae));
        row("auc_macro", "all", opt(self.auc_macro));
        row("auc_micro", "all", opt(self.auc_micro));
        for r in &self.recall {
            row(&format!("recall@{}%", r.percent), "all", opt(r.recall));
        }
        for b in &self.buckets {
            row("hyperedges", b.bucket.label(), b.hyperedges.to_string());
            row("mrr", b.bucket.label(), opt(b.mrr));
            row("events", b.bucket.label(), b.events.to_string());
            row("mae", b.bucket.label(), opt(b.mae));
        }
        row("loss_time", "all", format!("{}", self.loss.time));
        row("loss_size", "all", format!("{}", self.loss.size));
        row("loss_adjacency", "all", format!("{}", self.loss.adjacency));
        row("loss_hyperedge", "all", format!("{}", self.loss.hyperedge));
        row("survival_clamps", "all", self.survival_clamps.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mrr_examples() {
        assert_eq!(reciprocal_rank(5.0, &[1.0, 2.0]), 1.0);
        assert!((mrr_from_ranks(&[0.0, 1.0, 4.0]) - (1.0 + 0.5 + 0.2) / 3.0).abs() < 1e-12);
        // A constant scorer cannot reach MRR 1.
        assert!((reciprocal_rank(1.0, &[1.0; 20]) - 1.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[(2.0, true), (1.0, false)]), Some(1.0));
        assert_eq!(roc_auc(&[(1.0, true), (1.0, false)]), Some(0.5));
        assert_eq!(roc_auc(&[(1.0, true)]), None);
        let (m, u) = auc_macro_micro(&[vec![(3.0, true), (0.0, false)], vec![(1.0, true)]]);
        assert_eq!(m, Some(1.0));
        assert_eq!(u, Some(1.0));
    }

    #[test]
    fn recall_examples() {
        let a = [false, true, true, false];
        assert_eq!(recall_at(&[0.0, 5.0, 0.0, 0.0], &a, 1), Some(0.5));
        assert_eq!(recall_at(&[0.0, 5.0, 4.0, 0.0], &a, 2), Some(1.0));
        assert_eq!(recall_at(&[0.0; 4], &[false; 4], 2), None);
    }

    #[test]
    fn buckets() {
        assert_eq!(SizeBucket::of(2), SizeBucket::Two);
        assert_eq!(SizeBucket::of(4), SizeBucket::ThreeToFour);
        assert_eq!(SizeBucket::of(8), SizeBucket::FiveToEight);
        assert_eq!(SizeBucket::of(9), SizeBucket::NineUp);
    }
}
