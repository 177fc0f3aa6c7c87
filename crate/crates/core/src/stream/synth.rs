//! Planted-structure generator.
//!
//! Nodes are split into `communities`, each split again into
//! `groups_per_community` groups. Group `j` of community `c` is linked to
//! group `j` of community `c + 1 (mod C)`, its partner. Each event picks a
//! group uniformly, waits a lognormal time with that group's location
//! parameter, and emits one hyperedge whose right side is drawn from the
//! group and whose left side is drawn from the partner group. Side sizes are
//! uniform on `1..=k_max` (capped by the group size).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{DirectedHyperedge, EventStream, NodeId, TimedEvent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub node_count: usize,
    pub communities: usize,
    pub groups_per_community: usize,
    pub hyperedges: usize,
    /// Stop once this time is exceeded, if set.
    pub horizon: Option<f64>,
    pub kr_max: usize,
    pub kl_max: usize,
    /// Mean of the inter-event log-time, averaged over groups.
    pub log_rate_mean: f64,
    /// Groups' log-time locations are spread evenly over this width.
    pub log_rate_spread: f64,
    /// Standard deviation of the inter-event log-time.
    pub log_rate_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            node_count: 50,
            communities: 2,
            groups_per_community: 5,
            hyperedges: 5000,
            horizon: None,
            kr_max: 3,
            kl_max: 2,
            log_rate_mean: 0.0,
            log_rate_spread: 1.0,
            log_rate_sd: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn group_count(&self) -> usize {
        self.communities * self.groups_per_community
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.node_count == 0 {
            return bad("node_count must be positive");
        }
        if self.communities < 2 {
            return bad("at least two communities are needed to link partner groups");
        }
        if self.groups_per_community == 0 || self.group_count() > self.node_count {
            return bad("every group needs at least one node");
        }
        if self.kr_max == 0 || self.kl_max == 0 {
            return bad("size bounds must be positive");
        }
        if self.hyperedges == 0 && self.horizon.is_none() {
            return bad("either hyperedges or horizon must bound the stream");
        }
        if !(self.log_rate_sd > 0.0 && self.log_rate_sd.is_finite()) {
            return bad("log_rate_sd must be positive");
        }
        Ok(())
    }

    /// Node ids of group `g` (community-major numbering). Sizes differ by at
    /// most one.
    pub fn group_members(&self, g: usize) -> Vec<NodeId> {
        let groups = self.group_count();
        let base = self.node_count / groups;
        let extra = self.node_count % groups;
        let start = g * base + g.min(extra);
        let len = base + usize::from(g < extra);
        (start..start + len).map(NodeId).collect()
    }

    pub fn partner_group(&self, g: usize) -> usize {
        let c = g / self.groups_per_community;
        let j = g % self.groups_per_community;
        ((c + 1) % self.communities) * self.groups_per_community + j
    }

    pub fn group_of(&self, node: NodeId) -> usize {
        (0..self.group_count())
            .find(|&g| self.group_members(g).contains(&node))
            .expect("node within node_count")
    }

    /// Location parameter of group `g`'s lognormal waiting time.
    pub fn group_log_rate(&self, g: usize) -> f64 {
        let groups = self.group_count();
        if groups == 1 {
            return self.log_rate_mean;
        }
        self.log_rate_mean + self.log_rate_spread * (g as f64 / (groups - 1) as f64 - 0.5)
    }

    /// Whether `h` follows the planted rule: right side inside one group,
    /// left side inside that group's partner.
    pub fn follows_planted_rule(&self, h: &DirectedHyperedge) -> bool {
        let g = self.group_of(h.right()[0]);
        let partner = self.partner_group(g);
        h.right().iter().all(|&n| self.group_of(n) == g)
            && h.left().iter().all(|&n| self.group_of(n) == partner)
    }
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<EventStream> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let groups = config.group_count();
    let waits = (0..groups)
        .map(|g| {
            LogNormal::new(config.group_log_rate(g), config.log_rate_sd)
                .map_err(|e| Error::InvalidConfig(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let members: Vec<Vec<NodeId>> = (0..groups).map(|g| config.group_members(g)).collect();

    let draw_side = |rng: &mut ChaCha8Rng, pool: &[NodeId], k_max: usize| -> Vec<NodeId> {
        let k = rng.random_range(1..=k_max.min(pool.len()));
        sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
    };

    let mut events = Vec::new();
    let mut t = 0.0;
    let limit = if config.hyperedges == 0 {
        usize::MAX
    } else {
        config.hyperedges
    };
    while events.len() < limit {
        let g = rng.random_range(0..groups);
        let dt = waits[g].sample(&mut rng);
        let next = t + dt;
        if config.horizon.is_some_and(|h| next > h) {
            break;
        }
        // Lognormal draws are positive but may vanish relative to `t`.
        if next <= t {
            continue;
        }
        t = next;
        let right = draw_side(&mut rng, &members[g], config.kr_max);
        let left = draw_side(&mut rng, &members[config.partner_group(g)], config.kl_max);
        events.push(TimedEvent {
            time: t,
            hyperedges: vec![DirectedHyperedge::new(right, left)?],
        });
    }
    EventStream::new(config.node_count, config.kr_max, config.kl_max, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_partition_nodes() {
        let c = SynthConfig {
            node_count: 23,
            ..Default::default()
        };
        let all: Vec<NodeId> = (0..c.group_count()).flat_map(|g| c.group_members(g)).collect();
        assert_eq!(all, (0..23).map(NodeId).collect::<Vec<_>>());
        assert_eq!(c.partner_group(0), 5);
        assert_eq!(c.partner_group(7), 2);
    }

    #[test]
    fn invalid_configs_rejected() {
        for c in [
            SynthConfig {
                node_count: 0,
                ..Default::default()
            },
            SynthConfig {
                communities: 1,
                ..Default::default()
            },
            SynthConfig {
                groups_per_community: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(generate_synthetic(&c), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn horizon_bounds_the_stream() {
        let c = SynthConfig {
            hyperedges: 0,
            horizon: Some(50.0),
            ..Default::default()
        };
        let s = generate_synthetic(&c).unwrap();
        assert!(!s.is_empty());
        assert!(s.events().last().unwrap().time <= 50.0);
    }
}
