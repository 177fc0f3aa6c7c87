//! Run configuration: training hyperparameters plus artifact paths, read
//! from a JSON file and overridden by command-line flags.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use hyperflux::stream::SynthConfig;
use hyperflux::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::failure::Failure;

pub const SEED_ENV: &str = "HYPERFLUX_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn report_dir(&self) -> PathBuf {
        self.report_dir.clone().unwrap_or_else(|| PathBuf::from("report"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.report_dir().join("checkpoint.json"))
    }
}

/// Reads a JSON object, rejecting keys that `T`'s default does not
/// serialize. Returns the object too, so callers can tell which keys were
/// given.
fn read_object<T: Serialize + DeserializeOwned + Default>(path: &Path) -> Result<(T, Map<String, Value>), Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("config {}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(Failure::config(format!("config {}: expected a JSON object", path.display())));
    };
    let Value::Object(known) = serde_json::to_value(T::default()).expect("defaults serialize") else {
        unreachable!("config types serialize to objects");
    };
    let known: BTreeSet<&String> = known.keys().collect();
    let unknown: Vec<&String> = map.keys().filter(|k| !known.contains(k)).collect();
    if !unknown.is_empty() {
        return Err(Failure::config(format!("config {}: unknown keys {unknown:?}", path.display())));
    }
    let parsed = serde_json::from_value(Value::Object(map.clone()))
        .map_err(|e| Failure::config(format!("config {}: {e}", path.display())))?;
    Ok((parsed, map))
}

/// Seed precedence: flag, then config file, then `HYPERFLUX_SEED`.
fn seed_fallback(flag: Option<u64>, in_file: bool) -> Result<Option<u64>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    if in_file {
        return Ok(None);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub s_t: Option<f64>,
    #[arg(long)]
    pub cache_depth: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Falls back to HYPERFLUX_SEED when neither the flag nor the config
    /// file sets it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, Failure> {
        let (mut c, map) = match &self.config {
            Some(p) => read_object::<RunConfig>(p)?,
            None => (RunConfig::default(), Map::new()),
        };
        let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if src.is_some() {
                dst.clone_from(src);
            }
        };
        set(&mut c.dataset, &self.dataset);
        set(&mut c.checkpoint, &self.checkpoint);
        set(&mut c.report_dir, &self.report_dir);
        let t = &mut c.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.d {
            t.d = v;
        }
        if let Some(v) = self.negatives {
            t.negatives = v;
        }
        if let Some(v) = self.s_t {
            t.s_t = v;
        }
        if let Some(v) = self.cache_depth {
            t.cache_depth = v;
        }
        if let Some(v) = self.heads {
            t.heads = v;
        }
        if let Some(v) = seed_fallback(self.seed, map.contains_key("seed"))? {
            t.seed = v;
        }
        if let Some(v) = &self.split {
            t.split = [v[0], v[1], v[2]];
        }
        t.validate().map_err(Failure::from)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON generator configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Destination JSONL; a `.header.json` sidecar is written next to it.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub node_count: Option<usize>,
    #[arg(long)]
    pub communities: Option<usize>,
    #[arg(long)]
    pub groups_per_community: Option<usize>,
    #[arg(long)]
    pub hyperedges: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub kr_max: Option<usize>,
    #[arg(long)]
    pub kl_max: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub log_rate_mean: Option<f64>,
    #[arg(long)]
    pub log_rate_spread: Option<f64>,
    #[arg(long)]
    pub log_rate_sd: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SynthArgs {
    pub fn resolve(&self) -> Result<SynthConfig, Failure> {
        let (mut c, map) = match &self.config {
            Some(p) => read_object::<SynthConfig>(p)?,
            None => (SynthConfig::default(), Map::new()),
        };
        if let Some(v) = self.node_count {
            c.node_count = v;
        }
        if let Some(v) = self.communities {
            c.communities = v;
        }
        if let Some(v) = self.groups_per_community {
            c.groups_per_community = v;
        }
        if let Some(v) = self.hyperedges {
            c.hyperedges = v;
        }
        if self.horizon.is_some() {
            c.horizon = self.horizon;
        }
        if let Some(v) = self.kr_max {
            c.kr_max = v;
        }
        if let Some(v) = self.kl_max {
            c.kl_max = v;
        }
        if let Some(v) = self.log_rate_mean {
            c.log_rate_mean = v;
        }
        if let Some(v) = self.log_rate_spread {
            c.log_rate_spread = v;
        }
        if let Some(v) = self.log_rate_sd {
            c.log_rate_sd = v;
        }
        if let Some(v) = seed_fallback(self.seed, map.contains_key("seed"))? {
            c.seed = v;
        }
        Ok(c)
    }
}
