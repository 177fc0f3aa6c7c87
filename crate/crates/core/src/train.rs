//! Training, warm replay and evaluation.
//!
//! Each epoch starts from empty memory and walks the training stream in
//! fixed-size batches. Evaluation on a later split first replays the
//! preceding events through the model without gradients, then scores the
//! split batch by batch while continuing to update memory with the true
//! events.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{predict_event_time, LossParts};
use crate::memory::MemoryState;
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::model::{prepare_items, BatchItem, Model, ModelDims};
use crate::nn::{AdamConfig, AdamState, ParamStore, Tape, Tensor};
use crate::stream::{batch_iter, chronological_split, EventStream};

/// RNG stream for training-time sampling.
const TRAIN_STREAM: u64 = 1;
/// RNG stream for evaluation-time sampling; fixed so reruns agree.
const EVAL_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub d: usize,
    pub negatives: usize,
    pub s_t: f64,
    pub cache_depth: usize,
    pub heads: usize,
    pub seed: u64,
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            lr: 0.001,
            d: 64,
            negatives: 20,
            s_t: 1.0,
            cache_depth: 10,
            heads: 2,
            seed: 0,
            split: [0.5, 0.25, 0.25],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be non-negative, got {}", self.lr));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads));
        }
        if !(self.s_t > 0.0 && self.s_t.is_finite()) {
            return bad(format!("s_t must be positive, got {}", self.s_t));
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split {:?} must be non-negative and sum to 1", self.split));
        }
        Ok(())
    }

    /// Parameter layout for a stream with the given shape.
    pub fn dims(&self, stream: &EventStream, t_max: f64) -> ModelDims {
        ModelDims {
            node_count: stream.node_count(),
            kr_max: stream.kr_max(),
            kl_max: stream.kl_max(),
            d: self.d,
            heads: self.heads,
            cache_depth: self.cache_depth,
            s_t: self.s_t,
            t_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Loss terms summed over the epoch's hyperedges.
    pub loss: LossParts,
    pub hyperedges: usize,
    pub validation_mrr: Option<f64>,
    pub survival_clamps: usize,
}

impl EpochLog {
    pub fn total(&self) -> f64 {
        self.loss.total()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: Model,
    /// Selected parameters: best validation MRR, or the last epoch without
    /// a validation split.
    pub store: ParamStore,
    /// Memory after the selected epoch's pass over the training stream.
    pub state: MemoryState,
    pub log: Vec<EpochLog>,
    /// 1-based; 0 when no epoch ran.
    pub best_epoch: usize,
}

fn sampling_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Time span used to initialize time-encoder frequencies.
pub fn encoder_span(stream: &EventStream) -> f64 {
    stream.time_span().max(1.0)
}

/// Trains on `train`, selecting the epoch with the best MRR on `validation`
/// when given.
pub fn fit(
    train: &EventStream,
    validation: Option<&EventStream>,
    config: &TrainConfig,
) -> Result<FitOutput> {
    config.validate()?;
    let (model, mut store) = Model::new(config.dims(train, encoder_span(train)), config.seed)?;
    let adam_config = AdamConfig {
        lr: config.lr,
        ..Default::default()
    };
    let mut adam = AdamState::new(&store, adam_config);
    let mut rng = sampling_rng(config.seed, TRAIN_STREAM);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Vec<Tensor>, MemoryState, usize)> = None;
    let mut last_state = model.new_state();

    for epoch in 1..=config.epochs {
        let mut state = model.new_state();
        let mut loss = LossParts::default();
        let mut hyperedges = 0;
        let mut clamps = 0;
        for (b, refs) in batch_iter(train, config.batch_size)?.enumerate() {
            let items = prepare_items(train, &refs, None, config.negatives, &mut rng)?;
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &store, &state, &items)?;
            if !fwd.parts.total().is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "epoch {epoch}, batch {b}: time {}, size {}, adjacency {}, hyperedge {}",
                    fwd.parts.time, fwd.parts.size, fwd.parts.adjacency, fwd.parts.hyperedge
                )));
            }
            let mean = tape.scale(fwd.loss, 1.0 / items.len() as f64);
            let grads = tape.backward(mean);
            store.accumulate(&tape, &grads);
            adam.step(&mut store)?;
            model.finish_batch(&tape, &fwd, &mut state, &items);
            loss.add(&fwd.parts);
            hyperedges += items.len();
            clamps += tape.survival_clamps();
        }
        let validation_mrr = match validation {
            Some(v) => {
                let (report, _) = evaluate(&model, &store, state.clone(), v, config)?;
                Some(report.mrr)
            }
            None => None,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} per hyperedge{}",
            loss.total() / hyperedges.max(1) as f64,
            validation_mrr.map_or_else(String::new, |m| format!(", validation MRR {m:.4}"))
        );
        if clamps > 0 {
            log::warn!("epoch {epoch}: {clamps} survival term(s) hit the probability floor");
        }
        let score = validation_mrr.unwrap_or(epoch as f64);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, snapshot(&store), state.clone(), epoch));
        }
        last_state = state;
        log.push(EpochLog {
            epoch,
            loss,
            hyperedges,
            validation_mrr,
            survival_clamps: clamps,
        });
    }

    let (state, best_epoch) = match best {
        Some((_, params, state, epoch)) => {
            restore(&mut store, params);
            (state, epoch)
        }
        None => (last_state, 0),
    };
    Ok(FitOutput {
        model,
        store,
        state,
        log,
        best_epoch,
    })
}

fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.ids().map(|id| store.value(id).clone()).collect()
}

fn restore(store: &mut ParamStore, values: Vec<Tensor>) {
    let ids: Vec<_> = store.ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        *store.value_mut(id) = v;
    }
}

/// Forward-only pass over `stream`, starting from `state`; parameters are
/// untouched. Batches are formed as in training so the resulting memory
/// matches the training loop's.
pub fn warm_replay(
    model: &Model,
    store: &ParamStore,
    mut state: MemoryState,
    stream: &EventStream,
    batch_size: usize,
) -> Result<MemoryState> {
    if stream.is_empty() {
        return Ok(state);
    }
    for refs in batch_iter(stream, batch_size)? {
        let items: Vec<BatchItem> = refs
            .iter()
            .map(|r| BatchItem {
                time: r.time,
                hyperedge: r.hyperedge.clone(),
                negatives: Vec::new(),
                event: None,
            })
            .collect();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, store, &state, &items)?;
        model.finish_batch(&tape, &fwd, &mut state, &items);
    }
    Ok(state)
}

/// Scores `split` starting from the warmed `state`, returning the metrics
/// and the state after the split.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    mut state: MemoryState,
    split: &EventStream,
    config: &TrainConfig,
) -> Result<(MetricsReport, MemoryState)> {
    if split.is_empty() {
        return Err(Error::EmptySplit("evaluation split holds no events".into()));
    }
    let dims = &model.dims;
    let mut acc = MetricsAccumulator::new(dims.node_count, dims.kr_max, dims.kl_max);
    let mut rng = sampling_rng(config.seed, EVAL_STREAM);
    for refs in batch_iter(split, config.batch_size)? {
        let items = prepare_items(split, &refs, state.last_time(), config.negatives, &mut rng)?;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, store, &state, &items)?;
        collect_metrics(&tape, &fwd, &items, &mut acc, dims);
        acc.add_loss(&fwd.parts, tape.survival_clamps());
        model.finish_batch(&tape, &fwd, &mut state, &items);
    }
    Ok((acc.finish(), state))
}

fn collect_metrics(
    tape: &Tape,
    fwd: &crate::model::BatchForward,
    items: &[BatchItem],
    acc: &mut MetricsAccumulator,
    dims: &ModelDims,
) {
    let scores = tape.value(fwd.scores.scores).data();
    for (k, it) in items.iter().enumerate() {
        let c = fwd.first_candidate[k];
        let negs = &scores[c + 1..c + 1 + it.negatives.len()];
        acc.add_ranking(scores[c], negs, it.hyperedge.size());
        if it.event.is_some() {
            acc.add_event();
        }
    }
    if fwd.event_nodes.is_empty() {
        return;
    }
    let mu = tape.value(fwd.mu_event.expect("event rows have μ"));
    let tr = tape.value(fwd.theta_right.expect("event rows have θ"));
    let tl = tape.value(fwd.theta_left.expect("event rows have θ"));
    let kr = tape.value(fwd.kappa_right.expect("event rows have κ"));
    let kl = tape.value(fwd.kappa_left.expect("event rows have κ"));

    let mut per_item: Vec<(f64, usize)> = vec![(0.0, 0); items.len()];
    for &(row, gap) in &fwd.timed_rows {
        let item = fwd.event_nodes[row].item;
        per_item[item].0 += (gap - predict_event_time(mu.get(row, 0))).abs();
        per_item[item].1 += 1;
    }
    for (k, (sum, n)) in per_item.into_iter().enumerate() {
        if n > 0 {
            acc.add_time_error(sum / n as f64, items[k].hyperedge.size());
        }
    }

    let mut size_logits = Vec::with_capacity(dims.kr_max + dims.kl_max);
    let mut size_targets = Vec::with_capacity(dims.kr_max + dims.kl_max);
    for (row, en) in fwd.event_nodes.iter().enumerate() {
        let ev = items[en.item].event.as_ref().expect("event node belongs to an event");
        let tg = &ev.targets[&en.node];
        acc.add_adjacency(tr.row(row), &tg.adj_right);
        acc.add_adjacency(tl.row(row), &tg.adj_left);
        size_logits.clear();
        size_targets.clear();
        size_logits.extend_from_slice(kr.row(row));
        size_logits.extend_from_slice(kl.row(row));
        size_targets.extend_from_slice(&tg.size_right);
        size_targets.extend_from_slice(&tg.size_left);
        acc.add_sizes(&size_logits, &size_targets);
    }
}

/// Warm-replays `prefix` from empty memory and evaluates `split`.
pub fn evaluate_after(
    model: &Model,
    store: &ParamStore,
    prefix: &EventStream,
    split: &EventStream,
    config: &TrainConfig,
) -> Result<(MetricsReport, MemoryState)> {
    let state = warm_replay(model, store, model.new_state(), prefix, config.batch_size)?;
    evaluate(model, store, state, split, config)
}

/// Chronological splits on a time axis rescaled so the training split's mean
/// inter-event duration is one.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: EventStream,
    pub validation: EventStream,
    pub test: EventStream,
    /// Dataset time units per rescaled unit.
    pub time_scale: f64,
}

impl Splits {
    pub fn new(stream: &EventStream, fractions: [f64; 3]) -> Result<Self> {
        let (train, _, _) = chronological_split(stream, fractions)?;
        let time_scale = match train.mean_gap() {
            Some(g) if g > 0.0 => g,
            _ => 1.0,
        };
        Self::with_time_scale(stream, fractions, time_scale)
    }

    /// Splits on a time axis divided by a given `time_scale`, e.g. the one
    /// stored with a checkpoint.
    pub fn with_time_scale(stream: &EventStream, fractions: [f64; 3], time_scale: f64) -> Result<Self> {
        let (train, validation, test) = chronological_split(&stream.rescaled(time_scale)?, fractions)?;
        Ok(Splits {
            train,
            validation,
            test,
            time_scale,
        })
    }

    /// Events preceding the test split.
    pub fn before_test(&self) -> Result<EventStream> {
        EventStream::concat(&[&self.train, &self.validation])
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub splits: Splits,
    pub fit: FitOutput,
    /// Test metrics with time errors in dataset units.
    pub test: MetricsReport,
}

/// Splits, trains with validation-based selection and scores the test split.
pub fn run_experiment(stream: &EventStream, config: &TrainConfig) -> Result<Experiment> {
    config.validate()?;
    let splits = Splits::new(stream, config.split)?;
    let fit = fit(&splits.train, Some(&splits.validation), config)?;
    let (test, _) = evaluate_after(&fit.model, &fit.store, &splits.before_test()?, &splits.test, config)?;
    Ok(Experiment {
        test: test.with_time_scale(splits.time_scale),
        splits,
        fit,
    })
}

/// Loss curve as CSV: one row per epoch with per-hyperedge means.
pub fn loss_curve_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,time,size,adjacency,hyperedge,total,validation_mrr\n");
    for e in log {
        let m = e.loss.scaled(1.0 / e.hyperedges.max(1) as f64);
        let v = e.validation_mrr.map_or_else(String::new, |x| x.to_string());
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch,
            m.time,
            m.size,
            m.adjacency,
            m.hyperedge,
            m.total(),
            v
        ));
    }
    s
}
