//! Shared fixtures, independent reference implementations and the
//! acceptance criteria.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hyperflux::checkpoint::Checkpoint;
use hyperflux::forecast::{flagged_count, forecast};
use hyperflux::heads::{
    adjacency_nll, candidate_for_node, generate_candidates, size_nll, AdjacencyHead, SizeHead, TimeHead,
};
use hyperflux::memory::Side;
use hyperflux::metrics::reciprocal_rank;
use hyperflux::model::{prepare_items, BatchItem, Model};
use hyperflux::nn::{
    grad_check, grad_check_params, GruCell, Mlp2, MultiHeadAttention, ParamStore, Tape, Tensor,
    Var,
};
use hyperflux::predictor::{hyperedge_loglik, Candidate, HyperedgePredictor};
use hyperflux::stream::{
    batch_iter, build_node_targets, generate_synthetic, parse_jsonl, DirectedHyperedge,
    EventStream, NodeId, NodeTargets, StreamStats, SynthConfig, TimedEvent,
};
use hyperflux::train::{
    encoder_span, evaluate_after, fit, run_experiment, warm_replay, Splits, TrainConfig,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(),
    )
}

fn distinct(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(k);
    all
}

/// A hyperedge with uniformly drawn side sizes and members.
pub fn random_hyperedge(n: usize, kr: usize, kl: usize, rng: &mut impl Rng) -> DirectedHyperedge {
    loop {
        let r = distinct(n, rng.random_range(1..=kr), rng);
        let l = distinct(n, rng.random_range(1..=kl), rng);
        if let Ok(h) = DirectedHyperedge::from_indices(&r, &l) {
            return h;
        }
    }
}

pub fn random_event(n: usize, kr: usize, kl: usize, max_edges: usize, rng: &mut impl Rng) -> TimedEvent {
    let count = rng.random_range(1..=max_edges);
    TimedEvent {
        time: 0.0,
        hyperedges: (0..count).map(|_| random_hyperedge(n, kr, kl, rng)).collect(),
    }
}

/// Targets by enumerating every ordered node pair against every hyperedge.
pub fn brute_force_targets(event: &TimedEvent, n: usize, kr: usize, kl: usize) -> BTreeMap<NodeId, NodeTargets> {
    let on_right = |i: usize, h: &DirectedHyperedge| h.right().contains(&NodeId(i));
    let on_left = |i: usize, h: &DirectedHyperedge| h.left().contains(&NodeId(i));
    let mut out = BTreeMap::new();
    for i in 0..n {
        if !event.hyperedges.iter().any(|h| on_right(i, h)) {
            continue;
        }
        let mut t = NodeTargets {
            adj_right: vec![false; n],
            adj_left: vec![false; n],
            size_right: vec![false; kr],
            size_left: vec![false; kl],
        };
        for j in 0..n {
            for h in &event.hyperedges {
                if i != j && on_right(i, h) && on_right(j, h) {
                    t.adj_right[j] = true;
                }
                if on_right(i, h) && on_left(j, h) {
                    t.adj_left[j] = true;
                }
            }
        }
        for k in 1..=kr {
            t.size_right[k - 1] = event.hyperedges.iter().any(|h| on_right(i, h) && h.right().len() == k);
        }
        for k in 1..=kl {
            t.size_left[k - 1] = event.hyperedges.iter().any(|h| on_right(i, h) && h.left().len() == k);
        }
        out.insert(NodeId(i), t);
    }
    out
}

type Mat = Vec<Vec<f64>>;

fn matrix(store: &ParamStore, name: &str) -> Mat {
    let t = store.value(store.id(name).unwrap_or_else(|| panic!("no parameter {name}")));
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// `Wᵀ v`.
fn wt_v(w: &Mat, v: &[f64]) -> Vec<f64> {
    let cols = w[0].len();
    (0..cols).map(|k| (0..w.len()).map(|m| w[m][k] * v[m]).sum()).collect()
}

/// `W v`.
fn w_v(w: &Mat, v: &[f64]) -> Vec<f64> {
    w.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn reference_side(store: &ParamStore, own: &str, other: &str, mine: &[Vec<f64>], theirs: &[Vec<f64>]) -> f64 {
    let m = |side: &str, name: &str| matrix(store, &format!("pred.{side}.{name}"));
    let (cq, ck, cv) = (m(own, "w_cq"), m(other, "w_ck"), m(other, "w_cv"));
    let (sq, sk, sv) = (m(own, "w_sq"), m(own, "w_sk"), m(own, "w_sv"));
    let ws = m(own, "w_s");
    let wo = m(own, "w_o");
    let bo = m(own, "b_o")[0][0];
    let d = mine[0].len();

    let mut dch = Vec::new();
    for v in mine {
        let q = wt_v(&cq, v);
        let logits: Vec<f64> = theirs.iter().map(|u| dot(&q, &wt_v(&ck, u))).collect();
        let alpha = softmax(&logits);
        let mut acc = vec![0.0; d];
        for (a, u) in alpha.iter().zip(theirs) {
            for (x, y) in acc.iter_mut().zip(wt_v(&cv, u)) {
                *x += a * y;
            }
        }
        dch.push(acc.iter().map(|x| x.tanh()).collect::<Vec<f64>>());
    }
    let z: Vec<Vec<f64>> = mine
        .iter()
        .zip(&dch)
        .map(|(v, c)| v.iter().zip(c).map(|(a, b)| a + b).collect())
        .collect();
    let mut total = 0.0;
    for i in 0..mine.len() {
        let mut dsh = vec![0.0; d];
        if mine.len() > 1 {
            let q = wt_v(&sq, &z[i]);
            let others: Vec<usize> = (0..mine.len()).filter(|&j| j != i).collect();
            let logits: Vec<f64> = others.iter().map(|&j| dot(&q, &wt_v(&sk, &z[j]))).collect();
            let alpha = softmax(&logits);
            for (a, &j) in alpha.iter().zip(&others) {
                for (x, y) in dsh.iter_mut().zip(wt_v(&sv, &z[j])) {
                    *x += a * y;
                }
            }
            dsh.iter_mut().for_each(|x| *x = x.tanh());
        }
        let s = w_v(&ws, &mine[i]);
        let mut feat = Vec::with_capacity(2 * d);
        for k in 0..d {
            let dh = dsh[k] + dch[i][k];
            feat.push((dh - s[k]).powi(2));
        }
        for k in 0..d {
            feat.push((dch[i][k] - s[k]).powi(2));
        }
        total += dot(&wo[0], &feat) + bo;
    }
    total / mine.len() as f64
}

/// `λ_h` evaluated with plain loops over the predictor's named weights.
pub fn reference_score(store: &ParamStore, reps: &[Vec<f64>], right: &[usize], left: &[usize]) -> f64 {
    let r: Vec<Vec<f64>> = right.iter().map(|&i| reps[i].clone()).collect();
    let l: Vec<Vec<f64>> = left.iter().map(|&i| reps[i].clone()).collect();
    reference_side(store, "right", "left", &r, &l) + reference_side(store, "left", "right", &l, &r)
}

pub fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Rows of a valid hyperedge (the two sides differ as sets), in random
/// member order.
pub fn random_candidate(n: usize, kr: usize, kl: usize, rng: &mut impl Rng) -> Candidate {
    let h = random_hyperedge(n, kr, kl, rng);
    let mut c = Candidate::from_hyperedge(&h, |v| Some(v.0)).unwrap();
    c.right.shuffle(rng);
    c.left.shuffle(rng);
    c
}

/// Scores one candidate through the batched predictor.
pub fn predictor_score(pred: &HyperedgePredictor, store: &ParamStore, reps: &Tensor, c: &Candidate) -> f64 {
    let mut tape = Tape::new();
    let r = tape.leaf(reps.clone());
    let out = pred.score(&mut tape, store, r, std::slice::from_ref(c)).unwrap();
    tape.value(out.scores).item()
}

/// The planted stream of the learning-signal criterion.
pub fn planted_stream() -> EventStream {
    generate_synthetic(&SynthConfig::default()).unwrap()
}

/// `Σ w ⊙ x` with fixed random weights, so every output entry matters.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(x);
    let w = tape.leaf(uniform(r, c, 1.0, &mut rng(seed)));
    let m = tape.mul(x, w);
    tape.sum_all(m)
}

// ---------------------------------------------------------------------------
// Acceptance criteria

pub struct Outcome {
    pub id: &'static str,
    /// `None` for criteria that are recorded rather than judged.
    pub pass: Option<bool>,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self) -> String {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        format!("[{tag}] {}: {}", self.id, self.detail)
    }
}

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_INSTANCES: u64 = 10;

/// Worst relative error per operation over `GRAD_INSTANCES` random
/// instances, checked against both inputs and parameters.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let d = 4;
    let mut out = Vec::new();
    let mut record = |name: &'static str, f: &dyn Fn(u64) -> f64| {
        let worst = (0..GRAD_INSTANCES).map(f).fold(0.0, f64::max);
        out.push((name, worst));
    };

    record("mlp2", &|seed| {
        let mut g = rng(seed);
        let mut store = ParamStore::new();
        let mlp = Mlp2::new(&mut store, "m", d, 5, 3, &mut g);
        let x = uniform(3, d, 1.0, &mut g);
        let a = grad_check(|t, v| { let o = mlp.forward(t, &store, v[0])?; Ok(project(t, o, seed)) }, &[x.clone()]).unwrap();
        let b = grad_check_params(&store, None, |t, s| {
            let xv = t.leaf(x.clone());
            let o = mlp.forward(t, s, xv)?;
            Ok(project(t, o, seed))
        })
        .unwrap();
        a.max_rel_error.max(b.max_rel_error)
    });

    record("gru_cell", &|seed| {
        let mut g = rng(seed);
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, "g", 6, d, &mut g);
        let x = uniform(3, 6, 1.0, &mut g);
        let h = uniform(3, d, 1.0, &mut g);
        let a = grad_check(|t, v| { let o = gru.forward(t, &store, v[0], v[1])?; Ok(project(t, o, seed)) }, &[x.clone(), h.clone()]).unwrap();
        let b = grad_check_params(&store, None, |t, s| {
            let (xv, hv) = (t.leaf(x.clone()), t.leaf(h.clone()));
            let o = gru.forward(t, s, xv, hv)?;
            Ok(project(t, o, seed))
        })
        .unwrap();
        a.max_rel_error.max(b.max_rel_error)
    });

    record("attention", &|seed| {
        let mut g = rng(seed);
        let mut store = ParamStore::new();
        let att = MultiHeadAttention::new(&mut store, "a", 2 * d, 2 * d, d, 2, &mut g).unwrap();
        let q = uniform(2, 2 * d, 1.0, &mut g);
        let k = uniform(3, 2 * d, 1.0, &mut g);
        let v = uniform(3, 2 * d, 1.0, &mut g);
        let a = grad_check(
            |t, x| { let o = att.forward(t, &store, x[0], x[1], x[2])?; Ok(project(t, o, seed)) },
            &[q.clone(), k.clone(), v.clone()],
        )
        .unwrap();
        let b = grad_check_params(&store, None, |t, s| {
            let (qv, kv, vv) = (t.leaf(q.clone()), t.leaf(k.clone()), t.leaf(v.clone()));
            let o = att.forward(t, s, qv, kv, vv)?;
            Ok(project(t, o, seed))
        })
        .unwrap();
        a.max_rel_error.max(b.max_rel_error)
    });

    // CAT, SAT and the full score share one setup; `pick` selects the output.
    let predictor_case = |seed: u64, pick: fn(&mut Tape, &hyperflux::predictor::ScoreOutput) -> Var| -> f64 {
        let mut g = rng(seed);
        let mut store = ParamStore::new();
        let pred = HyperedgePredictor::new(&mut store, d, &mut g);
        let reps = uniform(6, d, 1.0, &mut g);
        let cands: Vec<Candidate> = (0..3).map(|_| random_candidate(6, 3, 3, &mut g)).collect();
        let a = grad_check(
            |t, v| {
                let o = pred.score(t, &store, v[0], &cands)?;
                let x = pick(t, &o);
                Ok(project(t, x, seed))
            },
            &[reps.clone()],
        )
        .unwrap();
        let b = grad_check_params(&store, None, |t, s| {
            let r = t.leaf(reps.clone());
            let o = pred.score(t, s, r, &cands)?;
            let x = pick(t, &o);
            Ok(project(t, x, seed))
        })
        .unwrap();
        a.max_rel_error.max(b.max_rel_error)
    };
    record("cat", &|seed| {
        predictor_case(seed, |t, o| {
            let r = project(t, o.right.cross, 1);
            let l = project(t, o.left.cross, 2);
            t.add(r, l)
        })
    });
    record("sat", &|seed| {
        predictor_case(seed, |t, o| {
            let r = project(t, o.right.self_attn, 3);
            let l = project(t, o.left.self_attn, 4);
            t.add(r, l)
        })
    });
    record("directed_score", &|seed| predictor_case(seed, |_, o| o.scores));

    record("node_event_nll", &|seed| {
        let mut g = rng(seed);
        let mut store = ParamStore::new();
        let head = TimeHead::new(&mut store, d, 1.0, &mut g).unwrap();
        let reps = uniform(5, d, 1.0, &mut g);
        let dts: Vec<f64> = (0..5).map(|_| g.random_range(0.1..5.0)).collect();
        let loss = |t: &mut Tape, s: &ParamStore, r: Var| -> hyperflux::Result<Var> {
            let mu = head.mu(t, s, r)?;
            let mu_e = t.gather_rows(mu, &[0, 1, 2]);
            let mu_n = t.gather_rows(mu, &[3, 4]);
            head.node_event_nll(t, Some(mu_e), &dts[..3], Some(mu_n), &dts[3..])
        };
        let a = grad_check(|t, v| loss(t, &store, v[0]), &[reps.clone()]).unwrap();
        let b = grad_check_params(&store, None, |t, s| {
            let r = t.leaf(reps.clone());
            loss(t, s, r)
        })
        .unwrap();
        a.max_rel_error.max(b.max_rel_error)
    });

    record("adjacency_nll", &|seed| {
        let mut g = rng(seed);
        let mut store = ParamStore::new();
        let head = AdjacencyHead::new(&mut store, d, &mut g);
        let reps = uniform(3, d, 1.0, &mut g);
        let mem = uniform(7, d, 1.0, &mut g);
        let targets: Vec<f64> = (0..21).map(|_| f64::from(u8::from(g.random_bool(0.3)))).collect();
        let loss = |t: &mut Tape, s: &ParamStore, r: Var, m: Var| {
            let a = head.logits(t, s, r, m, Side::Right);
            let b = head.logits(t, s, r, m, Side::Left);
            let la = adjacency_nll(t, a, &targets);
            let lb = adjacency_nll(t, b, &targets);
            t.add(la, lb)
        };
        let a = grad_check(|t, v| Ok(loss(t, &store, v[0], v[1])), &[reps.clone(), mem.clone()]).unwrap();
        let b = grad_check_params(&store, None, |t, s| {
            let (r, m) = (t.leaf(reps.clone()), t.leaf(mem.clone()));
            Ok(loss(t, s, r, m))
        })
        .unwrap();
        a.max_rel_error.max(b.max_rel_error)
    });

    record("size_nll", &|seed| {
        let mut g = rng(seed);
        let mut store = ParamStore::new();
        let head = SizeHead::new(&mut store, d, 3, 2, &mut g);
        let reps = uniform(4, d, 1.0, &mut g);
        let tr: Vec<f64> = (0..12).map(|_| f64::from(u8::from(g.random_bool(0.4)))).collect();
        let tl: Vec<f64> = (0..8).map(|_| f64::from(u8::from(g.random_bool(0.4)))).collect();
        let loss = |t: &mut Tape, s: &ParamStore, r: Var| -> hyperflux::Result<Var> {
            let a = head.logits(t, s, r, Side::Right)?;
            let b = head.logits(t, s, r, Side::Left)?;
            let la = size_nll(t, a, &tr);
            let lb = size_nll(t, b, &tl);
            Ok(t.add(la, lb))
        };
        let a = grad_check(|t, v| loss(t, &store, v[0]), &[reps.clone()]).unwrap();
        let b = grad_check_params(&store, None, |t, s| {
            let r = t.leaf(reps.clone());
            loss(t, s, r)
        })
        .unwrap();
        a.max_rel_error.max(b.max_rel_error)
    });

    record("hyperedge_loglik", &|seed| {
        let mut g = rng(seed);
        let scores = uniform(21, 1, 4.0, &mut g);
        let labels: Vec<f64> = (0..21).map(|k| f64::from(u8::from(k == 0))).collect();
        grad_check(|t, v| Ok(hyperedge_loglik(t, v[0], &labels)), &[scores])
            .unwrap()
            .max_rel_error
    });

    out
}

pub fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let suite = gradient_suite();
    let secs = start.elapsed().as_secs_f64();
    let worst = suite.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let per: Vec<String> = suite.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome {
        id: "1 gradient suite",
        pass: Some(worst < GRAD_TOLERANCE && secs < 60.0),
        detail: format!(
            "max rel err {worst:.2e} (< {GRAD_TOLERANCE:e}), {GRAD_INSTANCES} instances per op, {secs:.1}s (< 60s); {}",
            per.join(", ")
        ),
    }
}

pub fn targets_mismatches(events: usize, seed: u64) -> usize {
    let mut g = rng(seed);
    let mut bad = 0;
    for _ in 0..events {
        let n = g.random_range(3..=8);
        let (kr, kl) = (g.random_range(1..=3), g.random_range(1..=3));
        let e = random_event(n, kr, kl, 4, &mut g);
        if build_node_targets(&e, n, kr, kl).unwrap() != brute_force_targets(&e, n, kr, kl) {
            bad += 1;
        }
    }
    bad
}

/// Largest `|λ − λ_ref|` over `count` hyperedges of each shape.
pub fn score_oracle_gap(count: usize, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut g = rng(seed);
    for (kr, kl) in [(2, 1), (3, 2)] {
        for _ in 0..count {
            let d = 6;
            let mut store = ParamStore::new();
            let pred = HyperedgePredictor::new(&mut store, d, &mut g);
            let reps = uniform(8, d, 1.0, &mut g);
            let c = Candidate {
                right: distinct(8, kr, &mut g),
                left: distinct(8, kl, &mut g),
            };
            let got = predictor_score(&pred, &store, &reps, &c);
            let want = reference_score(&store, &tensor_rows(&reps), &c.right, &c.left);
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

pub fn criterion_oracles() -> Outcome {
    let bad = targets_mismatches(1000, 11);
    let gap = score_oracle_gap(100, 12);
    Outcome {
        id: "2 oracle equivalence",
        pass: Some(bad == 0 && gap < 1e-9),
        detail: format!(
            "targets: {bad}/1000 events differ from pair enumeration; directed_score vs loop reference: max |Δλ| {gap:.2e} (< 1e-9) over 100 2x1 + 100 3x2"
        ),
    }
}

/// MRR of i.i.d. uniform scores with 20 negatives.
pub fn iid_null_mrr(count: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let total: f64 = (0..count)
        .map(|_| {
            let t: f64 = g.random();
            let negs: Vec<f64> = (0..20).map(|_| g.random()).collect();
            reciprocal_rank(t, &negs)
        })
        .sum();
    total / count as f64
}

pub fn criterion_null() -> Outcome {
    let stream = planted_stream();
    let config = TrainConfig::default();
    let splits = Splits::new(&stream, config.split).unwrap();
    let (model, store) = Model::new(config.dims(&splits.train, encoder_span(&splits.train)), config.seed).unwrap();
    let (report, _) = evaluate_after(&model, &store, &splits.before_test().unwrap(), &splits.test, &config).unwrap();
    let auc = report.auc_macro.unwrap_or(f64::NAN);
    let mrr_ok = (report.mrr - 0.174).abs() <= 0.02;
    let auc_ok = (auc - 0.5).abs() <= 0.03;
    Outcome {
        id: "3 null calibration",
        pass: Some(mrr_ok && auc_ok && report.hyperedges >= 1000),
        detail: format!(
            "untrained model on {} test hyperedges: MRR {:.4} (target 0.174 ± 0.02), size AUC {:.4} (target 0.5 ± 0.03); i.i.d. random scores give MRR {:.4}",
            report.hyperedges,
            report.mrr,
            auc,
            iid_null_mrr(100_000, 13)
        ),
    }
}

pub fn criterion_learning() -> Outcome {
    let stream = planted_stream();
    let config = TrainConfig {
        epochs: 20,
        ..Default::default()
    };
    let start = Instant::now();
    let exp = run_experiment(&stream, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let per = |k: usize| exp.fit.log[k].total() / exp.fit.log[k].hyperedges as f64;
    let (first, last) = (per(0), per(exp.fit.log.len() - 1));
    let ratio = last / first;
    Outcome {
        id: "4 learning signal",
        pass: Some(ratio < 0.7 && exp.test.mrr >= 0.5),
        detail: format!(
            "20 epochs, B=128, lr=1e-3, d=64: NLL/hyperedge {first:.3} -> {last:.3} (ratio {ratio:.3}, < 0.7); test MRR {:.4} (>= 0.5, best epoch {}); {secs:.0}s (target < 900s)",
            exp.test.mrr, exp.fit.best_epoch
        ),
    }
}

/// Returns (largest permutation change, fraction of draws where swapping
/// sides changed λ).
pub fn permutation_and_direction(draws: usize, seed: u64) -> (f64, f64) {
    let mut g = rng(seed);
    let mut worst: f64 = 0.0;
    let mut changed = 0;
    for _ in 0..draws {
        let d = 8;
        let mut store = ParamStore::new();
        let pred = HyperedgePredictor::new(&mut store, d, &mut g);
        let reps = uniform(10, d, 1.0, &mut g);
        let c = random_candidate(10, 3, 3, &mut g);
        let base = predictor_score(&pred, &store, &reps, &c);
        let mut p = c.clone();
        p.right.shuffle(&mut g);
        p.left.shuffle(&mut g);
        worst = worst.max((predictor_score(&pred, &store, &reps, &p) - base).abs());
        let swapped = Candidate {
            right: c.left.clone(),
            left: c.right.clone(),
        };
        if predictor_score(&pred, &store, &reps, &swapped) != base {
            changed += 1;
        }
    }
    (worst, changed as f64 / draws as f64)
}

pub fn criterion_permutation() -> Outcome {
    let (worst, frac) = permutation_and_direction(1000, 14);
    Outcome {
        id: "5 permutation/direction",
        pass: Some(worst < 1e-9 && frac >= 0.99),
        detail: format!(
            "1000 random hyperedges: within-side permutation max |Δλ| {worst:.2e} (< 1e-9); side swap changed λ in {:.1}% of draws (>= 99%)",
            100.0 * frac
        ),
    }
}

/// Largest change of any loss term when the items of each of the first
/// `batches` batches are shuffled.
pub fn batch_order_gap(batches: usize, seed: u64) -> f64 {
    let stream = planted_stream();
    let config = TrainConfig::default();
    let (model, store) = Model::new(config.dims(&stream, encoder_span(&stream)), seed).unwrap();
    let mut state = model.new_state();
    let mut g = rng(seed);
    let mut worst: f64 = 0.0;
    for refs in batch_iter(&stream, config.batch_size).unwrap().take(batches) {
        let items = prepare_items(&stream, &refs, None, config.negatives, &mut g).unwrap();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &store, &state, &items).unwrap();
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut g);
        let mut tape2 = Tape::new();
        let fwd2 = model.forward(&mut tape2, &store, &state, &shuffled).unwrap();
        let (a, b) = (fwd.parts, fwd2.parts);
        for (x, y) in [(a.time, b.time), (a.size, b.size), (a.adjacency, b.adjacency), (a.hyperedge, b.hyperedge)] {
            worst = worst.max((x - y).abs());
        }
        model.finish_batch(&tape, &fwd, &mut state, &items);
    }
    worst
}

pub fn criterion_batch_order() -> Outcome {
    let gap = batch_order_gap(8, 15);
    Outcome {
        id: "6 batch-order invariance",
        pass: Some(gap < 1e-9),
        detail: format!("8 batches of 128, items shuffled within each: max |Δ loss term| {gap:.2e} (< 1e-9)"),
    }
}

/// Serialized checkpoint and test report of a short run.
pub fn short_run_artifacts(seed: u64) -> (String, String) {
    let stream = planted_stream();
    let config = TrainConfig {
        epochs: 2,
        seed,
        ..Default::default()
    };
    let exp = run_experiment(&stream, &config).unwrap();
    let ckpt = Checkpoint::new(&exp.fit.model, &exp.fit.store, &exp.fit.state, &config).with_time_scale(exp.splits.time_scale);
    (ckpt.to_json().unwrap(), serde_json::to_string(&exp.test).unwrap())
}

pub fn criterion_determinism() -> Outcome {
    let (c1, r1) = short_run_artifacts(7);
    let (c2, r2) = short_run_artifacts(7);
    Outcome {
        id: "7 determinism",
        pass: Some(c1 == c2 && r1 == r2),
        detail: format!(
            "two 2-epoch runs with seed 7: checkpoints identical {} ({} bytes), reports identical {}",
            c1 == c2,
            c1.len(),
            r1 == r2
        ),
    }
}

pub fn criterion_dataset() -> Outcome {
    let id = "8 dataset check";
    let Ok(path) = std::env::var("HYPERFLUX_ENRON") else {
        return Outcome {
            id,
            pass: None,
            detail: "skipped: set HYPERFLUX_ENRON to a converted Enron-Email JSONL to run".into(),
        };
    };
    let stream = match parse_jsonl(std::path::Path::new(&path)) {
        Ok(s) => s,
        Err(e) => {
            return Outcome {
                id,
                pass: Some(false),
                detail: format!("could not read {path}: {e}"),
            }
        }
    };
    let stats = StreamStats::of(&stream);
    let config = TrainConfig::default();
    let exp = run_experiment(&stream, &config).unwrap();
    Outcome {
        id,
        pass: Some(stats.nodes == 183 && stats.hyperedges == 10_311 && exp.test.mrr >= 0.45),
        detail: format!(
            "|V| {} (183), hyperedges {} (10311), test MRR {:.4} (>= 0.45)",
            stats.nodes, stats.hyperedges, exp.test.mrr
        ),
    }
}

fn epoch_seconds(stream: &EventStream, batch_size: usize) -> f64 {
    let config = TrainConfig {
        epochs: 1,
        batch_size,
        ..Default::default()
    };
    let start = Instant::now();
    fit(stream, None, &config).unwrap();
    start.elapsed().as_secs_f64()
}

pub fn criterion_batch_timing() -> Outcome {
    let stream = planted_stream();
    let (train, _, _) = hyperflux::stream::chronological_split(&stream, [0.5, 0.25, 0.25]).unwrap();
    let t128 = epoch_seconds(&train, 128);
    let t32 = epoch_seconds(&train, 32);
    Outcome {
        id: "9 batch-size timing",
        pass: None,
        detail: format!(
            "one epoch: B=128 {t128:.2}s, B=32 {t32:.2}s (ratio {:.2}; expected <= 1.10, recorded only)",
            t128 / t32
        ),
    }
}

/// Memory after warm replay of `prefix`, for comparisons with training.
pub fn replayed(model: &Model, store: &ParamStore, prefix: &EventStream, batch: usize) -> hyperflux::memory::MemoryState {
    warm_replay(model, store, model.new_state(), prefix, batch).unwrap()
}

/// Candidates proposed by the event nodes of `split` (deduplicated per
/// event) and how many of them equal one of that event's hyperedges.
pub fn candidate_matches(model: &Model, store: &ParamStore, prefix: &EventStream, split: &EventStream, config: &TrainConfig) -> (usize, usize) {
    let mut state = replayed(model, store, prefix, config.batch_size);
    let mut g = rng(0);
    let (mut hits, mut total) = (0, 0);
    for refs in batch_iter(split, config.batch_size).unwrap() {
        let items = prepare_items(split, &refs, state.last_time(), 0, &mut g).unwrap();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, store, &state, &items).unwrap();
        if let (Some(tr), Some(tl), Some(kr), Some(kl)) = (fwd.theta_right, fwd.theta_left, fwd.kappa_right, fwd.kappa_left) {
            let mut per_item: BTreeMap<usize, Vec<DirectedHyperedge>> = BTreeMap::new();
            for (row, en) in fwd.event_nodes.iter().enumerate() {
                let c = candidate_for_node(
                    en.node,
                    tape.value(tr).row(row),
                    tape.value(tl).row(row),
                    tape.value(kr).row(row),
                    tape.value(kl).row(row),
                )
                .unwrap();
                per_item.entry(en.item).or_default().push(c);
            }
            for (item, cands) in per_item {
                let event = &split.events()[refs[item].event];
                for c in generate_candidates(cands) {
                    total += 1;
                    hits += usize::from(event.hyperedges.contains(&c));
                }
            }
        }
        model.finish_batch(&tape, &fwd, &mut state, &items);
    }
    (hits, total)
}

/// Forecasts after every `step` hyperedges of `split`; counts how often the
/// highest-scored candidate follows the planted rule of `synth`.
pub fn forecast_planted(model: &Model, store: &ParamStore, prefix: &EventStream, split: &EventStream, step: usize, synth: &SynthConfig) -> (usize, usize) {
    let mut state = replayed(model, store, prefix, step);
    let flagged = flagged_count(prefix);
    let (mut hits, mut total) = (0, 0);
    for refs in batch_iter(split, step).unwrap() {
        let mut probe = state.clone();
        let rows = forecast(model, store, &mut probe, flagged).unwrap();
        let top = rows
            .iter()
            .filter(|r| r.score.is_some())
            .max_by(|a, b| a.score.unwrap().total_cmp(&b.score.unwrap()))
            .unwrap();
        total += 1;
        hits += usize::from(synth.follows_planted_rule(&top.candidate().unwrap().unwrap()));
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
        let fwd = model.forward(&mut tape, store, &state, &items).unwrap();
        model.finish_batch(&tape, &fwd, &mut state, &items);
    }
    (hits, total)
}
