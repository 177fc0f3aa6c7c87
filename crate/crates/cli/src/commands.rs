use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hyperflux::checkpoint::Checkpoint;
use hyperflux::forecast::{flagged_count, forecast, to_jsonl};
use hyperflux::metrics::MetricsReport;
use hyperflux::stream::{generate_synthetic, parse_jsonl, write_jsonl, EventStream, StreamStats};
use hyperflux::train::{evaluate_after, fit, loss_curve_csv, warm_replay, Splits};
use serde::Serialize;
use serde_json::Value;

use crate::config::{RunArgs, RunConfig, SynthArgs};
use crate::failure::Failure;

fn load_dataset(path: Option<&Path>) -> Result<EventStream, Failure> {
    let path = path.ok_or_else(|| Failure::usage("no dataset given (--dataset or \"dataset\" in the config)"))?;
    if !path.is_file() {
        return Err(Failure::usage(format!("dataset not found: {}", path.display())));
    }
    parse_jsonl(path).map_err(|e| Failure::from(e).context(path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| Failure::from(e).context(path.display()))
}

/// Rejects datasets whose node range or size caps differ from the model's.
fn check_shape(ckpt: &Checkpoint, stream: &EventStream) -> Result<(), Failure> {
    let d = &ckpt.dims;
    if (stream.node_count(), stream.kr_max(), stream.kl_max()) != (d.node_count, d.kr_max, d.kl_max) {
        return Err(Failure::new(
            crate::failure::code::GENERIC,
            format!(
                "dataset has {} nodes and size caps ({}, {}); the checkpoint expects {} nodes and ({}, {})",
                stream.node_count(),
                stream.kr_max(),
                stream.kl_max(),
                d.node_count,
                d.kr_max,
                d.kl_max
            ),
        ));
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    create_parent(path)?;
    fs::write(path, contents).map_err(|e| Failure::from(e).context(path.display()))
}

pub fn train(args: &RunArgs) -> Result<(), Failure> {
    let config = args.resolve()?;
    let stream = load_dataset(config.dataset.as_deref())?;
    let splits = Splits::new(&stream, config.train.split)?;
    log::info!(
        "training on {} hyperedges, validating on {}",
        splits.train.hyperedge_count(),
        splits.validation.hyperedge_count()
    );
    let out = fit(&splits.train, Some(&splits.validation), &config.train)?;
    let ckpt = Checkpoint::new(&out.model, &out.store, &out.state, &config.train).with_time_scale(splits.time_scale);

    let report_dir = config.report_dir();
    let ckpt_path = config.checkpoint_path();
    create_parent(&ckpt_path)?;
    ckpt.save(&ckpt_path).map_err(|e| Failure::from(e).context(ckpt_path.display()))?;
    write_file(&report_dir.join("loss_curve.csv"), &loss_curve_csv(&out.log))?;
    write_file(&report_dir.join("config.json"), &serde_json::to_string_pretty(&config)?)?;
    log::info!("best epoch {}; checkpoint written to {}", out.best_epoch, ckpt_path.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    fn label(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// JSON run configuration, read for its paths only.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

/// Paths from `--config`, overridden by flags.
fn paths(
    config: &Option<PathBuf>,
    dataset: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    report_dir: &Option<PathBuf>,
) -> Result<RunConfig, Failure> {
    let args = RunArgs {
        config: config.clone(),
        dataset: dataset.clone(),
        checkpoint: checkpoint.clone(),
        report_dir: report_dir.clone(),
        epochs: None,
        batch_size: None,
        lr: None,
        d: None,
        negatives: None,
        s_t: None,
        cache_depth: None,
        heads: None,
        seed: None,
        split: None,
    };
    args.resolve()
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    split: SplitName,
    config: &'a RunConfig,
    time_scale: f64,
    metrics: &'a MetricsReport,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Metrics table preceded by one `config,<key>,<value>` row per setting.
fn report_csv(config: &RunConfig, metrics: &MetricsReport) -> Result<String, Failure> {
    let Value::Object(map) = serde_json::to_value(config)? else {
        unreachable!("config serializes to an object");
    };
    let mut out = metrics.to_csv();
    for (k, v) in map {
        let v = match v {
            Value::String(s) => s,
            Value::Null => String::new(),
            other => other.to_string(),
        };
        out.push_str(&format!("config,{},{}\n", csv_field(&k), csv_field(&v)));
    }
    Ok(out)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let mut config = paths(&args.config, &args.dataset, &args.checkpoint, &args.report_dir)?;
    let ckpt_path = config.checkpoint_path();
    let ckpt = load_checkpoint(&ckpt_path)?;
    let stream = load_dataset(config.dataset.as_deref())?;
    check_shape(&ckpt, &stream)?;
    let (model, store) = ckpt.restore()?;
    config.train = ckpt.config.clone();
    config.checkpoint = Some(ckpt_path);

    let splits = Splits::with_time_scale(&stream, ckpt.config.split, ckpt.time_scale)?;
    let (prefix, split) = match args.split {
        SplitName::Train => (splits.train.slice(0..0), &splits.train),
        SplitName::Validation => (splits.train.clone(), &splits.validation),
        SplitName::Test => (splits.before_test()?, &splits.test),
    };
    let (metrics, _) = evaluate_after(&model, &store, &prefix, split, &ckpt.config)?;
    let metrics = metrics.with_time_scale(ckpt.time_scale);

    let report = EvaluationReport {
        split: args.split,
        config: &config,
        time_scale: ckpt.time_scale,
        metrics: &metrics,
    };
    let dir = config.report_dir();
    let stem = format!("metrics_{}", args.split.label());
    write_file(&dir.join(format!("{stem}.json")), &serde_json::to_string_pretty(&report)?)?;
    write_file(&dir.join(format!("{stem}.csv")), &report_csv(&config, &metrics)?)?;
    println!("{} MRR {:.4}", args.split.label(), metrics.mrr);
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Replay the whole dataset and forecast past its last event. Without
    /// it, forecasts start from the checkpoint's memory at the end of the
    /// training split.
    #[arg(long)]
    pub at_end: bool,
    /// Destination JSONL; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn forecast_cmd(args: &ForecastArgs) -> Result<(), Failure> {
    let config = paths(&args.config, &args.dataset, &args.checkpoint, &None)?;
    let ckpt = load_checkpoint(&config.checkpoint_path())?;
    let stream = load_dataset(config.dataset.as_deref())?;
    check_shape(&ckpt, &stream)?;
    let (model, store) = ckpt.restore()?;
    let mut state = if args.at_end {
        let rescaled = stream.rescaled(ckpt.time_scale)?;
        warm_replay(&model, &store, model.new_state(), &rescaled, ckpt.config.batch_size)?
    } else {
        ckpt.state.clone()
    };
    let mut rows = forecast(&model, &store, &mut state, flagged_count(&stream))?;
    for r in &mut rows {
        r.delta_t *= ckpt.time_scale;
    }
    let text = to_jsonl(&rows)?;
    match &args.output {
        Some(path) => write_file(path, &text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let config = args.resolve()?;
    let stream = generate_synthetic(&config)?;
    create_parent(&args.output)?;
    write_jsonl(&stream, &args.output)?;
    println!(
        "wrote {} hyperedges over {} nodes to {}",
        stream.hyperedge_count(),
        stream.node_count(),
        args.output.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

pub fn inspect(args: &InspectArgs) -> Result<(), Failure> {
    let stream = load_dataset(Some(&args.dataset))?;
    let stats = StreamStats::of(&stream);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print!("{}", stats.to_table());
    }
    Ok(())
}
