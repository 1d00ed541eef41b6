//! Experiment commands over run directories.
//!
//! A run directory holds `config.txt` (the effective configuration),
//! `graph/` (edge files and manifest), `params.bin` (best checkpoint),
//! `log.jsonl` (one JSON object per epoch, evaluation and OUP measurement)
//! and `report.json` (test metrics at the best epoch).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataio::{build_sequences, inject_noise, leave_one_out_split, load_interactions, SplitTriplet, UserSequence};
use crate::error::{Error, Result};
use crate::model::{mean_length, Model};
use crate::relgraph::MultiRelationGraph;
use crate::trainer::{self, EpochLog, EvalReport, OupReport};

#[derive(Debug, Parser)]
#[command(name = "ssdrec", about = "Self-augmented sequence denoising experiments")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Seed for training, or for noise injection with `oups`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build and persist the relation graph of the training prefixes.
    BuildGraph { out_dir: PathBuf },
    /// Train a model into a new run directory.
    Train { run_dir: PathBuf },
    /// Evaluate the best checkpoint of a run on the test split.
    Eval { run_dir: PathBuf },
    /// Measure under- and over-denoising on noise-injected short sequences.
    Oups {
        run_dir: PathBuf,
        #[arg(long)]
        noise_ratio: Option<f64>,
    },
    /// Render the validation curve and a metrics table.
    Plot { run_dir: PathBuf },
}

/// Process exit status for an error: 3 for corrupt run state, 2 otherwise
/// for bad input, 1 for training failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Checkpoint { .. } => 3,
        Error::NonFiniteLoss { .. } => 1,
        _ => 2,
    }
}

/// One line of `log.jsonl`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Epoch(EpochLog),
    Eval(EvalReport),
    Oups(OupReport),
}

fn corrupt(path: &Path, detail: impl ToString) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), detail: detail.to_string() }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn append_log(run_dir: &Path, entry: &LogEntry) -> Result<()> {
    let path = run_dir.join("log.jsonl");
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    let line = serde_json::to_string(entry).expect("log entries serialise");
    writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
}

pub fn read_log(run_dir: &Path) -> Result<Vec<LogEntry>> {
    let path = run_dir.join("log.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| corrupt(&path, format!("line {}: {e}", n + 1))))
        .collect()
}

/// Refuses a non-empty directory unless `force`, then makes sure it exists.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() {
            if !force {
                return Err(Error::InvalidArgument(format!(
                    "{} is not empty (use --force to overwrite)",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Sequences and leave-one-out splits described by a configuration.
pub struct Prepared {
    pub num_users: usize,
    pub num_items: usize,
    pub sequences: Vec<UserSequence>,
    pub splits: Vec<SplitTriplet>,
}

impl Prepared {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let mut log = load_interactions(&cfg.data_path, cfg.delimiter)?;
        if let Some(t) = cfg.min_rating {
            log.records.retain(|r| r.rating.is_none_or(|x| x >= t));
        }
        let ds = build_sequences(&log.records, &cfg.sequences)?;
        let (splits, _) = leave_one_out_split(&ds.sequences);
        if splits.is_empty() {
            return Err(Error::InvalidArgument("no sequence is long enough to split".into()));
        }
        Ok(Self { num_users: ds.num_users, num_items: ds.num_items, sequences: ds.sequences, splits })
    }

    pub fn train_prefixes(&self) -> Vec<UserSequence> {
        self.splits.iter().map(|s| s.train_prefix.clone()).collect()
    }

    pub fn mean_train_length(&self) -> f64 {
        let lengths: Vec<Vec<usize>> = self.splits.iter().map(|s| s.train_prefix.items.clone()).collect();
        mean_length(&lengths)
    }
}

fn load_config(cli: &Cli, base: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match (base, &cli.config) {
        (Some(run_dir), _) => {
            let path = run_dir.join("config.txt");
            if !run_dir.is_dir() {
                return Err(Error::InvalidArgument(format!("{} is not a run directory", run_dir.display())));
            }
            let text = fs::read_to_string(&path).map_err(|e| corrupt(&path, e))?;
            let mut cfg = RunConfig::default();
            cfg.apply_text(&text).map_err(|e| corrupt(&path, e))?;
            cfg
        }
        (None, Some(path)) => RunConfig::from_file(path)?,
        (None, None) => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

/// A trained model restored from a run directory, with its data.
pub struct LoadedRun {
    pub config: RunConfig,
    pub data: Prepared,
    pub model: Model<f32>,
}

pub fn load_run(run_dir: &Path, cfg: RunConfig) -> Result<LoadedRun> {
    let data = Prepared::load(&cfg)?;
    let graph_dir = run_dir.join("graph");
    let graph = MultiRelationGraph::load(&graph_dir).map_err(|e| corrupt(&graph_dir, e))?;
    if (graph.num_users, graph.num_items) != (data.num_users, data.num_items) {
        return Err(corrupt(&graph_dir, "graph size does not match the dataset"));
    }
    let mut model = Model::new(&graph, cfg.model.clone(), data.mean_train_length(), cfg.train.seed)?;
    let params = run_dir.join("params.bin");
    let bytes = fs::read(&params).map_err(|e| corrupt(&params, e))?;
    model.store.load_bytes(&bytes).map_err(|e| corrupt(&params, e))?;
    Ok(LoadedRun { config: cfg, data, model })
}

pub fn cmd_build_graph(cfg: &RunConfig, out_dir: &Path, force: bool) -> Result<MultiRelationGraph> {
    let data = Prepared::load(cfg)?;
    prepare_dir(out_dir, force)?;
    let graph = MultiRelationGraph::build(&data.train_prefixes(), data.num_users, data.num_items, &cfg.graph)?;
    graph.save(out_dir)?;
    Ok(graph)
}

pub fn cmd_train(cfg: &RunConfig, run_dir: &Path, force: bool) -> Result<EvalReport> {
    let data = Prepared::load(cfg)?;
    prepare_dir(run_dir, force)?;
    write_file(&run_dir.join("config.txt"), cfg.to_text().as_bytes())?;
    let graph = MultiRelationGraph::build(&data.train_prefixes(), data.num_users, data.num_items, &cfg.graph)?;
    graph.save(&run_dir.join("graph"))?;
    let mut model = Model::<f32>::new(&graph, cfg.model.clone(), data.mean_train_length(), cfg.train.seed)?;
    let outcome = trainer::train(&mut model, &data.splits, &cfg.train, |e| append_log(run_dir, &LogEntry::Epoch(e.clone())))?;
    write_file(&run_dir.join("params.bin"), &model.store.to_bytes())?;
    let reps = model.encode_tables();
    let mut report = trainer::evaluate(
        &model,
        &reps,
        &trainer::test_cases(&data.splits),
        cfg.train.filter_seen,
        cfg.train.eval_batch_size,
    )?;
    report.epoch = Some(outcome.best_epoch);
    report.split = "test".into();
    append_log(run_dir, &LogEntry::Eval(report.clone()))?;
    let json = serde_json::to_string_pretty(&report).expect("reports serialise");
    write_file(&run_dir.join("report.json"), json.as_bytes())?;
    Ok(report)
}

pub fn cmd_eval(run_dir: &Path, cfg: RunConfig) -> Result<EvalReport> {
    let run = load_run(run_dir, cfg)?;
    let reps = run.model.encode_tables();
    let cases = trainer::test_cases(&run.data.splits);
    let mut report =
        trainer::evaluate(&run.model, &reps, &cases, run.config.train.filter_seen, run.config.train.eval_batch_size)?;
    report.split = "test".into();
    append_log(run_dir, &LogEntry::Eval(report.clone()))?;
    Ok(report)
}

/// Test inputs of users whose training prefix is shorter than the model's
/// augmentation threshold, with their complete histories.
pub fn short_sequences(data: &Prepared, short_threshold: f64) -> (Vec<UserSequence>, Vec<Vec<usize>>) {
    let mut seqs = Vec::new();
    let mut histories = Vec::new();
    for (s, full) in data.splits.iter().zip(&data.sequences) {
        if (s.train_prefix.items.len() as f64) < short_threshold {
            seqs.push(UserSequence::new(s.train_prefix.user_index, s.test_input()));
            histories.push(full.items.clone());
        }
    }
    (seqs, histories)
}

pub fn cmd_oups(run_dir: &Path, cfg: RunConfig, noise_ratio: f64, seed: u64) -> Result<OupReport> {
    let run = load_run(run_dir, cfg)?;
    let (seqs, histories) = short_sequences(&run.data, run.model.short_threshold);
    let view = inject_noise(&seqs, run.data.num_items, noise_ratio, seed, Some(&histories))?;
    let reps = run.model.encode_tables();
    let report = trainer::oups_metrics(&run.model, &reps, &view, run.config.train.eval_batch_size)?;
    append_log(run_dir, &LogEntry::Oups(report.clone()))?;
    Ok(report)
}

/// Polyline chart of validation HR@20 per epoch.
pub fn render_curve(points: &[(usize, f64)]) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let max_epoch = points.iter().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let max_y = points.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.1;
    let xy = |e: usize, v: f64| {
        let x = pad + (e as f64 - 1.0).max(0.0) / (max_epoch - 1.0).max(1.0) * (w - 2.0 * pad);
        let y = h - pad - v / max_y * (h - 2.0 * pad);
        (x, y)
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"14\">epoch</text>\n\
         <text x=\"14\" y=\"{cy}\" font-size=\"14\" transform=\"rotate(-90 14 {cy})\" text-anchor=\"middle\">valid HR@20</text>\n\
         <text x=\"{lx}\" y=\"{top}\" font-size=\"11\" text-anchor=\"end\">{max_y:.3}</text>\n",
        b = h - pad,
        r = w - pad,
        cx = w / 2.0,
        ty = h - 12.0,
        cy = h / 2.0,
        lx = pad - 4.0,
        top = pad + 4.0,
    );
    let path: Vec<String> = points
        .iter()
        .map(|&(e, v)| {
            let (x, y) = xy(e, v);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
        path.join(" ")
    ));
    for &(e, v) in points {
        let (x, y) = xy(e, v);
        svg.push_str(&format!("<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"steelblue\"/>\n"));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Markdown table of per-epoch validation metrics and later reports.
pub fn render_table(entries: &[LogEntry]) -> String {
    let mut out = String::from("| kind | epoch | hr@5 | hr@10 | hr@20 | ndcg@5 | ndcg@10 | ndcg@20 | mrr@20 |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    let row = |kind: &str, epoch: Option<usize>, r: &EvalReport| {
        format!(
            "| {kind} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            epoch.map_or("-".to_string(), |e| e.to_string()),
            r.hr5,
            r.hr10,
            r.hr20,
            r.ndcg5,
            r.ndcg10,
            r.ndcg20,
            r.mrr20
        )
    };
    let mut oups = Vec::new();
    for e in entries {
        match e {
            LogEntry::Epoch(l) => out.push_str(&row("valid", Some(l.epoch), &l.valid)),
            LogEntry::Eval(r) => out.push_str(&row(&r.split, r.epoch, r)),
            LogEntry::Oups(o) => oups.push(o),
        }
    }
    if !oups.is_empty() {
        out.push_str("\n| under_ratio | over_ratio | injected | original |\n|---|---|---|---|\n");
        for o in oups {
            out.push_str(&format!("| {:.4} | {:.4} | {} | {} |\n", o.under_ratio, o.over_ratio, o.injected, o.original));
        }
    }
    out
}

pub fn cmd_plot(run_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let entries = read_log(run_dir)?;
    let points: Vec<(usize, f64)> = entries
        .iter()
        .filter_map(|e| match e {
            LogEntry::Epoch(l) => Some((l.epoch, l.valid.hr20)),
            _ => None,
        })
        .collect();
    let svg = run_dir.join("valid_hr20.svg");
    let table = run_dir.join("metrics.md");
    write_file(&svg, render_curve(&points).as_bytes())?;
    write_file(&table, render_table(&entries).as_bytes())?;
    Ok((svg, table))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("reports serialise")
}

/// Runs one command; returns the text printed on success.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::BuildGraph { out_dir } => {
            let cfg = load_config(cli, None)?;
            let graph = cmd_build_graph(&cfg, out_dir, cli.force)?;
            Ok(json(&graph.manifest()))
        }
        Command::Train { run_dir } => {
            let mut cfg = load_config(cli, None)?;
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            Ok(json(&cmd_train(&cfg, run_dir, cli.force)?))
        }
        Command::Eval { run_dir } => {
            let cfg = load_config(cli, Some(run_dir))?;
            Ok(json(&cmd_eval(run_dir, cfg)?))
        }
        Command::Oups { run_dir, noise_ratio } => {
            let cfg = load_config(cli, Some(run_dir))?;
            let ratio = noise_ratio.unwrap_or(cfg.noise_ratio);
            let seed = cli.seed.unwrap_or(cfg.train.seed);
            Ok(json(&cmd_oups(run_dir, cfg, ratio, seed)?))
        }
        Command::Plot { run_dir } => {
            let (svg, table) = cmd_plot(run_dir)?;
            Ok(format!("{}\n{}", svg.display(), table.display()))
        }
    }
}
