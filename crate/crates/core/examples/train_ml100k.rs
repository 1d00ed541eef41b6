//! Trains the pipeline on an interaction log and reports test metrics at the
//! best validation epoch.
//!
//! cargo run --example train_ml100k -- --prefixes 4 --epochs 30

use std::path::PathBuf;

use clap::Parser;
use ssdrec::dataio::{build_sequences, leave_one_out_split, load_interactions, SequenceConfig};
use ssdrec::model::{mean_length, Model, ModelConfig};
use ssdrec::relgraph::{GraphConfig, MultiRelationGraph};
use ssdrec::trainer::{drop_ratio, evaluate, test_cases, train, EncodingRefresh, TrainConfig};

#[derive(Parser)]
struct Args {
    #[arg(default_value = "data/ml-100k/ratings.tsv")]
    input: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Random training prefixes per user and epoch (all when omitted).
    #[arg(long)]
    prefixes: Option<usize>,
    #[arg(long, default_value = "per_step")]
    refresh: EncodingRefresh,
    #[arg(long, default_value = "inconsistency_gate")]
    denoiser: String,
    #[arg(long, default_value = "attention")]
    backbone: String,
    #[arg(long)]
    no_augmentation: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let log = load_interactions(&args.input, '\t')?;
    let ds = build_sequences(&log.records, &SequenceConfig::default())?;
    let (splits, _) = leave_one_out_split(&ds.sequences);
    let train_seqs: Vec<_> = splits.iter().map(|s| s.train_prefix.clone()).collect();
    let graph = MultiRelationGraph::build(&train_seqs, ds.num_users, ds.num_items, &GraphConfig::default())?;

    let lengths: Vec<Vec<usize>> = train_seqs.iter().map(|s| s.items.clone()).collect();
    let model_cfg = ModelConfig {
        backbone: args.backbone,
        denoiser: args.denoiser,
        augmentation: !args.no_augmentation,
        ..Default::default()
    };
    let mut model = Model::<f32>::new(&graph, model_cfg, mean_length(&lengths), args.seed)?;
    let cfg = TrainConfig {
        max_epochs: args.epochs,
        prefixes_per_user: args.prefixes,
        refresh: args.refresh,
        seed: args.seed,
        patience: args.patience,
        ..Default::default()
    };
    let outcome = train(&mut model, &splits, &cfg, |_| Ok(()))?;
    let reps = model.encode_tables();
    let test = evaluate(&model, &reps, &test_cases(&splits), false, 256)?;
    let histories: Vec<(usize, Vec<usize>)> = splits.iter().map(|s| (s.train_prefix.user_index, s.test_input())).collect();
    println!("best epoch {} of {}", outcome.best_epoch, outcome.epochs_run);
    println!("test {}", serde_json::to_string(&test)?);
    println!("drop ratio {:.4}", drop_ratio(&model, &reps, &histories, 256)?);
    println!(
        "gate weight {:?} bias {:?}",
        model.store.get(model.gate.weight).as_slice(),
        model.store.get(model.gate.bias).as_slice()
    );
    Ok(())
}
