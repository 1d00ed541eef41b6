//! Builds the five-relation graph from an interaction log and prints its size.
//!
//! cargo run --example build_graph -- data/ml-100k/ratings.tsv [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use ssdrec::dataio::{build_sequences, leave_one_out_split, load_interactions, SequenceConfig};
use ssdrec::relgraph::{GraphConfig, MultiRelationGraph, RelationKind};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let input = PathBuf::from(args.next().unwrap_or_else(|| "data/ml-100k/ratings.tsv".into()));
    let out = args.next().map(PathBuf::from);

    let log = load_interactions(&input, '\t')?;
    let ds = build_sequences(&log.records, &SequenceConfig::default())?;
    let (splits, _) = leave_one_out_split(&ds.sequences);
    let train: Vec<_> = splits.iter().map(|s| s.train_prefix.clone()).collect();

    let start = Instant::now();
    let graph = MultiRelationGraph::build(&train, ds.num_users, ds.num_items, &GraphConfig::default())?;
    println!("built in {:.2?} for {} users / {} items", start.elapsed(), ds.num_users, ds.num_items);
    for kind in RelationKind::ALL {
        let list = graph.relation(kind);
        let mean = list.edges.iter().map(|e| e.weight).sum::<f64>() / list.len().max(1) as f64;
        println!("{kind:>16}: {:>8} edges, mean weight {mean:.4}", list.len());
    }
    println!(
        "popular: {} items, {} users",
        graph.partition.popular_items.len(),
        graph.partition.popular_users.len()
    );
    if let Some(dir) = out {
        graph.save(&dir)?;
        println!("saved to {}", dir.display());
    }
    Ok(())
}
