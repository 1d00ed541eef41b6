//! Runs the multi-relation encoder once over an interaction log and reports
//! the size of every relation-specific representation and of the fused
//! tables, plus the learned in/out attention split.
//!
//! cargo run --release --example encode_relations -- data/ml-100k/ratings.tsv

use std::path::PathBuf;

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdrec::cli::Prepared;
use ssdrec::config::RunConfig;
use ssdrec::encoder::{encode, EncoderParams, GraphOperators};
use ssdrec::relgraph::MultiRelationGraph;
use ssdrec::tensor::{Mat, ParamStore, Tape};

fn mean_row_norm(m: &Mat<f32>) -> f32 {
    let rows = m.nrows().saturating_sub(1).max(1) as f32;
    m.axis_iter(Axis(0)).skip(1).map(|r| r.dot(&r).sqrt()).sum::<f32>() / rows
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut cfg = RunConfig::default();
    if let Some(path) = std::env::args().nth(1) {
        cfg.data_path = PathBuf::from(path);
    }
    let data = Prepared::load(&cfg)?;
    let graph = MultiRelationGraph::build(&data.train_prefixes(), data.num_users, data.num_items, &cfg.graph)?;
    let d = cfg.model.encoder.dim;
    let mut store = ParamStore::<f32>::new();
    let ids = EncoderParams::init(&mut store, data.num_users, data.num_items, d, &mut ChaCha8Rng::seed_from_u64(0));
    let ops = GraphOperators::new(&graph, &cfg.model.encoder);

    let tape = Tape::new();
    let p = store.bind_constant(&tape);
    let enc = encode(&tape, &p, &ids, &ops);
    let i = enc.intermediates;
    for (name, v) in [
        ("item transitional", i.item_transitional),
        ("item incompatible", i.item_incompatible),
        ("item interactional", i.item_interactional),
        ("user interactional", i.user_interactional),
        ("user similar", i.user_similar),
        ("user dissimilar", i.user_dissimilar),
        ("fused items", enc.items),
        ("fused users", enc.users),
    ] {
        let m = tape.to_owned(v);
        println!("{name:>20}: {:>5} x {:<4} mean row norm {:.4}", m.nrows(), m.ncols(), mean_row_norm(&m));
    }
    let att = tape.to_owned(i.attention);
    let incoming = att.column(0).iter().skip(1).sum::<f32>() / data.num_items as f32;
    println!("mean attention on incoming transitions {incoming:.4}");
    Ok(())
}
