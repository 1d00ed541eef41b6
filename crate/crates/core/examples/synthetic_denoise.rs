//! Trains the full pipeline and the plain backbone on synthetic sequences
//! with planted noise, then reports ranking quality and how many planted
//! items each keeps.
//!
//! Users walk through one of several item groups in order; the training
//! prefixes get 20% random items from anywhere in the catalogue.
//!
//! cargo run --release --example synthetic_denoise -- [epochs]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssdrec::dataio::{inject_noise, leave_one_out_split, UserSequence};
use ssdrec::model::{mean_length, Model, ModelConfig};
use ssdrec::relgraph::{GraphConfig, MultiRelationGraph};
use ssdrec::trainer::{evaluate, keep_decisions, test_cases, train, OupReport, TrainConfig};

const USERS: usize = 300;
const GROUPS: usize = 6;
const GROUP_SIZE: usize = 10;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let epochs: usize = std::env::args().nth(1).map_or(Ok(15), |a| a.parse())?;
    let num_items = GROUPS * GROUP_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clean: Vec<UserSequence> = (1..=USERS)
        .map(|u| {
            let g = rng.gen_range(0..GROUPS);
            let start = rng.gen_range(0..GROUP_SIZE);
            let n = rng.gen_range(8..=16);
            UserSequence::new(u, (0..n).map(|t| g * GROUP_SIZE + (start + t) % GROUP_SIZE + 1).collect())
        })
        .collect();
    let (mut splits, _) = leave_one_out_split(&clean);
    let prefixes: Vec<UserSequence> = splits.iter().map(|s| s.train_prefix.clone()).collect();
    let noisy = inject_noise(&prefixes, num_items, 0.2, 7, None)?;
    for (s, p) in splits.iter_mut().zip(&noisy.sequences) {
        s.train_prefix = p.clone();
    }
    let graph = MultiRelationGraph::build(&noisy.sequences, USERS, num_items, &GraphConfig::default())?;
    let lengths: Vec<Vec<usize>> = noisy.sequences.iter().map(|s| s.items.clone()).collect();

    println!("{:<22} {:>7} {:>7} {:>12} {:>12}", "model", "hr@10", "ndcg@10", "under ratio", "over ratio");
    for (name, denoiser, augmentation) in [("full pipeline", "inconsistency_gate", true), ("plain backbone", "all_keep", false)] {
        let mut config = ModelConfig { denoiser: denoiser.into(), augmentation, max_positions: 24, ..Default::default() };
        config.encoder.dim = 32;
        let mut model = Model::<f32>::new(&graph, config, mean_length(&lengths), 3)?;
        let cfg = TrainConfig { max_epochs: epochs, batch_size: 128, learning_rate: 3e-3, seed: 3, ..Default::default() };
        train(&mut model, &splits, &cfg, |_| Ok(()))?;
        let reps = model.encode_tables();
        let test = evaluate(&model, &reps, &test_cases(&splits), false, 256)?;
        let seqs: Vec<(usize, Vec<usize>)> = noisy.sequences.iter().map(|s| (s.user_index, s.items.clone())).collect();
        let kept = keep_decisions(&model, &reps, &seqs, 256)?;
        let oups = OupReport::from_decisions(&kept, &noisy.injected_mask);
        println!(
            "{name:<22} {:>7.4} {:>7.4} {:>12.4} {:>12.4}",
            test.hr10, test.ndcg10, oups.under_ratio, oups.over_ratio
        );
    }
    Ok(())
}
