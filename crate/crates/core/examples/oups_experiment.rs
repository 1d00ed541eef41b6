//! Under- and over-denoising of a trained run on noise-injected short
//! sequences, across noise ratios and drop thresholds.
//!
//! cargo run --release --bin ssdrec -- train runs/full
//! cargo run --release --example oups_experiment -- runs/full

use std::path::PathBuf;

use ssdrec::cli::{load_run, short_sequences};
use ssdrec::config::RunConfig;
use ssdrec::dataio::inject_noise;
use ssdrec::trainer::oups_metrics;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let run_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/full".into()));
    let mut cfg = RunConfig::default();
    cfg.apply_text(&std::fs::read_to_string(run_dir.join("config.txt"))?)?;
    let mut run = load_run(&run_dir, cfg)?;
    let reps = run.model.encode_tables();
    let (seqs, histories) = short_sequences(&run.data, run.model.short_threshold);
    println!("{} short sequences (threshold {:.2})", seqs.len(), run.model.short_threshold);

    let denoiser = run.model.config.denoiser.clone();
    println!("{:>6} {:>10} {:>12} {:>12}", "noise", "threshold", "under ratio", "over ratio");
    for ratio in [0.1, 0.2, 0.3] {
        let view = inject_noise(&seqs, run.data.num_items, ratio, run.config.train.seed, Some(&histories))?;
        for threshold in [0.5, 0.2, 0.1, 0.05] {
            run.model.set_denoiser(&denoiser, threshold)?;
            let r = oups_metrics(&run.model, &reps, &view, 256)?;
            println!("{ratio:>6} {threshold:>10} {:>12.4} {:>12.4}", r.under_ratio, r.over_ratio);
        }
    }
    Ok(())
}
