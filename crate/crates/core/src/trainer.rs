//! Training loop, full-ranking evaluation and denoising measurements.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{Relaxation, TauSchedule};
use crate::dataio::{NoisyDatasetView, SplitTriplet};
use crate::denoise::Mode;
use crate::encoder::{encode, MultiRelationReps};
use crate::error::{Error, Result};
use crate::model::{BatchItem, Model, PassOptions};
use crate::recommend::loss;
use crate::tensor::{AdamConfig, Adam, Real, Tape};

/// When the full-graph encoding is recomputed during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingRefresh {
    /// Encoded on every step; gradients flow into the encoder every step.
    PerStep,
    /// Encoded once per epoch and held fixed; the gradients with respect to
    /// the cached tables are accumulated and pushed through the encoder in one
    /// update at the end of the epoch.
    PerEpoch,
}

impl std::str::FromStr for EncodingRefresh {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "per_step" => Ok(Self::PerStep),
            "per_epoch" => Ok(Self::PerEpoch),
            _ => Err(Error::Config(format!("unknown encoding refresh {s:?} (per_step | per_epoch)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub tau: TauSchedule,
    pub refresh: EncodingRefresh,
    /// Training prefixes drawn per user and epoch; `None` uses every prefix.
    pub prefixes_per_user: Option<usize>,
    pub seed: u64,
    /// Remove items of the input sequence from the ranking (target excepted).
    pub filter_seen: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            l2: 0.0,
            max_epochs: 200,
            patience: 10,
            tau: TauSchedule::default(),
            refresh: EncodingRefresh::PerEpoch,
            prefixes_per_user: None,
            seed: 2024,
            filter_seen: false,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("eval_batch_size", self.eval_batch_size),
            ("tau.every", self.tau.every),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.prefixes_per_user == Some(0) {
            return Err(Error::Config("prefixes_per_user must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config("learning_rate must be positive and l2 non-negative".into()));
        }
        if !(self.tau.init > 0.0 && self.tau.floor > 0.0 && self.tau.factor > 0.0) {
            return Err(Error::Config("temperatures and the anneal factor must be positive".into()));
        }
        Ok(())
    }
}

/// Ranking metrics over a set of users.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "hr@5")]
    pub hr5: f64,
    #[serde(rename = "hr@10")]
    pub hr10: f64,
    #[serde(rename = "hr@20")]
    pub hr20: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg5: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg10: f64,
    #[serde(rename = "ndcg@20")]
    pub ndcg20: f64,
    #[serde(rename = "mrr@20")]
    pub mrr20: f64,
    pub users: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub split: String,
}

impl EvalReport {
    /// Aggregates 1-based ranks of the targets.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let n = ranks.len().max(1) as f64;
        let hr = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        let ndcg = |k: usize| ranks.iter().filter(|&&r| r <= k).map(|&r| 1.0 / ((r + 1) as f64).log2()).sum::<f64>() / n;
        let mrr = ranks.iter().filter(|&&r| r <= 20).map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        Self {
            hr5: hr(5),
            hr10: hr(10),
            hr20: hr(20),
            ndcg5: ndcg(5),
            ndcg10: ndcg(10),
            ndcg20: ndcg(20),
            mrr20: mrr,
            users: ranks.len(),
            epoch: None,
            split: String::new(),
        }
    }
}

/// 1-based rank of column `target` among the non-excluded columns; ties go
/// to the lower column index.
pub fn rank_of<R: Real>(scores: &[R], target: usize, excluded: &[usize]) -> usize {
    let st = scores[target];
    let mut rank = 1;
    for (j, &s) in scores.iter().enumerate() {
        if j != target && (s > st || (s == st && j < target)) && !excluded.contains(&j) {
            rank += 1;
        }
    }
    rank
}

/// One ranking query: the input sequence and the held-out next item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub input: Vec<usize>,
    pub target: usize,
}

pub fn validation_cases(splits: &[SplitTriplet]) -> Vec<EvalCase> {
    splits
        .iter()
        .map(|s| EvalCase { user: s.train_prefix.user_index, input: s.train_prefix.items.clone(), target: s.valid_target })
        .collect()
}

pub fn test_cases(splits: &[SplitTriplet]) -> Vec<EvalCase> {
    splits
        .iter()
        .map(|s| EvalCase { user: s.train_prefix.user_index, input: s.test_input(), target: s.test_target })
        .collect()
}

/// Full-ranking evaluation in evaluation mode.
pub fn evaluate<R: Real>(
    model: &Model<R>,
    reps: &MultiRelationReps<R>,
    cases: &[EvalCase],
    filter_seen: bool,
    batch_size: usize,
) -> Result<EvalReport> {
    let mut ranks = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(batch_size.max(1)) {
        let batch: Vec<BatchItem> = chunk.iter().map(|c| (c.user, c.input.as_slice())).collect();
        let scores = model.score(reps, &batch)?;
        for (c, row) in chunk.iter().zip(scores.rows()) {
            let row = row.to_vec();
            let excluded: Vec<usize> = if filter_seen {
                c.input.iter().filter(|&&v| v != c.target).map(|&v| v - 1).collect()
            } else {
                Vec::new()
            };
            ranks.push(rank_of(&row, c.target - 1, &excluded));
        }
    }
    Ok(EvalReport::from_ranks(&ranks))
}

/// Under- and over-denoising on sequences with known injected positions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OupReport {
    /// Fraction of injected items that were kept.
    pub under_ratio: f64,
    /// Fraction of original items that were dropped.
    pub over_ratio: f64,
    pub injected: usize,
    pub kept_injected: usize,
    pub original: usize,
    pub dropped_original: usize,
    pub sequences: usize,
}

impl OupReport {
    pub fn from_decisions(kept: &[Vec<bool>], injected: &[Vec<bool>]) -> Self {
        let mut r = Self { sequences: kept.len(), ..Default::default() };
        for (k, m) in kept.iter().zip(injected) {
            for (&keep, &inj) in k.iter().zip(m) {
                if inj {
                    r.injected += 1;
                    r.kept_injected += usize::from(keep);
                } else {
                    r.original += 1;
                    r.dropped_original += usize::from(!keep);
                }
            }
        }
        r.under_ratio = r.kept_injected as f64 / r.injected.max(1) as f64;
        r.over_ratio = r.dropped_original as f64 / r.original.max(1) as f64;
        r
    }
}

/// Evaluation-mode keep decisions for every sequence.
pub fn keep_decisions<R: Real>(
    model: &Model<R>,
    reps: &MultiRelationReps<R>,
    sequences: &[(usize, Vec<usize>)],
    batch_size: usize,
) -> Result<Vec<Vec<bool>>> {
    let mut out = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(batch_size.max(1)) {
        let batch: Vec<BatchItem> = chunk.iter().map(|(u, s)| (*u, s.as_slice())).collect();
        out.extend(model.keep_decisions(reps, &batch)?);
    }
    Ok(out)
}

pub fn oups_metrics<R: Real>(
    model: &Model<R>,
    reps: &MultiRelationReps<R>,
    view: &NoisyDatasetView,
    batch_size: usize,
) -> Result<OupReport> {
    let seqs: Vec<(usize, Vec<usize>)> = view.sequences.iter().map(|s| (s.user_index, s.items.clone())).collect();
    let kept = keep_decisions(model, reps, &seqs, batch_size)?;
    Ok(OupReport::from_decisions(&kept, &view.injected_mask))
}

/// Fraction of positions hard-dropped in evaluation mode.
pub fn drop_ratio<R: Real>(
    model: &Model<R>,
    reps: &MultiRelationReps<R>,
    sequences: &[(usize, Vec<usize>)],
    batch_size: usize,
) -> Result<f64> {
    let kept = keep_decisions(model, reps, sequences, batch_size)?;
    let total: usize = kept.iter().map(Vec::len).sum();
    let dropped = kept.iter().flatten().filter(|&&k| !k).count();
    Ok(dropped as f64 / total.max(1) as f64)
}

/// Patience bookkeeping on a metric that should increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, best_epoch: 0, bad_epochs: 0 }
    }

    /// Records the metric of `epoch`; returns whether it is a new best.
    pub fn update(&mut self, epoch: usize, value: f64) -> bool {
        if self.best.is_none_or(|b| value > b) {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub batches: usize,
    pub tau: f64,
    /// Sequences augmented during the epoch.
    pub augmented: usize,
    /// Insertions removed by refinement during the epoch.
    pub removed_insertions: usize,
    /// Train-mode gate decisions that dropped a position.
    pub gated_drops: usize,
    pub valid: EvalReport,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_valid: EvalReport,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Training samples `(user, input prefix, next item)` for one epoch.
pub fn epoch_samples<G: Rng>(
    splits: &[SplitTriplet],
    prefixes_per_user: Option<usize>,
    rng: &mut G,
) -> Vec<(usize, Vec<usize>, usize)> {
    let mut samples = Vec::new();
    for s in splits {
        let items = &s.train_prefix.items;
        if items.len() < 2 {
            continue;
        }
        let u = s.train_prefix.user_index;
        match prefixes_per_user {
            None => samples.extend((1..items.len()).map(|t| (u, items[..t].to_vec(), items[t]))),
            Some(k) => {
                for _ in 0..k {
                    let t = rng.gen_range(1..items.len());
                    samples.push((u, items[..t].to_vec(), items[t]));
                }
            }
        }
    }
    samples.shuffle(rng);
    samples
}

struct StepStats {
    loss: f64,
    augmented: usize,
    removed: usize,
    gated_drops: usize,
}

/// Trains `model` in place; on return it holds the parameters of the best
/// validation epoch. `on_epoch` sees every epoch log as it is produced.
pub fn train<R: Real>(
    model: &mut Model<R>,
    splits: &[SplitTriplet],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam_cfg = AdamConfig { learning_rate: cfg.learning_rate, weight_decay: cfg.l2, ..Default::default() };
    let mut opt = Adam::new(adam_cfg, &model.store);
    let mut encoder_flag = vec![false; model.store.len()];
    for id in model.encoder_params() {
        encoder_flag[id.index()] = true;
    }
    let rest_flag: Vec<bool> = encoder_flag.iter().map(|f| !f).collect();
    let valid = validation_cases(splits);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_store = model.store.clone();
    let mut best_valid = EvalReport::default();
    let mut global_batch = 0usize;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let samples = epoch_samples(splits, cfg.prefixes_per_user, &mut rng);
        let cached = match cfg.refresh {
            EncodingRefresh::PerEpoch => Some(model.encode_tables()),
            EncodingRefresh::PerStep => None,
        };
        let mut acc_items = cached.as_ref().map(|c| Array2::<R>::zeros(c.items.dim()));
        let mut acc_users = cached.as_ref().map(|c| Array2::<R>::zeros(c.users.dim()));
        let (mut loss_sum, mut batches, mut augmented, mut removed, mut gated_drops) = (0.0, 0, 0, 0, 0);

        for (b, chunk) in samples.chunks(cfg.batch_size).enumerate() {
            let tau = cfg.tau.at(global_batch);
            let batch: Vec<BatchItem> = chunk.iter().map(|s| (s.0, s.1.as_slice())).collect();
            let targets: Vec<usize> = chunk.iter().map(|s| s.2).collect();
            let tape = Tape::new();
            let p = model.store.bind(&tape);
            let (items, users) = match &cached {
                Some(c) => (tape.leaf(c.items.clone()), tape.leaf(c.users.clone())),
                None => {
                    let enc = encode(&tape, &p, &model.encoder, &model.ops);
                    (enc.items, enc.users)
                }
            };
            let opts = PassOptions { mode: Mode::Train, tau, rng: Some(&mut rng), relax: Relaxation::StraightThrough };
            let out = model.forward(&tape, &p, items, users, &batch, opts)?;
            let l = loss(&tape, out.scores, &targets)?;
            let stats = StepStats {
                loss: tape.value(l)[[0, 0]].to_f64().unwrap(),
                augmented: out.augmented.positions.iter().filter(|p| p.is_some()).count(),
                removed: out.removed_insertions,
                gated_drops: out.denoised.kept.iter().filter(|&&k| !k).count(),
            };
            if !stats.loss.is_finite() {
                let users: Vec<usize> = chunk.iter().map(|s| s.0).collect();
                log::error!("non-finite loss; batch inputs: {:?}", chunk.iter().map(|s| (&s.1, s.2)).collect::<Vec<_>>());
                return Err(Error::NonFiniteLoss { epoch, batch: b, loss: stats.loss, users });
            }
            let mut g = tape.backward(l);
            let grads = model.store.collect_grads(&p, &mut g);
            match (&mut acc_items, &mut acc_users) {
                (Some(ai), Some(au)) => {
                    if let Some(gi) = g.get(items) {
                        *ai += gi;
                    }
                    if let Some(gu) = g.get(users) {
                        *au += gu;
                    }
                    opt.step_subset(&mut model.store, &grads, Some(&rest_flag));
                }
                _ => opt.step(&mut model.store, &grads),
            }
            loss_sum += stats.loss;
            batches += 1;
            augmented += stats.augmented;
            removed += stats.removed;
            gated_drops += stats.gated_drops;
            global_batch += 1;
        }

        if let (Some(ai), Some(au)) = (acc_items, acc_users) {
            // One encoder update from the gradients accumulated on the cache.
            let tape = Tape::new();
            let p = model.store.bind(&tape);
            let enc = encode(&tape, &p, &model.encoder, &model.ops);
            let li = tape.sum_all(tape.mul(enc.items, tape.constant(ai)));
            let lu = tape.sum_all(tape.mul(enc.users, tape.constant(au)));
            let mut g = tape.backward(tape.add(li, lu));
            let grads = model.store.collect_grads(&p, &mut g);
            opt.step_subset(&mut model.store, &grads, Some(&encoder_flag));
        }

        let reps = model.encode_tables();
        let mut report = evaluate(model, &reps, &valid, cfg.filter_seen, cfg.eval_batch_size)?;
        report.epoch = Some(epoch);
        report.split = "valid".into();
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            batches,
            tau: cfg.tau.at(global_batch.saturating_sub(1)),
            augmented,
            removed_insertions: removed,
            gated_drops,
            valid: report.clone(),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, valid hr@20 {:.4}, ndcg@20 {:.4}, gated drops {}, removed {}, {:.1}s",
            entry.train_loss,
            report.hr20,
            report.ndcg20,
            entry.gated_drops,
            entry.removed_insertions,
            entry.seconds
        );
        on_epoch(&entry)?;
        epochs_run = epoch;
        if stopper.update(epoch, report.hr20) {
            best_store = model.store.clone();
            best_valid = report;
        }
        if stopper.should_stop() {
            break;
        }
    }
    model.store = best_store;
    Ok(TrainOutcome {
        best_epoch: stopper.best_epoch,
        best_valid,
        epochs_run,
        stopped_early: stopper.should_stop(),
    })
}
