//! The full pipeline: graph encoding, sequence representations,
//! augmentation, refinement, denoising, backbone and scoring.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, AugmentedBatch, Relaxation, SelectorParams};
use crate::denoise::{denoiser_by_name, refine_batch, DenoiseInput, DenoiseOutput, Denoiser, DropGateParams, Mode};
use crate::encoder::{encode, sequence_reps, EncoderConfig, EncoderParams, GraphOperators, MultiRelationReps};
use crate::error::{Error, Result};
use crate::recommend::{backbone_by_name, score_full, Backbone};
use crate::relgraph::MultiRelationGraph;
use crate::tensor::{Layout, Mat, ParamId, ParamStore, Real, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub backbone: String,
    pub denoiser: String,
    /// Train-time self-augmentation of short sequences.
    pub augmentation: bool,
    /// One bidirectional context encoder for augmentation, refinement and the
    /// gate; when false refinement and the gate get their own.
    pub share_selector: bool,
    pub drop_threshold: f64,
    /// Sequences strictly shorter than this are augmented. `None` uses the
    /// mean training length.
    pub short_threshold: Option<f64>,
    /// Number of learned backbone positions.
    pub max_positions: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            backbone: "attention".into(),
            denoiser: "inconsistency_gate".into(),
            augmentation: true,
            share_selector: true,
            drop_threshold: 0.5,
            short_threshold: None,
            max_positions: 52,
        }
    }
}

/// A batch element: user index and its item sequence.
pub type BatchItem<'a> = (usize, &'a [usize]);

pub struct Model<R: Real> {
    pub config: ModelConfig,
    pub store: ParamStore<R>,
    pub ops: GraphOperators<R>,
    pub encoder: EncoderParams,
    pub selector: SelectorParams,
    pub denoise_selector: SelectorParams,
    pub gate: DropGateParams,
    pub denoiser: Box<dyn Denoiser<R>>,
    pub backbone: Box<dyn Backbone<R>>,
    pub short_threshold: f64,
}

/// Output of one pipeline pass over a batch.
pub struct Forward {
    /// `B × d` sequence representations.
    pub h_s: Var,
    /// `B × V` logits; column `j` scores item `j + 1`.
    pub scores: Var,
    pub augmented: AugmentedBatch,
    pub removed_insertions: usize,
    pub denoised: DenoiseOutput,
}

/// Options of one pipeline pass.
pub struct PassOptions<'a> {
    pub mode: Mode,
    pub tau: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub relax: Relaxation,
}

impl PassOptions<'_> {
    pub fn eval() -> Self {
        Self { mode: Mode::Eval, tau: 1.0, rng: None, relax: Relaxation::StraightThrough }
    }
}

pub fn mean_length(sequences: &[Vec<usize>]) -> f64 {
    if sequences.is_empty() {
        return 0.0;
    }
    sequences.iter().map(Vec::len).sum::<usize>() as f64 / sequences.len() as f64
}

impl<R: Real> Model<R> {
    /// Initialises every parameter from `seed`. `train_lengths_mean` is used
    /// when the config leaves the short-sequence threshold unset.
    pub fn new(graph: &MultiRelationGraph, config: ModelConfig, train_lengths_mean: f64, seed: u64) -> Result<Self> {
        let d = config.encoder.dim;
        if d == 0 {
            return Err(Error::Config("encoder dimension must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.drop_threshold) {
            return Err(Error::Config(format!("drop_threshold {} outside [0, 1]", config.drop_threshold)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::init(&mut store, graph.num_users, graph.num_items, d, &mut rng);
        let selector = SelectorParams::init(&mut store, "selector", d, &mut rng);
        let denoise_selector = if config.share_selector {
            selector
        } else {
            SelectorParams::init(&mut store, "denoise_selector", d, &mut rng)
        };
        let gate = DropGateParams::init(&mut store, "gate");
        let denoiser = denoiser_by_name(&config.denoiser, denoise_selector, gate, config.drop_threshold)?;
        let backbone = backbone_by_name(&config.backbone, &mut store, d, config.max_positions.max(1), &mut rng)?;
        let ops = GraphOperators::new(graph, &config.encoder);
        let short_threshold = config.short_threshold.unwrap_or(train_lengths_mean);
        Ok(Self { config, store, ops, encoder, selector, denoise_selector, gate, denoiser, backbone, short_threshold })
    }

    pub fn num_items(&self) -> usize {
        self.ops.num_items
    }

    pub fn num_users(&self) -> usize {
        self.ops.num_users
    }

    /// Parameters of the graph encoder, including the embedding tables.
    pub fn encoder_params(&self) -> Vec<ParamId> {
        let e = &self.encoder;
        let mut ids = vec![e.item_table, e.user_table, e.att_in, e.att_out];
        for (_, g) in e.conv_groups() {
            ids.extend(g);
        }
        for f in [e.fuse_item, e.fuse_user] {
            ids.extend([f.w1, f.b1, f.w2, f.b2]);
        }
        ids
    }

    /// Named parameter groups for gradient reporting.
    pub fn param_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let e = &self.encoder;
        let mut groups = vec![
            ("embeddings".to_string(), vec![e.item_table, e.user_table]),
            ("attention".to_string(), vec![e.att_in, e.att_out]),
        ];
        for (name, ids) in e.conv_groups() {
            groups.push((name.to_string(), ids.to_vec()));
        }
        let ffn = |f: crate::encoder::FfnIds| vec![f.w1, f.b1, f.w2, f.b2];
        groups.push(("fusion_item".into(), ffn(e.fuse_item)));
        groups.push(("fusion_user".into(), ffn(e.fuse_user)));
        groups.push(("selector".into(), self.selector.ids()));
        if !self.config.share_selector {
            groups.push(("denoise_selector".into(), self.denoise_selector.ids()));
        }
        groups.push(("drop_gate".into(), vec![self.gate.weight, self.gate.bias]));
        groups.push(("backbone".into(), self.backbone.params()));
        groups
    }

    /// Full-graph encoding as plain tables.
    pub fn encode_tables(&self) -> MultiRelationReps<R> {
        let tape = Tape::new();
        let p = self.store.bind_constant(&tape);
        let enc = encode(&tape, &p, &self.encoder, &self.ops);
        MultiRelationReps { items: tape.to_owned(enc.items), users: tape.to_owned(enc.users) }
    }

    /// Whether a sequence of length `n` is augmented during training.
    pub fn augments(&self, n: usize) -> bool {
        self.config.augmentation && (n as f64) < self.short_threshold
    }

    /// Runs the pipeline on `batch` given item and user tables on `tape`.
    pub fn forward(
        &self,
        tape: &Tape<R>,
        p: &[Var],
        items: Var,
        users: Var,
        batch: &[BatchItem<'_>],
        opts: PassOptions<'_>,
    ) -> Result<Forward> {
        for &(u, s) in batch {
            if s.is_empty() {
                return Err(Error::InvalidArgument(format!("empty sequence for user {u}")));
            }
            if u > self.num_users() {
                return Err(Error::IndexOutOfRange { index: u, rows: self.num_users() + 1 });
            }
            if let Some(&v) = s.iter().find(|&&v| v == 0 || v > self.num_items()) {
                return Err(Error::IndexOutOfRange { index: v, rows: self.num_items() + 1 });
            }
        }
        let PassOptions { mode, tau, mut rng, relax } = opts;
        let layout = Layout::from_lengths(batch.iter().map(|b| b.1.len()));
        let h = sequence_reps(tape, items, users, batch);
        let augmented = if mode == Mode::Train {
            let flags: Vec<bool> = batch.iter().map(|b| self.augments(b.1.len())).collect();
            augment_batch(tape, p, &self.selector, h, &layout, items, &flags, tau, rng.as_deref_mut(), relax)
        } else {
            AugmentedBatch::pass_through(h, &layout)
        };
        let refined = refine_batch(tape, &self.store, &self.denoise_selector, &augmented);
        let input = DenoiseInput { original: h, layout: &layout, refined: &refined, tau, relax };
        let denoised = self.denoiser.denoise(tape, p, &input, mode, rng.map(|r| r as &mut dyn RngCore));
        let h_s = self.backbone.forward(tape, p, denoised.reps, &denoised.layout);
        let scores = score_full(tape, h_s, items);
        Ok(Forward { h_s, scores, removed_insertions: refined.removed.iter().sum(), augmented, denoised })
    }

    /// Evaluation-mode logits for `batch` against fixed tables.
    pub fn score(&self, reps: &MultiRelationReps<R>, batch: &[BatchItem<'_>]) -> Result<Mat<R>> {
        let tape = Tape::new();
        let p = self.store.bind_constant(&tape);
        let items = tape.constant(reps.items.clone());
        let users = tape.constant(reps.users.clone());
        let out = self.forward(&tape, &p, items, users, batch, PassOptions::eval())?;
        Ok(tape.to_owned(out.scores))
    }

    /// Evaluation-mode keep decisions per position of each sequence.
    pub fn keep_decisions(&self, reps: &MultiRelationReps<R>, batch: &[BatchItem<'_>]) -> Result<Vec<Vec<bool>>> {
        let tape = Tape::new();
        let p = self.store.bind_constant(&tape);
        let items = tape.constant(reps.items.clone());
        let users = tape.constant(reps.users.clone());
        let out = self.forward(&tape, &p, items, users, batch, PassOptions::eval())?;
        let mut kept = out.denoised.kept.into_iter();
        Ok(batch.iter().map(|b| kept.by_ref().take(b.1.len()).collect()).collect())
    }

    /// Swaps the denoiser, keeping all parameters.
    pub fn set_denoiser(&mut self, name: &str, drop_threshold: f64) -> Result<()> {
        self.denoiser = denoiser_by_name(name, self.denoise_selector, self.gate, drop_threshold)?;
        self.config.denoiser = name.to_string();
        self.config.drop_threshold = drop_threshold;
        Ok(())
    }
}
