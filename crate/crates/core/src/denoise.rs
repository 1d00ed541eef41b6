//! Hierarchical denoising: removal of false augmentations followed by a
//! pluggable denoiser over the original positions.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{context_states, gumbel, inconsistency, AugmentedBatch, AugmentedSequence, Relaxation, SelectorParams};
use crate::encoder::at;
use crate::error::{Error, Result};
use crate::tensor::{lit, Layout, Mat, ParamId, ParamStore, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Joint inconsistency scores of every row, computed on a scratch tape
/// without gradients.
pub fn joint_scores<R: Real>(store: &ParamStore<R>, sel: &SelectorParams, h: &Mat<R>, layout: &Layout) -> Vec<R> {
    let tape = Tape::new();
    let p = store.bind_constant(&tape);
    let hv = tape.constant(h.clone());
    let (fwd, bwd) = context_states(&tape, &p, sel, hv, layout);
    let r = inconsistency(&tape, hv, fwd, bwd, layout).r_joint;
    let v = tape.value(r).iter().copied().collect();
    v
}

fn argmax_in<R: Real>(xs: &[R]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Augmented batch after false insertions were removed.
#[derive(Clone, Debug)]
pub struct RefinedBatch {
    pub reps: Var,
    pub layout: Layout,
    /// Per refined row, the source row in the unaugmented input.
    pub origin: Vec<Option<usize>>,
    /// Rows of the augmented batch that survived, in order.
    pub kept_rows: Vec<usize>,
    /// Per sequence, the number of insertions removed.
    pub removed: Vec<usize>,
}

/// Up to two rounds per sequence: when the arg-max of the joint score is an
/// inserted row it is removed and the sequence rescored; an original row at
/// the arg-max stops refinement. Original rows are never removed.
pub fn refine_batch<R: Real>(
    tape: &Tape<R>,
    store: &ParamStore<R>,
    sel: &SelectorParams,
    aug: &AugmentedBatch,
) -> RefinedBatch {
    let nseg = aug.layout.num_segments();
    let mut rows: Vec<Vec<usize>> = (0..nseg).map(|s| aug.layout.range(s).collect()).collect();
    let mut active: Vec<bool> = (0..nseg).map(|s| rows[s].iter().any(|&r| aug.inserted[r])).collect();
    let mut removed = vec![0usize; nseg];
    for _round in 0..2 {
        let live: Vec<usize> = (0..nseg).filter(|&s| active[s]).collect();
        if live.is_empty() {
            break;
        }
        let flat: Vec<usize> = live.iter().flat_map(|&s| rows[s].iter().copied()).collect();
        let layout = Layout::from_lengths(live.iter().map(|&s| rows[s].len()));
        let values = tape.value(aug.reps).select(Axis(0), &flat);
        let scores = joint_scores(store, sel, &values, &layout);
        for (k, &s) in live.iter().enumerate() {
            let best = argmax_in(&scores[layout.range(k)]);
            if aug.inserted[rows[s][best]] {
                rows[s].remove(best);
                removed[s] += 1;
                active[s] = rows[s].iter().any(|&r| aug.inserted[r]);
            } else {
                active[s] = false;
            }
        }
    }
    let flat: Vec<usize> = rows.iter().flatten().copied().collect();
    RefinedBatch {
        reps: tape.gather_rows(aug.reps, &flat),
        layout: Layout::from_lengths(rows.iter().map(Vec::len)),
        origin: flat.iter().map(|&r| aug.origin[r]).collect(),
        kept_rows: flat,
        removed,
    }
}

/// Refinement result for one sequence.
#[derive(Clone, Debug)]
pub struct RefinedSequence<R> {
    pub reps: Mat<R>,
    /// Over the augmented rows: `true` where the row survived.
    pub surviving_mask: Vec<bool>,
}

pub fn refine_augmentation<R: Real>(
    aug: &AugmentedSequence<R>,
    store: &ParamStore<R>,
    sel: &SelectorParams,
) -> RefinedSequence<R> {
    let tape = Tape::new();
    let reps = tape.constant(aug.reps.clone());
    let n = aug.reps.nrows();
    let mut origin = Vec::with_capacity(n);
    let mut k = 0;
    for &m in &aug.inserted_mask {
        origin.push(if m { None } else { Some(k) });
        k += usize::from(!m);
    }
    let batch = AugmentedBatch {
        reps,
        layout: Layout::single(n),
        inserted: aug.inserted_mask.clone(),
        origin,
        positions: vec![aug.insert_position],
        items: vec![aug.inserted_items],
        position_selection: None,
    };
    let refined = refine_batch(&tape, store, sel, &batch);
    let mut surviving = vec![false; n];
    for &r in &refined.kept_rows {
        surviving[r] = true;
    }
    RefinedSequence { reps: tape.to_owned(refined.reps), surviving_mask: surviving }
}

/// Inputs handed to a denoiser.
pub struct DenoiseInput<'a> {
    /// Original, unaugmented rows.
    pub original: Var,
    pub layout: &'a Layout,
    pub refined: &'a RefinedBatch,
    pub tau: f64,
    /// Train-mode gate: straight-through hard keep, or the relaxed keep
    /// probability.
    pub relax: Relaxation,
}

/// Denoiser output over the original rows.
#[derive(Clone, Debug)]
pub struct DenoiseOutput {
    pub reps: Var,
    pub layout: Layout,
    /// Noise-free keep probability per original row.
    pub keep_probs: Vec<f64>,
    /// Whether each original row is present (train mode: the sampled gate).
    pub kept: Vec<bool>,
    /// Sequences whose every row was scored for dropping and one was restored.
    pub clamped: usize,
}

pub trait Denoiser<R: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn params(&self) -> Vec<ParamId> {
        Vec::new()
    }

    fn denoise(
        &self,
        tape: &Tape<R>,
        p: &[Var],
        input: &DenoiseInput<'_>,
        mode: Mode,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> DenoiseOutput;
}

/// Keeps every original row.
#[derive(Clone, Copy, Debug, Default)]
pub struct AllKeep;

impl<R: Real> Denoiser<R> for AllKeep {
    fn name(&self) -> &'static str {
        "all_keep"
    }

    fn denoise(&self, _: &Tape<R>, _: &[Var], input: &DenoiseInput<'_>, _: Mode, _: Option<&mut dyn rand::RngCore>) -> DenoiseOutput {
        let total = input.layout.total();
        DenoiseOutput {
            reps: input.original,
            layout: input.layout.clone(),
            keep_probs: vec![1.0; total],
            kept: vec![true; total],
            clamped: 0,
        }
    }
}

/// Affine map from a position's joint score feature to keep/drop logits.
#[derive(Clone, Copy, Debug)]
pub struct DropGateParams {
    /// `1 × 2`, initialised to `[0.01, -0.01]` so the feature reaches the
    /// logits from the first step.
    pub weight: ParamId,
    /// `1 × 2`, initialised to `[0, -2]` (keep, drop).
    pub bias: ParamId,
}

impl DropGateParams {
    pub fn init<R: Real>(store: &mut ParamStore<R>, name: &str) -> Self {
        let weight = store.add(&format!("{name}.weight"), Array2::from_shape_vec((1, 2), vec![lit(0.01), lit(-0.01)]).unwrap());
        let bias = store.add(&format!("{name}.bias"), Array2::from_shape_vec((1, 2), vec![R::zero(), lit(-2.0)]).unwrap());
        Self { weight, bias }
    }
}

/// Per-position keep/drop gate over the joint inconsistency of the refined
/// sequence.
#[derive(Clone, Copy, Debug)]
pub struct InconsistencyGate {
    pub selector: SelectorParams,
    pub gate: DropGateParams,
    /// Rows whose drop probability exceeds this are removed at evaluation.
    pub drop_threshold: f64,
}

/// Feature `log r_t + 2 log m`, which is zero when both discriminators are
/// uniform over the `m` rows.
fn gate_features<R: Real>(tape: &Tape<R>, r_joint: Var, layout: &Layout) -> Var {
    let shift: Vec<R> = layout
        .segment_ids()
        .iter()
        .map(|&s| lit(2.0 * (layout.len_of(s) as f64).ln()))
        .collect();
    let shift = tape.constant(Array2::from_shape_vec((shift.len(), 1), shift).unwrap());
    tape.add(tape.ln_clamped(r_joint, lit(crate::augment::LOG_FLOOR)), shift)
}

impl InconsistencyGate {
    /// Keep/drop logits (`rows × 2`) for the original rows, in input order.
    pub fn logits<R: Real>(&self, tape: &Tape<R>, p: &[Var], input: &DenoiseInput<'_>) -> Var {
        let refined = input.refined;
        let (fwd, bwd) = context_states(tape, p, &self.selector, refined.reps, &refined.layout);
        let r = inconsistency(tape, refined.reps, fwd, bwd, &refined.layout).r_joint;
        let x = gate_features(tape, r, &refined.layout);
        let logits = tape.add_row(tape.matmul(x, at(p, self.gate.weight)), at(p, self.gate.bias));
        // Refined rows that came from the input, reordered to input order.
        let mut pick = vec![usize::MAX; input.layout.total()];
        for (row, o) in refined.origin.iter().enumerate() {
            if let Some(o) = *o {
                pick[o] = row;
            }
        }
        debug_assert!(pick.iter().all(|&r| r != usize::MAX), "refinement dropped an original row");
        tape.gather_rows(logits, &pick)
    }
}

fn softmax2(a: f64, b: f64) -> f64 {
    // Probability of the first entry.
    1.0 / (1.0 + (b - a).exp())
}

impl<R: Real> Denoiser<R> for InconsistencyGate {
    fn name(&self) -> &'static str {
        "inconsistency_gate"
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.gate.weight, self.gate.bias]
    }

    fn denoise(
        &self,
        tape: &Tape<R>,
        p: &[Var],
        input: &DenoiseInput<'_>,
        mode: Mode,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> DenoiseOutput {
        let layout = input.layout;
        let total = layout.total();
        let logits = self.logits(tape, p, input);
        let lv: Vec<(f64, f64)> = {
            let v = tape.value(logits);
            (0..total).map(|r| (v[[r, 0]].to_f64().unwrap(), v[[r, 1]].to_f64().unwrap())).collect()
        };
        let keep_probs: Vec<f64> = lv.iter().map(|&(k, d)| softmax2(k, d)).collect();
        match mode {
            Mode::Train => {
                let noise = match rng {
                    Some(rng) => Array2::from_shape_simple_fn((total, 2), || lit::<R>(gumbel(rng))),
                    None => Array2::zeros((total, 2)),
                };
                let z = tape.scale(tape.add(logits, tape.constant(noise)), lit(1.0 / input.tau));
                let soft = tape.softmax_rows(z);
                let mut hard = Array2::<R>::zeros((total, 2));
                let mut kept = Vec::with_capacity(total);
                {
                    let s = tape.value(soft);
                    for r in 0..total {
                        let keep = s[[r, 0]] >= s[[r, 1]];
                        hard[[r, if keep { 0 } else { 1 }]] = R::one();
                        kept.push(keep);
                    }
                }
                let gate = match input.relax {
                    Relaxation::StraightThrough => tape.straight_through(soft, hard),
                    Relaxation::Soft => soft,
                };
                let gate = tape.slice_cols(gate, 0, 1);
                DenoiseOutput {
                    reps: tape.mul_col(input.original, gate),
                    layout: layout.clone(),
                    keep_probs,
                    kept,
                    clamped: 0,
                }
            }
            Mode::Eval => {
                let mut kept: Vec<bool> = keep_probs.iter().map(|&k| 1.0 - k <= self.drop_threshold).collect();
                let mut clamped = 0;
                for s in 0..layout.num_segments() {
                    let r = layout.range(s);
                    if !r.clone().any(|i| kept[i]) {
                        let best = r
                            .clone()
                            .max_by(|&a, &b| keep_probs[a].partial_cmp(&keep_probs[b]).unwrap().then(b.cmp(&a)))
                            .unwrap();
                        kept[best] = true;
                        clamped += 1;
                    }
                }
                let rows: Vec<usize> = (0..total).filter(|&i| kept[i]).collect();
                let lengths = (0..layout.num_segments()).map(|s| layout.range(s).filter(|&i| kept[i]).count());
                DenoiseOutput {
                    reps: tape.gather_rows(input.original, &rows),
                    layout: Layout::from_lengths(lengths),
                    keep_probs,
                    kept,
                    clamped,
                }
            }
        }
    }
}

/// Builtin denoisers by configuration name.
pub fn denoiser_by_name<R: Real>(
    name: &str,
    selector: SelectorParams,
    gate: DropGateParams,
    drop_threshold: f64,
) -> Result<Box<dyn Denoiser<R>>> {
    match name {
        "inconsistency_gate" => Ok(Box::new(InconsistencyGate { selector, gate, drop_threshold })),
        "all_keep" => Ok(Box::new(AllKeep)),
        _ => Err(Error::Config(format!("unknown denoiser {name:?} (inconsistency_gate | all_keep)"))),
    }
}

/// Single-sequence default denoiser: keep probabilities for the original
/// rows of `h_s` and the denoised rows.
#[allow(clippy::too_many_arguments)]
pub fn default_denoise<R: Real, G: Rng>(
    h_s: &Mat<R>,
    refined: &RefinedSequence<R>,
    augmented: &AugmentedSequence<R>,
    store: &ParamStore<R>,
    gate: &InconsistencyGate,
    tau: f64,
    mode: Mode,
    rng: Option<&mut G>,
) -> (Vec<f64>, Mat<R>) {
    let tape = Tape::new();
    let p = store.bind_constant(&tape);
    let original = tape.constant(h_s.clone());
    let layout = Layout::single(h_s.nrows());
    let mut origin = Vec::new();
    let mut k = 0;
    for (i, &m) in augmented.inserted_mask.iter().enumerate() {
        if refined.surviving_mask[i] {
            origin.push(if m { None } else { Some(k) });
        }
        k += usize::from(!m);
    }
    let refined_batch = RefinedBatch {
        reps: tape.constant(refined.reps.clone()),
        layout: Layout::single(refined.reps.nrows()),
        origin,
        kept_rows: (0..refined.surviving_mask.len()).filter(|&i| refined.surviving_mask[i]).collect(),
        removed: vec![augmented.inserted_mask.len() - refined.reps.nrows()],
    };
    let input = DenoiseInput { original, layout: &layout, refined: &refined_batch, tau, relax: Relaxation::StraightThrough };
    let rng = rng.map(|r| r as &mut dyn rand::RngCore);
    let out = Denoiser::<R>::denoise(gate, &tape, &p, &input, mode, rng);
    let reps = tape.to_owned(out.reps);
    (out.keep_probs, reps)
}
