//! Self-augmentation: inconsistency scoring, Gumbel position and item
//! selection, and insertion of the two selected items around the chosen
//! position.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::at;
use crate::error::{Error, Result};
use crate::tensor::{lit, Layout, LstmWeights, Mat, ParamId, ParamStore, Real, Tape, Var};

/// Clamp applied before taking the log of a selection probability.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct LstmIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmIds {
    fn init<R: Real, G: Rng>(store: &mut ParamStore<R>, name: &str, d: usize, rng: &mut G) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        Self {
            w_ih: store.uniform(&format!("{name}.w_ih"), d, 4 * d, bound, rng),
            w_hh: store.uniform(&format!("{name}.w_hh"), d, 4 * d, bound, rng),
            bias: store.uniform(&format!("{name}.bias"), 1, 4 * d, bound, rng),
        }
    }

    pub fn bind(&self, p: &[Var]) -> LstmWeights {
        LstmWeights { w_ih: at(p, self.w_ih), w_hh: at(p, self.w_hh), bias: at(p, self.bias) }
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.w_ih, self.w_hh, self.bias]
    }
}

/// Bidirectional context encoder shared by the discriminators and the item
/// selector, plus learned states used at sequence boundaries.
#[derive(Clone, Copy, Debug)]
pub struct SelectorParams {
    pub forward: LstmIds,
    pub backward: LstmIds,
    pub boundary_left: ParamId,
    pub boundary_right: ParamId,
}

impl SelectorParams {
    pub fn init<R: Real, G: Rng>(store: &mut ParamStore<R>, name: &str, d: usize, rng: &mut G) -> Self {
        Self {
            forward: LstmIds::init(store, &format!("{name}.forward"), d, rng),
            backward: LstmIds::init(store, &format!("{name}.backward"), d, rng),
            boundary_left: store.uniform(&format!("{name}.boundary_left"), 1, d, 0.1, rng),
            boundary_right: store.uniform(&format!("{name}.boundary_right"), 1, d, 0.1, rng),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.forward.ids().to_vec();
        v.extend(self.backward.ids());
        v.extend([self.boundary_left, self.boundary_right]);
        v
    }
}

/// Forward and backward hidden states at every row.
pub fn context_states<R: Real>(
    tape: &Tape<R>,
    p: &[Var],
    sel: &SelectorParams,
    h: Var,
    layout: &Layout,
) -> (Var, Var) {
    let fwd = tape.lstm(h, sel.forward.bind(p), layout, false);
    let bwd = tape.lstm(h, sel.backward.bind(p), layout, true);
    (fwd, bwd)
}

/// Per-row `Σ_d (h^L ⊙ h^R ⊙ h)` followed by a softmax within each sequence.
pub fn sequentiality<R: Real>(tape: &Tape<R>, h: Var, fwd: Var, bwd: Var, layout: &Layout) -> Var {
    tape.segment_softmax(tape.row_triple(fwd, bwd, h), layout)
}

/// Per-row mean dot product with the other rows of the same sequence,
/// followed by a softmax within each sequence. Single-row sequences score 1.
pub fn similarity<R: Real>(tape: &Tape<R>, h: Var, layout: &Layout) -> Var {
    let sums = tape.segment_sum(h, layout);
    let per_row = tape.gather_rows(sums, &layout.segment_ids());
    let others = tape.sub(per_row, h);
    let inv: Vec<R> = layout
        .segment_ids()
        .iter()
        .map(|&s| {
            let n = layout.len_of(s);
            if n > 1 {
                R::one() / lit::<R>((n - 1) as f64)
            } else {
                R::zero()
            }
        })
        .collect();
    let inv = tape.constant(Array2::from_shape_vec((inv.len(), 1), inv).unwrap());
    tape.segment_softmax(tape.mul_col(tape.row_dot(others, h), inv), layout)
}

#[derive(Clone, Copy, Debug)]
pub struct ScoreVars {
    pub r_seq: Var,
    pub r_sim: Var,
    pub r_joint: Var,
}

/// Both discriminators and their elementwise product.
pub fn inconsistency<R: Real>(tape: &Tape<R>, h: Var, fwd: Var, bwd: Var, layout: &Layout) -> ScoreVars {
    let r_seq = sequentiality(tape, h, fwd, bwd, layout);
    let r_sim = similarity(tape, h, layout);
    ScoreVars { r_seq, r_sim, r_joint: tape.mul(r_seq, r_sim) }
}

/// Per-position discriminator outputs for one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyScores {
    pub r_seq: Vec<f64>,
    pub r_sim: Vec<f64>,
    pub r_joint: Vec<f64>,
}

/// Relaxed one-hot vector with its arg-max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardSelection {
    pub soft: Vec<f64>,
    pub hard_index: usize,
    pub temperature: f64,
}

/// How a relaxed selection enters the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relaxation {
    /// Hard one-hot forward, soft gradient backward.
    StraightThrough,
    /// Soft values forward and backward; used for finite-difference checks.
    Soft,
}

/// A standard Gumbel draw.
pub fn gumbel<G: Rng + ?Sized>(rng: &mut G) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

pub fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")))
    }
}

fn argmax<R: Real>(xs: impl Iterator<Item = R>) -> usize {
    let mut best = 0;
    let mut value = R::neg_infinity();
    for (i, x) in xs.enumerate() {
        if x > value {
            best = i;
            value = x;
        }
    }
    best
}

/// `softmax((log max(r, 1e-12) + g) / τ)` over selection probabilities
/// without a tape. `rng = None` means zero noise.
pub fn select_position<G: Rng>(r_joint: &[f64], tau: f64, rng: Option<&mut G>) -> Result<HardSelection> {
    check_temperature(tau)?;
    if r_joint.is_empty() {
        return Err(Error::InvalidArgument("empty score vector".into()));
    }
    let noise: Vec<f64> = match rng {
        Some(rng) => r_joint.iter().map(|_| gumbel(rng)).collect(),
        None => vec![0.0; r_joint.len()],
    };
    let z: Vec<f64> = r_joint.iter().zip(&noise).map(|(&r, g)| (r.max(LOG_FLOOR).ln() + g) / tau).collect();
    Ok(relaxed(&z, tau))
}

/// Gumbel-softmax over raw logits without a tape.
pub fn gumbel_softmax_logits<G: Rng>(logits: &[f64], tau: f64, rng: Option<&mut G>) -> Result<HardSelection> {
    check_temperature(tau)?;
    let noise: Vec<f64> = match rng {
        Some(rng) => logits.iter().map(|_| gumbel(rng)).collect(),
        None => vec![0.0; logits.len()],
    };
    let z: Vec<f64> = logits.iter().zip(&noise).map(|(&k, g)| (k + g) / tau).collect();
    Ok(relaxed(&z, tau))
}

fn relaxed(z: &[f64], tau: f64) -> HardSelection {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let soft: Vec<f64> = e.iter().map(|x| x / s).collect();
    HardSelection { hard_index: argmax(soft.iter().copied()), soft, temperature: tau }
}

/// Gumbel-softmax within each segment of a score column. Returns the
/// selection column and the chosen row offset within each segment.
pub fn select_positions<R: Real, G: Rng>(
    tape: &Tape<R>,
    r_joint: Var,
    layout: &Layout,
    tau: f64,
    rng: Option<&mut G>,
    relax: Relaxation,
) -> (Var, Vec<usize>) {
    let total = layout.total();
    let noise: Vec<R> = match rng {
        Some(rng) => (0..total).map(|_| lit(gumbel(rng))).collect(),
        None => vec![R::zero(); total],
    };
    let logp = tape.ln_clamped(r_joint, lit(LOG_FLOOR));
    let z = tape.add(logp, tape.constant(Array2::from_shape_vec((total, 1), noise).unwrap()));
    let soft = tape.segment_softmax(tape.scale(z, lit(1.0 / tau)), layout);
    let chosen: Vec<usize> = {
        let v = tape.value(soft);
        (0..layout.num_segments()).map(|s| argmax(layout.range(s).map(|r| v[[r, 0]]))).collect()
    };
    let out = match relax {
        Relaxation::Soft => soft,
        Relaxation::StraightThrough => {
            let mut hard = Array2::<R>::zeros((total, 1));
            for (s, &c) in chosen.iter().enumerate() {
                hard[[layout.offset(s) + c, 0]] = R::one();
            }
            tape.straight_through(soft, hard)
        }
    };
    (out, chosen)
}

/// Row-wise Gumbel-softmax over a `B × K` logit matrix.
pub fn select_rows<R: Real, G: Rng>(
    tape: &Tape<R>,
    logits: Var,
    tau: f64,
    rng: Option<&mut G>,
    relax: Relaxation,
) -> (Var, Vec<usize>) {
    let (b, k) = tape.shape(logits);
    let noise = match rng {
        Some(rng) => Array2::from_shape_simple_fn((b, k), || lit::<R>(gumbel(rng))),
        None => Array2::zeros((b, k)),
    };
    let z = tape.add(logits, tape.constant(noise));
    let soft = tape.softmax_rows(tape.scale(z, lit(1.0 / tau)));
    let chosen: Vec<usize> = {
        let v = tape.value(soft);
        v.rows().into_iter().map(|row| argmax(row.iter().copied())).collect()
    };
    let out = match relax {
        Relaxation::Soft => soft,
        Relaxation::StraightThrough => {
            let mut hard = Array2::<R>::zeros((b, k));
            for (i, &c) in chosen.iter().enumerate() {
                hard[[i, c]] = R::one();
            }
            tape.straight_through(soft, hard)
        }
    };
    (out, chosen)
}

/// Context states around every row: the forward state of the previous row
/// and the backward state of the next row, with learned states at the ends.
pub fn neighbour_contexts<R: Real>(
    tape: &Tape<R>,
    p: &[Var],
    sel: &SelectorParams,
    fwd: Var,
    bwd: Var,
    layout: &Layout,
) -> (Var, Var) {
    let total = layout.total();
    let fwd_ext = tape.concat_rows(&[fwd, at(p, sel.boundary_left)]);
    let bwd_ext = tape.concat_rows(&[bwd, at(p, sel.boundary_right)]);
    let mut left = Vec::with_capacity(total);
    let mut right = Vec::with_capacity(total);
    for s in 0..layout.num_segments() {
        let r = layout.range(s);
        for row in r.clone() {
            left.push(if row == r.start { total } else { row - 1 });
            right.push(if row + 1 == r.end { total } else { row + 1 });
        }
    }
    (tape.gather_rows(fwd_ext, &left), tape.gather_rows(bwd_ext, &right))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub init: f64,
    pub every: usize,
    pub factor: f64,
    pub floor: f64,
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self { init: 1.0, every: 40, factor: 0.5, floor: 0.1 }
    }
}

impl TauSchedule {
    /// Temperature in effect after `batches` optimisation steps.
    pub fn at(&self, batches: usize) -> f64 {
        let k = (batches / self.every.max(1)) as i32;
        (self.init * self.factor.powi(k)).max(self.floor)
    }
}

/// Result of augmenting a batch of sequences.
#[derive(Clone, Debug)]
pub struct AugmentedBatch {
    pub reps: Var,
    pub layout: Layout,
    /// Per augmented row, whether it was inserted.
    pub inserted: Vec<bool>,
    /// Per augmented row, the source row in the input when not inserted.
    pub origin: Vec<Option<usize>>,
    /// Per sequence, the chosen position when the sequence was augmented.
    pub positions: Vec<Option<usize>>,
    /// Per sequence, the item indices selected for the left and right insertions.
    pub items: Vec<Option<(usize, usize)>>,
    /// Selection column over the input rows, when any sequence was augmented.
    pub position_selection: Option<Var>,
}

impl AugmentedBatch {
    /// The input unchanged.
    pub fn pass_through(reps: Var, layout: &Layout) -> Self {
        let total = layout.total();
        Self {
            reps,
            layout: layout.clone(),
            inserted: vec![false; total],
            origin: (0..total).map(Some).collect(),
            positions: vec![None; layout.num_segments()],
            items: vec![None; layout.num_segments()],
            position_selection: None,
        }
    }
}

/// Augments every sequence whose flag in `augment` is set: selects one
/// position and two items from `item_reps` (row 0 is padding and never
/// selected) and inserts them before and after the position.
#[allow(clippy::too_many_arguments)]
pub fn augment_batch<R: Real, G: Rng>(
    tape: &Tape<R>,
    p: &[Var],
    sel: &SelectorParams,
    h: Var,
    layout: &Layout,
    item_reps: Var,
    augment: &[bool],
    tau: f64,
    mut rng: Option<&mut G>,
    relax: Relaxation,
) -> AugmentedBatch {
    assert_eq!(augment.len(), layout.num_segments());
    if !augment.iter().any(|&a| a) {
        return AugmentedBatch::pass_through(h, layout);
    }
    let (fwd, bwd) = context_states(tape, p, sel, h, layout);
    let scores = inconsistency(tape, h, fwd, bwd, layout);
    let (r_hat, chosen) = select_positions(tape, scores.r_joint, layout, tau, rng.as_deref_mut(), relax);
    let (left_ctx, right_ctx) = neighbour_contexts(tape, p, sel, fwd, bwd, layout);

    let picked: Vec<usize> = (0..layout.num_segments()).filter(|&s| augment[s]).collect();
    let aug_layout = Layout::from_lengths(picked.iter().map(|&s| layout.len_of(s)));
    let rows: Vec<usize> = picked.iter().flat_map(|&s| layout.range(s)).collect();
    let r_sub = tape.gather_rows(r_hat, &rows);
    let q_left = tape.segment_sum(tape.mul_col(tape.gather_rows(left_ctx, &rows), r_sub), &aug_layout);
    let q_right = tape.segment_sum(tape.mul_col(tape.gather_rows(right_ctx, &rows), r_sub), &aug_layout);

    let num_items = tape.shape(item_reps).0 - 1;
    let universe = tape.slice_rows(item_reps, 1, num_items);
    let (k_left, c_left) = select_rows(tape, tape.matmul_t(q_left, universe), tau, rng.as_deref_mut(), relax);
    let (k_right, c_right) = select_rows(tape, tape.matmul_t(q_right, universe), tau, rng.as_deref_mut(), relax);
    // The selection value at the chosen position is 1 in the forward pass and
    // routes gradient to the position selector.
    let chosen_rows: Vec<usize> = picked.iter().map(|&s| layout.offset(s) + chosen[s]).collect();
    let gate = tape.gather_rows(r_hat, &chosen_rows);
    let h_left = tape.mul_col(tape.matmul(k_left, universe), gate);
    let h_right = tape.mul_col(tape.matmul(k_right, universe), gate);

    let total = layout.total();
    let stacked = tape.concat_rows(&[h, h_left, h_right]);
    let mut gather = Vec::with_capacity(total + 2 * picked.len());
    let mut inserted = Vec::new();
    let mut origin = Vec::new();
    let mut lengths = Vec::new();
    let mut positions = vec![None; layout.num_segments()];
    let mut items = vec![None; layout.num_segments()];
    let mut k = 0;
    for s in 0..layout.num_segments() {
        let r = layout.range(s);
        if !augment[s] {
            for row in r.clone() {
                gather.push(row);
                inserted.push(false);
                origin.push(Some(row));
            }
            lengths.push(r.len());
            continue;
        }
        let t = chosen[s];
        for (i, row) in r.clone().enumerate() {
            if i == t {
                gather.push(total + k);
                inserted.push(true);
                origin.push(None);
            }
            gather.push(row);
            inserted.push(false);
            origin.push(Some(row));
            if i == t {
                gather.push(total + picked.len() + k);
                inserted.push(true);
                origin.push(None);
            }
        }
        positions[s] = Some(t);
        items[s] = Some((c_left[k] + 1, c_right[k] + 1));
        lengths.push(r.len() + 2);
        k += 1;
    }
    AugmentedBatch {
        reps: tape.gather_rows(stacked, &gather),
        layout: Layout::from_lengths(lengths),
        inserted,
        origin,
        positions,
        items,
        position_selection: Some(r_hat),
    }
}

fn column_to_vec<R: Real>(m: &Mat<R>) -> Vec<f64> {
    m.iter().map(|x| x.to_f64().unwrap()).collect()
}

/// Discriminator outputs for a single `n × d` representation sequence.
pub fn score_sequence<R: Real>(h: &Mat<R>, store: &ParamStore<R>, sel: &SelectorParams) -> Result<InconsistencyScores> {
    if h.nrows() == 0 {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    let tape = Tape::new();
    let p = store.bind_constant(&tape);
    let layout = Layout::single(h.nrows());
    let hv = tape.constant(h.clone());
    let (fwd, bwd) = context_states(&tape, &p, sel, hv, &layout);
    let s = inconsistency(&tape, hv, fwd, bwd, &layout);
    let scores = InconsistencyScores {
        r_seq: column_to_vec(&tape.value(s.r_seq)),
        r_sim: column_to_vec(&tape.value(s.r_sim)),
        r_joint: column_to_vec(&tape.value(s.r_joint)),
    };
    Ok(scores)
}

pub fn sequentiality_scores<R: Real>(h: &Mat<R>, store: &ParamStore<R>, sel: &SelectorParams) -> Result<Vec<f64>> {
    Ok(score_sequence(h, store, sel)?.r_seq)
}

pub fn similarity_scores<R: Real>(h: &Mat<R>) -> Result<Vec<f64>> {
    if h.nrows() == 0 {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    let tape = Tape::new();
    let hv = tape.constant(h.clone());
    let out = similarity(&tape, hv, &Layout::single(h.nrows()));
    let v = column_to_vec(&tape.value(out));
    Ok(v)
}

/// Item selection for one sequence at position `t`. Returns the selected
/// left/right representations and the underlying selections (item indices
/// start at 1).
pub fn select_items<R: Real, G: Rng>(
    h: &Mat<R>,
    t: usize,
    item_reps: &Mat<R>,
    store: &ParamStore<R>,
    sel: &SelectorParams,
    tau: f64,
    mut rng: Option<&mut G>,
) -> Result<(Vec<R>, Vec<R>, HardSelection, HardSelection)> {
    check_temperature(tau)?;
    if t >= h.nrows() {
        return Err(Error::IndexOutOfRange { index: t, rows: h.nrows() });
    }
    if item_reps.nrows() < 2 {
        return Err(Error::InvalidArgument("empty item universe".into()));
    }
    let tape = Tape::new();
    let p = store.bind_constant(&tape);
    let layout = Layout::single(h.nrows());
    let hv = tape.constant(h.clone());
    let (fwd, bwd) = context_states(&tape, &p, sel, hv, &layout);
    let (left, right) = neighbour_contexts(&tape, &p, sel, fwd, bwd, &layout);
    let q_left = tape.to_owned(tape.slice_rows(left, t, 1));
    let q_right = tape.to_owned(tape.slice_rows(right, t, 1));
    let universe = item_reps.slice(ndarray::s![1.., ..]);
    let k_left: Vec<f64> = column_to_vec(&q_left.dot(&universe.t()));
    let k_right: Vec<f64> = column_to_vec(&q_right.dot(&universe.t()));
    let sl = gumbel_softmax_logits(&k_left, tau, rng.as_deref_mut())?;
    let sr = gumbel_softmax_logits(&k_right, tau, rng.as_deref_mut())?;
    let row = |i: usize| universe.row(i).to_vec();
    Ok((row(sl.hard_index), row(sr.hard_index), sl, sr))
}

/// A single augmented sequence as plain matrices.
#[derive(Clone, Debug)]
pub struct AugmentedSequence<R> {
    pub reps: Mat<R>,
    pub inserted_mask: Vec<bool>,
    pub insert_position: Option<usize>,
    pub inserted_items: Option<(usize, usize)>,
}

impl<R: Real> AugmentedSequence<R> {
    /// Rows that were not inserted, in order.
    pub fn original_rows(&self) -> Mat<R> {
        let keep: Vec<usize> = (0..self.inserted_mask.len()).filter(|&i| !self.inserted_mask[i]).collect();
        self.reps.select(ndarray::Axis(0), &keep)
    }
}

/// Training-time augmentation of one sequence; sequences at or above
/// `short_threshold` and evaluation calls pass through unchanged.
#[allow(clippy::too_many_arguments)]
pub fn augment_sequence<R: Real, G: Rng>(
    h: &Mat<R>,
    item_reps: &Mat<R>,
    store: &ParamStore<R>,
    sel: &SelectorParams,
    short_threshold: usize,
    training: bool,
    tau: f64,
    rng: Option<&mut G>,
) -> Result<AugmentedSequence<R>> {
    check_temperature(tau)?;
    let n = h.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    let tape = Tape::new();
    let p = store.bind_constant(&tape);
    let layout = Layout::single(n);
    let hv = tape.constant(h.clone());
    let iv = tape.constant(item_reps.clone());
    let flag = training && n < short_threshold;
    let out = augment_batch(&tape, &p, sel, hv, &layout, iv, &[flag], tau, rng, Relaxation::StraightThrough);
    Ok(AugmentedSequence {
        reps: tape.to_owned(out.reps),
        inserted_mask: out.inserted,
        insert_position: out.positions[0],
        inserted_items: out.items[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    fn setup(d: usize) -> (ParamStore<f64>, SelectorParams, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let sel = SelectorParams::init(&mut store, "selector", d, &mut rng);
        (store, sel, rng)
    }

    fn random(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn scores_are_distributions() {
        let (store, sel, mut rng) = setup(6);
        for n in 1..8 {
            let h = random(n, 6, &mut rng);
            let s = score_sequence(&h, &store, &sel).unwrap();
            for v in [&s.r_seq, &s.r_sim] {
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(v.iter().all(|&x| x >= 0.0));
            }
            if n == 1 {
                assert_eq!(s.r_seq, vec![1.0]);
                assert_eq!(s.r_sim, vec![1.0]);
            }
        }
        assert!(score_sequence(&Array2::zeros((0, 6)), &store, &sel).is_err());
    }

    #[test]
    fn similarity_examples() {
        let same = Array2::from_elem((4, 3), 0.5);
        for x in similarity_scores(&same).unwrap() {
            assert!((x - 0.25).abs() < 1e-12);
        }
        let mut h = Array2::zeros((4, 3));
        for t in 0..3 {
            h[[t, 0]] = 1.0;
        }
        h[[3, 1]] = 1.0;
        let r = similarity_scores(&h).unwrap();
        assert!(r[3] < r[0] && r[3] < r[1] && r[3] < r[2]);
    }

    #[test]
    fn zero_noise_selects_argmax_at_any_temperature() {
        let r = [0.1, 0.5, 0.15, 0.25];
        for tau in [1e-3, 0.1, 1.0, 100.0] {
            assert_eq!(select_position::<NoRng>(&r, tau, None).unwrap().hard_index, 1);
            let scaled: Vec<f64> = r.iter().map(|x| x * 7.5).collect();
            assert_eq!(select_position::<NoRng>(&scaled, tau, None).unwrap().hard_index, 1);
        }
        assert!(select_position::<NoRng>(&r, 0.0, None).is_err());
        assert!(select_position::<NoRng>(&r, -1.0, None).is_err());
    }

    #[test]
    fn low_temperature_is_nearly_one_hot() {
        let s = select_position::<NoRng>(&[0.2, 0.3, 0.5], 1e-3, None).unwrap();
        assert!(s.soft[2] > 1.0 - 1e-9);
        assert!((s.soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tau_schedule_arithmetic() {
        let s = TauSchedule::default();
        assert_eq!(s.at(0), 1.0);
        assert_eq!(s.at(39), 1.0);
        assert_eq!(s.at(40), 0.5);
        assert_eq!(s.at(80), 0.25);
        assert_eq!(s.at(4000), 0.1);
    }

    #[test]
    fn augmentation_inserts_around_chosen_position() {
        let (store, sel, mut rng) = setup(4);
        let h = random(5, 4, &mut rng);
        let items = random(7, 4, &mut rng);
        let out = augment_sequence(&h, &items, &store, &sel, 10, true, 1.0, Some(&mut rng)).unwrap();
        let t = out.insert_position.unwrap();
        assert_eq!(out.reps.nrows(), 7);
        assert_eq!(out.inserted_mask.iter().filter(|&&m| m).count(), 2);
        assert!(out.inserted_mask[t] && out.inserted_mask[t + 2] && !out.inserted_mask[t + 1]);
        assert_eq!(out.original_rows(), h);
        let (l, r) = out.inserted_items.unwrap();
        assert_eq!(out.reps.row(t), items.row(l));
        assert_eq!(out.reps.row(t + 2), items.row(r));
    }

    #[test]
    fn long_sequences_and_evaluation_pass_through() {
        let (store, sel, mut rng) = setup(4);
        let h = random(5, 4, &mut rng);
        let items = random(7, 4, &mut rng);
        let long = augment_sequence(&h, &items, &store, &sel, 5, true, 1.0, Some(&mut rng)).unwrap();
        assert_eq!(long.reps, h);
        assert!(long.inserted_mask.iter().all(|&m| !m));
        let eval = augment_sequence(&h, &items, &store, &sel, 100, false, 1.0, Some(&mut rng)).unwrap();
        assert_eq!(eval.reps, h);
    }

    #[test]
    fn item_selection_without_noise_takes_best_dot_product() {
        let (store, sel, mut rng) = setup(4);
        let h = random(3, 4, &mut rng);
        let items = random(6, 4, &mut rng);
        let (left, _, sl, _) = select_items::<f64, NoRng>(&h, 1, &items, &store, &sel, 1e-3, None).unwrap();
        // Recompute the forward context at position 0 independently.
        let tape = Tape::new();
        let p = store.bind_constant(&tape);
        let hv = tape.constant(h.clone());
        let (fwd, _) = context_states(&tape, &p, &sel, hv, &Layout::single(3));
        let q = tape.to_owned(fwd).row(0).to_owned();
        let best = (1..6)
            .max_by(|&a, &b| q.dot(&items.row(a)).partial_cmp(&q.dot(&items.row(b))).unwrap())
            .unwrap();
        assert_eq!(sl.hard_index + 1, best);
        assert_eq!(left, items.row(best).to_vec());
    }
}
