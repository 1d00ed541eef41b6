//! Sequential backbones, full-universe scoring and the training loss.

use rand::Rng;

use crate::encoder::at;
use crate::error::{Error, Result};
use crate::tensor::{lit, GruWeights, Layout, ParamId, ParamStore, Real, Tape, Var};

pub trait Backbone<R: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn params(&self) -> Vec<ParamId>;

    /// One `1 × d` representation per sequence of `layout`.
    fn forward(&self, tape: &Tape<R>, p: &[Var], reps: Var, layout: &Layout) -> Var;
}

/// One causal self-attention block with learned positions, residual
/// connections, layer normalisation and a position-wise feed-forward layer.
/// The last row of each sequence is its representation.
#[derive(Clone, Copy, Debug)]
pub struct AttentionBackbone {
    pub positions: ParamId,
    pub max_positions: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl AttentionBackbone {
    pub fn init<R: Real, G: Rng>(store: &mut ParamStore<R>, d: usize, max_positions: usize, rng: &mut G) -> Self {
        let ones = |store: &mut ParamStore<R>, name: &str| store.add(name, ndarray::Array2::from_elem((1, d), R::one()));
        Self {
            positions: store.uniform("backbone.positions", max_positions, d, 1.0 / (d as f64).sqrt(), rng),
            max_positions,
            wq: store.xavier("backbone.wq", d, d, rng),
            wk: store.xavier("backbone.wk", d, d, rng),
            wv: store.xavier("backbone.wv", d, d, rng),
            ln1_gain: ones(store, "backbone.ln1_gain"),
            ln1_bias: store.zeros("backbone.ln1_bias", 1, d),
            ff_w1: store.xavier("backbone.ff_w1", d, d, rng),
            ff_b1: store.zeros("backbone.ff_b1", 1, d),
            ff_w2: store.xavier("backbone.ff_w2", d, d, rng),
            ff_b2: store.zeros("backbone.ff_b2", 1, d),
            ln2_gain: ones(store, "backbone.ln2_gain"),
            ln2_bias: store.zeros("backbone.ln2_bias", 1, d),
        }
    }

    /// Position rows aligned to the end of each sequence, so the most recent
    /// row always receives the last position embedding.
    fn position_rows(&self, layout: &Layout) -> Vec<usize> {
        let mut rows = Vec::with_capacity(layout.total());
        for s in 0..layout.num_segments() {
            let n = layout.len_of(s);
            for t in 0..n {
                let from_end = n - 1 - t;
                rows.push(self.max_positions - 1 - from_end.min(self.max_positions - 1));
            }
        }
        rows
    }
}

impl<R: Real> Backbone<R> for AttentionBackbone {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn params(&self) -> Vec<ParamId> {
        vec![
            self.positions,
            self.wq,
            self.wk,
            self.wv,
            self.ln1_gain,
            self.ln1_bias,
            self.ff_w1,
            self.ff_b1,
            self.ff_w2,
            self.ff_b2,
            self.ln2_gain,
            self.ln2_bias,
        ]
    }

    fn forward(&self, tape: &Tape<R>, p: &[Var], reps: Var, layout: &Layout) -> Var {
        let eps = lit::<R>(1e-8);
        let pos = tape.gather_rows(at(p, self.positions), &self.position_rows(layout));
        let x = tape.add(reps, pos);
        let q = tape.matmul(x, at(p, self.wq));
        let k = tape.matmul(x, at(p, self.wk));
        let v = tape.matmul(x, at(p, self.wv));
        let a = tape.causal_attention(q, k, v, layout);
        let x1 = tape.layer_norm(tape.add(x, a), at(p, self.ln1_gain), at(p, self.ln1_bias), eps);
        let f = tape.relu(tape.add_row(tape.matmul(x1, at(p, self.ff_w1)), at(p, self.ff_b1)));
        let f = tape.add_row(tape.matmul(f, at(p, self.ff_w2)), at(p, self.ff_b2));
        let x2 = tape.layer_norm(tape.add(x1, f), at(p, self.ln2_gain), at(p, self.ln2_bias), eps);
        tape.gather_rows(x2, &layout.last_rows())
    }
}

/// Unidirectional gated recurrent encoder; the final hidden state is the
/// representation.
#[derive(Clone, Copy, Debug)]
pub struct RecurrentBackbone {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl RecurrentBackbone {
    pub fn init<R: Real, G: Rng>(store: &mut ParamStore<R>, d: usize, rng: &mut G) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        Self {
            w_ih: store.uniform("backbone.gru.w_ih", d, 3 * d, bound, rng),
            w_hh: store.uniform("backbone.gru.w_hh", d, 3 * d, bound, rng),
            b_ih: store.uniform("backbone.gru.b_ih", 1, 3 * d, bound, rng),
            b_hh: store.uniform("backbone.gru.b_hh", 1, 3 * d, bound, rng),
        }
    }
}

impl<R: Real> Backbone<R> for RecurrentBackbone {
    fn name(&self) -> &'static str {
        "recurrent"
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.w_ih, self.w_hh, self.b_ih, self.b_hh]
    }

    fn forward(&self, tape: &Tape<R>, p: &[Var], reps: Var, layout: &Layout) -> Var {
        let w = GruWeights {
            w_ih: at(p, self.w_ih),
            w_hh: at(p, self.w_hh),
            b_ih: at(p, self.b_ih),
            b_hh: at(p, self.b_hh),
        };
        let h = tape.gru(reps, w, layout);
        tape.gather_rows(h, &layout.last_rows())
    }
}

pub fn backbone_by_name<R: Real, G: Rng>(
    name: &str,
    store: &mut ParamStore<R>,
    d: usize,
    max_positions: usize,
    rng: &mut G,
) -> Result<Box<dyn Backbone<R>>> {
    match name {
        "attention" => Ok(Box::new(AttentionBackbone::init(store, d, max_positions, rng))),
        "recurrent" => Ok(Box::new(RecurrentBackbone::init(store, d, rng))),
        _ => Err(Error::Config(format!("unknown backbone {name:?} (attention | recurrent)"))),
    }
}

/// Logits over items `1..=V`: column `j` scores item `j + 1`.
pub fn score_full<R: Real>(tape: &Tape<R>, h_s: Var, item_reps: Var) -> Var {
    let v = tape.shape(item_reps).0 - 1;
    tape.matmul_t(h_s, tape.slice_rows(item_reps, 1, v))
}

/// Mean full-softmax cross-entropy at the target items.
pub fn loss<R: Real>(tape: &Tape<R>, scores: Var, targets: &[usize]) -> Result<Var> {
    let v = tape.shape(scores).1;
    let mut cols = Vec::with_capacity(targets.len());
    for &t in targets {
        if t == 0 || t > v {
            return Err(Error::InvalidArgument(format!("target item {t} is padding or outside 1..={v}")));
        }
        cols.push(t - 1);
    }
    Ok(tape.cross_entropy(scores, &cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Adam, AdamConfig};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn orthogonal_items_score_by_dot_product() {
        let tape = Tape::<f64>::new();
        let mut items = Array2::zeros((4, 3));
        for i in 1..4 {
            items[[i, i - 1]] = 1.0;
        }
        let items = tape.constant(items);
        let h = tape.constant(Array2::from_shape_vec((1, 3), vec![0.0, 1.0, 0.0]).unwrap());
        let s = tape.to_owned(score_full(&tape, h, items));
        assert_eq!(s.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_scores_give_log_v() {
        let tape = Tape::<f64>::new();
        let s = tape.constant(Array2::from_elem((2, 7), 0.3));
        let l = loss(&tape, s, &[1, 7]).unwrap();
        assert!((tape.value(l)[[0, 0]] - 7f64.ln()).abs() < 1e-12);
        assert!(loss(&tape, s, &[0]).is_err());
        assert!(loss(&tape, s, &[8]).is_err());
    }

    #[test]
    fn recurrent_single_step_from_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let b = RecurrentBackbone::init(&mut store, 3, &mut rng);
        let x = random(1, 3, &mut rng);
        let tape = Tape::new();
        let p = store.bind_constant(&tape);
        let out = tape.to_owned(Backbone::forward(&b, &tape, &p, tape.constant(x.clone()), &Layout::single(1)));
        let (wi, bi, bh) = (store.get(b.w_ih), store.get(b.b_ih), store.get(b.b_hh));
        let gi = x.dot(wi) + bi;
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        for k in 0..3 {
            let r = sig(gi[[0, k]] + bh[[0, k]]);
            let z = sig(gi[[0, 3 + k]] + bh[[0, 3 + k]]);
            let n = (gi[[0, 6 + k]] + r * bh[[0, 6 + k]]).tanh();
            assert!((out[[0, k]] - (1.0 - z) * n).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_output_ignores_rows_after_the_prefix_is_cut() {
        // Changing a row after position j changes nothing at row j; with the
        // last-row readout we check the full per-row output directly.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f64>::new();
        let b = AttentionBackbone::init(&mut store, 4, 10, &mut rng);
        let x = random(5, 4, &mut rng);
        let run = |x: &Array2<f64>| {
            let tape = Tape::new();
            let p = store.bind_constant(&tape);
            let xv = tape.constant(x.clone());
            let layout = Layout::single(5);
            let pos = tape.gather_rows(p[b.positions.index()], &b.position_rows(&layout));
            let xin = tape.add(xv, pos);
            let q = tape.matmul(xin, p[b.wq.index()]);
            let k = tape.matmul(xin, p[b.wk.index()]);
            let v = tape.matmul(xin, p[b.wv.index()]);
            tape.to_owned(tape.causal_attention(q, k, v, &layout))
        };
        let base = run(&x);
        let mut y = x.clone();
        y.row_mut(4).fill(9.0);
        let changed = run(&y);
        for r in 0..4 {
            for c in 0..4 {
                assert!((base[[r, c]] - changed[[r, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_is_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let b = AttentionBackbone::init(&mut store, 4, 10, &mut rng);
        let x = random(3, 4, &mut rng);
        let mut y = x.clone();
        y.row_mut(0).assign(&x.row(1));
        y.row_mut(1).assign(&x.row(0));
        let tape = Tape::new();
        let p = store.bind_constant(&tape);
        let a = tape.to_owned(Backbone::forward(&b, &tape, &p, tape.constant(x), &Layout::single(3)));
        let c = tape.to_owned(Backbone::forward(&b, &tape, &p, tape.constant(y), &Layout::single(3)));
        assert!((&a - &c).iter().any(|d| d.abs() > 1e-9));
    }

    #[test]
    fn one_step_reduces_toy_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let b = AttentionBackbone::init(&mut store, 4, 10, &mut rng);
        let items = store.uniform("items", 6, 4, 0.5, &mut rng);
        let seq = random(3, 4, &mut rng);
        let eval = |store: &ParamStore<f64>| {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let h = Backbone::forward(&b, &tape, &p, tape.constant(seq.clone()), &Layout::single(3));
            let l = loss(&tape, score_full(&tape, h, p[items.index()]), &[2]).unwrap();
            let value = tape.value(l)[[0, 0]];
            let mut g = tape.backward(l);
            (value, store.collect_grads(&p, &mut g))
        };
        let (before, grads) = eval(&store);
        let mut opt = Adam::new(AdamConfig { learning_rate: 1e-3, ..Default::default() }, &store);
        opt.step(&mut store, &grads);
        let (after, _) = eval(&store);
        assert!(after < before, "{after} >= {before}");
    }
}
