//! Independent reference implementations and the criterion checks built on
//! them. Shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssdrec::augment::{augment_sequence, score_sequence, select_position, similarity_scores, SelectorParams, Relaxation};
use ssdrec::dataio::UserSequence;
use ssdrec::denoise::{refine_augmentation, Mode};
use ssdrec::encoder::encode;
use ssdrec::model::{Model, ModelConfig, PassOptions};
use ssdrec::recommend::loss;
use ssdrec::relgraph::{GraphConfig, MultiRelationGraph, RelationEdgeList};
use ssdrec::tensor::{Mat, ParamStore, Tape};
use ssdrec::trainer::{rank_of, EvalReport};

pub type Check = Result<String, String>;

// ---------------------------------------------------------------------------
// Graph oracle

/// Random log of at most 8 users over at most 12 items; repeats allowed.
pub fn micro_log(rng: &mut ChaCha8Rng, max_len: usize) -> (Vec<UserSequence>, usize, usize) {
    let num_users = rng.gen_range(2..=8);
    let num_items = rng.gen_range(3..=12);
    let seqs = (1..=num_users)
        .map(|u| {
            let n = rng.gen_range(1..=max_len);
            UserSequence::new(u, (0..n).map(|_| rng.gen_range(1..=num_items)).collect())
        })
        .collect();
    (seqs, num_users, num_items)
}

pub type Weights = BTreeMap<(usize, usize), f64>;

pub struct OracleGraph {
    pub interactional: Weights,
    pub transitional: Weights,
    pub incompatible: Weights,
    pub similar: Weights,
    pub dissimilar: Weights,
}

fn get(w: &Weights, a: usize, b: usize) -> f64 {
    w.get(&(a, b)).copied().unwrap_or(0.0)
}

fn undirected(w: &Weights, a: usize, b: usize) -> f64 {
    get(w, a.min(b), a.max(b))
}

/// Enumerates every pair and evaluates the relation weights directly.
pub fn oracle_graph(seqs: &[UserSequence], num_users: usize, num_items: usize, cfg: &GraphConfig) -> OracleGraph {
    let mut counts = vec![vec![0.0; num_items + 1]; num_users + 1];
    for s in seqs {
        for &v in &s.items {
            counts[s.user_index][v] += 1.0;
        }
    }
    let mut interactional = Weights::new();
    for u in 1..=num_users {
        for v in 1..=num_items {
            if counts[u][v] > 0.0 {
                interactional.insert((u, v), counts[u][v]);
            }
        }
    }

    let mut transitional = Weights::new();
    for a in 1..=num_items {
        for b in 1..=num_items {
            if a == b {
                continue;
            }
            let mut w = 0.0;
            for s in seqs {
                let n = s.items.len();
                let mut best: Option<usize> = None;
                for p in 0..n {
                    for q in p + 1..n {
                        if s.items[p] == a && s.items[q] == b {
                            best = Some(best.map_or(q - p, |d| d.min(q - p)));
                        }
                    }
                }
                if let Some(d) = best {
                    w += (n - d) as f64 / n as f64;
                }
            }
            if w > 0.0 {
                transitional.insert((a, b), w);
            }
        }
    }

    let item_freq: Vec<f64> = (0..=num_items).map(|v| (1..=num_users).map(|u| counts[u][v]).sum()).collect();
    let mut ranked: Vec<usize> = (1..=num_items).collect();
    ranked.sort_by(|&a, &b| item_freq[b].partial_cmp(&item_freq[a]).unwrap().then(a.cmp(&b)));
    let quota = ((1.0 - cfg.item_ratio) * num_items as f64 - 1e-9).ceil().max(1.0) as usize;
    let popular: BTreeSet<usize> = ranked.into_iter().take(quota.min(num_items)).collect();

    let linked = |a: usize, b: usize| get(&transitional, a, b) > 0.0 || get(&transitional, b, a) > 0.0;
    let mut incompatible = Weights::new();
    for &i in &popular {
        for &j in &popular {
            if i >= j || linked(i, j) {
                continue;
            }
            let mut w = 0.0;
            for k in 1..=num_items {
                if k != i && k != j && linked(i, k) && linked(j, k) {
                    w += get(&transitional, i, k)
                        + get(&transitional, k, i)
                        + get(&transitional, j, k)
                        + get(&transitional, k, j);
                }
            }
            if w > 0.0 {
                incompatible.insert((i, j), w);
            }
        }
    }

    let mut similar = Weights::new();
    for i in 1..=num_users {
        for j in i + 1..=num_users {
            let mut common = 0.0;
            let mut any = false;
            for v in 1..=num_items {
                if counts[i][v] > 0.0 && counts[j][v] > 0.0 {
                    common += counts[i][v] + counts[j][v];
                    any = true;
                }
            }
            let total: f64 = counts[i].iter().sum::<f64>() + counts[j].iter().sum::<f64>();
            if any {
                similar.insert((i, j), common / total);
            }
        }
    }

    let mut dissimilar = Weights::new();
    for i in 1..=num_users {
        for j in i + 1..=num_users {
            if undirected(&similar, i, j) > 0.0 {
                continue;
            }
            let mut w = 0.0;
            for k in 1..=num_users {
                let (a, b) = (undirected(&similar, i, k), undirected(&similar, k, j));
                if k != i && k != j && a > 0.0 && b > 0.0 {
                    w += a + b;
                }
            }
            if w > 0.0 {
                dissimilar.insert((i, j), w);
            }
        }
    }
    OracleGraph { interactional, transitional, incompatible, similar, dissimilar }
}

fn compare_edges(name: &str, got: &RelationEdgeList, want: &Weights) -> Result<(), String> {
    let got: Weights = got.edges.iter().map(|e| ((e.src, e.dst), e.weight)).collect();
    let gk: Vec<_> = got.keys().collect();
    let wk: Vec<_> = want.keys().collect();
    if gk != wk {
        return Err(format!("{name}: edge sets differ, got {gk:?}, want {wk:?}"));
    }
    for (k, &w) in want {
        let g = got[k];
        if (g - w).abs() > 1e-9 * w.abs().max(1e-300) {
            return Err(format!("{name}: weight of {k:?} is {g}, oracle {w}"));
        }
    }
    Ok(())
}

pub fn check_graph_against_oracle(seqs: &[UserSequence], nu: usize, ni: usize, cfg: &GraphConfig) -> Result<usize, String> {
    let g = MultiRelationGraph::build(seqs, nu, ni, cfg).map_err(|e| e.to_string())?;
    let o = oracle_graph(seqs, nu, ni, cfg);
    compare_edges("interactional", &g.interactional, &o.interactional)?;
    compare_edges("transitional", &g.transitional, &o.transitional)?;
    compare_edges("incompatible", &g.incompatible, &o.incompatible)?;
    compare_edges("similar_user", &g.similar_user, &o.similar)?;
    compare_edges("dissimilar_user", &g.dissimilar_user, &o.dissimilar)?;
    Ok(g.interactional.len()
        + g.transitional.len()
        + g.incompatible.len()
        + g.similar_user.len()
        + g.dissimilar_user.len())
}

pub fn criterion_graph(logs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20240501);
    let mut edges = 0;
    let mut nonempty = [0usize; 2];
    // Lower few-shot ratios make more items popular and exercise the
    // incompatible relation, which the default leaves mostly empty.
    let ratios = [0.8, 0.5, 0.2];
    for case in 0..logs {
        let (seqs, nu, ni) = micro_log(&mut rng, if case % 2 == 0 { 10 } else { 4 });
        let cfg = GraphConfig { item_ratio: ratios[case % 3], ..Default::default() };
        let o = oracle_graph(&seqs, nu, ni, &cfg);
        nonempty[0] += usize::from(!o.incompatible.is_empty());
        nonempty[1] += usize::from(!o.dissimilar.is_empty());
        edges += check_graph_against_oracle(&seqs, nu, ni, &cfg).map_err(|e| format!("log {case}: {e}"))?;
    }
    Ok(format!(
        "{logs} logs, {edges} edges matched; {} logs with incompatible edges, {} with dissimilar edges",
        nonempty[0], nonempty[1]
    ))
}

// ---------------------------------------------------------------------------
// Selector oracle

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar LSTM with gate order input, forget, cell, output; returns the
/// hidden state after each step, in input order.
pub fn scalar_lstm(x: &Mat<f64>, w_ih: &Mat<f64>, w_hh: &Mat<f64>, b: &Mat<f64>, reverse: bool) -> Vec<Vec<f64>> {
    let n = x.nrows();
    let d = w_hh.nrows();
    let mut h = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut out = vec![vec![0.0; d]; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let mut z = vec![0.0; 4 * d];
        for (g, zg) in z.iter_mut().enumerate() {
            let mut s = b[[0, g]];
            for k in 0..x.ncols() {
                s += x[[t, k]] * w_ih[[k, g]];
            }
            for k in 0..d {
                s += h[k] * w_hh[[k, g]];
            }
            *zg = s;
        }
        for j in 0..d {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[d + j]);
            let g = z[2 * d + j].tanh();
            let o = sigmoid(z[3 * d + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out[t] = h.clone();
    }
    out
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn oracle_sequentiality(h: &Mat<f64>, store: &ParamStore<f64>, sel: &SelectorParams) -> Vec<f64> {
    let f = sel.forward;
    let b = sel.backward;
    let hl = scalar_lstm(h, store.get(f.w_ih), store.get(f.w_hh), store.get(f.bias), false);
    let hr = scalar_lstm(h, store.get(b.w_ih), store.get(b.w_hh), store.get(b.bias), true);
    let raw: Vec<f64> =
        (0..h.nrows()).map(|t| (0..h.ncols()).map(|k| hl[t][k] * hr[t][k] * h[[t, k]]).sum()).collect();
    softmax(&raw)
}

pub fn oracle_similarity(h: &Mat<f64>) -> Vec<f64> {
    let n = h.nrows();
    if n == 1 {
        return vec![1.0];
    }
    let raw: Vec<f64> = (0..n)
        .map(|t| {
            let mut s = 0.0;
            for i in 0..n {
                if i != t {
                    s += (0..h.ncols()).map(|k| h[[t, k]] * h[[i, k]]).sum::<f64>();
                }
            }
            s / (n - 1) as f64
        })
        .collect();
    softmax(&raw)
}

pub fn random_mat(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn total_variation(freq: &[f64], p: &[f64]) -> f64 {
    0.5 * freq.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Empirical hard-index frequencies of `draws` Gumbel selections at `tau`.
pub fn selection_frequencies(r: &[f64], tau: f64, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; r.len()];
    for _ in 0..draws {
        hits[select_position(r, tau, Some(&mut rng)).unwrap().hard_index] += 1;
    }
    hits.iter().map(|&h| h as f64 / draws as f64).collect()
}

pub fn criterion_selector() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 6;
    let mut store = ParamStore::<f64>::new();
    let sel = SelectorParams::init(&mut store, "selector", d, &mut rng);
    let mut worst = [0.0f64; 2];
    for case in 0..50 {
        let n = rng.gen_range(1..=9);
        let h = random_mat(n, d, 1.5, &mut rng);
        let got = score_sequence(&h, &store, &sel).map_err(|e| e.to_string())?;
        let seq = max_abs_diff(&got.r_seq, &oracle_sequentiality(&h, &store, &sel));
        let sim = max_abs_diff(&similarity_scores(&h).map_err(|e| e.to_string())?, &oracle_similarity(&h));
        let sim_joint = max_abs_diff(&got.r_sim, &oracle_similarity(&h));
        if seq > 1e-6 || sim > 1e-6 || sim_joint > 1e-6 {
            return Err(format!("case {case} (n={n}): sequentiality err {seq:e}, similarity err {sim:e}"));
        }
        worst[0] = worst[0].max(seq);
        worst[1] = worst[1].max(sim.max(sim_joint));
    }
    let mut worst_tv = 0.0f64;
    for case in 0..5 {
        let n = rng.gen_range(3..=8);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        // Unnormalised joint scores select with the same distribution.
        let freq = selection_frequencies(&raw, 1.0, 10_000, 100 + case);
        let tv = total_variation(&freq, &p);
        if tv >= 0.03 {
            return Err(format!("selection case {case}: TV {tv:.4} against {p:?}"));
        }
        worst_tv = worst_tv.max(tv);
    }
    Ok(format!(
        "max |err| sequentiality {:.1e}, similarity {:.1e}; max TV {worst_tv:.4} over 5 x 10^4 draws",
        worst[0], worst[1]
    ))
}

// ---------------------------------------------------------------------------
// Gradient checks

pub struct MicroSetup {
    pub graph: MultiRelationGraph,
    pub batch: Vec<(usize, Vec<usize>)>,
    pub targets: Vec<usize>,
}

/// Six users over ten items, with a four-sequence training batch.
pub fn micro_setup() -> MicroSetup {
    let seqs = vec![
        vec![1, 2, 3, 4, 5],
        vec![2, 3, 6, 7],
        vec![1, 4, 6, 8, 9, 2],
        vec![9, 10, 1, 3],
        vec![5, 7, 8, 10, 2],
        vec![3, 1, 10, 6],
    ];
    let train: Vec<UserSequence> = seqs.iter().enumerate().map(|(u, s)| UserSequence::new(u + 1, s.clone())).collect();
    let graph = MultiRelationGraph::build(&train, 6, 10, &GraphConfig::default()).unwrap();
    let batch = vec![(1, vec![1, 2, 3]), (2, vec![2, 3, 6]), (3, vec![1, 4, 6, 8, 9]), (4, vec![9, 10])];
    MicroSetup { graph, batch, targets: vec![4, 7, 2, 1] }
}

pub fn micro_model(setup: &MicroSetup, share_selector: bool) -> Model<f64> {
    let mut config = ModelConfig { short_threshold: Some(100.0), share_selector, max_positions: 8, ..Default::default() };
    config.encoder.dim = 6;
    Model::<f64>::new(&setup.graph, config, 0.0, 3).unwrap()
}

/// Training loss and gradients of one step with a fixed noise stream.
pub fn step_loss(model: &Model<f64>, setup: &MicroSetup, relax: Relaxation, want_grads: bool) -> (f64, Vec<Mat<f64>>) {
    let tape = Tape::new();
    let p = model.store.bind(&tape);
    let enc = encode(&tape, &p, &model.encoder, &model.ops);
    let batch: Vec<(usize, &[usize])> = setup.batch.iter().map(|(u, s)| (*u, s.as_slice())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let opts = PassOptions { mode: Mode::Train, tau: 1.0, rng: Some(&mut rng), relax };
    let out = model.forward(&tape, &p, enc.items, enc.users, &batch, opts).unwrap();
    let l = loss(&tape, out.scores, &setup.targets).unwrap();
    let value = tape.value(l)[[0, 0]];
    if !want_grads {
        return (value, Vec::new());
    }
    let mut g = tape.backward(l);
    (value, model.store.collect_grads(&p, &mut g))
}

pub struct GroupCheck {
    pub name: String,
    pub max_grad: f64,
    pub sampled: usize,
    pub worst_rel: f64,
}

/// Relative disagreement with an absolute floor for gradients that vanish.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Central differences on up to `per_group` sampled trainable entries per
/// parameter group.
pub fn gradient_check(model: &mut Model<f64>, setup: &MicroSetup, per_group: usize, step: f64) -> Vec<GroupCheck> {
    let (_, grads) = step_loss(model, setup, Relaxation::Soft, true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Vec::new();
    for (name, ids) in model.param_groups() {
        let mut candidates = Vec::new();
        let mut max_grad = 0.0f64;
        for &id in &ids {
            let g = &grads[id.index()];
            max_grad = g.iter().fold(max_grad, |m, x| m.max(x.abs()));
            let frozen_padding = id == model.encoder.item_table || id == model.encoder.user_table;
            for ((r, c), _) in g.indexed_iter() {
                if !(frozen_padding && r == 0) {
                    candidates.push((id, r, c));
                }
            }
        }
        let take = per_group.min(candidates.len());
        let picks = rand::seq::index::sample(&mut rng, candidates.len(), take);
        let mut worst = 0.0f64;
        for k in picks {
            let (id, r, c) = candidates[k];
            let original = model.store.get(id)[[r, c]];
            model.store.get_mut(id)[[r, c]] = original + step;
            let (plus, _) = step_loss(model, setup, Relaxation::Soft, false);
            model.store.get_mut(id)[[r, c]] = original - step;
            let (minus, _) = step_loss(model, setup, Relaxation::Soft, false);
            model.store.get_mut(id)[[r, c]] = original;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_err(grads[id.index()][[r, c]], numeric));
        }
        out.push(GroupCheck { name, max_grad, sampled: take, worst_rel: worst });
    }
    out
}

pub fn criterion_gradients() -> Check {
    let setup = micro_setup();
    let mut lines = Vec::new();
    let mut groups = 0;
    for share in [true, false] {
        let mut model = micro_model(&setup, share);
        let (_, hard) = step_loss(&model, &setup, Relaxation::StraightThrough, true);
        for (name, ids) in model.param_groups() {
            let m = ids.iter().map(|id| hard[id.index()].iter().fold(0.0f64, |a, x| a.max(x.abs()))).fold(0.0, f64::max);
            if !(m > 0.0) {
                return Err(format!("group {name} has no gradient in the straight-through step"));
            }
        }
        for g in gradient_check(&mut model, &setup, 20, 1e-4) {
            if !(g.max_grad > 0.0) {
                return Err(format!("group {} has no gradient", g.name));
            }
            if g.worst_rel > 1e-3 {
                return Err(format!("group {}: finite-difference rel err {:.2e}", g.name, g.worst_rel));
            }
            groups += 1;
            if share {
                lines.push(format!("{} {:.0e}", g.name, g.worst_rel));
            }
        }
    }
    Ok(format!("{groups} group checks nonzero and within 1e-3 (shared and separate selector); worst rel err: {}", lines.join(", ")))
}

// ---------------------------------------------------------------------------
// Structural invariants and metric oracle

/// Ranking metrics from a full sort: scores descending, ties by index.
pub fn oracle_report(rows: &[Vec<f64>], targets: &[usize], excluded: &[Vec<usize>]) -> EvalReport {
    let mut sums = [0.0f64; 7];
    for ((row, &t), ex) in rows.iter().zip(targets).zip(excluded) {
        let mut order: Vec<usize> = (0..row.len()).filter(|j| *j == t || !ex.contains(j)).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let rank = order.iter().position(|&j| j == t).unwrap() + 1;
        for (i, k) in [5usize, 10, 20].into_iter().enumerate() {
            if rank <= k {
                sums[i] += 1.0;
                sums[3 + i] += 1.0 / ((rank + 1) as f64).log2();
            }
        }
        if rank <= 20 {
            sums[6] += 1.0 / rank as f64;
        }
    }
    let n = rows.len() as f64;
    EvalReport {
        hr5: sums[0] / n,
        hr10: sums[1] / n,
        hr20: sums[2] / n,
        ndcg5: sums[3] / n,
        ndcg10: sums[4] / n,
        ndcg20: sums[5] / n,
        mrr20: sums[6] / n,
        users: rows.len(),
        ..Default::default()
    }
}

pub fn reports_match(a: &EvalReport, b: &EvalReport) -> bool {
    let pairs = [
        (a.hr5, b.hr5),
        (a.hr10, b.hr10),
        (a.hr20, b.hr20),
        (a.ndcg5, b.ndcg5),
        (a.ndcg10, b.ndcg10),
        (a.ndcg20, b.ndcg20),
        (a.mrr20, b.mrr20),
    ];
    a.users == b.users && pairs.iter().all(|(x, y)| (x - y).abs() <= 1e-12)
}

pub fn check_metrics(instances: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..instances {
        let users = rng.gen_range(1..=12);
        let v = rng.gen_range(2..=40);
        // Coarse scores so ties are common.
        let rows: Vec<Vec<f64>> = (0..users).map(|_| (0..v).map(|_| rng.gen_range(0..6) as f64).collect()).collect();
        let targets: Vec<usize> = (0..users).map(|_| rng.gen_range(0..v)).collect();
        let excluded: Vec<Vec<usize>> = targets
            .iter()
            .map(|&t| (0..v).filter(|&j| j != t && rng.gen_bool(0.2)).collect())
            .collect();
        for filter in [false, true] {
            let ex: Vec<Vec<usize>> = if filter { excluded.clone() } else { vec![Vec::new(); users] };
            let ranks: Vec<usize> = rows.iter().zip(&targets).zip(&ex).map(|((r, &t), e)| rank_of(r, t, e)).collect();
            let got = EvalReport::from_ranks(&ranks);
            let want = oracle_report(&rows, &targets, &ex);
            if !reports_match(&got, &want) {
                return Err(format!("instance {case} (filter {filter}): {got:?} vs oracle {want:?}"));
            }
        }
    }
    Ok(())
}

pub fn check_augmentation(samples: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = 5;
    let mut store = ParamStore::<f64>::new();
    let sel = SelectorParams::init(&mut store, "selector", d, &mut rng);
    let items = random_mat(9, d, 1.0, &mut rng);
    for case in 0..samples {
        let n = rng.gen_range(1..=8);
        let h = random_mat(n, d, 1.0, &mut rng);
        let aug = augment_sequence(&h, &items, &store, &sel, 100, true, 0.5, Some(&mut rng)).map_err(|e| e.to_string())?;
        if aug.reps.nrows() != n + 2 || aug.inserted_mask.iter().filter(|&&m| m).count() != 2 {
            return Err(format!("case {case}: length {} for n={n}", aug.reps.nrows()));
        }
        let t = aug.insert_position.ok_or("no insert position")?;
        if !(aug.inserted_mask[t] && !aug.inserted_mask[t + 1] && aug.inserted_mask[t + 2]) {
            return Err(format!("case {case}: mask {:?} does not bracket position {t}", aug.inserted_mask));
        }
        if aug.original_rows() != h {
            return Err(format!("case {case}: removing the inserted rows does not recover the input"));
        }
        let refined = refine_augmentation(&aug, &store, &sel);
        for (i, &m) in aug.inserted_mask.iter().enumerate() {
            if !m && !refined.surviving_mask[i] {
                return Err(format!("case {case}: refinement removed original row {i}"));
            }
        }
        let m = refined.reps.nrows();
        if !(n..=n + 2).contains(&m) {
            return Err(format!("case {case}: refined length {m} for n={n}"));
        }
        let eval = augment_sequence(&h, &items, &store, &sel, 100, false, 0.5, Some(&mut rng)).map_err(|e| e.to_string())?;
        if eval.reps != h || eval.inserted_mask.iter().any(|&m| m) {
            return Err(format!("case {case}: evaluation mode augmented"));
        }
    }
    Ok(())
}

pub fn check_eval_determinism() -> Result<(), String> {
    let setup = micro_setup();
    let mut config = ModelConfig { max_positions: 8, ..Default::default() };
    config.encoder.dim = 8;
    let model = Model::<f32>::new(&setup.graph, config, 4.0, 1).map_err(|e| e.to_string())?;
    let batch: Vec<(usize, &[usize])> = setup.batch.iter().map(|(u, s)| (*u, s.as_slice())).collect();
    let a = model.score(&model.encode_tables(), &batch).map_err(|e| e.to_string())?;
    let b = model.score(&model.encode_tables(), &batch).map_err(|e| e.to_string())?;
    let bits = |m: &Mat<f32>| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if bits(&a) != bits(&b) {
        return Err("two evaluation passes differ".into());
    }
    let ka = model.keep_decisions(&model.encode_tables(), &batch).map_err(|e| e.to_string())?;
    let kb = model.keep_decisions(&model.encode_tables(), &batch).map_err(|e| e.to_string())?;
    if ka != kb {
        return Err("keep decisions differ between passes".into());
    }
    Ok(())
}

pub fn criterion_invariants() -> Check {
    check_augmentation(200)?;
    check_eval_determinism()?;
    check_metrics(300)?;
    Ok("200 augmentations round-trip, refinement kept every original row, eval passes bit-identical, 300 ranking instances exact".into())
}
