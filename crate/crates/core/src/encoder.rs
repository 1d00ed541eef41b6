//! Embedding tables and the global relation encoder.
//!
//! Each relation aggregates neighbour embeddings with a sparse product. The
//! transitional relation mixes its incoming and outgoing aggregates with a
//! two-way attention; the convolutional relations combine the aggregate with
//! the node's own embedding through a depthwise `2 × 1` filter bank. Fusion
//! feeds the three per-side representations through a two-layer network.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relgraph::{MultiRelationGraph, RelationEdgeList};
use crate::tensor::{lit, Csr, Mat, ParamId, ParamStore, Real, SparseOperator, Tape, Var};

/// How neighbour weights are scaled before aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateNorm {
    /// Raw edge weights.
    None,
    /// Each node's incoming weights divided by their sum.
    Mean,
}

impl std::str::FromStr for AggregateNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AggregateNorm::None),
            "mean" => Ok(AggregateNorm::Mean),
            _ => Err(Error::Config(format!("unknown aggregate normalisation {s:?} (none | mean)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    /// Scaling of the transitional, incompatible, similar and dissimilar aggregates.
    pub aggregate_norm: AggregateNorm,
    /// Degree normalisation of the parameter-free interaction sums.
    pub interaction_norm: AggregateNorm,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { dim: 100, aggregate_norm: AggregateNorm::Mean, interaction_norm: AggregateNorm::Mean }
    }
}

/// Sparse aggregation operators derived from a graph. Row and column 0 are
/// the padding node and never carry weight.
#[derive(Clone, Debug)]
pub struct GraphOperators<R> {
    pub num_users: usize,
    pub num_items: usize,
    /// Row `v` gathers `w(v_i → v)` over predecessors `v_i`.
    pub trans_in: SparseOperator<R>,
    /// Row `v` gathers `w(v → v_j)` over successors `v_j`.
    pub trans_out: SparseOperator<R>,
    pub incompatible: SparseOperator<R>,
    /// Row `v` gathers interaction counts over users.
    pub item_from_users: SparseOperator<R>,
    /// Row `u` gathers interaction counts over items.
    pub user_from_items: SparseOperator<R>,
    pub similar: SparseOperator<R>,
    pub dissimilar: SparseOperator<R>,
    /// `(items + 1) × 2` additive mask for the in/out attention logits.
    attention_mask: Mat<R>,
    item_rows: Mat<R>,
    user_rows: Mat<R>,
}

fn operator<R: Real>(
    rows: usize,
    cols: usize,
    triplets: impl Iterator<Item = (usize, usize, f64)>,
    norm: AggregateNorm,
) -> SparseOperator<R> {
    let t: Vec<(usize, usize, R)> = triplets.map(|(r, c, w)| (r, c, lit(w))).collect();
    let m = Csr::from_triplets(rows, cols, &t);
    SparseOperator::new(match norm {
        AggregateNorm::None => m,
        AggregateNorm::Mean => m.row_normalized(),
    })
}

fn symmetric(list: &RelationEdgeList) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    list.edges.iter().flat_map(|e| [(e.src, e.dst, e.weight), (e.dst, e.src, e.weight)])
}

/// `n × 1` column of ones with the padding row zeroed.
fn non_padding<R: Real>(n: usize) -> Mat<R> {
    let mut m = Array2::from_elem((n, 1), R::one());
    m[[0, 0]] = R::zero();
    m
}

impl<R: Real> GraphOperators<R> {
    pub fn new(graph: &MultiRelationGraph, cfg: &EncoderConfig) -> Self {
        let (nu, ni) = (graph.num_users + 1, graph.num_items + 1);
        let norm = cfg.aggregate_norm;
        let tr = &graph.transitional.edges;
        let trans_in = operator(ni, ni, tr.iter().map(|e| (e.dst, e.src, e.weight)), norm);
        let trans_out = operator(ni, ni, tr.iter().map(|e| (e.src, e.dst, e.weight)), norm);
        let inter = &graph.interactional.edges;
        let item_from_users =
            operator(ni, nu, inter.iter().map(|e| (e.dst, e.src, e.weight)), cfg.interaction_norm);
        let user_from_items =
            operator(nu, ni, inter.iter().map(|e| (e.src, e.dst, e.weight)), cfg.interaction_norm);

        let mut attention_mask = Array2::<R>::zeros((ni, 2));
        let blocked = lit::<R>(-1e9);
        for v in 0..ni {
            let has_in = trans_in.matrix().row_nnz(v) > 0;
            let has_out = trans_out.matrix().row_nnz(v) > 0;
            // With both sides empty the combined vector is zero either way.
            if has_in != has_out {
                attention_mask[[v, if has_in { 1 } else { 0 }]] = blocked;
            }
        }

        Self {
            num_users: graph.num_users,
            num_items: graph.num_items,
            trans_in,
            trans_out,
            incompatible: operator(ni, ni, symmetric(&graph.incompatible), norm),
            item_from_users,
            user_from_items,
            similar: operator(nu, nu, symmetric(&graph.similar_user), norm),
            dissimilar: operator(nu, nu, symmetric(&graph.dissimilar_user), norm),
            attention_mask,
            item_rows: non_padding(ni),
            user_rows: non_padding(nu),
        }
    }
}

/// Depthwise `2 × 1` filter bank: row 0 weighs the neighbour aggregate, row 1
/// the node's own embedding.
#[derive(Clone, Copy, Debug)]
pub struct ConvIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderParams {
    pub item_table: ParamId,
    pub user_table: ParamId,
    pub att_in: ParamId,
    pub att_out: ParamId,
    pub conv_transitional: ParamId,
    pub conv_transitional_bias: ParamId,
    pub conv_incompatible: ConvIds,
    pub conv_similar: ConvIds,
    pub conv_dissimilar: ConvIds,
    pub fuse_item: FfnIds,
    pub fuse_user: FfnIds,
}

fn conv_ids<R: Real, G: Rng>(store: &mut ParamStore<R>, name: &str, d: usize, rng: &mut G) -> ConvIds {
    ConvIds {
        weight: store.uniform(&format!("encoder.{name}.weight"), 2, d, 1.0, rng),
        bias: store.zeros(&format!("encoder.{name}.bias"), 1, d),
    }
}

fn ffn_ids<R: Real, G: Rng>(store: &mut ParamStore<R>, name: &str, d: usize, rng: &mut G) -> FfnIds {
    FfnIds {
        w1: store.xavier(&format!("encoder.{name}.w1"), 3 * d, d, rng),
        b1: store.zeros(&format!("encoder.{name}.b1"), 1, d),
        w2: store.xavier(&format!("encoder.{name}.w2"), d, d, rng),
        b2: store.zeros(&format!("encoder.{name}.b2"), 1, d),
    }
}

impl EncoderParams {
    pub fn init<R: Real, G: Rng>(
        store: &mut ParamStore<R>,
        num_users: usize,
        num_items: usize,
        d: usize,
        rng: &mut G,
    ) -> Self {
        let emb_bound = 1.0 / (d as f64).sqrt();
        let item_table = store.uniform("encoder.item_table", num_items + 1, d, emb_bound, rng);
        store.freeze_row(item_table, 0);
        let user_table = store.uniform("encoder.user_table", num_users + 1, d, emb_bound, rng);
        store.freeze_row(user_table, 0);
        let conv_t = conv_ids(store, "conv_transitional", d, rng);
        Self {
            item_table,
            user_table,
            att_in: store.xavier("encoder.att_in", d, d, rng),
            att_out: store.xavier("encoder.att_out", d, d, rng),
            conv_transitional: conv_t.weight,
            conv_transitional_bias: conv_t.bias,
            conv_incompatible: conv_ids(store, "conv_incompatible", d, rng),
            conv_similar: conv_ids(store, "conv_similar", d, rng),
            conv_dissimilar: conv_ids(store, "conv_dissimilar", d, rng),
            fuse_item: ffn_ids(store, "fuse_item", d, rng),
            fuse_user: ffn_ids(store, "fuse_user", d, rng),
        }
    }

    /// The convolution filter groups, for gradient reporting.
    pub fn conv_groups(&self) -> [(&'static str, [ParamId; 2]); 4] {
        [
            ("conv_transitional", [self.conv_transitional, self.conv_transitional_bias]),
            ("conv_incompatible", [self.conv_incompatible.weight, self.conv_incompatible.bias]),
            ("conv_similar", [self.conv_similar.weight, self.conv_similar.bias]),
            ("conv_dissimilar", [self.conv_dissimilar.weight, self.conv_dissimilar.bias]),
        ]
    }
}

#[inline]
pub(crate) fn at(p: &[Var], id: ParamId) -> Var {
    p[id.index()]
}

/// Row lookup with bounds checking.
pub fn embed<R: Real>(table: &Mat<R>, index: usize) -> Result<ndarray::Array1<R>> {
    if index >= table.nrows() {
        return Err(Error::IndexOutOfRange { index, rows: table.nrows() });
    }
    Ok(table.row(index).to_owned())
}

/// `ReLU(agg ⊙ w₀ + own ⊙ w₁ + b)`.
pub fn conv2x1<R: Real>(tape: &Tape<R>, agg: Var, own: Var, weight: Var, bias: Var) -> Var {
    let w0 = tape.slice_rows(weight, 0, 1);
    let w1 = tape.slice_rows(weight, 1, 1);
    let mixed = tape.add(tape.mul_row(agg, w0), tape.mul_row(own, w1));
    tape.relu(tape.add_row(mixed, bias))
}

fn ffn<R: Real>(tape: &Tape<R>, p: &[Var], ids: &FfnIds, x: Var) -> Var {
    let h = tape.relu(tape.add_row(tape.matmul(x, at(p, ids.w1)), at(p, ids.b1)));
    tape.add_row(tape.matmul(h, at(p, ids.w2)), at(p, ids.b2))
}

/// Per-relation outputs of one encoding pass.
#[derive(Clone, Copy, Debug)]
pub struct Intermediates {
    pub item_transitional: Var,
    pub item_incompatible: Var,
    pub item_interactional: Var,
    pub user_interactional: Var,
    pub user_similar: Var,
    pub user_dissimilar: Var,
    /// `(items + 1) × 2` attention weights over the in/out aggregates.
    pub attention: Var,
}

/// Fused h_v and h_u tables on the tape.
#[derive(Clone, Copy, Debug)]
pub struct EncodedReps {
    pub items: Var,
    pub users: Var,
    pub intermediates: Intermediates,
}

pub fn encode_transitional<R: Real>(
    tape: &Tape<R>,
    p: &[Var],
    ids: &EncoderParams,
    ops: &GraphOperators<R>,
) -> (Var, Var) {
    let e = at(p, ids.item_table);
    let d = tape.shape(e).1;
    let a_in = tape.spmm(&ops.trans_in, e);
    let a_out = tape.spmm(&ops.trans_out, e);
    let l_in = tape.relu(tape.row_dot(tape.matmul(e, at(p, ids.att_in)), a_in));
    let l_out = tape.relu(tape.row_dot(tape.matmul(e, at(p, ids.att_out)), a_out));
    let scale = R::one() / lit::<R>(d as f64).sqrt();
    let logits = tape.scale(tape.concat_cols(&[l_in, l_out]), scale);
    let mask = tape.constant(ops.attention_mask.clone());
    let alpha = tape.softmax_rows(tape.add(logits, mask));
    let c = tape.add(
        tape.mul_col(a_in, tape.slice_cols(alpha, 0, 1)),
        tape.mul_col(a_out, tape.slice_cols(alpha, 1, 1)),
    );
    let h = conv2x1(tape, c, e, at(p, ids.conv_transitional), at(p, ids.conv_transitional_bias));
    (h, alpha)
}

fn encode_conv<R: Real>(tape: &Tape<R>, p: &[Var], op: &SparseOperator<R>, table: Var, conv: &ConvIds) -> Var {
    let agg = tape.spmm(op, table);
    conv2x1(tape, agg, table, at(p, conv.weight), at(p, conv.bias))
}

pub fn encode_incompatible<R: Real>(tape: &Tape<R>, p: &[Var], ids: &EncoderParams, ops: &GraphOperators<R>) -> Var {
    encode_conv(tape, p, &ops.incompatible, at(p, ids.item_table), &ids.conv_incompatible)
}

pub fn encode_interactional<R: Real>(
    tape: &Tape<R>,
    p: &[Var],
    ids: &EncoderParams,
    ops: &GraphOperators<R>,
) -> (Var, Var) {
    let items = tape.spmm(&ops.item_from_users, at(p, ids.user_table));
    let users = tape.spmm(&ops.user_from_items, at(p, ids.item_table));
    (items, users)
}

pub fn encode_similar_users<R: Real>(tape: &Tape<R>, p: &[Var], ids: &EncoderParams, ops: &GraphOperators<R>) -> Var {
    encode_conv(tape, p, &ops.similar, at(p, ids.user_table), &ids.conv_similar)
}

pub fn encode_dissimilar_users<R: Real>(
    tape: &Tape<R>,
    p: &[Var],
    ids: &EncoderParams,
    ops: &GraphOperators<R>,
) -> Var {
    encode_conv(tape, p, &ops.dissimilar, at(p, ids.user_table), &ids.conv_dissimilar)
}

/// Fusion networks; padding rows of the outputs are forced to zero.
pub fn fuse<R: Real>(
    tape: &Tape<R>,
    p: &[Var],
    ids: &EncoderParams,
    ops: &GraphOperators<R>,
    inter: Intermediates,
) -> (Var, Var) {
    let xv = tape.concat_cols(&[inter.item_transitional, inter.item_incompatible, inter.item_interactional]);
    let xu = tape.concat_cols(&[inter.user_similar, inter.user_dissimilar, inter.user_interactional]);
    let hv = tape.mul_col(ffn(tape, p, &ids.fuse_item, xv), tape.constant(ops.item_rows.clone()));
    let hu = tape.mul_col(ffn(tape, p, &ids.fuse_user, xu), tape.constant(ops.user_rows.clone()));
    (hv, hu)
}

/// Full encoding pass producing the fused item and user tables.
pub fn encode<R: Real>(tape: &Tape<R>, p: &[Var], ids: &EncoderParams, ops: &GraphOperators<R>) -> EncodedReps {
    let (item_transitional, attention) = encode_transitional(tape, p, ids, ops);
    let item_incompatible = encode_incompatible(tape, p, ids, ops);
    let (item_interactional, user_interactional) = encode_interactional(tape, p, ids, ops);
    let user_similar = encode_similar_users(tape, p, ids, ops);
    let user_dissimilar = encode_dissimilar_users(tape, p, ids, ops);
    let intermediates = Intermediates {
        item_transitional,
        item_incompatible,
        item_interactional,
        user_interactional,
        user_similar,
        user_dissimilar,
        attention,
    };
    let (items, users) = fuse(tape, p, ids, ops, intermediates);
    EncodedReps { items, users, intermediates }
}

/// Item representation rows `h_v[s_t] + h_u / n` for a batch of sequences,
/// concatenated in order.
pub fn sequence_reps<R: Real>(tape: &Tape<R>, items: Var, users: Var, batch: &[(usize, &[usize])]) -> Var {
    let mut item_idx = Vec::new();
    let mut user_idx = Vec::new();
    let mut inv_len = Vec::new();
    for &(u, seq) in batch {
        let k = R::one() / lit::<R>(seq.len() as f64);
        for &v in seq {
            item_idx.push(v);
            user_idx.push(u);
            inv_len.push(k);
        }
    }
    let hv = tape.gather_rows(items, &item_idx);
    let hu = tape.gather_rows(users, &user_idx);
    let w = tape.constant(Array2::from_shape_vec((inv_len.len(), 1), inv_len).unwrap());
    tape.add(hv, tape.mul_col(hu, w))
}

/// Fused tables as plain matrices.
#[derive(Clone, Debug)]
pub struct MultiRelationReps<R> {
    pub items: Mat<R>,
    pub users: Mat<R>,
}

const REPS_MAGIC: &[u8; 4] = b"SSDR";

impl<R: Real> MultiRelationReps<R> {
    /// Flat little-endian layout: magic, d, users, items (u32) then the item
    /// table and the user table as row-major f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        write_tables(&[&self.items, &self.users], self.users.nrows() - 1, self.items.nrows() - 1)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut tables, _, _) = read_tables(bytes, 2)?;
        let users = tables.pop().unwrap();
        let items = tables.pop().unwrap();
        Ok(Self { items, users })
    }
}

pub(crate) fn write_tables<R: Real>(tables: &[&Mat<R>], num_users: usize, num_items: usize) -> Vec<u8> {
    let d = tables[0].ncols();
    let mut out = Vec::new();
    out.extend_from_slice(REPS_MAGIC);
    for x in [d, num_users, num_items] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    for t in tables {
        for &x in t.iter() {
            out.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
        }
    }
    out
}

/// Reads `count` tables alternating item-sized and user-sized rows.
pub(crate) fn read_tables<R: Real>(bytes: &[u8], count: usize) -> Result<(Vec<Mat<R>>, usize, usize)> {
    let corrupt = |d: &str| Error::format("representation table file", d.to_string());
    if bytes.len() < 16 || &bytes[..4] != REPS_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (d, nu, ni) = (word(0), word(1), word(2));
    let rows: Vec<usize> = (0..count).map(|k| if k % 2 == 0 { ni + 1 } else { nu + 1 }).collect();
    let expect = 16 + rows.iter().map(|r| r * d * 4).sum::<usize>();
    if bytes.len() != expect {
        return Err(corrupt(&format!("expected {expect} bytes, found {}", bytes.len())));
    }
    let mut pos = 16;
    let mut tables = Vec::new();
    for r in rows {
        let vals: Vec<R> = bytes[pos..pos + r * d * 4]
            .chunks_exact(4)
            .map(|c| lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        if vals.iter().any(|x| !x.is_finite()) {
            return Err(corrupt("non-finite value"));
        }
        pos += r * d * 4;
        tables.push(Array2::from_shape_vec((r, d), vals).unwrap());
    }
    Ok((tables, nu, ni))
}

/// Embedding tables as plain matrices, with the same flat binary layout.
#[derive(Clone, Debug)]
pub struct EmbeddingTables<R> {
    pub items: Mat<R>,
    pub users: Mat<R>,
}

impl<R: Real> EmbeddingTables<R> {
    pub fn from_store(store: &ParamStore<R>, ids: &EncoderParams) -> Self {
        Self { items: store.get(ids.item_table).clone(), users: store.get(ids.user_table).clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_tables(&[&self.items, &self.users], self.users.nrows() - 1, self.items.nrows() - 1)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut tables, _, _) = read_tables(bytes, 2)?;
        let users = tables.pop().unwrap();
        let items = tables.pop().unwrap();
        Ok(Self { items, users })
    }
}
