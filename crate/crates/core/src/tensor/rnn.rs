//! Fused recurrent cells over ragged batches.
//!
//! Sequences are processed "packed": at step `t` every sequence longer than
//! `t` advances by one element, sorted by length so the active set is always
//! a prefix of the state matrix.

use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};

use super::ops::{gather, sigmoid};
use super::{Layout, Mat, Real, Tape, Var};

/// Gate order in the packed weight matrices is input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `d × 4h`
    pub w_ih: Var,
    /// `h × 4h`
    pub w_hh: Var,
    /// `1 × 4h`
    pub bias: Var,
}

/// Gate order is reset, update, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights {
    /// `d × 3h`
    pub w_ih: Var,
    /// `h × 3h`
    pub w_hh: Var,
    /// `1 × 3h`
    pub b_ih: Var,
    /// `1 × 3h`
    pub b_hh: Var,
}

/// Row schedule shared by the recurrent kernels.
struct Schedule {
    /// Sequence indices sorted by length, longest first.
    order: Vec<usize>,
    /// `rows[t]` holds the row processed at step `t` for each active sequence.
    rows: Vec<Vec<usize>>,
}

impl Schedule {
    fn new(layout: &Layout, reverse: bool) -> Self {
        let mut order: Vec<usize> = (0..layout.num_segments()).collect();
        order.sort_by(|&a, &b| layout.len_of(b).cmp(&layout.len_of(a)).then(a.cmp(&b)));
        let max_len = layout.max_len();
        let mut rows = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let step: Vec<usize> = order
                .iter()
                .take_while(|&&seg| layout.len_of(seg) > t)
                .map(|&seg| {
                    let n = layout.len_of(seg);
                    layout.offset(seg) + if reverse { n - 1 - t } else { t }
                })
                .collect();
            rows.push(step);
        }
        Self { order, rows }
    }
}

fn scatter_rows<R: Real>(dst: &mut Mat<R>, rows: &[usize], src: &Mat<R>) {
    for (i, &r) in rows.iter().enumerate() {
        dst.row_mut(r).assign(&src.row(i));
    }
}

impl<R: Real> Tape<R> {
    /// Runs one LSTM direction over every sequence of `layout`, returning the
    /// hidden state at every row (zero initial state).
    pub fn lstm(&self, x: Var, w: LstmWeights, layout: &Layout, reverse: bool) -> Var {
        let sched = Rc::new(Schedule::new(layout, reverse));
        let (out, acts, cells) = {
            let xv = self.value(x);
            let w_ih = self.value(w.w_ih);
            let w_hh = self.value(w.w_hh);
            let bias = self.value(w.bias);
            assert_eq!(xv.nrows(), layout.total(), "lstm input rows");
            let h = w_hh.nrows();
            let xp = &xv.dot(&*w_ih) + &*bias;
            let total = xv.nrows();
            let mut acts = Array2::<R>::zeros((total, 4 * h));
            let mut cells = Array2::<R>::zeros((total, h));
            let mut out = Array2::<R>::zeros((total, h));
            let b = layout.num_segments();
            let mut hstate = Array2::<R>::zeros((b, h));
            let mut cstate = Array2::<R>::zeros((b, h));
            for rows in &sched.rows {
                let na = rows.len();
                let mut gates = gather(&xp, rows);
                general_mat_mul(
                    R::one(),
                    &hstate.slice(s![..na, ..]),
                    &*w_hh,
                    R::one(),
                    &mut gates,
                );
                for k in 0..na {
                    let g = gates.row_mut(k).into_slice().unwrap();
                    let c_row = cstate.row_mut(k).into_slice().unwrap();
                    let h_row = hstate.row_mut(k).into_slice().unwrap();
                    let (gi, rest) = g.split_at_mut(h);
                    let (gf, rest) = rest.split_at_mut(h);
                    let (gg, go) = rest.split_at_mut(h);
                    for j in 0..h {
                        let i = sigmoid(gi[j]);
                        let f = sigmoid(gf[j]);
                        let cand = gg[j].tanh();
                        let o = sigmoid(go[j]);
                        let c = f * c_row[j] + i * cand;
                        gi[j] = i;
                        gf[j] = f;
                        gg[j] = cand;
                        go[j] = o;
                        c_row[j] = c;
                        h_row[j] = o * c.tanh();
                    }
                }
                scatter_rows(&mut acts, rows, &gates);
                scatter_rows(&mut cells, rows, &cstate.slice(s![..na, ..]).to_owned());
                scatter_rows(&mut out, rows, &hstate.slice(s![..na, ..]).to_owned());
            }
            (out, acts, cells)
        };
        let acts = Rc::new(acts);
        let cells = Rc::new(cells);
        self.push_op(out, &[x, w.w_ih, w.w_hh, w.bias], move |g_out, p, out| {
            let (xv, w_ih, w_hh) = (p[0], p[1], p[2]);
            let h = w_hh.nrows();
            let total = xv.nrows();
            let b = sched.order.len();
            let mut dxp = Array2::<R>::zeros((total, 4 * h));
            let mut dw_hh = Array2::<R>::zeros(w_hh.dim());
            let mut dh_next = Array2::<R>::zeros((b, h));
            let mut dc_next = Array2::<R>::zeros((b, h));
            for t in (0..sched.rows.len()).rev() {
                let rows = &sched.rows[t];
                let na = rows.len();
                let mut dgates = Array2::<R>::zeros((na, 4 * h));
                let mut hprev = Array2::<R>::zeros((na, h));
                let one = R::one();
                for (k, &r) in rows.iter().enumerate() {
                    let prev = if t > 0 { Some(sched.rows[t - 1][k]) } else { None };
                    if let Some(pr) = prev {
                        hprev.row_mut(k).assign(&out.row(pr));
                    }
                    let a = acts.row(r);
                    let a = a.as_slice().unwrap();
                    let c_row = cells.row(r);
                    let c_row = c_row.as_slice().unwrap();
                    let c_prev = prev.map(|pr| cells.row(pr));
                    let c_prev = c_prev.as_ref().map(|v| v.as_slice().unwrap());
                    let go_row = g_out.row(r);
                    let dhn = dh_next.row(k);
                    let dg = dgates.row_mut(k).into_slice().unwrap();
                    let dcn = dc_next.row_mut(k).into_slice().unwrap();
                    for j in 0..h {
                        let (i, f, gg, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let tc = c_row[j].tanh();
                        let dh = go_row[j] + dhn[j];
                        let dc = dcn[j] + dh * o * (one - tc * tc);
                        let cp = c_prev.map_or(R::zero(), |c| c[j]);
                        dg[j] = dc * gg * i * (one - i);
                        dg[h + j] = dc * cp * f * (one - f);
                        dg[2 * h + j] = dc * i * (one - gg * gg);
                        dg[3 * h + j] = dh * tc * o * (one - o);
                        dcn[j] = dc * f;
                    }
                }
                general_mat_mul(R::one(), &hprev.t(), &dgates, R::one(), &mut dw_hh);
                let dh_prev = dgates.dot(&w_hh.t());
                dh_next.slice_mut(s![..na, ..]).assign(&dh_prev);
                scatter_rows(&mut dxp, rows, &dgates);
            }
            let dx = dxp.dot(&w_ih.t());
            let dw_ih = xv.t().dot(&dxp);
            let db = dxp.sum_axis(Axis(0)).insert_axis(Axis(0));
            vec![Some(dx), Some(dw_ih), Some(dw_hh), Some(db)]
        })
    }

    /// Runs a GRU over every sequence of `layout`, returning the hidden state
    /// at every row (zero initial state).
    pub fn gru(&self, x: Var, w: GruWeights, layout: &Layout) -> Var {
        let sched = Rc::new(Schedule::new(layout, false));
        let (out, acts, hn_lin) = {
            let xv = self.value(x);
            let w_ih = self.value(w.w_ih);
            let w_hh = self.value(w.w_hh);
            let b_ih = self.value(w.b_ih);
            let b_hh = self.value(w.b_hh);
            assert_eq!(xv.nrows(), layout.total(), "gru input rows");
            let h = w_hh.nrows();
            let xp = &xv.dot(&*w_ih) + &*b_ih;
            let total = xv.nrows();
            let mut acts = Array2::<R>::zeros((total, 3 * h));
            let mut hn_lin = Array2::<R>::zeros((total, h));
            let mut out = Array2::<R>::zeros((total, h));
            let mut hstate = Array2::<R>::zeros((layout.num_segments(), h));
            for rows in &sched.rows {
                let na = rows.len();
                let xg = gather(&xp, rows);
                let hg = &hstate.slice(s![..na, ..]).dot(&*w_hh) + &*b_hh;
                let mut a = Array2::<R>::zeros((na, 3 * h));
                let mut hn = Array2::<R>::zeros((na, h));
                for k in 0..na {
                    for j in 0..h {
                        let r = sigmoid(xg[[k, j]] + hg[[k, j]]);
                        let z = sigmoid(xg[[k, h + j]] + hg[[k, h + j]]);
                        let n = (xg[[k, 2 * h + j]] + r * hg[[k, 2 * h + j]]).tanh();
                        a[[k, j]] = r;
                        a[[k, h + j]] = z;
                        a[[k, 2 * h + j]] = n;
                        hn[[k, j]] = hg[[k, 2 * h + j]];
                        hstate[[k, j]] = (R::one() - z) * n + z * hstate[[k, j]];
                    }
                }
                scatter_rows(&mut acts, rows, &a);
                scatter_rows(&mut hn_lin, rows, &hn);
                scatter_rows(&mut out, rows, &hstate.slice(s![..na, ..]).to_owned());
            }
            (out, acts, hn_lin)
        };
        let acts = Rc::new(acts);
        let hn_lin = Rc::new(hn_lin);
        self.push_op(out, &[x, w.w_ih, w.w_hh, w.b_ih, w.b_hh], move |g_out, p, out| {
            let (xv, w_ih, w_hh) = (p[0], p[1], p[2]);
            let h = w_hh.nrows();
            let total = xv.nrows();
            let b = sched.order.len();
            let mut dxp = Array2::<R>::zeros((total, 3 * h));
            let mut dw_hh = Array2::<R>::zeros(w_hh.dim());
            let mut db_hh = Array2::<R>::zeros((1, 3 * h));
            let mut dh_next = Array2::<R>::zeros((b, h));
            for t in (0..sched.rows.len()).rev() {
                let rows = &sched.rows[t];
                let na = rows.len();
                let mut dxg = Array2::<R>::zeros((na, 3 * h));
                let mut dhg = Array2::<R>::zeros((na, 3 * h));
                let mut hprev = Array2::<R>::zeros((na, h));
                let mut dh_direct = Array2::<R>::zeros((na, h));
                for (k, &row) in rows.iter().enumerate() {
                    if t > 0 {
                        hprev.row_mut(k).assign(&out.row(sched.rows[t - 1][k]));
                    }
                    for j in 0..h {
                        let one = R::one();
                        let (r, z, n) = (acts[[row, j]], acts[[row, h + j]], acts[[row, 2 * h + j]]);
                        let dh = g_out[[row, j]] + dh_next[[k, j]];
                        let dn = dh * (one - z);
                        let dz = dh * (hprev[[k, j]] - n);
                        dh_direct[[k, j]] = dh * z;
                        let dn_pre = dn * (one - n * n);
                        let dr = dn_pre * hn_lin[[row, j]];
                        let dr_pre = dr * r * (one - r);
                        let dz_pre = dz * z * (one - z);
                        dxg[[k, j]] = dr_pre;
                        dxg[[k, h + j]] = dz_pre;
                        dxg[[k, 2 * h + j]] = dn_pre;
                        dhg[[k, j]] = dr_pre;
                        dhg[[k, h + j]] = dz_pre;
                        dhg[[k, 2 * h + j]] = dn_pre * r;
                    }
                }
                general_mat_mul(R::one(), &hprev.t(), &dhg, R::one(), &mut dw_hh);
                db_hh += &dhg.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dh_prev = &dhg.dot(&w_hh.t()) + &dh_direct;
                dh_next.slice_mut(s![..na, ..]).assign(&dh_prev);
                scatter_rows(&mut dxp, rows, &dxg);
            }
            let dx = dxp.dot(&w_ih.t());
            let dw_ih = xv.t().dot(&dxp);
            let db_ih = dxp.sum_axis(Axis(0)).insert_axis(Axis(0));
            vec![Some(dx), Some(dw_ih), Some(dw_hh), Some(db_ih), Some(db_hh)]
        })
    }
}
