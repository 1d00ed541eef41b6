use std::rc::Rc;

use ndarray::{s, Array2};

use super::ops::softmax_rows;
use super::{Layout, Mat, Real, Tape, Var};

/// Causal scaled dot-product attention probabilities for one sequence.
pub(crate) fn causal_probs<R: Real>(q: &Mat<R>, k: &Mat<R>) -> Mat<R> {
    let n = q.nrows();
    let scale = R::one() / R::from_usize(q.ncols()).unwrap().sqrt();
    let mut scores = q.dot(&k.t()) * scale;
    for i in 0..n {
        for j in (i + 1)..n {
            scores[[i, j]] = R::neg_infinity();
        }
    }
    softmax_rows(&scores)
}

impl<R: Real> Tape<R> {
    /// Single-head causal self-attention applied independently to each segment.
    pub fn causal_attention(&self, q: Var, k: Var, v: Var, layout: &Layout) -> Var {
        let (out, probs) = {
            let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
            assert_eq!(qv.nrows(), layout.total(), "attention rows");
            let mut out = Array2::<R>::zeros((qv.nrows(), vv.ncols()));
            let mut probs = Vec::with_capacity(layout.num_segments());
            for seg in 0..layout.num_segments() {
                let r = layout.range(seg);
                let qs = qv.slice(s![r.clone(), ..]).to_owned();
                let ks = kv.slice(s![r.clone(), ..]).to_owned();
                let p = causal_probs(&qs, &ks);
                out.slice_mut(s![r, ..]).assign(&p.dot(&vv.slice(s![layout.range(seg), ..])));
                probs.push(p);
            }
            (out, probs)
        };
        let probs = Rc::new(probs);
        let layout = layout.clone();
        self.push_op(out, &[q, k, v], move |g, p, _| {
            let (qv, kv, vv) = (p[0], p[1], p[2]);
            let scale = R::one() / R::from_usize(qv.ncols()).unwrap().sqrt();
            let mut dq = Array2::<R>::zeros(qv.dim());
            let mut dk = Array2::<R>::zeros(kv.dim());
            let mut dv = Array2::<R>::zeros(vv.dim());
            for seg in 0..layout.num_segments() {
                let r = layout.range(seg);
                let pr = &probs[seg];
                let gs = g.slice(s![r.clone(), ..]);
                dv.slice_mut(s![r.clone(), ..]).assign(&pr.t().dot(&gs));
                let dp = gs.dot(&vv.slice(s![r.clone(), ..]).t());
                let mut ds = &dp * pr;
                for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
                    let dot: R = row.sum();
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = *x - pr[[i, j]] * dot;
                    }
                }
                ds.mapv_inplace(|x| x * scale);
                dq.slice_mut(s![r.clone(), ..]).assign(&ds.dot(&kv.slice(s![r.clone(), ..])));
                dk.slice_mut(s![r.clone(), ..]).assign(&ds.t().dot(&qv.slice(s![r, ..])));
            }
            vec![Some(dq), Some(dk), Some(dv)]
        })
    }
}
