use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::{lit, Layout, Mat, Real, Tape, Var};

fn col_sum<R: Real>(g: &Mat<R>) -> Mat<R> {
    g.sum_axis(Axis(0)).insert_axis(Axis(0))
}

fn row_sum<R: Real>(g: &Mat<R>) -> Mat<R> {
    g.sum_axis(Axis(1)).insert_axis(Axis(1))
}

impl<R: Real> Tape<R> {
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&*self.value(b));
        self.push_op(out, &[a, b], |g, p, _| {
            vec![Some(g.dot(&p[1].t())), Some(p[0].t().dot(g))]
        })
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push_op(out, &[a, b], |g, p, _| vec![Some(g.dot(p[1])), Some(g.t().dot(p[0]))])
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = &*self.value(a) + &*self.value(b);
        self.push_op(out, &[a, b], |g, _, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = &*self.value(a) - &*self.value(b);
        self.push_op(out, &[a, b], |g, _, _| vec![Some(g.clone()), Some(g.mapv(|x| -x))])
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = &*self.value(a) * &*self.value(b);
        self.push_op(out, &[a, b], |g, p, _| vec![Some(g * p[1]), Some(g * p[0])])
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let out = &*self.value(a) + &*self.value(row);
        self.push_op(out, &[a, row], |g, _, _| vec![Some(g.clone()), Some(col_sum(g))])
    }

    /// Multiplies every row of `a` elementwise by a `1 × c` row.
    pub fn mul_row(&self, a: Var, row: Var) -> Var {
        let out = &*self.value(a) * &*self.value(row);
        self.push_op(out, &[a, row], |g, p, _| vec![Some(g * p[1]), Some(col_sum(&(g * p[0])))])
    }

    /// Scales row `i` of `a` by entry `i` of the `r × 1` column `col`.
    pub fn mul_col(&self, a: Var, col: Var) -> Var {
        let out = &*self.value(a) * &*self.value(col);
        self.push_op(out, &[a, col], |g, p, _| vec![Some(g * p[1]), Some(row_sum(&(g * p[0])))])
    }

    pub fn scale(&self, a: Var, k: R) -> Var {
        let out = &*self.value(a) * k;
        self.push_op(out, &[a], move |g, _, _| vec![Some(g * k)])
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| if x > R::zero() { x } else { R::zero() });
        self.push_op(out, &[a], |g, p, _| {
            let mut d = g.clone();
            Zip::from(&mut d).and(p[0]).for_each(|d, &x| {
                if x <= R::zero() {
                    *d = R::zero()
                }
            });
            vec![Some(d)]
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push_op(out, &[a], |g, _, y| {
            let mut d = g.clone();
            Zip::from(&mut d).and(y).for_each(|d, &y| *d = *d * y * (R::one() - y));
            vec![Some(d)]
        })
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.tanh());
        self.push_op(out, &[a], |g, _, y| {
            let mut d = g.clone();
            Zip::from(&mut d).and(y).for_each(|d, &y| *d = *d * (R::one() - y * y));
            vec![Some(d)]
        })
    }

    pub fn exp(&self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.exp());
        self.push_op(out, &[a], |g, _, y| vec![Some(g * y)])
    }

    /// `ln(max(a, floor))`; no gradient flows through clamped entries.
    pub fn ln_clamped(&self, a: Var, floor: R) -> Var {
        let out = self.value(a).mapv(|x| x.max(floor).ln());
        self.push_op(out, &[a], move |g, p, _| {
            let mut d = g.clone();
            Zip::from(&mut d).and(p[0]).for_each(|d, &x| {
                *d = if x > floor { *d / x } else { R::zero() };
            });
            vec![Some(d)]
        })
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push_op(Array2::from_elem((1, 1), s), &[a], |g, p, _| {
            vec![Some(Array2::from_elem(p[0].dim(), g[[0, 0]]))]
        })
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum_all(a);
        self.scale(s, lit::<R>(1.0) / R::from_usize(n).unwrap())
    }

    /// Row sums as an `r × 1` column.
    pub fn row_sum(&self, a: Var) -> Var {
        let out = row_sum(&self.value(a));
        self.push_op(out, &[a], |g, p, _| {
            let mut d = Array2::zeros(p[0].dim());
            d += g;
            vec![Some(d)]
        })
    }

    /// Row-wise dot products of two equally shaped matrices as an `r × 1` column.
    pub fn row_dot(&self, a: Var, b: Var) -> Var {
        let out = row_sum(&(&*self.value(a) * &*self.value(b)));
        self.push_op(out, &[a, b], |g, p, _| vec![Some(p[1] * g), Some(p[0] * g)])
    }

    /// Per-row sum of the triple elementwise product `a ⊙ b ⊙ c`.
    pub fn row_triple(&self, a: Var, b: Var, c: Var) -> Var {
        let out = {
            let (a, b, c) = (self.value(a), self.value(b), self.value(c));
            row_sum(&(&(&*a * &*b) * &*c))
        };
        self.push_op(out, &[a, b, c], |g, p, _| {
            vec![
                Some(&(p[1] * p[2]) * g),
                Some(&(p[0] * p[2]) * g),
                Some(&(p[0] * p[1]) * g),
            ]
        })
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let values: Vec<Mat<R>> = parts.iter().map(|&v| self.to_owned(v)).collect();
        let views: Vec<_> = values.iter().map(|m| m.view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols shapes");
        let widths: Vec<usize> = values.iter().map(|m| m.ncols()).collect();
        self.push_op(out, parts, move |g, _, _| {
            let mut start = 0;
            widths
                .iter()
                .map(|&w| {
                    let part = g.slice(s![.., start..start + w]).to_owned();
                    start += w;
                    Some(part)
                })
                .collect()
        })
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let values: Vec<Mat<R>> = parts.iter().map(|&v| self.to_owned(v)).collect();
        let views: Vec<_> = values.iter().map(|m| m.view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows shapes");
        let heights: Vec<usize> = values.iter().map(|m| m.nrows()).collect();
        self.push_op(out, parts, move |g, _, _| {
            let mut start = 0;
            heights
                .iter()
                .map(|&h| {
                    let part = g.slice(s![start..start + h, ..]).to_owned();
                    start += h;
                    Some(part)
                })
                .collect()
        })
    }

    pub fn slice_cols(&self, a: Var, start: usize, width: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + width]).to_owned();
        self.push_op(out, &[a], move |g, p, _| {
            let mut d = Array2::zeros(p[0].dim());
            d.slice_mut(s![.., start..start + width]).assign(g);
            vec![Some(d)]
        })
    }

    pub fn slice_rows(&self, a: Var, start: usize, height: usize) -> Var {
        let out = self.value(a).slice(s![start..start + height, ..]).to_owned();
        self.push_op(out, &[a], move |g, p, _| {
            let mut d = Array2::zeros(p[0].dim());
            d.slice_mut(s![start..start + height, ..]).assign(g);
            vec![Some(d)]
        })
    }

    /// Row `i` of the output is row `idx[i]` of `a`; gradients scatter-add back.
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Var {
        let out = gather(&self.value(a), idx);
        let idx = Rc::new(idx.to_vec());
        self.push_op(out, &[a], move |g, p, _| {
            let mut d = Array2::zeros(p[0].dim());
            for (i, &r) in idx.iter().enumerate() {
                let mut row = d.row_mut(r);
                row += &g.row(i);
            }
            vec![Some(d)]
        })
    }

    /// Sums the rows of each segment into one `B × c` matrix.
    pub fn segment_sum(&self, a: Var, layout: &Layout) -> Var {
        let out = segment_sum(&self.value(a), layout);
        let ids = Rc::new(layout.segment_ids());
        self.push_op(out, &[a], move |g, _, _| vec![Some(gather(g, &ids))])
    }

    /// Softmax of an `r × 1` column within each segment.
    pub fn segment_softmax(&self, a: Var, layout: &Layout) -> Var {
        let out = segment_softmax(&self.value(a), layout);
        let layout = layout.clone();
        self.push_op(out, &[a], move |g, _, y| {
            let mut d = Array2::zeros(y.dim());
            for s in 0..layout.num_segments() {
                let r = layout.range(s);
                let dot: R = r.clone().map(|i| g[[i, 0]] * y[[i, 0]]).sum();
                for i in r {
                    d[[i, 0]] = y[[i, 0]] * (g[[i, 0]] - dot);
                }
            }
            vec![Some(d)]
        })
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        let out = softmax_rows(&self.value(a));
        self.push_op(out, &[a], |g, _, y| {
            let dot = row_sum(&(g * y));
            let d = y * &(g - &dot);
            vec![Some(d)]
        })
    }

    /// Mean categorical cross-entropy of row-wise softmax against class indices.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Var {
        let probs = softmax_rows(&self.value(logits));
        let b = targets.len();
        assert_eq!(probs.nrows(), b, "one target per row");
        let loss: R = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -probs[[i, t]].max(R::min_positive_value()).ln())
            .sum::<R>()
            / R::from_usize(b).unwrap();
        let targets = Rc::new(targets.to_vec());
        self.push_op(Array2::from_elem((1, 1), loss), &[logits], move |g, _, _| {
            let mut d = probs.clone();
            for (i, &t) in targets.iter().enumerate() {
                d[[i, t]] = d[[i, t]] - R::one();
            }
            let k = g[[0, 0]] / R::from_usize(targets.len()).unwrap();
            d.mapv_inplace(|x| x * k);
            vec![Some(d)]
        })
    }

    /// Forward value `hard`, backward identity into `soft`.
    pub fn straight_through(&self, soft: Var, hard: Mat<R>) -> Var {
        assert_eq!(self.shape(soft), hard.dim());
        self.push_op(hard, &[soft], |g, _, _| vec![Some(g.clone())])
    }

    /// Row-wise layer normalisation with learned `1 × c` gain and bias.
    pub fn layer_norm(&self, a: Var, gain: Var, bias: Var, eps: R) -> Var {
        let (xhat, inv_std) = {
            let x = self.value(a);
            let c = R::from_usize(x.ncols()).unwrap();
            let mean = row_sum(&x) / c;
            let centered = &*x - &mean;
            let var = row_sum(&(&centered * &centered)) / c;
            let inv_std = var.mapv(|v| R::one() / (v + eps).sqrt());
            (&centered * &inv_std, inv_std)
        };
        let out = &(&xhat * &*self.value(gain)) + &*self.value(bias);
        let xhat = Rc::new(xhat);
        self.push_op(out, &[a, gain, bias], move |g, p, _| {
            let c = R::from_usize(g.ncols()).unwrap();
            let dxhat = g * p[1];
            let mean_d = row_sum(&dxhat) / c;
            let mean_dx = row_sum(&(&dxhat * &*xhat)) / c;
            let dx = &(&(&dxhat - &mean_d) - &(&*xhat * &mean_dx)) * &inv_std;
            vec![Some(dx), Some(col_sum(&(g * &*xhat))), Some(col_sum(g))]
        })
    }
}

#[inline]
pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

pub(crate) fn gather<R: Real>(a: &Mat<R>, idx: &[usize]) -> Mat<R> {
    let mut out = Array2::zeros((idx.len(), a.ncols()));
    for (i, &r) in idx.iter().enumerate() {
        out.row_mut(i).assign(&a.row(r));
    }
    out
}

pub(crate) fn segment_sum<R: Real>(a: &Mat<R>, layout: &Layout) -> Mat<R> {
    assert_eq!(a.nrows(), layout.total(), "segment_sum row count");
    let mut out = Array2::zeros((layout.num_segments(), a.ncols()));
    for s in 0..layout.num_segments() {
        let sum = a.slice(s![layout.range(s), ..]).sum_axis(Axis(0));
        out.row_mut(s).assign(&sum);
    }
    out
}

pub(crate) fn segment_softmax<R: Real>(a: &Mat<R>, layout: &Layout) -> Mat<R> {
    assert_eq!(a.dim(), (layout.total(), 1), "segment_softmax expects a column");
    let mut out = Array2::zeros(a.dim());
    for s in 0..layout.num_segments() {
        let r = layout.range(s);
        if r.is_empty() {
            continue;
        }
        let m = r.clone().map(|i| a[[i, 0]]).fold(R::neg_infinity(), R::max);
        let mut z = R::zero();
        for i in r.clone() {
            let e = (a[[i, 0]] - m).exp();
            out[[i, 0]] = e;
            z = z + e;
        }
        for i in r {
            out[[i, 0]] = out[[i, 0]] / z;
        }
    }
    out
}

pub(crate) fn softmax_rows<R: Real>(a: &Mat<R>) -> Mat<R> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(R::neg_infinity(), R::max);
        row.mapv_inplace(|x| (x - m).exp());
        let z: R = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    out
}
