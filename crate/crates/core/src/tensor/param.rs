use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;

use super::{lit, Gradients, Mat, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

const PARAMS_MAGIC: &[u8; 4] = b"SSDP";

#[derive(Clone, Debug)]
struct Entry<R> {
    name: String,
    value: Mat<R>,
    /// Rows pinned at zero (padding), never updated.
    frozen_rows: Vec<usize>,
}

/// Named trainable parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<R> {
    entries: Vec<Entry<R>>,
    by_name: HashMap<String, ParamId>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Mat<R>) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.entries.push(Entry { name: name.to_string(), value, frozen_rows: Vec::new() });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    /// Glorot-uniform initialisation.
    pub fn xavier<G: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut G) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(name, rows, cols, bound, rng)
    }

    pub fn uniform<G: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut G,
    ) -> ParamId {
        let value = Array2::from_shape_simple_fn((rows, cols), || lit(rng.gen_range(-bound..bound)));
        self.add(name, value)
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        let e = &mut self.entries[id.0];
        e.value.row_mut(row).fill(R::zero());
        e.frozen_rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Mat<R> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<R> {
        &mut self.entries[id.0].value
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Places every parameter on `tape` as a gradient-receiving leaf.
    pub fn bind(&self, tape: &Tape<R>) -> Vec<Var> {
        self.entries.iter().map(|e| tape.leaf(e.value.clone())).collect()
    }

    /// Places every parameter on `tape` as a constant.
    pub fn bind_constant(&self, tape: &Tape<R>) -> Vec<Var> {
        self.entries.iter().map(|e| tape.constant(e.value.clone())).collect()
    }

    /// Collects per-parameter gradients (zero where the tape produced none).
    pub fn collect_grads(&self, vars: &[Var], grads: &mut Gradients<R>) -> Vec<Mat<R>> {
        self.entries
            .iter()
            .zip(vars)
            .map(|(e, &v)| {
                let mut g = grads.take(v).unwrap_or_else(|| Array2::zeros(e.value.dim()));
                for &r in &e.frozen_rows {
                    g.row_mut(r).fill(R::zero());
                }
                g
            })
            .collect()
    }

    /// Flat little-endian checkpoint: magic, entry count, then per entry the
    /// name, shape and row-major f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.value.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(e.value.ncols() as u32).to_le_bytes());
            for &x in e.value.iter() {
                out.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
            }
        }
        out
    }

    /// Overwrites the values from a checkpoint with the same names and shapes.
    pub fn load_bytes(&mut self, bytes: &[u8]) -> std::result::Result<(), String> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or("truncated")?;
            let out = &bytes[pos..end];
            pos = end;
            Ok(out)
        };
        if take(4)? != PARAMS_MAGIC {
            return Err("bad magic".into());
        }
        let word = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
        let count = word(take(4)?);
        if count != self.entries.len() {
            return Err(format!("{count} parameters, expected {}", self.entries.len()));
        }
        let mut values = Vec::with_capacity(count);
        for e in &self.entries {
            let len = word(take(4)?);
            let name = std::str::from_utf8(take(len)?).map_err(|_| "parameter name is not UTF-8")?;
            if name != e.name {
                return Err(format!("parameter {name:?}, expected {:?}", e.name));
            }
            let (r, c) = (word(take(4)?), word(take(4)?));
            if (r, c) != e.value.dim() {
                return Err(format!("{name} has shape {r}x{c}, expected {:?}", e.value.dim()));
            }
            let raw = take(r.checked_mul(c).and_then(|n| n.checked_mul(4)).ok_or("truncated")?)?;
            let vals: Vec<R> = raw.chunks_exact(4).map(|b| lit(f32::from_le_bytes(b.try_into().unwrap()) as f64)).collect();
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(format!("{name} contains non-finite values"));
            }
            values.push(Array2::from_shape_vec((r, c), vals).unwrap());
        }
        if take(1).is_ok() {
            return Err("trailing bytes".into());
        }
        for (e, v) in self.entries.iter_mut().zip(values) {
            e.value = v;
        }
        Ok(())
    }

    /// Converts every entry to another precision.
    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: e.value.mapv(|x| S::from_f64(x.to_f64().unwrap()).unwrap()),
                    frozen_rows: e.frozen_rows.clone(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adaptive-moment optimiser with per-parameter step counts, so subsets of
/// the parameters can be updated on different schedules.
#[derive(Clone, Debug)]
pub struct Adam<R> {
    cfg: AdamConfig,
    steps: Vec<i32>,
    m: Vec<Mat<R>>,
    v: Vec<Mat<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<R>) -> Self {
        let m: Vec<Mat<R>> = store.entries.iter().map(|e| Array2::zeros(e.value.dim())).collect();
        Self { cfg, steps: vec![0; m.len()], v: m.clone(), m }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Largest number of updates applied to any parameter.
    pub fn steps(&self) -> i32 {
        self.steps.iter().copied().max().unwrap_or(0)
    }

    pub fn step(&mut self, store: &mut ParamStore<R>, grads: &[Mat<R>]) {
        self.step_subset(store, grads, None);
    }

    /// Updates only the parameters flagged in `active` (all when `None`).
    pub fn step_subset(&mut self, store: &mut ParamStore<R>, grads: &[Mat<R>], active: Option<&[bool]>) {
        let (b1, b2) = (lit::<R>(self.cfg.beta1), lit::<R>(self.cfg.beta2));
        let lr = lit::<R>(self.cfg.learning_rate);
        let eps = lit::<R>(self.cfg.eps);
        let wd = lit::<R>(self.cfg.weight_decay);
        for (i, e) in store.entries.iter_mut().enumerate() {
            if active.is_some_and(|a| !a[i]) {
                continue;
            }
            self.steps[i] += 1;
            let bc1 = R::one() - b1.powi(self.steps[i]);
            let bc2 = R::one() - b2.powi(self.steps[i]);
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut e.value).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g + wd * *p;
                *m = b1 * *m + (R::one() - b1) * g;
                *v = b2 * *v + (R::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            });
            for &r in &e.frozen_rows {
                e.value.row_mut(r).fill(R::zero());
            }
        }
    }
}
