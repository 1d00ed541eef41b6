//! A small reverse-mode automatic differentiation engine over dense 2-D arrays.
//!
//! Every value on a [`Tape`] is an `Array2`; column and row vectors are plain
//! `n × 1` / `1 × n` matrices. Variable-length sequence batches are stored as
//! concatenated rows described by a [`Layout`]. The heavy sequence operators
//! (recurrent cells, causal attention, sparse aggregation) are fused ops with
//! hand-written backward passes so the tape stays short.

mod attention;
mod layout;
mod ops;
mod param;
mod rnn;
mod sparse;

use std::cell::{Ref, RefCell};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use layout::Layout;
pub use param::{Adam, AdamConfig, ParamId, ParamStore};
pub use rnn::{GruWeights, LstmWeights};
pub use sparse::{Csr, SparseOperator};

/// Floating point element type usable on a tape.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `R`.
#[inline]
pub fn lit<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("literal representable")
}

pub type Mat<R> = Array2<R>;

type BackwardFn<R> = Box<dyn Fn(&Mat<R>, &[&Mat<R>], &Mat<R>) -> Vec<Option<Mat<R>>>>;

struct Node<R> {
    value: Mat<R>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<R>>,
    requires_grad: bool,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Records operations for a single forward pass.
pub struct Tape<R: Real> {
    nodes: RefCell<Vec<Node<R>>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::with_capacity(256)) }
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&self, value: Mat<R>) -> Var {
        self.push_node(value, Vec::new(), None, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Mat<R>) -> Var {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn scalar(&self, x: R) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Mat<R>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn to_owned(&self, v: Var) -> Mat<R> {
        self.value(v).clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value-only copy of `v`; gradients stop here.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.to_owned(v);
        self.constant(value)
    }

    fn push_node(
        &self,
        value: Mat<R>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<R>>,
        requires_grad: bool,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward, requires_grad });
        Var(nodes.len() - 1)
    }

    /// Pushes the result of an operation. The backward closure receives the
    /// upstream gradient, the parent values and the output value, and returns
    /// one optional gradient per parent.
    pub(crate) fn push_op<F>(&self, value: Mat<R>, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&Mat<R>, &[&Mat<R>], &Mat<R>) -> Vec<Option<Mat<R>>> + 'static,
    {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        let backward: Option<BackwardFn<R>> =
            if requires_grad { Some(Box::new(backward)) } else { None };
        self.push_node(value, parents.iter().map(|p| p.0).collect(), backward, requires_grad)
    }

    /// Reverse pass from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Gradients<R> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Mat<R>>> = (0..nodes.len()).map(|_| None).collect();
        let shape = nodes[loss.0].value.dim();
        grads[loss.0] = Some(Array2::from_elem(shape, R::one()));
        let mut leaves: Vec<Option<Mat<R>>> = (0..nodes.len()).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.backward {
                None => {
                    if node.requires_grad {
                        leaves[i] = Some(g);
                    }
                }
                Some(bw) => {
                    let parent_values: Vec<&Mat<R>> =
                        node.parents.iter().map(|&p| &nodes[p].value).collect();
                    let parent_grads = bw(&g, &parent_values, &node.value);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (&p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !nodes[p].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.dim(), nodes[p].value.dim(), "grad shape of node {p}");
                        match &mut grads[p] {
                            Some(acc) => *acc += &pg,
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
            }
        }
        Gradients { grads: leaves }
    }
}

/// Gradients of leaf nodes produced by [`Tape::backward`].
pub struct Gradients<R> {
    grads: Vec<Option<Mat<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&Mat<R>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<R>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
