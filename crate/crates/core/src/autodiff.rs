//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] is an append-only list of nodes. Every node stores its value
//! and the local partial derivatives with respect to its parents, which are
//! always recorded earlier, so the tape is topologically ordered by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! [`Var`] is a `Copy` handle (tape reference plus node index) so that
//! expressions read like ordinary `f64` arithmetic:
//!
//! ```
//! use ftmlearn_core::autodiff::{Scalar, Tape};
//!
//! let tape = Tape::new();
//! let a = tape.var(2.0);
//! let b = tape.var(3.0);
//! let y = a * b + a.square();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(y.value(), 10.0);
//! assert_eq!(grads.wrt(a), 3.0 + 4.0);
//! assert_eq!(grads.wrt(b), 2.0);
//! ```
//!
//! Generic numeric code is written against the [`Scalar`] trait, which is
//! implemented for both `f64` and `Var`; running the same function on either
//! type gives the untaped and taped evaluation of one code path.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

/// Guard used under square roots whose argument may legitimately reach zero.
pub const SQRT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sqrt,
    Square,
    Sigmoid,
    Max0,
    Affine,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("numeric domain violation in {op} at node {node} (argument {argument})")]
    Domain { node: usize, op: OpKind, argument: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    kind: OpKind,
    value: f64,
    edge_start: u32,
    edge_len: u32,
}

#[derive(Default)]
struct Storage {
    nodes: Vec<Node>,
    edges: Vec<(u32, f64)>,
}

/// Append-only computation graph. Single writer; use one tape per thread.
#[derive(Default)]
pub struct Tape {
    storage: RefCell<Storage>,
    error: Cell<Option<(usize, OpKind, f64)>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.storage.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded parent edges (a proxy for backward cost).
    pub fn edge_count(&self) -> usize {
        self.storage.borrow().edges.len()
    }

    /// Records an independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Leaf, value, &[])
    }

    /// Records a constant. Constants are leaves whose gradient nobody reads.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    fn push(&self, kind: OpKind, value: f64, parents: &[(u32, f64)]) -> Var<'_> {
        let mut s = self.storage.borrow_mut();
        let index = s.nodes.len();
        let edge_start = s.edges.len() as u32;
        s.edges.extend_from_slice(parents);
        s.nodes.push(Node {
            kind,
            value,
            edge_start,
            edge_len: parents.len() as u32,
        });
        if !value.is_finite() && self.error.get().is_none() {
            self.error.set(Some((index, kind, value)));
        }
        Var {
            tape: self,
            index: index as u32,
        }
    }

    fn domain_error(&self, node: usize, op: OpKind, argument: f64) {
        if self.error.get().is_none() {
            self.error.set(Some((node, op, argument)));
        }
    }

    /// First numeric problem recorded on this tape, if any.
    pub fn status(&self) -> Result<(), AutodiffError> {
        match self.error.get() {
            None => Ok(()),
            Some((node, op, argument)) => Err(AutodiffError::Domain { node, op, argument }),
        }
    }

    fn value_of(&self, index: u32) -> f64 {
        self.storage.borrow().nodes[index as usize].value
    }

    /// Fused affine node: `bias + Σ weights[i] * inputs[i]` recorded as a
    /// single node with cached partials.
    pub fn affine<'t>(&'t self, weights: &[Var<'t>], inputs: &[Var<'t>], bias: Var<'t>) -> Var<'t> {
        assert_eq!(weights.len(), inputs.len(), "affine: weight/input length mismatch");
        let mut value = bias.value();
        let mut parents = Vec::with_capacity(2 * weights.len() + 1);
        for (w, x) in weights.iter().zip(inputs) {
            self.check_same(w);
            self.check_same(x);
            let (wv, xv) = (w.value(), x.value());
            value += wv * xv;
            parents.push((w.index, xv));
            parents.push((x.index, wv));
        }
        self.check_same(&bias);
        parents.push((bias.index, 1.0));
        self.push(OpKind::Affine, value, &parents)
    }

    fn check_same(&self, v: &Var<'_>) {
        assert!(
            std::ptr::eq(self, v.tape),
            "Vars from different tapes cannot be combined"
        );
    }

    /// Reverse sweep from `root`. Nodes after `root` and nodes that do not
    /// reach it receive zero adjoint.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, AutodiffError> {
        self.check_same(&root);
        self.status()?;
        let s = self.storage.borrow();
        let n = root.index as usize + 1;
        let mut adjoint = vec![0.0; n];
        adjoint[n - 1] = 1.0;
        for i in (0..n).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = s.nodes[i];
            let edges = &s.edges[node.edge_start as usize..(node.edge_start + node.edge_len) as usize];
            for &(p, partial) in edges {
                adjoint[p as usize] += a * partial;
            }
        }
        Ok(Gradients { adjoint })
    }

    /// Indices of every leaf node, in recording order.
    pub fn leaves(&self) -> Vec<usize> {
        self.storage
            .borrow()
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == OpKind::Leaf)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn kind(&self, index: usize) -> OpKind {
        self.storage.borrow().nodes[index].kind
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoint: Vec<f64>,
}

impl Gradients {
    /// ∂root/∂v.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.at(v.index as usize)
    }

    pub fn at(&self, index: usize) -> f64 {
        self.adjoint.get(index).copied().unwrap_or(0.0)
    }

    /// Gradient map restricted to the given leaf indices.
    pub fn leaf_map(&self, leaves: &[usize]) -> Vec<(usize, f64)> {
        leaves.iter().map(|&i| (i, self.at(i))).collect()
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.tape.value_of(self.index)
    }

    pub fn index(self) -> usize {
        self.index as usize
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn unary(self, kind: OpKind, value: f64, partial: f64) -> Var<'t> {
        self.tape.push(kind, value, &[(self.index, partial)])
    }

    fn binary(self, other: Var<'t>, kind: OpKind, value: f64, da: f64, db: f64) -> Var<'t> {
        self.tape.check_same(&other);
        self.tape.push(kind, value, &[(self.index, da), (other.index, db)])
    }

    /// Square root; negative arguments are recorded as a domain error.
    pub fn sqrt(self) -> Var<'t> {
        let a = self.value();
        if a < 0.0 {
            self.tape.domain_error(self.tape.len(), OpKind::Sqrt, a);
        }
        let v = a.sqrt();
        let d = if v > 0.0 { 0.5 / v } else { 0.0 };
        self.unary(OpKind::Sqrt, v, d)
    }

    pub fn square(self) -> Var<'t> {
        let a = self.value();
        self.unary(OpKind::Square, a * a, 2.0 * a)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = sigmoid(self.value());
        self.unary(OpKind::Sigmoid, v, v * (1.0 - v))
    }

    /// `max(0, x)` with subgradient 0 at the kink.
    pub fn max0(self) -> Var<'t> {
        let a = self.value();
        if a > 0.0 {
            self.unary(OpKind::Max0, a, 1.0)
        } else {
            self.unary(OpKind::Max0, 0.0, 0.0)
        }
    }

    fn div_var(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        if b == 0.0 {
            self.tape.domain_error(self.tape.len(), OpKind::Div, b);
        }
        self.binary(other, OpKind::Div, a / b, 1.0 / b, -a / (b * b))
    }
}

/// Logistic function evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, OpKind::Add, self.value() + rhs.value(), 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, OpKind::Sub, self.value() - rhs.value(), 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.binary(rhs, OpKind::Mul, a * b, b, a)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.div_var(rhs)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(OpKind::Neg, -self.value(), -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(OpKind::Add, self.value() + c, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(OpKind::Sub, self.value() - c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(OpKind::Mul, self.value() * c, c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        if c == 0.0 {
            self.tape.domain_error(self.tape.len(), OpKind::Div, c);
        }
        self.unary(OpKind::Div, self.value() / c, 1.0 / c)
    }
}

/// Arithmetic shared by `f64` and [`Var`].
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant in the same domain as `self` (same tape for `Var`).
    fn lift(self, c: f64) -> Self;
    fn sqrt(self) -> Self;
    fn square(self) -> Self;
    fn sigmoid(self) -> Self;
    fn max0(self) -> Self;

    /// `max(self, floor)` built from [`Scalar::max0`].
    fn max_floor(self, floor: f64) -> Self {
        (self - floor).max0() + floor
    }

    /// `c - self`.
    fn rsub(self, c: f64) -> Self {
        -self + c
    }
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> f64 {
        c
    }
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    fn square(self) -> f64 {
        self * self
    }
    fn sigmoid(self) -> f64 {
        sigmoid(self)
    }
    fn max0(self) -> f64 {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        Var::value(self)
    }
    fn lift(self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn square(self) -> Self {
        Var::square(self)
    }
    fn sigmoid(self) -> Self {
        Var::sigmoid(self)
    }
    fn max0(self) -> Self {
        Var::max0(self)
    }
}
