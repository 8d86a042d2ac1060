//! Reverse-mode differentiation over dense 2-D values.
//!
//! A [`Var`] is a node on a [`Tape`]. Scalars of a batch are carried as
//! `B×1` columns so that per-sample arithmetic (Cholesky solves, the equations
//! of motion, RK4) is recorded once per batch rather than once per sample.
//! Network layers use [`Tape::matmul_nt`] on `B×k` blocks.
//!
//! Input-derivatives of network outputs are themselves built from recorded
//! primitives (forward tangents through the layers), so a single backward pass
//! yields parameter gradients of losses that contain `∂M/∂q` and `∂V/∂q`.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::{self, Real};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    MatMulNt(usize, usize),
    AddRow(usize, usize),
    Softplus(usize),
    Sigmoid(usize),
    Tanh(usize),
    Sqrt(usize),
    Column(usize, usize),
    HStack(Vec<usize>),
    Mean(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::MatMulNt(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Softplus(..) => "softplus",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Sqrt(..) => "sqrt",
            Op::Column(..) => "column",
            Op::HStack(..) => "hstack",
            Op::Mean(..) => "mean",
        }
    }
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Default, Debug)]
struct Inner {
    nodes: Vec<Node>,
    failure: Option<&'static str>,
}

#[derive(Default, Debug)]
pub struct Tape {
    inner: RefCell<Inner>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// `C = A·Bᵀ` for row-major `A (m×k)`, `B (n×k)`.
fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64], beta: f64) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C += A·B` for row-major `A (m×k)`, `B (k×n)`.
fn gemm_nn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `C += Aᵀ·B` for row-major `A (k×m)`, `B (k×n)`.
fn gemm_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var<'_> {
        debug_assert_eq!(value.len(), rows * cols);
        let mut inner = self.inner.borrow_mut();
        if inner.failure.is_none() && value.iter().any(|v| !v.is_finite()) {
            inner.failure = Some(op.name());
        }
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var { tape: self, id }
    }

    /// A differentiable input (parameters) of shape `rows×cols`, row-major.
    pub fn leaf(&self, rows: usize, cols: usize, value: Vec<f64>) -> Var<'_> {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.push(rows, cols, value, Op::Leaf)
    }

    /// Data entering the computation; gradients are tracked but usually ignored.
    pub fn constant(&self, rows: usize, cols: usize, value: Vec<f64>) -> Var<'_> {
        self.leaf(rows, cols, value)
    }

    pub fn column_vector(&self, values: Vec<f64>) -> Var<'_> {
        let n = values.len();
        self.leaf(n, 1, values)
    }

    /// First primitive that produced a non-finite value, if any.
    pub fn failure(&self) -> Option<&'static str> {
        self.inner.borrow().failure
    }

    fn unary(&self, a: usize, f: impl Fn(f64) -> f64, op: Op) -> Var<'_> {
        let (rows, cols, value) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a];
            (n.rows, n.cols, n.value.iter().map(|&x| f(x)).collect())
        };
        self.push(rows, cols, value, op)
    }

    fn binary(&self, a: usize, b: usize, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'_> {
        let (rows, cols, value) = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.nodes[a], &inner.nodes[b]);
            assert!(
                x.rows == y.rows && x.cols == y.cols,
                "elementwise shape mismatch: {}x{} vs {}x{}",
                x.rows,
                x.cols,
                y.rows,
                y.cols
            );
            (
                x.rows,
                x.cols,
                x.value.iter().zip(&y.value).map(|(&p, &q)| f(p, q)).collect(),
            )
        };
        self.push(rows, cols, value, op)
    }

    /// `a·bᵀ`, with `a: m×k` and `b: n×k`.
    pub fn matmul_nt<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Var<'t> {
        let (m, n, value) = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.nodes[a.id], &inner.nodes[b.id]);
            assert_eq!(x.cols, y.cols, "matmul inner dimension");
            let (m, k, n) = (x.rows, x.cols, y.rows);
            let mut c = vec![0.0; m * n];
            gemm_nt(&x.value, &y.value, m, k, n, &mut c, 0.0);
            (m, n, c)
        };
        self.push(m, n, value, Op::MatMulNt(a.id, b.id))
    }

    /// `a + 1·row`, broadcasting a `1×c` row over the rows of `a`.
    pub fn add_row<'t>(&'t self, a: Var<'t>, row: Var<'t>) -> Var<'t> {
        let (r, c, value) = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.nodes[a.id], &inner.nodes[row.id]);
            assert!(y.rows == 1 && y.cols == x.cols, "add_row shape");
            let mut v = x.value.clone();
            for chunk in v.chunks_mut(x.cols) {
                for (e, b) in chunk.iter_mut().zip(&y.value) {
                    *e += b;
                }
            }
            (x.rows, x.cols, v)
        };
        self.push(r, c, value, Op::AddRow(a.id, row.id))
    }

    pub fn column<'t>(&'t self, a: Var<'t>, j: usize) -> Var<'t> {
        let (r, value) = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.id];
            assert!(j < x.cols, "column index");
            (x.rows, (0..x.rows).map(|i| x.value[i * x.cols + j]).collect())
        };
        self.push(r, 1, value, Op::Column(a.id, j))
    }

    /// Concatenates `r×1` columns into an `r×n` block.
    pub fn hstack<'t>(&'t self, cols: &[Var<'t>]) -> Var<'t> {
        let (r, value) = {
            let inner = self.inner.borrow();
            let r = inner.nodes[cols[0].id].rows;
            let n = cols.len();
            let mut v = vec![0.0; r * n];
            for (j, c) in cols.iter().enumerate() {
                let node = &inner.nodes[c.id];
                assert!(node.rows == r && node.cols == 1, "hstack expects r×1 columns");
                for i in 0..r {
                    v[i * n + j] = node.value[i];
                }
            }
            (r, v)
        };
        let ids = cols.iter().map(|c| c.id).collect();
        self.push(r, cols.len(), value, Op::HStack(ids))
    }

    pub fn mean<'t>(&'t self, a: Var<'t>) -> Var<'t> {
        let value = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.id];
            x.value.iter().sum::<f64>() / x.value.len() as f64
        };
        self.push(1, 1, vec![value], Op::Mean(a.id))
    }

    pub fn value(&self, v: Var<'_>) -> Vec<f64> {
        self.inner.borrow().nodes[v.id].value.clone()
    }

    pub fn shape(&self, v: Var<'_>) -> (usize, usize) {
        let inner = self.inner.borrow();
        let n = &inner.nodes[v.id];
        (n.rows, n.cols)
    }

    /// Reverse sweep from a `1×1` output. Returns gradients for the requested
    /// variables, in order. Fails if any recorded primitive produced a
    /// non-finite value.
    pub fn gradients(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Vec<f64>>> {
        if let Some(primitive) = self.failure() {
            return Err(Error::NumericalFailure { primitive });
        }
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        assert_eq!(nodes[output.id].value.len(), 1, "gradient of a non-scalar output");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.id + 1];
        grads[output.id] = Some(vec![1.0]);

        fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
            slot.get_or_insert_with(|| vec![0.0; len])
        }

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    for (d, x) in acc(&mut grads[*a], g.len()).iter_mut().zip(&g) {
                        *d += x;
                    }
                    for (d, x) in acc(&mut grads[*b], g.len()).iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                Op::Sub(a, b) => {
                    for (d, x) in acc(&mut grads[*a], g.len()).iter_mut().zip(&g) {
                        *d += x;
                    }
                    for (d, x) in acc(&mut grads[*b], g.len()).iter_mut().zip(&g) {
                        *d -= x;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    let da = acc(&mut grads[*a], g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * vb[i];
                    }
                    let db = acc(&mut grads[*b], g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * va[i];
                    }
                }
                Op::Div(a, b) => {
                    let vb = &nodes[*b].value;
                    let out = &node.value;
                    let da = acc(&mut grads[*a], g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] / vb[i];
                    }
                    let db = acc(&mut grads[*b], g.len());
                    for i in 0..g.len() {
                        db[i] -= g[i] * out[i] / vb[i];
                    }
                }
                Op::Neg(a) => {
                    for (d, x) in acc(&mut grads[*a], g.len()).iter_mut().zip(&g) {
                        *d -= x;
                    }
                }
                Op::Scale(a, c) => {
                    for (d, x) in acc(&mut grads[*a], g.len()).iter_mut().zip(&g) {
                        *d += c * x;
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (x, y) = (&nodes[*a], &nodes[*b]);
                    let (m, k, n) = (x.rows, x.cols, y.rows);
                    // C = X·Yᵀ: dX = G·Y, dY = Gᵀ·X
                    gemm_nn_acc(&g, &y.value, m, n, k, acc(&mut grads[*a], m * k));
                    gemm_tn_acc(&g, &x.value, n, m, k, acc(&mut grads[*b], n * k));
                }
                Op::AddRow(a, row) => {
                    for (d, x) in acc(&mut grads[*a], g.len()).iter_mut().zip(&g) {
                        *d += x;
                    }
                    let c = node.cols;
                    let db = acc(&mut grads[*row], c);
                    for chunk in g.chunks(c) {
                        for (d, x) in db.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                }
                Op::Softplus(a) => {
                    let va = &nodes[*a].value;
                    let da = acc(&mut grads[*a], g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * real::sigmoid(va[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let s = &node.value;
                    let da = acc(&mut grads[*a], g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * s[i] * (1.0 - s[i]);
                    }
                }
                Op::Tanh(a) => {
                    let t = &node.value;
                    let da = acc(&mut grads[*a], g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * (1.0 - t[i] * t[i]);
                    }
                }
                Op::Sqrt(a) => {
                    let s = &node.value;
                    let da = acc(&mut grads[*a], g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * 0.5 / s[i];
                    }
                }
                Op::Column(a, j) => {
                    let x = &nodes[*a];
                    let (r, c) = (x.rows, x.cols);
                    let da = acc(&mut grads[*a], r * c);
                    for i in 0..r {
                        da[i * c + j] += g[i];
                    }
                }
                Op::HStack(ids) => {
                    let n = ids.len();
                    let r = node.rows;
                    for (j, c) in ids.iter().enumerate() {
                        let dc = acc(&mut grads[*c], r);
                        for i in 0..r {
                            dc[i] += g[i * n + j];
                        }
                    }
                }
                Op::Mean(a) => {
                    let len = nodes[*a].value.len();
                    let share = g[0] / len as f64;
                    for d in acc(&mut grads[*a], len).iter_mut() {
                        *d += share;
                    }
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|v| {
                grads
                    .get(v.id)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| vec![0.0; nodes[v.id].value.len()])
            })
            .collect())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.shape(*self)
    }

    fn same_tape(&self, other: &Var<'t>) {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.same_tape(&rhs);
        self.tape.binary(self.id, rhs.id, |a, b| a + b, Op::Add(self.id, rhs.id))
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.same_tape(&rhs);
        self.tape.binary(self.id, rhs.id, |a, b| a - b, Op::Sub(self.id, rhs.id))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.same_tape(&rhs);
        self.tape.binary(self.id, rhs.id, |a, b| a * b, Op::Mul(self.id, rhs.id))
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        self.same_tape(&rhs);
        self.tape.binary(self.id, rhs.id, |a, b| a / b, Op::Div(self.id, rhs.id))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(self.id, |a| -a, Op::Neg(self.id))
    }
}

impl<'t> Real for Var<'t> {
    fn lift(&self, c: f64) -> Self {
        let (r, k) = self.shape();
        self.tape.constant(r, k, vec![c; r * k])
    }

    fn scale(&self, c: f64) -> Self {
        self.tape.unary(self.id, |a| a * c, Op::Scale(self.id, c))
    }

    fn softplus(&self) -> Self {
        self.tape.unary(self.id, real::softplus, Op::Softplus(self.id))
    }

    fn sigmoid(&self) -> Self {
        self.tape.unary(self.id, real::sigmoid, Op::Sigmoid(self.id))
    }

    fn tanh(&self) -> Self {
        self.tape.unary(self.id, f64::tanh, Op::Tanh(self.id))
    }

    fn sqrt(&self) -> Self {
        self.tape.unary(self.id, f64::sqrt, Op::Sqrt(self.id))
    }

    fn is_finite(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id]
            .value
            .iter()
            .all(|v| v.is_finite())
    }

    fn primal(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.id].value[0]
    }
}
