//! Scalar abstraction shared by the plain `f64` path, the reverse-mode tape
//! and forward-mode duals.
//!
//! Everything above the network layer (Cholesky assembly, the equations of
//! motion, RK4) is written once against [`Real`] so that inference, training
//! and the analytic plants run the same arithmetic.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant living in the same context as `self` (same tape, same batch shape).
    fn lift(&self, c: f64) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn softplus(&self) -> Self;
    fn sigmoid(&self) -> Self;
    fn tanh(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn is_finite(&self) -> bool;
    /// Primal value; for batched values, the first element.
    fn primal(&self) -> f64;

    fn zero_like(&self) -> Self {
        self.lift(0.0)
    }

    fn square(&self) -> Self {
        *self * *self
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    #[inline]
    fn lift(&self, c: f64) -> Self {
        c
    }
    #[inline]
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    #[inline]
    fn softplus(&self) -> Self {
        softplus(*self)
    }
    #[inline]
    fn sigmoid(&self) -> Self {
        sigmoid(*self)
    }
    #[inline]
    fn tanh(&self) -> Self {
        f64::tanh(*self)
    }
    #[inline]
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    #[inline]
    fn primal(&self) -> f64 {
        *self
    }
}

/// Small dense helpers over row-major `n×n` slices of [`Real`] values.
pub mod small {
    use super::Real;

    pub fn matvec<T: Real>(a: &[T], rows: usize, cols: usize, x: &[T]) -> Vec<T> {
        debug_assert_eq!(a.len(), rows * cols);
        debug_assert_eq!(x.len(), cols);
        (0..rows)
            .map(|i| {
                let mut acc = a[i * cols] * x[0];
                for j in 1..cols {
                    acc = acc + a[i * cols + j] * x[j];
                }
                acc
            })
            .collect()
    }

    pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
        let mut acc = a[0] * b[0];
        for i in 1..a.len() {
            acc = acc + a[i] * b[i];
        }
        acc
    }

    /// `x ↦ xᵀ S x` for a square `S`.
    pub fn quad<T: Real>(s: &[T], x: &[T]) -> T {
        let n = x.len();
        dot(x, &matvec(s, n, n, x))
    }

    /// `L·Lᵀ` for a lower-triangular `L`, mirrored so the result is exactly symmetric.
    pub fn llt<T: Real>(l: &[T], n: usize) -> Vec<T> {
        let mut out = vec![l[0].zero_like(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut acc = l[i * n] * l[j * n];
                for k in 1..=j {
                    acc = acc + l[i * n + k] * l[j * n + k];
                }
                out[i * n + j] = acc;
                out[j * n + i] = acc;
            }
        }
        out
    }

    /// Symmetric part of `dL·Lᵀ + L·dLᵀ`, i.e. the tangent of `L·Lᵀ`.
    pub fn llt_tangent<T: Real>(l: &[T], dl: &[T], n: usize) -> Vec<T> {
        let mut out = vec![l[0].zero_like(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut acc = dl[i * n] * l[j * n] + l[i * n] * dl[j * n];
                for k in 1..=j {
                    acc = acc + dl[i * n + k] * l[j * n + k] + l[i * n + k] * dl[j * n + k];
                }
                out[i * n + j] = acc;
                out[j * n + i] = acc;
            }
        }
        out
    }

    /// Solves `L Lᵀ x = b` by forward and back substitution.
    pub fn cholesky_solve<T: Real>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
        let mut y = b.to_vec();
        for i in 0..n {
            let mut acc = y[i];
            for k in 0..i {
                acc = acc - l[i * n + k] * y[k];
            }
            y[i] = acc / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in i + 1..n {
                acc = acc - l[k * n + i] * y[k];
            }
            y[i] = acc / l[i * n + i];
        }
        y
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix.
    /// Returns `None` when a pivot is not strictly positive.
    pub fn cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
        let mut l = vec![a[0].zero_like(); n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d = d - l[j * n + k].square();
            }
            if !(d.primal() > 0.0) {
                return None;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Some(l)
    }

    pub fn add<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
        a.iter().zip(b).map(|(&x, &y)| x + y).collect()
    }

    pub fn sub<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
        a.iter().zip(b).map(|(&x, &y)| x - y).collect()
    }

    pub fn scaled<T: Real>(a: &[T], c: f64) -> Vec<T> {
        a.iter().map(|x| x.scale(c)).collect()
    }
}
