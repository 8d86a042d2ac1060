//! Forward-mode dual numbers with up to `K` tangent directions.
//!
//! Nesting (`Dual<Dual<f64, K>, K>`) gives exact second derivatives; the
//! analytic plants use it for `∂M/∂q` of kinematics-derived mass matrices.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const K: usize> {
    pub re: T,
    pub eps: [T; K],
}

impl<T: Real, const K: usize> Dual<T, K> {
    pub fn constant(re: T) -> Self {
        Self {
            re,
            eps: [re.zero_like(); K],
        }
    }

    /// The `i`-th independent variable with value `re`.
    pub fn variable(re: T, i: usize) -> Self {
        let mut d = Self::constant(re);
        d.eps[i] = re.lift(1.0);
        d
    }

    fn chain(self, re: T, slope: T) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * slope;
        }
        Self { re, eps }
    }
}

impl<T: Real, const K: usize> Add for Dual<T, K> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e = *e + r;
        }
        Self {
            re: self.re + rhs.re,
            eps,
        }
    }
}

impl<T: Real, const K: usize> Sub for Dual<T, K> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e = *e - r;
        }
        Self {
            re: self.re - rhs.re,
            eps,
        }
    }
}

impl<T: Real, const K: usize> Mul for Dual<T, K> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e = *e * rhs.re + self.re * r;
        }
        Self {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<T: Real, const K: usize> Div for Dual<T, K> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let re = self.re / rhs.re;
        let mut eps = self.eps;
        for (e, r) in eps.iter_mut().zip(rhs.eps) {
            *e = (*e - re * r) / rhs.re;
        }
        Self { re, eps }
    }
}

impl<T: Real, const K: usize> Neg for Dual<T, K> {
    type Output = Self;
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Self { re: -self.re, eps }
    }
}

impl<T: Real, const K: usize> Real for Dual<T, K> {
    fn lift(&self, c: f64) -> Self {
        Self::constant(self.re.lift(c))
    }

    fn scale(&self, c: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = e.scale(c);
        }
        Self {
            re: self.re.scale(c),
            eps,
        }
    }

    fn softplus(&self) -> Self {
        self.chain(self.re.softplus(), self.re.sigmoid())
    }

    fn sigmoid(&self) -> Self {
        let s = self.re.sigmoid();
        self.chain(s, s * (s.lift(1.0) - s))
    }

    fn tanh(&self) -> Self {
        let t = self.re.tanh();
        self.chain(t, t.lift(1.0) - t * t)
    }

    fn sqrt(&self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, s.lift(0.5) / s)
    }

    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.iter().all(Real::is_finite)
    }

    fn primal(&self) -> f64 {
        self.re.primal()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type D1 = Dual<f64, 2>;
    type D2 = Dual<D1, 2>;

    #[test]
    fn first_derivatives_of_product_and_quotient() {
        let x = D1::variable(3.0, 0);
        let y = D1::variable(2.0, 1);
        let f = x * y / (x + y);
        // ∂/∂x (xy/(x+y)) = y²/(x+y)², ∂/∂y = x²/(x+y)²
        assert!((f.eps[0] - 4.0 / 25.0).abs() < 1e-15);
        assert!((f.eps[1] - 9.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn nested_duals_give_hessian() {
        // f = x²·y + softplus(y)
        let (x0, y0) = (0.7, -0.4);
        let x = D2::variable(D1::variable(x0, 0), 0);
        let y = D2::variable(D1::variable(y0, 1), 1);
        let f = x * x * y + y.softplus();
        let s = crate::numcore::real::sigmoid(y0);
        assert!((f.eps[0].eps[0] - 2.0 * y0).abs() < 1e-14);
        assert!((f.eps[0].eps[1] - 2.0 * x0).abs() < 1e-14);
        assert!((f.eps[1].eps[0] - 2.0 * x0).abs() < 1e-14);
        assert!((f.eps[1].eps[1] - s * (1.0 - s)).abs() < 1e-14);
    }
}
