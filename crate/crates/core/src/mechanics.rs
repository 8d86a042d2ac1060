//! The `(M, ∂M/∂q, V, ∂V/∂q, D, A)` quadruple at a configuration, and the
//! trait that learned models and analytic plants share.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::numcore::{small, Real};

/// Model quantities at one configuration (or one batch of configurations when
/// `T` is a tape variable). Matrices are row-major.
#[derive(Clone, Debug)]
pub struct Mechanics<T> {
    pub dof: usize,
    pub inputs: usize,
    /// `M(q)`, `n×n`.
    pub mass: Vec<T>,
    /// Lower Cholesky factor of `M(q)`.
    pub mass_chol: Vec<T>,
    /// `∂M/∂q_k` for every `k`, each `n×n`.
    pub mass_jac: Vec<Vec<T>>,
    pub potential: T,
    /// `G(q) = ∂V/∂q`.
    pub potential_grad: Vec<T>,
    /// `D(q)`, `n×n`.
    pub damping: Vec<T>,
    /// `A(q)`, `n×m`.
    pub input: Vec<T>,
}

impl<T: Real> Mechanics<T> {
    pub fn solve_mass(&self, b: &[T]) -> Vec<T> {
        small::cholesky_solve(&self.mass_chol, self.dof, b)
    }

    pub fn damping_times(&self, v: &[T]) -> Vec<T> {
        small::matvec(&self.damping, self.dof, self.dof, v)
    }

    pub fn input_times(&self, u: &[T]) -> Vec<T> {
        small::matvec(&self.input, self.dof, self.inputs, u)
    }

    /// Every quantity multiplied by `c > 0` (the Cholesky factor by `√c`).
    pub fn scaled(&self, c: f64) -> Self {
        let mats = |m: &[T]| small::scaled(m, c);
        Self {
            dof: self.dof,
            inputs: self.inputs,
            mass: mats(&self.mass),
            mass_chol: small::scaled(&self.mass_chol, c.sqrt()),
            mass_jac: self.mass_jac.iter().map(|m| mats(m)).collect(),
            potential: self.potential.scale(c),
            potential_grad: mats(&self.potential_grad),
            damping: mats(&self.damping),
            input: mats(&self.input),
        }
    }
}

impl Mechanics<f64> {
    pub fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dof, self.dof, &self.mass)
    }

    pub fn damping_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dof, self.dof, &self.damping)
    }

    pub fn input_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dof, self.inputs, &self.input)
    }

    pub fn gravity(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.potential_grad)
    }

    pub fn mass_jacobian(&self) -> Vec<DMatrix<f64>> {
        self.mass_jac
            .iter()
            .map(|m| DMatrix::from_row_slice(self.dof, self.dof, m))
            .collect()
    }

    /// Builds the record from a mass matrix, factoring it numerically.
    #[allow(clippy::too_many_arguments)]
    pub fn from_mass(
        dof: usize,
        inputs: usize,
        mass: Vec<f64>,
        mass_jac: Vec<Vec<f64>>,
        potential: f64,
        potential_grad: Vec<f64>,
        damping: Vec<f64>,
        input: Vec<f64>,
    ) -> Result<Self> {
        let mass_chol = small::cholesky(&mass, dof).ok_or(Error::SingularMass {
            condition: f64::INFINITY,
        })?;
        Ok(Self {
            dof,
            inputs,
            mass,
            mass_chol,
            mass_jac,
            potential,
            potential_grad,
            damping,
            input,
        })
    }
}

/// Anything that exposes mechanical structure at a configuration: learned
/// structured models, analytic plants, rescaled wrappers.
pub trait MechanicalModel: Send + Sync {
    fn dof(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn mechanics(&self, q: &[f64]) -> Result<Mechanics<f64>>;

    fn check_state(&self, q: &[f64], v: &[f64]) -> Result<()> {
        check_len("configuration", self.dof(), q.len())?;
        check_len("velocity", self.dof(), v.len())
    }
}

impl<M: MechanicalModel + ?Sized> MechanicalModel for &M {
    fn dof(&self) -> usize {
        (**self).dof()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn mechanics(&self, q: &[f64]) -> Result<Mechanics<f64>> {
        (**self).mechanics(q)
    }
}

impl<M: MechanicalModel + ?Sized> MechanicalModel for Box<M> {
    fn dof(&self) -> usize {
        (**self).dof()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn mechanics(&self, q: &[f64]) -> Result<Mechanics<f64>> {
        (**self).mechanics(q)
    }
}

/// `(cM, cG, cA, cD)` for a constant `c > 0`: a model whose forward dynamics
/// coincide with the wrapped one.
pub struct Scaled<M> {
    pub inner: M,
    pub factor: f64,
}

impl<M: MechanicalModel> Scaled<M> {
    pub fn new(inner: M, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Invalid(format!("scale factor must be positive, got {factor}")));
        }
        Ok(Self { inner, factor })
    }
}

impl<M: MechanicalModel> MechanicalModel for Scaled<M> {
    fn dof(&self) -> usize {
        self.inner.dof()
    }
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn mechanics(&self, q: &[f64]) -> Result<Mechanics<f64>> {
        Ok(self.inner.mechanics(q)?.scaled(self.factor))
    }
}
