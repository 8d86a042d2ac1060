//! Energies and equations of motion of a structured model.
//!
//! The Lagrangian is `L = ½q̇ᵀM(q)q̇ − V(q)`, so `∂²L/∂q̇² = M(q)` and the mixed
//! term `∂²L/∂q∂q̇·q̇` is `Ṁq̇`. The forward dynamics are
//!
//! ```text
//! q̈ = M⁻¹ (A u − Ṁq̇ + ½ ∂(q̇ᵀMq̇)/∂q − ∂V/∂q − D q̇)
//! ```
//!
//! and the Hamiltonian form with `H = ½pᵀM⁻¹p + V` is
//!
//! ```text
//! q̇ = M⁻¹p
//! ṗ = −∂H/∂q − D M⁻¹p + A u,   ∂H/∂q_k = −½ (M⁻¹p)ᵀ ∂M/∂q_k (M⁻¹p) + ∂V/∂q_k
//! ```
//!
//! The generic functions work on any [`Real`]; the `f64` wrappers add shape
//! checks and the mass conditioning guard.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::mechanics::{MechanicalModel, Mechanics};
use crate::numcore::{small, Real};
use crate::physnets::ModelKind;

/// Mass matrices with a condition number above this are rejected.
pub const MASS_CONDITION_LIMIT: f64 = 1e12;

/// `Ṁ(q, q̇)·q̇ − ½ ∂(q̇ᵀMq̇)/∂q`, i.e. `C(q, q̇)·q̇` for the Christoffel `C`.
pub fn coriolis_terms<T: Real>(mech: &Mechanics<T>, qd: &[T]) -> Vec<T> {
    let n = mech.dof;
    let mut out: Option<Vec<T>> = None;
    for k in 0..n {
        let dm_qd = small::matvec(&mech.mass_jac[k], n, n, qd);
        let contrib: Vec<T> = dm_qd.iter().map(|v| *v * qd[k]).collect();
        out = Some(match out {
            None => contrib,
            Some(acc) => small::add(&acc, &contrib),
        });
    }
    let mut out = out.expect("dof >= 1");
    for (k, o) in out.iter_mut().enumerate() {
        let half = small::quad(&mech.mass_jac[k], qd).scale(0.5);
        *o = *o - half;
    }
    out
}

pub fn lagrangian_accel<T: Real>(mech: &Mechanics<T>, qd: &[T], u: &[T]) -> Vec<T> {
    let forces = mech.input_times(u);
    let coriolis = coriolis_terms(mech, qd);
    let damping = mech.damping_times(qd);
    let rhs: Vec<T> = (0..mech.dof)
        .map(|i| forces[i] - coriolis[i] - mech.potential_grad[i] - damping[i])
        .collect();
    mech.solve_mass(&rhs)
}

/// `(∂H/∂q, ∂H/∂p)`
pub fn hamiltonian_gradients<T: Real>(mech: &Mechanics<T>, p: &[T]) -> (Vec<T>, Vec<T>) {
    let n = mech.dof;
    let x = mech.solve_mass(p);
    let dq = (0..n)
        .map(|k| mech.potential_grad[k] - small::quad(&mech.mass_jac[k], &x).scale(0.5))
        .collect();
    (dq, x)
}

/// `(q̇, ṗ)`
pub fn hamiltonian_field<T: Real>(mech: &Mechanics<T>, p: &[T], u: &[T]) -> (Vec<T>, Vec<T>) {
    let (dh_dq, dh_dp) = hamiltonian_gradients(mech, p);
    let damping = mech.damping_times(&dh_dp);
    let forces = mech.input_times(u);
    let pdot = (0..mech.dof)
        .map(|i| -dh_dq[i] - damping[i] + forces[i])
        .collect();
    (dh_dp, pdot)
}

/// Configuration with either velocities or momenta.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfState {
    Velocity { q: DVector<f64>, qd: DVector<f64> },
    Momentum { q: DVector<f64>, p: DVector<f64> },
}

impl ConfState {
    pub fn q(&self) -> &DVector<f64> {
        match self {
            ConfState::Velocity { q, .. } | ConfState::Momentum { q, .. } => q,
        }
    }
}

fn checked_mechanics<M: MechanicalModel + ?Sized>(model: &M, q: &[f64]) -> Result<Mechanics<f64>> {
    check_len("configuration", model.dof(), q.len())?;
    let mech = model.mechanics(q)?;
    let eig = mech.mass_matrix().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition.is_finite() && condition <= MASS_CONDITION_LIMIT) {
        return Err(Error::SingularMass { condition });
    }
    Ok(mech)
}

fn finite(v: Vec<f64>, primitive: &'static str) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(DVector::from_vec(v))
    } else {
        Err(Error::NumericalFailure { primitive })
    }
}

pub fn kinetic_energy<M: MechanicalModel + ?Sized>(model: &M, q: &[f64], qd: &[f64]) -> Result<f64> {
    model.check_state(q, qd)?;
    let mech = model.mechanics(q)?;
    Ok(0.5 * small::quad(&mech.mass, qd))
}

/// `½q̇ᵀM(q)q̇ − V(q)`
pub fn lagrangian<M: MechanicalModel + ?Sized>(model: &M, q: &[f64], qd: &[f64]) -> Result<f64> {
    model.check_state(q, qd)?;
    let mech = model.mechanics(q)?;
    Ok(0.5 * small::quad(&mech.mass, qd) - mech.potential)
}

/// `½pᵀM⁻¹(q)p + V(q)`
pub fn hamiltonian<M: MechanicalModel + ?Sized>(model: &M, q: &[f64], p: &[f64]) -> Result<f64> {
    model.check_state(q, p)?;
    let mech = checked_mechanics(model, q)?;
    let x = mech.solve_mass(p);
    Ok(0.5 * small::dot(p, &x) + mech.potential)
}

pub fn lagrangian_forward_dynamics<M: MechanicalModel + ?Sized>(
    model: &M,
    q: &[f64],
    qd: &[f64],
    u: &[f64],
) -> Result<DVector<f64>> {
    model.check_state(q, qd)?;
    check_len("control input", model.input_dim(), u.len())?;
    let mech = checked_mechanics(model, q)?;
    finite(lagrangian_accel(&mech, qd, u), "lagrangian_forward_dynamics")
}

pub fn hamiltonian_vector_field<M: MechanicalModel + ?Sized>(
    model: &M,
    q: &[f64],
    p: &[f64],
    u: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    model.check_state(q, p)?;
    check_len("control input", model.input_dim(), u.len())?;
    let mech = checked_mechanics(model, q)?;
    let (qd, pd) = hamiltonian_field(&mech, p, u);
    Ok((finite(qd, "hamiltonian_vector_field")?, finite(pd, "hamiltonian_vector_field")?))
}

/// `C(q, q̇)·q̇`, the velocity-dependent inertial force.
pub fn coriolis_force<M: MechanicalModel + ?Sized>(model: &M, q: &[f64], qd: &[f64]) -> Result<DVector<f64>> {
    model.check_state(q, qd)?;
    let mech = model.mechanics(q)?;
    finite(coriolis_terms(&mech, qd), "coriolis_force")
}

/// `dH/dt = ⟨∂H/∂q, q̇⟩ + ⟨∂H/∂p, ṗ⟩` along the Hamiltonian vector field.
pub fn energy_rate<M: MechanicalModel + ?Sized>(model: &M, state: &ConfState, u: &[f64]) -> Result<f64> {
    let (q, p) = match state {
        ConfState::Momentum { q, p } => (q.clone(), p.clone()),
        ConfState::Velocity { q, qd } => {
            model.check_state(q.as_slice(), qd.as_slice())?;
            let mech = model.mechanics(q.as_slice())?;
            (q.clone(), mech.mass_matrix() * qd)
        }
    };
    model.check_state(q.as_slice(), p.as_slice())?;
    check_len("control input", model.input_dim(), u.len())?;
    let mech = checked_mechanics(model, q.as_slice())?;
    let (dh_dq, dh_dp) = hamiltonian_gradients(&mech, p.as_slice());
    let (qdot, pdot) = hamiltonian_field(&mech, p.as_slice(), u);
    Ok(small::dot(&dh_dq, &qdot) + small::dot(&dh_dp, &pdot))
}

/// State layout `[q; q̇]`.
pub fn lagrangian_state_field<M: MechanicalModel + ?Sized>(
    model: &M,
) -> impl Fn(&[f64], &[f64]) -> Result<Vec<f64>> + '_ {
    move |x: &[f64], u: &[f64]| {
        let n = model.dof();
        check_len("lagrangian state", 2 * n, x.len())?;
        let qdd = lagrangian_forward_dynamics(model, &x[..n], &x[n..], u)?;
        let mut out = x[n..].to_vec();
        out.extend(qdd.iter());
        Ok(out)
    }
}

/// State layout `[q; p]`.
pub fn hamiltonian_state_field<M: MechanicalModel + ?Sized>(
    model: &M,
) -> impl Fn(&[f64], &[f64]) -> Result<Vec<f64>> + '_ {
    move |x: &[f64], u: &[f64]| {
        let n = model.dof();
        check_len("hamiltonian state", 2 * n, x.len())?;
        let (qd, pd) = hamiltonian_vector_field(model, &x[..n], &x[n..], u)?;
        let mut out = qd.as_slice().to_vec();
        out.extend(pd.iter());
        Ok(out)
    }
}

/// [`lagrangian_state_field`] or [`hamiltonian_state_field`] by kind.
pub fn state_field<M: MechanicalModel + ?Sized>(
    model: &M,
    kind: ModelKind,
) -> impl Fn(&[f64], &[f64]) -> Result<Vec<f64>> + '_ {
    let lagrangian = lagrangian_state_field(model);
    let hamiltonian = hamiltonian_state_field(model);
    move |x: &[f64], u: &[f64]| match kind {
        ModelKind::Lnn => lagrangian(x, u),
        ModelKind::Hnn => hamiltonian(x, u),
    }
}
