//! Checks whether a learned quadruple equals the true one up to a left
//! factor `P(q) = M_L(q)·M(q)⁻¹`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mechanics::MechanicalModel;
use crate::plants::Plant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySample {
    pub q: Vec<f64>,
    /// Row-major `n×n`.
    pub p: Vec<f64>,
    pub residual_g: f64,
    pub residual_a: f64,
    pub residual_d: f64,
    /// Smallest eigenvalue of the symmetric part of `A(A_L − PA)ᵀ + AAᵀPᵀ`.
    pub definiteness_margin: f64,
    pub definiteness_ok: bool,
    /// `‖A⁻¹P⁻¹(A_L − PA)‖₂`; `None` when `A` is not square.
    pub smallness_norm: Option<f64>,
    pub smallness_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub samples: Vec<ConsistencySample>,
    pub median_residual_g: f64,
    pub median_residual_a: f64,
    pub median_residual_d: f64,
    pub all_definite: bool,
    pub all_small: bool,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn estimate_p<M: MechanicalModel + ?Sized>(model: &M, plant: &Plant, q_grid: &[Vec<f64>]) -> Result<ConsistencyReport> {
    check_len("model coordinates", plant.dof(), model.dof())?;
    check_len("model inputs", plant.input_dim(), model.input_dim())?;
    if q_grid.is_empty() {
        return Err(Error::Invalid("empty configuration grid".into()));
    }
    let n = plant.dof();
    let mut samples = Vec::with_capacity(q_grid.len());
    for q in q_grid {
        check_len("grid configuration", n, q.len())?;
        let learned = model.mechanics(q)?;
        let truth = plant.mechanics(q)?;
        let m_inv = truth
            .mass_matrix()
            .try_inverse()
            .ok_or(Error::SingularMass { condition: f64::INFINITY })?;
        let p = learned.mass_matrix() * m_inv;
        let a = truth.input_matrix();
        let da = learned.input_matrix() - &p * &a;
        let residual_g = (learned.gravity() - &p * truth.gravity()).norm();
        let residual_a = spectral_norm(&da);
        let residual_d = spectral_norm(&(learned.damping_matrix() - &p * truth.damping_matrix()));
        let cond = &a * da.transpose() + &a * a.transpose() * p.transpose();
        let sym = (&cond + cond.transpose()) * 0.5;
        let definiteness_margin = sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        let smallness_norm = if a.is_square() {
            match (a.clone().try_inverse(), p.clone().try_inverse()) {
                (Some(ai), Some(pi)) => Some(spectral_norm(&(ai * pi * &da))),
                _ => None,
            }
        } else {
            None
        };
        samples.push(ConsistencySample {
            q: q.clone(),
            p: p.transpose().as_slice().to_vec(),
            residual_g,
            residual_a,
            residual_d,
            definiteness_margin,
            definiteness_ok: definiteness_margin > 0.0,
            smallness_norm,
            smallness_ok: smallness_norm.is_some_and(|s| s < 1.0),
        });
    }
    Ok(ConsistencyReport {
        median_residual_g: median(samples.iter().map(|s| s.residual_g).collect()),
        median_residual_a: median(samples.iter().map(|s| s.residual_a).collect()),
        median_residual_d: median(samples.iter().map(|s| s.residual_d).collect()),
        all_definite: samples.iter().all(|s| s.definiteness_ok),
        all_small: samples.iter().all(|s| s.smallness_ok),
        samples,
    })
}
