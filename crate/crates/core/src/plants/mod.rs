//! Analytic ground-truth mechanical systems and the data-generation pipeline.

mod datagen;
mod pcc;
mod signals;

pub use datagen::{
    generate_dataset, read_trajectories_csv, save_trajectories, write_trajectories_csv, GenSpec,
    Generated, RawTrajectory, TrajectoryFailure,
};
pub use pcc::PccParams;
pub use signals::{InputSignal, SignalKind};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mechanics::{MechanicalModel, Mechanics};

pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub actuation: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: GRAVITY,
            damping: 0.1,
            actuation: 2.0,
        }
    }
}

/// Planar 2R arm; joint angles measured from the horizontal, gravity along −y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkParams {
    pub masses: [f64; 2],
    pub lengths: [f64; 2],
    /// Distance from each joint to the link's centre of mass.
    pub com: [f64; 2],
    pub inertias: [f64; 2],
    pub gravity: f64,
    pub damping: [f64; 2],
    /// Row-major `2×2` actuation matrix.
    pub input: [[f64; 2]; 2],
}

impl Default for TwoLinkParams {
    fn default() -> Self {
        Self {
            masses: [1.0, 1.0],
            lengths: [1.0, 1.0],
            com: [0.5, 0.5],
            inertias: [1.0 / 12.0, 1.0 / 12.0],
            gravity: GRAVITY,
            damping: [0.1, 0.1],
            input: [[1.0, 0.0], [0.5, 1.0]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    DampedPendulum(PendulumParams),
    TwoLinkArm(TwoLinkParams),
    PccSegment(PccParams),
}

pub const PLANT_NAMES: [&str; 4] = [
    "damped_pendulum",
    "two_link_arm",
    "pcc_segment_planar",
    "pcc_segment_spatial",
];

pub fn builtin_plants() -> Vec<Plant> {
    PLANT_NAMES.iter().map(|n| Plant::by_name(n).expect("builtin name")).collect()
}

impl Plant {
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "damped_pendulum" => Plant::DampedPendulum(PendulumParams::default()),
            "two_link_arm" => Plant::TwoLinkArm(TwoLinkParams::default()),
            "pcc_segment_planar" => Plant::PccSegment(PccParams::planar()),
            "pcc_segment_spatial" => Plant::PccSegment(PccParams::spatial()),
            other => {
                return Err(Error::config(
                    "plant",
                    format!("unknown plant `{other}` (expected one of {})", PLANT_NAMES.join(", ")),
                ))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Plant::DampedPendulum(_) => "damped_pendulum",
            Plant::TwoLinkArm(_) => "two_link_arm",
            Plant::PccSegment(p) if p.spatial => "pcc_segment_spatial",
            Plant::PccSegment(_) => "pcc_segment_planar",
        }
    }

    pub fn dof(&self) -> usize {
        match self {
            Plant::DampedPendulum(_) => 1,
            Plant::TwoLinkArm(_) => 2,
            Plant::PccSegment(p) => p.dof(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Plant::DampedPendulum(_) => 1,
            Plant::TwoLinkArm(_) => 2,
            Plant::PccSegment(p) => p.tendon_angles.len(),
        }
    }

    pub fn check_domain(&self, q: &[f64]) -> Result<()> {
        check_len("configuration", self.dof(), q.len())?;
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite configuration".into()));
        }
        match self {
            Plant::PccSegment(p) => p.check_domain(q),
            _ => Ok(()),
        }
    }

    /// `(M, ∂M/∂q, V, G, D, A)` without the domain check.
    fn quantities(&self, q: &[f64]) -> Result<Mechanics<f64>> {
        match self {
            Plant::DampedPendulum(p) => {
                let ml2 = p.mass * p.length * p.length;
                let mgl = p.mass * p.gravity * p.length;
                Mechanics::from_mass(
                    1,
                    1,
                    vec![ml2],
                    vec![vec![0.0]],
                    -mgl * q[0].cos(),
                    vec![mgl * q[0].sin()],
                    vec![p.damping],
                    vec![p.actuation],
                )
            }
            Plant::TwoLinkArm(p) => {
                let [m1, m2] = p.masses;
                let l1 = p.lengths[0];
                let [c1, c2] = p.com;
                let [i1, i2] = p.inertias;
                let (cos2, sin2) = (q[1].cos(), q[1].sin());
                let k = m2 * l1 * c2;
                let m11 = m1 * c1 * c1 + m2 * (l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * cos2) + i1 + i2;
                let m12 = m2 * (c2 * c2 + l1 * c2 * cos2) + i2;
                let m22 = m2 * c2 * c2 + i2;
                let dm2 = vec![-2.0 * k * sin2, -k * sin2, -k * sin2, 0.0];
                let g = p.gravity;
                let a = (m1 * c1 + m2 * l1) * g;
                let b = m2 * c2 * g;
                Mechanics::from_mass(
                    2,
                    2,
                    vec![m11, m12, m12, m22],
                    vec![vec![0.0; 4], dm2],
                    a * q[0].sin() + b * (q[0] + q[1]).sin(),
                    vec![a * q[0].cos() + b * (q[0] + q[1]).cos(), b * (q[0] + q[1]).cos()],
                    vec![p.damping[0], 0.0, 0.0, p.damping[1]],
                    p.input.iter().flatten().copied().collect(),
                )
            }
            Plant::PccSegment(p) => p.mechanics(q),
        }
    }

    pub fn mass_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.mechanics(q)?.mass_matrix())
    }

    pub fn mass_jacobian(&self, q: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        Ok(self.mechanics(q)?.mass_jacobian())
    }

    pub fn potential(&self, q: &[f64]) -> Result<f64> {
        Ok(self.mechanics(q)?.potential)
    }

    pub fn gravity(&self, q: &[f64]) -> Result<DVector<f64>> {
        Ok(self.mechanics(q)?.gravity())
    }

    pub fn damping_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.mechanics(q)?.damping_matrix())
    }

    pub fn input_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.mechanics(q)?.input_matrix())
    }

    /// Analytic Coriolis/centrifugal matrix `C(q, q̇)`.
    pub fn coriolis_matrix(&self, q: &[f64], qd: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(q, qd)?;
        self.check_domain(q)?;
        Ok(match self {
            Plant::DampedPendulum(_) => DMatrix::zeros(1, 1),
            Plant::TwoLinkArm(p) => {
                let h = -p.masses[1] * p.lengths[0] * p.com[1] * q[1].sin();
                DMatrix::from_row_slice(2, 2, &[h * qd[1], h * (qd[0] + qd[1]), -h * qd[0], 0.0])
            }
            Plant::PccSegment(p) => p.christoffel_matrix(q, qd)?,
        })
    }

    /// `½q̇ᵀMq̇ + V`.
    pub fn energy(&self, q: &[f64], qd: &[f64]) -> Result<f64> {
        self.check_state(q, qd)?;
        let mech = self.mechanics(q)?;
        let m = mech.mass_matrix();
        let v = DVector::from_column_slice(qd);
        Ok(0.5 * v.dot(&(m * &v)) + mech.potential)
    }

    /// Ranges `(|q| max, |q̇| max, |u| max)` used when sampling initial states
    /// and input amplitudes.
    pub fn excitation_ranges(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.dof();
        let m = self.input_dim();
        match self {
            Plant::DampedPendulum(_) => (vec![1.5], vec![1.5], vec![3.0]),
            Plant::TwoLinkArm(_) => (vec![1.0; 2], vec![1.0; 2], vec![5.0; 2]),
            Plant::PccSegment(p) => {
                let bend = 0.25 * p.diameter;
                let mut q = vec![bend; n];
                q[n - 1] = 0.05 * p.length;
                let mut qd = vec![bend; n];
                qd[n - 1] = 0.05 * p.length;
                (q, qd, vec![2.0; m])
            }
        }
    }

    /// Uniform sample inside [`Plant::excitation_ranges`], as `[q; q̇]`.
    pub fn sample_state<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let (q, qd, _) = self.excitation_ranges();
        q.iter()
            .chain(&qd)
            .map(|r| rng.random_range(-*r..=*r))
            .collect()
    }
}

impl MechanicalModel for Plant {
    fn dof(&self) -> usize {
        Plant::dof(self)
    }

    fn input_dim(&self) -> usize {
        Plant::input_dim(self)
    }

    fn mechanics(&self, q: &[f64]) -> Result<Mechanics<f64>> {
        self.check_domain(q)?;
        self.quantities(q)
    }
}

/// `q̈ = M⁻¹(A u − C q̇ − G − D q̇)` with the plant's analytic `C`.
pub fn plant_forward_dynamics(plant: &Plant, q: &[f64], qd: &[f64], u: &[f64]) -> Result<DVector<f64>> {
    plant.check_state(q, qd)?;
    check_len("control input", plant.input_dim(), u.len())?;
    let mech = plant.mechanics(q)?;
    let c = plant.coriolis_matrix(q, qd)?;
    let v = DVector::from_column_slice(qd);
    let rhs = mech.input_matrix() * DVector::from_column_slice(u) - c * &v - mech.gravity() - mech.damping_matrix() * &v;
    let chol = mech
        .mass_matrix()
        .cholesky()
        .ok_or(Error::SingularMass { condition: f64::INFINITY })?;
    let qdd = chol.solve(&rhs);
    if qdd.iter().all(|x| x.is_finite()) {
        Ok(qdd)
    } else {
        Err(Error::NumericalFailure { primitive: "plant_forward_dynamics" })
    }
}

/// Vector field over `[q; q̇]` driven by [`plant_forward_dynamics`].
pub fn plant_state_field(plant: &Plant) -> impl Fn(&[f64], &[f64]) -> Result<Vec<f64>> + '_ {
    move |x: &[f64], u: &[f64]| {
        let n = plant.dof();
        check_len("plant state", 2 * n, x.len())?;
        let qdd = plant_forward_dynamics(plant, &x[..n], &x[n..], u)?;
        let mut out = x[n..].to_vec();
        out.extend(qdd.iter());
        Ok(out)
    }
}
