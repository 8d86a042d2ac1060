use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::coriolis_force;
use crate::error::{check_len, Error, Result};
use crate::mechanics::MechanicalModel;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Diagonal `K_P`, `K_D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
}

impl GainSchedule {
    pub fn new(kp: Vec<f64>, kd: Vec<f64>) -> Result<Self> {
        let g = Self { kp, kd };
        g.validate()?;
        Ok(g)
    }

    /// The same gain on every coordinate.
    pub fn uniform(dof: usize, kp: f64, kd: f64) -> Result<Self> {
        Self::new(vec![kp; dof], vec![kd; dof])
    }

    /// Joint gains for a 7-DOF arm of the Panda type.
    pub fn panda() -> Self {
        Self {
            kp: vec![600.0, 600.0, 600.0, 600.0, 250.0, 150.0, 50.0],
            kd: vec![30.0, 30.0, 30.0, 30.0, 10.0, 10.0, 5.0],
        }
    }

    /// Zero feedback: the controllers reduce to their feedforward terms.
    pub fn feedforward_only(dof: usize) -> Self {
        Self {
            kp: vec![0.0; dof],
            kd: vec![0.0; dof],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kp.len() != self.kd.len() {
            return Err(Error::config("gains.kd", format!("expected {} entries, got {}", self.kp.len(), self.kd.len())));
        }
        for (name, gains) in [("gains.kp", &self.kp), ("gains.kd", &self.kd)] {
            if let Some(i) = gains.iter().position(|g| !(*g > 0.0 && g.is_finite())) {
                return Err(Error::config(format!("{name}[{i}]"), "gains must be positive"));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.kp.len()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kp: self.kp.iter().map(|k| k * factor).collect(),
            kd: self.kd.iter().map(|k| k * factor).collect(),
        }
    }

    /// Broadcasts single-entry gains to `dof` coordinates.
    pub fn broadcast(&self, dof: usize) -> Result<Self> {
        let spread = |v: &[f64], name: &str| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; dof]),
                n if n == dof => Ok(v.to_vec()),
                n => Err(Error::config(name, format!("expected 1 or {dof} entries, got {n}"))),
            }
        };
        Ok(Self {
            kp: spread(&self.kp, "gains.kp")?,
            kd: spread(&self.kd, "gains.kd")?,
        })
    }
}

/// `"KP,KD"` for scalar gains or `"kp0,kp1,..;kd0,kd1,.."` per coordinate.
impl FromStr for GainSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let list = |part: &str, name: &str| -> Result<Vec<f64>> {
            part.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::config(name, format!("`{}`: {e}", x.trim())))
                })
                .collect()
        };
        let g = match s.split_once(';') {
            Some((kp, kd)) => Self {
                kp: list(kp, "gains.kp")?,
                kd: list(kd, "gains.kd")?,
            },
            None => {
                let v = list(s, "gains")?;
                if v.len() != 2 {
                    return Err(Error::config("gains", "expected `KP,KD` or `kp..;kd..`"));
                }
                Self {
                    kp: vec![v[0]],
                    kd: vec![v[1]],
                }
            }
        };
        g.validate()?;
        Ok(g)
    }
}

/// Desired configuration and its first two derivatives at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct RefPoint {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
}

/// Bounded reference trajectories with closed-form derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSignal {
    Constant { q: Vec<f64> },
    /// `center + amplitude·sin(2π·frequency·t + phase)` per coordinate.
    Sinusoid {
        center: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        phase: Vec<f64>,
    },
}

impl ReferenceSignal {
    pub fn dof(&self) -> usize {
        match self {
            ReferenceSignal::Constant { q } => q.len(),
            ReferenceSignal::Sinusoid { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ReferenceSignal::Constant { q } => {
                if !q.iter().all(|v| v.is_finite()) {
                    return Err(Error::config("reference.q", "must be finite"));
                }
            }
            ReferenceSignal::Sinusoid {
                center,
                amplitude,
                frequency,
                phase,
            } => {
                let n = center.len();
                for (name, v) in [
                    ("reference.amplitude", amplitude),
                    ("reference.frequency", frequency),
                    ("reference.phase", phase),
                ] {
                    if v.len() != n {
                        return Err(Error::config(name, format!("expected {n} entries, got {}", v.len())));
                    }
                }
                if !center.iter().chain(amplitude).chain(frequency).chain(phase).all(|v| v.is_finite()) {
                    return Err(Error::config("reference", "must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> RefPoint {
        match self {
            ReferenceSignal::Constant { q } => RefPoint {
                q: q.clone(),
                qd: vec![0.0; q.len()],
                qdd: vec![0.0; q.len()],
            },
            ReferenceSignal::Sinusoid {
                center,
                amplitude,
                frequency,
                phase,
            } => {
                let n = center.len();
                let mut r = RefPoint {
                    q: vec![0.0; n],
                    qd: vec![0.0; n],
                    qdd: vec![0.0; n],
                };
                for i in 0..n {
                    let w = 2.0 * std::f64::consts::PI * frequency[i];
                    let (s, c) = (w * t + phase[i]).sin_cos();
                    r.q[i] = center[i] + amplitude[i] * s;
                    r.qd[i] = amplitude[i] * w * c;
                    r.qdd[i] = -amplitude[i] * w * w * s;
                }
                r
            }
        }
    }
}

/// `A⁺` through the SVD; fails when the smallest singular value is below
/// [`RANK_TOLERANCE`] times the largest.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (smallest, largest) = singular_range(a);
    if !(smallest > RANK_TOLERANCE * largest) {
        return Err(Error::RankDeficient { smallest, largest });
    }
    a.clone()
        .svd(true, true)
        .pseudo_inverse(0.0)
        .map_err(|e| Error::Invalid(e.to_string()))
}

fn singular_range(a: &DMatrix<f64>) -> (f64, f64) {
    let sv = a.singular_values();
    let largest = sv.iter().copied().fold(0.0, f64::max);
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    (smallest, largest)
}

fn feedback(a: &DMatrix<f64>, gains: &GainSchedule, e: &[f64], ed: &[f64]) -> DVector<f64> {
    let w = DVector::from_iterator(e.len(), (0..e.len()).map(|i| gains.kp[i] * e[i] + gains.kd[i] * ed[i]));
    a.transpose() * w
}

fn check_dims<M: MechanicalModel + ?Sized>(model: &M, q: &[f64], qd: &[f64], q_ref: &[f64], gains: &GainSchedule) -> Result<()> {
    model.check_state(q, qd)?;
    check_len("reference", model.dof(), q_ref.len())?;
    check_len("gains.kp", model.dof(), gains.kp.len())?;
    check_len("gains.kd", model.dof(), gains.kd.len())
}

/// `u = A_L⁺(q)·G_L(q) + A_Lᵀ(q)·(K_P(q_ref − q) − K_D q̇)`.
pub fn regulation_control<M: MechanicalModel + ?Sized>(
    model: &M,
    q: &[f64],
    qd: &[f64],
    q_ref: &[f64],
    gains: &GainSchedule,
) -> Result<Vec<f64>> {
    check_dims(model, q, qd, q_ref, gains)?;
    let mech = model.mechanics(q)?;
    let a = mech.input_matrix();
    let e: Vec<f64> = q_ref.iter().zip(q).map(|(r, x)| r - x).collect();
    let ed: Vec<f64> = qd.iter().map(|v| -v).collect();
    let u = pseudo_inverse(&a)? * mech.gravity() + feedback(&a, gains, &e, &ed);
    Ok(u.as_slice().to_vec())
}

/// `u = A_L⁻¹(q)·(M_L q̈_ref + C_L q̇_ref + D_L q̇_ref + G_L)|_{q_ref} + A_Lᵀ(q)·(K_P e + K_D ė)`.
pub fn tracking_control<M: MechanicalModel + ?Sized>(
    model: &M,
    q: &[f64],
    qd: &[f64],
    r: &RefPoint,
    gains: &GainSchedule,
) -> Result<Vec<f64>> {
    check_dims(model, q, qd, &r.q, gains)?;
    check_len("reference velocity", model.dof(), r.qd.len())?;
    check_len("reference acceleration", model.dof(), r.qdd.len())?;
    if model.input_dim() != model.dof() {
        return Err(Error::Invalid("tracking needs a square input matrix".into()));
    }
    let at_ref = model.mechanics(&r.q)?;
    let qd_ref = DVector::from_column_slice(&r.qd);
    let ff = at_ref.mass_matrix() * DVector::from_column_slice(&r.qdd)
        + coriolis_force(model, &r.q, &r.qd)?
        + at_ref.damping_matrix() * &qd_ref
        + at_ref.gravity();
    let a = model.mechanics(q)?.input_matrix();
    let (smallest, largest) = singular_range(&a);
    if !(smallest > RANK_TOLERANCE * largest) {
        return Err(Error::SingularInput);
    }
    let ff = a.clone().lu().solve(&ff).ok_or(Error::SingularInput)?;
    let e: Vec<f64> = r.q.iter().zip(q).map(|(a, b)| a - b).collect();
    let ed: Vec<f64> = r.qd.iter().zip(qd).map(|(a, b)| a - b).collect();
    Ok((ff + feedback(&a, gains, &e, &ed)).as_slice().to_vec())
}

/// A feedback law sampled by the closed-loop harness.
pub trait Controller {
    fn dof(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn reference(&self, t: f64) -> Vec<f64>;
    fn control(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>>;
}

pub struct Regulator<M> {
    pub model: M,
    pub q_ref: Vec<f64>,
    pub gains: GainSchedule,
}

impl<M: MechanicalModel> Controller for Regulator<M> {
    fn dof(&self) -> usize {
        self.model.dof()
    }

    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn reference(&self, _t: f64) -> Vec<f64> {
        self.q_ref.clone()
    }

    fn control(&self, _t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
        regulation_control(&self.model, q, qd, &self.q_ref, &self.gains)
    }
}

pub struct Tracker<M> {
    pub model: M,
    pub reference: ReferenceSignal,
    pub gains: GainSchedule,
}

impl<M: MechanicalModel> Controller for Tracker<M> {
    fn dof(&self) -> usize {
        self.model.dof()
    }

    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn reference(&self, t: f64) -> Vec<f64> {
        self.reference.at(t).q
    }

    fn control(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
        tracking_control(&self.model, q, qd, &self.reference.at(t), &self.gains)
    }
}
