use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::state_field;
use crate::error::{check_len, Error, Result};
use crate::integrators::rk4_step;
use crate::learning::{SavedModel, Trajectory, TransitionDataset};
use crate::mechanics::MechanicalModel;
use crate::physnets::{ModelKind, StructuredModel};

use super::blackbox::BlackBoxModel;

/// Anything that maps a state, a held input and a step to the next state.
pub trait Predictor {
    fn kind(&self) -> ModelKind;
    fn dof(&self) -> usize;
    fn predict(&self, state: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>>;
}

/// One RK4 step of a mechanical model's forward dynamics.
pub struct Physical<M> {
    pub model: M,
    pub kind: ModelKind,
}

impl<M: MechanicalModel> Predictor for Physical<M> {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn dof(&self) -> usize {
        self.model.dof()
    }

    fn predict(&self, state: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        rk4_step(&state_field(&self.model, self.kind), state, u, dt)
    }
}

impl Predictor for StructuredModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn dof(&self) -> usize {
        self.dof
    }

    fn predict(&self, state: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        rk4_step(&state_field(self, self.kind), state, u, dt)
    }
}

impl Predictor for BlackBoxModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn dof(&self) -> usize {
        self.dof
    }

    fn predict(&self, state: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        BlackBoxModel::predict(self, state, u, dt)
    }
}

impl Predictor for SavedModel {
    fn kind(&self) -> ModelKind {
        SavedModel::kind(self)
    }

    fn dof(&self) -> usize {
        SavedModel::dof(self)
    }

    fn predict(&self, state: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        match self {
            SavedModel::Structured(m) => Predictor::predict(m, state, u, dt),
            SavedModel::BlackBox(m) => m.predict(state, u, dt),
        }
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("statistics of an empty set".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        Ok(Self { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    /// `None` for a free rollout.
    pub window: Option<usize>,
    pub steps: usize,
    pub seconds: f64,
    /// Euclidean configuration error over all predicted times.
    pub error: MeanStd,
    /// `100 · mean_i(RMSE_i / range_i)` with ranges taken from the truth.
    pub error_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub rmse: Vec<f64>,
    /// Over the coordinates whose reference actually moves.
    pub rmse_percent: Option<f64>,
    pub final_error_inf: f64,
}

/// Every field is always present; parts a command does not compute are null.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub one_step: Option<MeanStd>,
    pub rollout: Option<RolloutMetrics>,
    pub windowed: Vec<RolloutMetrics>,
    pub training: Option<MeanStd>,
    pub tracking: Option<TrackingMetrics>,
}

/// Metrics file contents. Wall-clock timings are kept in a separate file so
/// this one is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub command: String,
    pub model: String,
    pub plant: Option<String>,
    pub seed: u64,
    pub config_sha256: String,
    pub metrics: Metrics,
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn rollout_trajectory<P: Predictor + ?Sized>(
    model: &P,
    traj: &Trajectory,
    steps: usize,
    window: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let mut pred = vec![traj.states[0].clone()];
    for k in 0..steps {
        let start = match window {
            Some(w) if k % w == 0 => &traj.states[k],
            _ => &pred[k],
        };
        pred.push(model.predict(start, &traj.inputs[k], traj.dt)?);
    }
    Ok(pred)
}

fn rollout_metrics<P: Predictor + ?Sized>(
    model: &P,
    trajs: &[Trajectory],
    steps: usize,
    window: Option<usize>,
) -> Result<RolloutMetrics> {
    let n = model.dof();
    let mut errors = Vec::new();
    let mut sq = vec![0.0; n];
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for traj in trajs {
        let pred = rollout_trajectory(model, traj, steps, window)?;
        for k in 1..=steps {
            let mut e2 = 0.0;
            for i in 0..n {
                let d = pred[k][i] - traj.states[k][i];
                e2 += d * d;
                sq[i] += d * d;
            }
            errors.push(e2.sqrt());
        }
        for s in &traj.states[..=steps] {
            for i in 0..n {
                lo[i] = lo[i].min(s[i]);
                hi[i] = hi[i].max(s[i]);
            }
        }
    }
    let count = errors.len() as f64;
    let ratios: Vec<f64> = (0..n)
        .filter(|&i| hi[i] > lo[i])
        .map(|i| (sq[i] / count).sqrt() / (hi[i] - lo[i]))
        .collect();
    let error_percent = if ratios.is_empty() {
        0.0
    } else {
        100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64
    };
    Ok(RolloutMetrics {
        window,
        steps,
        seconds: steps as f64 * trajs[0].dt,
        error: MeanStd::of(&errors)?,
        error_percent,
    })
}

/// One-step error, free rollout over `horizon` steps and windowed rollouts.
///
/// Every test trajectory must have at least `horizon` transitions.
pub fn evaluate_model<P: Predictor + ?Sized>(
    model: &P,
    test: &TransitionDataset,
    horizon: usize,
    windows: &[usize],
) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    if model.kind() != test.kind {
        return Err(Error::Invalid(format!(
            "model predicts {:?} states but the test set holds {:?} samples",
            model.kind(),
            test.kind
        )));
    }
    check_len("test set coordinates", model.dof(), test.dof)?;
    if horizon == 0 {
        return Err(Error::config("horizon", "must be >= 1"));
    }
    if let Some(w) = windows.iter().find(|&&w| w == 0) {
        return Err(Error::config("window", format!("must be >= 1, got {w}")));
    }
    let n = test.dof;
    let mut one_step = Vec::with_capacity(test.len());
    for s in &test.samples {
        let pred = model.predict(&s.state(), &s.u, s.dt)?;
        let label = s.next_state();
        let from = match test.kind {
            ModelKind::Lnn => n,
            ModelKind::Hnn => 0,
        };
        one_step.push(pred[from..].iter().zip(&label[from..]).map(|(a, b)| (a - b).powi(2)).sum());
    }
    let trajs = test.trajectories();
    if let Some(t) = trajs.iter().find(|t| t.steps() < horizon) {
        return Err(Error::Invalid(format!(
            "horizon of {horizon} steps exceeds trajectory {} with {} steps",
            t.id,
            t.steps()
        )));
    }
    let rollout = rollout_metrics(model, &trajs, horizon, None)?;
    let windowed = windows
        .iter()
        .map(|&w| rollout_metrics(model, &trajs, horizon, Some(w)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics {
        one_step: Some(MeanStd::of(&one_step)?),
        rollout: Some(rollout),
        windowed,
        training: None,
        tracking: None,
    })
}

/// Per-coordinate RMSE between a closed-loop run and its reference.
pub fn tracking_metrics(q: &[Vec<f64>], q_ref: &[Vec<f64>]) -> Result<TrackingMetrics> {
    check_len("tracking samples", q_ref.len(), q.len())?;
    let last = q.last().ok_or_else(|| Error::Invalid("empty tracking run".into()))?;
    let n = last.len();
    let mut sq = vec![0.0; n];
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for (x, r) in q.iter().zip(q_ref) {
        check_len("tracking state", n, x.len())?;
        check_len("reference state", n, r.len())?;
        for i in 0..n {
            sq[i] += (x[i] - r[i]).powi(2);
            lo[i] = lo[i].min(r[i]);
            hi[i] = hi[i].max(r[i]);
        }
    }
    let rmse: Vec<f64> = sq.iter().map(|s| (s / q.len() as f64).sqrt()).collect();
    let moving: Vec<usize> = (0..n).filter(|&i| hi[i] > lo[i]).collect();
    let rmse_percent = (!moving.is_empty())
        .then(|| 100.0 * moving.iter().map(|&i| rmse[i] / (hi[i] - lo[i])).sum::<f64>() / moving.len() as f64);
    let final_ref = q_ref.last().expect("same length as q");
    let final_error_inf = last.iter().zip(final_ref).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(TrackingMetrics {
        rmse,
        rmse_percent,
        final_error_inf,
    })
}
