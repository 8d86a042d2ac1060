//! Classical fixed-step RK4 with zero-order-hold inputs, free rollouts and
//! windowed rollouts that periodically reset to measured states.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numcore::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub dt: f64,
    pub horizon: usize,
    /// Reset period in steps; `None` is a free rollout.
    pub window: Option<usize>,
}

impl RolloutConfig {
    pub fn new(dt: f64, horizon: usize) -> Result<Self> {
        let cfg = Self { dt, horizon, window: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_window(mut self, window: usize) -> Result<Self> {
        self.window = Some(window);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(Error::Invalid("rollout horizon must be at least one step".into()));
        }
        if self.window == Some(0) {
            return Err(Error::Invalid("window must be at least one step".into()));
        }
        Ok(())
    }
}

/// Inputs held constant over each step.
#[derive(Clone, Debug, PartialEq)]
pub enum InputSchedule {
    Hold(Vec<f64>),
    /// One input per step; must cover the whole horizon.
    PerStep(Vec<Vec<f64>>),
}

impl InputSchedule {
    pub fn at(&self, step: usize) -> Result<&[f64]> {
        match self {
            InputSchedule::Hold(u) => Ok(u),
            InputSchedule::PerStep(us) => us
                .get(step)
                .map(|u| u.as_slice())
                .ok_or_else(|| Error::dim("input schedule", step + 1, us.len())),
        }
    }

    fn check_covers(&self, horizon: usize) -> Result<()> {
        match self {
            InputSchedule::Hold(_) => Ok(()),
            InputSchedule::PerStep(us) if us.len() >= horizon => Ok(()),
            InputSchedule::PerStep(us) => Err(Error::dim("input schedule", horizon, us.len())),
        }
    }
}

fn stage<T: Real, F>(f: &F, x: &[T], u: &[T], step: usize, index: usize) -> Result<Vec<T>>
where
    F: Fn(&[T], &[T]) -> Result<Vec<T>>,
{
    let k = f(x, u).map_err(|_| Error::Integration { step, stage: index })?;
    if k.len() != x.len() || !k.iter().all(|v| v.is_finite()) {
        return Err(Error::Integration { step, stage: index });
    }
    Ok(k)
}

fn axpy<T: Real>(x: &[T], k: &[T], h: f64) -> Vec<T> {
    x.iter().zip(k).map(|(a, b)| *a + b.scale(h)).collect()
}

/// `x + Δt/6·(k₁ + 2k₂ + 2k₃ + k₄)`; `step` only labels errors.
pub fn rk4_step_at<T: Real, F>(f: &F, x: &[T], u: &[T], dt: f64, step: usize) -> Result<Vec<T>>
where
    F: Fn(&[T], &[T]) -> Result<Vec<T>>,
{
    let k1 = stage(f, x, u, step, 1)?;
    let k2 = stage(f, &axpy(x, &k1, 0.5 * dt), u, step, 2)?;
    let k3 = stage(f, &axpy(x, &k2, 0.5 * dt), u, step, 3)?;
    let k4 = stage(f, &axpy(x, &k3, dt), u, step, 4)?;
    let out: Vec<T> = (0..x.len())
        .map(|i| x[i] + (k1[i] + (k2[i] + k3[i]).scale(2.0) + k4[i]).scale(dt / 6.0))
        .collect();
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Integration { step, stage: 4 });
    }
    Ok(out)
}

pub fn rk4_step<T: Real, F>(f: &F, x: &[T], u: &[T], dt: f64) -> Result<Vec<T>>
where
    F: Fn(&[T], &[T]) -> Result<Vec<T>>,
{
    rk4_step_at(f, x, u, dt, 0)
}

/// `H + 1` states starting with `x0`.
pub fn rollout<F>(f: &F, x0: &[f64], inputs: &InputSchedule, cfg: &RolloutConfig) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    inputs.check_covers(cfg.horizon)?;
    let mut traj = Vec::with_capacity(cfg.horizon + 1);
    traj.push(x0.to_vec());
    for k in 0..cfg.horizon {
        let next = rk4_step_at(f, &traj[k], inputs.at(k)?, cfg.dt, k)?;
        traj.push(next);
    }
    Ok(traj)
}

/// Prediction that restarts from `truth[k]` whenever `k` is a multiple of the
/// window. Without a window this is a free rollout from `truth[0]`.
pub fn rollout_windowed<F>(
    f: &F,
    truth: &[Vec<f64>],
    inputs: &InputSchedule,
    cfg: &RolloutConfig,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    inputs.check_covers(cfg.horizon)?;
    if truth.len() < cfg.horizon + 1 {
        return Err(Error::dim("truth trajectory", cfg.horizon + 1, truth.len()));
    }
    let dim = truth[0].len();
    for t in truth.iter().take(cfg.horizon + 1) {
        check_len("truth state", dim, t.len())?;
    }
    let window = cfg.window.unwrap_or(cfg.horizon);
    let mut pred = Vec::with_capacity(cfg.horizon + 1);
    pred.push(truth[0].clone());
    for k in 0..cfg.horizon {
        let start = if k % window == 0 { &truth[k] } else { &pred[k] };
        let next = rk4_step_at(f, start, inputs.at(k)?, cfg.dt, k)?;
        pred.push(next);
    }
    Ok(pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(x: &[f64], _u: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![x[1], -x[0]])
    }

    fn pendulum(x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![x[1], -9.81 * x[0].sin() - 0.1 * x[1] + 2.0 * u[0]])
    }

    #[test]
    fn constant_field_is_exact() {
        let f = |_x: &[f64], _u: &[f64]| Ok(vec![1.5, -2.0]);
        let x = rk4_step(&f, &[0.25, 1.0], &[], 0.1).unwrap();
        assert_eq!(x, vec![0.25 + 0.15, 1.0 - 0.2]);
    }

    #[test]
    fn linear_field_matches_taylor_polynomial() {
        let lambda = -1.7;
        let dt = 0.3;
        let f = |x: &[f64], _u: &[f64]| Ok(vec![lambda * x[0]]);
        let x = rk4_step(&f, &[2.0], &[], dt).unwrap();
        let z: f64 = lambda * dt;
        let expected = 2.0 * (1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0);
        assert!((x[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn harmonic_oscillator_accuracy() {
        let cfg = RolloutConfig::new(0.01, 100).unwrap();
        let traj = rollout(&oscillator, &[1.0, 0.0], &InputSchedule::Hold(vec![]), &cfg).unwrap();
        let sup = traj
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let t = k as f64 * 0.01;
                (x[0] - t.cos()).abs().max((x[1] + t.sin()).abs())
            })
            .fold(0.0, f64::max);
        assert!(sup < 1e-8, "{sup}");
    }

    #[test]
    fn convergence_order_on_nonlinear_pendulum() {
        let run = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let cfg = RolloutConfig::new(dt, steps).unwrap();
            rollout(&pendulum, &[1.0, 0.0], &InputSchedule::Hold(vec![0.3]), &cfg).unwrap()[steps].clone()
        };
        let a = run(4e-3);
        let b = run(2e-3);
        let c = run(1e-3);
        let e1 = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let e2 = ((b[0] - c[0]).powi(2) + (b[1] - c[1]).powi(2)).sqrt();
        let order = (e1 / e2).log2();
        assert!((3.7..=4.1).contains(&order), "{order}");
    }

    #[test]
    fn horizon_one_is_a_single_step() {
        let cfg = RolloutConfig::new(0.05, 1).unwrap();
        let traj = rollout(&pendulum, &[0.3, -0.2], &InputSchedule::Hold(vec![1.0]), &cfg).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj[1], rk4_step(&pendulum, &[0.3, -0.2], &[1.0], 0.05).unwrap());
    }

    #[test]
    fn zero_field_gives_constant_trajectory() {
        let f = |x: &[f64], _u: &[f64]| Ok(vec![0.0; x.len()]);
        let cfg = RolloutConfig::new(0.1, 20).unwrap();
        let traj = rollout(&f, &[1.0, 2.0, 3.0], &InputSchedule::Hold(vec![]), &cfg).unwrap();
        assert!(traj.iter().all(|x| x == &vec![1.0, 2.0, 3.0]));
    }

    #[test]
    fn non_finite_stage_reports_step_and_stage() {
        let f = |x: &[f64], _u: &[f64]| Ok(vec![if x[0] > 1.01 { f64::NAN } else { 1.0 }]);
        let cfg = RolloutConfig::new(0.1, 5).unwrap();
        let err = rollout(&f, &[1.0], &InputSchedule::Hold(vec![]), &cfg).unwrap_err();
        assert!(matches!(err, Error::Integration { step: 0, stage: 2 }), "{err:?}");
    }

    #[test]
    fn windowed_extremes() {
        let dt = 0.01;
        let h = 50;
        let cfg = RolloutConfig::new(dt, h).unwrap();
        let inputs = InputSchedule::PerStep((0..h).map(|k| vec![(k as f64 * 0.1).sin()]).collect());
        let truth = rollout(&pendulum, &[0.5, 0.0], &inputs, &cfg).unwrap();
        // a deliberately wrong model: gravity off by 10%
        let model = |x: &[f64], u: &[f64]| Ok(vec![x[1], -10.8 * x[0].sin() - 0.1 * x[1] + 2.0 * u[0]]);

        let one = rollout_windowed(&model, &truth, &inputs, &cfg.clone().with_window(1).unwrap()).unwrap();
        for k in 0..h {
            let step = rk4_step(&model, &truth[k], inputs.at(k).unwrap(), dt).unwrap();
            assert_eq!(one[k + 1], step);
        }

        let full = rollout_windowed(&model, &truth, &inputs, &cfg.clone().with_window(h).unwrap()).unwrap();
        assert_eq!(full, rollout(&model, &truth[0], &inputs, &cfg).unwrap());

        let perfect = rollout_windowed(&pendulum, &truth, &inputs, &cfg.clone().with_window(5).unwrap()).unwrap();
        for (p, t) in perfect.iter().zip(&truth) {
            assert!((p[0] - t[0]).abs() < 1e-12 && (p[1] - t[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn windowed_rejects_short_truth() {
        let cfg = RolloutConfig::new(0.01, 10).unwrap();
        let truth = vec![vec![0.0, 0.0]; 5];
        assert!(rollout_windowed(&pendulum, &truth, &InputSchedule::Hold(vec![0.0]), &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RolloutConfig::new(0.0, 1).is_err());
        assert!(RolloutConfig::new(0.01, 0).is_err());
        assert!(RolloutConfig::new(0.01, 3).unwrap().with_window(0).is_err());
    }

    #[test]
    fn rollout_is_bitwise_reproducible() {
        let cfg = RolloutConfig::new(0.003, 300).unwrap();
        let a = rollout(&pendulum, &[2.0, 1.0], &InputSchedule::Hold(vec![-0.5]), &cfg).unwrap();
        let b = rollout(&pendulum, &[2.0, 1.0], &InputSchedule::Hold(vec![-0.5]), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
