use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::laws::Controller;
use crate::error::{check_len, Error, Result};
use crate::integrators::rk4_step_at;
use crate::learning::dataset::{csv_err, format_float};
use crate::plants::{plant_state_field, Plant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub duration: f64,
    /// Plant integration step.
    pub dt: f64,
    /// Controller period; a multiple of `dt`. `None` samples every step.
    #[serde(default)]
    pub control_dt: Option<f64>,
    /// Per-input magnitude limit (one entry broadcasts).
    #[serde(default)]
    pub saturation: Option<Vec<f64>>,
}

impl ClosedLoopConfig {
    pub fn new(duration: f64, dt: f64) -> Self {
        Self {
            duration,
            dt,
            control_dt: None,
            saturation: None,
        }
    }

    fn steps(&self) -> Result<(usize, usize)> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration", "must be positive"));
        }
        let steps = (self.duration / self.dt).round() as usize;
        let stride = match self.control_dt {
            None => 1,
            Some(c) => {
                let ratio = c / self.dt;
                let r = ratio.round();
                if !(r >= 1.0 && (ratio - r).abs() < 1e-9 * r) {
                    return Err(Error::config("control_dt", "must be a positive multiple of dt"));
                }
                r as usize
            }
        };
        if let Some(s) = &self.saturation {
            if let Some(i) = s.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::config(format!("saturation[{i}]"), "limits must be positive"));
            }
        }
        Ok((steps.max(1), stride))
    }
}

/// One row per simulated instant. `u[k]` is the input held over
/// `[t_k, t_{k+1})`; the last row repeats the final held input.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopRun {
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub q_ref: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub clipped: Vec<bool>,
}

impl ClosedLoopRun {
    pub fn clip_events(&self) -> usize {
        self.clipped.iter().filter(|c| **c).count()
    }

    /// `‖q − q_ref‖∞` at every row.
    pub fn error_inf(&self) -> Vec<f64> {
        self.q
            .iter()
            .zip(&self.q_ref)
            .map(|(q, r)| q.iter().zip(r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect()
    }

    /// Columns `t,q*,q_ref*,u*,clipped`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n = self.q.first().map_or(0, Vec::len);
        let m = self.u.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("q{i}")));
        header.extend((0..n).map(|i| format!("q_ref{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.push("clipped".into());
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..self.t.len() {
            let mut row = vec![format_float(self.t[k])];
            row.extend(self.q[k].iter().chain(&self.q_ref[k]).chain(&self.u[k]).map(|v| format_float(*v)));
            row.push(u8::from(self.clipped[k]).to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn saturate(u: &mut [f64], limits: &[f64]) -> bool {
    let mut clipped = false;
    for (i, v) in u.iter_mut().enumerate() {
        let lim = if limits.len() == 1 { limits[0] } else { limits[i] };
        if v.abs() > lim {
            *v = v.clamp(-lim, lim);
            clipped = true;
        }
    }
    clipped
}

/// RK4 simulation of `plant` under `controller`, inputs held between
/// controller samples.
pub fn closed_loop<C: Controller + ?Sized>(
    plant: &Plant,
    controller: &C,
    x0: &[f64],
    cfg: &ClosedLoopConfig,
) -> Result<ClosedLoopRun> {
    let (n, m) = (plant.dof(), plant.input_dim());
    check_len("controller coordinates", n, controller.dof())?;
    check_len("controller inputs", m, controller.input_dim())?;
    check_len("initial state", 2 * n, x0.len())?;
    if let Some(s) = &cfg.saturation {
        if s.len() != 1 && s.len() != m {
            return Err(Error::config("saturation", format!("expected 1 or {m} entries, got {}", s.len())));
        }
    }
    let (steps, stride) = cfg.steps()?;
    let field = plant_state_field(plant);
    let mut run = ClosedLoopRun {
        t: Vec::with_capacity(steps + 1),
        q: Vec::with_capacity(steps + 1),
        qd: Vec::with_capacity(steps + 1),
        q_ref: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        clipped: Vec::with_capacity(steps + 1),
    };
    let mut x = x0.to_vec();
    let mut held = vec![0.0; m];
    let mut clipped = false;
    for k in 0..=steps {
        let t = k as f64 * cfg.dt;
        if k % stride == 0 && k < steps {
            held = controller.control(t, &x[..n], &x[n..])?;
            check_len("control output", m, held.len())?;
            clipped = cfg.saturation.as_deref().is_some_and(|s| saturate(&mut held, s));
        }
        run.t.push(t);
        run.q.push(x[..n].to_vec());
        run.qd.push(x[n..].to_vec());
        run.q_ref.push(controller.reference(t));
        run.u.push(held.clone());
        run.clipped.push(clipped);
        if k < steps {
            x = rk4_step_at(&field, &x, &held, cfg.dt, k)?;
        }
    }
    Ok(run)
}
