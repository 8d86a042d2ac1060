//! Simulated datasets: every initial state is combined with every input
//! signal, integrated with fine fixed-step RK4, decimated to each requested
//! sample rate and optionally corrupted with noise and smoothed.
//!
//! Inputs are held piecewise constant at the coarsest sample period so that
//! every stored `u_k` is exactly the input acting over its interval.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::signals::InputSignal;
use super::{plant_state_field, Plant};
use crate::dynamics::state_field;
use crate::error::{check_len, Error, Result};
use crate::integrators::rk4_step_at;
use crate::learning::dataset::{csv_err, format_float};
use crate::learning::{TransitionDataset, TransitionSample};
use crate::mechanics::MechanicalModel;
use crate::physnets::ModelKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub plant: Plant,
    /// `[q; q̇]` per initial state.
    pub initial_states: Vec<Vec<f64>>,
    pub signals: Vec<InputSignal>,
    /// Seconds per trajectory.
    pub duration: f64,
    pub fine_dt: f64,
    pub resample_hz: Vec<f64>,
    /// Lagrangian datasets store `q̇`, Hamiltonian ones `p = M(q)q̇`.
    #[serde(default)]
    pub labels: ModelKind,
    /// Measurement noise standard deviation: empty (none), one value for
    /// every channel, or one per state channel (`2N`).
    #[serde(default)]
    pub noise_sigma: Vec<f64>,
    /// Centered moving-average window (samples), applied after noise.
    #[serde(default)]
    pub smoothing_window: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl GenSpec {
    /// `states × signals` combinations drawn from the plant's excitation
    /// ranges, sinusoids between 0.2 and 2 Hz.
    pub fn random(plant: Plant, states: usize, signals: usize, duration: f64, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial_states = (0..states).map(|_| plant.sample_state(&mut rng)).collect();
        let (_, _, u_max) = plant.excitation_ranges();
        let signals = (0..signals)
            .map(|_| {
                let amplitude = u_max.iter().map(|a| rng.random_range(-*a..=*a)).collect();
                let f = rng.random_range(0.2..2.0);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                InputSignal::sinusoid(amplitude, f, phase, duration)
            })
            .collect();
        Self {
            plant,
            initial_states,
            signals,
            duration,
            fine_dt: 1e-3,
            resample_hz: vec![100.0],
            labels: ModelKind::Lnn,
            noise_sigma: Vec::new(),
            smoothing_window: None,
            seed,
        }
    }

    fn strides(&self) -> Result<(usize, Vec<usize>)> {
        if !(self.fine_dt > 0.0 && self.fine_dt.is_finite()) {
            return Err(Error::config("fine_dt", "must be positive"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration", "must be positive"));
        }
        if self.resample_hz.is_empty() {
            return Err(Error::config("resample_hz", "at least one sample rate is required"));
        }
        let fine_rate = 1.0 / self.fine_dt;
        let mut strides = Vec::new();
        for (i, &hz) in self.resample_hz.iter().enumerate() {
            let ratio = fine_rate / hz;
            let stride = ratio.round();
            if !(hz > 0.0) || stride < 1.0 || (ratio - stride).abs() > 1e-9 * ratio {
                return Err(Error::config(
                    format!("resample_hz[{i}]"),
                    format!("{hz} Hz does not divide the fine rate {fine_rate} Hz"),
                ));
            }
            strides.push(stride as usize);
        }
        let hold = *strides.iter().max().expect("non-empty");
        Ok((hold, strides))
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.plant.dof(), self.plant.input_dim());
        for (i, x) in self.initial_states.iter().enumerate() {
            if x.len() != 2 * n {
                return Err(Error::config(format!("initial_states[{i}]"), format!("expected {} values, got {}", 2 * n, x.len())));
            }
        }
        for (i, s) in self.signals.iter().enumerate() {
            s.validate().map_err(|e| Error::config(format!("signals[{i}]"), e.to_string()))?;
            if s.channels() != m {
                return Err(Error::config(format!("signals[{i}].amplitude"), format!("expected {m} channels, got {}", s.channels())));
            }
        }
        if !(self.noise_sigma.is_empty() || self.noise_sigma.len() == 1 || self.noise_sigma.len() == 2 * n) {
            return Err(Error::config("noise_sigma", format!("expected 0, 1 or {} values", 2 * n)));
        }
        if self.noise_sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config("noise_sigma", "must be finite and >= 0"));
        }
        if self.smoothing_window == Some(0) {
            return Err(Error::config("smoothing_window", "must be >= 1"));
        }
        self.strides().map(|_| ())
    }
}

/// Clean trajectory at the highest requested sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrajectory {
    pub id: u64,
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryFailure {
    pub id: u64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct Generated {
    /// One dataset per entry of `resample_hz`, in the same order.
    pub datasets: Vec<TransitionDataset>,
    pub trajectories: Vec<RawTrajectory>,
    pub failures: Vec<TrajectoryFailure>,
}

pub fn generate_dataset(spec: &GenSpec) -> Result<Generated> {
    spec.validate()?;
    let plant = &spec.plant;
    let (n, m) = (plant.dof(), plant.input_dim());
    let (hold, strides) = spec.strides()?;
    let fine_steps = (spec.duration / spec.fine_dt).round() as usize;
    // integrate in the label coordinates so labels match one RK4 step exactly
    let lagrangian = plant_state_field(plant);
    let hamiltonian = state_field(plant, ModelKind::Hnn);
    let field = |x: &[f64], u: &[f64]| match spec.labels {
        ModelKind::Lnn => lagrangian(x, u),
        ModelKind::Hnn => hamiltonian(x, u),
    };
    let mut datasets: Vec<TransitionDataset> = spec
        .resample_hz
        .iter()
        .map(|_| {
            let mut ds = TransitionDataset::new(spec.labels, n, m);
            ds.plant = Some(plant.name().to_string());
            ds
        })
        .collect();
    let finest = strides.iter().enumerate().min_by_key(|(_, s)| **s).map(|(i, _)| i).expect("non-empty");
    let mut trajectories = Vec::new();
    let mut failures = Vec::new();

    for (i, x0) in spec.initial_states.iter().enumerate() {
        for (j, signal) in spec.signals.iter().enumerate() {
            let id = (i * spec.signals.len() + j) as u64;
            let hold_dt = hold as f64 * spec.fine_dt;
            let input_at = |k: usize| signal.value((k / hold) as f64 * hold_dt);
            let mut states = Vec::with_capacity(fine_steps + 1);
            let mut failed = None;
            match label_state(plant, spec.labels, x0) {
                Ok(x) => states.push(x),
                Err(e) => failed = Some(e),
            }
            for k in 0..if failed.is_none() { fine_steps } else { 0 } {
                match rk4_step_at(&field, &states[k], &input_at(k), spec.fine_dt, k) {
                    Ok(x) => states.push(x),
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
            if let Some(e) = failed {
                failures.push(TrajectoryFailure { id, message: e.to_string() });
                continue;
            }

            for (d, &stride) in strides.iter().enumerate() {
                let idx: Vec<usize> = (0..=fine_steps).step_by(stride).collect();
                let clean: Vec<Vec<f64>> = idx.iter().map(|&k| states[k].clone()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(spec.seed, id, d));
                let noisy = add_noise(&clean, &spec.noise_sigma, &mut rng)?;
                let observed = match spec.smoothing_window {
                    Some(w) if w > 1 => moving_average(&noisy, w),
                    _ => noisy,
                };
                let dt = stride as f64 * spec.fine_dt;
                for s in 0..idx.len() - 1 {
                    datasets[d].push(TransitionSample {
                        trajectory: id,
                        q: observed[s][..n].to_vec(),
                        v: observed[s][n..].to_vec(),
                        u: input_at(idx[s]),
                        dt,
                        next_q: observed[s + 1][..n].to_vec(),
                        next_v: observed[s + 1][n..].to_vec(),
                    })?;
                }
                if d == finest {
                    let qd = idx
                        .iter()
                        .map(|&k| velocity(plant, spec.labels, &states[k]))
                        .collect::<Result<Vec<_>>>()?;
                    trajectories.push(RawTrajectory {
                        id,
                        t: idx.iter().map(|&k| k as f64 * spec.fine_dt).collect(),
                        q: idx.iter().map(|&k| states[k][..n].to_vec()).collect(),
                        qd,
                        u: idx.iter().map(|&k| input_at(k)).collect(),
                    });
                }
            }
        }
    }
    Ok(Generated {
        datasets,
        trajectories,
        failures,
    })
}

fn label_state(plant: &Plant, kind: ModelKind, x: &[f64]) -> Result<Vec<f64>> {
    let n = plant.dof();
    match kind {
        ModelKind::Lnn => Ok(x.to_vec()),
        ModelKind::Hnn => {
            let mass = plant.mechanics(&x[..n])?.mass_matrix();
            let p = mass * DVector::from_column_slice(&x[n..]);
            let mut out = x[..n].to_vec();
            out.extend(p.iter());
            Ok(out)
        }
    }
}

fn velocity(plant: &Plant, kind: ModelKind, x: &[f64]) -> Result<Vec<f64>> {
    let n = plant.dof();
    match kind {
        ModelKind::Lnn => Ok(x[n..].to_vec()),
        ModelKind::Hnn => Ok(plant.mechanics(&x[..n])?.solve_mass(&x[n..])),
    }
}

fn noise_seed(seed: u64, trajectory: u64, dataset: usize) -> u64 {
    seed ^ trajectory.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (dataset as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

fn add_noise(states: &[Vec<f64>], sigma: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if sigma.iter().all(|s| *s == 0.0) {
        return Ok(states.to_vec());
    }
    let dists = (0..states[0].len())
        .map(|c| {
            let s = if sigma.len() == 1 { sigma[0] } else { sigma[c] };
            Normal::new(0.0, s).map_err(|e| Error::config("noise_sigma", e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(states
        .iter()
        .map(|x| x.iter().zip(&dists).map(|(v, d)| v + d.sample(rng)).collect())
        .collect())
}

/// Centered moving average; near the ends the window shrinks to the
/// available samples.
fn moving_average(states: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let half_lo = (window - 1) / 2;
    let half_hi = window / 2;
    (0..states.len())
        .map(|k| {
            let lo = k.saturating_sub(half_lo);
            let hi = (k + half_hi).min(states.len() - 1);
            let count = (hi - lo + 1) as f64;
            (0..states[k].len())
                .map(|c| states[lo..=hi].iter().map(|x| x[c]).sum::<f64>() / count)
                .collect()
        })
        .collect()
}

/// Columns `trajectory_id,t,q*,qd*,u*`.
pub fn write_trajectories_csv<W: Write>(writer: W, trajectories: &[RawTrajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = trajectories.first() else {
        w.flush()?;
        return Ok(());
    };
    let (n, m) = (first.q[0].len(), first.u[0].len());
    let mut header = vec!["trajectory_id".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("q{i}")));
    header.extend((0..n).map(|i| format!("qd{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for tr in trajectories {
        for k in 0..tr.t.len() {
            let mut rec = vec![tr.id.to_string(), format_float(tr.t[k])];
            rec.extend(tr.q[k].iter().chain(&tr.qd[k]).chain(&tr.u[k]).map(|x| format_float(*x)));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories_csv<R: Read>(reader: R) -> Result<Vec<RawTrajectory>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    // what the writer emits for no trajectories
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.len() < 2 || header[0] != "trajectory_id" || header[1] != "t" {
        return Err(Error::Parse("trajectory header must start with trajectory_id,t".into()));
    }
    let n = header.iter().filter(|h| is_indexed(h, "q")).count();
    let m = header.iter().filter(|h| is_indexed(h, "u")).count();
    let mut expected = vec!["trajectory_id".to_string(), "t".to_string()];
    expected.extend((0..n).map(|i| format!("q{i}")));
    expected.extend((0..n).map(|i| format!("qd{i}")));
    expected.extend((0..m).map(|i| format!("u{i}")));
    if n == 0 || header != expected {
        return Err(Error::Parse(format!("unexpected trajectory header: {}", header.join(","))));
    }
    let mut out: Vec<RawTrajectory> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row + 2;
        check_len("trajectory row", header.len(), rec.len())
            .map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {line}: invalid trajectory_id")))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Parse(format!("line {line}: invalid number")))?;
        if out.last().is_none_or(|t| t.id != id) {
            out.push(RawTrajectory { id, t: vec![], q: vec![], qd: vec![], u: vec![] });
        }
        let tr = out.last_mut().expect("pushed above");
        tr.t.push(vals[0]);
        tr.q.push(vals[1..1 + n].to_vec());
        tr.qd.push(vals[1 + n..1 + 2 * n].to_vec());
        tr.u.push(vals[1 + 2 * n..].to_vec());
    }
    Ok(out)
}

fn is_indexed(h: &str, prefix: &str) -> bool {
    h.strip_prefix(prefix)
        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
}

pub fn save_trajectories(path: &Path, trajectories: &[RawTrajectory]) -> Result<()> {
    write_trajectories_csv(std::io::BufWriter::new(std::fs::File::create(path)?), trajectories)
}
