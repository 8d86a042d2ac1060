//! AdamW with decoupled weight decay, global-norm clipping and the shared
//! mini-batch loop used by every trainable model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physnets::ModelKind;

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(len: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * self.weight_decay * params[i];
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` to norm `max_norm` if it is longer; returns the original norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub clip_norm: f64,
    pub kind: ModelKind,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            clip_norm: 10.0,
            kind: ModelKind::Lnn,
            cosine_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

/// Mean and population standard deviation of the batch losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_mean: f64,
    pub loss_std: f64,
}

pub(crate) struct Divergence {
    pub epoch: usize,
    pub reason: String,
}

/// Runs AdamW over shuffled mini-batches of `0..samples`. On a failing or
/// non-finite batch, `params` is restored to its value at the start of the
/// epoch and the failure returned.
pub(crate) fn optimize<F>(
    params: &mut Vec<f64>,
    samples: usize,
    cfg: &TrainConfig,
    mut batch_grad: F,
) -> std::result::Result<Vec<EpochStats>, Divergence>
where
    F: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>)>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(params.len(), cfg.weight_decay);
    let mut order: Vec<usize> = (0..samples).collect();
    let batches_per_epoch = samples.div_ceil(cfg.batch_size).max(1);
    let total_steps = (cfg.epochs * batches_per_epoch) as f64;
    let mut step = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let snapshot = params.clone();
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(batches_per_epoch);
        for batch in order.chunks(cfg.batch_size) {
            let fail = |reason: String| Divergence { epoch, reason };
            let (loss, mut grad) = match batch_grad(params, batch) {
                Ok(v) => v,
                Err(e) => {
                    *params = snapshot;
                    return Err(fail(e.to_string()));
                }
            };
            if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                *params = snapshot;
                return Err(fail(format!("non-finite loss {loss}")));
            }
            clip_global_norm(&mut grad, cfg.clip_norm);
            let lr = if cfg.cosine_decay {
                0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos())
            } else {
                cfg.learning_rate
            };
            opt.step(params, &grad, lr);
            step += 1;
            losses.push(loss);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / losses.len() as f64;
        history.push(EpochStats {
            epoch,
            loss_mean: mean,
            loss_std: var.sqrt(),
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = AdamW::new(2, 0.0);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.01], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut opt = AdamW::new(1, 0.5);
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0], 0.1);
        assert_eq!(p[0], 2.0 * (1.0 - 0.05));
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = vec![0.1];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1]);
    }

    #[test]
    fn minimizes_a_quadratic_deterministically() {
        let target = [0.3, -1.2, 2.0];
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 2,
            learning_rate: 0.05,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let run = || {
            let mut p = vec![0.0; 3];
            let hist = optimize(&mut p, 3, &cfg, |p, batch| {
                let mut g = vec![0.0; 3];
                let mut l = 0.0;
                for &i in batch {
                    l += (p[i] - target[i]).powi(2);
                    g[i] = 2.0 * (p[i] - target[i]);
                }
                Ok((l, g))
            })
            .ok()
            .unwrap();
            (p, hist)
        };
        let (p, hist) = run();
        for i in 0..3 {
            assert!((p[i] - target[i]).abs() < 1e-3, "{p:?}");
        }
        assert!(hist.last().unwrap().loss_mean < 1e-5);
        assert_eq!(run().0, p);
    }

    #[test]
    fn failure_restores_epoch_start() {
        let cfg = TrainConfig { epochs: 3, batch_size: 1, ..TrainConfig::default() };
        let mut p = vec![1.0];
        let mut calls = 0;
        let err = optimize(&mut p, 2, &cfg, |_, _| {
            calls += 1;
            if calls == 4 {
                Ok((f64::NAN, vec![0.0]))
            } else {
                Ok((1.0, vec![1.0]))
            }
        })
        .err()
        .unwrap();
        assert_eq!(err.epoch, 1);
        // two steps in epoch 0 happened; epoch 1's first step was rolled back
        let mut expected = vec![1.0];
        let mut opt = AdamW::new(1, cfg.weight_decay);
        opt.step(&mut expected, &[1.0], cfg.learning_rate);
        opt.step(&mut expected, &[1.0], cfg.learning_rate);
        assert_eq!(p, expected);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
