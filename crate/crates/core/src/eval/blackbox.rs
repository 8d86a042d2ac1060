//! Unstructured baseline: one network from `(q, v, u, Δt)` straight to the
//! next state `(q_{k+1}, v_{k+1})`.

use crate::error::{check_len, Error, Result};
use crate::learning::{optimize, SavedModel, TrainConfig, TransitionDataset, TransitionSample, EpochStats};
use crate::numcore::{Mlp, MlpParams, MlpSpec, Real, Tape};
use crate::physnets::ModelKind;

pub const BLACKBOX_HIDDEN: [usize; 5] = [128; 5];

#[derive(Clone, Debug, PartialEq)]
pub struct BlackBoxModel {
    pub kind: ModelKind,
    pub dof: usize,
    pub inputs: usize,
    pub mlp: Mlp,
}

impl BlackBoxModel {
    pub fn new(kind: ModelKind, dof: usize, inputs: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let spec = MlpSpec::new(2 * dof + inputs + 1, 2 * dof, hidden).with_seed(seed);
        Self::from_parts(kind, dof, inputs, Mlp::new(spec)?)
    }

    pub fn from_parts(kind: ModelKind, dof: usize, inputs: usize, mlp: Mlp) -> Result<Self> {
        if dof == 0 {
            return Err(Error::Invalid("black-box model needs at least one coordinate".into()));
        }
        check_len("black-box network input", 2 * dof + inputs + 1, mlp.spec.input_dim)?;
        check_len("black-box network output", 2 * dof, mlp.spec.output_dim)?;
        Ok(Self { kind, dof, inputs, mlp })
    }

    fn features(state: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
        let mut x = state.to_vec();
        x.extend_from_slice(u);
        x.push(dt);
        x
    }

    /// Next `[q; v]` from the current one.
    pub fn predict(&self, state: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
        check_len("state", 2 * self.dof, state.len())?;
        check_len("input", self.inputs, u.len())?;
        let y = self.mlp.eval(&Self::features(state, u, dt))?;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure { primitive: "black-box prediction" });
        }
        Ok(y.as_slice().to_vec())
    }
}

/// Mean squared next-state error over `batch` and its parameter gradient.
pub fn blackbox_loss_and_grad(model: &BlackBoxModel, batch: &[&TransitionSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("loss of an empty batch".into()));
    }
    let width = model.mlp.spec.input_dim;
    let out = model.mlp.spec.output_dim;
    let mut x = Vec::with_capacity(batch.len() * width);
    let mut y = Vec::with_capacity(batch.len() * out);
    for s in batch {
        x.extend(BlackBoxModel::features(&s.state(), &s.u, s.dt));
        y.extend(s.next_state());
    }
    let tape = Tape::new();
    let net = model.mlp.on_tape(&tape);
    let pred = net.forward(tape.constant(batch.len(), width, x))?;
    let err = pred - tape.constant(batch.len(), out, y);
    let loss = tape.mean(err * err).scale(out as f64);
    let grads = tape.gradients(loss, &net.param_vars())?;
    Ok((tape.value(loss)[0], grads.into_iter().flatten().collect()))
}

pub fn blackbox_loss(model: &BlackBoxModel, batch: &[TransitionSample]) -> Result<f64> {
    let refs: Vec<_> = batch.iter().collect();
    Ok(blackbox_loss_and_grad(model, &refs)?.0)
}

/// Same AdamW loop as the structured models, on direct next-state error.
pub fn train_blackbox(
    model: &BlackBoxModel,
    dataset: &TransitionDataset,
    cfg: &TrainConfig,
) -> Result<(BlackBoxModel, Vec<EpochStats>)> {
    cfg.validate()?;
    if dataset.kind != model.kind || dataset.dof != model.dof || dataset.inputs != model.inputs {
        return Err(Error::Invalid("dataset does not match the black-box model".into()));
    }
    if cfg.epochs == 0 {
        return Ok((model.clone(), Vec::new()));
    }
    if dataset.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    let mut work = model.clone();
    let mut params = model.mlp.params.flatten();
    let result = optimize(&mut params, dataset.len(), cfg, |p, idx| {
        work.mlp.params = MlpParams::unflatten(&work.mlp.spec, p)?;
        let batch: Vec<_> = idx.iter().map(|&i| &dataset.samples[i]).collect();
        blackbox_loss_and_grad(&work, &batch)
    });
    let mut trained = model.clone();
    trained.mlp.params = MlpParams::unflatten(&trained.mlp.spec, &params)?;
    match result {
        Ok(history) => Ok((trained, history)),
        Err(d) => Err(Error::Diverged {
            epoch: d.epoch,
            reason: d.reason,
            last_good: Box::new(SavedModel::BlackBox(trained)),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(q: f64, v: f64, next_q: f64, next_v: f64) -> TransitionSample {
        TransitionSample {
            trajectory: 0,
            q: vec![q],
            v: vec![v],
            u: vec![0.5],
            dt: 0.01,
            next_q: vec![next_q],
            next_v: vec![next_v],
        }
    }

    #[test]
    fn loss_matches_direct_evaluation_and_gradient_matches_differences() {
        let model = BlackBoxModel::new(ModelKind::Lnn, 1, 1, &[6, 5], 4).unwrap();
        let batch = [sample(0.2, -0.1, 0.3, 0.0), sample(-0.5, 0.4, -0.4, 0.2)];
        let refs: Vec<_> = batch.iter().collect();
        let (l, g) = blackbox_loss_and_grad(&model, &refs).unwrap();
        let direct = batch
            .iter()
            .map(|s| {
                let p = model.predict(&s.state(), &s.u, s.dt).unwrap();
                p.iter().zip(s.next_state()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / 2.0;
        assert!((l - direct).abs() < 1e-13);
        let flat = model.mlp.params.flatten();
        for i in (0..flat.len()).step_by(7) {
            let h = 1e-6;
            let eval = |delta: f64| {
                let mut m = model.clone();
                let mut p = flat.clone();
                p[i] += delta;
                m.mlp.params = MlpParams::unflatten(&m.mlp.spec, &p).unwrap();
                blackbox_loss(&m, &batch).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_epochs_and_bad_dims() {
        let model = BlackBoxModel::new(ModelKind::Lnn, 1, 1, &[4], 0).unwrap();
        let mut ds = TransitionDataset::new(ModelKind::Lnn, 1, 1);
        ds.push(sample(0.0, 0.0, 0.0, 0.0)).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert_eq!(train_blackbox(&model, &ds, &cfg).unwrap().0, model);
        assert!(model.predict(&[0.0], &[0.0], 0.01).is_err());
        let wrong = Mlp::new(MlpSpec::new(3, 2, &[4])).unwrap();
        assert!(BlackBoxModel::from_parts(ModelKind::Lnn, 1, 1, wrong).is_err());
    }

    #[test]
    fn fits_a_single_transition() {
        let model = BlackBoxModel::new(ModelKind::Lnn, 1, 1, &[8], 2).unwrap();
        let mut ds = TransitionDataset::new(ModelKind::Lnn, 1, 1);
        ds.push(sample(0.1, 0.2, 0.102, 0.19)).unwrap();
        let cfg = TrainConfig {
            epochs: 500,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let (trained, hist) = train_blackbox(&model, &ds, &cfg).unwrap();
        assert!(hist.last().unwrap().loss_mean < 1e-6);
        assert!(blackbox_loss(&trained, &ds.samples).unwrap() < 1e-6);
    }
}
