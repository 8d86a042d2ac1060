use crate::error::{Error, Result};
use crate::physnets::StructuredModel;

use super::checkpoint::SavedModel;
use super::dataset::TransitionDataset;
use super::loss::loss_and_grad;
use super::optim::{optimize, EpochStats, TrainConfig};

/// Trains a copy of `model` with AdamW on one-step prediction loss.
///
/// On divergence the error carries the model as it was at the start of the
/// failing epoch.
pub fn train(
    model: &StructuredModel,
    dataset: &TransitionDataset,
    cfg: &TrainConfig,
) -> Result<(StructuredModel, Vec<EpochStats>)> {
    cfg.validate()?;
    if dataset.kind != cfg.kind || model.kind != cfg.kind {
        return Err(Error::Invalid(format!(
            "loss kind {:?} does not match dataset ({:?}) and model ({:?})",
            cfg.kind, dataset.kind, model.kind
        )));
    }
    if dataset.dof != model.dof || dataset.inputs != model.inputs {
        return Err(Error::Invalid(format!(
            "dataset has {} coordinates and {} inputs, model has {} and {}",
            dataset.dof, dataset.inputs, model.dof, model.inputs
        )));
    }
    if cfg.epochs == 0 {
        return Ok((model.clone(), Vec::new()));
    }
    if dataset.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    let mut work = model.clone();
    let mut params = model.flat_params();
    let result = optimize(&mut params, dataset.len(), cfg, |p, idx| {
        work.set_flat_params(p)?;
        let batch: Vec<_> = idx.iter().map(|&i| &dataset.samples[i]).collect();
        loss_and_grad(&work, cfg.kind, &batch)
    });
    let mut trained = model.clone();
    trained.set_flat_params(&params)?;
    match result {
        Ok(history) => Ok((trained, history)),
        Err(d) => Err(Error::Diverged {
            epoch: d.epoch,
            reason: d.reason,
            last_good: Box::new(SavedModel::Structured(trained)),
        }),
    }
}
