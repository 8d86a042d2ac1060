//! One-step prediction losses.
//!
//! Lagrangian models are scored on the velocity after one RK4 step of the
//! forward dynamics; Hamiltonian models on both configuration and momentum.

use crate::dynamics::{hamiltonian_field, lagrangian_accel, state_field};
use crate::error::{Error, Result};
use crate::integrators::rk4_step;
use crate::mechanics::MechanicalModel;
use crate::numcore::{Real, Tape, Var};
use crate::physnets::{ModelKind, StructuredModel, TapeHeads};

use super::dataset::TransitionSample;

/// Prediction minus label for the compared components.
pub fn sample_residual<M: MechanicalModel + ?Sized>(
    model: &M,
    kind: ModelKind,
    sample: &TransitionSample,
) -> Result<Vec<f64>> {
    let n = model.dof();
    let pred = rk4_step(&state_field(model, kind), &sample.state(), &sample.u, sample.dt)?;
    Ok(match kind {
        ModelKind::Lnn => pred[n..].iter().zip(&sample.next_v).map(|(a, b)| a - b).collect(),
        ModelKind::Hnn => pred.iter().zip(sample.next_state()).map(|(a, b)| a - b).collect(),
    })
}

fn mean_squared<M: MechanicalModel + ?Sized>(model: &M, kind: ModelKind, batch: &[TransitionSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Invalid("loss of an empty batch".into()));
    }
    let mut total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let r = sample_residual(model, kind, s).map_err(|e| Error::Loss {
            sample: i,
            source: Box::new(e),
        })?;
        total += r.iter().map(|x| x * x).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Mean of `‖q̇_{k+1} − q̂̇_{k+1}‖²`.
pub fn lnn_loss<M: MechanicalModel + ?Sized>(model: &M, batch: &[TransitionSample]) -> Result<f64> {
    mean_squared(model, ModelKind::Lnn, batch)
}

/// Mean of `‖q_{k+1} − q̂_{k+1}‖² + ‖p_{k+1} − p̂_{k+1}‖²`.
pub fn hnn_loss<M: MechanicalModel + ?Sized>(model: &M, batch: &[TransitionSample]) -> Result<f64> {
    mean_squared(model, ModelKind::Hnn, batch)
}

pub fn loss<M: MechanicalModel + ?Sized>(model: &M, kind: ModelKind, batch: &[TransitionSample]) -> Result<f64> {
    mean_squared(model, kind, batch)
}

fn tape_loss<'t>(
    model: &StructuredModel,
    kind: ModelKind,
    tape: &'t Tape,
    heads: &TapeHeads<'t>,
    batch: &[&TransitionSample],
) -> Result<Var<'t>> {
    let n = model.dof;
    let mut groups: Vec<(f64, Vec<&TransitionSample>)> = Vec::new();
    for s in batch {
        match groups.iter_mut().find(|g| g.0 == s.dt) {
            Some(g) => g.1.push(s),
            None => groups.push((s.dt, vec![s])),
        }
    }
    let field = |x: &[Var<'t>], u: &[Var<'t>]| -> Result<Vec<Var<'t>>> {
        let mech = model.mechanics_on_tape(tape, heads, &x[..n])?;
        Ok(match kind {
            ModelKind::Lnn => {
                let mut out = x[n..].to_vec();
                out.extend(lagrangian_accel(&mech, &x[n..], u));
                out
            }
            ModelKind::Hnn => {
                let (mut qd, pd) = hamiltonian_field(&mech, &x[n..], u);
                qd.extend(pd);
                qd
            }
        })
    };
    let mut total: Option<Var<'t>> = None;
    for (dt, group) in &groups {
        let col = |f: &dyn Fn(&TransitionSample) -> f64| tape.column_vector(group.iter().map(|s| f(s)).collect());
        let mut x: Vec<Var<'t>> = (0..n).map(|i| col(&|s| s.q[i])).collect();
        x.extend((0..n).map(|i| col(&|s| s.v[i])));
        let u: Vec<Var<'t>> = (0..model.inputs).map(|i| col(&|s| s.u[i])).collect();
        let pred = rk4_step(&field, &x, &u, *dt)?;
        let (from, labels): (usize, Vec<Var<'t>>) = match kind {
            ModelKind::Lnn => (n, (0..n).map(|i| col(&|s| s.next_v[i])).collect()),
            ModelKind::Hnn => (
                0,
                (0..n)
                    .map(|i| col(&|s| s.next_q[i]))
                    .chain((0..n).map(|i| col(&|s| s.next_v[i])))
                    .collect(),
            ),
        };
        let mut sq: Option<Var<'t>> = None;
        for (p, l) in pred[from..].iter().zip(&labels) {
            let e = *p - *l;
            sq = Some(match sq {
                None => e * e,
                Some(acc) => acc + e * e,
            });
        }
        let weight = group.len() as f64 / batch.len() as f64;
        let term = tape.mean(sq.expect("dof >= 1")).scale(weight);
        total = Some(match total {
            None => term,
            Some(acc) => acc + term,
        });
    }
    Ok(total.expect("non-empty batch"))
}

/// Batch loss and its gradient with respect to
/// [`StructuredModel::flat_params`].
pub fn loss_and_grad(model: &StructuredModel, kind: ModelKind, batch: &[&TransitionSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("loss of an empty batch".into()));
    }
    let tape = Tape::new();
    let heads = model.on_tape(&tape);
    let attempt = tape_loss(model, kind, &tape, &heads, batch).and_then(|loss| {
        let grads = tape.gradients(loss, &heads.param_vars())?;
        Ok((tape.value(loss)[0], grads.into_iter().flatten().collect::<Vec<f64>>()))
    });
    match attempt {
        Ok((value, grad)) if value.is_finite() && grad.iter().all(|g| g.is_finite()) => Ok((value, grad)),
        Ok(_) => Err(locate_failure(model, kind, batch, Error::NumericalFailure { primitive: "loss" })),
        Err(e) => Err(locate_failure(model, kind, batch, e)),
    }
}

/// Wraps a batch failure with the index of the first sample that fails on
/// its own (or 0 when none does).
fn locate_failure(model: &StructuredModel, kind: ModelKind, batch: &[&TransitionSample], err: Error) -> Error {
    for (i, s) in batch.iter().enumerate() {
        match sample_residual(model, kind, s) {
            Err(e) => return Error::Loss { sample: i, source: Box::new(e) },
            Ok(r) if !r.iter().all(|x| x.is_finite()) => {
                return Error::Loss {
                    sample: i,
                    source: Box::new(Error::NumericalFailure { primitive: "loss" }),
                }
            }
            Ok(_) => {}
        }
    }
    Error::Loss { sample: 0, source: Box::new(err) }
}
