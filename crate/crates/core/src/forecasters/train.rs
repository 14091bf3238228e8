//! Full-batch gradient descent with checkpoint-best selection.

use crate::error::{Error, Result};

/// An objective with an analytic gradient and a held-out score.
pub trait Differentiable {
    fn num_params(&self) -> usize;

    /// Returns the training loss and overwrites `grad` with its gradient.
    fn loss_and_grad(&self, params: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn validation_loss(&self, params: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOutcome {
    pub params: Vec<f64>,
    /// Epoch whose starting parameters were kept (`epochs` means the final
    /// update).
    pub best_epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// `(train, validation)` at the start of each epoch.
    pub history: Vec<(f64, f64)>,
}

pub fn gradient_descent(
    objective: &impl Differentiable,
    init: Vec<f64>,
    learning_rate: f64,
    epochs: usize,
) -> Result<DescentOutcome> {
    if init.len() != objective.num_params() {
        return Err(Error::DimensionMismatch {
            expected: objective.num_params(),
            actual: init.len(),
        });
    }
    if epochs == 0 || learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(Error::InvalidArgument("epochs >= 1 and learning_rate > 0 required".into()));
    }
    let mut params = init;
    let mut grad = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(f64, f64, usize, Vec<f64>)> = None;
    let mut consider = |val: f64, train: f64, epoch: usize, params: &[f64]| {
        if val.is_finite() && best.as_ref().is_none_or(|b| val < b.0) {
            best = Some((val, train, epoch, params.to_vec()));
        }
    };
    for epoch in 0..epochs {
        let loss = objective.loss_and_grad(&params, &mut grad)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let val = objective.validation_loss(&params)?;
        history.push((loss, val));
        consider(val, loss, epoch, &params);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= learning_rate * g;
        }
    }
    let loss = objective.loss_and_grad(&params, &mut grad)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: epochs });
    }
    let val = objective.validation_loss(&params)?;
    consider(val, loss, epochs, &params);
    let (validation_loss, train_loss, best_epoch, params) = best.ok_or(Error::NonFiniteLoss { epoch: 0 })?;
    Ok(DescentOutcome {
        params,
        best_epoch,
        train_loss,
        validation_loss,
        history,
    })
}
