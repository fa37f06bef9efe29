use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Loss, Model, OptimizerState, ParamVector};
use crate::data::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::rng;

/// How much local work a user performs per collaborative epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalSchedule {
    pub batch_size: usize,
    /// Passes over the local data.
    pub local_epochs: usize,
    /// Optional cap on minibatches per pass.
    pub max_batches: Option<usize>,
}

impl LocalSchedule {
    pub fn new(batch_size: usize) -> Self {
        LocalSchedule {
            batch_size,
            local_epochs: 1,
            max_batches: None,
        }
    }
}

/// Result of one round of local training.
#[derive(Debug, Clone)]
pub struct LocalStep {
    pub model: Model,
    /// `new_params - old_params`.
    pub update: ParamVector,
    /// Mean minibatch loss seen during the round.
    pub mean_loss: f64,
}

/// Runs minibatch descent on `data` and returns the new model and its update.
///
/// The minibatch order is drawn from `rng_seed` alone.
pub fn local_train_step(
    model: &Model,
    opt: &mut OptimizerState,
    data: &Dataset,
    schedule: &LocalSchedule,
    rng_seed: u64,
) -> Result<LocalStep> {
    if data.is_empty() {
        return Err(Error::invalid("local training on an empty dataset"));
    }
    if schedule.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let loss = model.shape().output_head().default_loss();
    let mut rng = rng::rng_for(rng_seed, &[rng::stream::LOCAL_TRAIN]);
    let mut current = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for _ in 0..schedule.local_epochs {
        order.shuffle(&mut rng);
        let limit = schedule.max_batches.unwrap_or(usize::MAX);
        for chunk in order.chunks(schedule.batch_size).take(limit) {
            let batch = data.select(chunk);
            let (value, grad) = current.loss_and_gradient(&batch, loss)?;
            opt.step(current.params_mut(), &grad)?;
            loss_sum += value;
            batches += 1;
        }
    }
    if !current.params().is_finite() {
        return Err(Error::invalid("local training produced non-finite parameters"));
    }
    let update = current.params().sub(model.params());
    Ok(LocalStep {
        model: current,
        update,
        mean_loss: if batches > 0 {
            loss_sum / batches as f64
        } else {
            0.0
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    ErrorRate,
    Rmse,
    MeanLoss,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::ErrorRate => "error_rate",
            Metric::Rmse => "rmse",
            Metric::MeanLoss => "mean_loss",
        }
    }
}

/// Scores `model` on `data`.
pub fn evaluate(model: &Model, data: &Dataset, metric: Metric) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation on an empty dataset"));
    }
    let head = model.shape().output_head();
    match metric {
        Metric::Accuracy | Metric::ErrorRate => {
            let labels = match (head.is_classifier(), data.labels()) {
                (true, Labels::Class { values, .. }) => values,
                _ => {
                    return Err(Error::IncompatibleMetric {
                        metric: metric.name(),
                        head: head.name(),
                    })
                }
            };
            let predictions = model.predict(data.inputs().view())?;
            let correct = predictions
                .iter()
                .zip(labels)
                .filter(|(p, y)| p == y)
                .count();
            let accuracy = correct as f64 / labels.len() as f64;
            Ok(if metric == Metric::Accuracy {
                accuracy
            } else {
                1.0 - accuracy
            })
        }
        Metric::Rmse => {
            if head.is_classifier() {
                return Err(Error::IncompatibleMetric {
                    metric: metric.name(),
                    head: head.name(),
                });
            }
            Ok(model.loss(data, Loss::Mse)?.sqrt())
        }
        Metric::MeanLoss => model.loss(data, head.default_loss()),
    }
}

/// Error rate computed from predictions, used where many models are compared
/// on the same data.
pub fn error_rate_of(predictions: &[usize], labels: &[usize]) -> f64 {
    let wrong = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p != y)
        .count();
    wrong as f64 / labels.len().max(1) as f64
}
