//! Behavior-based evaluators: RD-SVM and ERR.

use serde::{Deserialize, Serialize};

use super::distance::lowest_indices;
use super::{check_equal_lengths, mean_of_accepted, AggregationOutcome};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate, Loss, Metric, Model, ParamVector};

/// How a received vector is turned into a model before evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateForm {
    /// The vector is an update applied to the current model.
    Update,
    /// The vector is a full set of model weights.
    Model,
}

impl CandidateForm {
    fn candidate(self, current: &Model, theta: &ParamVector) -> Result<Model> {
        match self {
            CandidateForm::Update => current.apply_update(theta),
            CandidateForm::Model => current.with_params(theta.clone()),
        }
    }
}

/// `hinge(candidate) − hinge(reference)` on `eval_set`; positive means worse.
pub fn rd_svm_evaluate(candidate: &Model, reference: &Model, eval_set: &Dataset) -> Result<f64> {
    if candidate.shape() != reference.shape() {
        return Err(Error::DimensionMismatch {
            expected: reference.params().len(),
            actual: candidate.params().len(),
            context: "RD-SVM candidate shape",
        });
    }
    Ok(candidate.loss(eval_set, Loss::Hinge)? - reference.loss(eval_set, Loss::Hinge)?)
}

/// Rejects every update whose candidate model has a higher hinge loss than
/// the current model; averages the rest.
pub fn rd_svm_aggregate(
    updates: &[ParamVector],
    current_model: &Model,
    eval_set: &Dataset,
    form: CandidateForm,
) -> Result<AggregationOutcome> {
    check_equal_lengths(updates)?;
    let base = current_model.loss(eval_set, Loss::Hinge)?;
    let scores = updates
        .iter()
        .map(|u| Ok(form.candidate(current_model, u)?.loss(eval_set, Loss::Hinge)? - base))
        .collect::<Result<Vec<f64>>>()?;
    let accepted: Vec<bool> = scores.iter().map(|&r| r <= 0.0).collect();
    let (aggregate, empty) = mean_of_accepted(updates, &accepted)?;
    let mut out = AggregationOutcome::unclipped(aggregate, scores, accepted);
    out.empty_acceptance = empty;
    Ok(out)
}

/// Behavior function for ERR: error rate for classifiers, RMSE otherwise.
fn performance(model: &Model, eval_set: &Dataset) -> Result<f64> {
    let metric = if model.shape().output_head().is_classifier() {
        Metric::ErrorRate
    } else {
        Metric::Rmse
    };
    evaluate(model, eval_set, metric)
}

/// Leave-one-out ERR scores:
/// `π(m + mean(all)) − π(m + mean(all except k))`.
///
/// With a single update the leave-one-out aggregate is the current model.
pub fn err_scores(updates: &[ParamVector], current_model: &Model, eval_set: &Dataset) -> Result<Vec<f64>> {
    let len = check_equal_lengths(updates)?;
    let n = updates.len();
    let sum = ParamVector::sum_of(len, updates);
    let with_all = performance(&current_model.apply_update(&sum.scale(1.0 / n as f64))?, eval_set)?;
    updates
        .iter()
        .map(|u| {
            let without = if n == 1 {
                ParamVector::zeros(len)
            } else {
                sum.sub(u).scale(1.0 / (n - 1) as f64)
            };
            Ok(with_all - performance(&current_model.apply_update(&without)?, eval_set)?)
        })
        .collect()
}

/// Rejects the `f` updates with the largest ERR score and averages the rest.
pub fn err_aggregate(
    updates: &[ParamVector],
    current_model: &Model,
    eval_set: &Dataset,
    f: usize,
) -> Result<AggregationOutcome> {
    if f >= updates.len() {
        return Err(Error::precondition(format!(
            "ERR needs f < n (f = {f}, n = {})",
            updates.len()
        )));
    }
    let scores = err_scores(updates, current_model, eval_set)?;
    // the f largest scores are rejected, earlier positions first on ties
    let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
    let mut accepted = vec![true; updates.len()];
    for i in lowest_indices(&negated, f) {
        accepted[i] = false;
    }
    let (aggregate, empty) = mean_of_accepted(updates, &accepted)?;
    let mut out = AggregationOutcome::unclipped(aggregate, scores, accepted);
    out.empty_acceptance = empty;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::mean_aggregate;
    use crate::data::Labels;
    use crate::nn::{Activation, ModelShape, OutputHead};
    use ndarray::array;

    fn linear_shape() -> ModelShape {
        ModelShape::new(vec![2, 2], Activation::Identity, OutputHead::HingeMargin).unwrap()
    }

    /// Two classes separated by the sign of the first feature.
    fn toy() -> Dataset {
        Dataset::new(
            "toy",
            array![[1.0, 0.2], [2.0, -0.5], [-1.0, 0.1], [-1.5, 0.4]],
            Labels::Class {
                values: vec![0, 0, 1, 1],
                n_classes: 2,
            },
        )
        .unwrap()
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    // layout: w[0][0], w[0][1], w[1][0], w[1][1], b0, b1
    fn good_direction() -> ParamVector {
        pv(&[1.0, -1.0, 0.0, 0.0, 0.0, 0.0])
    }

    #[test]
    fn rd_svm_reflexive_and_antisymmetric() {
        let data = toy();
        let m = Model::from_params(linear_shape(), good_direction()).unwrap();
        assert_eq!(rd_svm_evaluate(&m, &m, &data).unwrap(), 0.0);
        let worse = Model::from_params(linear_shape(), good_direction().scale(-1.0)).unwrap();
        let r = rd_svm_evaluate(&worse, &m, &data).unwrap();
        assert!(r > 0.0);
        assert_eq!(rd_svm_evaluate(&m, &worse, &data).unwrap(), -r);
    }

    #[test]
    fn rd_svm_rejects_hinge_increase() {
        let data = toy().select(&[0, 1, 2]);
        let current = Model::zeros(linear_shape());
        let out = rd_svm_aggregate(
            &[good_direction(), good_direction().scale(-1.0)],
            &current,
            &data,
            CandidateForm::Update,
        )
        .unwrap();
        assert_eq!(out.accepted, vec![true, false]);
        assert!(out.per_update_score[1] > 0.0);
        assert_eq!(out.aggregate, good_direction());
    }

    #[test]
    fn rd_svm_model_form_reads_weights() {
        let data = toy();
        let current = Model::from_params(linear_shape(), good_direction()).unwrap();
        let out = rd_svm_aggregate(
            &[good_direction()],
            &current,
            &data,
            CandidateForm::Model,
        )
        .unwrap();
        assert_eq!(out.per_update_score, vec![0.0]);
    }

    #[test]
    fn err_with_zero_f_is_mean() {
        let data = toy();
        let current = Model::zeros(linear_shape());
        let updates = vec![good_direction(), good_direction().scale(0.5), pv(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.1])];
        let out = err_aggregate(&updates, &current, &data, 0).unwrap();
        assert!(out.accepted.iter().all(|&a| a));
        assert_eq!(out.aggregate, mean_aggregate(&updates).unwrap().aggregate);
    }

    #[test]
    fn err_rejects_the_opposing_update() {
        let data = toy();
        let current = Model::zeros(linear_shape());
        let g = good_direction();
        let updates = vec![g.clone(), g.clone(), g.scale(-5.0)];
        let out = err_aggregate(&updates, &current, &data, 1).unwrap();
        // exhaustive: every leave-one-out error rate by hand
        let err = |u: &ParamVector| performance(&current.apply_update(u).unwrap(), &data).unwrap();
        let all = ParamVector::mean_of(&updates).unwrap();
        let expected: Vec<f64> = (0..3)
            .map(|k| {
                let rest: Vec<&ParamVector> = updates.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, u)| u).collect();
                err(&all) - err(&ParamVector::mean_of(rest).unwrap())
            })
            .collect();
        assert_eq!(out.per_update_score, expected);
        assert_eq!(out.accepted, vec![true, true, false]);
        assert_eq!(out.per_update_score[0], out.per_update_score[1]);
        assert!(out.per_update_score[2] > out.per_update_score[0]);
        assert_eq!(out.aggregate, g);
    }

    #[test]
    fn err_requires_f_below_n() {
        let data = toy();
        let current = Model::zeros(linear_shape());
        assert!(err_aggregate(&[good_direction()], &current, &data, 1).is_err());
    }
}
