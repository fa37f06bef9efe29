//! Robust aggregation.
//!
//! Every aggregator scores each received update with an evaluation function
//! `R(θ, ·)` and then filters or attenuates updates based on that score.
//! Distance-based evaluators compare `θ` to a reference update under the L2
//! metric (Multi-KRUM, RoFL, SCC); behavior-based evaluators compare how a
//! model carrying `θ` behaves on held data against a reference model
//! (RD-SVM, ERR).

mod behavior;
mod distance;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Model, ParamVector};

pub use behavior::{err_aggregate, err_scores, rd_svm_aggregate, rd_svm_evaluate, CandidateForm};
pub use distance::{
    dynamic_delta, krum_score, krum_scores, mean_aggregate, multi_krum_aggregate, rofl_aggregate,
    scc_aggregate, scc_clip,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Mean,
    MultiKrum,
    Scc,
    RoflNorm,
    RdSvmHinge,
    ErrRejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvaluatorClass {
    /// No filtering.
    None,
    /// `R = Δ(θ, θ*)` for the L2 metric.
    DistanceBased,
    /// `R = π(θ; S) − π(θ*; S)` for a behavior function `π`.
    BehaviorBased,
}

impl EvaluatorKind {
    pub fn class(self) -> EvaluatorClass {
        match self {
            EvaluatorKind::Mean => EvaluatorClass::None,
            EvaluatorKind::MultiKrum | EvaluatorKind::Scc | EvaluatorKind::RoflNorm => {
                EvaluatorClass::DistanceBased
            }
            EvaluatorKind::RdSvmHinge | EvaluatorKind::ErrRejection => EvaluatorClass::BehaviorBased,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvaluatorKind::Mean => "mean",
            EvaluatorKind::MultiKrum => "multi_krum",
            EvaluatorKind::Scc => "scc",
            EvaluatorKind::RoflNorm => "rofl_norm",
            EvaluatorKind::RdSvmHinge => "rd_svm_hinge",
            EvaluatorKind::ErrRejection => "err_rejection",
        }
    }

    /// Short label used in metric and plot columns.
    pub fn short_name(self) -> &'static str {
        match self {
            EvaluatorKind::Mean => "mean",
            EvaluatorKind::MultiKrum => "mkrum",
            EvaluatorKind::Scc => "scc",
            EvaluatorKind::RoflNorm => "rofl",
            EvaluatorKind::RdSvmHinge => "rdsvm",
            EvaluatorKind::ErrRejection => "err",
        }
    }
}

/// Acceptance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum DeltaPolicy {
    Fixed(f64),
    /// Root-mean-square distance from the evaluator's own update to its
    /// neighbors', recomputed every epoch.
    DynamicVariance,
}

impl DeltaPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            DeltaPolicy::Fixed(d) if !(*d >= 0.0 && d.is_finite()) => {
                Err(Error::invalid("delta must be >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorSpec {
    pub kind: EvaluatorKind,
    pub delta: DeltaPolicy,
    /// Assumed Byzantine count (Multi-KRUM, ERR).
    pub f: usize,
    /// Size of the behavior-based evaluation batch.
    pub eval_set_size: usize,
    /// How behavior-based evaluators read a received vector.
    pub candidate_form: CandidateForm,
}

impl AggregatorSpec {
    pub fn new(kind: EvaluatorKind) -> Self {
        AggregatorSpec {
            kind,
            delta: DeltaPolicy::Fixed(1.0),
            f: 0,
            eval_set_size: 256,
            candidate_form: CandidateForm::Update,
        }
    }

    pub fn with_delta(mut self, delta: DeltaPolicy) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_f(mut self, f: usize) -> Self {
        self.f = f;
        self
    }

    /// Multi-KRUM keeping `floor((n + 3) / 2)` of `n` updates.
    pub fn multi_krum_default(n: usize) -> Self {
        let accepted = (n + 3) / 2;
        AggregatorSpec::new(EvaluatorKind::MultiKrum).with_f(n.saturating_sub(accepted))
    }

    pub fn validate(&self) -> Result<()> {
        self.delta.validate()?;
        if self.eval_set_size == 0 {
            return Err(Error::invalid("eval_set_size must be positive"));
        }
        if self.kind == EvaluatorKind::RoflNorm {
            if let DeltaPolicy::Fixed(d) = self.delta {
                if d <= 0.0 {
                    return Err(Error::invalid("RoFL needs delta > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Scores and decisions for one aggregation, aligned with the received order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationOutcome {
    pub aggregate: ParamVector,
    pub per_update_score: Vec<f64>,
    pub accepted: Vec<bool>,
    pub clipped: Vec<bool>,
    /// Nothing was accepted and the aggregate fell back to zero.
    pub empty_acceptance: bool,
}

impl AggregationOutcome {
    pub(crate) fn unclipped(aggregate: ParamVector, scores: Vec<f64>, accepted: Vec<bool>) -> Self {
        let n = accepted.len();
        AggregationOutcome {
            aggregate,
            per_update_score: scores,
            accepted,
            clipped: vec![false; n],
            empty_acceptance: false,
        }
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }
}

/// Everything an aggregation point knows when it combines updates.
#[derive(Debug, Clone, Copy)]
pub struct AggregationInput<'a> {
    /// Received updates, own update included, in ascending sender id.
    pub updates: &'a [ParamVector],
    /// Position of the aggregator's own update, for peer-to-peer users.
    pub own_index: Option<usize>,
    /// Model the updates are applied to.
    pub current_model: &'a Model,
    /// Held data for behavior-based evaluators.
    pub eval_set: Option<&'a Dataset>,
    /// Threshold already resolved from the spec's policy.
    pub delta: f64,
}

/// Mean of the accepted updates, or zero with a warning if none were.
pub(crate) fn mean_of_accepted(updates: &[ParamVector], accepted: &[bool]) -> Result<(ParamVector, bool)> {
    let len = updates.first().map(ParamVector::len).unwrap_or(0);
    let chosen: Vec<&ParamVector> = updates
        .iter()
        .zip(accepted)
        .filter(|(_, &a)| a)
        .map(|(u, _)| u)
        .collect();
    if chosen.is_empty() {
        log::warn!("no update accepted; aggregate falls back to zero");
        return Ok((ParamVector::zeros(len), true));
    }
    Ok((ParamVector::mean_of(chosen)?, false))
}

pub(crate) fn check_equal_lengths(updates: &[ParamVector]) -> Result<usize> {
    let first = updates
        .first()
        .ok_or_else(|| Error::precondition("no updates to aggregate"))?;
    if let Some(bad) = updates.iter().find(|u| u.len() != first.len()) {
        return Err(Error::DimensionMismatch {
            expected: first.len(),
            actual: bad.len(),
            context: "update length",
        });
    }
    Ok(first.len())
}

/// Runs the configured aggregator.
pub fn aggregate(spec: &AggregatorSpec, input: AggregationInput<'_>) -> Result<AggregationOutcome> {
    let updates = input.updates;
    match spec.kind {
        EvaluatorKind::Mean => mean_aggregate(updates),
        EvaluatorKind::MultiKrum => multi_krum_aggregate(updates, spec.f),
        EvaluatorKind::RoflNorm => rofl_aggregate(updates, input.delta),
        EvaluatorKind::Scc => {
            let own = input
                .own_index
                .ok_or_else(|| Error::precondition("SCC needs the aggregator's own update"))?;
            let others: Vec<ParamVector> = updates
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != own)
                .map(|(_, u)| u.clone())
                .collect();
            let inner = scc_aggregate(&others, &updates[own], input.delta)?;
            // re-insert the own update at its received position
            let mut scores = inner.per_update_score;
            let mut clipped = inner.clipped;
            scores.insert(own, 0.0);
            clipped.insert(own, false);
            Ok(AggregationOutcome {
                aggregate: inner.aggregate,
                per_update_score: scores,
                accepted: vec![true; updates.len()],
                clipped,
                empty_acceptance: false,
            })
        }
        EvaluatorKind::RdSvmHinge => {
            let eval = input
                .eval_set
                .ok_or_else(|| Error::precondition("RD-SVM needs an evaluation set"))?;
            rd_svm_aggregate(updates, input.current_model, eval, spec.candidate_form)
        }
        EvaluatorKind::ErrRejection => {
            let eval = input
                .eval_set
                .ok_or_else(|| Error::precondition("ERR needs an evaluation set"))?;
            err_aggregate(updates, input.current_model, eval, spec.f)
        }
    }
}
