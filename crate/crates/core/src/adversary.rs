//! Strategic attacks.
//!
//! The adversary observes the honest updates a victim is about to aggregate
//! and crafts the update(s) it sends to that victim. All functions here are
//! pure; the simulator decides what the adversary gets to see.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregators::{krum_scores, scc_clip};
use crate::error::{Error, Result};
use crate::nn::{ModelShape, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    StateOverride,
    StateOverrideScc,
    Dissensus,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::StateOverride => "state_override",
            AttackKind::StateOverrideScc => "state_override_scc",
            AttackKind::Dissensus => "dissensus",
        }
    }
}

/// What the adversary knows about the honest updates when it crafts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    /// Sees the current epoch's honest updates before sending.
    LastMover,
    /// Uses the previous epoch's honest updates as an estimate.
    PreviousEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Target model `m_target`; the update aimed at victim `i` is
    /// `m_target − m_i`.
    pub target: ParamVector,
    pub adversary_ids: Vec<usize>,
    pub observation: Observation,
    /// Shrink crafted updates until the victim's aggregator accepts them
    /// (Multi-KRUM and RoFL only).
    pub fit_acceptance: bool,
}

impl AttackSpec {
    pub fn none(param_count: usize) -> Self {
        AttackSpec {
            kind: AttackKind::None,
            target: ParamVector::zeros(param_count),
            adversary_ids: Vec::new(),
            observation: Observation::LastMover,
            fit_acceptance: false,
        }
    }

    pub fn is_active(&self) -> bool {
        self.kind != AttackKind::None
    }

    pub fn validate(&self, shape: &ModelShape, n_users: usize) -> Result<()> {
        if self.target.len() != shape.param_count() {
            return Err(Error::DimensionMismatch {
                expected: shape.param_count(),
                actual: self.target.len(),
                context: "attack target",
            });
        }
        if !self.target.is_finite() {
            return Err(Error::invalid("attack target must be finite"));
        }
        if self.kind != AttackKind::None && self.adversary_ids.is_empty() {
            return Err(Error::invalid("an attack needs at least one adversary"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &id in &self.adversary_ids {
            if id >= n_users {
                return Err(Error::invalid(format!(
                    "adversary id {id} out of range for {n_users} users"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::invalid(format!("adversary id {id} listed twice")));
            }
        }
        if self.adversary_ids.len() >= n_users {
            return Err(Error::invalid("at least one user must be honest"));
        }
        Ok(())
    }
}

/// The honest updates one victim is about to aggregate.
#[derive(Debug, Clone)]
pub struct AdversaryView<'a> {
    pub victim_id: usize,
    /// Honest updates the victim receives, keyed by sender id. May include
    /// the victim's own update under `victim_id`.
    pub visible_updates: BTreeMap<usize, &'a ParamVector>,
    /// The victim's own update, for peer-to-peer victims.
    pub victim_own_update: Option<&'a ParamVector>,
    pub epoch: usize,
}

/// `n·θ_target − Σ honest`: the update that makes the mean of all `n`
/// updates equal `θ_target` when a single adversary sends it.
pub fn state_override(honest: &[&ParamVector], target: &ParamVector, n: usize) -> Result<ParamVector> {
    if honest.len() + 1 != n {
        return Err(Error::precondition(format!(
            "state override needs all {} honest updates, got {}",
            n.saturating_sub(1),
            honest.len()
        )));
    }
    state_override_split(honest, target, n, 1)
}

/// Per-adversary share when `n_adversaries` adversaries split the crafted
/// mass `n·θ_target − Σ honest` equally.
pub fn state_override_split(
    honest: &[&ParamVector],
    target: &ParamVector,
    n: usize,
    n_adversaries: usize,
) -> Result<ParamVector> {
    if n_adversaries == 0 || honest.len() + n_adversaries != n {
        return Err(Error::precondition(format!(
            "state override expects {} honest updates for n = {n} and {n_adversaries} adversaries, got {}",
            n.saturating_sub(n_adversaries),
            honest.len()
        )));
    }
    let mut mass = target.scale(n as f64);
    for h in honest {
        if h.len() != target.len() {
            return Err(Error::DimensionMismatch {
                expected: target.len(),
                actual: h.len(),
                context: "honest update",
            });
        }
        mass.axpy(-1.0, h);
    }
    Ok(mass.scale(1.0 / n_adversaries as f64))
}

/// `−Σ_j min(1, δ/||θ_j − θ_i||)·(θ_j − θ_i)` over the honest updates
/// other than the victim's own.
///
/// The result is a deviation from the victim's own update `θ_i`: sending
/// `θ_i + result` cancels the clipped honest deviations when it survives
/// clipping itself.
pub fn state_override_scc(view: &AdversaryView<'_>, delta: f64) -> Result<ParamVector> {
    let own = view
        .victim_own_update
        .ok_or_else(|| Error::precondition("SCC attack needs the victim's own update"))?;
    let mut sum = ParamVector::zeros(own.len());
    for (&id, u) in &view.visible_updates {
        if id == view.victim_id {
            continue;
        }
        let clipped = scc_clip(u, own, delta);
        sum.axpy(1.0, &clipped.try_sub(own)?);
    }
    Ok(sum.scale(-1.0))
}

/// Crafted SCC update toward a target: the deviation from `θ_i` is
/// `[n(θ_target − θ_i) − Σ_j clip(θ_j − θ_i)] / n_adversaries`, where `n`
/// counts every update in the victim's mean (own, honest and adversarial).
pub fn state_override_scc_toward(
    view: &AdversaryView<'_>,
    target: &ParamVector,
    delta: f64,
    n: usize,
    n_adversaries: usize,
) -> Result<ParamVector> {
    let own = view
        .victim_own_update
        .ok_or_else(|| Error::precondition("SCC attack needs the victim's own update"))?;
    if n_adversaries == 0 {
        return Err(Error::precondition("no adversaries to split the update"));
    }
    let mut deviation = state_override_scc(view, delta)?;
    deviation.axpy(n as f64, &target.try_sub(own)?);
    let mut crafted = own.clone();
    crafted.axpy(1.0 / n_adversaries as f64, &deviation);
    Ok(crafted)
}

/// `(1/n)·Σ_j (θ_i⁰ − θ_j⁰)` over the victim's recorded neighbors, with
/// `n` the number of those neighbors.
pub fn dissensus(initial_updates: &BTreeMap<usize, ParamVector>, victim_id: usize) -> Result<ParamVector> {
    let own = initial_updates
        .get(&victim_id)
        .ok_or_else(|| Error::precondition(format!("no initial update for victim {victim_id}")))?;
    let n = initial_updates.len() - 1;
    let mut out = ParamVector::zeros(own.len());
    if n == 0 {
        return Ok(out);
    }
    for (&j, u) in initial_updates {
        if j != victim_id {
            out.axpy(1.0, &own.try_sub(u)?);
        }
    }
    Ok(out.scale(1.0 / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetKind {
    AllZero,
    /// Base parameters with some coordinates replaced.
    WeightOverride { overrides: BTreeMap<usize, f64> },
}

/// Builds `m_target`. `base` supplies the untouched coordinates of a
/// weight override.
pub fn build_target(kind: &TargetKind, shape: &ModelShape, base: &ParamVector) -> Result<ParamVector> {
    let len = shape.param_count();
    match kind {
        TargetKind::AllZero => Ok(ParamVector::zeros(len)),
        TargetKind::WeightOverride { overrides } => {
            if base.len() != len {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    actual: base.len(),
                    context: "target base",
                });
            }
            let mut out = base.clone();
            for (&i, &v) in overrides {
                if i >= len {
                    return Err(Error::invalid(format!(
                        "override index {i} out of range for {len} parameters"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::invalid(format!("override value at {i} is not finite")));
                }
                out.as_mut_slice()[i] = v;
            }
            Ok(out)
        }
    }
}

/// Scales `crafted` down until its norm is at most `delta`.
pub fn fit_norm_bound(crafted: &ParamVector, delta: f64) -> ParamVector {
    let norm = crafted.norm();
    if norm <= delta {
        return crafted.clone();
    }
    let mut out = crafted.scale(delta / norm);
    // guard against rounding just above the bound
    while out.norm() > delta {
        out = out.scale(1.0 - 1e-12);
    }
    out
}

/// Moves `n_adversaries` identical copies of `crafted` toward the honest
/// centroid, `a(α) = c + α(crafted − c)`, and returns the largest `α` on a
/// bisection in `[0, 1]` for which every copy is among the `n − f`
/// updates Multi-KRUM keeps.
///
/// The adversarial copies are placed after the honest updates, which is
/// the worst position under Multi-KRUM's tie rule.
pub fn fit_multi_krum(
    honest: &[&ParamVector],
    crafted: &ParamVector,
    n_adversaries: usize,
    f: usize,
) -> Result<(ParamVector, f64)> {
    if honest.is_empty() {
        return Ok((crafted.clone(), 1.0));
    }
    let n_h = honest.len();
    let n = n_h + n_adversaries;
    let k = n
        .checked_sub(f + 2)
        .filter(|&k| k >= 1)
        .ok_or_else(|| Error::precondition(format!("KRUM needs n - f - 2 >= 1 (n = {n}, f = {f})")))?;
    let centroid = ParamVector::mean_of(honest.iter().copied())?;
    let v = crafted.try_sub(&centroid)?;
    let vv = v.norm_sq();
    // ||c + αv − h||² = ||c − h||² + 2α v·(c − h) + α²||v||²
    let mut cc = Vec::with_capacity(n_h);
    let mut vc = Vec::with_capacity(n_h);
    for h in honest {
        let d = centroid.try_sub(h)?;
        cc.push(d.norm_sq());
        vc.push(v.dot(&d));
    }
    let mut hh = vec![0.0; n_h * n_h];
    for i in 0..n_h {
        for j in (i + 1)..n_h {
            let d = honest[i].dist(honest[j]);
            hh[i * n_h + j] = d;
            hh[j * n_h + i] = d;
        }
    }
    let accepted = |alpha: f64| -> bool {
        let to_adv: Vec<f64> = (0..n_h)
            .map(|j| (cc[j] + 2.0 * alpha * vc[j] + alpha * alpha * vv).max(0.0).sqrt())
            .collect();
        let smallest = |mut d: Vec<f64>| {
            d.sort_by(f64::total_cmp);
            d.iter().take(k).sum::<f64>()
        };
        let mut scores = Vec::with_capacity(n);
        for i in 0..n_h {
            let mut d: Vec<f64> = (0..n_h).filter(|&j| j != i).map(|j| hh[i * n_h + j]).collect();
            d.extend(std::iter::repeat(to_adv[i]).take(n_adversaries));
            scores.push(smallest(d));
        }
        let mut d = to_adv.clone();
        d.extend(std::iter::repeat(0.0).take(n_adversaries - 1));
        let adv_score = smallest(d);
        // adversaries sit after the honest ones, so strict beating is needed
        // against every honest update that is not itself displaced
        let better = scores.iter().filter(|&&s| s <= adv_score).count();
        better + n_adversaries <= n - f
    };
    let alpha = if accepted(1.0) {
        1.0
    } else if !accepted(0.0) {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if accepted(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    // the closed-form distances round differently from a direct
    // recomputation; back off until the direct check agrees
    let place = |alpha: f64| {
        let mut out = centroid.clone();
        out.axpy(alpha, &v);
        out
    };
    let kept_directly = |point: &ParamVector| -> Result<bool> {
        let mut all: Vec<ParamVector> = honest.iter().map(|h| (*h).clone()).collect();
        all.extend(std::iter::repeat(point.clone()).take(n_adversaries));
        let scores = krum_scores(&all, f)?;
        let rank = |i: usize| (0..n).filter(|&j| scores[j] < scores[i] || (scores[j] == scores[i] && j < i)).count();
        Ok((n_h..n).all(|i| rank(i) < n - f))
    };
    let mut alpha = alpha;
    let mut out = place(alpha);
    let mut tries = 0;
    while alpha > 0.0 && !kept_directly(&out)? && tries < 60 {
        alpha *= 1.0 - 1e-6 * 2f64.powi(tries / 3);
        out = place(alpha);
        tries += 1;
    }
    Ok((out, alpha))
}
