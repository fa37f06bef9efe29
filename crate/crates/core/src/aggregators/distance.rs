//! Distance-based evaluators: plain mean, Multi-KRUM, SCC and RoFL.

use super::{check_equal_lengths, mean_of_accepted, AggregationOutcome};
use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Arithmetic mean with every update accepted.
pub fn mean_aggregate(updates: &[ParamVector]) -> Result<AggregationOutcome> {
    check_equal_lengths(updates)?;
    let n = updates.len();
    Ok(AggregationOutcome::unclipped(
        ParamVector::mean_of(updates)?,
        vec![0.0; n],
        vec![true; n],
    ))
}

fn krum_neighbours(n: usize, f: usize) -> Result<usize> {
    let k = n
        .checked_sub(f + 2)
        .filter(|&k| k >= 1)
        .ok_or_else(|| Error::precondition(format!("KRUM needs n - f - 2 >= 1 (n = {n}, f = {f})")))?;
    Ok(k)
}

/// Sum of the `n − f − 2` smallest values in `distances`.
fn sum_smallest(mut distances: Vec<f64>, k: usize) -> f64 {
    distances.sort_by(f64::total_cmp);
    distances.iter().take(k).sum()
}

/// KRUM score of `theta`: summed L2 distance to its `n − f − 2` nearest
/// elements of `others`. `theta` itself must not be in `others`.
pub fn krum_score(theta: &ParamVector, others: &[ParamVector], n: usize, f: usize) -> Result<f64> {
    let k = krum_neighbours(n, f)?;
    if others.len() < k {
        return Err(Error::precondition(format!(
            "KRUM needs {k} other updates, got {}",
            others.len()
        )));
    }
    let distances = others
        .iter()
        .map(|o| theta.try_sub(o).map(|d| d.norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok(sum_smallest(distances, k))
}

/// KRUM scores of every update against all the others.
pub fn krum_scores(updates: &[ParamVector], f: usize) -> Result<Vec<f64>> {
    check_equal_lengths(updates)?;
    let n = updates.len();
    let k = krum_neighbours(n, f)?;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = updates[i].dist(&updates[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i * n + j]).collect();
            sum_smallest(row, k)
        })
        .collect())
}

/// Indices of the `count` lowest scores, ties resolved by position.
pub(crate) fn lowest_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Mean of the `n − f` updates with the lowest KRUM score.
pub fn multi_krum_aggregate(updates: &[ParamVector], f: usize) -> Result<AggregationOutcome> {
    let scores = krum_scores(updates, f)?;
    let mut accepted = vec![false; updates.len()];
    for i in lowest_indices(&scores, updates.len() - f) {
        accepted[i] = true;
    }
    let (aggregate, _) = mean_of_accepted(updates, &accepted)?;
    Ok(AggregationOutcome::unclipped(aggregate, scores, accepted))
}

/// `min(1, δ / ||θ − ref||) · (θ − ref) + ref`.
pub fn scc_clip(theta: &ParamVector, reference: &ParamVector, delta: f64) -> ParamVector {
    let diff = theta.sub(reference);
    let norm = diff.norm();
    if norm <= delta {
        return theta.clone();
    }
    let mut out = reference.clone();
    out.axpy(delta / norm, &diff);
    out
}

/// Clips every received update toward `own_update` and averages the clipped
/// updates together with `own_update`.
///
/// Scores are `||θ − own_update||`; all updates are accepted.
pub fn scc_aggregate(
    updates: &[ParamVector],
    own_update: &ParamVector,
    delta: f64,
) -> Result<AggregationOutcome> {
    if !(delta >= 0.0) {
        return Err(Error::invalid("SCC delta must be >= 0"));
    }
    for u in updates {
        if u.len() != own_update.len() {
            return Err(Error::DimensionMismatch {
                expected: own_update.len(),
                actual: u.len(),
                context: "update length",
            });
        }
    }
    let mut scores = Vec::with_capacity(updates.len());
    let mut clipped = Vec::with_capacity(updates.len());
    let mut sum = own_update.clone();
    for u in updates {
        let d = u.dist(own_update);
        scores.push(d);
        clipped.push(d > delta);
        sum = sum.add(&scc_clip(u, own_update, delta));
    }
    let aggregate = sum.scale(1.0 / (updates.len() + 1) as f64);
    Ok(AggregationOutcome {
        aggregate,
        per_update_score: scores,
        accepted: vec![true; updates.len()],
        clipped,
        empty_acceptance: false,
    })
}

/// Root-mean-square distance from `own_update` to its neighbors.
pub fn dynamic_delta(own_update: &ParamVector, neighbor_updates: &[ParamVector]) -> Result<f64> {
    if neighbor_updates.is_empty() {
        return Err(Error::precondition("dynamic delta needs at least one neighbor"));
    }
    let mut total = 0.0;
    for u in neighbor_updates {
        total += own_update.try_sub(u)?.norm_sq();
    }
    Ok((total / neighbor_updates.len() as f64).sqrt())
}

/// Accepts updates with `||θ|| ≤ δ` and averages them.
pub fn rofl_aggregate(updates: &[ParamVector], delta: f64) -> Result<AggregationOutcome> {
    check_equal_lengths(updates)?;
    let scores: Vec<f64> = updates.iter().map(ParamVector::norm).collect();
    let accepted: Vec<bool> = scores.iter().map(|&s| s <= delta).collect();
    let (aggregate, empty) = mean_of_accepted(updates, &accepted)?;
    let mut out = AggregationOutcome::unclipped(aggregate, scores, accepted);
    out.empty_acceptance = empty;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    fn ones_d(values: &[f64]) -> Vec<ParamVector> {
        values.iter().map(|&v| pv(&[v])).collect()
    }

    #[test]
    fn mean_of_three() {
        let out = mean_aggregate(&[pv(&[1.0, 0.0]), pv(&[0.0, 1.0]), pv(&[-1.0, -1.0])]).unwrap();
        assert_eq!(out.aggregate, pv(&[0.0, 0.0]));
        assert!(out.accepted.iter().all(|&a| a));
        assert!(out.per_update_score.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn mean_of_single_and_copies() {
        let v = pv(&[0.25, -3.0]);
        assert_eq!(mean_aggregate(&[v.clone()]).unwrap().aggregate, v);
        assert_eq!(mean_aggregate(&vec![v.clone(); 5]).unwrap().aggregate, v);
        assert!(mean_aggregate(&[]).is_err());
    }

    #[test]
    fn krum_scores_on_line() {
        let u = ones_d(&[0.0, 1.0, 2.0, 10.0]);
        assert_eq!(krum_scores(&u, 1).unwrap(), vec![1.0, 1.0, 1.0, 8.0]);
        assert_eq!(krum_score(&u[3], &u[..3], 4, 1).unwrap(), 8.0);
    }

    #[test]
    fn krum_score_zero_with_duplicates() {
        let theta = pv(&[1.0, 2.0]);
        let others = vec![theta.clone(), theta.clone(), pv(&[9.0, 9.0])];
        assert_eq!(krum_score(&theta, &others, 5, 1).unwrap(), 0.0);
    }

    #[test]
    fn krum_rejects_too_few() {
        assert!(krum_scores(&ones_d(&[0.0, 1.0, 2.0]), 1).is_err());
        assert!(krum_score(&pv(&[0.0]), &ones_d(&[1.0]), 5, 1).is_err());
    }

    #[test]
    fn multi_krum_on_line() {
        let out = multi_krum_aggregate(&ones_d(&[0.0, 1.0, 2.0, 10.0]), 1).unwrap();
        assert_eq!(out.accepted, vec![true, true, true, false]);
        assert_eq!(out.aggregate, pv(&[1.0]));
    }

    #[test]
    fn multi_krum_identical_updates() {
        let v = pv(&[0.5, 0.5, -1.0]);
        let out = multi_krum_aggregate(&vec![v.clone(); 6], 2).unwrap();
        assert_eq!(out.aggregate, v);
        assert_eq!(out.accepted, vec![true, true, true, true, false, false]);
    }

    #[test]
    fn clip_examples() {
        let c = scc_clip(&pv(&[3.0, 4.0]), &pv(&[0.0, 0.0]), 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert!((c.norm() - 1.0).abs() < 1e-12);
        let inside = pv(&[0.1, 0.2]);
        assert_eq!(scc_clip(&inside, &pv(&[0.0, 0.0]), 1.0), inside);
        let r = pv(&[1.0, -1.0]);
        assert_eq!(scc_clip(&pv(&[5.0, 5.0]), &r, 0.0), r);
    }

    #[test]
    fn scc_without_clipping_is_mean() {
        let own = pv(&[0.0, 0.0]);
        let others = vec![pv(&[0.1, 0.0]), pv(&[0.0, -0.2])];
        let out = scc_aggregate(&others, &own, 1.0).unwrap();
        let mut all = others.clone();
        all.push(own);
        let mean = mean_aggregate(&all).unwrap().aggregate;
        assert!(out.aggregate.dist(&mean) < 1e-15);
        assert_eq!(out.clipped, vec![false, false]);
    }

    #[test]
    fn scc_distant_update_bounded() {
        let own = pv(&[1.0, 1.0]);
        let out = scc_aggregate(&[pv(&[100.0, -50.0])], &own, 0.5).unwrap();
        // the clipped term moves the pre-mean sum by at most delta
        let displacement = out.aggregate.scale(2.0).sub(&own.scale(2.0)).norm();
        assert!(displacement <= 0.5 + 1e-12);
        assert_eq!(out.clipped, vec![true]);
    }

    #[test]
    fn scc_zero_delta_returns_own() {
        let own = pv(&[0.3, -0.7]);
        let out = scc_aggregate(&[pv(&[4.0, 4.0]), pv(&[-2.0, 1.0])], &own, 0.0).unwrap();
        assert!(out.aggregate.dist(&own) < 1e-15);
    }

    #[test]
    fn dynamic_delta_examples() {
        let d = dynamic_delta(&pv(&[0.0]), &ones_d(&[3.0, 4.0])).unwrap();
        assert!((d - 3.5355339059327378).abs() < 1e-12);
        assert_eq!(dynamic_delta(&pv(&[2.0]), &ones_d(&[2.0, 2.0])).unwrap(), 0.0);
        let scaled = dynamic_delta(&pv(&[0.0]), &ones_d(&[-6.0, -8.0])).unwrap();
        assert!((scaled - 2.0 * d).abs() < 1e-12);
        assert!(dynamic_delta(&pv(&[0.0]), &[]).is_err());
    }

    #[test]
    fn rofl_boundary_and_rejection() {
        let out = rofl_aggregate(&[pv(&[0.6, 0.8]), pv(&[3.0, 4.0]), pv(&[0.0, 0.0])], 1.0).unwrap();
        assert_eq!(out.accepted, vec![true, false, true]);
        assert_eq!(out.per_update_score[1], 5.0);
        assert!(out.aggregate.dist(&pv(&[0.3, 0.4])) < 1e-15);
        assert!(!out.empty_acceptance);
    }

    #[test]
    fn rofl_empty_acceptance_gives_zero() {
        let out = rofl_aggregate(&[pv(&[3.0, 4.0])], 1.0).unwrap();
        assert_eq!(out.aggregate, pv(&[0.0, 0.0]));
        assert!(out.empty_acceptance);
    }
}
