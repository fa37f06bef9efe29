use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Per-user sample indices into a shared dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n_users(&self) -> usize {
        self.assignments.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Checks that indices are in range and pairwise disjoint.
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let mut seen = vec![false; n_samples];
        for (user, indices) in self.assignments.iter().enumerate() {
            for &i in indices {
                if i >= n_samples {
                    return Err(Error::invalid(format!(
                        "user {user}: index {i} out of range for {n_samples} samples"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("index {i} assigned twice")));
                }
            }
        }
        Ok(())
    }

    /// The local dataset of each user.
    pub fn materialize(&self, data: &Dataset) -> Vec<Dataset> {
        self.assignments
            .iter()
            .enumerate()
            .map(|(u, idx)| data.select(idx).with_name(format!("{}/user{u}", data.name)))
            .collect()
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, &[rng::stream::PARTITION]));
    order
}

/// Shuffles the samples and deals them round-robin.
pub fn partition_iid(n_samples: usize, n_users: usize, rng_seed: u64) -> Result<Partition> {
    if n_users == 0 {
        return Err(Error::invalid("n_users must be at least 1"));
    }
    let mut assignments = vec![Vec::new(); n_users];
    for (k, i) in shuffled(n_samples, rng_seed).into_iter().enumerate() {
        assignments[k % n_users].push(i);
    }
    Ok(Partition { assignments })
}

/// Shuffles the samples and cuts consecutive blocks of the requested sizes.
pub fn partition_iid_sized(n_samples: usize, sizes: &[usize], rng_seed: u64) -> Result<Partition> {
    let total: usize = sizes.iter().sum();
    if total > n_samples {
        return Err(Error::invalid(format!(
            "requested {total} samples but only {n_samples} exist"
        )));
    }
    let order = shuffled(n_samples, rng_seed);
    let mut start = 0;
    let assignments = sizes
        .iter()
        .map(|&s| {
            let block = order[start..start + s].to_vec();
            start += s;
            block
        })
        .collect();
    Ok(Partition { assignments })
}

/// Splits samples by class.
///
/// When `n_users` is a multiple of the class count, every class is cut into
/// `n_users / K` near-equal shards and user `u` holds shard `u mod` of class
/// `u / shards`. Otherwise the label-sorted sample order is cut into
/// `n_users` contiguous near-equal chunks.
pub fn partition_by_label(data: &Dataset, n_users: usize) -> Result<Partition> {
    let labels = data
        .labels()
        .classes()
        .ok_or_else(|| Error::invalid("label partitioning needs class labels"))?;
    let k = data.n_classes().expect("class labels");
    if n_users == 0 || n_users > data.len() {
        return Err(Error::invalid(format!(
            "cannot split {} samples by label among {n_users} users",
            data.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if n_users % k == 0 {
        let shards = n_users / k;
        if let Some(c) = by_class.iter().position(|ix| ix.len() < shards) {
            return Err(Error::invalid(format!(
                "class {c} has {} samples, fewer than its {shards} shards",
                by_class[c].len()
            )));
        }
        let assignments = by_class
            .iter()
            .flat_map(|ix| split_even(ix, shards))
            .collect();
        return Ok(Partition { assignments });
    }
    let sorted: Vec<usize> = by_class.into_iter().flatten().collect();
    Ok(Partition {
        assignments: split_even(&sorted, n_users),
    })
}

/// Contiguous chunks whose sizes differ by at most one, larger chunks first.
fn split_even(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut start = 0;
    (0..parts)
        .map(|p| {
            let len = base + usize::from(p < extra);
            let chunk = items[start..start + len].to_vec();
            start += len;
            chunk
        })
        .collect()
}

/// Seeded disjoint train/validation subsample.
pub fn subsample_split(
    data: &Dataset,
    n_train: usize,
    n_validation: usize,
    rng_seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_train + n_validation > data.len() {
        return Err(Error::invalid(format!(
            "cannot draw {n_train}+{n_validation} samples from {}",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::rng_for(rng_seed, &[rng::stream::SUBSAMPLE]));
    let train = data
        .select(&order[..n_train])
        .with_name(format!("{}-train", data.name));
    let validation = data
        .select(&order[n_train..n_train + n_validation])
        .with_name(format!("{}-validation", data.name));
    Ok((train, validation))
}
