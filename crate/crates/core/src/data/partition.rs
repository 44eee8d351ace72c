//! Client partitioning: IID dealing and per-class Dirichlet label skew.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::dataset::LabeledDataset;
use crate::error::{FedFgError, Result};
use crate::rng;

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub clients: usize,
    /// Dirichlet concentration; smaller means more heterogeneous shards.
    pub beta: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(FedFgError::config("clients", "must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(FedFgError::config("beta", "must be a positive finite number"));
        }
        Ok(())
    }
}

/// Draws one point from `Dirichlet(beta * 1_n)` via normalised Gamma variates.
fn dirichlet<R: Rng + ?Sized>(beta: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta validated positive");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

/// Split `indices` at the cumulative proportions.
fn split_by_proportions(indices: &[usize], proportions: &[f64], shards: &mut [Vec<usize>]) {
    let n = indices.len();
    let mut cum = 0.0;
    let mut start = 0;
    for (j, p) in proportions.iter().enumerate() {
        cum += p;
        let end = if j + 1 == proportions.len() {
            n
        } else {
            ((cum * n as f64).floor() as usize).clamp(start, n)
        };
        shards[j].extend_from_slice(&indices[start..end]);
        start = end;
    }
}

/// Per-class Dirichlet allocation of sample indices to clients. Allocations
/// that leave a client empty are redrawn.
pub fn dirichlet_partition_indices(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if spec.clients == 1 {
        return Ok(vec![(0..ds.len()).collect()]);
    }
    let mut rng = rng::seeded(spec.seed);
    let by_class = ds.indices_by_class();
    for _ in 0..MAX_ATTEMPTS {
        let mut shards = vec![Vec::new(); spec.clients];
        for class_indices in &by_class {
            let mut idx = class_indices.clone();
            idx.shuffle(&mut rng);
            let p = dirichlet(spec.beta, spec.clients, &mut rng);
            split_by_proportions(&idx, &p, &mut shards);
        }
        if shards.iter().all(|s| !s.is_empty()) {
            shards.iter_mut().for_each(|s| s.sort_unstable());
            return Ok(shards);
        }
    }
    Err(FedFgError::config(
        "partition",
        format!(
            "could not produce {} non-empty shards in {MAX_ATTEMPTS} attempts (beta {})",
            spec.clients, spec.beta
        ),
    ))
}

pub fn dirichlet_partition(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<LabeledDataset>> {
    dirichlet_partition_indices(ds, spec)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect()
}

/// Shuffle and deal round-robin: near-equal, label-balanced in expectation.
pub fn iid_partition_indices(ds: &LabeledDataset, clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if clients == 0 || clients > ds.len() {
        return Err(FedFgError::config(
            "clients",
            format!("cannot deal {} samples to {clients} clients", ds.len()),
        ));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut shards = vec![Vec::new(); clients];
    for (k, i) in order.into_iter().enumerate() {
        shards[k % clients].push(i);
    }
    shards.iter_mut().for_each(|s| s.sort_unstable());
    Ok(shards)
}

pub fn iid_partition(ds: &LabeledDataset, clients: usize, seed: u64) -> Result<Vec<LabeledDataset>> {
    iid_partition_indices(ds, clients, seed)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect()
}

/// Shannon entropy (nats) of a shard's label histogram.
pub fn label_entropy(ds: &LabeledDataset) -> f64 {
    let n = ds.len() as f64;
    ds.class_histogram()
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}
