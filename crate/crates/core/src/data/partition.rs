use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngState;

pub const MAX_PARTITION_ATTEMPTS: usize = 100;

/// Disjoint client shards covering every training index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub shards: Vec<Vec<usize>>,
    pub beta: f64,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }
}

fn dirichlet(k: usize, beta: f64, rng: &mut RngState) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta validated positive");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng.inner_mut())).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.into_iter().map(|g| g / sum).collect()
    } else {
        // Every gamma draw underflowed: all mass on one client.
        let mut p = vec![0.0; k];
        p[rng.below(k)] = 1.0;
        p
    }
}

/// Label-skewed split: for each class draw `p ~ Dir(beta · 1_K)` and hand that
/// class's (shuffled) indices to clients in proportion to `p`. Redraws until
/// every shard has at least `min_shard` indices.
pub fn dirichlet_partition(labels: &[usize], k: usize, beta: f64, seed: u64, min_shard: usize) -> Result<PartitionPlan> {
    if k == 0 {
        return Err(Error::InvalidArgument("client count must be >= 1".into()));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be finite and > 0, got {beta}")));
    }
    if labels.len() < k * min_shard.max(1) {
        return Err(Error::Partition(format!(
            "{} samples cannot give {k} shards of at least {} each",
            labels.len(),
            min_shard.max(1)
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = RngState::new(seed);
    for _ in 0..MAX_PARTITION_ATTEMPTS {
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); k];
        for idx in &by_class {
            let mut idx = idx.clone();
            rng.shuffle(&mut idx);
            let p = dirichlet(k, beta, &mut rng);
            let n = idx.len();
            let mut start = 0;
            let mut cum = 0.0;
            for (client, pc) in p.iter().enumerate() {
                cum += pc;
                let end = if client + 1 == k { n } else { ((cum * n as f64).round() as usize).min(n) };
                let end = end.max(start);
                shards[client].extend_from_slice(&idx[start..end]);
                start = end;
            }
        }
        if shards.iter().all(|s| s.len() >= min_shard.max(1)) {
            for s in &mut shards {
                s.sort_unstable();
            }
            return Ok(PartitionPlan { shards, beta, seed });
        }
    }
    Err(Error::Partition(format!(
        "no partition with every shard >= {min_shard} after {MAX_PARTITION_ATTEMPTS} attempts (K={k}, beta={beta})"
    )))
}

/// Normalized label histogram over `classes`.
pub fn label_distribution(labels: impl IntoIterator<Item = usize>, classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; classes];
    let mut total = 0.0;
    for c in labels {
        counts[c] += 1.0;
        total += 1.0;
    }
    if total > 0.0 {
        for v in &mut counts {
            *v /= total;
        }
    }
    counts
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Jensen-Shannon divergence in nats.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}
