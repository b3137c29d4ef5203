//! Weighted partitioning along the space-filling curve.

use crate::fabric::Rank;

/// Cost model `w = max(1, round(scale * n^exponent))` for a cell with `n` DoFs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightPolicy {
    pub exponent: f64,
    pub scale: u64,
}

impl Default for WeightPolicy {
    fn default() -> Self {
        WeightPolicy { exponent: 1.9, scale: 1 }
    }
}

impl WeightPolicy {
    pub fn new(exponent: f64) -> Self {
        WeightPolicy { exponent, ..Default::default() }
    }
}

/// Integer weight of a cell with `n_dofs` degrees of freedom, rounded half up.
pub fn cell_weight(n_dofs: usize, policy: WeightPolicy) -> u64 {
    let raw = policy.scale as f64 * (n_dofs.max(1) as f64).powf(policy.exponent);
    ((raw + 0.5).floor() as u64).max(1)
}

/// Rank of every cell: `floor(prefix_exclusive(i) * P / W)`. Cells must be in
/// curve order; the result is non-decreasing so every rank gets one
/// contiguous segment, possibly empty.
pub fn partition_by_weight(weights: &[u64], nranks: usize) -> Vec<Rank> {
    assert!(nranks >= 1, "at least one rank required");
    let total: u128 = weights.iter().map(|&w| w as u128).sum();
    let mut prefix = 0u128;
    weights
        .iter()
        .map(|&w| {
            let r = (prefix * nranks as u128 / total) as Rank;
            prefix += w as u128;
            r
        })
        .collect()
}

/// Summed weight per rank.
pub fn rank_loads(weights: &[u64], owners: &[Rank], nranks: usize) -> Vec<u64> {
    let mut loads = vec![0u64; nranks];
    for (&w, &r) in weights.iter().zip(owners) {
        loads[r] += w;
    }
    loads
}

/// `max / mean` of the per-rank loads; 1 for a perfect split.
pub fn imbalance(loads: &[u64]) -> f64 {
    let total: u64 = loads.iter().sum();
    if total == 0 {
        return 1.0;
    }
    let max = *loads.iter().max().unwrap() as f64;
    max * loads.len() as f64 / total as f64
}
