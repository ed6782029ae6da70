//! Ranking, rank/name permutations and capital distribution curves.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::types::WeightHistory;

/// Ranks values in descending order. Returns `(rank_of, name_at)` where
/// `rank_of[i]` is the zero-based rank of index `i` and `name_at[k]` is the
/// index holding rank `k`. Ties go to the lower index.
pub fn rank_permutation(values: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot rank an empty vector".into()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value at index {i}")));
    }
    let mut name_at = vec![0usize; values.len()];
    let mut rank_of = vec![0usize; values.len()];
    fill_ranks(values, &mut name_at, &mut rank_of);
    Ok((rank_of, name_at))
}

/// In-place ranking for hot loops; `values` must be finite.
pub(crate) fn fill_ranks(values: &[f64], name_at: &mut [usize], rank_of: &mut [usize]) {
    for (i, slot) in name_at.iter_mut().enumerate() {
        *slot = i;
    }
    // stable sort keeps ascending index order among equal values
    name_at.sort_by(|&a, &b| descending(values[a], values[b]));
    for (k, &i) in name_at.iter().enumerate() {
        rank_of[i] = k;
    }
}

fn descending(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Ranked market weights at one time, largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct CapitalDistributionCurve {
    pub ranked_weights: Vec<f64>,
}

impl CapitalDistributionCurve {
    /// `(log k, log μ_(k))` with one-based `k`, for log-log plots.
    pub fn log_log(&self) -> Vec<(f64, f64)> {
        self.ranked_weights
            .iter()
            .enumerate()
            .map(|(k, w)| (((k + 1) as f64).ln(), w.ln()))
            .collect()
    }

    /// Largest gap between the cumulative ranked-weight profiles of two curves
    /// over the same number of ranks.
    pub fn kolmogorov_distance(&self, other: &Self) -> Result<f64> {
        if self.ranked_weights.len() != other.ranked_weights.len() {
            return Err(Error::Dimension("curves have different lengths".into()));
        }
        let (mut a, mut b, mut d) = (0.0f64, 0.0f64, 0.0f64);
        for (x, y) in self.ranked_weights.iter().zip(&other.ranked_weights) {
            a += x;
            b += y;
            d = d.max((a - b).abs());
        }
        Ok(d)
    }
}

/// Capital distribution curve at step `t`.
pub fn capital_distribution_curve(weights: &WeightHistory, t: usize) -> Result<CapitalDistributionCurve> {
    if t >= weights.n_steps() {
        return Err(Error::InvalidInput(format!(
            "step {t} out of range for {} steps",
            weights.n_steps()
        )));
    }
    let ranked_weights = weights
        .name_at(t)
        .iter()
        .map(|&i| weights.log_weight(t, i as usize).exp())
        .collect();
    Ok(CapitalDistributionCurve { ranked_weights })
}

/// Row-major `[T x n]` matrix of ranked log weights `log μ_(k)(t)`.
pub fn ranked_series(weights: &WeightHistory) -> Vec<f64> {
    let mut out = Vec::with_capacity(weights.log_weights().len());
    for t in 0..weights.n_steps() {
        out.extend(weights.name_at(t).iter().map(|&i| weights.log_weight(t, i as usize)));
    }
    out
}
