//! Rank-based variances, growth rates, local times and occupation rates.

use crate::error::{Error, Result};
use crate::types::{FirstOrderParams, OccupationMatrix, ValidityReport, WeightHistory};

/// Annualized first-order statistics of a weight history, indexed by rank.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderEstimates {
    /// Realized quadratic variation rate of each ranked log weight.
    pub sigma2: Vec<f64>,
    /// Growth rate of whichever name holds each rank.
    pub g_rank: Vec<f64>,
    /// Local-time rates between ranks `k` and `k + 1`, `n - 1` entries.
    pub lambda: Vec<f64>,
    /// `(log μ_(k)(T) − log μ_(k)(0)) / T`.
    pub net_rank_drift: Vec<f64>,
    pub span_years: f64,
}

impl FirstOrderEstimates {
    /// Local-time rate with the boundary conventions `λ_{0,1} = λ_{n,n+1} = 0`,
    /// indexed so that `padded_lambda(k)` is the rate below rank `k` (zero-based).
    pub fn padded_lambda(&self, k: usize) -> f64 {
        if k == 0 || k > self.lambda.len() {
            0.0
        } else {
            self.lambda[k - 1]
        }
    }
}

fn require_increments(weights: &WeightHistory) -> Result<()> {
    if weights.n_steps() < 2 {
        return Err(Error::InvalidInput("estimation needs at least 2 observations".into()));
    }
    Ok(())
}

pub fn estimate_rank_variances(weights: &WeightHistory) -> Result<Vec<f64>> {
    require_increments(weights)?;
    let n = weights.n_assets();
    let mut qv = vec![0.0; n];
    for t in 0..weights.n_steps() - 1 {
        for (k, acc) in qv.iter_mut().enumerate() {
            let d = weights.ranked_log_weight(t + 1, k) - weights.ranked_log_weight(t, k);
            *acc += d * d;
        }
    }
    let span = weights.span_years();
    Ok(qv.into_iter().map(|q| q / span).collect())
}

/// Attributes each step's log-weight change of every name to the rank that
/// name held at the start of the step.
pub fn estimate_rank_growth(weights: &WeightHistory) -> Result<Vec<f64>> {
    require_increments(weights)?;
    let mut sums = vec![0.0; weights.n_assets()];
    for t in 0..weights.n_steps() - 1 {
        let now = weights.row(t);
        let next = weights.row(t + 1);
        for (i, &k) in weights.rank_of(t).iter().enumerate() {
            sums[k as usize] += next[i] - now[i];
        }
    }
    let span = weights.span_years();
    Ok(sums.into_iter().map(|s| s / span).collect())
}

pub fn net_rank_drift(weights: &WeightHistory) -> Result<Vec<f64>> {
    require_increments(weights)?;
    let last = weights.n_steps() - 1;
    let span = weights.span_years();
    Ok((0..weights.n_assets())
        .map(|k| (weights.ranked_log_weight(last, k) - weights.ranked_log_weight(0, k)) / span)
        .collect())
}

/// Local-time rates from the telescoped rank decomposition:
/// `λ_{k,k+1} = 2 Σ_{j≤k} (A_j − 𝐠_j)`.
pub fn estimate_local_times(weights: &WeightHistory) -> Result<Vec<f64>> {
    let g = estimate_rank_growth(weights)?;
    let a = net_rank_drift(weights)?;
    Ok(local_times_from(&g, &a))
}

fn local_times_from(g_rank: &[f64], net: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    g_rank
        .iter()
        .zip(net)
        .take(g_rank.len().saturating_sub(1))
        .map(|(g, a)| {
            acc += 2.0 * (a - g);
            acc
        })
        .collect()
}

/// Fraction of observations at which each asset holds each rank.
pub fn estimate_occupation_matrix(weights: &WeightHistory) -> OccupationMatrix {
    let n = weights.n_assets();
    let mut counts = vec![0u64; n * n];
    for t in 0..weights.n_steps() {
        for (i, &k) in weights.rank_of(t).iter().enumerate() {
            counts[k as usize * n + i] += 1;
        }
    }
    let total = weights.n_steps() as f64;
    OccupationMatrix::from_raw(n, counts.into_iter().map(|c| c as f64 / total).collect())
}

pub fn estimate_first_order(weights: &WeightHistory) -> Result<FirstOrderEstimates> {
    let sigma2 = estimate_rank_variances(weights)?;
    let g_rank = estimate_rank_growth(weights)?;
    let net = net_rank_drift(weights)?;
    let lambda = local_times_from(&g_rank, &net);
    Ok(FirstOrderEstimates {
        sigma2,
        g_rank,
        lambda,
        net_rank_drift: net,
        span_years: weights.span_years(),
    })
}

/// Gaussian-kernel smoothing along the rank axis, reflecting at both ends.
/// `bandwidth` is in ranks.
pub fn smooth_by_rank(values: &[f64], bandwidth: f64) -> Result<Vec<f64>> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = values.len() as i64;
    let reach = (10.0 * bandwidth).ceil().min(3.0 * n as f64) as i64;
    let kernel = |d: i64| (-0.5 * (d as f64 / bandwidth).powi(2)).exp();
    let out = (0..n)
        .map(|k| {
            let (mut num, mut den) = (0.0, 0.0);
            for p in (k - reach)..=(k + reach) {
                // image positions: -1 - j below zero, 2n - 1 - j above n - 1
                let j = if p < 0 {
                    -1 - p
                } else if p >= n {
                    2 * n - 1 - p
                } else {
                    p
                };
                if !(0..n).contains(&j) {
                    continue;
                }
                let w = kernel(k - p);
                num += w * values[j as usize];
                den += w;
            }
            num / den
        })
        .collect();
    Ok(out)
}

/// A first-order model and its stability report. Invalid models are kept and
/// flagged, never repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderModel {
    pub params: FirstOrderParams,
    pub validity: ValidityReport,
}

impl FirstOrderModel {
    pub fn is_valid(&self) -> bool {
        self.validity.is_valid()
    }
}

pub fn build_first_order_model(estimates: &FirstOrderEstimates) -> Result<FirstOrderModel> {
    if estimates.g_rank.iter().chain(&estimates.sigma2).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("first-order estimates contain non-finite values".into()));
    }
    let params = FirstOrderParams::new(
        demean(&estimates.g_rank),
        estimates.sigma2.iter().map(|s| s.sqrt()).collect(),
    )?;
    let validity = params.validate();
    Ok(FirstOrderModel { params, validity })
}

pub(crate) fn demean(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DEFAULT_DT;
    use proptest::prelude::*;

    fn never_crossing() -> WeightHistory {
        WeightHistory::from_weight_rows(
            DEFAULT_DT,
            &[vec![0.6, 0.4], vec![0.65, 0.35], vec![0.62, 0.38], vec![0.7, 0.3]],
        )
        .unwrap()
    }

    #[test]
    fn constant_weights_have_zero_variance() {
        let w = WeightHistory::from_weight_rows(DEFAULT_DT, &vec![vec![0.25, 0.75]; 5]).unwrap();
        assert_eq!(estimate_rank_variances(&w).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn variance_of_alternating_increments() {
        // one dominant asset whose log weight moves by exactly ±0.01 per day
        let n = 2;
        let mut lw = Vec::new();
        for t in 0..=250 {
            let x = if t % 2 == 0 { -0.01 } else { -0.02 };
            let other = (1.0 - f64::exp(x)).ln();
            lw.extend([x, other]);
        }
        let names = (0..n).map(|i| i.to_string()).collect();
        let w = WeightHistory::from_log_weights(DEFAULT_DT, names, lw).unwrap();
        let s2 = estimate_rank_variances(&w).unwrap();
        assert!((s2[0] - 0.025).abs() < 1e-12, "{}", s2[0]);
    }

    #[test]
    fn never_crossing_growth_and_local_times() {
        let w = never_crossing();
        let g = estimate_rank_growth(&w).unwrap();
        let span = 3.0 * DEFAULT_DT;
        assert!((g[0] - (0.7f64.ln() - 0.6f64.ln()) / span).abs() < 1e-9);
        assert!((g[1] - (0.3f64.ln() - 0.4f64.ln()) / span).abs() < 1e-9);
        let lam = estimate_local_times(&w).unwrap();
        assert_eq!(lam.len(), 1);
        assert!(lam[0].abs() < 1e-9);
        let theta = estimate_occupation_matrix(&w);
        assert_eq!(theta.entries(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn single_step_occupation_is_permutation() {
        let w = WeightHistory::from_weight_rows(DEFAULT_DT, &[vec![0.2, 0.5, 0.3]]).unwrap();
        let theta = estimate_occupation_matrix(&w);
        assert_eq!(theta.entries(), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(estimate_rank_growth(&w).is_err());
    }

    #[test]
    fn smoothing_edge_cases() {
        let c = vec![2.5; 9];
        for v in smooth_by_rank(&c, 3.0).unwrap() {
            assert!((v - 2.5).abs() < 1e-12);
        }
        let x = vec![1.0, -4.0, 7.0, 0.5];
        assert_eq!(smooth_by_rank(&x, 1e-3).unwrap(), x);
        assert!(smooth_by_rank(&x, 0.0).is_err());
    }

    #[test]
    fn smoothing_matches_brute_force_on_ramp() {
        let n = 40;
        let h = 2.5;
        let ramp: Vec<f64> = (0..n).map(|k| 0.1 * k as f64).collect();
        let got = smooth_by_rank(&ramp, h).unwrap();
        // brute force: extend by mirror images over three copies, full kernel sum
        let extended = |p: i64| -> f64 {
            let n = n as i64;
            let j = if p < 0 { -1 - p } else if p >= n { 2 * n - 1 - p } else { p };
            ramp[j as usize]
        };
        for k in 0..n as i64 {
            let (mut num, mut den) = (0.0, 0.0);
            for p in -(n as i64)..(2 * n as i64) {
                let w = (-0.5 * ((k - p) as f64 / h).powi(2)).exp();
                num += w * extended(p);
                den += w;
            }
            assert!((got[k as usize] - num / den).abs() < 1e-9);
        }
        // interior untouched, boundary bias bounded by slope times bandwidth
        let narrow = smooth_by_rank(&ramp, 1.5).unwrap();
        for k in 12..28 {
            assert!((narrow[k] - ramp[k]).abs() < 1e-9);
        }
        assert!((got[0] - ramp[0]).abs() < 0.1 * h);
        assert!((got[n - 1] - ramp[n - 1]).abs() < 0.1 * h);
    }

    #[test]
    fn build_model_demeans() {
        let est = |g: Vec<f64>| FirstOrderEstimates {
            sigma2: vec![0.04; g.len()],
            lambda: vec![0.0; g.len() - 1],
            net_rank_drift: vec![0.0; g.len()],
            g_rank: g,
            span_years: 1.0,
        };
        let m = build_first_order_model(&est(vec![-1.0, 1.0])).unwrap();
        assert_eq!(m.params.g, vec![-1.0, 1.0]);
        assert!((m.params.sigma[0] - 0.2).abs() < 1e-15);
        assert!(m.is_valid());
        let m = build_first_order_model(&est(vec![-1.0, 2.0])).unwrap();
        assert_eq!(m.params.g, vec![-1.5, 1.5]);
        let m = build_first_order_model(&est(vec![1.0, -1.0])).unwrap();
        assert!(!m.is_valid());
        assert!(build_first_order_model(&est(vec![f64::NAN, 1.0])).is_err());
    }

    fn random_history(rows: Vec<Vec<f64>>) -> WeightHistory {
        let normalized: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            })
            .collect();
        WeightHistory::from_weight_rows(DEFAULT_DT, &normalized).unwrap()
    }

    proptest! {
        #[test]
        fn finite_sample_identities(rows in prop::collection::vec(
            prop::collection::vec(0.05f64..1.0, 5), 2..40)) {
            let w = random_history(rows);
            let est = estimate_first_order(&w).unwrap();
            let n = w.n_assets();
            let last = w.n_steps() - 1;
            let total: f64 = (0..n).map(|i| w.log_weight(last, i) - w.log_weight(0, i)).sum();
            let attributed: f64 = est.g_rank.iter().sum::<f64>() * est.span_years;
            prop_assert!((attributed - total).abs() < 1e-9);
            for k in 0..n {
                let lhs = 0.5 * (est.padded_lambda(k) - est.padded_lambda(k + 1));
                let rhs = est.g_rank[k] - est.net_rank_drift[k];
                prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
            }
            let theta = estimate_occupation_matrix(&w);
            prop_assert!(theta.bistochastic_error() < 1e-12);
            prop_assert!(est.sigma2.iter().all(|s| *s >= 0.0));
        }
    }
}
