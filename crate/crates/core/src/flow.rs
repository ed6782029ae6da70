//! Forward and backward flows, expected ranks and flow-slope growth rates.
//!
//! Lags are measured in observation steps (trading days). Expected ranks and
//! rank maps are one-based positions so that `R_k(0) = k`; vectors are still
//! indexed by zero-based rank.

use crate::error::{Error, Result};
use crate::first_order::estimate_rank_growth;
use crate::types::WeightHistory;

/// Default horizon for flow slopes and rank maps, in trading days.
pub const DEFAULT_LAG: usize = 1000;
/// Slope window: the rate of change between day `lag - window` and `lag`.
pub const DEFAULT_WINDOW: usize = 19;
pub const DEFAULT_GRID_STEP: usize = 20;

/// Time-reversed history; ranks are recomputed from the reversed rows.
pub fn reverse_history(weights: &WeightHistory) -> WeightHistory {
    let n = weights.n_assets();
    let mut lw = Vec::with_capacity(weights.log_weights().len());
    for t in (0..weights.n_steps()).rev() {
        lw.extend_from_slice(weights.row(t));
    }
    debug_assert_eq!(lw.len() % n, 0);
    WeightHistory::from_log_weights(weights.dt(), weights.names().to_vec(), lw)
        .expect("reversal preserves validity")
}

/// Lags `0, step, 2·step, ..., max_lag` plus any `extra` lags, sorted and deduplicated.
pub fn lag_grid(max_lag: usize, step: usize, extra: &[usize]) -> Vec<usize> {
    let step = step.max(1);
    let mut taus: Vec<usize> = (0..=max_lag / step).map(|j| j * step).collect();
    taus.push(max_lag);
    taus.extend_from_slice(extra);
    taus.sort_unstable();
    taus.dedup();
    taus
}

/// Default grid with the lags needed for the default slope window.
pub fn default_lag_grid() -> Vec<usize> {
    lag_grid(DEFAULT_LAG, DEFAULT_GRID_STEP, &[DEFAULT_LAG - DEFAULT_WINDOW])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    pub taus: Vec<usize>,
    pub dt: f64,
    /// `phi[k][j]`: forward flow at rank `k`, lag `taus[j]`.
    pub phi: Vec<Vec<f64>>,
    pub phi_rev: Vec<Vec<f64>>,
    /// Start times averaged for each lag.
    pub valid_window_count: Vec<usize>,
    /// Rank growth rates `𝐠_k`, which define the slope at lag zero.
    pub g_rank_at_zero: Vec<f64>,
}

impl FlowTable {
    pub fn tau_index(&self, tau: usize) -> Option<usize> {
        self.taus.binary_search(&tau).ok()
    }

    pub fn n_ranks(&self) -> usize {
        self.phi.len()
    }
}

fn check_lags(weights: &WeightHistory, taus: &[usize]) -> Result<()> {
    let len = weights.n_steps();
    match taus.iter().find(|&&t| t >= len) {
        Some(&lag) => Err(Error::LagOutOfRange { lag: lag as i64, len }),
        None => Ok(()),
    }
}

/// `phi[k][j]`: mean over start steps `t` with `t + τ_j` in range of
/// `log μ_{p_t(k)}(t + τ_j) − log μ_(k)(t)`.
pub fn forward_flow(weights: &WeightHistory, taus: &[usize]) -> Result<Vec<Vec<f64>>> {
    check_lags(weights, taus)?;
    let n = weights.n_assets();
    let columns = parallel_map(taus, |&tau| flow_column(weights, tau));
    Ok((0..n).map(|k| columns.iter().map(|c| c[k]).collect()).collect())
}

fn flow_column(weights: &WeightHistory, tau: usize) -> Vec<f64> {
    let n = weights.n_assets();
    let mut acc = vec![0.0; n];
    if tau == 0 {
        return acc;
    }
    let starts = weights.n_steps() - tau;
    for t in 0..starts {
        let now = weights.row(t);
        let later = weights.row(t + tau);
        for (k, &i) in weights.name_at(t).iter().enumerate() {
            acc[k] += later[i as usize] - now[i as usize];
        }
    }
    acc.iter_mut().for_each(|a| *a /= starts as f64);
    acc
}

/// Evaluates `f` over `items` on scoped worker threads; output order follows `items`.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("flow worker panicked"))
            .collect()
    })
}

/// Forward flows, backward flows (forward flows of the reversed history) and
/// the rank growth rates.
pub fn flow_table(weights: &WeightHistory, taus: &[usize]) -> Result<FlowTable> {
    let mut taus = taus.to_vec();
    taus.sort_unstable();
    taus.dedup();
    let phi = forward_flow(weights, &taus)?;
    let phi_rev = forward_flow(&reverse_history(weights), &taus)?;
    let valid_window_count = taus.iter().map(|t| weights.n_steps() - t).collect();
    Ok(FlowTable {
        taus,
        dt: weights.dt(),
        phi,
        phi_rev,
        valid_window_count,
        g_rank_at_zero: estimate_rank_growth(weights)?,
    })
}

/// Mean rank, one-based, at step `s + tau` of the name holding rank `k` at `s`.
/// Negative lags look backward along the same history.
pub fn expected_rank(weights: &WeightHistory, tau: i64) -> Result<Vec<f64>> {
    let len = weights.n_steps();
    if tau.unsigned_abs() as usize >= len {
        return Err(Error::LagOutOfRange { lag: tau, len });
    }
    let n = weights.n_assets();
    let shift = tau.unsigned_abs() as usize;
    let starts: Box<dyn Iterator<Item = (usize, usize)>> = if tau >= 0 {
        Box::new((0..len - shift).map(move |s| (s, s + shift)))
    } else {
        Box::new((shift..len).map(move |s| (s, s - shift)))
    };
    let mut acc = vec![0u64; n];
    let mut count = 0u64;
    for (s, later) in starts {
        let ranks_later = weights.rank_of(later);
        for (k, &i) in weights.name_at(s).iter().enumerate() {
            acc[k] += ranks_later[i as usize] as u64 + 1;
        }
        count += 1;
    }
    Ok(acc.into_iter().map(|a| a as f64 / count as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankMap {
    pub tau: usize,
    /// `R_k(τ)`, one-based.
    pub expected_rank_fwd: Vec<f64>,
    /// `R_k(−τ)`, one-based.
    pub expected_rank_bwd: Vec<f64>,
    /// Nearest integer to the forward/backward mean, halves rounding up.
    pub averaged: Vec<usize>,
}

/// Nearest integer with exact halves rounded toward the larger rank number.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

pub fn averaged_rank_map(weights: &WeightHistory, tau: usize) -> Result<RankMap> {
    let fwd = expected_rank(weights, tau as i64)?;
    let bwd = expected_rank(weights, -(tau as i64))?;
    Ok(rank_map_from(tau, fwd, bwd))
}

pub fn rank_map_from(tau: usize, fwd: Vec<f64>, bwd: Vec<f64>) -> RankMap {
    let n = fwd.len();
    let averaged = fwd
        .iter()
        .zip(&bwd)
        .map(|(a, b)| round_half_up(0.5 * (a + b)).clamp(1, n))
        .collect();
    RankMap { tau, expected_rank_fwd: fwd, expected_rank_bwd: bwd, averaged }
}

/// Per-rank growth rates read off flow slopes at one lag.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSlopes {
    pub tau: usize,
    /// `G_k(τ)`.
    pub forward: Vec<f64>,
    /// `G_k(−τ)`.
    pub backward: Vec<f64>,
    /// `Ḡ_k(τ)`.
    pub averaged: Vec<f64>,
}

/// Annualized slope `(φ_k(τ) − φ_k(τ − window)) / (window·dt)` of the forward
/// and backward flows. At `tau = 0` every slope is the rank growth rate.
pub fn growth_slope(flow: &FlowTable, tau: usize, window: usize) -> Result<GrowthSlopes> {
    if tau == 0 {
        let g = flow.g_rank_at_zero.clone();
        return Ok(GrowthSlopes { tau, forward: g.clone(), backward: g.clone(), averaged: g });
    }
    if window == 0 || window > tau {
        return Err(Error::InvalidInput(format!(
            "slope window {window} must lie in 1..={tau}"
        )));
    }
    let (hi, lo) = match (flow.tau_index(tau), flow.tau_index(tau - window)) {
        (Some(hi), Some(lo)) => (hi, lo),
        (hi, lo) => {
            let mut missing = Vec::new();
            if hi.is_none() {
                missing.push(tau);
            }
            if lo.is_none() {
                missing.push(tau - window);
            }
            return Err(Error::MissingLags(missing));
        }
    };
    let span = window as f64 * flow.dt;
    let slope = |rows: &[Vec<f64>]| -> Vec<f64> { rows.iter().map(|r| (r[hi] - r[lo]) / span).collect() };
    let forward = slope(&flow.phi);
    let backward = slope(&flow.phi_rev);
    let averaged = forward.iter().zip(&backward).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(GrowthSlopes { tau, forward, backward, averaged })
}

/// Averages consecutive ranks in groups of `group_size` (e.g. deciles).
pub fn group_by_rank(values: &[f64], group_size: usize) -> Vec<f64> {
    values
        .chunks(group_size.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DEFAULT_DT;

    /// Two names that never cross; the leader gains `delta` in log weight per day.
    fn drifting_pair(delta: f64, steps: usize) -> WeightHistory {
        let mut lw = Vec::new();
        for t in 0..steps {
            let x = (0.6f64).ln() + delta * t as f64;
            lw.extend([x, (1.0 - x.exp()).ln()]);
        }
        WeightHistory::from_log_weights(DEFAULT_DT, vec!["a".into(), "b".into()], lw).unwrap()
    }

    #[test]
    fn reverse_is_involution() {
        let w = drifting_pair(0.003, 10);
        assert_eq!(reverse_history(&reverse_history(&w)), w);
        let one = WeightHistory::from_weight_rows(DEFAULT_DT, &[vec![0.4, 0.6]]).unwrap();
        assert_eq!(reverse_history(&one), one);
    }

    #[test]
    fn linear_flow_of_never_crossing_pair() {
        let delta = 0.003;
        let w = drifting_pair(delta, 10);
        let taus = [0, 1, 3, 9];
        let phi = forward_flow(&w, &taus).unwrap();
        for (j, &tau) in taus.iter().enumerate() {
            assert!((phi[0][j] - delta * tau as f64).abs() < 1e-12);
        }
        assert!(forward_flow(&w, &[10]).is_err());

        let table = flow_table(&w, &taus).unwrap();
        assert!(table.phi.iter().chain(&table.phi_rev).all(|r| r[0] == 0.0));
        assert_eq!(table.valid_window_count, vec![10, 9, 7, 1]);
        let s = growth_slope(&table, 3, 2).unwrap();
        assert!((s.forward[0] - delta / DEFAULT_DT).abs() < 1e-9);
        assert!((s.backward[0] + delta / DEFAULT_DT).abs() < 1e-9);
    }

    #[test]
    fn backward_flow_is_forward_flow_of_reversal() {
        let w = drifting_pair(-0.002, 12);
        let taus = [0, 2, 5];
        let table = flow_table(&w, &taus).unwrap();
        assert_eq!(table.phi_rev, forward_flow(&reverse_history(&w), &taus).unwrap());
    }

    #[test]
    fn frozen_permutation_ranks() {
        let w = drifting_pair(0.001, 8);
        for tau in [-7i64, -3, 0, 2, 7] {
            assert_eq!(expected_rank(&w, tau).unwrap(), vec![1.0, 2.0]);
        }
        assert!(expected_rank(&w, 8).is_err());
        assert!(expected_rank(&w, -8).is_err());
        let m = averaged_rank_map(&w, 3).unwrap();
        assert_eq!(m.averaged, vec![1, 2]);
    }

    #[test]
    fn negative_lag_equals_reversed_forward_lag() {
        let rows = vec![
            vec![0.5, 0.3, 0.2],
            vec![0.3, 0.5, 0.2],
            vec![0.2, 0.3, 0.5],
            vec![0.3, 0.2, 0.5],
            vec![0.5, 0.2, 0.3],
        ];
        let w = WeightHistory::from_weight_rows(DEFAULT_DT, &rows).unwrap();
        let r = reverse_history(&w);
        for tau in 0..5i64 {
            assert_eq!(expected_rank(&w, -tau).unwrap(), expected_rank(&r, tau).unwrap());
        }
        assert_eq!(expected_rank(&w, 0).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn rounding_rule() {
        let m = rank_map_from(4, vec![3.2, 3.0, 1.0, 4.0, 5.0], vec![4.0, 4.0, 1.0, 4.0, 5.0]);
        assert_eq!(m.averaged[0], 4);
        assert_eq!(m.averaged[1], 4); // mean 3.5 rounds up
        assert_eq!(round_half_up(2.49), 2);
    }

    #[test]
    fn slope_edge_cases() {
        let w = drifting_pair(0.001, 30);
        let table = flow_table(&w, &[0, 10, 20]).unwrap();
        let zero = growth_slope(&table, 0, 19).unwrap();
        assert_eq!(zero.averaged, table.g_rank_at_zero);
        match growth_slope(&table, 20, 5) {
            Err(Error::MissingLags(l)) => assert_eq!(l, vec![15]),
            other => panic!("{other:?}"),
        }
        assert!(growth_slope(&table, 10, 11).is_err());
        // identical flows give identical averaged slopes
        let mut sym = table.clone();
        sym.phi_rev = sym.phi.clone();
        let s = growth_slope(&sym, 20, 10).unwrap();
        assert_eq!(s.averaged, s.forward);
    }

    #[test]
    fn default_grid_has_slope_endpoints() {
        let g = default_lag_grid();
        assert_eq!(g[0], 0);
        assert!(g.contains(&981) && g.contains(&1000) && g.contains(&980));
        assert_eq!(*g.last().unwrap(), 1000);
        assert_eq!(group_by_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], 2), vec![1.5, 3.5, 5.0]);
    }
}
