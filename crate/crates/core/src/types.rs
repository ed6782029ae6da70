//! Market histories, weight histories and model parameter types.
//!
//! Ranks and asset indices are zero-based throughout the library: rank 0 is
//! the largest stock. CSV exports convert to one-based ranks.

use crate::error::{Error, Result};
use crate::ranker::rank_permutation;

/// Trading days per year used to annualize daily quantities.
pub const TRADING_DAYS_PER_YEAR: f64 = 250.0;

/// Default step size: one trading day, in years.
pub const DEFAULT_DT: f64 = 1.0 / TRADING_DAYS_PER_YEAR;

const ZERO_SUM_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Observed log-capitalizations of `n` assets at `T` uniformly spaced times.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketHistory {
    times: Vec<f64>,
    dt: f64,
    log_caps: Vec<f64>,
    names: Vec<String>,
}

impl MarketHistory {
    /// Builds a history from row-major log-capitalizations (`times.len()` rows
    /// of `names.len()` entries). `dt` is the step size in years.
    pub fn new(times: Vec<f64>, dt: f64, log_caps: Vec<f64>, names: Vec<String>) -> Result<Self> {
        let n = names.len();
        let t_len = times.len();
        if t_len < 2 || n < 2 {
            return Err(Error::InvalidInput(format!(
                "market history needs at least 2 steps and 2 assets, got {t_len} x {n}"
            )));
        }
        if log_caps.len() != t_len * n {
            return Err(Error::Dimension(format!(
                "log_caps has {} entries, expected {t_len} x {n}",
                log_caps.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("step size must be positive, got {dt}")));
        }
        if let Some(pos) = log_caps.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: pos / n, asset: pos % n });
        }
        let spacing = times[1] - times[0];
        if !(spacing > 0.0) {
            return Err(Error::InvalidInput("times must be strictly increasing".into()));
        }
        for (s, w) in times.windows(2).enumerate() {
            let d = w[1] - w[0];
            if !(d > 0.0) || ((d - spacing) / spacing).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "times not uniformly spaced at step {}",
                    s + 1
                )));
            }
        }
        Ok(Self { times, dt, log_caps, names })
    }

    /// History on the ordinal time grid `0, 1, ..., T-1` with generated names `A1..An`.
    pub fn from_rows(dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("ragged log-capitalization rows".into()));
        }
        let names = (1..=n).map(|i| format!("A{i}")).collect();
        let times = (0..rows.len()).map(|t| t as f64).collect();
        Self::new(times, dt, rows.concat(), names)
    }

    pub fn n_steps(&self) -> usize {
        self.times.len()
    }

    pub fn n_assets(&self) -> usize {
        self.names.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n_assets();
        &self.log_caps[t * n..(t + 1) * n]
    }

    pub fn log_caps(&self) -> &[f64] {
        &self.log_caps
    }
}

/// Log market weights with per-step rank and name permutations.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHistory {
    dt: f64,
    n: usize,
    names: Vec<String>,
    log_weights: Vec<f64>,
    rank_of: Vec<u32>,
    name_at: Vec<u32>,
}

impl WeightHistory {
    /// Builds a weight history from row-major log weights, computing ranks.
    ///
    /// Every row must exponentiate to a probability vector within 1e-12.
    pub fn from_log_weights(dt: f64, names: Vec<String>, log_weights: Vec<f64>) -> Result<Self> {
        let n = names.len();
        if n == 0 || log_weights.is_empty() || log_weights.len() % n != 0 {
            return Err(Error::Dimension(format!(
                "{} log weights do not form rows of {n} assets",
                log_weights.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("step size must be positive, got {dt}")));
        }
        let t_len = log_weights.len() / n;
        let mut rank_of = Vec::with_capacity(t_len * n);
        let mut name_at = Vec::with_capacity(t_len * n);
        for t in 0..t_len {
            let row = &log_weights[t * n..(t + 1) * n];
            let (r, p) = rank_permutation(row).map_err(|_| {
                let asset = row.iter().position(|v| !v.is_finite()).unwrap_or(0);
                Error::NonFinite { step: t, asset }
            })?;
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "weights at step {t} sum to {total}, not 1"
                )));
            }
            rank_of.extend(r.iter().map(|&x| x as u32));
            name_at.extend(p.iter().map(|&x| x as u32));
        }
        Ok(Self { dt, n, names, log_weights, rank_of, name_at })
    }

    /// Convenience constructor with generated names from a list of weight rows.
    pub fn from_weight_rows(dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("ragged weight rows".into()));
        }
        let names = (1..=n).map(|i| format!("A{i}")).collect();
        let flat = rows.iter().flatten().map(|w| w.ln()).collect();
        Self::from_log_weights(dt, names, flat)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_assets(&self) -> usize {
        self.n
    }

    pub fn n_steps(&self) -> usize {
        self.log_weights.len() / self.n
    }

    /// Elapsed time in years between the first and last observation.
    pub fn span_years(&self) -> f64 {
        (self.n_steps() - 1) as f64 * self.dt
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.log_weights[t * self.n..(t + 1) * self.n]
    }

    pub fn log_weight(&self, t: usize, asset: usize) -> f64 {
        self.log_weights[t * self.n + asset]
    }

    /// Rank of every asset at step `t`.
    pub fn rank_of(&self, t: usize) -> &[u32] {
        &self.rank_of[t * self.n..(t + 1) * self.n]
    }

    /// Asset occupying every rank at step `t`.
    pub fn name_at(&self, t: usize) -> &[u32] {
        &self.name_at[t * self.n..(t + 1) * self.n]
    }

    /// `log μ_(k)(t)`.
    pub fn ranked_log_weight(&self, t: usize, rank: usize) -> f64 {
        self.log_weight(t, self.name_at(t)[rank] as usize)
    }
}

/// Computes log market weights `log X_i − log Σ_j X_j` and ranks at every step.
pub fn compute_weights(history: &MarketHistory) -> Result<WeightHistory> {
    let n = history.n_assets();
    let mut log_weights = Vec::with_capacity(history.log_caps().len());
    for t in 0..history.n_steps() {
        let row = history.row(t);
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: t, asset: i });
        }
        let log_total = log_sum_exp(row);
        log_weights.extend(row.iter().map(|x| x - log_total));
    }
    debug_assert_eq!(log_weights.len(), history.n_steps() * n);
    WeightHistory::from_log_weights(history.dt(), history.names().to_vec(), log_weights)
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Outcome of a single stability condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub passed: bool,
    /// First violating index: the partial-sum length `m` for partial-sum
    /// conditions, the zero-based rank for volatility positivity.
    pub first_violation: Option<usize>,
}

/// Pass/fail report over every stability condition of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub conditions: Vec<Condition>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.passed)
    }

    /// Single-line summary, e.g. `partial_sums(m=1)`.
    pub fn describe_failures(&self) -> String {
        self.failures()
            .map(|c| match c.first_violation {
                Some(m) => format!("{}(m={m})", c.name),
                None => c.name.to_string(),
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Rank-based drifts and volatilities of a first-order model (annualized).
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderParams {
    pub g: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl FirstOrderParams {
    pub fn new(g: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if g.len() != sigma.len() || g.is_empty() {
            return Err(Error::Dimension(format!(
                "g has {} entries, sigma has {}",
                g.len(),
                sigma.len()
            )));
        }
        Ok(Self { g, sigma })
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> ValidityReport {
        stability_report(&self.g, None, &self.sigma)
    }

    /// The same model viewed as a second-order model with zero name drifts.
    pub fn to_second_order(&self) -> SecondOrderParams {
        SecondOrderParams {
            gamma: vec![0.0; self.n()],
            g: self.g.clone(),
            sigma: self.sigma.clone(),
        }
    }
}

/// Name drifts `gamma`, rank drifts `g` and rank volatilities `sigma` of a
/// hybrid Atlas model.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderParams {
    pub gamma: Vec<f64>,
    pub g: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl SecondOrderParams {
    pub fn new(gamma: Vec<f64>, g: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if g.len() != sigma.len() || g.len() != gamma.len() || g.is_empty() {
            return Err(Error::Dimension(format!(
                "gamma has {}, g has {}, sigma has {} entries",
                gamma.len(),
                g.len(),
                sigma.len()
            )));
        }
        Ok(Self { gamma, g, sigma })
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    /// Checks zero sums and, for every `m < n`, that the first `m` rank drifts
    /// plus the `m` largest name drifts have negative sum. That sorted bound is
    /// the worst case over all permutations of names into ranks.
    pub fn validate(&self) -> ValidityReport {
        stability_report(&self.g, Some(&self.gamma), &self.sigma)
    }
}

fn stability_report(g: &[f64], gamma: Option<&[f64]>, sigma: &[f64]) -> ValidityReport {
    let mut conditions = Vec::new();
    conditions.push(Condition {
        name: "g_zero_sum",
        passed: g.iter().sum::<f64>().abs() <= ZERO_SUM_TOL,
        first_violation: None,
    });
    if let Some(gm) = gamma {
        conditions.push(Condition {
            name: "gamma_zero_sum",
            passed: gm.iter().sum::<f64>().abs() <= ZERO_SUM_TOL,
            first_violation: None,
        });
    }

    let mut sorted = gamma.map_or_else(|| vec![0.0; g.len()], <[f64]>::to_vec);
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = g.len();
    let mut partial = 0.0;
    let mut violation = None;
    for m in 1..n {
        partial += g[m - 1] + sorted[m - 1];
        if !(partial < 0.0) {
            violation = Some(m);
            break;
        }
    }
    conditions.push(Condition {
        name: "partial_sums",
        passed: violation.is_none(),
        first_violation: violation,
    });

    let bad_sigma = sigma.iter().position(|s| !(*s > 0.0));
    conditions.push(Condition {
        name: "sigma_positive",
        passed: bad_sigma.is_none(),
        first_violation: bad_sigma,
    });
    ValidityReport { conditions }
}

/// Fraction of time each asset spends at each rank: `theta[k][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMatrix {
    n: usize,
    theta: Vec<f64>,
}

const BISTOCHASTIC_TOL: f64 = 1e-12;

impl OccupationMatrix {
    /// Builds from row-major entries, checking the bistochastic invariants.
    pub fn new(n: usize, theta: Vec<f64>) -> Result<Self> {
        if n == 0 || theta.len() != n * n {
            return Err(Error::Dimension(format!(
                "occupation matrix with {} entries is not {n} x {n}",
                theta.len()
            )));
        }
        if let Some(pos) = theta.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!(
                "occupation entry ({}, {}) = {} outside [0, 1]",
                pos / n,
                pos % n,
                theta[pos]
            )));
        }
        let m = Self { n, theta };
        for k in 0..n {
            let row: f64 = m.row(k).iter().sum();
            let col: f64 = (0..n).map(|i| m.get(i, k)).sum();
            if (row - 1.0).abs() > BISTOCHASTIC_TOL || (col - 1.0).abs() > BISTOCHASTIC_TOL {
                return Err(Error::InvalidInput(format!(
                    "occupation matrix not bistochastic at index {k} (row {row}, column {col})"
                )));
            }
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("occupation matrix must be square".into()));
        }
        Self::new(n, rows.concat())
    }

    pub(crate) fn from_raw(n: usize, theta: Vec<f64>) -> Self {
        Self { n, theta }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Occupation rate of asset `asset` at rank `rank`.
    pub fn get(&self, rank: usize, asset: usize) -> f64 {
        self.theta[rank * self.n + asset]
    }

    pub fn row(&self, rank: usize) -> &[f64] {
        &self.theta[rank * self.n..(rank + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.theta
    }

    pub fn min_entry(&self) -> f64 {
        self.theta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest deviation of any row or column sum from one.
    pub fn bistochastic_error(&self) -> f64 {
        let n = self.n;
        (0..n)
            .flat_map(|k| {
                let row: f64 = self.row(k).iter().sum();
                let col: f64 = (0..n).map(|r| self.get(r, k)).sum();
                [(row - 1.0).abs(), (col - 1.0).abs()]
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first(g: &[f64]) -> FirstOrderParams {
        FirstOrderParams::new(g.to_vec(), vec![0.2; g.len()]).unwrap()
    }

    #[test]
    fn weights_of_simple_caps() {
        let h = MarketHistory::from_rows(DEFAULT_DT, &[vec![0.0, 0.0], vec![3f64.ln(), 0.0]]).unwrap();
        let w = compute_weights(&h).unwrap();
        assert!((w.log_weight(0, 0).exp() - 0.5).abs() < 1e-15);
        assert!((w.log_weight(0, 1).exp() - 0.5).abs() < 1e-15);
        assert!((w.log_weight(1, 0).exp() - 0.75).abs() < 1e-15);
        assert!((w.log_weight(1, 1).exp() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_finite_cap_is_named() {
        let h = MarketHistory::from_rows(DEFAULT_DT, &[vec![0.0, 1.0], vec![f64::NAN, 0.0]]);
        match h {
            Err(Error::NonFinite { step, asset }) => assert_eq!((step, asset), (1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn history_shape_checks() {
        assert!(MarketHistory::from_rows(DEFAULT_DT, &[vec![0.0, 1.0]]).is_err());
        assert!(MarketHistory::from_rows(DEFAULT_DT, &[vec![0.0], vec![1.0]]).is_err());
        let t = vec![0.0, 1.0, 3.0];
        assert!(MarketHistory::new(t, DEFAULT_DT, vec![0.0; 6], vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn first_order_conditions() {
        assert!(first(&[-1.0, 1.0]).validate().is_valid());
        let bad = first(&[1.0, -1.0]).validate();
        assert!(!bad.is_valid());
        assert_eq!(bad.describe_failures(), "partial_sums(m=1)");
        assert!(first(&[-2.0, 1.0, 1.0]).validate().is_valid());
        assert!(FirstOrderParams::new(vec![-1.0, 1.0], vec![0.1]).is_err());
    }

    #[test]
    fn second_order_conditions() {
        let p = SecondOrderParams::new(vec![2.0, -2.0], vec![-1.0, 1.0], vec![0.1, 0.1]).unwrap();
        let r = p.validate();
        assert!(!r.is_valid());
        assert_eq!(r.describe_failures(), "partial_sums(m=1)");

        let p = SecondOrderParams::new(vec![0.5, 0.0, -0.5], vec![-3.0, 1.0, 2.0], vec![0.1; 3]).unwrap();
        assert!(p.validate().is_valid());
        assert!(SecondOrderParams::new(vec![0.0], vec![-1.0, 1.0], vec![0.1, 0.1]).is_err());
    }

    #[test]
    fn nonpositive_sigma_flagged() {
        let p = FirstOrderParams::new(vec![-1.0, 1.0], vec![0.2, 0.0]).unwrap();
        let r = p.validate();
        assert_eq!(r.describe_failures(), "sigma_positive(m=1)");
    }

    #[test]
    fn occupation_matrix_checks() {
        assert!(OccupationMatrix::from_rows(&[vec![0.7, 0.3], vec![0.3, 0.7]]).is_ok());
        assert!(OccupationMatrix::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6]]).is_err());
        assert!(OccupationMatrix::from_rows(&[vec![1.2, -0.2], vec![-0.2, 1.2]]).is_err());
    }
}
