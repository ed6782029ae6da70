//! Recovery of rank drifts `g` and name drifts `γ` of a hybrid Atlas model.
//!
//! Two routes are provided. The matrix route solves `𝐠 = (I − θθᵀ) g` on the
//! zero-sum subspace and sets `γ = −θᵀ g`. The recursive route walks the
//! rank map `k → R̄_k(τ) → …`, assigning `g_{R̄_k} = g_k + Ḡ_k(τ) − 𝐠_k`,
//! and needs no occupation matrix.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::first_order::demean;
use crate::flow::reverse_history;
use crate::types::{OccupationMatrix, SecondOrderParams, ValidityReport, WeightHistory};

/// Second eigenvalue of `θθᵀ` closer than this to 1 makes the solve degenerate.
pub const SPECTRAL_GAP_TOL: f64 = 1e-8;
pub const POWER_ITERATION_TOL: f64 = 1e-12;
pub const POWER_ITERATION_MAX: usize = 100_000;

const COLLISION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Matrix,
    Recursive,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Matrix => "matrix",
            Method::Recursive => "recursive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderEstimates {
    pub g_rank: Vec<f64>,
    pub gamma_name: Vec<f64>,
    pub method: Method,
    /// `𝐠_k − g_k − Σ_i θ_ki γ_i`.
    pub rank_residuals: Vec<f64>,
    /// `γ_i + Σ_k θ_ki g_k`.
    pub name_residuals: Vec<f64>,
}

fn theta_matrix(theta: &OccupationMatrix) -> DMatrix<f64> {
    let n = theta.n();
    DMatrix::from_row_slice(n, n, theta.entries())
}

/// Unique zero-sum `g` with `(I − θθᵀ) g = P(g_bar)`, where `P` removes the
/// mean. The system is solved as `(I − θθᵀ + J/n) g = P(g_bar)`, which agrees
/// with the original on the zero-sum subspace and is nonsingular whenever
/// the eigenvalue 1 of `θθᵀ` is simple.
pub fn solve_rank_growth_matrix(g_bar: &[f64], theta: &OccupationMatrix) -> Result<Vec<f64>> {
    let n = theta.n();
    if g_bar.len() != n {
        return Err(Error::Dimension(format!("g_bar has {} entries for {n} ranks", g_bar.len())));
    }
    if g_bar.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("g_bar contains non-finite values".into()));
    }
    if let Some(pos) = theta.entries().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate(format!(
            "occupation entry ({}, {}) is not positive; uniqueness of g fails",
            pos / n,
            pos % n
        )));
    }
    let t = theta_matrix(theta);
    let gram = &t * t.transpose();
    let ones = DMatrix::from_element(n, n, 1.0 / n as f64);

    let deflated = (&gram - &ones).symmetric_eigen();
    let second = deflated.eigenvalues.max();
    if second > 1.0 - SPECTRAL_GAP_TOL {
        return Err(Error::Degenerate(format!(
            "second eigenvalue of theta theta^T is {second}, within {SPECTRAL_GAP_TOL} of 1"
        )));
    }

    let system = DMatrix::identity(n, n) - gram + ones;
    let rhs = DVector::from_vec(demean(g_bar));
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::Degenerate("I - theta theta^T + J/n is not positive definite".into()))?;
    let g = chol.solve(&rhs);
    Ok(demean(g.as_slice()))
}

/// `γ = −θᵀ g`.
pub fn gamma_from_theta(g: &[f64], theta: &OccupationMatrix) -> Result<Vec<f64>> {
    let n = theta.n();
    if g.len() != n {
        return Err(Error::Dimension(format!("g has {} entries for {n} ranks", g.len())));
    }
    let scale = g.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    if g.iter().sum::<f64>().abs() > 1e-10 * scale {
        return Err(Error::InvalidInput("g must sum to zero".into()));
    }
    Ok((0..n)
        .map(|i| -(0..n).map(|k| theta.get(k, i) * g[k]).sum::<f64>())
        .collect())
}

/// Matrix route with consistency residuals.
pub fn matrix_route(g_bar: &[f64], theta: &OccupationMatrix) -> Result<SecondOrderEstimates> {
    let g = solve_rank_growth_matrix(g_bar, theta)?;
    let gamma = gamma_from_theta(&g, theta)?;
    let report = verify_consistency(theta, &g, &gamma, g_bar)?;
    Ok(SecondOrderEstimates {
        g_rank: g,
        gamma_name: gamma,
        method: Method::Matrix,
        rank_residuals: report.rank_residuals,
        name_residuals: report.name_residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearRankFit {
    pub intercept: f64,
    pub slope: f64,
    pub rms_residual: f64,
}

impl LinearRankFit {
    pub fn eval(&self, k: f64) -> f64 {
        self.intercept + self.slope * k
    }
}

/// Ordinary least squares of `ys` on `xs`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LinearRankFit> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension("fit inputs differ in length".into()));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("a linear fit needs at least 2 points".into()));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("all ranks identical; slope undefined".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(LinearRankFit { intercept, slope, rms_residual: (sse / m).sqrt() })
}

/// Fits `R̄_k(τ) ≈ a + b·k` and `Ḡ_k(τ) ≈ c + d·k` over one-based ranks `k`.
pub fn fit_linear_rank_maps(averaged_ranks: &[usize], growth: &[f64]) -> Result<(LinearRankFit, LinearRankFit)> {
    let ks: Vec<f64> = (1..=averaged_ranks.len()).map(|k| k as f64).collect();
    let ranks: Vec<f64> = averaged_ranks.iter().map(|&r| r as f64).collect();
    let gk: Vec<f64> = (1..=growth.len()).map(|k| k as f64).collect();
    Ok((fit_line(&ks, &ranks)?, fit_line(&gk, growth)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChainStop {
    /// The next target equals the current position.
    FixedPoint,
    /// The chain returned to a position it had already visited.
    Cycle,
    /// The next target fell outside `[1, n]`.
    Truncated { from: f64, target: f64 },
    /// Step budget exhausted (slowly converging chains).
    MaxSteps,
}

/// Rank-drift curve produced by the recursive route. Values are not
/// normalized to sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveCurve {
    /// Value per zero-based rank; `None` outside the span reached by the chain.
    pub values: Vec<Option<f64>>,
    /// Chain positions (one-based, possibly fractional) and assigned values.
    pub visited: Vec<(f64, f64)>,
    /// Largest disagreement among repeated assignments to one rank.
    pub spread: f64,
    pub stop: ChainStop,
    pub normalized: bool,
}

impl RecursiveCurve {
    pub fn covered(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().enumerate().filter_map(|(k, v)| v.map(|x| (k, x)))
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    /// Extends the curve past its ends with the nearest computed value.
    pub fn filled(&self) -> Vec<f64> {
        let first = self.covered().next().map(|(_, v)| v).unwrap_or(0.0);
        let mut last = first;
        self.values
            .iter()
            .map(|v| {
                if let Some(x) = v {
                    last = *x;
                }
                v.unwrap_or(last)
            })
            .collect()
    }

    /// Subtracts the mean of the covered values.
    pub fn normalize(&self) -> RecursiveCurve {
        let covered: Vec<f64> = self.covered().map(|(_, v)| v).collect();
        let mean = if covered.is_empty() { 0.0 } else { covered.iter().sum::<f64>() / covered.len() as f64 };
        RecursiveCurve {
            values: self.values.iter().map(|v| v.map(|x| x - mean)).collect(),
            visited: self.visited.iter().map(|&(p, v)| (p, v - mean)).collect(),
            normalized: true,
            ..self.clone()
        }
    }
}

/// Linear interpolation of a per-rank table at one-based position `x`.
fn interp(table: &[f64], x: f64) -> f64 {
    let lo = (x.floor() as usize).clamp(1, table.len());
    let hi = (lo + 1).min(table.len());
    let frac = x - lo as f64;
    if hi == lo || frac <= 0.0 {
        return table[lo - 1];
    }
    (1.0 - frac) * table[lo - 1] + frac * table[hi - 1]
}

/// Recursive route: starting from `g[anchor_rank] = anchor_value` (one-based
/// rank), repeatedly assigns `v = g(x) + Ḡ(x) − 𝐠(x)` at the target
/// `ρ = target(x)`, tables being linearly interpolated at fractional `x`.
///
/// A fractional target between grid ranks `ℓ` and `ℓ + 1` is resolved through
/// the interpolation identity `v = (ℓ + 1 − ρ) g_ℓ + (ρ − ℓ) g_{ℓ+1}` against
/// whichever neighbour is already known; with neither known, the point is
/// kept as an interpolation knot. Grid ranks between knots are filled by
/// linear interpolation. Repeated assignments to a rank are averaged.
pub fn recursive_rank_growth(
    g_bar: &[f64],
    g_slope: &[f64],
    targets: &[f64],
    anchor_rank: usize,
    anchor_value: f64,
) -> Result<RecursiveCurve> {
    let n = g_bar.len();
    if g_slope.len() != n || targets.len() != n {
        return Err(Error::Dimension("recursive route inputs differ in length".into()));
    }
    if !(1..=n).contains(&anchor_rank) {
        return Err(Error::InvalidInput(format!("anchor rank {anchor_rank} outside 1..={n}")));
    }
    let diff: Vec<f64> = g_slope.iter().zip(g_bar).map(|(a, b)| a - b).collect();

    let mut assigned: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    assigned.insert(anchor_rank, vec![anchor_value]);
    let known = |assigned: &BTreeMap<usize, Vec<f64>>, r: usize| {
        assigned.get(&r).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };

    let mut visited = vec![(anchor_rank as f64, anchor_value)];
    let (mut x, mut gx) = (anchor_rank as f64, anchor_value);
    let max_steps = 64 * n.max(16);
    let mut stop = ChainStop::MaxSteps;
    for _ in 0..max_steps {
        let rho = interp(targets, x);
        let v = gx + interp(&diff, x);
        if !rho.is_finite() || rho < 1.0 - COLLISION_TOL || rho > n as f64 + COLLISION_TOL {
            stop = ChainStop::Truncated { from: x, target: rho };
            break;
        }
        let rho = rho.clamp(1.0, n as f64);
        if (rho - x).abs() < COLLISION_TOL {
            stop = ChainStop::FixedPoint;
            break;
        }
        let nearest = rho.round();
        if (rho - nearest).abs() < COLLISION_TOL {
            assigned.entry(nearest as usize).or_default().push(v);
        } else {
            let l = rho.floor() as usize;
            let frac = rho - l as f64;
            if let Some(gl) = known(&assigned, l) {
                assigned.entry(l + 1).or_default().push((v - (1.0 - frac) * gl) / frac);
            } else if let Some(gu) = known(&assigned, l + 1) {
                assigned.entry(l).or_default().push((v - frac * gu) / (1.0 - frac));
            }
        }
        let revisit = visited.iter().any(|&(p, _)| (p - rho).abs() < COLLISION_TOL);
        visited.push((rho, v));
        if revisit {
            stop = ChainStop::Cycle;
            break;
        }
        x = rho;
        gx = v;
    }

    let mut spread = 0.0f64;
    let mut knots: Vec<(f64, f64)> = Vec::new();
    for (&r, vals) in &assigned {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        spread = spread.max(hi - lo);
        knots.push((r as f64, vals.iter().sum::<f64>() / vals.len() as f64));
    }
    for &(p, v) in &visited {
        if !knots.iter().any(|&(q, _)| (q - p).abs() < COLLISION_TOL) {
            knots.push((p, v));
        }
    }
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));

    let values = (1..=n)
        .map(|k| {
            let kf = k as f64;
            if let Some(v) = known(&assigned, k) {
                return Some(v);
            }
            let upper = knots.iter().position(|&(p, _)| p >= kf)?;
            if upper == 0 {
                return None;
            }
            let (p0, v0) = knots[upper - 1];
            let (p1, v1) = knots[upper];
            Some(v0 + (v1 - v0) * (kf - p0) / (p1 - p0))
        })
        .collect();

    Ok(RecursiveCurve { values, visited, spread, stop, normalized: false })
}

/// Name drifts from returns and rank drifts: the mean of
/// `(1/T) Σ_t (Δlog μ_i(t) − g_{r_t(i)}·dt)` over the history and its reversal.
pub fn estimate_gamma_series(weights: &WeightHistory, g: &[f64]) -> Result<Vec<f64>> {
    if g.len() != weights.n_assets() {
        return Err(Error::Dimension(format!(
            "g has {} entries for {} ranks",
            g.len(),
            weights.n_assets()
        )));
    }
    if weights.n_steps() < 2 {
        return Err(Error::InvalidInput("gamma estimation needs at least 2 observations".into()));
    }
    let forward = excess_growth(weights, g);
    let backward = excess_growth(&reverse_history(weights), g);
    Ok(forward.iter().zip(&backward).map(|(f, b)| 0.5 * (f + b)).collect())
}

fn excess_growth(weights: &WeightHistory, g: &[f64]) -> Vec<f64> {
    let n = weights.n_assets();
    let dt = weights.dt();
    let mut acc = vec![0.0; n];
    for t in 0..weights.n_steps() - 1 {
        let now = weights.row(t);
        let next = weights.row(t + 1);
        for (i, &k) in weights.rank_of(t).iter().enumerate() {
            acc[i] += next[i] - now[i] - g[k as usize] * dt;
        }
    }
    let span = weights.span_years();
    acc.into_iter().map(|a| a / span).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub rank_residuals: Vec<f64>,
    pub name_residuals: Vec<f64>,
    pub max_rank_residual: f64,
    pub max_name_residual: f64,
}

/// Residuals of `𝐠 = g + θγ` (per rank) and `0 = γ + θᵀg` (per name).
pub fn verify_consistency(
    theta: &OccupationMatrix,
    g: &[f64],
    gamma: &[f64],
    g_bar: &[f64],
) -> Result<ConsistencyReport> {
    let n = theta.n();
    if g.len() != n || gamma.len() != n || g_bar.len() != n {
        return Err(Error::Dimension("consistency inputs differ in length".into()));
    }
    let rank_residuals: Vec<f64> = (0..n)
        .map(|k| g_bar[k] - g[k] - (0..n).map(|i| theta.get(k, i) * gamma[i]).sum::<f64>())
        .collect();
    let name_residuals: Vec<f64> = (0..n)
        .map(|i| gamma[i] + (0..n).map(|k| theta.get(k, i) * g[k]).sum::<f64>())
        .collect();
    let max_abs = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(ConsistencyReport {
        max_rank_residual: max_abs(&rank_residuals),
        max_name_residual: max_abs(&name_residuals),
        rank_residuals,
        name_residuals,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    /// `max |(θθᵀ e − e)_k|`.
    pub ones_residual: f64,
    pub second_eigenvalue: f64,
    pub spectral_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when some entry of `θ` is not strictly positive.
    pub positivity_warning: bool,
}

impl SpectralReport {
    pub fn passes(&self) -> bool {
        self.ones_residual <= 1e-10 && self.spectral_gap > SPECTRAL_GAP_TOL
    }
}

fn gram_apply(theta: &OccupationMatrix, v: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    let n = theta.n();
    // scratch = θᵀ v, out = θ scratch
    for (i, s) in scratch.iter_mut().enumerate() {
        *s = (0..n).map(|k| theta.get(k, i) * v[k]).sum();
    }
    for (k, o) in out.iter_mut().enumerate() {
        *o = theta.row(k).iter().zip(scratch.iter()).map(|(a, b)| a * b).sum();
    }
}

fn project_out_ones(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks that `e = (1, …, 1)` is fixed by `θθᵀ` and estimates the next
/// eigenvalue by power iteration on the complement of `e`.
pub fn perron_check(theta: &OccupationMatrix) -> SpectralReport {
    let n = theta.n();
    let mut scratch = vec![0.0; n];
    let mut image = vec![0.0; n];
    gram_apply(theta, &vec![1.0; n], &mut scratch, &mut image);
    let ones_residual = image.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);

    // deterministic start with components along every direction
    let mut v: Vec<f64> = (0..n).map(|j| ((j as f64 + 1.0) * 1.618_033_988_75).sin()).collect();
    project_out_ones(&mut v);
    let mut lambda = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let start_norm = norm(&v);
    if n < 2 || start_norm == 0.0 {
        converged = true;
    } else {
        v.iter_mut().for_each(|x| *x /= start_norm);
        while iterations < POWER_ITERATION_MAX {
            iterations += 1;
            gram_apply(theta, &v, &mut scratch, &mut image);
            project_out_ones(&mut image);
            let rayleigh: f64 = image.iter().zip(&v).map(|(a, b)| a * b).sum();
            let len = norm(&image);
            if len < 1e-300 {
                lambda = 0.0;
                converged = true;
                break;
            }
            image.iter_mut().for_each(|x| *x /= len);
            std::mem::swap(&mut v, &mut image);
            let delta = (rayleigh - lambda).abs();
            lambda = rayleigh;
            if delta < POWER_ITERATION_TOL && iterations > 1 {
                converged = true;
                break;
            }
        }
    }
    let second = lambda.abs();
    SpectralReport {
        ones_residual,
        second_eigenvalue: second,
        spectral_gap: 1.0 - second,
        iterations,
        converged,
        positivity_warning: theta.entries().iter().any(|&x| !(x > 0.0)),
    }
}

/// A second-order model with its stability report; instability is flagged,
/// never repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderModel {
    pub params: SecondOrderParams,
    pub validity: ValidityReport,
}

impl SecondOrderModel {
    pub fn is_valid(&self) -> bool {
        self.validity.is_valid()
    }
}

pub fn build_second_order_model(g: &[f64], gamma: &[f64], sigma2: &[f64]) -> Result<SecondOrderModel> {
    if g.iter().chain(gamma).chain(sigma2).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("second-order inputs contain non-finite values".into()));
    }
    let params = SecondOrderParams::new(
        demean(gamma),
        demean(g),
        sigma2.iter().map(|s| s.sqrt()).collect(),
    )?;
    let validity = params.validate();
    Ok(SecondOrderModel { params, validity })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> OccupationMatrix {
        OccupationMatrix::from_rows(&[vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap()
    }

    fn uniform(n: usize) -> OccupationMatrix {
        OccupationMatrix::new(n, vec![1.0 / n as f64; n * n]).unwrap()
    }

    #[test]
    fn uniform_theta_is_identity_on_zero_sum() {
        let g_bar = vec![-0.3, 0.1, 0.05, 0.15];
        let g = solve_rank_growth_matrix(&g_bar, &uniform(4)).unwrap();
        for (a, b) in g.iter().zip(&g_bar) {
            assert!((a - b).abs() < 1e-14);
        }
        let gamma = gamma_from_theta(&g, &uniform(4)).unwrap();
        assert!(gamma.iter().all(|x| x.abs() < 1e-15));
        let r = verify_consistency(&uniform(4), &g, &gamma, &g_bar).unwrap();
        assert!(r.max_rank_residual < 1e-14 && r.max_name_residual < 1e-15);
    }

    #[test]
    fn two_by_two_solve() {
        // 0.42 (g1 - g2) = -0.21 with g1 + g2 = 0
        let g = solve_rank_growth_matrix(&[-0.21, 0.21], &two_by_two()).unwrap();
        assert!((g[0] + 0.25).abs() < 1e-14 && (g[1] - 0.25).abs() < 1e-14);
        let gamma = gamma_from_theta(&g, &two_by_two()).unwrap();
        assert!((gamma[0] - 0.1).abs() < 1e-14 && (gamma[1] + 0.1).abs() < 1e-14);
        assert!(gamma.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn solve_rejects_non_positive_theta() {
        let id = OccupationMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(solve_rank_growth_matrix(&[-0.1, 0.1], &id), Err(Error::Degenerate(_))));
        let nearly = OccupationMatrix::from_rows(&[vec![1.0 - 1e-11, 1e-11], vec![1e-11, 1.0 - 1e-11]]).unwrap();
        assert!(matches!(solve_rank_growth_matrix(&[-0.1, 0.1], &nearly), Err(Error::Degenerate(_))));
        assert!(solve_rank_growth_matrix(&[0.1], &two_by_two()).is_err());
    }

    #[test]
    fn gamma_requires_zero_sum_g() {
        assert!(gamma_from_theta(&[0.1, 0.1], &two_by_two()).is_err());
    }

    #[test]
    fn perron_on_small_cases() {
        let r = perron_check(&two_by_two());
        assert!(r.converged);
        assert!((r.second_eigenvalue - 0.16).abs() < 1e-10);
        assert!(r.ones_residual < 1e-15);
        assert!(r.passes() && !r.positivity_warning);

        let u = perron_check(&uniform(5));
        assert!(u.second_eigenvalue.abs() < 1e-12);
        let id = OccupationMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = perron_check(&id);
        assert!(p.positivity_warning);
        assert!((p.second_eigenvalue - 1.0).abs() < 1e-12);
        assert!(!p.passes());
    }

    #[test]
    fn fit_exact_lines() {
        let (r, g) = fit_linear_rank_maps(&[5, 8, 11, 14], &[-4.2, -4.234, -4.268, -4.302]).unwrap();
        assert!((r.intercept - 2.0).abs() < 1e-12 && (r.slope - 3.0).abs() < 1e-12);
        assert!(r.rms_residual < 1e-12);
        assert!((g.intercept + 4.166).abs() < 1e-12 && (g.slope + 0.034).abs() < 1e-12);
        let two = fit_line(&[1.0, 2.0], &[1.0, 3.0]).unwrap();
        assert!((two.slope - 2.0).abs() < 1e-15 && (two.intercept + 1.0).abs() < 1e-15);
        assert!(fit_line(&[3.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(fit_line(&[3.0], &[1.0]).is_err());
    }

    #[test]
    fn recursion_fixed_point_keeps_anchor() {
        let g_bar = vec![-0.2, -0.1, 0.0, 0.3];
        let targets = vec![1.0, 2.0, 3.0, 4.0];
        let c = recursive_rank_growth(&g_bar, &g_bar, &targets, 1, 0.7).unwrap();
        assert_eq!(c.stop, ChainStop::FixedPoint);
        assert_eq!(c.values[0], Some(0.7));
        assert!(c.filled().iter().all(|&v| v == 0.7));
        assert!(!c.normalized);
    }

    #[test]
    fn recursion_reproduces_linear_truth() {
        let n = 250;
        let truth = |k: f64| 0.1 - 0.004 * k;
        let targets: Vec<f64> = (1..=n).map(|k| 4.6 + 1.16 * k as f64).collect();
        // arbitrary first-order growth, slopes manufactured to satisfy the recursion
        let g_bar: Vec<f64> = (1..=n).map(|k| -0.3 + 0.01 * ((k * 7) % 13) as f64).collect();
        let g_slope: Vec<f64> = (0..n).map(|j| truth(targets[j]) - truth((j + 1) as f64) + g_bar[j]).collect();
        let c = recursive_rank_growth(&g_bar, &g_slope, &targets, 1, truth(1.0)).unwrap();
        assert!(matches!(c.stop, ChainStop::Truncated { .. }));
        assert!(c.visited.len() > 5);
        for &(p, v) in &c.visited {
            assert!((v - truth(p)).abs() < 1e-10, "at {p}: {v} vs {}", truth(p));
        }
        for (k, v) in c.covered() {
            assert!((v - truth((k + 1) as f64)).abs() < 1e-10);
        }
        let last = c.visited.last().unwrap().0;
        assert_eq!(c.covered().count(), last.floor() as usize);
    }

    #[test]
    fn recursion_resolves_against_known_neighbour() {
        // 1 -> 2 (integer), 2 -> 2.5 resolved against rank 2 to give rank 3
        let truth = [0.0, 0.1, 0.3];
        let targets = [2.0, 2.5, 2.5];
        let g_bar = [0.0, 0.0, 0.0];
        let interp_25 = 0.5 * truth[1] + 0.5 * truth[2];
        let g_slope = [truth[1] - truth[0], interp_25 - truth[1], 0.0];
        let c = recursive_rank_growth(&g_bar, &g_slope, &targets, 1, truth[0]).unwrap();
        for k in 0..3 {
            assert!((c.values[k].unwrap() - truth[k]).abs() < 1e-12);
        }
        assert_eq!(c.stop, ChainStop::FixedPoint);
    }

    #[test]
    fn recursion_cycle_averages() {
        // 1 -> 2 -> 1 with inconsistent values: rank 1 gets two assignments
        let c = recursive_rank_growth(&[0.0, 0.0], &[0.5, -0.3], &[2.0, 1.0], 1, 0.0).unwrap();
        assert_eq!(c.stop, ChainStop::Cycle);
        assert!((c.values[0].unwrap() - 0.1).abs() < 1e-12);
        assert!((c.spread - 0.2).abs() < 1e-12);
        assert!(recursive_rank_growth(&[0.0], &[0.0], &[1.0], 2, 0.0).is_err());
    }

    #[test]
    fn normalization_of_curve() {
        let c = RecursiveCurve {
            values: vec![Some(1.0), Some(3.0), None],
            visited: vec![(1.0, 1.0)],
            spread: 0.0,
            stop: ChainStop::FixedPoint,
            normalized: false,
        };
        let m = c.normalize();
        assert_eq!(m.values, vec![Some(-1.0), Some(1.0), None]);
        assert!(m.normalized);
        assert_eq!(c.filled(), vec![1.0, 3.0, 3.0]);
    }

    #[test]
    fn perturbed_gamma_residual() {
        let theta = two_by_two();
        let g = vec![-0.25, 0.25];
        let mut gamma = gamma_from_theta(&g, &theta).unwrap();
        let eps = 0.01;
        let n = gamma.len() as f64;
        for (i, x) in gamma.iter_mut().enumerate() {
            *x += if i == 0 { eps } else { 0.0 } - eps / n;
        }
        let g_bar: Vec<f64> = vec![-0.21, 0.21];
        let r = verify_consistency(&theta, &g, &gamma, &g_bar).unwrap();
        assert!(r.max_name_residual >= eps / 2.0 - 1e-15 && r.max_name_residual <= eps + 1e-15);
    }

    #[test]
    fn model_building_demeans() {
        let m = build_second_order_model(&[-0.2, 0.2], &[0.02, 0.0], &[0.04, 0.09]).unwrap();
        assert!((m.params.gamma[0] - 0.01).abs() < 1e-15 && (m.params.gamma[1] + 0.01).abs() < 1e-15);
        assert_eq!(m.params.g, vec![-0.2, 0.2]);
        assert!((m.params.sigma[1] - 0.3).abs() < 1e-15);
        assert!(m.is_valid());
        let bad = build_second_order_model(&[0.2, -0.2], &[0.0, 0.0], &[0.04, 0.04]).unwrap();
        assert!(!bad.is_valid());
        assert!(build_second_order_model(&[f64::NAN, 0.0], &[0.0, 0.0], &[0.1, 0.1]).is_err());
    }
}
