//! Euler–Maruyama simulation of first- and second-order rank-based models.
//!
//! Each step freezes ranks at the start of the step and applies
//!
//! ```text
//! Δlog X_i = (γ_i + g_{r(i)})·dt + σ_{r(i)}·√dt·ξ_i,    ξ_i ~ N(0, 1) iid
//! ```
//!
//! Random numbers come from `ChaCha20Rng::seed_from_u64(seed)` with normals
//! drawn by `rand_distr::StandardNormal`, one per asset per step in asset
//! order, so a `(params, config)` pair always produces the same path.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ranker::fill_ranks;
use crate::types::{FirstOrderParams, MarketHistory, SecondOrderParams, DEFAULT_DT};

pub const RNG_ALGORITHM: &str = "ChaCha20Rng(seed_from_u64)+rand_distr::StandardNormal";

/// Fraction of `n_steps` discarded when a stationary start is requested.
pub const STATIONARY_BURN_IN_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Recorded Euler steps; the output has `n_steps + 1` observations.
    pub n_steps: usize,
    /// Step size in years.
    pub dt: f64,
    pub seed: u64,
    pub initial_log_caps: Vec<f64>,
    /// Steps run and discarded before recording starts.
    pub burn_in: usize,
}

impl SimulationConfig {
    pub fn new(n_steps: usize, seed: u64, initial_log_caps: Vec<f64>) -> Self {
        Self { n_steps, dt: DEFAULT_DT, seed, initial_log_caps, burn_in: 0 }
    }

    /// Burn-in of 20% of `n_steps`, approximating a start from the stationary law.
    pub fn stationary(n_steps: usize, seed: u64, n_assets: usize) -> Self {
        Self {
            burn_in: (n_steps as f64 * STATIONARY_BURN_IN_FRACTION) as usize,
            ..Self::new(n_steps, seed, vec![0.0; n_assets])
        }
    }

    /// Configuration covering `years` of daily steps with the given burn-in fraction.
    pub fn for_years(years: f64, burn_in_fraction: f64, seed: u64, n_assets: usize) -> Self {
        let n_steps = (years / DEFAULT_DT).round() as usize;
        Self {
            burn_in: (n_steps as f64 * burn_in_fraction).round() as usize,
            ..Self::new(n_steps, seed, vec![0.0; n_assets])
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(i) = self.initial_log_caps.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("initial log cap {i} is not finite")));
        }
        Ok(())
    }
}

/// Descriptive record of a simulation run, for export headers.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetadata {
    pub seed: u64,
    pub dt: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub rng: &'static str,
    pub params_hash: String,
    /// Burn-in only approximates a draw from the stationary distribution.
    pub stationary_approximation: bool,
}

impl RunMetadata {
    pub fn new(params: &SecondOrderParams, config: &SimulationConfig) -> Self {
        Self {
            seed: config.seed,
            dt: config.dt,
            n_steps: config.n_steps,
            burn_in: config.burn_in,
            rng: RNG_ALGORITHM,
            params_hash: params_hash(params),
            stationary_approximation: config.burn_in > 0,
        }
    }

    pub fn header_lines(&self) -> Vec<String> {
        vec![
            format!("seed={}", self.seed),
            format!("dt={:.16e}", self.dt),
            format!("n_steps={}", self.n_steps),
            format!("burn_in={}", self.burn_in),
            format!("rng={}", self.rng),
            format!("params_sha256={}", self.params_hash),
            format!("stationary_approximation={}", self.stationary_approximation),
        ]
    }
}

/// SHA-256 over the little-endian bits of `gamma`, `g` and `sigma`.
pub fn params_hash(params: &SecondOrderParams) -> String {
    let mut hasher = Sha256::new();
    for v in params.gamma.iter().chain(&params.g).chain(&params.sigma) {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Simulates a hybrid Atlas market. Rejects parameters failing the stability
/// conditions before any stepping.
pub fn simulate_second_order(
    params: &SecondOrderParams,
    config: &SimulationConfig,
) -> Result<MarketHistory> {
    let report = params.validate();
    if !report.is_valid() {
        return Err(Error::InvalidParams(report.describe_failures()));
    }
    simulate_unchecked(params, config)
}

/// First-order model: the second-order model with all name drifts zero.
pub fn simulate_first_order(params: &FirstOrderParams, config: &SimulationConfig) -> Result<MarketHistory> {
    simulate_second_order(&params.to_second_order(), config)
}

/// Runs the scheme without the stability checks, for degenerate studies such
/// as zero volatility or zero drift. Dimensions and config are still checked.
pub fn simulate_unchecked(params: &SecondOrderParams, config: &SimulationConfig) -> Result<MarketHistory> {
    config.validate()?;
    let n = params.n();
    if params.gamma.len() != n || params.sigma.len() != n {
        return Err(Error::Dimension("parameter vectors differ in length".into()));
    }
    if config.initial_log_caps.len() != n {
        return Err(Error::Dimension(format!(
            "{} initial log caps for {n} assets",
            config.initial_log_caps.len()
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let sqrt_dt = config.dt.sqrt();
    let drift: Vec<f64> = params.g.iter().map(|g| g * config.dt).collect();
    let name_drift: Vec<f64> = params.gamma.iter().map(|g| g * config.dt).collect();
    let vol: Vec<f64> = params.sigma.iter().map(|s| s * sqrt_dt).collect();

    let mut state = config.initial_log_caps.clone();
    let mut name_at = vec![0usize; n];
    let mut rank_of = vec![0usize; n];
    let mut step = |state: &mut [f64], rng: &mut ChaCha20Rng| {
        fill_ranks(state, &mut name_at, &mut rank_of);
        for (i, x) in state.iter_mut().enumerate() {
            let k = rank_of[i];
            let z: f64 = StandardNormal.sample(rng);
            *x += name_drift[i] + drift[k] + vol[k] * z;
        }
    };

    for _ in 0..config.burn_in {
        step(&mut state, &mut rng);
    }
    let mut log_caps = Vec::with_capacity((config.n_steps + 1) * n);
    log_caps.extend_from_slice(&state);
    for _ in 0..config.n_steps {
        step(&mut state, &mut rng);
        log_caps.extend_from_slice(&state);
    }

    let times = (0..=config.n_steps).map(|t| t as f64).collect();
    let names = (1..=n).map(|i| format!("A{i}")).collect();
    MarketHistory::new(times, config.dt, log_caps, names)
}

/// Simulates independent paths concurrently, one thread per config. Output
/// order matches `configs`.
pub fn simulate_batch(params: &SecondOrderParams, configs: &[SimulationConfig]) -> Result<Vec<MarketHistory>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || simulate_second_order(params, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_noise(g: Vec<f64>) -> SecondOrderParams {
        let n = g.len();
        SecondOrderParams::new(vec![0.0; n], g, vec![0.0; n]).unwrap()
    }

    #[test]
    fn zero_noise_gap_closes_then_alternates() {
        let p = zero_noise(vec![-0.5, 0.5]);
        let mut c = SimulationConfig::new(14, 1, vec![1.0, 0.0]);
        c.dt = 0.1;
        let h = simulate_unchecked(&p, &c).unwrap();
        for t in 0..=10 {
            let gap = h.row(t)[0] - h.row(t)[1];
            assert!((gap - (1.0 - 0.1 * t as f64)).abs() < 1e-12, "t={t} gap={gap}");
        }
        // once tied the leader flips every step
        let gaps: Vec<f64> = (10..=14).map(|t| h.row(t)[0] - h.row(t)[1]).collect();
        for w in gaps.windows(2) {
            assert!((w[1] - w[0]).abs() > 0.09 - 1e-12 && (w[1] - w[0]).abs() < 0.11);
        }
        assert!(gaps.iter().all(|g| g.abs() < 0.1 + 1e-12));
    }

    #[test]
    fn zero_everything_is_constant() {
        let p = zero_noise(vec![0.0; 3]);
        let c = SimulationConfig::new(20, 9, vec![0.3, -1.0, 2.0]);
        let h = simulate_unchecked(&p, &c).unwrap();
        for t in 0..h.n_steps() {
            assert_eq!(h.row(t), &[0.3, -1.0, 2.0]);
        }
    }

    #[test]
    fn seeds_control_the_path() {
        let p = FirstOrderParams::new(vec![-0.1, 0.1], vec![0.2, 0.2]).unwrap();
        let c = SimulationConfig::new(50, 42, vec![0.0, 0.0]);
        let a = simulate_first_order(&p, &c).unwrap();
        let b = simulate_first_order(&p, &c).unwrap();
        assert_eq!(a, b);
        let other = simulate_first_order(&p, &SimulationConfig { seed: 43, ..c.clone() }).unwrap();
        assert_eq!(a.row(0), other.row(0));
        assert_ne!(a.row(1), other.row(1));
    }

    #[test]
    fn first_order_delegates() {
        let p = FirstOrderParams::new(vec![-0.2, -0.1, 0.3], vec![0.2, 0.25, 0.3]).unwrap();
        let c = SimulationConfig::stationary(200, 5, 3);
        assert_eq!(c.burn_in, 40);
        let a = simulate_first_order(&p, &c).unwrap();
        let b = simulate_second_order(&p.to_second_order(), &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_steps(), 201);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = FirstOrderParams::new(vec![0.5, -0.5], vec![0.2, 0.2]).unwrap();
        let c = SimulationConfig::new(10, 1, vec![0.0, 0.0]);
        assert!(matches!(simulate_first_order(&p, &c), Err(Error::InvalidParams(_))));
        let good = FirstOrderParams::new(vec![-0.5, 0.5], vec![0.2, 0.2]).unwrap();
        assert!(simulate_first_order(&good, &SimulationConfig { n_steps: 0, ..c.clone() }).is_err());
        assert!(simulate_first_order(&good, &SimulationConfig { dt: 0.0, ..c.clone() }).is_err());
        assert!(simulate_first_order(&good, &SimulationConfig { initial_log_caps: vec![0.0], ..c }).is_err());
    }

    #[test]
    fn zero_noise_is_forward_euler_and_drifts_cancel() {
        // dyadic values keep every sum exact
        let p = SecondOrderParams::new(
            vec![0.25, -0.25, 0.0],
            vec![-1.0, 0.25, 0.75],
            vec![0.0; 3],
        )
        .unwrap();
        let mut c = SimulationConfig::new(40, 3, vec![0.5, 0.25, 0.0]);
        c.dt = 0.0625;
        let h = simulate_unchecked(&p, &c).unwrap();
        let mut expected = c.initial_log_caps.clone();
        for t in 1..h.n_steps() {
            let (rank_of, _) = crate::ranker::rank_permutation(&expected).unwrap();
            let mut total = 0.0;
            for i in 0..3 {
                let inc = (p.gamma[i] + p.g[rank_of[i]]) * c.dt;
                expected[i] += inc;
                total += inc;
            }
            assert_eq!(total, 0.0);
            assert_eq!(h.row(t), expected.as_slice());
        }
    }

    #[test]
    fn increment_variance_matches_sigma() {
        let sigma = 0.3;
        let p = SecondOrderParams::new(vec![0.0; 4], vec![0.0; 4], vec![sigma; 4]).unwrap();
        let m = 5;
        let c = SimulationConfig::new(20_000 * m, 11, vec![0.0; 4]);
        let h = simulate_unchecked(&p, &c).unwrap();
        let incs: Vec<f64> = (0..20_000)
            .map(|j| h.row((j + 1) * m)[2] - h.row(j * m)[2])
            .collect();
        let mean = incs.iter().sum::<f64>() / incs.len() as f64;
        let var = incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (incs.len() - 1) as f64;
        let target = sigma * sigma * m as f64 * c.dt;
        let se = target * (2.0 / (incs.len() - 1) as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} target {target}");
    }

    #[test]
    fn batch_matches_sequential() {
        let p = FirstOrderParams::new(vec![-0.1, 0.1], vec![0.2, 0.2]).unwrap().to_second_order();
        let configs: Vec<_> = (0..4).map(|s| SimulationConfig::new(100, s, vec![0.0, 0.0])).collect();
        let batch = simulate_batch(&p, &configs).unwrap();
        for (c, h) in configs.iter().zip(&batch) {
            assert_eq!(&simulate_second_order(&p, c).unwrap(), h);
        }
    }

    #[test]
    fn metadata_is_stable() {
        let p = FirstOrderParams::new(vec![-0.1, 0.1], vec![0.2, 0.2]).unwrap().to_second_order();
        let c = SimulationConfig::stationary(100, 7, 2);
        let m = RunMetadata::new(&p, &c);
        assert_eq!(m.params_hash, params_hash(&p.clone()));
        assert_eq!(m.params_hash.len(), 64);
        assert!(m.stationary_approximation);
        assert!(m.header_lines().iter().any(|l| l == "seed=7"));
    }
}
