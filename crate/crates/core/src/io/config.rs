//! Run configuration: a flat TOML document overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::flow::{DEFAULT_GRID_STEP, DEFAULT_LAG, DEFAULT_WINDOW};
use crate::presets;
use crate::simulator::STATIONARY_BURN_IN_FRACTION;
use crate::types::{SecondOrderParams, DEFAULT_DT, TRADING_DAYS_PER_YEAR};

/// How recursion targets are read off the rank map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RankTargets {
    /// Least-squares line through the averaged rank map.
    #[default]
    Fitted,
    /// Averaged rank map rounded to integers.
    Rounded,
}

impl RankTargets {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fitted" => Ok(Self::Fitted),
            "rounded" => Ok(Self::Rounded),
            other => Err(Error::Config(format!("rank_targets must be fitted or rounded, got {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fitted => "fitted",
            Self::Rounded => "rounded",
        }
    }
}

/// Every key is optional; absent keys take defaults in [`RunConfig::resolve`].
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    /// Recorded simulation steps; overrides `years`.
    pub n_steps: Option<usize>,
    pub years: Option<f64>,
    /// Discarded leading simulation steps.
    pub burn_in: Option<usize>,
    /// Flow horizon in steps.
    pub lag: Option<usize>,
    pub grid_step: Option<usize>,
    pub window: Option<usize>,
    /// Gaussian rank-smoothing bandwidth for the first-order curves.
    pub bandwidth: Option<f64>,
    /// One-based rank where the recursive route starts.
    pub anchor_rank: Option<usize>,
    /// `two-stock`, `five-stock` or `hybrid-ten`; ignored when `g` is given.
    pub preset: Option<String>,
    pub gamma: Option<Vec<f64>>,
    pub g: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub skip_matrix_route: Option<bool>,
    pub rank_targets: Option<RankTargets>,
    /// Keep only this many of the largest assets at the first date.
    pub rank_cutoff: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Keys set in `over` replace those in `self`.
    pub fn overridden_by(self, over: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            input, output_dir, seed, dt, n_steps, years, burn_in, lag, grid_step, window, bandwidth,
            anchor_rank, preset, gamma, g, sigma, skip_matrix_route, rank_targets, rank_cutoff
        )
    }

    /// Fills defaults and validates every field.
    pub fn resolve(&self) -> Result<Settings> {
        let dt = self.dt.unwrap_or(DEFAULT_DT);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let params = self.params()?;
        let n_steps = match (self.n_steps, self.years) {
            (Some(n), _) => n,
            (None, Some(y)) if y > 0.0 && y.is_finite() => (y / dt).round() as usize,
            (None, Some(y)) => return Err(Error::Config(format!("years must be positive, got {y}"))),
            (None, None) => (100.0 * TRADING_DAYS_PER_YEAR) as usize,
        };
        if n_steps < 1 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        let burn_in = self
            .burn_in
            .unwrap_or((STATIONARY_BURN_IN_FRACTION * n_steps as f64).round() as usize);
        let lag = self.lag.unwrap_or(DEFAULT_LAG);
        let grid_step = self.grid_step.unwrap_or(DEFAULT_GRID_STEP);
        let window = self.window.unwrap_or(DEFAULT_WINDOW);
        if lag == 0 {
            return Err(Error::Config("lag must be positive".into()));
        }
        if grid_step == 0 {
            return Err(Error::Config("grid_step must be positive".into()));
        }
        if window == 0 || window > lag {
            return Err(Error::Config(format!("window must lie in 1..={lag}, got {window}")));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
            }
        }
        let anchor_rank = self.anchor_rank.unwrap_or(1);
        if anchor_rank == 0 {
            return Err(Error::Config("anchor_rank is one-based".into()));
        }
        if let Some(c) = self.rank_cutoff {
            if c < 2 {
                return Err(Error::Config(format!("rank_cutoff must be at least 2, got {c}")));
            }
        }
        Ok(Settings {
            input: self.input.clone(),
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
            seed: self.seed.unwrap_or(0),
            dt,
            n_steps,
            burn_in,
            lag,
            grid_step,
            window,
            bandwidth: self.bandwidth,
            anchor_rank,
            params,
            skip_matrix_route: self.skip_matrix_route.unwrap_or(false),
            rank_targets: self.rank_targets.unwrap_or_default(),
            rank_cutoff: self.rank_cutoff,
        })
    }

    fn params(&self) -> Result<SecondOrderParams> {
        let base = match self.preset.as_deref().unwrap_or("hybrid-ten") {
            "two-stock" => presets::two_stock_atlas().to_second_order(),
            "five-stock" => presets::five_stock_atlas().to_second_order(),
            "hybrid-ten" => presets::hybrid_ten(),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        if self.g.is_none() && (self.gamma.is_some() || self.sigma.is_some()) {
            return Err(Error::Config("gamma and sigma need an explicit g".into()));
        }
        let Some(g) = self.g.clone() else { return Ok(base) };
        let n = g.len();
        let gamma = self.gamma.clone().unwrap_or_else(|| vec![0.0; n]);
        let sigma = self.sigma.clone().ok_or_else(|| Error::Config("g given without sigma".into()))?;
        let params = SecondOrderParams::new(gamma, g, sigma).map_err(|e| Error::Config(e.to_string()))?;
        let report = params.validate();
        if !report.is_valid() {
            return Err(Error::Config(format!("unstable parameters: {}", report.describe_failures())));
        }
        Ok(params)
    }
}

/// Fully resolved, validated settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub dt: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub lag: usize,
    pub grid_step: usize,
    pub window: usize,
    pub bandwidth: Option<f64>,
    pub anchor_rank: usize,
    pub params: SecondOrderParams,
    pub skip_matrix_route: bool,
    pub rank_targets: RankTargets,
    pub rank_cutoff: Option<usize>,
}
