//! End-to-end orchestration of the subcommands and their output bundles.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::first_order::{
    build_first_order_model, demean, estimate_first_order, estimate_occupation_matrix, smooth_by_rank,
    FirstOrderEstimates,
};
use crate::flow::{averaged_rank_map, flow_table, growth_slope, lag_grid, GrowthSlopes, RankMap};
use crate::io::config::{RankTargets, Settings};
use crate::io::export::{self, num, GRankRow, GammaRow};
use crate::io::ingest::ingest_with_cutoff;
use crate::second_order::{
    build_second_order_model, estimate_gamma_series, fit_linear_rank_maps, matrix_route, perron_check,
    recursive_rank_growth, verify_consistency, LinearRankFit, RecursiveCurve, SecondOrderEstimates,
};
use crate::simulator::{simulate_second_order, RunMetadata, SimulationConfig};
use crate::types::{compute_weights, MarketHistory, OccupationMatrix, WeightHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    FirstOrder,
    Flows,
    SecondOrder,
    ClosedLoop,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::FirstOrder => "first-order",
            Self::Flows => "flows",
            Self::SecondOrder => "second-order",
            Self::ClosedLoop => "closed-loop",
        }
    }

    fn stage(self) -> u8 {
        match self {
            Self::Simulate => 0,
            Self::FirstOrder => 1,
            Self::Flows => 2,
            Self::SecondOrder | Self::ClosedLoop => 3,
        }
    }
}

/// Files written and the manifest contents of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    pub manifest: Vec<(String, String)>,
}

impl Outcome {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.manifest.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
    manifest: Vec<(String, String)>,
}

impl Bundle {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.manifest.push((key.to_string(), value.to_string()));
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" ")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run_pipeline(command: Command, settings: &Settings) -> Result<Outcome> {
    std::fs::create_dir_all(&settings.output_dir)?;
    let mut b = Bundle { dir: settings.output_dir.clone(), files: Vec::new(), manifest: Vec::new() };
    b.set("command", command.as_str());
    b.set("version", env!("CARGO_PKG_VERSION"));
    b.set("dt", num(settings.dt));

    let history = load_history(command, settings, &mut b)?;
    if command.stage() >= 1 {
        let weights = compute_weights(&history)?;
        let (est, theta) = first_order_stage(&weights, settings, &mut b)?;
        if command.stage() >= 2 {
            let flows = flows_stage(&weights, &est, settings, &mut b)?;
            if command.stage() >= 3 {
                second_order_stage(command, &weights, &est, &theta, &flows, settings, &mut b)?;
            }
        }
    }

    let manifest_path = b.path("manifest.txt");
    export::write_manifest(&manifest_path, &b.manifest)?;
    Ok(Outcome { output_dir: b.dir, files: b.files, manifest: b.manifest })
}

fn load_history(command: Command, s: &Settings, b: &mut Bundle) -> Result<MarketHistory> {
    let history_path = b.path("history.csv");
    if matches!(command, Command::Simulate | Command::ClosedLoop) {
        let config = SimulationConfig {
            n_steps: s.n_steps,
            dt: s.dt,
            seed: s.seed,
            initial_log_caps: vec![0.0; s.params.n()],
            burn_in: s.burn_in,
        };
        let history = simulate_second_order(&s.params, &config)?;
        let meta = RunMetadata::new(&s.params, &config);
        let header = meta.header_lines();
        for line in &header {
            if let Some((k, v)) = line.split_once('=').filter(|(k, _)| *k != "dt") {
                b.set(k, v);
            }
        }
        b.set("true_gamma", list(&s.params.gamma));
        b.set("true_g", list(&s.params.g));
        b.set("true_sigma", list(&s.params.sigma));
        export::write_history(&history_path, &history, None, &header)?;
        return Ok(history);
    }
    let input = s
        .input
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{} needs an input file", command.as_str())))?;
    let ingested = ingest_with_cutoff(std::fs::File::open(input)?, s.dt, s.rank_cutoff)?;
    b.set("input", input.display());
    b.set("layout", format!("{:?}", ingested.layout).to_lowercase());
    b.set("dropped_assets", ingested.dropped.join(";"));
    b.set("cut_assets", ingested.cut.join(";"));
    for name in &ingested.dropped {
        eprintln!("dropped asset without full history: {name}");
    }
    export::write_history(&history_path, &ingested.history, Some(&ingested.dates), &[])?;
    Ok(ingested.history)
}

/// Steps spread evenly across the sample for capital distribution snapshots.
fn snapshot_steps(len: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..5).map(|j| j * (len - 1) / 4).collect();
    steps.dedup();
    steps
}

fn first_order_stage(
    weights: &WeightHistory,
    s: &Settings,
    b: &mut Bundle,
) -> Result<(FirstOrderEstimates, OccupationMatrix)> {
    let est = estimate_first_order(weights)?;
    let theta = estimate_occupation_matrix(weights);
    let model = build_first_order_model(&est)?;

    let last = weights.n_steps() - 1;
    let total_change: f64 = (0..weights.n_assets())
        .map(|i| weights.log_weight(last, i) - weights.log_weight(0, i))
        .sum();
    let attributed: f64 = est.g_rank.iter().sum::<f64>() * est.span_years;
    b.set("n_assets", weights.n_assets());
    b.set("n_observations", weights.n_steps());
    b.set("span_years", num(est.span_years));
    b.set("sum_g_rank_times_span", num(attributed));
    b.set("total_log_weight_change", num(total_change));
    b.set("bistochastic_error", num(theta.bistochastic_error()));
    b.set("first_order_valid", model.is_valid());
    b.set("first_order_failures", model.validity.describe_failures());

    let smoothed = match s.bandwidth {
        Some(h) => {
            b.set("bandwidth", num(h));
            Some((smooth_by_rank(&est.sigma2, h)?, smooth_by_rank(&est.g_rank, h)?))
        }
        None => None,
    };
    let p = b.path("first_order.csv");
    export::write_first_order(&p, &est, smoothed.as_ref().map(|(a, g)| (a.as_slice(), g.as_slice())))?;
    let p = b.path("local_times.csv");
    export::write_local_times(&p, &est.lambda)?;
    let p = b.path("occupation.csv");
    export::write_occupation(&p, &theta, weights.names())?;
    let p = b.path("capital_distribution.csv");
    export::write_capital_distribution(&p, weights, &snapshot_steps(weights.n_steps()))?;
    Ok((est, theta))
}

struct FlowOutputs {
    rank_map: RankMap,
    slopes: GrowthSlopes,
    rank_fit: LinearRankFit,
}

fn flows_stage(weights: &WeightHistory, est: &FirstOrderEstimates, s: &Settings, b: &mut Bundle) -> Result<FlowOutputs> {
    b.set("lag", s.lag);
    b.set("grid_step", s.grid_step);
    b.set("window", s.window);
    let taus = lag_grid(s.lag, s.grid_step, &[s.lag - s.window]);
    let table = flow_table(weights, &taus)?;
    let rank_map = averaged_rank_map(weights, s.lag)?;
    let slopes = growth_slope(&table, s.lag, s.window)?;
    let (rank_fit, growth_fit) = fit_linear_rank_maps(&rank_map.averaged, &slopes.averaged)?;

    let p = b.path("flows.csv");
    export::write_flows(&p, &table)?;
    let p = b.path("rank_map.csv");
    export::write_rank_map(&p, &rank_map, Some(&rank_fit))?;
    let p = b.path("growth.csv");
    export::write_growth(&p, &est.g_rank, &slopes, Some(&growth_fit))?;
    let p = b.path("fits.csv");
    export::write_fits(&p, &[("rank_map", &rank_fit), ("growth_slope", &growth_fit)])?;
    Ok(FlowOutputs { rank_map, slopes, rank_fit })
}

/// Recursion targets per rank, one-based.
pub fn rank_targets(mode: RankTargets, map: &RankMap, fit: &LinearRankFit) -> Vec<f64> {
    match mode {
        RankTargets::Fitted => (1..=map.averaged.len()).map(|k| fit.eval(k as f64)).collect(),
        RankTargets::Rounded => map.averaged.iter().map(|&r| r as f64).collect(),
    }
}

/// Largest gap between the recursive curve and the matrix-route curve on the
/// ranks the recursion covers, after removing their mean offset. Returns
/// `(max_gap, offset, overlap)`.
pub fn route_discrepancy(curve: &RecursiveCurve, g_matrix: &[f64]) -> (f64, f64, usize) {
    let covered: Vec<(usize, f64)> = curve.covered().collect();
    if covered.is_empty() {
        return (f64::NAN, f64::NAN, 0);
    }
    let offset = covered.iter().map(|&(k, v)| v - g_matrix[k]).sum::<f64>() / covered.len() as f64;
    let gap = covered.iter().map(|&(k, v)| (v - offset - g_matrix[k]).abs()).fold(0.0, f64::max);
    (gap, offset, covered.len())
}

fn second_order_stage(
    command: Command,
    weights: &WeightHistory,
    est: &FirstOrderEstimates,
    theta: &OccupationMatrix,
    flows: &FlowOutputs,
    s: &Settings,
    b: &mut Bundle,
) -> Result<()> {
    let n = weights.n_assets();
    let matrix: Option<SecondOrderEstimates> = if s.skip_matrix_route {
        b.set("matrix_route", "skipped");
        None
    } else {
        let spectral = perron_check(theta);
        b.set("perron_ones_residual", num(spectral.ones_residual));
        b.set("perron_second_eigenvalue", num(spectral.second_eigenvalue));
        b.set("perron_spectral_gap", num(spectral.spectral_gap));
        b.set("perron_positivity_warning", spectral.positivity_warning);
        if !spectral.passes() {
            return Err(Error::Degenerate(format!(
                "Perron check failed: ones residual {:e}, spectral gap {:e}",
                spectral.ones_residual, spectral.spectral_gap
            )));
        }
        Some(matrix_route(&est.g_rank, theta)?)
    };

    if s.anchor_rank > n {
        return Err(Error::Config(format!("anchor_rank {} exceeds {n} ranks", s.anchor_rank)));
    }
    let targets = rank_targets(s.rank_targets, &flows.rank_map, &flows.rank_fit);
    let curve = recursive_rank_growth(
        &est.g_rank,
        &flows.slopes.averaged,
        &targets,
        s.anchor_rank,
        est.g_rank[s.anchor_rank - 1],
    )?;
    let normalized = curve.normalize();
    b.set("anchor_rank", s.anchor_rank);
    b.set("rank_targets", s.rank_targets.as_str());
    b.set("recursive_stop", format!("{:?}", curve.stop));
    b.set("recursive_covered", curve.covered().count());
    b.set("recursive_spread", num(curve.spread));
    b.set("recursive_normalized", false);

    let g_used = match &matrix {
        Some(m) => {
            let (gap, offset, overlap) = route_discrepancy(&curve, &m.g_rank);
            b.set("route_max_discrepancy", num(gap));
            b.set("route_offset", num(offset));
            b.set("route_overlap", overlap);
            m.g_rank.clone()
        }
        None => demean(&curve.filled()),
    };
    b.set("gamma_source_g", if matrix.is_some() { "matrix" } else { "recursive" });

    let gamma = estimate_gamma_series(weights, &g_used)?;
    let consistency = verify_consistency(theta, &g_used, &gamma, &est.g_rank)?;
    let model = build_second_order_model(&g_used, &gamma, &est.sigma2)?;
    b.set("max_rank_residual", num(consistency.max_rank_residual));
    b.set("max_name_residual", num(consistency.max_name_residual));
    b.set("second_order_valid", model.is_valid());
    b.set("second_order_failures", model.validity.describe_failures());

    let rows: Vec<GRankRow> = (0..n)
        .map(|k| GRankRow {
            rank: k + 1,
            g_matrix: matrix.as_ref().map(|m| m.g_rank[k]),
            g_recursive: curve.values[k],
            g_recursive_normalized: normalized.values[k],
        })
        .collect();
    let p = b.path("g_rank.csv");
    export::write_g_rank(&p, &rows)?;

    let avg_rank = export::average_log_weight_ranks(weights);
    let mut gamma_rows: Vec<GammaRow> = (0..n)
        .map(|i| GammaRow {
            name: weights.names()[i].clone(),
            avg_rank: avg_rank[i],
            gamma: gamma[i],
            gamma_matrix: matrix.as_ref().map(|m| m.gamma_name[i]),
        })
        .collect();
    gamma_rows.sort_by_key(|r| r.avg_rank);
    let p = b.path("gamma.csv");
    export::write_gamma(&p, &gamma_rows)?;
    let p = b.path("residuals.csv");
    export::write_residuals(&p, &consistency, weights.names())?;

    if command == Command::ClosedLoop {
        let truth = &s.params;
        b.set("truth_max_error_g", num(max_abs_diff(&g_used, &truth.g)));
        b.set("truth_max_error_gamma", num(max_abs_diff(&gamma, &truth.gamma)));
        if let Some(m) = &matrix {
            b.set("truth_max_error_gamma_matrix", num(max_abs_diff(&m.gamma_name, &truth.gamma)));
        }
        let sigma_rel = est
            .sigma2
            .iter()
            .zip(&truth.sigma)
            .map(|(s2, s)| (s2.sqrt() / s - 1.0).abs())
            .fold(0.0, f64::max);
        b.set("truth_max_rel_error_sigma", num(sigma_rel));
    }
    Ok(())
}

/// Convenience for tests and callers holding a path.
pub fn output_file(outcome: &Outcome, name: &str) -> Option<PathBuf> {
    outcome.files.iter().any(|f| f == name).then(|| Path::new(&outcome.output_dir).join(name))
}
