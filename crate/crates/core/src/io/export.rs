//! Plot-ready CSV writers and readers for the exported tables.
//!
//! Numbers are written with 17 significant digits so that every value parses
//! back to the same `f64`. Ranks in files are one-based.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::first_order::FirstOrderEstimates;
use crate::flow::{FlowTable, GrowthSlopes, RankMap};
use crate::ranker::capital_distribution_curve;
use crate::second_order::{ConsistencyReport, LinearRankFit};
use crate::types::{MarketHistory, OccupationMatrix, WeightHistory};

/// Round-trip formatting of a float.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn create(path: &Path, comments: &[String]) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    for line in comments {
        writeln!(out, "# {line}")?;
    }
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out))
}

fn finish(mut w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// `key=value` lines in the given order.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        writeln!(out, "{k}={v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::InvalidInput(format!("manifest line without '=': {l}")))
        })
        .collect()
}

/// Wide capitalization table, re-ingestible. `dates` defaults to step indices.
pub fn write_history(path: &Path, history: &MarketHistory, dates: Option<&[String]>, comments: &[String]) -> Result<()> {
    let mut w = create(path, comments)?;
    let mut header = vec!["date".to_string()];
    header.extend(history.names().iter().cloned());
    w.write_record(&header)?;
    for t in 0..history.n_steps() {
        let label = dates.map_or_else(|| t.to_string(), |d| d[t].clone());
        let mut rec = vec![label];
        rec.extend(history.row(t).iter().map(|x| num(x.exp())));
        w.write_record(&rec)?;
    }
    finish(w)
}

pub fn write_first_order(path: &Path, est: &FirstOrderEstimates, smoothed: Option<(&[f64], &[f64])>) -> Result<()> {
    let mut w = create(path, &[])?;
    let mut header = vec!["rank", "sigma2", "sigma", "g_rank", "net_drift"];
    if smoothed.is_some() {
        header.extend(["sigma2_smoothed", "g_rank_smoothed"]);
    }
    w.write_record(&header)?;
    for k in 0..est.sigma2.len() {
        let mut rec = vec![
            (k + 1).to_string(),
            num(est.sigma2[k]),
            num(est.sigma2[k].sqrt()),
            num(est.g_rank[k]),
            num(est.net_rank_drift[k]),
        ];
        if let Some((s2, g)) = smoothed {
            rec.extend([num(s2[k]), num(g[k])]);
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

/// One row per adjacent rank pair `(k, k + 1)`.
pub fn write_local_times(path: &Path, lambda: &[f64]) -> Result<()> {
    let mut w = create(path, &[])?;
    w.write_record(["rank", "next_rank", "lambda"])?;
    for (k, l) in lambda.iter().enumerate() {
        w.write_record([(k + 1).to_string(), (k + 2).to_string(), num(*l)])?;
    }
    finish(w)
}

pub fn write_occupation(path: &Path, theta: &OccupationMatrix, names: &[String]) -> Result<()> {
    let mut w = create(path, &[])?;
    let mut header = vec!["rank".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for k in 0..theta.n() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(theta.row(k).iter().map(|x| num(*x)));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Log-log capital distribution curves at the given steps.
pub fn write_capital_distribution(path: &Path, weights: &WeightHistory, steps: &[usize]) -> Result<()> {
    let mut w = create(path, &[])?;
    w.write_record(["step", "rank", "log_rank", "weight", "log_weight"])?;
    for &t in steps {
        let curve = capital_distribution_curve(weights, t)?;
        for (k, (&mu, (lr, lw))) in curve.ranked_weights.iter().zip(curve.log_log()).enumerate() {
            w.write_record([t.to_string(), (k + 1).to_string(), num(lr), num(mu), num(lw)])?;
        }
    }
    finish(w)
}

pub fn write_flows(path: &Path, flow: &FlowTable) -> Result<()> {
    let mut w = create(path, &[])?;
    w.write_record(["rank", "tau_days", "phi", "phi_rev", "count"])?;
    for k in 0..flow.n_ranks() {
        for (j, tau) in flow.taus.iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                tau.to_string(),
                num(flow.phi[k][j]),
                num(flow.phi_rev[k][j]),
                flow.valid_window_count[j].to_string(),
            ])?;
        }
    }
    finish(w)
}

pub fn write_rank_map(path: &Path, map: &RankMap, fit: Option<&LinearRankFit>) -> Result<()> {
    let mut w = create(path, &[format!("tau_days={}", map.tau)])?;
    w.write_record(["k", "R_fwd", "R_bwd", "R_bar", "R_fit"])?;
    for k in 0..map.averaged.len() {
        w.write_record([
            (k + 1).to_string(),
            num(map.expected_rank_fwd[k]),
            num(map.expected_rank_bwd[k]),
            map.averaged[k].to_string(),
            opt(fit.map(|f| f.eval((k + 1) as f64))),
        ])?;
    }
    finish(w)
}

pub fn write_growth(path: &Path, g_bar: &[f64], slopes: &GrowthSlopes, fit: Option<&LinearRankFit>) -> Result<()> {
    let mut w = create(path, &[format!("tau_days={}", slopes.tau)])?;
    w.write_record(["rank", "g_bar", "G_fwd", "G_bwd", "G_bar", "G_fit"])?;
    for k in 0..g_bar.len() {
        w.write_record([
            (k + 1).to_string(),
            num(g_bar[k]),
            num(slopes.forward[k]),
            num(slopes.backward[k]),
            num(slopes.averaged[k]),
            opt(fit.map(|f| f.eval((k + 1) as f64))),
        ])?;
    }
    finish(w)
}

pub fn write_fits(path: &Path, fits: &[(&str, &LinearRankFit)]) -> Result<()> {
    let mut w = create(path, &[])?;
    w.write_record(["quantity", "intercept", "slope", "rms_residual"])?;
    for (name, f) in fits {
        w.write_record([name.to_string(), num(f.intercept), num(f.slope), num(f.rms_residual)])?;
    }
    finish(w)
}

/// One row of the rank-drift export.
#[derive(Debug, Clone, PartialEq)]
pub struct GRankRow {
    /// One-based.
    pub rank: usize,
    pub g_matrix: Option<f64>,
    pub g_recursive: Option<f64>,
    pub g_recursive_normalized: Option<f64>,
}

pub fn write_g_rank(path: &Path, rows: &[GRankRow]) -> Result<()> {
    let mut w = create(path, &[])?;
    w.write_record(["rank", "g_matrix", "g_recursive", "g_recursive_normalized"])?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            opt(r.g_matrix),
            opt(r.g_recursive),
            opt(r.g_recursive_normalized),
        ])?;
    }
    finish(w)
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader)
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::InvalidInput(format!("cannot parse number {field:?}")))
}

fn parse_usize(field: &str) -> Result<usize> {
    field.parse().map_err(|_| Error::InvalidInput(format!("cannot parse integer {field:?}")))
}

pub fn read_g_rank<R: Read>(reader: R) -> Result<Vec<GRankRow>> {
    csv_reader(reader)
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(GRankRow {
                rank: parse_usize(&rec[0])?,
                g_matrix: parse_opt(&rec[1])?,
                g_recursive: parse_opt(&rec[2])?,
                g_recursive_normalized: parse_opt(&rec[3])?,
            })
        })
        .collect()
}

/// One row of the name-drift table.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaRow {
    pub name: String,
    /// One-based rank of the name's average log weight.
    pub avg_rank: usize,
    pub gamma: f64,
    pub gamma_matrix: Option<f64>,
}

impl GammaRow {
    /// Display form, two decimals of a percent: `0.14%`, `-1.67%`.
    pub fn percent(&self) -> String {
        format!("{:.2}%", self.gamma * 100.0)
    }

    /// Display form `NAME (rank)`.
    pub fn label(&self) -> String {
        format!("{} ({})", self.name, self.avg_rank)
    }
}

pub fn write_gamma(path: &Path, rows: &[GammaRow]) -> Result<()> {
    let mut w = create(path, &[])?;
    w.write_record(["name", "avg_rank", "gamma", "gamma_pct", "label", "gamma_matrix"])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.avg_rank.to_string(),
            num(r.gamma),
            r.percent(),
            r.label(),
            opt(r.gamma_matrix),
        ])?;
    }
    finish(w)
}

pub fn read_gamma<R: Read>(reader: R) -> Result<Vec<GammaRow>> {
    csv_reader(reader)
        .records()
        .map(|rec| {
            let rec = rec?;
            let gamma = parse_opt(&rec[2])?
                .ok_or_else(|| Error::InvalidInput(format!("missing gamma for {}", &rec[0])))?;
            Ok(GammaRow {
                name: rec[0].to_string(),
                avg_rank: parse_usize(&rec[1])?,
                gamma,
                gamma_matrix: parse_opt(&rec[5])?,
            })
        })
        .collect()
}

pub fn write_residuals(path: &Path, report: &ConsistencyReport, names: &[String]) -> Result<()> {
    let mut w = create(
        path,
        &[
            format!("max_rank_residual={}", num(report.max_rank_residual)),
            format!("max_name_residual={}", num(report.max_name_residual)),
        ],
    )?;
    w.write_record(["kind", "index", "label", "residual"])?;
    for (k, r) in report.rank_residuals.iter().enumerate() {
        w.write_record(["rank".to_string(), (k + 1).to_string(), (k + 1).to_string(), num(*r)])?;
    }
    for (i, r) in report.name_residuals.iter().enumerate() {
        w.write_record(["name".to_string(), (i + 1).to_string(), names[i].clone(), num(*r)])?;
    }
    finish(w)
}

/// One-based rank of each name's time-averaged log weight, ties to the lower index.
pub fn average_log_weight_ranks(weights: &WeightHistory) -> Vec<usize> {
    let n = weights.n_assets();
    let mut mean = vec![0.0; n];
    for t in 0..weights.n_steps() {
        for (m, x) in mean.iter_mut().zip(weights.row(t)) {
            *m += x;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]).then(a.cmp(&b)));
    let mut rank = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k + 1;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DEFAULT_DT;

    #[test]
    fn number_format_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, 0.0, -0.0, f64::MIN_POSITIVE] {
            let back: f64 = num(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn table_one_display() {
        let row = GammaRow { name: "GE".into(), avg_rank: 1, gamma: 0.0014, gamma_matrix: None };
        assert_eq!(row.percent(), "0.14%");
        assert_eq!(row.label(), "GE (1)");
        let row = GammaRow { name: "AAPL".into(), avg_rank: 93, gamma: -0.0167, gamma_matrix: None };
        assert_eq!(row.percent(), "-1.67%");
        assert_eq!(row.label(), "AAPL (93)");
    }

    #[test]
    fn gamma_and_g_rank_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            GammaRow { name: "A, Inc".into(), avg_rank: 2, gamma: 1.0 / 3.0, gamma_matrix: Some(-0.1) },
            GammaRow { name: "B".into(), avg_rank: 1, gamma: -1e-17, gamma_matrix: None },
        ];
        let p = dir.path().join("gamma.csv");
        write_gamma(&p, &rows).unwrap();
        assert_eq!(read_gamma(File::open(&p).unwrap()).unwrap(), rows);

        let rows = vec![
            GRankRow { rank: 1, g_matrix: Some(-0.123456789012345678), g_recursive: Some(0.2), g_recursive_normalized: Some(0.0) },
            GRankRow { rank: 2, g_matrix: Some(std::f64::consts::PI), g_recursive: None, g_recursive_normalized: None },
        ];
        let p = dir.path().join("g_rank.csv");
        write_g_rank(&p, &rows).unwrap();
        assert_eq!(read_g_rank(File::open(&p).unwrap()).unwrap(), rows);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.txt");
        let entries = vec![("a".to_string(), "1".to_string()), ("b".to_string(), "x=y".to_string())];
        write_manifest(&p, &entries).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), entries);
    }

    #[test]
    fn average_ranks_follow_mean_log_weight() {
        let w = WeightHistory::from_weight_rows(DEFAULT_DT, &[vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], vec![0.2, 0.3, 0.5]])
            .unwrap();
        assert_eq!(average_log_weight_ranks(&w), vec![3, 2, 1]);
    }
}
