//! Capitalization CSV ingestion, long (`date,asset,cap`) or wide
//! (`date,<asset>,...`) layout.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::MarketHistory;

/// A parsed capitalization file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub history: MarketHistory,
    /// Date labels in chronological order, one per history row.
    pub dates: Vec<String>,
    /// Assets removed for lacking a full history, in file order.
    pub dropped: Vec<String>,
    /// Assets removed by the universe cutoff, in file order.
    pub cut: Vec<String>,
    pub layout: Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Long,
    Wide,
}

pub fn ingest_csv(path: &Path, dt: f64) -> Result<Ingested> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, dt)
}

/// Parses capitalizations, drops assets with any missing observation and
/// takes logs. `cutoff` keeps only the largest assets at the first date.
pub fn ingest_reader<R: Read>(reader: R, dt: f64) -> Result<Ingested> {
    ingest_with_cutoff(reader, dt, None)
}

pub fn ingest_with_cutoff<R: Read>(reader: R, dt: f64, cutoff: Option<usize>) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(Error::InvalidInput("header needs a date column and at least one asset".into()));
    }
    let lower: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    let layout = if lower == ["date", "asset", "cap"] { Layout::Long } else { Layout::Wide };

    // cells[asset][date] = cap
    let mut assets: Vec<String> = Vec::new();
    let mut asset_index: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<HashMap<String, f64>> = Vec::new();
    let mut dates: Vec<String> = Vec::new();
    let mut seen_dates: HashMap<String, ()> = HashMap::new();

    if layout == Layout::Wide {
        for name in &header[1..] {
            if asset_index.insert(name.clone(), assets.len()).is_some() {
                return Err(Error::InvalidInput(format!("duplicate asset column {name}")));
            }
            assets.push(name.clone());
            cells.push(HashMap::new());
        }
    }

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let date = record[0].to_string();
        if date.is_empty() {
            return Err(Error::InvalidInput(format!("row {line}: empty date")));
        }
        match layout {
            Layout::Long => {
                let asset = record[1].to_string();
                let cap = parse_cap(&record[2], line)?;
                let idx = *asset_index.entry(asset.clone()).or_insert_with(|| {
                    assets.push(asset.clone());
                    cells.push(HashMap::new());
                    assets.len() - 1
                });
                let Some(cap) = cap else { continue };
                if cells[idx].insert(date.clone(), cap).is_some() {
                    return Err(Error::InvalidInput(format!("row {line}: duplicate entry for {asset} on {date}")));
                }
                if seen_dates.insert(date.clone(), ()).is_none() {
                    dates.push(date);
                }
            }
            Layout::Wide => {
                if seen_dates.insert(date.clone(), ()).is_some() {
                    return Err(Error::InvalidInput(format!("row {line}: duplicate date {date}")));
                }
                for (idx, field) in record.iter().skip(1).enumerate() {
                    if let Some(cap) = parse_cap(field, line)? {
                        cells[idx].insert(date.clone(), cap);
                    }
                }
                dates.push(date);
            }
        }
    }
    sort_dates(&mut dates);
    if dates.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 dates, found {}", dates.len())));
    }

    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for (idx, name) in assets.iter().enumerate() {
        if dates.iter().all(|d| cells[idx].contains_key(d)) {
            kept.push(idx);
        } else {
            dropped.push(name.clone());
        }
    }

    let mut cut = Vec::new();
    if let Some(limit) = cutoff {
        if kept.len() > limit {
            let first = &dates[0];
            let mut by_size = kept.clone();
            by_size.sort_by(|&a, &b| cells[b][first].total_cmp(&cells[a][first]).then(a.cmp(&b)));
            let keep: BTreeMap<usize, ()> = by_size[..limit].iter().map(|&i| (i, ())).collect();
            cut = kept.iter().filter(|i| !keep.contains_key(i)).map(|&i| assets[i].clone()).collect();
            kept.retain(|i| keep.contains_key(i));
        }
    }
    if kept.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "only {} asset(s) with a full history; dropped: {}",
            kept.len(),
            dropped.join(" ")
        )));
    }

    let mut log_caps = Vec::with_capacity(dates.len() * kept.len());
    for d in &dates {
        log_caps.extend(kept.iter().map(|&i| cells[i][d].ln()));
    }
    let names = kept.iter().map(|&i| assets[i].clone()).collect();
    let times = (0..dates.len()).map(|t| t as f64).collect();
    let history = MarketHistory::new(times, dt, log_caps, names)?;
    Ok(Ingested { history, dates, dropped, cut, layout })
}

/// Empty cells are missing observations; anything else must be a positive number.
fn parse_cap(field: &str, line: u64) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    let v: f64 = field
        .parse()
        .map_err(|_| Error::InvalidInput(format!("row {line}: cannot parse capitalization {field:?}")))?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidInput(format!("row {line}: capitalization must be positive, got {field}")));
    }
    Ok(Some(v))
}

/// Numeric order when every label parses as a number, lexicographic otherwise.
fn sort_dates(dates: &mut [String]) {
    let numeric: Option<Vec<f64>> = dates.iter().map(|d| d.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => dates.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap())),
        None => dates.sort(),
    }
}
