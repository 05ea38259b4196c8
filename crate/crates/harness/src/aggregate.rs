//! Per-method summaries over seeds.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toalign_core::train::{ExperimentRecord, Method};
use toalign_core::Error as CoreError;

use crate::error::{HarnessError, Result};

/// One line of `results.csv`. Means use the final epoch of every seed; the
/// loss means are empty when no seed has that loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub seeds: usize,
    pub mean_acc: Option<f64>,
    /// Population standard deviation.
    pub std_acc: Option<f64>,
    pub mean_lcls: Option<f64>,
    pub mean_ld: Option<f64>,
    pub failures: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn mean_of(values: Vec<Option<f64>>) -> Option<f64> {
    let present: Option<Vec<f64>> = values.into_iter().collect();
    present.filter(|v| !v.is_empty()).map(|v| mean(&v))
}

/// Summaries for every method present in `records`, sorted by method name.
pub fn aggregate(records: &[ExperimentRecord]) -> Result<Vec<AggregateRow>> {
    if let Some(first) = records.first() {
        if let Some(odd) = records.iter().find(|r| r.epochs.len() != first.epochs.len()) {
            return Err(CoreError::Contract(format!(
                "mixed epoch counts: {} has {} records, {} has {}",
                first.method,
                first.epochs.len(),
                odd.method,
                odd.epochs.len()
            ))
            .into());
        }
    }
    let mut groups: BTreeMap<&str, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        if r.epochs.is_empty() {
            return Err(CoreError::Contract(format!("{} seed {} has no epochs", r.method, r.seed)).into());
        }
        groups.entry(r.method.name()).or_default().push(r);
    }
    Ok(groups
        .into_values()
        .map(|rs| {
            let accs: Vec<f64> = rs.iter().map(|r| r.last().target_acc).collect();
            AggregateRow {
                method: rs[0].method,
                seeds: rs.len(),
                mean_acc: Some(mean(&accs)),
                std_acc: Some(population_std(&accs)),
                mean_lcls: mean_of(rs.iter().map(|r| r.last().l_cls).collect()),
                mean_ld: mean_of(rs.iter().map(|r| r.last().l_d).collect()),
                failures: 0,
            }
        })
        .collect())
}

/// Adds failure counts, with empty rows for methods that never succeeded.
pub fn with_failures(mut rows: Vec<AggregateRow>, failures: &BTreeMap<Method, usize>) -> Vec<AggregateRow> {
    for (&method, &n) in failures.iter().filter(|(_, &n)| n > 0) {
        match rows.iter_mut().find(|r| r.method == method) {
            Some(row) => row.failures = n,
            None => rows.push(AggregateRow {
                method,
                seeds: 0,
                mean_acc: None,
                std_acc: None,
                mean_lcls: None,
                mean_ld: None,
                failures: n,
            }),
        }
    }
    rows.sort_by_key(|r| r.method.name());
    rows
}

pub fn write_results_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path)(io),
        other => HarnessError::Config(format!("{other:?}")),
    })?;
    w.write_record(["method", "seeds", "mean_acc", "std_acc", "mean_lcls", "mean_ld", "failures"])?;
    for r in rows {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        w.write_record([
            r.method.name().to_string(),
            r.seeds.to_string(),
            opt(r.mean_acc),
            opt(r.std_acc),
            opt(r.mean_lcls),
            opt(r.mean_ld),
            r.failures.to_string(),
        ])?;
    }
    w.flush().map_err(HarnessError::io(path))?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let opt = |i: usize| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
            }
        };
        let int = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
        };
        rows.push(AggregateRow {
            method: rec[0].parse()?,
            seeds: int(1)?,
            mean_acc: opt(2)?,
            std_acc: opt(3)?,
            mean_lcls: opt(4)?,
            mean_ld: opt(5)?,
            failures: int(6)?,
        });
    }
    Ok(rows)
}
