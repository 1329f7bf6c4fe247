//! Long-format telemetry loading, pivoting to a wide frame, and cleaning.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LONG_HEADER: [&str; 3] = ["timestamp", "metric", "value"];

/// Default upper bound on the fraction of missing cells a column may have.
pub const DEFAULT_MAX_MISSING: f64 = 0.5;

/// One row of a long-format export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRecord {
    pub timestamp: i64,
    pub metric: String,
    pub value: f64,
}

impl LongRecord {
    pub fn new(timestamp: i64, metric: impl Into<String>, value: f64) -> Self {
        Self {
            timestamp,
            metric: metric.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub records: usize,
    pub skipped: usize,
}

/// Time-indexed wide matrix, stored column-major. Missing cells are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFrame {
    timestamps: Vec<i64>,
    columns: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl MetricFrame {
    pub const MISSING: f64 = f64::NAN;

    pub fn new(timestamps: Vec<i64>, columns: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(index) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::TemporalOrder { index: index + 1 });
        }
        if columns.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: columns.len(),
                right: values.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for name in &columns {
            if !seen.insert(name.as_str()) {
                return Err(Error::Format(format!("duplicate column {name}")));
            }
        }
        for (name, col) in columns.iter().zip(&values) {
            if col.len() != timestamps.len() {
                return Err(Error::in_column(
                    name,
                    Error::LengthMismatch {
                        left: col.len(),
                        right: timestamps.len(),
                    },
                ));
            }
            if let Some(index) = col.iter().position(|v| v.is_infinite()) {
                return Err(Error::in_column(
                    name,
                    Error::Domain {
                        index,
                        reason: "infinite value".into(),
                    },
                ));
            }
        }
        Ok(Self {
            timestamps,
            columns,
            values,
        })
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).map(|i| self.values[i].as_slice())
    }

    pub fn column_at(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    pub fn iter_columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.columns
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.as_str(), v.as_slice()))
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|c| c.iter().all(|v| !v.is_nan()))
    }

    /// New frame holding only `names`, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let mut values = Vec::with_capacity(names.len());
        for name in names {
            let col = self
                .column(name)
                .ok_or_else(|| Error::Data(format!("unknown column {name}")))?;
            values.push(col.to_vec());
        }
        Self::new(self.timestamps.clone(), names.to_vec(), values)
    }

    /// Long-form view: one record per observed (timestamp, column) cell.
    pub fn to_long_records(&self) -> Vec<LongRecord> {
        let mut out = Vec::new();
        for (row, &ts) in self.timestamps.iter().enumerate() {
            for (name, col) in self.columns.iter().zip(&self.values) {
                let v = col[row];
                if !v.is_nan() {
                    out.push(LongRecord::new(ts, name.clone(), v));
                }
            }
        }
        out
    }

    /// Wide CSV with `timestamp` first; missing cells are empty.
    pub fn write_wide_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        let mut row = Vec::with_capacity(header.len());
        for (i, ts) in self.timestamps.iter().enumerate() {
            row.clear();
            row.push(ts.to_string());
            for col in &self.values {
                let v = col[i];
                row.push(if v.is_nan() { String::new() } else { v.to_string() });
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn read_wide_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(csv_err)?.clone();
        if headers.get(0) != Some("timestamp") {
            return Err(Error::Format("wide CSV must start with a timestamp column".into()));
        }
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut timestamps = Vec::new();
        let mut values = vec![Vec::new(); columns.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let ts = rec
                .get(0)
                .and_then(|s| s.trim().parse::<i64>().ok())
                .ok_or_else(|| Error::Format(format!("bad timestamp on data row {}", line + 1)))?;
            timestamps.push(ts);
            for (j, col) in values.iter_mut().enumerate() {
                let cell = rec.get(j + 1).unwrap_or("").trim();
                let v = if cell.is_empty() {
                    MetricFrame::MISSING
                } else {
                    cell.parse::<f64>().map_err(|_| {
                        Error::Format(format!("bad value {cell:?} on data row {}", line + 1))
                    })?
                };
                col.push(v);
            }
        }
        Self::new(timestamps, columns, values)
    }

    pub fn read_wide_csv_path(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_wide_csv(file)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Parses a long-format CSV stream. Rows whose value (or timestamp) does not
/// parse to a finite number are skipped and counted.
pub fn parse_long_metrics<R: Read>(reader: R) -> Result<(Vec<LongRecord>, LoadSummary)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = r.headers().map_err(csv_err)?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != LONG_HEADER {
        return Err(Error::Format(format!(
            "expected header `timestamp,metric,value`, found `{}`",
            got.join(",")
        )));
    }
    let mut records = Vec::new();
    let mut skipped = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let parsed = (|| {
            if rec.len() != 3 {
                return None;
            }
            let ts = rec[0].trim().parse::<i64>().ok()?;
            let metric = rec[1].trim();
            let value = rec[2].trim().parse::<f64>().ok()?;
            if metric.is_empty() || !value.is_finite() {
                return None;
            }
            Some(LongRecord::new(ts, metric, value))
        })();
        match parsed {
            Some(record) => records.push(record),
            None => skipped += 1,
        }
    }
    let summary = LoadSummary {
        records: records.len(),
        skipped,
    };
    Ok((records, summary))
}

pub fn load_long_metrics(path: &Path) -> Result<(Vec<LongRecord>, LoadSummary)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_long_metrics(file)
}

pub fn write_long_csv<W: Write>(records: &[LongRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LONG_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([r.timestamp.to_string(), r.metric.clone(), r.value.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotSummary {
    pub rows: usize,
    pub columns: usize,
    pub duplicates: usize,
}

/// Long to wide: rows sorted by timestamp, columns sorted by name, last
/// occurrence of a duplicated (timestamp, metric) pair wins.
pub fn pivot_to_wide(records: &[LongRecord]) -> Result<(MetricFrame, PivotSummary)> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let timestamps: Vec<i64> = records
        .iter()
        .map(|r| r.timestamp)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let columns: Vec<String> = records
        .iter()
        .map(|r| r.metric.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    let row_of: BTreeMap<i64, usize> = timestamps.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let col_of: BTreeMap<&str, usize> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut values = vec![vec![MetricFrame::MISSING; timestamps.len()]; columns.len()];
    let mut duplicates = 0;
    for r in records {
        let cell = &mut values[col_of[r.metric.as_str()]][row_of[&r.timestamp]];
        if !cell.is_nan() {
            duplicates += 1;
        }
        *cell = r.value;
    }
    let summary = PivotSummary {
        rows: timestamps.len(),
        columns: columns.len(),
        duplicates,
    };
    Ok((MetricFrame::new(timestamps, columns, values)?, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    HighMissing { fraction: f64 },
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub column: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningSummary {
    pub input_rows: usize,
    pub input_columns: usize,
    pub max_missing_fraction: f64,
    pub retained: Vec<String>,
    pub dropped: Vec<DroppedColumn>,
    pub filled_cells: usize,
}

/// Drops mostly-missing columns, back-fills the remaining gaps (trailing gaps
/// take the last observation), then drops constant columns.
pub fn clean_frame(frame: &MetricFrame, max_missing_fraction: f64) -> Result<(MetricFrame, CleaningSummary)> {
    if !(0.0..=1.0).contains(&max_missing_fraction) {
        return Err(Error::Config(format!(
            "max_missing_fraction must lie in [0, 1], got {max_missing_fraction}"
        )));
    }
    let n = frame.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }

    let mut retained = Vec::new();
    let mut kept_values = Vec::new();
    let mut dropped = Vec::new();
    let mut filled_cells = 0;

    for (name, col) in frame.iter_columns() {
        let missing = col.iter().filter(|v| v.is_nan()).count();
        let fraction = missing as f64 / n as f64;
        if fraction > max_missing_fraction || missing == n {
            dropped.push(DroppedColumn {
                column: name.to_string(),
                reason: DropReason::HighMissing { fraction },
            });
            continue;
        }
        let filled = backfill(col);
        filled_cells += missing;
        if filled.iter().all(|&v| v == filled[0]) {
            dropped.push(DroppedColumn {
                column: name.to_string(),
                reason: DropReason::ZeroVariance,
            });
            continue;
        }
        retained.push(name.to_string());
        kept_values.push(filled);
    }

    if retained.is_empty() {
        return Err(Error::DegenerateFrame);
    }
    let summary = CleaningSummary {
        input_rows: n,
        input_columns: frame.n_cols(),
        max_missing_fraction,
        retained: retained.clone(),
        dropped,
        filled_cells,
    };
    Ok((MetricFrame::new(frame.timestamps.clone(), retained, kept_values)?, summary))
}

fn backfill(col: &[f64]) -> Vec<f64> {
    let mut out = col.to_vec();
    let mut next = f64::NAN;
    for v in out.iter_mut().rev() {
        if v.is_nan() {
            *v = next;
        } else {
            next = *v;
        }
    }
    // trailing gaps: carry the last observation forward
    let mut last = f64::NAN;
    for v in out.iter_mut() {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
    out
}
