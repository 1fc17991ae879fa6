//! CSV readers and writers for every table the crate emits.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces the values bit for bit.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::models::norm;
use crate::optimize::OptimPath;
use crate::sampling::TimeSeries;
use crate::spectral::{FreqGrid, SpectrumSamples};

/// A row type with a fixed column schema. `dim` is the parameter dimension
/// for schemas with `theta_1..theta_d` style columns.
pub trait CsvRecord: Sized {
    fn headers(dim: usize) -> Vec<String>;
    fn to_record(&self) -> Vec<String>;
    fn from_record(row: &Row<'_>) -> Result<Self>;
    fn dim(&self) -> usize {
        0
    }
}

/// A parsed CSV row with lookup by column name.
pub struct Row<'a> {
    headers: &'a StringRecord,
    record: &'a StringRecord,
}

impl Row<'_> {
    pub fn str(&self, name: &str) -> Result<&str> {
        self.headers
            .iter()
            .position(|h| h == name)
            .and_then(|i| self.record.get(i))
            .ok_or_else(|| invalid(format!("missing column {name:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        let s = self.str(name)?;
        s.parse()
            .map_err(|_| invalid(format!("cannot parse {s:?} in column {name:?}")))
    }

    /// Empty cells read as `None`.
    pub fn optional<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>> {
        match self.str(name)? {
            "" => Ok(None),
            _ => self.parse(name).map(Some),
        }
    }

    /// Columns `prefix_1, prefix_2, …` in order.
    pub fn vector(&self, prefix: &str) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        loop {
            let name = format!("{prefix}_{}", out.len() + 1);
            if !self.headers.iter().any(|h| h == name) {
                return Ok(out);
            }
            out.push(self.parse(&name)?);
        }
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `prefix_1..prefix_dim`.
pub fn indexed(prefix: &str, dim: usize) -> impl Iterator<Item = String> + '_ {
    (1..=dim).map(move |k| format!("{prefix}_{k}"))
}

pub fn write_records<R: CsvRecord, W: Write>(writer: W, rows: &[R]) -> Result<()> {
    let dim = rows.first().map_or(0, CsvRecord::dim);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(R::headers(dim))?;
    for r in rows {
        if r.dim() != dim {
            return Err(invalid("rows of one table must share the parameter dimension"));
        }
        w.write_record(r.to_record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: CsvRecord, Rd: Read>(reader: Rd) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(R::from_record(&Row {
            headers: &headers,
            record: &rec,
        })?);
    }
    Ok(out)
}

pub fn write_csv<R: CsvRecord>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    write_records(File::create(path)?, rows)
}

pub fn read_csv<R: CsvRecord>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    read_records(File::open(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Spectra: `omega,value`

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumRow {
    pub omega: f64,
    pub value: f64,
}

impl CsvRecord for SpectrumRow {
    fn headers(_: usize) -> Vec<String> {
        vec!["omega".into(), "value".into()]
    }

    fn to_record(&self) -> Vec<String> {
        vec![fmt_f64(self.omega), fmt_f64(self.value)]
    }

    fn from_record(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            omega: row.parse("omega")?,
            value: row.parse("value")?,
        })
    }
}

pub fn write_spectrum_csv(path: impl AsRef<Path>, s: &SpectrumSamples) -> Result<()> {
    let rows: Vec<SpectrumRow> = s
        .grid()
        .freqs()
        .iter()
        .zip(s.values())
        .map(|(&omega, &value)| SpectrumRow { omega, value })
        .collect();
    write_csv(path, &rows)
}

/// Reads a spectrum written by [`write_spectrum_csv`]; the frequencies must
/// form the canonical grid for the row count.
pub fn read_spectrum_csv(path: impl AsRef<Path>, exclude_zero: bool) -> Result<SpectrumSamples> {
    let rows: Vec<SpectrumRow> = read_csv(path)?;
    let grid = FreqGrid::new(rows.len(), exclude_zero)?;
    for (r, w) in rows.iter().zip(grid.freqs()) {
        if (r.omega - w).abs() > 1e-9 {
            return Err(invalid(format!(
                "frequency {} does not match the grid value {w}",
                r.omega
            )));
        }
    }
    SpectrumSamples::new(grid, rows.into_iter().map(|r| r.value).collect())
}

// ---------------------------------------------------------------------------
// Series: `t,x`

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesRow {
    pub t: usize,
    pub x: f64,
}

impl CsvRecord for SeriesRow {
    fn headers(_: usize) -> Vec<String> {
        vec!["t".into(), "x".into()]
    }

    fn to_record(&self) -> Vec<String> {
        vec![self.t.to_string(), fmt_f64(self.x)]
    }

    fn from_record(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            t: row.parse("t")?,
            x: row.parse("x")?,
        })
    }
}

pub fn write_series_csv(path: impl AsRef<Path>, x: &TimeSeries) -> Result<()> {
    let rows: Vec<SeriesRow> = x
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| SeriesRow { t: i + 1, x })
        .collect();
    write_csv(path, &rows)
}

pub fn read_series_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let rows: Vec<SeriesRow> = read_csv(path)?;
    for (i, r) in rows.iter().enumerate() {
        if r.t != i + 1 {
            return Err(invalid(format!("expected t = {}, found {}", i + 1, r.t)));
        }
    }
    TimeSeries::new(rows.into_iter().map(|r| r.x).collect())
}

// ---------------------------------------------------------------------------
// Optimisation paths: `iter,theta_1..theta_d,grad_norm,step,objective`

/// One iterate of a path. `step` is the step taken from this iterate and is
/// empty on the last row.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRow {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub grad_norm: f64,
    pub step: Option<f64>,
    pub objective: f64,
}

impl CsvRecord for PathRow {
    fn headers(dim: usize) -> Vec<String> {
        let mut h = vec!["iter".to_string()];
        h.extend(indexed("theta", dim));
        h.extend(["grad_norm", "step", "objective"].map(String::from));
        h
    }

    fn to_record(&self) -> Vec<String> {
        let mut r = vec![self.iter.to_string()];
        r.extend(self.theta.iter().map(|&v| fmt_f64(v)));
        r.extend([fmt_f64(self.grad_norm), fmt_opt(self.step), fmt_f64(self.objective)]);
        r
    }

    fn from_record(row: &Row<'_>) -> Result<Self> {
        Ok(Self {
            iter: row.parse("iter")?,
            theta: row.vector("theta")?,
            grad_norm: row.parse("grad_norm")?,
            step: row.optional("step")?,
            objective: row.parse("objective")?,
        })
    }

    fn dim(&self) -> usize {
        self.theta.len()
    }
}

pub fn path_rows(path: &OptimPath) -> Vec<PathRow> {
    (0..path.iterates.len())
        .map(|k| PathRow {
            iter: k,
            theta: path.iterates[k].clone(),
            grad_norm: norm(&path.gradients[k]),
            step: path.steps.get(k).copied(),
            objective: path.objective[k],
        })
        .collect()
}

pub fn write_path_csv(path: impl AsRef<Path>, p: &OptimPath) -> Result<()> {
    write_csv(path, &path_rows(p))
}

pub fn read_path_csv(path: impl AsRef<Path>) -> Result<Vec<PathRow>> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_rows_round_trip_in_memory() {
        let rows = vec![
            PathRow {
                iter: 0,
                theta: vec![0.1, -1.0 / 3.0],
                grad_norm: 2.5,
                step: Some(0.01),
                objective: 1e-300,
            },
            PathRow {
                iter: 1,
                theta: vec![f64::MIN_POSITIVE, 7.0],
                grad_norm: 0.0,
                step: None,
                objective: 3.0,
            },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("iter,theta_1,theta_2,grad_norm,step,objective\n"));
        let back: Vec<PathRow> = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let rows = vec![
            PathRow {
                iter: 0,
                theta: vec![1.0],
                grad_norm: 0.0,
                step: None,
                objective: 0.0,
            },
            PathRow {
                iter: 1,
                theta: vec![1.0, 2.0],
                grad_norm: 0.0,
                step: None,
                objective: 0.0,
            },
        ];
        assert!(write_records(Vec::new(), &rows).is_err());
    }
}
