//! Spatio-temporal datasets and their CSV representation.
//!
//! A dataset holds one row per (location, time) observation. The CSV layout
//! is `s1,s2,t,x1..xS[,z1..zP]`, with integer times.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{invalid, shape};
use crate::stfield::Location;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SpatioTemporalDataset {
    pub coords: Vec<Location>,
    pub times: Vec<i64>,
    /// `n × S` observations.
    pub x: Array2<f64>,
    /// Optional `n × P` true latents.
    pub z: Option<Array2<f64>>,
}

/// Rows grouped by location, each group sorted by time.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationIndex {
    pub locations: Vec<Location>,
    /// Location of every row.
    pub row_location: Vec<usize>,
    /// Row indices per location in increasing time.
    pub series: Vec<Vec<usize>>,
}

/// A target row together with its lag rows `t−1, …, t−W` at the same
/// location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LaggedRow {
    pub row: usize,
    pub lags: Vec<usize>,
}

fn location_key(s: &Location) -> (u64, u64) {
    (s[0].to_bits(), s[1].to_bits())
}

impl SpatioTemporalDataset {
    pub fn new(coords: Vec<Location>, times: Vec<i64>, x: Array2<f64>, z: Option<Array2<f64>>) -> Result<Self> {
        let ds = Self { coords, times, x, z };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn observed_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.z.as_ref().map(|z| z.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if self.coords.len() != n || self.times.len() != n {
            return Err(shape(format!(
                "{} coordinates and {} times for {n} observation rows",
                self.coords.len(),
                self.times.len()
            )));
        }
        if let Some(z) = &self.z {
            if z.nrows() != n {
                return Err(shape(format!("{} latent rows for {n} observation rows", z.nrows())));
            }
        }
        if self.x.iter().chain(self.z.iter().flatten()).any(|v| !v.is_finite())
            || self.coords.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(invalid("dataset holds non-finite values"));
        }
        Ok(())
    }

    pub fn time_range(&self) -> Option<(i64, i64)> {
        let lo = *self.times.iter().min()?;
        let hi = *self.times.iter().max()?;
        Some((lo, hi))
    }

    /// Group rows by location (in order of first appearance).
    pub fn location_index(&self) -> LocationIndex {
        let mut ids: HashMap<(u64, u64), usize> = HashMap::new();
        let mut locations = Vec::new();
        let mut row_location = Vec::with_capacity(self.n_rows());
        let mut series: Vec<Vec<usize>> = Vec::new();
        for (r, s) in self.coords.iter().enumerate() {
            let id = *ids.entry(location_key(s)).or_insert_with(|| {
                locations.push(*s);
                series.push(Vec::new());
                locations.len() - 1
            });
            row_location.push(id);
            series[id].push(r);
        }
        for rows in &mut series {
            rows.sort_by_key(|&r| (self.times[r], r));
        }
        LocationIndex {
            locations,
            row_location,
            series,
        }
    }

    /// Rows whose `W` predecessors at consecutive times `t−1, …, t−W` exist
    /// at the same location. With `W = 0` every row qualifies.
    pub fn lagged_rows(&self, ar_order: usize) -> Vec<LaggedRow> {
        let index = self.location_index();
        let mut at: HashMap<(usize, i64), usize> = HashMap::with_capacity(self.n_rows());
        for (r, &loc) in index.row_location.iter().enumerate() {
            at.insert((loc, self.times[r]), r);
        }
        let mut out = Vec::new();
        for r in 0..self.n_rows() {
            let loc = index.row_location[r];
            let lags: Option<Vec<usize>> = (1..=ar_order as i64)
                .map(|lag| at.get(&(loc, self.times[r] - lag)).copied())
                .collect();
            if let Some(lags) = lags {
                out.push(LaggedRow { row: r, lags });
            }
        }
        out
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            coords: rows.iter().map(|&r| self.coords[r]).collect(),
            times: rows.iter().map(|&r| self.times[r]).collect(),
            x: self.x.select(Axis(0), rows),
            z: self.z.as_ref().map(|z| z.select(Axis(0), rows)),
        }
    }

    /// Split into rows with `t ≤ cutoff` and rows with `t > cutoff`.
    pub fn split_at_time(&self, cutoff: i64) -> (Self, Self) {
        let (before, after): (Vec<usize>, Vec<usize>) =
            (0..self.n_rows()).partition(|&r| self.times[r] <= cutoff);
        (self.select_rows(&before), self.select_rows(&after))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let s = self.observed_dim();
        let p = self.latent_dim().unwrap_or(0);
        let mut header = vec!["s1".to_string(), "s2".to_string(), "t".to_string()];
        header.extend((1..=s).map(|i| format!("x{i}")));
        header.extend((1..=p).map(|j| format!("z{j}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            record.push(self.coords[r][0].to_string());
            record.push(self.coords[r][1].to_string());
            record.push(self.times[r].to_string());
            record.extend(self.x.row(r).iter().map(|v| v.to_string()));
            if let Some(z) = &self.z {
                record.extend(z.row(r).iter().map(|v| v.to_string()));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parse the CSV layout. Non-finite cells, unparsable cells and ragged
    /// rows are rejected with the offending line number.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(rec) => rec?,
            None => {
                return Err(Error::Data {
                    line: 1,
                    detail: "empty file".into(),
                })
            }
        };
        let (s, p) = parse_header(&header)?;
        let width = 3 + s + p;

        let mut coords = Vec::new();
        let mut times = Vec::new();
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        for rec in records {
            let rec = rec?;
            let line = rec.position().map_or(0, |pos| pos.line());
            if rec.len() == 1 && rec[0].trim().is_empty() {
                continue;
            }
            if rec.len() != width {
                return Err(Error::Data {
                    line,
                    detail: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            let cell = |k: usize| -> Result<f64> {
                let text = rec[k].trim();
                let v: f64 = text.parse().map_err(|_| Error::Data {
                    line,
                    detail: format!("column {} is not a number: {text:?}", k + 1),
                })?;
                if !v.is_finite() {
                    return Err(Error::Data {
                        line,
                        detail: format!("column {} is not finite: {text:?}", k + 1),
                    });
                }
                Ok(v)
            };
            coords.push([cell(0)?, cell(1)?]);
            let t = cell(2)?;
            if t.fract() != 0.0 || t.abs() > 9.0e15 {
                return Err(Error::Data {
                    line,
                    detail: format!("time {t} is not an integer"),
                });
            }
            times.push(t as i64);
            for k in 0..s {
                xs.push(cell(3 + k)?);
            }
            for k in 0..p {
                zs.push(cell(3 + s + k)?);
            }
        }
        let n = times.len();
        let x = Array2::from_shape_vec((n, s), xs).expect("row count matches");
        let z = (p > 0).then(|| Array2::from_shape_vec((n, p), zs).expect("row count matches"));
        Self::new(coords, times, x, z)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let bad = |detail: String| Error::Data { line: 1, detail };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 4 || names[..3] != ["s1", "s2", "t"] {
        return Err(bad("header must start with s1,s2,t followed by x columns".into()));
    }
    let mut s = 0;
    let mut p = 0;
    for name in &names[3..] {
        if *name == format!("x{}", s + 1) && p == 0 {
            s += 1;
        } else if *name == format!("z{}", p + 1) {
            p += 1;
        } else {
            return Err(bad(format!("unexpected column {name:?}")));
        }
    }
    if s == 0 {
        return Err(bad("no x columns".into()));
    }
    Ok((s, p))
}
