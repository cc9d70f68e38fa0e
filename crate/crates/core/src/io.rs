//! File formats: numeric CSV input, result JSON, flat result CSV and
//! bootstrap interval files.
//!
//! CSV is comma separated with a mandatory header. Floats are written in
//! their shortest round-trip form and NaN is written as an empty field.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{GeoShapError, Result};
use crate::explainer::GeoShapleyResult;
use crate::postprocess::BootstrapResult;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_FIELD: &str = "geoshapley_schema";

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub names: Vec<String>,
    pub data: Array2<f64>,
}

impl DataTable {
    pub fn new(names: Vec<String>, data: Array2<f64>) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(GeoShapError::Dimension {
                what: "column names",
                expected: data.ncols(),
                got: names.len(),
            });
        }
        Ok(Self { names, data })
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| GeoShapError::Config(format!("column '{name}' not found in input header")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.data.column(self.column_index(name)?).to_vec())
    }

    /// The table without the named column.
    pub fn without(&self, name: &str) -> Result<DataTable> {
        let drop = self.column_index(name)?;
        let keep: Vec<usize> = (0..self.names.len()).filter(|&c| c != drop).collect();
        Ok(DataTable {
            names: keep.iter().map(|&c| self.names[c].clone()).collect(),
            data: self.data.select(Axis(1), &keep),
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.names)?;
        for row in self.data.rows() {
            w.write_record(row.iter().map(|v| fmt_float(*v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn parse_float(field: &str, row: usize, col: &str) -> Result<f64> {
    let trimmed = field.trim();
    if trimmed.is_empty() {
        return Ok(f64::NAN);
    }
    trimmed.parse::<f64>().map_err(|_| {
        GeoShapError::Data(format!("row {row}, column '{col}': '{field}' is not a number"))
    })
}

/// Parses a numeric CSV. Empty fields become NaN; callers that need finite
/// data check with [`require_finite`].
pub fn read_csv<R: Read>(input: R) -> Result<DataTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let names: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if names.is_empty() || names.iter().all(|n| n.is_empty()) {
        return Err(GeoShapError::Data("missing header row".into()));
    }
    for (i, n) in names.iter().enumerate() {
        if n.parse::<f64>().is_ok() {
            return Err(GeoShapError::Data(format!(
                "header field {i} ('{n}') is numeric; a header row is required"
            )));
        }
        if names[..i].contains(n) {
            return Err(GeoShapError::Data(format!("duplicate column '{n}'")));
        }
    }
    let mut values = Vec::new();
    let mut nrows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != names.len() {
            return Err(GeoShapError::Data(format!(
                "row {} has {} fields, header has {}",
                r + 1,
                record.len(),
                names.len()
            )));
        }
        for (field, name) in record.iter().zip(&names) {
            values.push(parse_float(field, r + 1, name)?);
        }
        nrows += 1;
    }
    if nrows == 0 {
        return Err(GeoShapError::Data("no data rows".into()));
    }
    let data = Array2::from_shape_vec((nrows, names.len()), values)
        .map_err(|e| GeoShapError::Data(e.to_string()))?;
    DataTable::new(names, data)
}

pub fn read_csv_path(path: impl AsRef<Path>) -> Result<DataTable> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| GeoShapError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(BufReader::new(file))
}

pub fn require_finite(table: &DataTable) -> Result<()> {
    for ((r, c), v) in table.data.indexed_iter() {
        if !v.is_finite() {
            return Err(GeoShapError::Data(format!(
                "row {}, column '{}' is missing or not finite",
                r + 1,
                table.names[c]
            )));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    geoshapley_schema: u32,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct OwnedEnvelope<T> {
    geoshapley_schema: u32,
    #[serde(flatten)]
    body: T,
}

fn write_versioned<T: Serialize, W: Write>(body: &T, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    serde_json::to_writer_pretty(
        &mut out,
        &Envelope {
            geoshapley_schema: SCHEMA_VERSION,
            body,
        },
    )?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn read_versioned<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<T> {
    let env: OwnedEnvelope<T> = serde_json::from_reader(BufReader::new(input))?;
    if env.geoshapley_schema != SCHEMA_VERSION {
        return Err(GeoShapError::Data(format!(
            "unsupported {SCHEMA_FIELD} {} (expected {SCHEMA_VERSION})",
            env.geoshapley_schema
        )));
    }
    Ok(env.body)
}

pub fn write_result_json<W: Write>(result: &GeoShapleyResult, out: W) -> Result<()> {
    write_versioned(result, out)
}

pub fn read_result_json<R: Read>(input: R) -> Result<GeoShapleyResult> {
    read_versioned(input)
}

pub fn write_bootstrap_json<W: Write>(ci: &BootstrapResult, out: W) -> Result<()> {
    write_versioned(ci, out)
}

pub fn read_bootstrap_json<R: Read>(input: R) -> Result<BootstrapResult> {
    read_versioned(input)
}

pub fn main_header(name: &str) -> String {
    format!("phi_{name}")
}

pub fn interaction_header(name: &str) -> String {
    format!("phi_geo_x_{name}")
}

/// Header of the flat result CSV.
pub fn result_csv_header(feature_names: &[String]) -> Vec<String> {
    let mut h = vec!["prediction".to_string(), "phi_geo".to_string()];
    h.extend(feature_names.iter().map(|n| main_header(n)));
    h.extend(feature_names.iter().map(|n| interaction_header(n)));
    h.push("residual".into());
    h
}

/// One row per instance: prediction, phi_geo, mains, interactions, residual.
pub fn write_result_csv<W: Write>(result: &GeoShapleyResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(result_csv_header(&result.metadata.feature_names))?;
    for i in 0..result.len() {
        let mut row = vec![fmt_float(result.prediction[i]), fmt_float(result.phi_geo[i])];
        row.extend(result.phi_main[i].iter().map(|v| fmt_float(*v)));
        row.extend(result.phi_geo_interaction[i].iter().map(|v| fmt_float(*v)));
        row.push(fmt_float(result.reconstruction_residual[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-instance values parsed back from a flat result CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatResult {
    pub feature_names: Vec<String>,
    pub prediction: Vec<f64>,
    pub phi_geo: Vec<f64>,
    pub phi_main: Vec<Vec<f64>>,
    pub phi_geo_interaction: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
}

pub fn read_result_csv<R: Read>(input: R) -> Result<FlatResult> {
    let table = read_csv(input)?;
    let n = table.names.len();
    if n < 3 || (n - 3) % 2 != 0 || table.names[0] != "prediction" || table.names[1] != "phi_geo" {
        return Err(GeoShapError::Data("not a result CSV header".into()));
    }
    let k = (n - 3) / 2;
    let mut feature_names = Vec::with_capacity(k);
    for j in 0..k {
        let name = table.names[2 + j]
            .strip_prefix("phi_")
            .ok_or_else(|| GeoShapError::Data(format!("unexpected column '{}'", table.names[2 + j])))?;
        if table.names[2 + k + j] != interaction_header(name) {
            return Err(GeoShapError::Data(format!(
                "expected column '{}', found '{}'",
                interaction_header(name),
                table.names[2 + k + j]
            )));
        }
        feature_names.push(name.to_string());
    }
    if table.names[n - 1] != "residual" {
        return Err(GeoShapError::Data("last column must be 'residual'".into()));
    }
    let d = &table.data;
    Ok(FlatResult {
        feature_names,
        prediction: d.column(0).to_vec(),
        phi_geo: d.column(1).to_vec(),
        phi_main: d.rows().into_iter().map(|r| r.iter().skip(2).take(k).copied().collect()).collect(),
        phi_geo_interaction: d
            .rows()
            .into_iter()
            .map(|r| r.iter().skip(2 + k).take(k).copied().collect())
            .collect(),
        residual: d.column(n - 1).to_vec(),
    })
}

/// Interval CSV: one row per instance with `_lo`/`_hi` pairs per quantity.
pub fn write_bootstrap_csv<W: Write>(ci: &BootstrapResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["phi_geo_lo".to_string(), "phi_geo_hi".to_string()];
    for n in &ci.feature_names {
        header.push(format!("{}_lo", main_header(n)));
        header.push(format!("{}_hi", main_header(n)));
    }
    for n in &ci.feature_names {
        header.push(format!("{}_lo", interaction_header(n)));
        header.push(format!("{}_hi", interaction_header(n)));
    }
    w.write_record(&header)?;
    for i in 0..ci.phi_geo_lo.len() {
        let mut row = vec![fmt_float(ci.phi_geo_lo[i]), fmt_float(ci.phi_geo_hi[i])];
        for j in 0..ci.feature_names.len() {
            row.push(fmt_float(ci.phi_main_lo[i][j]));
            row.push(fmt_float(ci.phi_main_hi[i][j]));
        }
        for j in 0..ci.feature_names.len() {
            row.push(fmt_float(ci.phi_geo_interaction_lo[i][j]));
            row.push(fmt_float(ci.phi_geo_interaction_hi[i][j]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
