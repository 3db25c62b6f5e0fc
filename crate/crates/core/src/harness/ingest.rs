use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{population_variance, Dataset, DEFAULT_OUTCOME_BOUND};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const TREATMENT_COLUMN: &str = "a";
pub const OUTCOME_COLUMN: &str = "y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role")]
pub enum ColumnRole {
    Covariate,
    /// One-hot encoded in `levels` order; empty `levels` means the distinct
    /// values in sorted order.
    Categorical {
        #[serde(default)]
        levels: Vec<String>,
    },
    Treatment,
    Outcome,
    Conditioning,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub role: ColumnRole,
}

/// Column roles, in the order encoded columns should appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default = "default_bound")]
    pub outcome_bound: f64,
}

fn default_bound() -> f64 {
    DEFAULT_OUTCOME_BOUND
}

impl Schema {
    pub fn new(columns: Vec<(String, ColumnRole)>) -> Self {
        Schema {
            columns: columns
                .into_iter()
                .map(|(name, role)| ColumnSpec { name, role })
                .collect(),
            outcome_bound: DEFAULT_OUTCOME_BOUND,
        }
    }

    /// Roles from header names: `a` is the treatment, `y` the outcome,
    /// `v<digits>` a conditioning variable, anything else a covariate.
    pub fn infer(headers: &[String]) -> Self {
        Schema::new(
            headers
                .iter()
                .map(|h| {
                    let role = if h == TREATMENT_COLUMN {
                        ColumnRole::Treatment
                    } else if h == OUTCOME_COLUMN {
                        ColumnRole::Outcome
                    } else if h.len() > 1
                        && h.starts_with('v')
                        && h[1..].chars().all(|c| c.is_ascii_digit())
                    {
                        ColumnRole::Conditioning
                    } else {
                        ColumnRole::Covariate
                    };
                    (h.clone(), role)
                })
                .collect(),
        )
    }

    fn single(&self, pred: impl Fn(&ColumnRole) -> bool, what: &str) -> Result<&str> {
        let mut found = self.columns.iter().filter(|c| pred(&c.role));
        let first = found
            .next()
            .ok_or_else(|| Error::input(format!("schema has no {what} column")))?;
        if found.next().is_some() {
            return Err(Error::input(format!("schema has more than one {what} column")));
        }
        Ok(&first.name)
    }
}

pub fn read_headers(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.headers()?.iter().map(str::to_owned).collect())
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    ingest_str(&text, schema)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Located {
        row,
        column: column.to_owned(),
        message: format!("non-numeric value '{cell}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Located {
            row,
            column: column.to_owned(),
            message: format!("non-finite value '{cell}'"),
        });
    }
    Ok(v)
}

/// Parses CSV text; rows in errors are 1-based data rows (header excluded).
pub fn ingest_str(text: &str, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::input(format!("missing column '{name}'")))
    };
    let treat_name = schema.single(|r| *r == ColumnRole::Treatment, "treatment")?;
    let out_name = schema.single(|r| *r == ColumnRole::Outcome, "outcome")?;
    let treat_pos = position(treat_name)?;
    let out_pos = position(out_name)?;
    let mut positions = Vec::with_capacity(schema.columns.len());
    for c in &schema.columns {
        positions.push(position(&c.name)?);
    }

    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::input("file has no data rows"));
    }

    // resolve categorical levels before encoding
    let mut levels: Vec<Vec<String>> = Vec::with_capacity(schema.columns.len());
    for (c, &pos) in schema.columns.iter().zip(&positions) {
        levels.push(match &c.role {
            ColumnRole::Categorical { levels } if levels.is_empty() => {
                let mut seen: Vec<String> = records.iter().map(|r| r[pos].trim().to_owned()).collect();
                seen.sort();
                seen.dedup();
                seen
            }
            ColumnRole::Categorical { levels } => levels.clone(),
            _ => Vec::new(),
        });
    }

    let mut covariate_names = Vec::new();
    let mut conditioning_names = Vec::new();
    for (c, lv) in schema.columns.iter().zip(&levels) {
        match c.role {
            ColumnRole::Covariate => covariate_names.push(c.name.clone()),
            ColumnRole::Categorical { .. } => {
                covariate_names.extend(lv.iter().map(|l| format!("{}={l}", c.name)));
            }
            ColumnRole::Conditioning => conditioning_names.push(c.name.clone()),
            _ => {}
        }
    }

    let n = records.len();
    let mut x = Vec::with_capacity(n * covariate_names.len());
    let mut v = Vec::with_capacity(n * conditioning_names.len());
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        for ((c, &pos), lv) in schema.columns.iter().zip(&positions).zip(&levels) {
            let cell = &rec[pos];
            match c.role {
                ColumnRole::Covariate => x.push(parse_cell(cell, row, &c.name)?),
                ColumnRole::Conditioning => v.push(parse_cell(cell, row, &c.name)?),
                ColumnRole::Categorical { .. } => {
                    let value = cell.trim();
                    let hit = lv.iter().position(|l| l == value).ok_or_else(|| Error::Located {
                        row,
                        column: c.name.clone(),
                        message: format!("unknown category '{value}'"),
                    })?;
                    x.extend((0..lv.len()).map(|k| if k == hit { 1.0 } else { 0.0 }));
                }
                _ => {}
            }
        }
        let t = parse_cell(&rec[treat_pos], row, treat_name)?;
        a.push(match t {
            t if t == 0.0 => false,
            t if t == 1.0 => true,
            _ => {
                return Err(Error::Located {
                    row,
                    column: treat_name.to_owned(),
                    message: format!("treatment must be 0 or 1, got '{}'", &rec[treat_pos]),
                })
            }
        });
        let yi = parse_cell(&rec[out_pos], row, out_name)?;
        if yi.abs() > schema.outcome_bound {
            return Err(Error::Located {
                row,
                column: out_name.to_owned(),
                message: format!("outcome exceeds the bound {}", schema.outcome_bound),
            });
        }
        y.push(yi);
    }
    let x = Matrix::from_vec(n, covariate_names.len(), x)?;
    let v = if conditioning_names.is_empty() {
        None
    } else {
        Some(Matrix::from_vec(n, conditioning_names.len(), v)?)
    };
    Dataset::with_bound(x, a, y, v, schema.outcome_bound)?.with_names(covariate_names, conditioning_names)
}

/// Writes covariates, then `a` and `y`, then conditioning columns. Floats use
/// the shortest representation that parses back to the same value.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(to_csv_string(data)?.as_bytes())?;
    Ok(())
}

pub fn to_csv_string(data: &Dataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = data.covariate_names().iter().map(String::as_str).collect();
    header.push(TREATMENT_COLUMN);
    header.push(OUTCOME_COLUMN);
    header.extend(data.conditioning_names().iter().map(String::as_str));
    w.write_record(&header)?;
    let mut cells = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        cells.clear();
        cells.extend(data.x().row(i).iter().map(f64::to_string));
        cells.push(if data.treatment()[i] { "1" } else { "0" }.to_owned());
        cells.push(data.y()[i].to_string());
        if let Some(v) = data.v() {
            cells.extend(v.row(i).iter().map(f64::to_string));
        }
        w.write_record(&cells)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::input(e.to_string()))
}

/// Rescales outcomes to unit population variance; returns the divisor.
pub fn normalize_outcomes(data: &Dataset) -> Result<(Dataset, f64)> {
    if data.n() < 2 {
        return Err(Error::input("normalization needs at least 2 rows"));
    }
    let scale = population_variance(data.y()).sqrt();
    if !(scale > 0.0) {
        return Err(Error::input("outcome is constant; cannot normalize"));
    }
    let y = data.y().iter().map(|v| v / scale).collect();
    Ok((data.with_outcomes(y)?, scale))
}
