//! patient table and feature matrix I/O
//!
//! The clinical table has a fixed schema (see [`PATIENT_CSV_HEADER`]);
//! anything off-schema is a typed error, and empty cells / `NaN` tokens are
//! first-class missing values — downstream tree models route them through
//! default directions instead of imputing sentinels.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Fixed column order of the patient clinical CSV.
pub const PATIENT_CSV_HEADER: [&str; 13] = [
    "PatientID",
    "CenterID",
    "Gender",
    "Age",
    "Weight",
    "Tobacco",
    "Alcohol",
    "Performance_status",
    "HPV_status",
    "Surgery",
    "Chemotherapy",
    "RFS",
    "Relapse",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn parse(token: &str) -> Result<Gender> {
        match token.trim().to_ascii_uppercase().as_str() {
            "M" => Ok(Gender::Male),
            "F" => Ok(Gender::Female),
            other => Err(Error::Tabular(format!(
                "unknown gender token {:?} (expected M or F)",
                other
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }

    /// Numeric encoding used in feature matrices: M = 0, F = 1.
    pub fn encoded(&self) -> f64 {
        match self {
            Gender::Male => 0.0,
            Gender::Female => 1.0,
        }
    }
}

/// One row of the clinical table. Binary habit/treatment flags may be
/// missing; identity, demographics and chemotherapy are required.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub center_id: f64,
    pub gender: Gender,
    pub age: f64,
    pub weight: f64,
    pub tobacco: Option<f64>,
    pub alcohol: Option<f64>,
    pub performance_status: Option<f64>,
    pub hpv_status: Option<f64>,
    pub surgery: Option<f64>,
    pub chemotherapy: f64,
    /// Recurrence-free survival in days; present on training rows.
    pub rfs: Option<f64>,
    /// Event indicator (1 = relapse observed, 0 = censored).
    pub relapse: Option<f64>,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("nan")
}

fn parse_f64(cell: &str, row: usize, col: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| {
        Error::Tabular(format!(
            "row {}: column {} holds non-numeric value {:?}",
            row, col, cell
        ))
    })
}

fn parse_opt(cell: &str, row: usize, col: &str) -> Result<Option<f64>> {
    if is_missing(cell) {
        Ok(None)
    } else {
        parse_f64(cell, row, col).map(Some)
    }
}

fn parse_required(cell: &str, row: usize, col: &str) -> Result<f64> {
    if is_missing(cell) {
        return Err(Error::Tabular(format!(
            "row {}: column {} is required but missing",
            row, col
        )));
    }
    parse_f64(cell, row, col)
}

fn check_binary(value: Option<f64>, row: usize, col: &str) -> Result<()> {
    if let Some(v) = value {
        if v != 0.0 && v != 1.0 {
            return Err(Error::Tabular(format!(
                "row {}: column {} must be 0 or 1, got {}",
                row, col, v
            )));
        }
    }
    Ok(())
}

/// Parse the clinical table. Header must match [`PATIENT_CSV_HEADER`]
/// exactly; duplicate patient ids are rejected.
pub fn read_patient_csv(bytes: &[u8]) -> Result<Vec<PatientRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);

    let headers = reader
        .headers()
        .map_err(|e| Error::Tabular(format!("header: {}", e)))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != PATIENT_CSV_HEADER {
        return Err(Error::Tabular(format!(
            "unexpected header {:?}, expected {:?}",
            got, PATIENT_CSV_HEADER
        )));
    }

    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let rownum = i + 2; // 1-based, counting the header line
        let row = row.map_err(|e| Error::Tabular(format!("row {}: {}", rownum, e)))?;
        if row.len() != PATIENT_CSV_HEADER.len() {
            return Err(Error::Tabular(format!(
                "row {}: expected {} fields, got {}",
                rownum,
                PATIENT_CSV_HEADER.len(),
                row.len()
            )));
        }
        let field = |idx: usize| row.get(idx).unwrap_or("");

        let patient_id = field(0).trim().to_string();
        if patient_id.is_empty() {
            return Err(Error::Tabular(format!("row {}: empty PatientID", rownum)));
        }
        if !seen.insert(patient_id.clone()) {
            return Err(Error::Tabular(format!(
                "duplicate patient_id {:?} (row {})",
                patient_id, rownum
            )));
        }

        let center_id = parse_required(field(1), rownum, "CenterID")?;
        if center_id.fract() != 0.0 {
            return Err(Error::Tabular(format!(
                "row {}: CenterID must be an integer, got {}",
                rownum, center_id
            )));
        }
        let gender = if is_missing(field(2)) {
            return Err(Error::Tabular(format!("row {}: Gender is required", rownum)));
        } else {
            Gender::parse(field(2))?
        };
        let age = parse_required(field(3), rownum, "Age")?;
        if !(age > 0.0) {
            return Err(Error::Tabular(format!(
                "row {}: Age must be positive, got {}",
                rownum, age
            )));
        }
        let weight = parse_required(field(4), rownum, "Weight")?;
        if !(weight > 0.0) {
            return Err(Error::Tabular(format!(
                "row {}: Weight must be positive, got {}",
                rownum, weight
            )));
        }

        let tobacco = parse_opt(field(5), rownum, "Tobacco")?;
        check_binary(tobacco, rownum, "Tobacco")?;
        let alcohol = parse_opt(field(6), rownum, "Alcohol")?;
        check_binary(alcohol, rownum, "Alcohol")?;
        let performance_status = parse_opt(field(7), rownum, "Performance_status")?;
        if let Some(p) = performance_status {
            if p.fract() != 0.0 {
                return Err(Error::Tabular(format!(
                    "row {}: Performance_status must be an integer, got {}",
                    rownum, p
                )));
            }
        }
        let hpv_status = parse_opt(field(8), rownum, "HPV_status")?;
        check_binary(hpv_status, rownum, "HPV_status")?;
        let surgery = parse_opt(field(9), rownum, "Surgery")?;
        check_binary(surgery, rownum, "Surgery")?;
        let chemotherapy = parse_required(field(10), rownum, "Chemotherapy")?;
        check_binary(Some(chemotherapy), rownum, "Chemotherapy")?;

        let rfs = parse_opt(field(11), rownum, "RFS")?;
        if let Some(r) = rfs {
            if r < 0.0 {
                return Err(Error::Tabular(format!(
                    "row {}: RFS must be non-negative, got {}",
                    rownum, r
                )));
            }
        }
        let relapse = parse_opt(field(12), rownum, "Relapse")?;
        check_binary(relapse, rownum, "Relapse")?;

        records.push(PatientRecord {
            patient_id,
            center_id,
            gender,
            age,
            weight,
            tobacco,
            alcohol,
            performance_status,
            hpv_status,
            surgery,
            chemotherapy,
            rfs,
            relapse,
        });
    }
    Ok(records)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{}", x),
        None => String::new(),
    }
}

/// Serialize records in the fixed schema; inverse of [`read_patient_csv`].
pub fn write_patient_csv(records: &[PatientRecord]) -> Vec<u8> {
    let mut out = String::new();
    let _ = writeln!(out, "{}", PATIENT_CSV_HEADER.join(","));
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.patient_id,
            r.center_id,
            r.gender.as_str(),
            r.age,
            r.weight,
            fmt_opt(r.tobacco),
            fmt_opt(r.alcohol),
            fmt_opt(r.performance_status),
            fmt_opt(r.hpv_status),
            fmt_opt(r.surgery),
            r.chemotherapy,
            fmt_opt(r.rfs),
            fmt_opt(r.relapse),
        );
    }
    out.into_bytes()
}

/// Column names with special meaning in feature CSV files; feature columns
/// themselves may not use them.
const COL_PATIENT_ID: &str = "PatientID";
const COL_RFS: &str = "RFS";
const COL_RELAPSE: &str = "Relapse";

/// Numeric matrix with explicit per-cell missing markers, an optional RFS
/// target and event indicators. The survival models consume this directly.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub row_ids: Option<Vec<String>>,
    pub n_rows: usize,
    /// Row-major cells, length `n_rows * columns.len()`.
    pub cells: Vec<Option<f64>>,
    pub target: Option<Vec<f64>>,
    pub events: Option<Vec<bool>>,
}

impl FeatureMatrix {
    pub fn from_rows(columns: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let width = columns.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(Error::ShapeMismatch(format!(
                    "feature row {} has width {}, expected {}",
                    i,
                    r.len(),
                    width
                )));
            }
        }
        let n_rows = rows.len();
        Ok(FeatureMatrix {
            columns,
            row_ids: None,
            n_rows,
            cells: rows.into_iter().flatten().collect(),
            target: None,
            events: None,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn cell(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.n_cols() + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[Option<f64>] {
        let w = self.n_cols();
        &self.cells[row * w..(row + 1) * w]
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column_values(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.n_rows).map(|r| self.cell(r, col)).collect()
    }

    /// Checks the structural invariants (widths line up, target/events
    /// lengths match, target has no missing entries).
    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.n_rows * self.n_cols() {
            return Err(Error::ShapeMismatch(format!(
                "cells {} != rows {} x cols {}",
                self.cells.len(),
                self.n_rows,
                self.n_cols()
            )));
        }
        if let Some(ids) = &self.row_ids {
            if ids.len() != self.n_rows {
                return Err(Error::ShapeMismatch("row_ids length".into()));
            }
        }
        if let Some(t) = &self.target {
            if t.len() != self.n_rows {
                return Err(Error::ShapeMismatch("target length".into()));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "target contains missing/non-finite values".into(),
                ));
            }
        }
        if let Some(e) = &self.events {
            if e.len() != self.n_rows {
                return Err(Error::ShapeMismatch("events length".into()));
            }
        }
        for name in &self.columns {
            if name == COL_PATIENT_ID || name == COL_RFS || name == COL_RELAPSE {
                return Err(Error::InvalidArgument(format!(
                    "feature column may not use reserved name {:?}",
                    name
                )));
            }
        }
        Ok(())
    }

    /// Row subset in the given order; carries ids/target/events along.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let w = self.n_cols();
        let mut cells = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            cells.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            row_ids: self
                .row_ids
                .as_ref()
                .map(|ids| rows.iter().map(|&r| ids[r].clone()).collect()),
            n_rows: rows.len(),
            cells,
            target: self
                .target
                .as_ref()
                .map(|t| rows.iter().map(|&r| t[r]).collect()),
            events: self
                .events
                .as_ref()
                .map(|e| rows.iter().map(|&r| e[r]).collect()),
        }
    }

    /// CSV bytes: optional PatientID column first, features in order, then
    /// RFS / Relapse columns when present. Missing cells are empty fields.
    pub fn write_csv(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut header: Vec<&str> = Vec::new();
        if self.row_ids.is_some() {
            header.push(COL_PATIENT_ID);
        }
        header.extend(self.columns.iter().map(|s| s.as_str()));
        if self.target.is_some() {
            header.push(COL_RFS);
        }
        if self.events.is_some() {
            header.push(COL_RELAPSE);
        }

        let mut out = String::new();
        let _ = writeln!(out, "{}", header.join(","));
        for r in 0..self.n_rows {
            let mut fields: Vec<String> = Vec::with_capacity(header.len());
            if let Some(ids) = &self.row_ids {
                fields.push(ids[r].clone());
            }
            for c in 0..self.n_cols() {
                fields.push(fmt_opt(self.cell(r, c)));
            }
            if let Some(t) = &self.target {
                fields.push(format!("{}", t[r]));
            }
            if let Some(e) = &self.events {
                fields.push(if e[r] { "1".into() } else { "0".into() });
            }
            let _ = writeln!(out, "{}", fields.join(","));
        }
        Ok(out.into_bytes())
    }

    /// Inverse of [`FeatureMatrix::write_csv`].
    pub fn read_csv(bytes: &[u8]) -> Result<FeatureMatrix> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Tabular(format!("feature header: {}", e)))?
            .iter()
            .map(|s| s.to_string())
            .collect();
        if headers.is_empty() {
            return Err(Error::Tabular("empty feature header".into()));
        }

        let has_ids = headers.first().map(|s| s.as_str()) == Some(COL_PATIENT_ID);
        let has_events = headers.last().map(|s| s.as_str()) == Some(COL_RELAPSE);
        let rfs_pos = headers.iter().position(|h| h == COL_RFS);
        if let Some(p) = rfs_pos {
            let expect = headers.len() - 1 - usize::from(has_events);
            if p != expect {
                return Err(Error::Tabular(
                    "RFS column must come after all feature columns".into(),
                ));
            }
        }
        let feat_start = usize::from(has_ids);
        let feat_end = headers.len() - usize::from(has_events) - usize::from(rfs_pos.is_some());
        let columns: Vec<String> = headers[feat_start..feat_end].to_vec();

        let mut row_ids = Vec::new();
        let mut cells = Vec::new();
        let mut target = Vec::new();
        let mut events = Vec::new();
        let mut n_rows = 0usize;
        for (i, row) in reader.records().enumerate() {
            let rownum = i + 2;
            let row = row.map_err(|e| Error::Tabular(format!("row {}: {}", rownum, e)))?;
            if row.len() != headers.len() {
                return Err(Error::Tabular(format!(
                    "row {}: expected {} fields, got {}",
                    rownum,
                    headers.len(),
                    row.len()
                )));
            }
            n_rows += 1;
            let mut idx = 0usize;
            if has_ids {
                row_ids.push(row.get(idx).unwrap_or("").to_string());
                idx += 1;
            }
            for name in &columns {
                cells.push(parse_opt(row.get(idx).unwrap_or(""), rownum, name)?);
                idx += 1;
            }
            if rfs_pos.is_some() {
                target.push(parse_required(row.get(idx).unwrap_or(""), rownum, COL_RFS)?);
                idx += 1;
            }
            if has_events {
                let v = parse_required(row.get(idx).unwrap_or(""), rownum, COL_RELAPSE)?;
                check_binary(Some(v), rownum, COL_RELAPSE)?;
                events.push(v == 1.0);
            }
        }

        let m = FeatureMatrix {
            columns,
            row_ids: if has_ids { Some(row_ids) } else { None },
            n_rows,
            cells,
            target: if rfs_pos.is_some() { Some(target) } else { None },
            events: if has_events { Some(events) } else { None },
        };
        m.validate()?;
        Ok(m)
    }
}
