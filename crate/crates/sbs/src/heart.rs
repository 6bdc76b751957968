//! Loader for the processed Cleveland heart-disease file (`processed.cleveland.data`).
//!
//! Fourteen comma-separated numeric columns; `?` marks a missing value.
//! Rows with any missing value are dropped. Multi-level categorical
//! predictors become indicator columns for every level but the lowest,
//! placed where the original column was. The response is 1 when the
//! disease code is positive. See `docs/heart.md` for the column schema.

use std::io::Read;
use std::path::Path;

use sbs_core::targets::{standardize_predictors, LogisticModel};

use crate::error::{Error, Result};

pub const HEART_ROWS: usize = 297;
pub const HEART_DIM: usize = 20;

enum Column {
    Continuous,
    Binary,
    Categorical(&'static [f64]),
}

const SCHEMA: [(&str, Column); 13] = [
    ("age", Column::Continuous),
    ("sex", Column::Binary),
    ("cp", Column::Categorical(&[1.0, 2.0, 3.0, 4.0])),
    ("trestbps", Column::Continuous),
    ("chol", Column::Continuous),
    ("fbs", Column::Binary),
    ("restecg", Column::Categorical(&[0.0, 1.0, 2.0])),
    ("thalach", Column::Continuous),
    ("exang", Column::Binary),
    ("oldpeak", Column::Continuous),
    ("slope", Column::Categorical(&[1.0, 2.0, 3.0])),
    ("ca", Column::Categorical(&[0.0, 1.0, 2.0, 3.0])),
    ("thal", Column::Categorical(&[3.0, 6.0, 7.0])),
];

#[derive(Debug, Clone, PartialEq)]
pub struct HeartData {
    /// Row-major `rows x dim`, standardized.
    pub design: Vec<f64>,
    pub response: Vec<f64>,
    pub rows: usize,
    pub dim: usize,
    pub dropped: usize,
}

/// Parses and codes the file without checking its shape.
pub fn parse_heart<R: Read>(reader: R) -> Result<HeartData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_reader(reader);
    let mut design = Vec::new();
    let mut response = Vec::new();
    let mut dropped = 0;
    let mut dim = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 14 {
            return Err(Error::MalformedRow { row, reason: format!("expected 14 fields, found {}", rec.len()) });
        }
        if rec.iter().any(|f| f == "?") {
            dropped += 1;
            continue;
        }
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::MalformedRow { row, reason: format!("`{f}` is not a number") }))
            .collect::<Result<Vec<f64>>>()?;
        let before = design.len();
        for ((name, col), &v) in SCHEMA.iter().zip(&vals) {
            match col {
                Column::Continuous => design.push(v),
                Column::Binary if v == 0.0 || v == 1.0 => design.push(v),
                Column::Binary => return Err(Error::MalformedRow { row, reason: format!("{name} = {v} is not binary") }),
                Column::Categorical(levels) => {
                    if !levels.contains(&v) {
                        return Err(Error::MalformedRow { row, reason: format!("{name} = {v} is not a known level") });
                    }
                    design.extend(levels[1..].iter().map(|&l| if v == l { 1.0 } else { 0.0 }));
                }
            }
        }
        dim = design.len() - before;
        response.push(if vals[13] > 0.0 { 1.0 } else { 0.0 });
    }
    let rows = response.len();
    if rows > 0 {
        standardize_predictors(&mut design, dim);
    }
    Ok(HeartData { design, response, rows, dim, dropped })
}

pub fn load_heart_data(path: &Path) -> Result<HeartData> {
    let file = std::fs::File::open(path).map_err(|_| Error::FileNotFound(path.to_path_buf()))?;
    let data = parse_heart(file)?;
    if data.rows != HEART_ROWS || data.dim != HEART_DIM {
        return Err(Error::Shape { rows: data.rows, cols: data.dim, expected_rows: HEART_ROWS, expected_cols: HEART_DIM });
    }
    Ok(data)
}

pub fn load_heart_dataset(path: &Path) -> Result<LogisticModel> {
    let data = load_heart_data(path)?;
    Ok(LogisticModel::new(data.design, data.response, data.dim)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = include_str!("../tests/fixtures/heart_sample.csv");

    fn column(d: &HeartData, j: usize) -> Vec<f64> {
        (0..d.rows).map(|i| d.design[i * d.dim + j]).collect()
    }

    #[test]
    fn fixture_shape_and_coding() {
        let d = parse_heart(FIXTURE.as_bytes()).unwrap();
        assert_eq!(d.dim, HEART_DIM);
        assert_eq!(d.dropped, 2);
        assert_eq!(d.rows, 12);
        assert_eq!(d.response.iter().filter(|&&y| y == 1.0).count(), 5);
    }

    #[test]
    fn columns_are_centred_and_scaled() {
        let d = parse_heart(FIXTURE.as_bytes()).unwrap();
        // continuous columns after indicator expansion
        let continuous = [0usize, 5, 6, 10, 12];
        for j in 0..d.dim {
            let c = column(&d, j);
            let m = c.iter().sum::<f64>() / c.len() as f64;
            assert!(m.abs() < 1e-10, "column {j} mean {m}");
            if continuous.contains(&j) {
                let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (c.len() - 1) as f64).sqrt();
                assert!((sd - 0.5).abs() < 1e-10, "column {j} sd {sd}");
            } else {
                let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(hi - lo == 0.0 || (hi - lo - 1.0).abs() < 1e-12, "column {j}");
            }
        }
    }

    #[test]
    fn malformed_rows_are_reported() {
        let bad = "63.0,1.0,1.0,145.0,233.0,1.0,2.0,150.0,0.0,2.3,3.0,0.0,6.0,0\n67.0,1.0,9.0,160.0,286.0,0.0,2.0,108.0,1.0,1.5,2.0,3.0,3.0,2\n";
        assert!(matches!(parse_heart(bad.as_bytes()), Err(Error::MalformedRow { row: 2, .. })));
        let short = "63.0,1.0,1.0\n";
        assert!(matches!(parse_heart(short.as_bytes()), Err(Error::MalformedRow { row: 1, .. })));
        let word = "63.0,1.0,1.0,145.0,abc,1.0,2.0,150.0,0.0,2.3,3.0,0.0,6.0,0\n";
        assert!(matches!(parse_heart(word.as_bytes()), Err(Error::MalformedRow { row: 1, .. })));
    }

    #[test]
    fn full_loader_checks_the_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        std::fs::write(&p, FIXTURE).unwrap();
        assert!(matches!(load_heart_dataset(&p), Err(Error::Shape { rows: 12, cols: 20, .. })));
        assert!(matches!(load_heart_dataset(&dir.path().join("missing.csv")), Err(Error::FileNotFound(_))));
    }
}
