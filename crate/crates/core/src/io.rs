//! CSV and JSON file formats.
//!
//! Experiment tables use columns `f_<name>`, `w`, `y0..y{J-1}` and an
//! optional `p`. Prediction cubes use `yhat_<j>_<k>` (outcome `j`, arm `k`)
//! and oracle cubes `ystar_<j>_<k>`, one line per table row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{ExperimentTable, OracleOutcomes, PotentialPredictionMatrix};
use crate::error::{Error, Result};

const PRED_PREFIX: &str = "yhat";
const ORACLE_PREFIX: &str = "ystar";

fn open_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let records = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok((headers, records))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let pos = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Invalid(format!(
            "malformed CSV {}{}: {other:?}",
            path.display(),
            pos.map(|l| format!(" at line {l}")).unwrap_or_default()
        )),
    }
}

fn parse_f64(record: &csv::StringRecord, row: usize, col: usize, name: &str) -> Result<f64> {
    let raw = record.get(col).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| Error::Validation {
        row,
        column: name.to_string(),
        detail: format!("cannot parse `{raw}` as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Validation {
            row,
            column: name.to_string(),
            detail: format!("non-finite value `{raw}`"),
        });
    }
    Ok(v)
}

fn column(headers: &[String], name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

pub fn read_table(path: impl AsRef<Path>) -> Result<ExperimentTable> {
    let path = path.as_ref();
    let (headers, records) = open_csv(path)?;
    let features: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("f_").map(|n| (i, n.to_string())))
        .collect();
    if features.is_empty() {
        return Err(Error::Invalid(format!("{}: no `f_<name>` feature columns", path.display())));
    }
    let w_col = column(&headers, "w")
        .ok_or_else(|| Error::Invalid(format!("{}: missing treatment column `w`", path.display())))?;
    let mut outcomes = Vec::new();
    while let Some(c) = column(&headers, &format!("y{}", outcomes.len())) {
        outcomes.push(c);
    }
    if outcomes.is_empty() {
        return Err(Error::Invalid(format!("{}: missing outcome column `y0`", path.display())));
    }
    let p_col = column(&headers, "p");
    let n = records.len();
    let mut x = Array2::zeros((n, features.len()));
    let mut y = Array2::zeros((n, outcomes.len()));
    let mut w = Vec::with_capacity(n);
    let mut p = p_col.map(|_| Vec::with_capacity(n));
    for (i, r) in records.iter().enumerate() {
        for (f, (c, name)) in features.iter().enumerate() {
            x[[i, f]] = parse_f64(r, i, *c, &format!("f_{name}"))?;
        }
        let raw = r.get(w_col).unwrap_or("").trim();
        w.push(raw.parse::<usize>().map_err(|_| Error::Validation {
            row: i,
            column: "w".into(),
            detail: format!("`{raw}` is not a non-negative arm index"),
        })?);
        for (j, &c) in outcomes.iter().enumerate() {
            y[[i, j]] = parse_f64(r, i, c, &format!("y{j}"))?;
        }
        if let (Some(c), Some(p)) = (p_col, p.as_mut()) {
            p.push(parse_f64(r, i, c, "p")?);
        }
    }
    ExperimentTable::new(x, w, y, p, features.into_iter().map(|(_, n)| n).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for r in rows {
        writeln!(out, "{}", r.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_table(path: impl AsRef<Path>, table: &ExperimentTable) -> Result<()> {
    let mut header: Vec<String> = table.feature_names().iter().map(|n| format!("f_{n}")).collect();
    header.push("w".into());
    header.extend((0..table.n_outcomes()).map(|j| format!("y{j}")));
    if table.propensity().is_some() {
        header.push("p".into());
    }
    let rows = (0..table.n_rows()).map(|i| {
        let mut r: Vec<String> = table.feature_row(i).iter().map(f64::to_string).collect();
        r.push(table.treatment()[i].to_string());
        r.extend(table.outcomes().row(i).iter().map(f64::to_string));
        if let Some(p) = table.propensity() {
            r.push(p[i].to_string());
        }
        r
    });
    write_rows(path.as_ref(), header, rows)
}

fn read_cube(path: &Path, prefix: &str) -> Result<Array3<f64>> {
    let (headers, records) = open_csv(path)?;
    let mut cells: Vec<(usize, usize, usize)> = Vec::new();
    for (c, h) in headers.iter().enumerate() {
        let Some(rest) = h.strip_prefix(prefix).and_then(|r| r.strip_prefix('_')) else {
            continue;
        };
        let parsed = rest
            .split_once('_')
            .and_then(|(j, k)| Some((j.parse::<usize>().ok()?, k.parse::<usize>().ok()?)));
        match parsed {
            Some((j, k)) => cells.push((c, j, k)),
            None => {
                return Err(Error::Invalid(format!(
                    "{}: column `{h}` is not of the form `{prefix}_<outcome>_<arm>`",
                    path.display()
                )))
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Invalid(format!("{}: no `{prefix}_<j>_<k>` columns", path.display())));
    }
    let outs = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    let arms = cells.iter().map(|c| c.2).max().unwrap_or(0) + 1;
    for j in 0..outs {
        for k in 0..arms {
            if !cells.iter().any(|c| c.1 == j && c.2 == k) {
                return Err(Error::Invalid(format!(
                    "{}: missing column `{prefix}_{j}_{k}`",
                    path.display()
                )));
            }
        }
    }
    let mut cube = Array3::zeros((records.len(), arms, outs));
    for (i, r) in records.iter().enumerate() {
        for &(c, j, k) in &cells {
            cube[[i, k, j]] = parse_f64(r, i, c, &headers[c])?;
        }
    }
    Ok(cube)
}

fn write_cube(path: &Path, prefix: &str, cube: &Array3<f64>) -> Result<()> {
    let (n, arms, outs) = cube.dim();
    let header = (0..outs)
        .flat_map(|j| (0..arms).map(move |k| format!("{prefix}_{j}_{k}")))
        .collect();
    let rows = (0..n).map(|i| {
        (0..outs)
            .flat_map(|j| (0..arms).map(move |k| cube[[i, k, j]].to_string()))
            .collect()
    });
    write_rows(path, header, rows)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<PotentialPredictionMatrix> {
    PotentialPredictionMatrix::new(read_cube(path.as_ref(), PRED_PREFIX)?)
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &PotentialPredictionMatrix) -> Result<()> {
    write_cube(path.as_ref(), PRED_PREFIX, preds.values())
}

pub fn read_oracle(path: impl AsRef<Path>) -> Result<OracleOutcomes> {
    OracleOutcomes::new(read_cube(path.as_ref(), ORACLE_PREFIX)?)
}

pub fn write_oracle(path: impl AsRef<Path>, oracle: &OracleOutcomes) -> Result<()> {
    write_cube(path.as_ref(), ORACLE_PREFIX, oracle.potential())
}

/// `data/table.csv` → `data/table.oracle.csv`.
pub fn oracle_path_for(table_path: impl AsRef<Path>) -> PathBuf {
    let p = table_path.as_ref();
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!("{stem}.oracle.csv"))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| {
        if source.is_io() {
            Error::io(path, std::io::Error::other(source))
        } else {
            Error::Json {
                path: path.display().to_string(),
                source,
            }
        }
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_synthetic_a;

    #[test]
    fn table_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (t, o) = gen_synthetic_a(50, 3).unwrap();
        let path = dir.path().join("t.csv");
        write_table(&path, &t).unwrap();
        let back = read_table(&path).unwrap();
        assert_eq!(back.features(), t.features());
        assert_eq!(back.outcomes(), t.outcomes());
        assert_eq!(back.treatment(), t.treatment());
        assert_eq!(back.propensity(), t.propensity());
        assert_eq!(back.feature_names(), t.feature_names());

        let op = oracle_path_for(&path);
        assert_eq!(op.file_name().unwrap(), "t.oracle.csv");
        write_oracle(&op, &o).unwrap();
        assert_eq!(read_oracle(&op).unwrap().potential(), o.potential());
    }

    #[test]
    fn errors_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f_a,w,y0\n1.0,0,2.0\n2.0,1,oops\n").unwrap();
        match read_table(&path) {
            Err(Error::Validation { row, column, .. }) => assert_eq!((row, column.as_str()), (1, "y0")),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "f_a,w,y0\n1.0,-1,2.0\n").unwrap();
        assert!(matches!(read_table(&path), Err(Error::Validation { row: 0, .. })));

        let pred = dir.path().join("p.csv");
        std::fs::write(&pred, "yhat_0_0,yhat_0_1\n1.0,NaN\n").unwrap();
        match read_predictions(&pred) {
            Err(Error::Validation { row, column, .. }) => assert_eq!((row, column.as_str()), (0, "yhat_0_1")),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&pred, "yhat_0_0,yhat_1_1\n1.0,2.0\n").unwrap();
        assert!(matches!(read_predictions(&pred), Err(Error::Invalid(_))));
        assert!(read_table(dir.path().join("missing.csv")).unwrap_err().is_io());
    }
}
