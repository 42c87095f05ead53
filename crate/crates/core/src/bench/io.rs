//! CSV ingestion of user-supplied fidelity data and nominal-value tables.
//!
//! Dataset files have the header `fidelity,x1,...,xd,y`; nominal tables
//! `hf_row_index,z1,...,zd`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::dataset::FidelityDataset;
use crate::error::{Error, Result};
use crate::num::DenseMatrix;

/// Expected shape of a dataset file.
#[derive(Debug, Clone)]
pub struct DatasetSchema {
    /// Bounds per fidelity (lowest first); their lengths fix the dimensions.
    pub bounds: Vec<Vec<(f64, f64)>>,
}

fn parse_field(s: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::SchemaMismatch(format!("line {line}, column {column}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue(format!("line {line}, column {column}")));
    }
    Ok(v)
}

fn read_records(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.clone();
    let rows = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

/// Loads the fidelity datasets stored in one file. Only the fidelities
/// present in the file are returned, ordered by index.
pub fn load_dataset_csv(path: &Path, schema: &DatasetSchema) -> Result<Vec<FidelityDataset>> {
    let (header, rows) = read_records(path)?;
    let d = header.len().saturating_sub(2);
    let expected: Vec<String> = std::iter::once("fidelity".to_string())
        .chain((1..=d).map(|j| format!("x{j}")))
        .chain(std::iter::once("y".to_string()))
        .collect();
    if header.len() < 3 || header.iter().zip(&expected).any(|(h, e)| h != e) {
        return Err(Error::SchemaMismatch(format!(
            "{}: header must be `fidelity,x1,...,xd,y`, got `{}`",
            path.display(),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut grouped: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (k, rec) in rows.iter().enumerate() {
        let line = k + 2;
        if rec.len() != header.len() {
            return Err(Error::SchemaMismatch(format!("line {line} has {} fields, expected {}", rec.len(), header.len())));
        }
        let fid = rec[0]
            .parse::<usize>()
            .map_err(|_| Error::SchemaMismatch(format!("line {line}: fidelity `{}` is not an index", &rec[0])))?;
        let bounds = schema
            .bounds
            .get(fid.wrapping_sub(1))
            .ok_or_else(|| Error::SchemaMismatch(format!("line {line}: unknown fidelity {fid}")))?;
        if bounds.len() != d {
            return Err(Error::SchemaMismatch(format!(
                "fidelity {fid} has {} inputs but the file has {d}",
                bounds.len()
            )));
        }
        let entry = grouped.entry(fid).or_default();
        for j in 0..d {
            entry.0.push(parse_field(&rec[j + 1], line, &expected[j + 1])?);
        }
        entry.1.push(parse_field(&rec[d + 1], line, "y")?);
    }
    if grouped.is_empty() {
        return Err(Error::SchemaMismatch(format!("{}: no data rows", path.display())));
    }
    grouped
        .into_iter()
        .map(|(fid, (xs, ys))| {
            let x = DenseMatrix::from_row_slice(ys.len(), d, &xs);
            FidelityDataset::new(x, ys, schema.bounds[fid - 1].clone(), fid)
        })
        .collect()
}

/// Loads nominal mapped values, one row per HF training row, matched by
/// `hf_row_index` (0-based).
pub fn load_nominal_table(path: &Path, n_hf: usize, d_lf: usize) -> Result<DenseMatrix> {
    let (header, rows) = read_records(path)?;
    let expected: Vec<String> = std::iter::once("hf_row_index".to_string())
        .chain((1..=d_lf).map(|j| format!("z{j}")))
        .collect();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(h, e)| h != e) {
        return Err(Error::SchemaMismatch(format!(
            "{}: header must be `{}`",
            path.display(),
            expected.join(",")
        )));
    }
    let mut out: Vec<Option<Vec<f64>>> = vec![None; n_hf];
    for (k, rec) in rows.iter().enumerate() {
        let line = k + 2;
        if rec.len() != expected.len() {
            return Err(Error::SchemaMismatch(format!("line {line} has {} fields", rec.len())));
        }
        let idx = rec[0]
            .parse::<usize>()
            .map_err(|_| Error::SchemaMismatch(format!("line {line}: bad row index `{}`", &rec[0])))?;
        if idx >= n_hf {
            return Err(Error::SchemaMismatch(format!("line {line}: row index {idx} beyond {n_hf} HF rows")));
        }
        if out[idx].is_some() {
            return Err(Error::SchemaMismatch(format!("line {line}: duplicate row index {idx}")));
        }
        let z = (0..d_lf)
            .map(|j| parse_field(&rec[j + 1], line, &expected[j + 1]))
            .collect::<Result<Vec<_>>>()?;
        out[idx] = Some(z);
    }
    let mut m = DenseMatrix::zeros(n_hf, d_lf);
    for (i, row) in out.into_iter().enumerate() {
        let row = row.ok_or(Error::MissingNominalRow(i))?;
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_datasets() {
        let f = file("fidelity,x1,y\n2,0.5,1.0\n2,0.25,2.0\n");
        let schema = DatasetSchema {
            bounds: vec![vec![(0.0, 1.0)], vec![(0.0, 1.0)]],
        };
        let ds = load_dataset_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].len(), 2);
        assert_eq!(ds[0].fidelity, 2);
        let bad = file("fidelity,x1,x2,y\n2,0.5,1.0\n");
        assert!(matches!(load_dataset_csv(bad.path(), &schema), Err(Error::SchemaMismatch(_))));
        let nan = file("fidelity,x1,y\n1,0.5,NaN\n");
        assert!(matches!(load_dataset_csv(nan.path(), &schema), Err(Error::NonFiniteValue(_))));
    }

    #[test]
    fn nominal_table_rows() {
        let f = file("hf_row_index,z1\n1,0.3\n0,0.1\n");
        let m = load_nominal_table(f.path(), 2, 1).unwrap();
        assert_eq!(m[(0, 0)], 0.1);
        assert_eq!(m[(1, 0)], 0.3);
        assert!(matches!(load_nominal_table(f.path(), 3, 1), Err(Error::MissingNominalRow(2))));
    }
}
