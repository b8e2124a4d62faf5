//! Point clouds in `R^D` and their on-disk formats.
//!
//! Points are stored column-major (one column per point) so that per-point
//! views are contiguous. On disk the orientation is row-per-point:
//!
//! * CSV: one point per line, comma-separated coordinates, optional header
//!   line (skipped when any field fails to parse as a number).
//! * Binary: 8-byte magic `GMRAPC\x00\x01`, then `n` and `D` as little-endian
//!   u64, then `n * D` little-endian f64 values, point-major.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

const BINARY_MAGIC: [u8; 8] = *b"GMRAPC\x00\x01";

/// Supported point-cloud file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    Csv,
    Binary,
}

/// `n` points in `R^D` with a provenance label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// `D x n`, one column per point.
    data: DMatrix<f64>,
    label: String,
}

impl PointCloud {
    /// Wraps a `D x n` matrix of points-as-columns.
    pub fn from_columns(data: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::SpecError("point cloud contains NaN/Inf".into()));
        }
        Ok(Self {
            data,
            label: label.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn point(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.column(i)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Gathers the given points into a `D x m` matrix.
    pub fn gather(&self, indices: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ambient_dim(), indices.len());
        for (dst, &src) in indices.iter().enumerate() {
            out.set_column(dst, &self.data.column(src));
        }
        out
    }

    /// Empirical mean of the given points.
    pub fn mean_of(&self, indices: &[usize]) -> DVector<f64> {
        let mut mean = DVector::zeros(self.ambient_dim());
        for &i in indices {
            mean += self.data.column(i);
        }
        mean /= indices.len() as f64;
        mean
    }

    pub fn save(&self, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
        match format {
            CloudFormat::Csv => self.save_csv(path),
            CloudFormat::Binary => self.save_binary(path),
        }
    }

    fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for p in 0..self.n() {
            let fields: Vec<String> = (0..self.ambient_dim())
                .map(|i| format!("{}", self.data[(i, p)]))
                .collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(&BINARY_MAGIC)?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.ambient_dim() as u64).to_le_bytes())?;
        for p in 0..self.n() {
            for i in 0..self.ambient_dim() {
                w.write_all(&self.data[(i, p)].to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Loads a point cloud from disk, inferring the dimension from the data.
/// Rows containing NaN/Inf or a mismatched field count are rejected with
/// their line number.
pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let label = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cloud".into());
    match format {
        CloudFormat::Csv => load_csv(path.as_ref(), label),
        CloudFormat::Binary => load_binary(path.as_ref(), label),
    }
}

fn load_csv(path: &Path, label: String) -> Result<PointCloud> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        let mut bad_field: Option<String> = None;
        for field in trimmed.split(',') {
            match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                Ok(_) => {
                    bad_field = Some(format!("non-finite value '{}'", field.trim()));
                    break;
                }
                Err(_) => {
                    bad_field = Some(format!("cannot parse '{}' as a number", field.trim()));
                    break;
                }
            }
        }
        if let Some(message) = bad_field {
            // A failed first line is treated as a header.
            if line_no == 1 && rows.is_empty() && message.starts_with("cannot parse") {
                continue;
            }
            return Err(Error::ParseError {
                line: line_no,
                message,
            });
        }
        if let Some(d) = dim {
            if row.len() != d {
                return Err(Error::ParseError {
                    line: line_no,
                    message: format!("expected {d} fields, found {}", row.len()),
                });
            }
        } else {
            dim = Some(row.len());
        }
        rows.push(row);
    }
    let d = dim.ok_or(Error::EmptyInput)?;
    let n = rows.len();
    let mut data = DMatrix::zeros(d, n);
    for (p, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            data[(i, p)] = v;
        }
    }
    PointCloud::from_columns(data, label)
}

fn load_binary(path: &Path, label: String) -> Result<PointCloud> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != BINARY_MAGIC {
        return Err(Error::ParseError {
            line: 0,
            message: "bad magic bytes for binary point cloud".into(),
        });
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let n = u64::from_le_bytes(buf8) as usize;
    r.read_exact(&mut buf8)?;
    let d = u64::from_le_bytes(buf8) as usize;
    let mut data = DMatrix::zeros(d, n);
    for p in 0..n {
        for i in 0..d {
            r.read_exact(&mut buf8)?;
            let v = f64::from_le_bytes(buf8);
            if !v.is_finite() {
                return Err(Error::ParseError {
                    line: p + 1,
                    message: "non-finite value in binary point cloud".into(),
                });
            }
            data[(i, p)] = v;
        }
    }
    PointCloud::from_columns(data, label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_integers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        std::fs::write(&path, "1,2\n3,4\n5,6\n").unwrap();
        let cloud = load_cloud(&path, CloudFormat::Csv).unwrap();
        assert_eq!(cloud.n(), 3);
        assert_eq!(cloud.ambient_dim(), 2);
        assert_eq!(cloud.point(2)[1], 6.0);
    }

    #[test]
    fn csv_header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        std::fs::write(&path, "x,y\n1,2\n3,4\n").unwrap();
        let cloud = load_cloud(&path, CloudFormat::Csv).unwrap();
        assert_eq!(cloud.n(), 2);
    }

    #[test]
    fn csv_nan_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        std::fs::write(&path, "1,2\n3,NaN\n").unwrap();
        match load_cloud(&path, CloudFormat::Csv) {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.bin");
        let data = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -1.5, 2.5_f64.sqrt(), 1e-300]);
        let cloud = PointCloud::from_columns(data, "t").unwrap();
        cloud.save(&path, CloudFormat::Binary).unwrap();
        let loaded = load_cloud(&path, CloudFormat::Binary).unwrap();
        for p in 0..cloud.n() {
            for i in 0..cloud.ambient_dim() {
                assert_eq!(
                    cloud.point(p)[i].to_bits(),
                    loaded.point(p)[i].to_bits(),
                    "bit mismatch at point {p} coord {i}"
                );
            }
        }
    }
}
