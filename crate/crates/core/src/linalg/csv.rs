//! Matrix CSV format: one matrix row per line, comma-separated,
//! '.'-decimal, no header. The reader rejects ragged rows and non-finite
//! values; the writer emits shortest round-trip representations so that
//! written matrices read back bit-identically.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

impl Matrix {
    /// Reads a matrix from CSV at `path`.
    pub fn read_csv(path: &Path) -> Result<Matrix> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Matrix::parse_csv(&text, path)
    }

    /// Parses CSV text; `path` is used only for diagnostics.
    pub fn parse_csv(text: &str, path: &Path) -> Result<Matrix> {
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            match cols {
                None => cols = Some(fields.len()),
                Some(c) if c != fields.len() => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        detail: format!("ragged row: expected {c} fields, got {}", fields.len()),
                    });
                }
                _ => {}
            }
            for field in fields {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    detail: format!("invalid number '{}'", field.trim()),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        detail: format!("non-finite value '{}'", field.trim()),
                    });
                }
                data.push(v);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                detail: "empty matrix file".into(),
            });
        }
        let cols = cols.unwrap_or(0);
        Matrix::new(rows, cols, data)
    }

    /// Writes the matrix as CSV to `path`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = String::new();
        for i in 0..self.rows() {
            let row = self.row(i);
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    buf.push(',');
                }
                // f64 Display is the shortest representation that parses
                // back to the same bits.
                buf.push_str(&format!("{v}"));
            }
            buf.push('\n');
        }
        let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        file.write_all(buf.as_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
