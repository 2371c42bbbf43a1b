//! Embedding data model: dense row-major f32 matrices, file formats, and
//! row normalization.
//!
//! Every selection strategy in this crate consumes unit-normalized rows so
//! that cosine similarity reduces to a plain dot product. The dot product
//! itself ([`fixed_order_dot`]) uses a fixed 8-lane reduction tree, so a
//! similarity value depends only on the two rows involved — never on block
//! size, thread count, or which kernel asked for it.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes opening an nlbe-binary file.
pub const NLBE_MAGIC: [u8; 4] = *b"NLBE";
/// Current nlbe-binary format version.
pub const NLBE_VERSION: u32 = 1;

/// On-disk representats for an [`EmbeddingMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingFormat {
    /// `NLBE` magic, u32 LE version, u64 LE n, u32 LE d, then n*d f32 LE values.
    #[serde(rename = "nlbe-binary")]
    NlbeBinary,
    /// One row per line, comma-separated decimal floats, no header.
    #[serde(rename = "csv")]
    Csv,
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nlbe-binary" | "nlbe" => Ok(EmbeddingFormat::NlbeBinary),
            "csv" => Ok(EmbeddingFormat::Csv),
            other => Err(Error::InvalidInput(format!(
                "unknown embedding format {other:?}; expected \"nlbe-binary\" or \"csv\""
            ))),
        }
    }
}

impl fmt::Display for EmbeddingFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingFormat::NlbeBinary => write!(f, "nlbe-binary"),
            EmbeddingFormat::Csv => write!(f, "csv"),
        }
    }
}

impl EmbeddingFormat {
    /// Guess the format from a file extension (`.csv` vs `.nlbe`).
    pub fn from_extension(path: &Path) -> Option<EmbeddingFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Some(EmbeddingFormat::Csv),
            Some("nlbe") => Some(EmbeddingFormat::NlbeBinary),
            _ => None,
        }
    }
}

/// N×D dense feature matrix, the universe from which poisons are chosen.
///
/// Invariants enforced at construction: `n >= 1`, `d >= 1`, all entries
/// finite. `normalized` is true only for matrices produced by
/// [`EmbeddingMatrix::normalize_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Build a matrix from row-major data, validating shape and finiteness.
    pub fn from_parts(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput(format!(
                "embedding matrix must have n >= 1 and d >= 1, got n={n}, d={d}"
            )));
        }
        let expected = n
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidInput(format!("n*d overflows: n={n}, d={d}")))?;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: expected,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value {} at row {}, col {}",
                data[pos],
                pos / d,
                pos % d
            )));
        }
        Ok(EmbeddingMatrix {
            n,
            d,
            data,
            normalized: false,
        })
    }

    /// Convenience constructor from per-row slices.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("no rows given".into()));
        }
        let d = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::InvalidInput(format!(
                    "row {i} has length {}, expected {d}",
                    r.len()
                )));
            }
        }
        let data: Vec<f32> = rows.iter().flatten().copied().collect();
        Self::from_parts(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub(crate) fn require_normalized(&self) -> Result<()> {
        if self.normalized {
            Ok(())
        } else {
            Err(Error::NotNormalized)
        }
    }

    /// Divide every row by its L2 norm.
    ///
    /// Rows with norm below 1e-12 are rejected (their direction is
    /// numerically meaningless). Idempotent up to 1e-6.
    pub fn normalize_rows(&self) -> Result<EmbeddingMatrix> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.n {
            let row = self.row(i);
            let norm = row_norm_l2(row);
            if norm < 1e-12 {
                return Err(Error::ZeroRow { row: i, norm });
            }
            out.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
        Ok(EmbeddingMatrix {
            n: self.n,
            d: self.d,
            data: out,
            normalized: true,
        })
    }

    /// Read a matrix from disk. The stored data is never assumed normalized.
    pub fn load(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingMatrix> {
        match format {
            EmbeddingFormat::NlbeBinary => load_nlbe(path),
            EmbeddingFormat::Csv => load_csv(path),
        }
    }

    /// Write a matrix to disk. nlbe-binary round-trips bit-exactly.
    pub fn save(&self, path: &Path, format: EmbeddingFormat) -> Result<()> {
        match format {
            EmbeddingFormat::NlbeBinary => save_nlbe(self, path),
            EmbeddingFormat::Csv => save_csv(self, path),
        }
    }
}

/// L2 norm of a row, accumulated in f64 in index order.
pub fn row_norm_l2(row: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for &v in row {
        acc += (v as f64) * (v as f64);
    }
    acc.sqrt()
}

/// Dot product with a fixed 8-lane reduction tree.
///
/// Element t contributes to lane t % 8; lanes combine as
/// `((l0+l1)+(l2+l3)) + ((l4+l5)+(l6+l7))`. The result is a pure function
/// of the two slices, so every kernel built on it is bit-identical across
/// block sizes and thread counts, while the independent lanes keep the
/// loop SIMD-friendly.
#[inline]
pub fn fixed_order_dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] += xa[l] * xb[l];
        }
    }
    for (l, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        lanes[l] += x * y;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
}

fn load_nlbe(path: &Path) -> Result<EmbeddingMatrix> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    if bytes.len() < 4 || bytes[0..4] != NLBE_MAGIC {
        return Err(Error::parse(path, "bad magic at byte 0: expected \"NLBE\""));
    }
    if bytes.len() < 20 {
        return Err(Error::parse(
            path,
            format!("truncated header: {} bytes, need 20", bytes.len()),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != NLBE_VERSION {
        return Err(Error::parse(
            path,
            format!("unsupported version {version} at byte 4, expected {NLBE_VERSION}"),
        ));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let n = usize::try_from(n)
        .map_err(|_| Error::parse(path, format!("n = {n} does not fit in usize")))?;
    let d = d as usize;
    let count = n
        .checked_mul(d)
        .ok_or_else(|| Error::parse(path, format!("n*d overflows: n={n}, d={d}")))?;
    let expected_len = 20 + count * 4;
    if bytes.len() != expected_len {
        return Err(Error::parse(
            path,
            format!(
                "payload length mismatch: file has {} bytes, header n={n} d={d} implies {expected_len}",
                bytes.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[20..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::parse(
                path,
                format!(
                    "non-finite value at byte {} (row {}, col {})",
                    20 + i * 4,
                    i / d,
                    i % d
                ),
            ));
        }
        data.push(v);
    }
    EmbeddingMatrix::from_parts(n, d, data)
}

fn save_nlbe(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |buf: &[u8]| w.write_all(buf).map_err(|e| Error::io(path, e));
    write(&NLBE_MAGIC)?;
    write(&NLBE_VERSION.to_le_bytes())?;
    write(&(m.n as u64).to_le_bytes())?;
    write(&(m.d as u32).to_le_bytes())?;
    for v in &m.data {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_csv(path: &Path) -> Result<EmbeddingMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut d = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.is_empty() {
            return Err(Error::parse(path, format!("empty line {lineno}")));
        }
        let mut row = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::parse(
                    path,
                    format!("bad float {field:?} at line {lineno}, column {}", col + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    format!("non-finite value at line {lineno}, column {}", col + 1),
                ));
            }
            row.push(v);
        }
        match d {
            None => d = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::parse(
                    path,
                    format!(
                        "row length mismatch at line {lineno}: expected {d}, got {}",
                        row.len()
                    ),
                ));
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, "no rows"));
    }
    EmbeddingMatrix::from_rows(&rows)
}

fn save_csv(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..m.n {
        let row = m.row(i);
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_parse_direct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,0\n0,1\n").unwrap();
        let m = EmbeddingMatrix::load(&path, EmbeddingFormat::Csv).unwrap();
        assert_eq!(m.n(), 2);
        assert_eq!(m.d(), 2);
        assert_eq!(m.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert!(!m.is_normalized());
    }

    #[test]
    fn csv_row_length_mismatch_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,2,3\n4,5,6,7\n").unwrap();
        let err = EmbeddingMatrix::load(&path, EmbeddingFormat::Csv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "unexpected message: {msg}");
    }

    #[test]
    fn nlbe_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nlbe");
        let m = EmbeddingMatrix::from_parts(
            3,
            4,
            vec![
                0.25, -1.5, 3.75e-3, 1.0, 2.0, -0.125, 9.5, 0.0, 1e-20, 7.0, -42.0, 0.5,
            ],
        )
        .unwrap();
        m.save(&path, EmbeddingFormat::NlbeBinary).unwrap();
        let back = EmbeddingMatrix::load(&path, EmbeddingFormat::NlbeBinary).unwrap();
        assert_eq!(back.n(), 3);
        assert_eq!(back.d(), 4);
        let a: Vec<u32> = m.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn nlbe_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nlbe");
        fs::write(&path, b"XXXX\x01\x00\x00\x00").unwrap();
        let err = EmbeddingMatrix::load(&path, EmbeddingFormat::NlbeBinary).unwrap_err();
        assert!(err.to_string().contains("byte 0"));
    }

    #[test]
    fn csv_round_trip_within_1e6() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = EmbeddingMatrix::from_parts(2, 3, vec![0.1, -2.5, 3.3333333, 1e-7, 42.0, -0.0])
            .unwrap();
        m.save(&path, EmbeddingFormat::Csv).unwrap();
        let back = EmbeddingMatrix::load(&path, EmbeddingFormat::Csv).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let m = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let n = m.normalize_rows().unwrap();
        assert_eq!(n.row(0), &[0.6, 0.8]);
        assert!(n.is_normalized());
    }

    #[test]
    fn normalize_unit_row_is_identity() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let n = m.normalize_rows().unwrap();
        assert_eq!(n.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn normalize_idempotent() {
        let m = EmbeddingMatrix::from_rows(&[vec![0.3, -1.2, 0.9], vec![5.0, 5.0, 5.0]]).unwrap();
        let n1 = m.normalize_rows().unwrap();
        let n2 = n1.normalize_rows().unwrap();
        for (a, b) in n1.data().iter().zip(n2.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn normalize_zero_row_errors_with_index() {
        let m = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let err = m.normalize_rows().unwrap_err();
        match err {
            Error::ZeroRow { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected() {
        let err = EmbeddingMatrix::from_parts(1, 2, vec![1.0, f32::NAN]).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn fixed_order_dot_matches_sequential_on_small_inputs() {
        // For d < 8 every element lands in its own lane, so the value equals
        // the plain sequential sum exactly.
        assert_eq!(fixed_order_dot(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(fixed_order_dot(&[0.6, 0.8], &[0.6, 0.8]), 0.6f32 * 0.6 + 0.8f32 * 0.8);
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let err =
            EmbeddingMatrix::load(Path::new("/nonexistent/m.nlbe"), EmbeddingFormat::NlbeBinary)
                .unwrap_err();
        assert_eq!(err.kind(), "io");
    }
}
