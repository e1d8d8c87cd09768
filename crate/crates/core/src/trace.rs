//! Metric trace records, bit-exact CSV serialization, and trace comparison.

use crate::error::Error;
use crate::Result;
use std::fmt;

pub const TRACE_HEADER: &str = "iter,epoch,alpha,gamma,radius_sq,center_loss,mean_worker_loss,envelope_quad,envelope_residual,top_eig,diverged";

pub const MODES_HEADER: &str = "iter,basis,mode_index,eigenvalue,energy";

/// One emitted metric record. Optional fields serialize as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iter: u64,
    pub epoch: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub radius_sq: f64,
    pub center_loss: f64,
    pub mean_worker_loss: f64,
    pub envelope_quad: Option<f64>,
    pub envelope_residual: Option<f64>,
    pub top_eig: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Laplacian,
    Hessian,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Laplacian => "laplacian",
            Basis::Hessian => "hessian",
        })
    }
}

/// One row of the mode-energy table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRow {
    pub iter: u64,
    pub basis: Basis,
    /// 1-based mode index in ascending-eigenvalue order.
    pub mode_index: usize,
    pub eigenvalue: f64,
    pub energy: f64,
}

/// 17-significant-digit serialization; round-trips f64 exactly so byte
/// equality of traces is equivalent to bit equality of the runs.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub fn trace_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(64 + rows.len() * 200);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iter,
            r.epoch,
            fmt_float(r.alpha),
            fmt_float(r.gamma),
            fmt_float(r.radius_sq),
            fmt_float(r.center_loss),
            fmt_float(r.mean_worker_loss),
            fmt_opt(r.envelope_quad),
            fmt_opt(r.envelope_residual),
            fmt_opt(r.top_eig),
            u8::from(r.diverged),
        ));
    }
    out
}

pub fn modes_to_csv(rows: &[ModeRow]) -> String {
    let mut out = String::new();
    out.push_str(MODES_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iter,
            r.basis,
            r.mode_index,
            fmt_float(r.eigenvalue),
            fmt_float(r.energy),
        ));
    }
    out
}

/// Parsed CSV: header column names plus rows of optional numeric cells
/// (empty cell → None; non-numeric cells are an error).
pub struct ParsedTrace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

pub fn parse_numeric_csv(text: &str) -> Result<ParsedTrace> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty trace file".into()))?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(Error::Parse {
                line: i + 2,
                msg: format!("expected {} cells, found {}", columns.len(), cells.len()),
            });
        }
        let mut row = Vec::with_capacity(cells.len());
        for cell in cells {
            if cell.is_empty() {
                row.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    msg: format!("non-numeric cell `{cell}`"),
                })?;
                row.push(Some(v));
            }
        }
        rows.push(row);
    }
    Ok(ParsedTrace { columns, rows })
}

/// Column-wise comparison of two traces with matching schemas.
#[derive(Debug, Clone)]
pub struct TraceDiff {
    /// Per-column maximum absolute difference (NaN when one side is empty
    /// where the other is not).
    pub max_abs: Vec<(String, f64)>,
    /// `iter` value of the first row with any differing cell.
    pub first_diff_iter: Option<f64>,
    /// Extra rows present in only one trace.
    pub row_count_delta: i64,
}

impl TraceDiff {
    pub fn identical(&self) -> bool {
        self.row_count_delta == 0
            && self.first_diff_iter.is_none()
            && self.max_abs.iter().all(|(_, d)| *d == 0.0)
    }
}

pub fn compare_traces(a: &str, b: &str) -> Result<TraceDiff> {
    let pa = parse_numeric_csv(a)?;
    let pb = parse_numeric_csv(b)?;
    if pa.columns != pb.columns {
        return Err(Error::InvalidArgument(format!(
            "schema mismatch: {:?} vs {:?}",
            pa.columns, pb.columns
        )));
    }
    let ncols = pa.columns.len();
    let mut max_abs = vec![0.0f64; ncols];
    let mut first_diff = None;
    for (ra, rb) in pa.rows.iter().zip(pb.rows.iter()) {
        let mut row_differs = false;
        for c in 0..ncols {
            let d = match (ra[c], rb[c]) {
                (None, None) => 0.0,
                (Some(x), Some(y)) => (x - y).abs(),
                _ => f64::NAN,
            };
            if d != 0.0 {
                row_differs = true;
            }
            if d.is_nan() || d > max_abs[c] {
                max_abs[c] = if d.is_nan() { f64::NAN } else { d };
            }
        }
        if row_differs && first_diff.is_none() {
            first_diff = ra[0].or(rb[0]);
        }
    }
    Ok(TraceDiff {
        max_abs: pa.columns.into_iter().zip(max_abs).collect(),
        first_diff_iter: first_diff,
        row_count_delta: pa.rows.len() as i64 - pb.rows.len() as i64,
    })
}

/// Hex digest of a parameter vector (FNV-1a over the little-endian f64 bits);
/// used to fingerprint the deployed model in run summaries.
pub fn checksum(values: &[f64]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_le_bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{hash:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iter: u64, val: f64) -> MetricRow {
        MetricRow {
            iter,
            epoch: iter / 10,
            alpha: 0.1,
            gamma: 1.0,
            radius_sq: val,
            center_loss: val * 2.0,
            mean_worker_loss: val * 2.5,
            envelope_quad: Some(val / 2.0),
            envelope_residual: Some(0.0),
            top_eig: None,
            diverged: false,
        }
    }

    #[test]
    fn header_is_exact() {
        let csv = trace_to_csv(&[]);
        assert_eq!(csv, format!("{TRACE_HEADER}\n"));
    }

    #[test]
    fn floats_round_trip_at_17_digits() {
        for x in [0.1, 1.0 / 3.0, 1e-20, 12345.6789, f64::MIN_POSITIVE, 0.0] {
            let s = fmt_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
            // 17 significant digits: mantissa digit + 16 decimals
            assert!(s.contains('.') && s.contains('e'));
        }
    }

    #[test]
    fn parse_round_trip() {
        let rows = vec![row(0, 1.5), row(10, 0.25)];
        let csv = trace_to_csv(&rows);
        let parsed = parse_numeric_csv(&csv).unwrap();
        assert_eq!(parsed.columns.len(), 11);
        assert_eq!(parsed.rows.len(), 2);
        assert_eq!(parsed.rows[0][0], Some(0.0));
        assert_eq!(parsed.rows[1][4], Some(0.25));
        assert_eq!(parsed.rows[0][9], None); // empty top_eig
    }

    #[test]
    fn compare_identical_and_differing() {
        let a = trace_to_csv(&[row(0, 1.0), row(5, 2.0), row(7, 3.0)]);
        let diff = compare_traces(&a, &a).unwrap();
        assert!(diff.identical());

        let b = trace_to_csv(&[row(0, 1.0), row(5, 2.0), row(7, 3.5)]);
        let diff = compare_traces(&a, &b).unwrap();
        assert!(!diff.identical());
        assert_eq!(diff.first_diff_iter, Some(7.0));
        let (name, d) = diff
            .max_abs
            .iter()
            .find(|(n, _)| n == "radius_sq")
            .unwrap();
        assert_eq!(name, "radius_sq");
        assert_eq!(*d, 0.5);
    }

    #[test]
    fn compare_rejects_schema_mismatch() {
        let a = trace_to_csv(&[row(0, 1.0)]);
        let b = "iter,other\n1,2\n";
        assert!(compare_traces(&a, b).is_err());
    }

    #[test]
    fn modes_csv_layout() {
        let rows = vec![ModeRow {
            iter: 3,
            basis: Basis::Laplacian,
            mode_index: 2,
            eigenvalue: 0.5,
            energy: 1.25,
        }];
        let csv = modes_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), MODES_HEADER);
        let data = lines.next().unwrap();
        assert!(data.starts_with("3,laplacian,2,"));
    }

    #[test]
    fn checksum_is_stable_and_sensitive() {
        let a = checksum(&[1.0, 2.0, 3.0]);
        assert_eq!(a, checksum(&[1.0, 2.0, 3.0]));
        assert_ne!(a, checksum(&[1.0, 2.0, 3.0000001]));
        assert_eq!(a.len(), 16);
    }
}
