//! Delimited-text input and output formats.
//!
//! Input tables are comma separated; `#` starts a comment line and a
//! non-numeric first row is taken as a header.

use std::path::Path;

use spinpop_core::basis::Trajectory;
use spinpop_core::learning::WeightMatrix;

use crate::error::ConfigError;

type Result<T> = std::result::Result<T, ConfigError>;

fn data_err(path: &Path, line: usize, reason: impl Into<String>) -> ConfigError {
    ConfigError::Data { path: path.to_path_buf(), line, reason: reason.into() }
}

/// Optional header and numeric rows.
pub type Table = (Option<Vec<String>>, Vec<Vec<f64>>);

/// Rows of a numeric table with exactly `cols` columns, and the header if any.
pub fn read_numeric(path: &Path, cols: usize) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes());
    let mut header = None;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            data_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != cols {
            return Err(data_err(path, line, format!("expected {cols} columns, found {}", record.len())));
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) if row.iter().all(|v| v.is_finite()) => rows.push(row),
            Ok(_) => return Err(data_err(path, line, "non-finite value")),
            Err(_) if header.is_none() && rows.is_empty() => header = Some(record.iter().map(str::to_string).collect()),
            Err(e) => return Err(data_err(path, line, e.to_string())),
        }
    }
    if rows.is_empty() {
        return Err(data_err(path, 0, "no data rows"));
    }
    Ok((header, rows))
}

/// `(bias, rate_Hz)` pairs.
pub fn read_rate_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let (_, rows) = read_numeric(path, 2)?;
    Ok(rows.into_iter().map(|r| (r[0], r[1])).collect())
}

/// A resistance trace as `(sample spacing in s, resistances in ohm)`.
/// Samples must be evenly spaced in time.
pub fn read_trace(path: &Path) -> Result<(f64, Vec<f64>)> {
    let (_, rows) = read_numeric(path, 2)?;
    if rows.len() < 2 {
        return Err(data_err(path, 0, "a trace needs at least two samples"));
    }
    let dt = (rows[rows.len() - 1][0] - rows[0][0]) / (rows.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(data_err(path, 0, "time column must increase"));
    }
    for (k, w) in rows.windows(2).enumerate() {
        let step = w[1][0] - w[0][0];
        if (step - dt).abs() > 1e-6 * dt {
            return Err(data_err(path, k + 2, "samples are not evenly spaced"));
        }
    }
    Ok((dt, rows.into_iter().map(|r| r[1]).collect()))
}

/// Planar curve with header `t,x,y`.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let (header, rows) = read_numeric(path, 3)?;
    match header {
        Some(h) if h == ["t", "x", "y"] => {}
        _ => return Err(data_err(path, 1, "expected header `t,x,y`")),
    }
    let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<_>>();
    Trajectory::new(col(0), col(1), col(2)).map_err(|e| data_err(path, 0, e.to_string()))
}

const WEIGHTS_MAGIC: &str = "spinpop-weights";
const WEIGHTS_VERSION: u32 = 1;

/// Versioned text form: a magic line, a `dims n_in n_out` line, then one row
/// per input junction.
pub fn weights_to_text(w: &WeightMatrix) -> String {
    let mut out = format!("{WEIGHTS_MAGIC} {WEIGHTS_VERSION}\ndims {} {}\n", w.n_in(), w.n_out());
    for row in w.entries().chunks(w.n_out().max(1)) {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn weights_from_text(text: &str, path: &Path) -> Result<WeightMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, reason: &str| data_err(path, line + 1, reason);
    let (n, magic) = lines.next().ok_or_else(|| bad(0, "empty weight file"))?;
    match magic.split_whitespace().collect::<Vec<_>>().as_slice() {
        [m, v] if *m == WEIGHTS_MAGIC => {
            if v.parse::<u32>().ok() != Some(WEIGHTS_VERSION) {
                return Err(bad(n, "unsupported weight file version"));
            }
        }
        _ => return Err(bad(n, "not a weight file")),
    }
    let (n, dims) = lines.next().ok_or_else(|| bad(n, "missing dims line"))?;
    let (n_in, n_out) = match dims.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["dims", a, b] => match (a.parse::<usize>(), b.parse::<usize>()) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return Err(bad(n, "malformed dims line")),
        },
        _ => return Err(bad(n, "malformed dims line")),
    };
    let mut entries = Vec::with_capacity(n_in * n_out);
    let mut rows = 0;
    for (n, line) in lines {
        let row: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|_| bad(n, "malformed weight"))?;
        if row.len() != n_out {
            return Err(bad(n, "row length does not match dims"));
        }
        entries.extend(row);
        rows += 1;
    }
    if rows != n_in {
        return Err(bad(0, "row count does not match dims"));
    }
    WeightMatrix::from_entries(n_in, n_out, entries).map_err(|e| bad(0, &e.to_string()))
}

/// Shortest round-trip form, in scientific notation outside `[1e-4, 1e15)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Comma-separated table with a header row. Identical values give
/// identical bytes.
pub fn csv_table(header: &[&str], rows: &[Vec<f64>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(row.iter().map(|&v| fmt_f64(v))).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
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
    fn rate_table_with_header_and_comments() {
        let f = file("# measured\nbias_A,rate_Hz\n-1e-4, 10\n0,20\n");
        assert_eq!(read_rate_table(f.path()).unwrap(), vec![(-1e-4, 10.0), (0.0, 20.0)]);
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let f = file("bias,rate\n0,1\n0.1,abc\n");
        let err = read_rate_table(f.path()).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
        let f = file("0,1,2\n");
        assert!(read_rate_table(f.path()).is_err());
        let f = file("");
        assert!(read_rate_table(f.path()).is_err());
    }

    #[test]
    fn two_point_trajectory_round_trips() {
        let f = file("t,x,y\n0,0,0\n1,2,3\n");
        let tr = read_trajectory(f.path()).unwrap();
        assert_eq!(tr.t, vec![0.0, 1.0]);
        assert_eq!(tr.y, vec![0.0, 3.0]);
        let f = file("a,b,c\n0,0,0\n1,2,3\n");
        assert!(read_trajectory(f.path()).is_err());
    }

    #[test]
    fn uneven_trace_is_rejected() {
        let f = file("0,1\n1e-3,2\n3e-3,1\n");
        assert!(read_trace(f.path()).is_err());
        let f = file("0,1\n1e-3,2\n2e-3,1\n");
        let (dt, r) = read_trace(f.path()).unwrap();
        assert!((dt - 1e-3).abs() < 1e-15);
        assert_eq!(r, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn weight_file_round_trip() {
        let w = WeightMatrix::from_entries(2, 3, vec![0.1, -2.0, 3.5e-7, 0.0, 1.0, 1.0 / 3.0]).unwrap();
        let text = weights_to_text(&w);
        assert!(text.starts_with("spinpop-weights 1\ndims 2 3\n"));
        assert_eq!(weights_from_text(&text, Path::new("w")).unwrap(), w);
        assert!(weights_from_text("spinpop-weights 2\ndims 1 1\n0\n", Path::new("w")).is_err());
        assert!(weights_from_text("spinpop-weights 1\ndims 2 1\n0\n", Path::new("w")).is_err());
    }

    #[test]
    fn csv_output_is_exact() {
        let bytes = csv_table(&["a", "b"], &[vec![1.0, 0.1], vec![3000.0, 1e-300]]);
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,b\n1,0.1\n3000,1e-300\n");
        for v in [4.69e-9, -1.0 / 3.0, 1e20, 0.0, 123.456] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
