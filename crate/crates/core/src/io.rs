//! File helpers: atomic writes and the numeric CSV dialect used for time
//! series (17 significant digits, `.` decimal separator, LF line endings).

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("path", format!("`{}` has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Format columns as CSV text with the given header.
pub fn format_csv(header: &[&str], columns: &[&[f64]]) -> Result<String> {
    if header.len() != columns.len() {
        return Err(Error::Dimension(format!(
            "{} header names for {} columns",
            header.len(),
            columns.len()
        )));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if let Some(c) = columns.iter().find(|c| c.len() != rows) {
        return Err(Error::Dimension(format!("column lengths {} and {rows} differ", c.len())));
    }
    let mut s = String::with_capacity((rows + 1) * columns.len() * 24);
    s.push_str(&header.join(","));
    s.push('\n');
    for i in 0..rows {
        for (j, c) in columns.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{:.16e}", c[i]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_csv(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    write_atomic(path, format_csv(header, columns)?.as_bytes())
}

/// Read a numeric CSV whose header must equal `header`; returns columns.
pub fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(path, &text, header)
}

pub(crate) fn parse_csv(path: &Path, text: &str, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let found: Vec<&str> = first.trim().split(',').map(str::trim).collect();
    if found != header {
        return Err(err(1, format!("expected header `{}`, found `{}`", header.join(","), first.trim())));
    }
    let mut cols = vec![Vec::new(); header.len()];
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(err(i + 1, format!("expected {} fields, found {}", header.len(), fields.len())));
        }
        for (c, f) in cols.iter_mut().zip(fields) {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| err(i + 1, format!("cannot parse `{}`", f.trim())))?;
            if !v.is_finite() {
                return Err(err(i + 1, format!("non-finite value `{}`", f.trim())));
            }
            c.push(v);
        }
    }
    Ok(cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let a = [0.1, 1.0 / 3.0, -2.5e-300, 7.0];
        let b = [std::f64::consts::PI, 0.0, 1e300, -0.0];
        write_csv(&p, &["t", "x"], &[&a, &b]).unwrap();
        let cols = read_csv(&p, &["t", "x"]).unwrap();
        assert_eq!(cols[0], a);
        assert_eq!(cols[1], b);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains('\r'));
    }

    #[test]
    fn header_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "t,y\n0,1\n").unwrap();
        assert!(matches!(read_csv(&p, &["t", "x"]), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn ragged_columns_rejected() {
        assert!(format_csv(&["a", "b"], &[&[1.0], &[1.0, 2.0]]).is_err());
    }
}
