//! Vector CSV files: one coordinate per line, `re` or `re,im`, optional
//! header line starting with a letter.

use num_complex::Complex64;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub fn parse_vector_csv(text: &str) -> Result<Vec<Complex64>, IoError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        let fields: Vec<&str> = rec.iter().filter(|f| !f.is_empty()).collect();
        if fields.is_empty() {
            continue;
        }
        if out.is_empty() && i == 0 && fields[0].starts_with(|c: char| c.is_ascii_alphabetic()) && fields[0].parse::<f64>().is_err() {
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| IoError::Parse { line, msg: format!("not a number: `{s}`") });
        let v = match fields.len() {
            1 => Complex64::new(num(fields[0])?, 0.0),
            2 => Complex64::new(num(fields[0])?, num(fields[1])?),
            k => return Err(IoError::Parse { line, msg: format!("expected 1 or 2 fields, got {k}") }),
        };
        if !v.is_finite() {
            return Err(IoError::Parse { line, msg: "non-finite coordinate".into() });
        }
        out.push(v);
    }
    Ok(out)
}

pub fn read_vector_csv(path: &Path) -> Result<Vec<Complex64>, IoError> {
    parse_vector_csv(&std::fs::read_to_string(path)?)
}

pub fn write_vector_csv(path: &Path, x: &[Complex64]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["re", "im"])?;
    for c in x {
        w.write_record([format!("{:e}", c.re), format!("{:e}", c.im)])?;
    }
    w.flush()?;
    Ok(())
}
