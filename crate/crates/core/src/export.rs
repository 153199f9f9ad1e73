//! Matrix CSV and PGM heatmap output.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Format like C's `printf("%.9g", x)`.
pub fn format_g9(x: f64) -> String {
    const P: i32 = 9;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", strip_zeros(mantissa), sign, exp.abs())
    } else {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, x);
        strip_zeros(&fixed).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn matrix_to_csv(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|&v| format_g9(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parse a dense numeric CSV without a header. Blank lines are skipped;
/// every row must have the same width and every cell must be a finite number.
pub fn parse_matrix_csv(text: &str) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for cell in record.iter() {
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                line,
                detail: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    line,
                    detail: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Csv {
                    line,
                    detail: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let width = width.ok_or(Error::Empty("CSV matrix"))?;
    Array2::from_shape_vec((rows, width), values).map_err(|e| Error::invalid(e.to_string()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_matrix_csv(&text)
}

pub fn write_matrix_csv(m: &Array2<f64>, path: &Path) -> Result<()> {
    fs::write(path, matrix_to_csv(m)).map_err(io_err(path))
}

/// Binary PGM with one pixel per cell, min-max scaled to 0..=255. A constant
/// matrix maps to mid-grey.
pub fn pgm_bytes(m: &Array2<f64>) -> Result<Vec<u8>> {
    if m.is_empty() {
        return Err(Error::Empty("heatmap matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap matrix"));
    }
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", m.ncols(), m.nrows()).into_bytes();
    out.extend(m.iter().map(|&v| {
        if hi == lo {
            128
        } else {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        }
    }));
    Ok(out)
}

pub fn write_pgm(m: &Array2<f64>, path: &Path) -> Result<()> {
    let bytes = pgm_bytes(m)?;
    fs::write(path, bytes).map_err(io_err(path))
}
