//! Report serialization: CSV with 17 significant digits, pretty JSON and
//! 8-bit binary PGM heatmaps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::energy::GridFunction;
use crate::error::{Error, Result};

/// `{:.16e}`: 17 significant digits, round-trip exact for `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_float(s: &str) -> Result<f64> {
    match s.trim() {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t.parse().map_err(|_| Error::invalid(format!("not a number: `{t}`"))),
    }
}

/// Write a CSV file with a header row; every cell is a float.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::invalid(format!("CSV row has {} fields, header has {}", row.len(), header.len())));
        }
        w.write_record(row.iter().map(|v| format_float(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a CSV file whose cells are already formatted.
pub fn write_text_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::invalid(format!("CSV row has {} fields, header has {}", row.len(), header.len())));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a float CSV written by [`write_csv`]: `(header, rows)`.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(parse_float).collect::<Result<Vec<_>>>()?);
    }
    Ok((header, rows))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Column names `x0, .., x{n-1}, value`.
pub fn grid_header(n: usize) -> Vec<String> {
    (0..n).map(|a| format!("x{a}")).chain(std::iter::once("value".to_string())).collect()
}

/// One row per node, x fastest: coordinates then value.
pub fn write_grid_csv(path: &Path, u: &GridFunction) -> Result<()> {
    let d = u.domain();
    let header = grid_header(d.dim());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        path,
        &header,
        (0..d.len()).map(|i| {
            let mut row = d.coords(i);
            row.push(u.get(i));
            row
        }),
    )
}

/// Rescale `values` to `0..=255` (NaN maps to 0, constant fields to 128).
pub fn to_gray(values: &[f64]) -> Vec<u8> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                0
            } else if hi > lo {
                ((v - lo) / (hi - lo) * 255.0).round() as u8
            } else {
                128
            }
        })
        .collect()
}

/// Binary PGM (`P5`), rows top to bottom.
pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != width * height {
        return Err(Error::invalid(format!("PGM needs {} pixels, got {}", width * height, gray.len())));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(gray)?;
    w.flush()?;
    Ok(())
}

/// Heatmap of a 2-D grid function, or of the middle slice along the last
/// axis in 3-D. The image's top row is the largest `x1`.
pub fn write_grid_pgm(path: &Path, u: &GridFunction) -> Result<()> {
    let d = u.domain();
    let shape = d.shape();
    if d.dim() < 2 {
        return Err(Error::invalid("heatmaps need at least two dimensions"));
    }
    let (w, h) = (shape[0], shape[1]);
    let offset = if d.dim() == 3 { (shape[2] / 2) * d.strides()[2] } else { 0 };
    let mut values = Vec::with_capacity(w * h);
    for row in (0..h).rev() {
        for col in 0..w {
            values.push(u.get(offset + row * d.strides()[1] + col));
        }
    }
    write_pgm(path, w, h, &to_gray(&values))
}
