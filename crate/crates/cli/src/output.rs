//! PNG, CSV and JSON-lines writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, ArrayView2};
use serde_json::{Map, Value};

use crate::error::CliResult;

/// Pixel magnification applied to every image tile.
pub const ZOOM: u32 = 4;
const GAP: u32 = 2;

/// How a tile's values were mapped to gray levels: `v -> (v - lo) / (hi - lo)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scale {
    pub lo: f64,
    pub hi: f64,
}

impl Scale {
    /// The min-max range of `v`, widened to unit width when constant.
    pub fn min_max(v: ArrayView2<'_, f64>) -> Scale {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) || hi - lo < 1e-12 {
            let lo = if lo.is_finite() { lo } else { 0.0 };
            Scale { lo, hi: lo + 1.0 }
        } else {
            Scale { lo, hi }
        }
    }

    fn level(&self, v: f64) -> u8 {
        (((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Tiles laid out row by row, each drawn with its own scale.
pub fn write_grid(path: &Path, rows: &[Vec<(ArrayView2<'_, f64>, Scale)>]) -> CliResult<()> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let (th, tw) = rows
        .iter()
        .flatten()
        .map(|(t, _)| (t.nrows() as u32, t.ncols() as u32))
        .fold((1, 1), |(h, w), (a, b)| (h.max(a), w.max(b)));
    let cell = |n: u32, t: u32| n * t * ZOOM + (n + 1) * GAP;
    let mut img = GrayImage::from_pixel(cell(cols, tw), cell(rows.len() as u32, th), Luma([96]));
    for (r, row) in rows.iter().enumerate() {
        for (c, (tile, scale)) in row.iter().enumerate() {
            let oy = GAP + r as u32 * (th * ZOOM + GAP);
            let ox = GAP + c as u32 * (tw * ZOOM + GAP);
            for ((y, x), v) in tile.indexed_iter() {
                let level = Luma([scale.level(*v)]);
                for dy in 0..ZOOM {
                    for dx in 0..ZOOM {
                        img.put_pixel(ox + x as u32 * ZOOM + dx, oy + y as u32 * ZOOM + dy, level);
                    }
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

/// Diverging blue-white-red heatmap of a matrix with values in [-1, 1].
pub fn write_heatmap(path: &Path, m: &Array2<f64>) -> CliResult<()> {
    const CELL: u32 = 16;
    let (rows, cols) = (m.nrows() as u32, m.ncols() as u32);
    let mut img = RgbImage::new(cols.max(1) * CELL, rows.max(1) * CELL);
    for ((r, c), v) in m.indexed_iter() {
        let t = v.clamp(-1.0, 1.0);
        let fade = |a: f64| (255.0 * (1.0 - a)).round() as u8;
        let color = if t >= 0.0 {
            Rgb([255, fade(t), fade(t)])
        } else {
            Rgb([fade(-t), fade(-t), 255])
        };
        for dy in 0..CELL {
            for dx in 0..CELL {
                img.put_pixel(c as u32 * CELL + dx, r as u32 * CELL + dy, color);
            }
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Appends provenance fields to a JSON object.
pub fn with_provenance(mut record: Map<String, Value>, provenance: &Map<String, Value>) -> Value {
    for (k, v) in provenance {
        record.insert(k.clone(), v.clone());
    }
    Value::Object(record)
}

pub fn write_jsonl(path: &Path, records: &[Value]) -> CliResult<()> {
    let mut f = fs::File::create(path)?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Comma-separated rows under a header; fields are written verbatim after
/// `preamble` (comment lines).
pub fn write_csv(path: &Path, preamble: &str, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut text = preamble.to_string();
    text.push_str(&header.join(","));
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

/// Quotes a CSV field when it contains a separator, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
