//! Image and table export for human inspection.

use crate::metrics::{mean_std, MetricReport};
use crate::signal::ComplexImage;
use crate::{Error, Result};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Map magnitudes to 8-bit gray levels. Values at or above `window` (the
/// image maximum by default) saturate to 255.
pub fn magnitude_to_u8(values: &[f64], window: Option<f64>) -> Vec<u8> {
    let peak = window.unwrap_or_else(|| values.iter().cloned().fold(0.0, f64::max));
    values
        .iter()
        .map(|&v| {
            if peak > 0.0 {
                (255.0 * (v / peak).clamp(0.0, 1.0)).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn write_gray_png(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let png_err = |e: png::EncodingError| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(pixels).map_err(png_err)?;
    Ok(())
}

/// Magnitude PNG of a complex image.
pub fn write_magnitude_png(path: impl AsRef<Path>, img: &ComplexImage, window: Option<f64>) -> Result<()> {
    let px = magnitude_to_u8(&img.magnitude(), window);
    write_gray_png(path, img.width(), img.height(), &px)
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

/// Per-slice metrics followed by `mean` and `std` rows.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = crate::vamp::csv_err;
    w.write_record(["slice", "psnr_db", "ssim", "nmse"]).map_err(err)?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([i.to_string(), fmt_f64(r.psnr_db), fmt_f64(r.ssim), fmt_f64(r.nmse)])
            .map_err(err)?;
    }
    let cols: [Vec<f64>; 3] = [
        rows.iter().map(|r| r.psnr_db).collect(),
        rows.iter().map(|r| r.ssim).collect(),
        rows.iter().map(|r| r.nmse).collect(),
    ];
    let stats: Vec<(f64, f64)> = cols.iter().map(|c| mean_std(c)).collect();
    w.write_record([
        "mean".to_string(),
        fmt_f64(stats[0].0),
        fmt_f64(stats[1].0),
        fmt_f64(stats[2].0),
    ])
    .map_err(err)?;
    w.write_record([
        "std".to_string(),
        fmt_f64(stats[0].1),
        fmt_f64(stats[1].1),
        fmt_f64(stats[2].1),
    ])
    .map_err(err)?;
    w.flush()?;
    Ok(())
}

pub fn write_loss_csv<W: Write>(out: W, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = crate::vamp::csv_err;
    w.write_record(["epoch", "loss"]).map_err(err)?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), fmt_f64(*l)]).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
