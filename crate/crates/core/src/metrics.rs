//! Image-quality metrics. PSNR and SSIM compare magnitude images; NMSE
//! compares complex images directly.

use crate::signal::ComplexImage;
use crate::{Error, Result};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    /// `+inf` when the images are identical.
    pub psnr_db: f64,
    pub ssim: f64,
    pub nmse: f64,
}

impl MetricReport {
    /// All three metrics with the reference magnitude maximum as data range.
    pub fn compute(reference: &ComplexImage, test: &ComplexImage) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(reference, test, None)?,
            ssim: ssim(reference, test, &SsimOptions::default())?,
            nmse: nmse(reference, test)?,
        })
    }
}

fn same_shape(a: &ComplexImage, b: &ComplexImage) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::dim(format!(
            "images differ in shape: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// PSNR between two real images of equal length.
pub fn psnr_real(reference: &[f64], test: &[f64], data_max: f64) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::dim("images differ in length"));
    }
    if !(data_max > 0.0) || !data_max.is_finite() {
        return Err(Error::invalid(format!("data_max must be positive, got {data_max}")));
    }
    let mse = reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_max * data_max / mse).log10())
}

/// PSNR over magnitudes. `data_max` defaults to `max |reference|`.
pub fn psnr(reference: &ComplexImage, test: &ComplexImage, data_max: Option<f64>) -> Result<f64> {
    same_shape(reference, test)?;
    let r = reference.magnitude();
    let peak = data_max.unwrap_or_else(|| max_of(&r));
    psnr_real(&r, &test.magnitude(), peak)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimOptions {
    pub k1: f64,
    pub k2: f64,
    pub window: usize,
    pub sigma: f64,
    /// Defaults to the reference maximum.
    pub data_range: Option<f64>,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            window: 11,
            sigma: 1.5,
            data_range: None,
        }
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Separable "valid" filtering of an `h x w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().enumerate().map(|(j, t)| t * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(j, t)| t * rows[(y + j) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two real `h x w` images over all window positions that fit
/// inside the image.
pub fn ssim_real(reference: &[f64], test: &[f64], h: usize, w: usize, opts: &SsimOptions) -> Result<f64> {
    if reference.len() != h * w || test.len() != h * w {
        return Err(Error::dim("image buffers do not match the given shape"));
    }
    if opts.window == 0 || h < opts.window || w < opts.window {
        return Err(Error::dim(format!(
            "SSIM needs images of at least {0}x{0}, got {h}x{w}",
            opts.window
        )));
    }
    let range = opts.data_range.unwrap_or_else(|| max_of(reference));
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::invalid(format!("SSIM data range must be positive, got {range}")));
    }
    let taps = gaussian_taps(opts.window, opts.sigma);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let mx = filter_valid(reference, h, w, &taps);
    let my = filter_valid(test, h, w, &taps);
    let mxx = filter_valid(&prod(reference, reference), h, w, &taps);
    let myy = filter_valid(&prod(test, test), h, w, &taps);
    let mxy = filter_valid(&prod(reference, test), h, w, &taps);
    let c1 = (opts.k1 * range).powi(2);
    let c2 = (opts.k2 * range).powi(2);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// SSIM over magnitude images.
pub fn ssim(reference: &ComplexImage, test: &ComplexImage, opts: &SsimOptions) -> Result<f64> {
    same_shape(reference, test)?;
    if reference == test {
        return Ok(1.0);
    }
    ssim_real(
        &reference.magnitude(),
        &test.magnitude(),
        reference.height(),
        reference.width(),
        opts,
    )
}

/// `||test - reference||^2 / ||reference||^2` on complex values.
pub fn nmse(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    same_shape(reference, test)?;
    let denom = reference.norm().powi(2);
    if denom == 0.0 {
        return Err(Error::invalid("nmse reference has zero norm"));
    }
    let err: f64 = reference
        .as_slice()
        .iter()
        .zip(test.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(err / denom)
}

/// Mean and sample standard deviation, skipping nothing; infinities
/// propagate.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
