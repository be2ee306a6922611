//! Forward model `y = M F S x + n`: complex images, k-space samples,
//! Cartesian sampling masks, coil sensitivities and the encoding operator.

mod encoding;
mod fft;
mod mask;
mod phantom;

pub use encoding::{add_noise, DenseOperator, EncodingOperator, MeasurementOperator};
pub use fft::CenteredFft2;
pub use mask::{make_equispaced_mask, make_random_mask, SamplingMask};
pub use phantom::{make_phantom, make_smooth_sensitivities};

use crate::{Error, Result};
use num_complex::Complex64;

/// A 2-D complex image stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("image dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "image {height}x{width} needs {} samples, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Numerical("image contains non-finite samples".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Planar real view: channel 0 holds the real parts, channel 1 the
    /// imaginary parts.
    pub fn to_planar(&self) -> Vec<f64> {
        to_planar(&self.data)
    }

    pub fn from_planar(height: usize, width: usize, planar: &[f64]) -> Result<Self> {
        if planar.len() != 2 * height * width {
            return Err(Error::dim(format!(
                "planar buffer of length {} does not hold a 2x{height}x{width} image",
                planar.len()
            )));
        }
        Self::new(height, width, from_planar(planar))
    }

    /// Centered `size x size` crop. Sizes larger than the image are clamped.
    pub fn center_crop(&self, size: usize) -> Self {
        let h = size.min(self.height);
        let w = size.min(self.width);
        let r0 = (self.height - h) / 2;
        let c0 = (self.width - w) / 2;
        let mut data = Vec::with_capacity(h * w);
        for r in r0..r0 + h {
            data.extend_from_slice(&self.data[r * self.width + c0..r * self.width + c0 + w]);
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }
}

/// Multi-coil k-space samples indexed `(coil, row, column)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    coils: usize,
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl KSpaceData {
    pub fn new(coils: usize, height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if coils == 0 || height == 0 || width == 0 {
            return Err(Error::dim("k-space dimensions must be positive"));
        }
        if data.len() != coils * height * width {
            return Err(Error::dim(format!(
                "k-space {coils}x{height}x{width} needs {} samples, got {}",
                coils * height * width,
                data.len()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Numerical("k-space contains non-finite samples".into()));
        }
        Ok(Self {
            coils,
            height,
            width,
            data,
        })
    }

    pub fn zeros(coils: usize, height: usize, width: usize) -> Self {
        Self {
            coils,
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); coils * height * width],
        }
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }
}

/// Per-receiver complex sensitivity maps indexed `(coil, row, column)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities {
    coils: usize,
    height: usize,
    width: usize,
    maps: Vec<Complex64>,
}

impl CoilSensitivities {
    pub fn new(coils: usize, height: usize, width: usize, maps: Vec<Complex64>) -> Result<Self> {
        if coils == 0 || height == 0 || width == 0 {
            return Err(Error::dim("sensitivity dimensions must be positive"));
        }
        if maps.len() != coils * height * width {
            return Err(Error::dim(format!(
                "sensitivities {coils}x{height}x{width} need {} samples, got {}",
                coils * height * width,
                maps.len()
            )));
        }
        if maps.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Numerical("sensitivities contain non-finite values".into()));
        }
        Ok(Self {
            coils,
            height,
            width,
            maps,
        })
    }

    /// A single coil with unit sensitivity everywhere.
    pub fn uniform(height: usize, width: usize) -> Self {
        Self {
            coils: 1,
            height,
            width,
            maps: vec![Complex64::new(1.0, 0.0); height * width],
        }
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.maps
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        let n = self.height * self.width;
        &self.maps[c * n..(c + 1) * n]
    }

    /// Pixelwise `sum_c |s_c|^2`.
    pub fn energy(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = vec![0.0; n];
        for c in 0..self.coils {
            for (o, s) in out.iter_mut().zip(self.coil(c)) {
                *o += s.norm_sqr();
            }
        }
        out
    }
}

/// Conjugate-linear in the first argument.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn to_planar(data: &[Complex64]) -> Vec<f64> {
    let n = data.len();
    let mut out = vec![0.0; 2 * n];
    for (i, c) in data.iter().enumerate() {
        out[i] = c.re;
        out[n + i] = c.im;
    }
    out
}

pub fn from_planar(planar: &[f64]) -> Vec<Complex64> {
    let n = planar.len() / 2;
    (0..n).map(|i| Complex64::new(planar[i], planar[n + i])).collect()
}
