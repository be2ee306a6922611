use super::{CenteredFft2, CoilSensitivities, ComplexImage, KSpaceData, SamplingMask};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;

/// A linear measurement operator `E: C^N -> C^M` on flattened vectors.
pub trait MeasurementOperator: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64>;
    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64>;

    /// `E^H E x`.
    fn normal(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.apply_adjoint(&self.apply(x))
    }
}

/// Multi-coil undersampled Fourier encoding `E = M F S` with a unitary
/// centered FFT.
#[derive(Clone, Debug)]
pub struct EncodingOperator {
    mask: SamplingMask,
    sens: CoilSensitivities,
    fft: Arc<CenteredFft2>,
}

impl EncodingOperator {
    pub fn new(mask: SamplingMask, sens: CoilSensitivities) -> Result<Self> {
        if mask.rows() != sens.height() || mask.cols() != sens.width() {
            return Err(Error::dim(format!(
                "mask {}x{} does not match sensitivities {}x{}",
                mask.rows(),
                mask.cols(),
                sens.height(),
                sens.width()
            )));
        }
        let fft = Arc::new(CenteredFft2::new(sens.height(), sens.width()));
        Ok(Self { mask, sens, fft })
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn sensitivities(&self) -> &CoilSensitivities {
        &self.sens
    }

    pub fn height(&self) -> usize {
        self.sens.height()
    }

    pub fn width(&self) -> usize {
        self.sens.width()
    }

    pub fn coils(&self) -> usize {
        self.sens.coils()
    }

    pub fn forward(&self, x: &ComplexImage) -> Result<KSpaceData> {
        if x.height() != self.height() || x.width() != self.width() {
            return Err(Error::dim(format!(
                "image {}x{} does not match operator {}x{}",
                x.height(),
                x.width(),
                self.height(),
                self.width()
            )));
        }
        KSpaceData::new(self.coils(), self.height(), self.width(), self.apply(x.as_slice()))
    }

    pub fn adjoint(&self, y: &KSpaceData) -> Result<ComplexImage> {
        if y.coils() != self.coils() || y.height() != self.height() || y.width() != self.width() {
            return Err(Error::dim(format!(
                "k-space {}x{}x{} does not match operator {}x{}x{}",
                y.coils(),
                y.height(),
                y.width(),
                self.coils(),
                self.height(),
                self.width()
            )));
        }
        ComplexImage::new(self.height(), self.width(), self.apply_adjoint(y.as_slice()))
    }

    fn apply_mask(&self, coil_data: &mut [Complex64]) {
        for (v, &m) in coil_data.iter_mut().zip(self.mask.pattern()) {
            if !m {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
}

impl MeasurementOperator for EncodingOperator {
    fn input_dim(&self) -> usize {
        self.height() * self.width()
    }

    fn output_dim(&self) -> usize {
        self.coils() * self.height() * self.width()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.input_dim();
        assert_eq!(x.len(), n, "encoding input length");
        let mut out = vec![Complex64::new(0.0, 0.0); self.output_dim()];
        for c in 0..self.coils() {
            let dst = &mut out[c * n..(c + 1) * n];
            for ((d, s), v) in dst.iter_mut().zip(self.sens.coil(c)).zip(x) {
                *d = s * v;
            }
            self.fft.forward(dst);
            self.apply_mask(dst);
        }
        out
    }

    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let n = self.input_dim();
        assert_eq!(y.len(), self.output_dim(), "encoding adjoint input length");
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..self.coils() {
            buf.copy_from_slice(&y[c * n..(c + 1) * n]);
            self.apply_mask(&mut buf);
            self.fft.inverse(&mut buf);
            for ((o, s), v) in out.iter_mut().zip(self.sens.coil(c)).zip(&buf) {
                *o += s.conj() * v;
            }
        }
        out
    }
}

/// Row-major dense complex matrix used as a generic measurement operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "dense operator {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        Self { rows: n, cols: n, data }
    }

    /// I.i.d. circular complex Gaussian entries with variance `1/rows`, so
    /// columns have unit expected norm.
    pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = (0.5 / rows as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("valid std");
        let data = (0..rows * cols)
            .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

impl MeasurementOperator for DenseOperator {
    fn input_dim(&self) -> usize {
        self.cols
    }

    fn output_dim(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![Complex64::new(0.0, 0.0); self.cols];
        for (row, yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * yi;
            }
        }
        out
    }
}

/// Adds i.i.d. circular Gaussian noise (std `sigma` per real/imag part) at
/// sampled locations only.
pub fn add_noise(y: &KSpaceData, mask: &SamplingMask, sigma: f64, seed: u64) -> Result<KSpaceData> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    if mask.rows() != y.height() || mask.cols() != y.width() {
        return Err(Error::dim("mask does not match k-space"));
    }
    let mut out = y.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = y.height() * y.width();
    for c in 0..y.coils() {
        let coil = &mut out.as_mut_slice()[c * n..(c + 1) * n];
        for (v, &m) in coil.iter_mut().zip(mask.pattern()) {
            if m {
                *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
        }
    }
    Ok(out)
}
