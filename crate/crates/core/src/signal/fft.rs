use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::fmt;
use std::sync::Arc;

/// Unitary, centered 2-D DFT: `fftshift(fft2(ifftshift(x))) / sqrt(HW)`.
///
/// The DC component sits at `(H/2, W/2)`, so a centered band of columns
/// holds the low phase-encode frequencies.
#[derive(Clone)]
pub struct CenteredFft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl fmt::Debug for CenteredFft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CenteredFft2")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl CenteredFft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
            scale: 1.0 / ((height * width) as f64).sqrt(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let (h, w) = (self.height, self.width);
        assert_eq!(data.len(), h * w, "buffer does not match transform size");

        // Pre-shift: ifftshift moves the center sample to index 0.
        let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
        let (sh_r, sh_c) = (h.div_ceil(2), w.div_ceil(2));
        for r in 0..h {
            let dst_r = (r + sh_r) % h;
            for c in 0..w {
                buf[dst_r * w + (c + sh_c) % w] = data[r * w + c];
            }
        }

        let (rows, cols) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); rows.get_inplace_scratch_len().max(cols.get_inplace_scratch_len())];
        rows.process_with_scratch(&mut buf, &mut scratch);

        let mut tr = vec![Complex64::new(0.0, 0.0); h * w];
        for r in 0..h {
            for c in 0..w {
                tr[c * h + r] = buf[r * w + c];
            }
        }
        cols.process_with_scratch(&mut tr, &mut scratch);

        // Post-shift (fftshift) fused with the transpose back and scaling.
        let (po_r, po_c) = (h / 2, w / 2);
        for c in 0..w {
            let dst_c = (c + po_c) % w;
            for r in 0..h {
                data[((r + po_r) % h) * w + dst_c] = tr[c * h + r] * self.scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_centered_dft(x: &[Complex64], h: usize, w: usize, sign: f64) -> Vec<Complex64> {
        // k and n both range over centered indices -N/2..
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        let scale = 1.0 / ((h * w) as f64).sqrt();
        for kr in 0..h {
            for kc in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for nr in 0..h {
                    for nc in 0..w {
                        let fr = (kr as f64 - (h / 2) as f64) * (nr as f64 - (h / 2) as f64) / h as f64;
                        let fc = (kc as f64 - (w / 2) as f64) * (nc as f64 - (w / 2) as f64) / w as f64;
                        let ph = sign * 2.0 * std::f64::consts::PI * (fr + fc);
                        acc += x[nr * w + nc] * Complex64::new(ph.cos(), ph.sin());
                    }
                }
                out[kr * w + kc] = acc * scale;
            }
        }
        out
    }

    #[test]
    fn matches_naive_centered_dft_even_and_odd() {
        for &(h, w) in &[(4usize, 6usize), (5, 3), (8, 8)] {
            let x: Vec<Complex64> = (0..h * w)
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let fft = CenteredFft2::new(h, w);
            let mut y = x.clone();
            fft.forward(&mut y);
            let expect = naive_centered_dft(&x, h, w, -1.0);
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).norm() < 1e-12, "{h}x{w}: {a} vs {b}");
            }
            fft.inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dc_lands_in_center() {
        let fft = CenteredFft2::new(8, 8);
        let mut x = vec![Complex64::new(1.0, 0.0); 64];
        fft.forward(&mut x);
        assert!((x[4 * 8 + 4].re - 8.0).abs() < 1e-12);
        let off: f64 = x
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 36)
            .map(|(_, c)| c.norm())
            .sum();
        assert!(off < 1e-12);
    }
}
