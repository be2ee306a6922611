use super::{CoilSensitivities, ComplexImage};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Normalized pixel coordinate in `[-1, 1)`.
fn coord(i: usize, n: usize) -> f64 {
    2.0 * i as f64 / n as f64 - 1.0
}

/// Random-ellipse phantom with a smooth random phase.
///
/// Magnitudes are sums of ellipse intensities, each drawn from `[0, 1]`.
pub fn make_phantom(height: usize, width: usize, num_ellipses: usize, seed: u64) -> Result<ComplexImage> {
    if height < 8 || width < 8 {
        return Err(Error::invalid("phantom dimensions must be >= 8"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ellipses: Vec<Ellipse> = (0..num_ellipses)
        .map(|_| Ellipse {
            cx: rng.random_range(-0.5..0.5),
            cy: rng.random_range(-0.5..0.5),
            a: rng.random_range(0.1..0.6),
            b: rng.random_range(0.1..0.6),
            angle: rng.random_range(0.0..PI),
            intensity: rng.random_range(0.0..=1.0),
        })
        .collect();
    // phase = p0 + p1 x + p2 y + p3 x y, a low-order smooth field
    let p: [f64; 4] = std::array::from_fn(|_| rng.random_range(-0.5 * PI..0.5 * PI));

    let mut data = Vec::with_capacity(height * width);
    for r in 0..height {
        let y = coord(r, height);
        for c in 0..width {
            let x = coord(c, width);
            let mag: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum();
            let phase = p[0] + p[1] * x + p[2] * y + p[3] * x * y;
            data.push(Complex64::from_polar(mag, phase));
        }
    }
    ComplexImage::new(height, width, data)
}

/// Smooth coil profiles: Gaussian magnitude centered per coil on a ring
/// around the field of view, linear phase, normalized so that
/// `sum_c |s_c|^2 = 1` at every pixel.
pub fn make_smooth_sensitivities(
    height: usize,
    width: usize,
    num_coils: usize,
    seed: u64,
) -> Result<CoilSensitivities> {
    if num_coils == 0 {
        return Err(Error::invalid("num_coils must be >= 1"));
    }
    if height == 0 || width == 0 {
        return Err(Error::dim("sensitivity dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.random_range(0.0..2.0 * PI);
    let n = height * width;
    let mut maps = vec![Complex64::new(0.0, 0.0); num_coils * n];
    for coil in 0..num_coils {
        let theta = offset + 2.0 * PI * coil as f64 / num_coils as f64;
        let (cx, cy) = (0.8 * theta.cos(), 0.8 * theta.sin());
        let sigma: f64 = rng.random_range(0.6..1.0);
        let kx: f64 = rng.random_range(-1.0..1.0);
        let ky: f64 = rng.random_range(-1.0..1.0);
        let p0: f64 = rng.random_range(-PI..PI);
        for r in 0..height {
            let y = coord(r, height);
            for c in 0..width {
                let x = coord(c, width);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp();
                maps[coil * n + r * width + c] = Complex64::from_polar(mag, p0 + kx * x + ky * y);
            }
        }
    }
    for i in 0..n {
        let energy: f64 = (0..num_coils).map(|c| maps[c * n + i].norm_sqr()).sum();
        let inv = 1.0 / energy.sqrt();
        for c in 0..num_coils {
            maps[c * n + i] *= inv;
        }
    }
    CoilSensitivities::new(num_coils, height, width, maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ellipses_is_zero_image() {
        let img = make_phantom(16, 16, 0, 3).unwrap();
        assert!(img.as_slice().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn phantom_is_deterministic() {
        let a = make_phantom(32, 24, 6, 11).unwrap();
        let b = make_phantom(32, 24, 6, 11).unwrap();
        assert_eq!(a, b);
        let c = make_phantom(32, 24, 6, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn phantom_peak_bounded_by_intensity_sum() {
        for seed in 0..20 {
            let n = 1 + (seed as usize % 7);
            let img = make_phantom(16, 16, n, seed).unwrap();
            // regenerate the intensity draws in the same order
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut total = 0.0;
            for _ in 0..n {
                let _: f64 = rng.random_range(-0.5..0.5);
                let _: f64 = rng.random_range(-0.5..0.5);
                let _: f64 = rng.random_range(0.1..0.6);
                let _: f64 = rng.random_range(0.1..0.6);
                let _: f64 = rng.random_range(0.0..PI);
                let i: f64 = rng.random_range(0.0..=1.0);
                assert!((0.0..=1.0).contains(&i));
                total += i;
            }
            let peak = img.magnitude().into_iter().fold(0.0, f64::max);
            assert!(peak <= total + 1e-12, "seed {seed}: {peak} > {total}");
        }
    }

    #[test]
    fn small_phantom_rejected() {
        assert!(make_phantom(4, 16, 1, 0).is_err());
    }

    #[test]
    fn sensitivities_are_normalized() {
        for coils in [1usize, 2, 4, 8] {
            let s = make_smooth_sensitivities(16, 20, coils, 5).unwrap();
            let dev = s.energy().into_iter().map(|e| (e - 1.0).abs()).fold(0.0, f64::max);
            assert!(dev <= 1e-12, "coils={coils}: deviation {dev}");
        }
        let one = make_smooth_sensitivities(8, 8, 1, 0).unwrap();
        assert!(one.as_slice().iter().all(|s| (s.norm() - 1.0).abs() < 1e-12));
    }
}
