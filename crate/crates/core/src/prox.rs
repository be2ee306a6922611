//! Analytic proximal operators with closed-form divergences.
//!
//! Divergences follow the real-vector convention: a map `C^N -> C^N` is
//! viewed as `R^{2N} -> R^{2N}` and its Jacobian trace is averaged over the
//! `2N` real coordinates. Under this convention the identity has divergence
//! 1 and a linear gain `g` has divergence `g`.

use crate::{Error, Result};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A denoiser `u -> prox(u)` evaluated at a given noise precision, together
/// with its normalized divergence.
pub trait Denoiser {
    fn denoise(&self, u: &[Complex64], noise_precision: f64) -> Result<Vec<Complex64>>;
    fn divergence(&self, u: &[Complex64], noise_precision: f64) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticProx {
    /// Complex magnitude shrinkage `u max(0, 1 - theta/|u|)`.
    SoftThreshold {
        theta: f64,
    },
    /// Linear MMSE estimator for a Gaussian prior with variance `1/gamma`.
    Tikhonov {
        gamma: f64,
    },
    Identity,
}

impl AnalyticProx {
    pub fn soft_threshold(theta: f64) -> Result<Self> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::invalid(format!("threshold {theta} must be finite and >= 0")));
        }
        Ok(AnalyticProx::SoftThreshold { theta })
    }

    pub fn tikhonov(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!(
                "tikhonov weight {gamma} must be finite and >= 0"
            )));
        }
        Ok(AnalyticProx::Tikhonov { gamma })
    }

    /// Gain of the Tikhonov estimator, `mu sigma^2 / (mu sigma^2 + 1)` with
    /// `sigma^2 = 1/gamma`.
    fn tikhonov_gain(gamma: f64, noise_precision: f64) -> f64 {
        noise_precision / (noise_precision + gamma)
    }

    fn check_precision(&self, noise_precision: f64) -> Result<()> {
        match self {
            AnalyticProx::Tikhonov { .. } if !(noise_precision > 0.0) => {
                Err(Error::invalid(format!("noise precision {noise_precision} must be > 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, u: &[Complex64], noise_precision: f64) -> Result<Vec<Complex64>> {
        self.check_precision(noise_precision)?;
        Ok(match *self {
            AnalyticProx::SoftThreshold { theta } => u
                .iter()
                .map(|&v| {
                    let mag = v.norm();
                    if mag > theta {
                        v * (1.0 - theta / mag)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect(),
            AnalyticProx::Tikhonov { gamma } => {
                let g = Self::tikhonov_gain(gamma, noise_precision);
                u.iter().map(|v| v * g).collect()
            }
            AnalyticProx::Identity => u.to_vec(),
        })
    }

    pub fn divergence(&self, u: &[Complex64], noise_precision: f64) -> Result<f64> {
        self.check_precision(noise_precision)?;
        if u.is_empty() {
            return Err(Error::invalid("divergence of an empty vector"));
        }
        Ok(match *self {
            // Per complex entry the 2x2 Jacobian trace is 2 - theta/|u| above
            // the threshold (radial slope 1, tangential 1 - theta/|u|).
            AnalyticProx::SoftThreshold { theta } => {
                let total: f64 = u
                    .iter()
                    .map(|v| v.norm())
                    .filter(|&m| m > theta)
                    .map(|m| 2.0 - theta / m)
                    .sum();
                total / (2 * u.len()) as f64
            }
            AnalyticProx::Tikhonov { gamma } => Self::tikhonov_gain(gamma, noise_precision),
            AnalyticProx::Identity => 1.0,
        })
    }
}

impl Denoiser for AnalyticProx {
    fn denoise(&self, u: &[Complex64], noise_precision: f64) -> Result<Vec<Complex64>> {
        self.apply(u, noise_precision)
    }

    fn divergence(&self, u: &[Complex64], noise_precision: f64) -> Result<f64> {
        AnalyticProx::divergence(self, u, noise_precision)
    }
}

/// Monte Carlo divergence `(1/2N) <eta, (f(u + eps eta) - f(u)) / eps>` with a
/// Rademacher probe on every real and imaginary coordinate.
pub fn mc_divergence_fn<F>(f: F, u: &[Complex64], epsilon: f64, seed: u64) -> Result<f64>
where
    F: Fn(&[Complex64]) -> Result<Vec<Complex64>>,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} must be > 0")));
    }
    if u.is_empty() {
        return Err(Error::invalid("divergence of an empty vector"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sign = || if rng.random::<bool>() { 1.0 } else { -1.0 };
    let eta: Vec<Complex64> = u.iter().map(|_| Complex64::new(sign(), sign())).collect();
    let shifted: Vec<Complex64> = u.iter().zip(&eta).map(|(a, e)| a + e * epsilon).collect();
    let base = f(u)?;
    let moved = f(&shifted)?;
    if base.len() != u.len() || moved.len() != u.len() {
        return Err(Error::dim("denoiser changed the vector length"));
    }
    let acc: f64 = eta
        .iter()
        .zip(moved.iter().zip(&base))
        .map(|(e, (m, b))| {
            let d = (m - b) / epsilon;
            e.re * d.re + e.im * d.im
        })
        .sum();
    Ok(acc / (2 * u.len()) as f64)
}

/// [`mc_divergence_fn`] applied to a [`Denoiser`] at a fixed noise precision.
pub fn mc_divergence(p: &dyn Denoiser, u: &[Complex64], noise_precision: f64, epsilon: f64, seed: u64) -> Result<f64> {
    mc_divergence_fn(|v| p.denoise(v, noise_precision), u, epsilon, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::random_complex;
    use proptest::prelude::*;

    fn real(v: &[f64]) -> Vec<Complex64> {
        v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn soft_threshold_values() {
        let p = AnalyticProx::soft_threshold(1.0).unwrap();
        let out = p.apply(&real(&[3.0, -0.5]), 1.0).unwrap();
        assert_eq!(out[0], Complex64::new(2.0, 0.0));
        assert_eq!(out[1], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn identity_and_tikhonov_values() {
        let u = random_complex(8, 1);
        assert_eq!(AnalyticProx::Identity.apply(&u, 1.0).unwrap(), u);
        let half = AnalyticProx::tikhonov(1.0).unwrap().apply(&u, 1.0).unwrap();
        for (a, b) in half.iter().zip(&u) {
            assert!((a - b / 2.0).norm() < 1e-15);
        }
        assert_eq!(AnalyticProx::Identity.divergence(&u, 3.0).unwrap(), 1.0);
        assert_eq!(AnalyticProx::tikhonov(1.0).unwrap().divergence(&u, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(AnalyticProx::soft_threshold(-1.0).is_err());
        assert!(AnalyticProx::tikhonov(f64::NAN).is_err());
        let p = AnalyticProx::tikhonov(1.0).unwrap();
        assert!(p.apply(&[Complex64::new(1.0, 0.0)], 0.0).is_err());
        assert!(mc_divergence(&p, &[Complex64::new(1.0, 0.0)], 1.0, 0.0, 0).is_err());
    }

    /// Central finite differences of the real Jacobian diagonal.
    fn fd_jacobian_diag(p: &AnalyticProx, u: &[Complex64], h: f64) -> (Vec<f64>, Vec<f64>) {
        let mut re_diag = Vec::new();
        let mut im_diag = Vec::new();
        for i in 0..u.len() {
            for (imag, store) in [(false, &mut re_diag), (true, &mut im_diag)] {
                let step = if imag {
                    Complex64::new(0.0, h)
                } else {
                    Complex64::new(h, 0.0)
                };
                let mut plus = u.to_vec();
                let mut minus = u.to_vec();
                plus[i] += step;
                minus[i] -= step;
                let fp = p.apply(&plus, 1.0).unwrap()[i];
                let fm = p.apply(&minus, 1.0).unwrap()[i];
                let d = (fp - fm) / (2.0 * h);
                store.push(if imag { d.im } else { d.re });
            }
        }
        (re_diag, im_diag)
    }

    #[test]
    fn soft_threshold_divergence_matches_finite_differences() {
        let p = AnalyticProx::soft_threshold(1.0).unwrap();
        let u = real(&[3.0, -0.5, 2.0]);
        let (re_diag, im_diag) = fd_jacobian_diag(&p, &u, 1e-6);
        // Along the real axis only the survivor count matters: 2 of 3.
        let real_only: f64 = re_diag.iter().sum::<f64>() / 3.0;
        assert!((real_only - 2.0 / 3.0).abs() < 1e-8);
        // The full real-coordinate average also includes the tangential slopes.
        let full = (re_diag.iter().sum::<f64>() + im_diag.iter().sum::<f64>()) / 6.0;
        let closed = p.divergence(&u, 1.0).unwrap();
        assert!((closed - 19.0 / 36.0).abs() < 1e-15);
        assert!((full - closed).abs() < 1e-8, "fd {full} vs closed {closed}");
    }

    #[test]
    fn mc_divergence_identity_and_tikhonov() {
        let u = random_complex(4096, 2);
        for eps in [1e-6, 1e-3, 1.0] {
            let d = mc_divergence(&AnalyticProx::Identity, &u, 1.0, eps, 3).unwrap();
            assert!((d - 1.0).abs() < 1e-9, "eps {eps}: {d}");
        }
        let d = mc_divergence(&AnalyticProx::tikhonov(1.0).unwrap(), &u, 1.0, 1e-3, 4).unwrap();
        assert!((d - 0.5).abs() <= 0.01);
    }

    #[test]
    fn mc_divergence_soft_threshold() {
        let u: Vec<Complex64> = random_complex(4096, 5).into_iter().map(|v| v * 2.0).collect();
        let p = AnalyticProx::soft_threshold(0.8).unwrap();
        let mc = mc_divergence(&p, &u, 1.0, 1e-4, 6).unwrap();
        let closed = p.divergence(&u, 1.0).unwrap();
        assert!((mc - closed).abs() <= 0.03 * closed, "mc {mc} closed {closed}");
    }

    #[test]
    fn mc_converges_to_closed_form() {
        let p = AnalyticProx::soft_threshold(0.5).unwrap();
        let mut errs = Vec::new();
        for &n in &[64usize, 16384] {
            let u = random_complex(n, 9);
            let closed = p.divergence(&u, 1.0).unwrap();
            let mean_abs: f64 = (0..20)
                .map(|s| (mc_divergence(&p, &u, 1.0, 1e-5, s).unwrap() - closed).abs())
                .sum::<f64>()
                / 20.0;
            errs.push(mean_abs);
        }
        assert!(errs[1] < errs[0] / 4.0, "{errs:?}");
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), n)
            .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
    }

    proptest! {
        #[test]
        fn non_expansive_and_bounded_divergence(
            u in arb_vec(12), v in arb_vec(12), theta in 0.0f64..3.0, gamma in 0.0f64..5.0, prec in 0.01f64..10.0
        ) {
            let dist = |a: &[Complex64], b: &[Complex64]| -> f64 {
                a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
            };
            for p in [AnalyticProx::SoftThreshold { theta }, AnalyticProx::Tikhonov { gamma }, AnalyticProx::Identity] {
                let pu = p.apply(&u, prec).unwrap();
                let pv = p.apply(&v, prec).unwrap();
                prop_assert!(dist(&pu, &pv) <= dist(&u, &v) * (1.0 + 1e-12) + 1e-12);
                let d = p.divergence(&u, prec).unwrap();
                prop_assert!((0.0..=1.0).contains(&d));
            }
        }
    }
}
