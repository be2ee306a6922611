//! Sinusoidal unroll-index encoding and FiLM modulation.

use super::layers::{Linear, ParamStore, GROUP_NORM_EPS};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// `[sin(t w_0), .., sin(t w_{d/2-1}), cos(t w_0), ..]` with
/// `w_k = period^{-2k/d}`.
pub fn sinusoidal_encode(t: usize, embed_dim: usize, period: f64) -> Result<Vec<f64>> {
    if embed_dim == 0 || embed_dim % 2 != 0 {
        return Err(Error::invalid(format!(
            "embed_dim must be even and positive, got {embed_dim}"
        )));
    }
    if !(period > 0.0) {
        return Err(Error::invalid(format!("period must be positive, got {period}")));
    }
    let half = embed_dim / 2;
    let mut out = vec![0.0; embed_dim];
    for k in 0..half {
        let arg = t as f64 / period.powf(2.0 * k as f64 / embed_dim as f64);
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedConfig {
    pub embed_dim: usize,
    pub period: f64,
    pub hidden: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            period: 10_000.0,
            hidden: 128,
        }
    }
}

/// Encoder followed by `Linear -> SiLU -> Linear`.
#[derive(Clone, Copy, Debug)]
pub struct TimeEmbedder {
    pub config: EmbedConfig,
    lin1: Linear,
    lin2: Linear,
}

impl TimeEmbedder {
    pub fn new(store: &mut ParamStore, name: &str, config: EmbedConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        sinusoidal_encode(0, config.embed_dim, config.period)?;
        if config.hidden == 0 {
            return Err(Error::invalid("time embedding hidden width must be positive"));
        }
        let lin1 = Linear::new(store, &format!("{name}.lin1"), config.embed_dim, config.hidden, rng);
        let lin2 = Linear::new(store, &format!("{name}.lin2"), config.hidden, config.hidden, rng);
        Ok(Self { config, lin1, lin2 })
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], t: usize) -> Result<Var> {
        let enc = sinusoidal_encode(t, self.config.embed_dim, self.config.period)?;
        let e = tape.constant(Tensor::vector(enc));
        let h = self.lin1.forward(tape, p, e);
        let h = tape.silu(h);
        Ok(self.lin2.forward(tape, p, h))
    }
}

/// Per-block heads producing `alpha` and `beta` from the time embedding.
/// Zero-initialized so an untrained head yields `alpha = beta = 0`.
#[derive(Clone, Copy, Debug)]
pub struct FilmHeads {
    alpha: Linear,
    beta: Linear,
}

impl FilmHeads {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, channels: usize) -> Self {
        Self {
            alpha: Linear::zeros(store, &format!("{name}.alpha"), hidden, channels),
            beta: Linear::zeros(store, &format!("{name}.beta"), hidden, channels),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], emb: Var) -> (Var, Var) {
        (self.alpha.forward(tape, p, emb), self.beta.forward(tape, p, emb))
    }
}

fn check_film(tape: &Tape, features: Var, alpha: Var, beta: Var, groups: usize) -> Result<()> {
    let shape = tape.value(features).shape();
    if shape.len() != 3 {
        return Err(Error::dim(format!("features must be [C, H, W], got {shape:?}")));
    }
    let c = shape[0];
    if tape.value(alpha).shape() != [c] || tape.value(beta).shape() != [c] {
        return Err(Error::dim(format!(
            "alpha {:?} / beta {:?} do not match {c} channels",
            tape.value(alpha).shape(),
            tape.value(beta).shape()
        )));
    }
    if groups == 0 || c % groups != 0 {
        return Err(Error::dim(format!(
            "{c} channels are not divisible into {groups} groups"
        )));
    }
    Ok(())
}

/// `alpha * GroupNorm(F) + beta`, broadcast per channel.
pub fn film_modulate(tape: &mut Tape, features: Var, alpha: Var, beta: Var, groups: usize) -> Result<Var> {
    check_film(tape, features, alpha, beta, groups)?;
    let n = tape.group_norm(features, groups, GROUP_NORM_EPS);
    let s = tape.mul_channel(n, alpha);
    Ok(tape.add_channel(s, beta))
}

/// `F + tau * (alpha * GroupNorm(F) + beta)`.
pub fn film_residual_modulate(
    tape: &mut Tape,
    features: Var,
    alpha: Var,
    beta: Var,
    tau: f64,
    groups: usize,
) -> Result<Var> {
    let m = film_modulate(tape, features, alpha, beta, groups)?;
    let m = tape.mul_const(m, tau);
    Ok(tape.add(features, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_zero() {
        assert_eq!(sinusoidal_encode(0, 4, 10_000.0).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn odd_dim_rejected() {
        assert!(sinusoidal_encode(3, 5, 10_000.0).is_err());
    }

    #[test]
    fn every_sine_coordinate_moves_between_t0_and_t1() {
        let a = sinusoidal_encode(0, 32, 10_000.0).unwrap();
        let b = sinusoidal_encode(1, 32, 10_000.0).unwrap();
        for k in 0..16 {
            assert!(a[k] != b[k], "coordinate {k}");
        }
    }

    #[test]
    fn encoding_injective_over_64_steps() {
        let codes: Vec<Vec<f64>> = (0..64).map(|t| sinusoidal_encode(t, 32, 10_000.0).unwrap()).collect();
        for i in 0..64 {
            for j in i + 1..64 {
                let d: f64 = codes[i].iter().zip(&codes[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d > 0.0, "t={i} and t={j} collide");
            }
        }
    }

    fn features(tape: &mut Tape) -> Var {
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| ((i * 37) % 17) as f64 * 0.3 - 2.0).collect();
        tape.constant(Tensor::new(vec![4, 3, 3], data))
    }

    #[test]
    fn unit_alpha_zero_beta_is_group_norm() {
        let mut tape = Tape::new();
        let f = features(&mut tape);
        let a = tape.constant(Tensor::full(vec![4], 1.0));
        let b = tape.constant(Tensor::zeros(vec![4]));
        let h = film_modulate(&mut tape, f, a, b, 2).unwrap();
        let n = tape.group_norm(f, 2, GROUP_NORM_EPS);
        assert_eq!(tape.value(h), tape.value(n));
    }

    #[test]
    fn zero_alpha_gives_beta() {
        let mut tape = Tape::new();
        let f = features(&mut tape);
        let a = tape.constant(Tensor::zeros(vec![4]));
        let b = tape.constant(Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]));
        let h = film_modulate(&mut tape, f, a, b, 2).unwrap();
        for (i, v) in tape.value(h).data().iter().enumerate() {
            assert_eq!(*v, [1.0, -2.0, 0.5, 3.0][i / 9]);
        }
    }

    #[test]
    fn group_statistics_match_reimplementation() {
        let mut tape = Tape::new();
        let f = features(&mut tape);
        let alpha = [1.5, -0.5, 2.0, 0.25];
        let beta = [0.1, 0.2, -0.3, 0.4];
        let a = tape.constant(Tensor::vector(alpha.to_vec()));
        let b = tape.constant(Tensor::vector(beta.to_vec()));
        let h = film_modulate(&mut tape, f, a, b, 2).unwrap();
        let x = tape.value(f).data().to_vec();
        for g in 0..2 {
            let xs = &x[g * 18..(g + 1) * 18];
            let m = xs.iter().sum::<f64>() / 18.0;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 18.0;
            for (i, xv) in xs.iter().enumerate() {
                let c = g * 2 + i / 9;
                let expect = alpha[c] * (xv - m) / (v + GROUP_NORM_EPS).sqrt() + beta[c];
                assert!((tape.value(h).data()[g * 18 + i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let f = features(&mut tape);
        let a = tape.constant(Tensor::zeros(vec![3]));
        let b = tape.constant(Tensor::zeros(vec![4]));
        assert!(film_modulate(&mut tape, f, a, b, 2).is_err());
        let a = tape.constant(Tensor::zeros(vec![4]));
        assert!(film_modulate(&mut tape, f, a, b, 3).is_err());
    }

    #[test]
    fn zero_tau_is_identity() {
        let mut tape = Tape::new();
        let f = features(&mut tape);
        let a = tape.constant(Tensor::full(vec![4], 3.0));
        let b = tape.constant(Tensor::full(vec![4], 1.0));
        let h = film_residual_modulate(&mut tape, f, a, b, 0.0, 2).unwrap();
        assert_eq!(tape.value(h), tape.value(f));
    }

    #[test]
    fn residual_form_matches_primitives() {
        let mut tape = Tape::new();
        let f = features(&mut tape);
        let a = tape.constant(Tensor::full(vec![4], 1.0));
        let b = tape.constant(Tensor::zeros(vec![4]));
        let h = film_residual_modulate(&mut tape, f, a, b, 1.0, 2).unwrap();
        let n = tape.group_norm(f, 2, GROUP_NORM_EPS);
        let expect = tape.add(f, n);
        for (x, y) in tape.value(h).data().iter().zip(tape.value(expect).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_form_is_affine_in_alpha() {
        let mut tape = Tape::new();
        let f = features(&mut tape);
        let b = tape.constant(Tensor::vector(vec![0.3, -0.1, 0.2, 0.0]));
        let a1 = tape.constant(Tensor::vector(vec![0.5, 1.0, -2.0, 0.7]));
        let a2 = tape.constant(Tensor::vector(vec![-1.5, 0.2, 0.9, 1.1]));
        let a12 = tape.add(a1, a2);
        let z = tape.constant(Tensor::zeros(vec![4]));
        let h12 = film_residual_modulate(&mut tape, f, a12, b, 0.7, 2).unwrap();
        let h1 = film_residual_modulate(&mut tape, f, a1, b, 0.7, 2).unwrap();
        let h2 = film_residual_modulate(&mut tape, f, a2, b, 0.7, 2).unwrap();
        let h0 = film_residual_modulate(&mut tape, f, z, b, 0.7, 2).unwrap();
        let d = [h12, h1, h2, h0].map(|v| tape.value(v).data().to_vec());
        for i in 0..d[0].len() {
            assert!((d[0][i] - d[1][i] - d[2][i] + d[3][i]).abs() < 1e-12);
        }
    }
}
