//! Unrolled reconstruction engines.
//!
//! All engines start from `x = r = z = E^H y`, `u = 0` and run `T` outer
//! iterations, each with a fixed-budget CG data-fidelity solve:
//!
//! ```text
//! vsqp   x = CG(E^H E + mu I, E^H y + mu z);       z = prox(x)
//! admm   x = CG(E^H E + mu I, E^H y + mu (z - u)); z = prox(x + u); u += lambda (x - z)
//! alg1   x = CG(E^H E + mu_t I, E^H y + mu_t r);   u = x + rho_t (x - r); r = prox(u, t)
//! ```
//!
//! `vsqp_te` and `admm_te` are `vsqp` and `admm` with a per-unroll `mu_t`
//! and a prox that sees `t`. Every engine returns the last CG output.

use crate::linops::{cg_solve, CgOptions, CgReport, LinearMap};
use crate::nn::{ProxNetwork, Tensor};
use crate::prox::AnalyticProx;
use crate::signal::{norm, ComplexImage, EncodingOperator, KSpaceData, MeasurementOperator};
use crate::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// A (possibly learned) proximal map on images, optionally indexed by the
/// unroll step.
pub trait ProxOperator {
    fn prox(&self, u: &ComplexImage, t: usize) -> Result<ComplexImage>;
}

/// Analytic maps are evaluated at unit noise precision, so the Tikhonov gain
/// is `1/(1+gamma)`.
impl ProxOperator for AnalyticProx {
    fn prox(&self, u: &ComplexImage, _t: usize) -> Result<ComplexImage> {
        let out = self.apply(u.as_slice(), 1.0)?;
        ComplexImage::new(u.height(), u.width(), out)
    }
}

impl ProxOperator for ProxNetwork {
    fn prox(&self, u: &ComplexImage, t: usize) -> Result<ComplexImage> {
        let x = Tensor::new(vec![2, u.height(), u.width()], u.to_planar());
        let step = self.is_time_embedded().then_some(t);
        let y = self.forward(&x, step)?;
        ComplexImage::from_planar(u.height(), u.width(), y.data())
    }
}

impl<P: ProxOperator + ?Sized> ProxOperator for &P {
    fn prox(&self, u: &ComplexImage, t: usize) -> Result<ComplexImage> {
        (**self).prox(u, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Vsqp,
    Admm,
    Alg1,
    VsqpTe,
    AdmmTe,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Vsqp,
        Algorithm::Admm,
        Algorithm::Alg1,
        Algorithm::VsqpTe,
        Algorithm::AdmmTe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vsqp => "vsqp",
            Algorithm::Admm => "admm",
            Algorithm::Alg1 => "alg1",
            Algorithm::VsqpTe => "vsqp_te",
            Algorithm::AdmmTe => "admm_te",
        }
    }

    /// Whether `mu` may vary across unrolls.
    pub fn has_time_varying_mu(self) -> bool {
        matches!(self, Algorithm::Alg1 | Algorithm::VsqpTe | Algorithm::AdmmTe)
    }

    pub fn uses_rho(self) -> bool {
        self == Algorithm::Alg1
    }

    pub fn uses_lambda(self) -> bool {
        matches!(self, Algorithm::Admm | Algorithm::AdmmTe)
    }

    /// Initial data-fidelity weight.
    pub fn default_mu(self) -> f64 {
        match self {
            Algorithm::Vsqp | Algorithm::VsqpTe => 5e-2,
            Algorithm::Admm | Algorithm::AdmmTe | Algorithm::Alg1 => 1.5e-2,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// One static network reused at every unroll.
    Shared,
    /// An independent network per unroll.
    Unshared,
    /// One network conditioned on the unroll index.
    TimeEmbedded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnrollConfig {
    pub algorithm: Algorithm,
    pub unrolls: usize,
    pub cg_iters: usize,
    pub sharing: Sharing,
}

impl UnrollConfig {
    pub fn new(algorithm: Algorithm, unrolls: usize) -> Self {
        Self {
            algorithm,
            unrolls,
            cg_iters: 15,
            sharing: Sharing::Shared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.unrolls == 0 {
            return Err(Error::invalid("number of unrolls must be >= 1"));
        }
        if self.cg_iters == 0 {
            return Err(Error::invalid("cg_iters must be >= 1"));
        }
        Ok(())
    }

    pub fn cg_options(&self) -> CgOptions {
        CgOptions::iters(self.cg_iters)
    }
}

/// Per-unroll scalar. A single value is broadcast over all unrolls.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarSchedule {
    pub values: Vec<f64>,
    pub learnable: bool,
    /// Lower bound enforced by [`project`](Self::project).
    pub floor: f64,
}

pub const MU_FLOOR: f64 = 1e-6;

impl ScalarSchedule {
    pub fn new(values: Vec<f64>, learnable: bool, floor: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("schedule needs at least one value"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("schedule values must be finite"));
        }
        if let Some(v) = values.iter().find(|v| **v < floor) {
            return Err(Error::invalid(format!("schedule value {v} is below the floor {floor}")));
        }
        Ok(Self {
            values,
            learnable,
            floor,
        })
    }

    pub fn constant(value: f64, len: usize, floor: f64) -> Result<Self> {
        Self::new(vec![value; len.max(1)], true, floor)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, t: usize) -> f64 {
        if self.values.len() == 1 {
            self.values[0]
        } else {
            self.values[t]
        }
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|v| *v == self.values[0])
    }

    pub fn project(&mut self) {
        for v in &mut self.values {
            if *v < self.floor {
                *v = self.floor;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedules {
    pub mu: ScalarSchedule,
    pub rho: ScalarSchedule,
    pub lambda: ScalarSchedule,
}

impl Schedules {
    /// Initial values: per-algorithm `mu`, `rho = lambda = 0.1`. Time-embedded
    /// algorithms get one `mu` (and `rho`) per unroll, baselines a single
    /// shared value.
    pub fn defaults(algorithm: Algorithm, unrolls: usize) -> Self {
        let per = if algorithm.has_time_varying_mu() { unrolls } else { 1 };
        Self {
            mu: ScalarSchedule::constant(algorithm.default_mu(), per, MU_FLOOR).expect("valid default"),
            rho: ScalarSchedule::constant(0.1, per, f64::NEG_INFINITY).expect("valid default"),
            lambda: ScalarSchedule::constant(0.1, 1, f64::NEG_INFINITY).expect("valid default"),
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Result<Self> {
        self.mu = ScalarSchedule::new(vec![mu; self.mu.len()], self.mu.learnable, self.mu.floor)?;
        Ok(self)
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self> {
        self.rho = ScalarSchedule::new(vec![rho; self.rho.len()], self.rho.learnable, self.rho.floor)?;
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = ScalarSchedule::new(
            vec![lambda; self.lambda.len()],
            self.lambda.learnable,
            self.lambda.floor,
        )?;
        Ok(self)
    }

    pub fn validate(&self, cfg: &UnrollConfig) -> Result<()> {
        let t = cfg.unrolls;
        for (name, s) in [("mu", &self.mu), ("rho", &self.rho), ("lambda", &self.lambda)] {
            if s.len() != 1 && s.len() != t {
                return Err(Error::dim(format!(
                    "{name} schedule has {} values for {t} unrolls",
                    s.len()
                )));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} schedule is not finite")));
            }
        }
        if self.mu.values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("mu must be > 0"));
        }
        if !cfg.algorithm.has_time_varying_mu() && !self.mu.is_constant() {
            return Err(Error::invalid(format!(
                "{} uses a single mu; got a time-varying schedule",
                cfg.algorithm.name()
            )));
        }
        Ok(())
    }
}

/// Proximal operators for a run: one reused at every unroll, or one per
/// unroll.
pub struct ProxBank<'a> {
    ops: Vec<&'a dyn ProxOperator>,
}

impl<'a> ProxBank<'a> {
    pub fn shared(op: &'a dyn ProxOperator) -> Self {
        Self { ops: vec![op] }
    }

    pub fn per_unroll(ops: Vec<&'a dyn ProxOperator>) -> Self {
        Self { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn get(&self, t: usize) -> &'a dyn ProxOperator {
        if self.ops.len() == 1 {
            self.ops[0]
        } else {
            self.ops[t]
        }
    }

    fn validate(&self, cfg: &UnrollConfig) -> Result<()> {
        let expected = match cfg.sharing {
            Sharing::Shared | Sharing::TimeEmbedded => 1,
            Sharing::Unshared => cfg.unrolls,
        };
        if self.ops.len() != expected {
            return Err(Error::invalid(format!(
                "{:?} sharing with {} unrolls needs {expected} proximal operators, got {}",
                cfg.sharing,
                cfg.unrolls,
                self.ops.len()
            )));
        }
        Ok(())
    }
}

/// Operator, measurements and the cached zero-filled image `E^H y`.
pub struct Problem<'a, O: MeasurementOperator + ?Sized> {
    op: &'a O,
    ehy: ComplexImage,
}

impl<'a, O: MeasurementOperator + ?Sized> Problem<'a, O> {
    pub fn new(op: &'a O, y: &[Complex64], height: usize, width: usize) -> Result<Self> {
        if y.len() != op.output_dim() {
            return Err(Error::dim(format!(
                "measurements have length {}, operator expects {}",
                y.len(),
                op.output_dim()
            )));
        }
        if height * width != op.input_dim() {
            return Err(Error::dim(format!(
                "{height}x{width} image does not match operator input dim {}",
                op.input_dim()
            )));
        }
        let ehy = ComplexImage::new(height, width, op.apply_adjoint(y))?;
        Ok(Self { op, ehy })
    }

    pub fn op(&self) -> &'a O {
        self.op
    }

    /// `E^H y`.
    pub fn zero_filled(&self) -> &ComplexImage {
        &self.ehy
    }

    pub fn height(&self) -> usize {
        self.ehy.height()
    }

    pub fn width(&self) -> usize {
        self.ehy.width()
    }

    /// `CG(E^H E + mu I, E^H y + mu v)`.
    pub fn data_fidelity(&self, v: &[Complex64], mu: f64, opts: CgOptions) -> Result<(ComplexImage, CgReport)> {
        if !(mu > 0.0) {
            return Err(Error::invalid(format!("mu = {mu} must be > 0")));
        }
        let b: Vec<Complex64> = self.ehy.as_slice().iter().zip(v).map(|(e, v)| e + v * mu).collect();
        let (x, report) = cg_solve(&LinearMap::normal(self.op, mu), &b, opts)?;
        Ok((ComplexImage::new(self.height(), self.width(), x)?, report))
    }
}

impl<'a> Problem<'a, EncodingOperator> {
    pub fn from_kspace(op: &'a EncodingOperator, y: &KSpaceData) -> Result<Self> {
        Self::new(op, y.as_slice(), op.height(), op.width())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnrollState {
    pub x: ComplexImage,
    pub z: ComplexImage,
    /// ADMM dual, or the corrected estimate of alg1.
    pub u: ComplexImage,
    /// Denoiser output of alg1.
    pub r: ComplexImage,
    pub t: usize,
}

impl UnrollState {
    /// `x = z = r = E^H y`, `u = 0`, `t = 0`.
    pub fn initial<O: MeasurementOperator + ?Sized>(p: &Problem<'_, O>) -> Self {
        let ehy = p.zero_filled().clone();
        Self {
            x: ehy.clone(),
            z: ehy.clone(),
            u: ComplexImage::zeros(ehy.height(), ehy.width()),
            r: ehy,
            t: 0,
        }
    }
}

fn zip_images(
    a: &ComplexImage,
    b: &ComplexImage,
    f: impl Fn(Complex64, Complex64) -> Complex64,
) -> Result<ComplexImage> {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| f(*x, *y)).collect();
    ComplexImage::new(a.height(), a.width(), data)
}

/// One VSQP step from `z`: returns `(x, prox(x))`.
pub fn vsqp_iteration<O: MeasurementOperator + ?Sized>(
    p: &Problem<'_, O>,
    z: &ComplexImage,
    mu: f64,
    prox: &dyn ProxOperator,
    t: usize,
    cg: CgOptions,
) -> Result<(ComplexImage, ComplexImage, CgReport)> {
    let (x, report) = p.data_fidelity(z.as_slice(), mu, cg)?;
    let z_next = prox.prox(&x, t)?;
    Ok((x, z_next, report))
}

pub fn admm_iteration<O: MeasurementOperator + ?Sized>(
    p: &Problem<'_, O>,
    state: &UnrollState,
    mu: f64,
    lambda: f64,
    prox: &dyn ProxOperator,
    cg: CgOptions,
) -> Result<(UnrollState, CgReport)> {
    let v = zip_images(&state.z, &state.u, |z, u| z - u)?;
    let (x, report) = p.data_fidelity(v.as_slice(), mu, cg)?;
    let xu = zip_images(&x, &state.u, |x, u| x + u)?;
    let z = prox.prox(&xu, state.t)?;
    let dx = zip_images(&x, &z, |x, z| x - z)?;
    let u = zip_images(&state.u, &dx, |u, d| u + d * lambda)?;
    Ok((
        UnrollState {
            x,
            z,
            u,
            r: state.r.clone(),
            t: state.t + 1,
        },
        report,
    ))
}

pub fn alg1_iteration<O: MeasurementOperator + ?Sized>(
    p: &Problem<'_, O>,
    state: &UnrollState,
    mu_t: f64,
    rho_t: f64,
    prox: &dyn ProxOperator,
    cg: CgOptions,
) -> Result<(UnrollState, CgReport)> {
    let (x, report) = p.data_fidelity(state.r.as_slice(), mu_t, cg)?;
    let u = zip_images(&x, &state.r, |x, r| x + (x - r) * rho_t)?;
    let r = prox.prox(&u, state.t)?;
    Ok((
        UnrollState {
            x,
            z: state.z.clone(),
            u,
            r,
            t: state.t + 1,
        },
        report,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnrollDiagnostics {
    pub unroll_index: usize,
    pub mu_t: f64,
    /// Only for alg1.
    pub rho_t: Option<f64>,
    pub cg_residual: f64,
    /// `||x - u||^2 / ||x||^2`; zero for the VSQP family (where `u = x`),
    /// absent for ADMM (where `u` is the dual).
    pub x_u_nmse: Option<f64>,
    pub nmse_vs_ref: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct UnrollOutput {
    pub image: ComplexImage,
    pub diagnostics: Vec<UnrollDiagnostics>,
    /// State after each unroll.
    pub trajectory: Vec<UnrollState>,
}

pub fn nmse(x: &ComplexImage, reference: &ComplexImage) -> f64 {
    let err: f64 = x
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    err / reference.norm().powi(2)
}

fn x_u_ratio(x: &ComplexImage, u: &ComplexImage) -> f64 {
    let d: f64 = x
        .as_slice()
        .iter()
        .zip(u.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let n = norm(x.as_slice()).powi(2);
    if n == 0.0 {
        if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        d / n
    }
}

fn check_finite(state: &UnrollState) -> Result<()> {
    for (name, img) in [("x", &state.x), ("z", &state.z), ("u", &state.u), ("r", &state.r)] {
        if img.as_slice().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Numerical(format!(
                "{name} is not finite after unroll {}",
                state.t
            )));
        }
    }
    Ok(())
}

/// Run `cfg.unrolls` iterations of the configured algorithm.
pub fn run_unrolled<O: MeasurementOperator + ?Sized>(
    cfg: &UnrollConfig,
    p: &Problem<'_, O>,
    schedules: &Schedules,
    bank: &ProxBank<'_>,
    reference: Option<&ComplexImage>,
) -> Result<UnrollOutput> {
    cfg.validate()?;
    schedules.validate(cfg)?;
    bank.validate(cfg)?;
    if let Some(r) = reference {
        if r.height() != p.height() || r.width() != p.width() {
            return Err(Error::dim("reference shape does not match the problem"));
        }
        if r.norm() == 0.0 {
            return Err(Error::invalid("reference has zero norm"));
        }
    }
    let cg = cfg.cg_options();
    let mut state = UnrollState::initial(p);
    let mut diagnostics = Vec::with_capacity(cfg.unrolls);
    let mut trajectory = Vec::with_capacity(cfg.unrolls);
    for t in 0..cfg.unrolls {
        let prox = bank.get(t);
        let mu = schedules.mu.at(t);
        let (next, report, rho, x_u) = match cfg.algorithm {
            Algorithm::Vsqp | Algorithm::VsqpTe => {
                let (x, z, report) = vsqp_iteration(p, &state.z, mu, prox, t, cg)?;
                let next = UnrollState {
                    u: x.clone(),
                    r: z.clone(),
                    x,
                    z,
                    t: t + 1,
                };
                (next, report, None, Some(0.0))
            }
            Algorithm::Admm | Algorithm::AdmmTe => {
                let (next, report) = admm_iteration(p, &state, mu, schedules.lambda.at(t), prox, cg)?;
                (next, report, None, None)
            }
            Algorithm::Alg1 => {
                let rho = schedules.rho.at(t);
                let (next, report) = alg1_iteration(p, &state, mu, rho, prox, cg)?;
                let ratio = x_u_ratio(&next.x, &next.u);
                (next, report, Some(rho), Some(ratio))
            }
        };
        check_finite(&next)?;
        diagnostics.push(UnrollDiagnostics {
            unroll_index: t + 1,
            mu_t: mu,
            rho_t: rho,
            cg_residual: report.final_residual_norm,
            x_u_nmse: x_u,
            nmse_vs_ref: reference.map(|r| nmse(&next.x, r)),
        });
        log::debug!(
            "unroll {}/{}: mu {mu:.4e}, cg residual {:.3e}",
            t + 1,
            cfg.unrolls,
            report.final_residual_norm
        );
        trajectory.push(next.clone());
        state = next;
    }
    Ok(UnrollOutput {
        image: state.x,
        diagnostics,
        trajectory,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `unroll_index,mu_t,rho_t,cg_residual,x_u_nmse,nmse_vs_ref` rows;
/// absent values are empty fields.
pub fn write_diagnostics_csv<W: Write>(out: W, rows: &[UnrollDiagnostics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "unroll_index",
        "mu_t",
        "rho_t",
        "cg_residual",
        "x_u_nmse",
        "nmse_vs_ref",
    ])
    .map_err(crate::vamp::csv_err)?;
    for d in rows {
        w.write_record([
            d.unroll_index.to_string(),
            d.mu_t.to_string(),
            opt(d.rho_t),
            d.cg_residual.to_string(),
            opt(d.x_u_nmse),
            opt(d.nmse_vs_ref),
        ])
        .map_err(crate::vamp::csv_err)?;
    }
    w.flush()?;
    Ok(())
}
