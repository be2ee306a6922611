//! Vector approximate message passing.
//!
//! Each iteration runs an LMMSE data-fidelity half-step
//!
//! ```text
//! x   = (E^H E + mu_x I)^{-1} (E^H y + mu_x r)
//! v_x = Tr[(E^H E + mu_x I)^{-1}] / N,   mu_z = 1/v_x - mu_x
//! u   = (x / v_x - mu_x r) / mu_z
//! ```
//!
//! followed by a denoising half-step
//!
//! ```text
//! z   = prox(u; mu_z),   v_z = <div prox(u)> / mu_z
//! mu_x' = 1/v_z - mu_z,  r' = (z / v_z - mu_z u) / mu_x'
//! ```
//!
//! The measurement noise is assumed to have unit precision; callers with a
//! different noise level should whiten `E` and `y` first.

use crate::linops::{cg_solve, estimate_trace_inverse, CgOptions, CgReport, LinearMap, SpectralTrace};
use crate::prox::Denoiser;
use crate::signal::{norm, MeasurementOperator};
use crate::{Error, Result};
use num_complex::Complex64;
use std::io::Write;

#[derive(Clone, Debug, PartialEq)]
pub struct VampState {
    pub r: Vec<Complex64>,
    pub mu_x: f64,
    pub x: Vec<Complex64>,
    pub upsilon_x: f64,
    pub mu_z: f64,
    pub u: Vec<Complex64>,
    pub z: Vec<Complex64>,
    pub upsilon_z: f64,
}

impl VampState {
    /// `r = 0`, `mu_x = 1`.
    pub fn new(n: usize) -> Self {
        Self::with_message(vec![Complex64::new(0.0, 0.0); n], 1.0)
    }

    pub fn with_message(r: Vec<Complex64>, mu_x: f64) -> Self {
        let n = r.len();
        let zeros = vec![Complex64::new(0.0, 0.0); n];
        Self {
            r,
            mu_x,
            x: zeros.clone(),
            upsilon_x: 1.0 / mu_x,
            mu_z: 0.0,
            u: zeros.clone(),
            z: zeros,
            upsilon_z: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VampConfig {
    pub max_iters: usize,
    /// Weight on the new `(r, mu_x)` message; 1 disables damping.
    pub damping: f64,
    pub trace_probes: usize,
    pub mu_floor: f64,
    /// Problems up to this size use the exact (dense spectral) trace.
    pub exact_trace_max_dim: usize,
    pub cg: CgOptions,
    pub seed: u64,
}

impl Default for VampConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            damping: 0.9,
            trace_probes: 32,
            mu_floor: 1e-8,
            exact_trace_max_dim: 4096,
            cg: CgOptions {
                max_iters: 500,
                tol: 1e-12,
            },
            seed: 0,
        }
    }
}

impl VampConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.mu_floor > 0.0) {
            return Err(Error::invalid("mu_floor must be > 0"));
        }
        if self.trace_probes == 0 {
            return Err(Error::invalid("trace_probes must be >= 1"));
        }
        Ok(())
    }
}

/// How `(1/N) Tr[(E^H E + mu I)^{-1}]` is evaluated.
#[derive(Clone, Debug)]
pub enum TraceMode {
    Exact(SpectralTrace),
    Hutchinson { probes: usize, seed: u64 },
}

impl TraceMode {
    /// Exact for `N <= exact_trace_max_dim`, Hutchinson otherwise.
    pub fn for_operator<O: MeasurementOperator + ?Sized>(op: &O, cfg: &VampConfig) -> Result<Self> {
        if op.input_dim() <= cfg.exact_trace_max_dim {
            Ok(TraceMode::Exact(SpectralTrace::new(&LinearMap::normal(op, 0.0))?))
        } else {
            Ok(TraceMode::Hutchinson {
                probes: cfg.trace_probes,
                seed: cfg.seed,
            })
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, TraceMode::Exact(_))
    }

    fn normalized_trace_inverse<O: MeasurementOperator + ?Sized>(&self, op: &O, mu: f64) -> Result<f64> {
        match self {
            TraceMode::Exact(s) => s.normalized_trace_inverse(mu),
            TraceMode::Hutchinson { probes, seed } => {
                estimate_trace_inverse(&LinearMap::normal(op, 0.0), mu, *probes, *seed)
            }
        }
    }
}

/// `factor * E`. Scaling `E` and `y` by `1 / sqrt(noise variance)` whitens a
/// problem for the unit-precision LMMSE step without changing the estimate's
/// units.
pub struct ScaledOperator<'a, O: ?Sized> {
    op: &'a O,
    factor: f64,
}

impl<'a, O: MeasurementOperator + ?Sized> ScaledOperator<'a, O> {
    pub fn new(op: &'a O, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::invalid(format!("scale factor {factor} must be finite and > 0")));
        }
        Ok(Self { op, factor })
    }

    /// Factor that whitens circular noise with std `sigma` per real and
    /// imaginary part (complex variance `2 sigma^2`).
    pub fn whitening(op: &'a O, sigma: f64) -> Result<Self> {
        Self::new(op, 1.0 / (std::f64::consts::SQRT_2 * sigma))
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn scale_data(&self, y: &[Complex64]) -> Vec<Complex64> {
        y.iter().map(|v| v * self.factor).collect()
    }
}

impl<O: MeasurementOperator + ?Sized> MeasurementOperator for ScaledOperator<'_, O> {
    fn input_dim(&self) -> usize {
        self.op.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.op.output_dim()
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.op.apply(x).into_iter().map(|v| v * self.factor).collect()
    }

    fn apply_adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        self.op.apply_adjoint(y).into_iter().map(|v| v * self.factor).collect()
    }
}

/// Per-iteration record. `mu_x` is the precision used by that iteration's
/// LMMSE step.
#[derive(Clone, Debug, PartialEq)]
pub struct VampDiagnostics {
    pub iteration: usize,
    pub mu_x: f64,
    pub mu_z: f64,
    pub upsilon_x: f64,
    pub upsilon_z: f64,
    pub nmse: Option<f64>,
    pub clamps: usize,
    pub cg: CgReport,
}

/// LMMSE half-step. Returns the CG report and the number of clamp events.
pub fn lmmse_step<O: MeasurementOperator + ?Sized>(
    op: &O,
    y: &[Complex64],
    state: &mut VampState,
    trace: &TraceMode,
    cfg: &VampConfig,
) -> Result<(CgReport, usize)> {
    if !(state.mu_x > 0.0) {
        return Err(Error::invalid(format!("mu_x = {} must be > 0", state.mu_x)));
    }
    if y.len() != op.output_dim() || state.r.len() != op.input_dim() {
        return Err(Error::dim("measurement or message length does not match the operator"));
    }
    let mu_x = state.mu_x;
    let mut rhs = op.apply_adjoint(y);
    for (b, r) in rhs.iter_mut().zip(&state.r) {
        *b += r * mu_x;
    }
    let (x, report) = cg_solve(&LinearMap::normal(op, mu_x), &rhs, cfg.cg)?;
    let upsilon_x = trace.normalized_trace_inverse(op, mu_x)?;
    let mut clamps = 0;
    let mut mu_z = 1.0 / upsilon_x - mu_x;
    if !(mu_z > cfg.mu_floor) {
        log::debug!("lmmse: mu_z = {mu_z} clamped to {}", cfg.mu_floor);
        mu_z = cfg.mu_floor;
        clamps += 1;
    }
    state.u = x
        .iter()
        .zip(&state.r)
        .map(|(xi, ri)| (xi / upsilon_x - ri * mu_x) / mu_z)
        .collect();
    state.x = x;
    state.upsilon_x = upsilon_x;
    state.mu_z = mu_z;
    Ok((report, clamps))
}

/// Denoising half-step with damped `(r, mu_x)` updates. Returns the number of
/// clamp events.
pub fn denoise_step(den: &dyn Denoiser, state: &mut VampState, cfg: &VampConfig) -> Result<usize> {
    if !(state.mu_z > 0.0) {
        return Err(Error::invalid(format!("mu_z = {} must be > 0", state.mu_z)));
    }
    let mu_z = state.mu_z;
    let z = den.denoise(&state.u, mu_z)?;
    let upsilon_z = den.divergence(&state.u, mu_z)? / mu_z;
    state.z = z;
    state.upsilon_z = upsilon_z;
    if !(upsilon_z > 0.0) || !upsilon_z.is_finite() {
        // Uninformative divergence: keep the previous message.
        log::debug!("denoise: upsilon_z = {upsilon_z}, message not updated");
        return Ok(1);
    }
    let mut clamps = 0;
    let mut mu_x = 1.0 / upsilon_z - mu_z;
    if !(mu_x > cfg.mu_floor) {
        log::debug!("denoise: mu_x = {mu_x} clamped to {}", cfg.mu_floor);
        mu_x = cfg.mu_floor;
        clamps += 1;
    }
    let d = cfg.damping;
    for ((r, z), u) in state.r.iter_mut().zip(&state.z).zip(&state.u) {
        let cand = (z / upsilon_z - u * mu_z) / mu_x;
        *r = cand * d + *r * (1.0 - d);
    }
    state.mu_x = d * mu_x + (1.0 - d) * state.mu_x;
    Ok(clamps)
}

#[derive(Clone, Debug)]
pub struct VampOutput {
    pub x: Vec<Complex64>,
    pub state: VampState,
    pub diagnostics: Vec<VampDiagnostics>,
}

impl VampOutput {
    pub fn total_clamps(&self) -> usize {
        self.diagnostics.iter().map(|d| d.clamps).sum()
    }
}

/// Alternates [`lmmse_step`] and [`denoise_step`] for `cfg.max_iters`
/// iterations and returns the final LMMSE estimate. Clamps are counted in the
/// diagnostics, never fatal.
pub fn run_vamp<O: MeasurementOperator + ?Sized>(
    op: &O,
    y: &[Complex64],
    den: &dyn Denoiser,
    cfg: &VampConfig,
    init: Option<VampState>,
    reference: Option<&[Complex64]>,
) -> Result<VampOutput> {
    let trace = TraceMode::for_operator(op, cfg)?;
    run_vamp_with_trace(op, y, den, cfg, &trace, init, reference)
}

pub fn run_vamp_with_trace<O: MeasurementOperator + ?Sized>(
    op: &O,
    y: &[Complex64],
    den: &dyn Denoiser,
    cfg: &VampConfig,
    trace: &TraceMode,
    init: Option<VampState>,
    reference: Option<&[Complex64]>,
) -> Result<VampOutput> {
    cfg.validate()?;
    let n = op.input_dim();
    let mut state = init.unwrap_or_else(|| VampState::new(n));
    if state.r.len() != n || state.r.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::invalid("initial message must be finite with operator length"));
    }
    let ref_norm2 = match reference {
        Some(r) if r.len() != n => return Err(Error::dim("reference length does not match")),
        Some(r) => {
            let n2 = norm(r).powi(2);
            if n2 == 0.0 {
                return Err(Error::invalid("reference has zero norm"));
            }
            Some(n2)
        }
        None => None,
    };
    let mut diagnostics = Vec::with_capacity(cfg.max_iters);
    for iteration in 0..cfg.max_iters {
        let mu_x = state.mu_x;
        let (cg, c1) = lmmse_step(op, y, &mut state, trace, cfg)?;
        let nmse = match (reference, ref_norm2) {
            (Some(r), Some(n2)) => Some(state.x.iter().zip(r).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n2),
            _ => None,
        };
        let c2 = denoise_step(den, &mut state, cfg)?;
        diagnostics.push(VampDiagnostics {
            iteration,
            mu_x,
            mu_z: state.mu_z,
            upsilon_x: state.upsilon_x,
            upsilon_z: state.upsilon_z,
            nmse,
            clamps: c1 + c2,
            cg,
        });
    }
    if cfg.max_iters == 0 {
        lmmse_step(op, y, &mut state, trace, cfg)?;
    }
    Ok(VampOutput {
        x: state.x.clone(),
        state,
        diagnostics,
    })
}

/// Writes `iteration,mu_x,mu_z,upsilon_x,upsilon_z,nmse,clamps` rows.
pub fn write_diagnostics_csv<W: Write>(out: W, rows: &[VampDiagnostics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "mu_x", "mu_z", "upsilon_x", "upsilon_z", "nmse", "clamps"])
        .map_err(csv_err)?;
    for d in rows {
        w.write_record([
            d.iteration.to_string(),
            d.mu_x.to_string(),
            d.mu_z.to_string(),
            d.upsilon_x.to_string(),
            d.upsilon_z.to_string(),
            d.nmse.map(|v| v.to_string()).unwrap_or_default(),
            d.clamps.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
