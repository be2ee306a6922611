//! C ABI for teunroll.
//!
//! Complex arrays cross the boundary as interleaved `(re, im)` doubles, so a
//! buffer of `n` complex values holds `2 n` doubles. Images are row-major
//! `height x width`; k-space and coil maps are `coils x height x width`.
//! Every fallible call returns a [`TeStatus`]; the message of the most recent
//! failure on the calling thread is available from [`te_last_error`].

use num_complex::Complex64;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use teunroll::metrics::MetricReport;
use teunroll::prox::AnalyticProx;
use teunroll::signal::{
    make_equispaced_mask, make_phantom, make_random_mask, make_smooth_sensitivities, CoilSensitivities, ComplexImage,
    EncodingOperator, MeasurementOperator, SamplingMask,
};
use teunroll::train::UnrolledModel;
use teunroll::unroll::{run_unrolled, Algorithm, Problem, ProxBank, Schedules, UnrollConfig};
use teunroll::vamp::{run_vamp, VampConfig};
use teunroll::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    InvalidArgument = 3,
    Numeric = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeProxKind {
    Identity = 0,
    SoftThreshold = 1,
    Tikhonov = 2,
}

/// Analytic prior; `param` is the threshold or the Tikhonov weight.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TeProx {
    pub kind: TeProxKind,
    pub param: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TeAlgorithm {
    Vsqp = 0,
    Admm = 1,
    Alg1 = 2,
    VsqpTe = 3,
    AdmmTe = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TeMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub nmse: f64,
}

/// Opaque multi-coil encoding operator.
pub struct TeEncodingOperator {
    op: EncodingOperator,
}

/// Opaque trained unrolled model.
pub struct TeModel {
    model: UnrolledModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Fail(TeStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension(_) => TeStatus::Dimension,
            Error::Numerical(_) | Error::NonFiniteLoss { .. } => TeStatus::Numeric,
            Error::Io(_) | Error::Format { .. } | Error::Checkpoint(_) => TeStatus::Io,
            Error::InvalidArgument(_) | Error::Config { .. } => TeStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Fail>;

fn null(name: &str) -> Fail {
    Fail(TeStatus::NullPointer, format!("`{name}` is null"))
}

fn guard(f: impl FnOnce() -> FfiResult) -> TeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TeStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TeStatus::Panic
        }
    }
}

/// Borrow `n` complex values from an interleaved buffer.
///
/// # Safety
/// `p` must be null or point to `2 n` readable doubles.
unsafe fn complex_in(p: *const f64, n: usize, name: &str) -> FfiResult<Vec<Complex64>> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = std::slice::from_raw_parts(p, 2 * n);
    Ok(s.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

/// # Safety
/// `p` must be null or point to `2 v.len()` writable doubles.
unsafe fn complex_out(p: *mut f64, v: &[Complex64], name: &str) -> FfiResult {
    if p.is_null() {
        return Err(null(name));
    }
    let s = std::slice::from_raw_parts_mut(p, 2 * v.len());
    for (d, c) in s.chunks_exact_mut(2).zip(v) {
        d[0] = c.re;
        d[1] = c.im;
    }
    Ok(())
}

fn check_len(name: &str, got: usize, want: usize) -> FfiResult {
    if got != want {
        return Err(Fail(
            TeStatus::Dimension,
            format!("`{name}` holds {got} complex values, expected {want}"),
        ));
    }
    Ok(())
}

/// # Safety
/// `p` must be null or a handle from [`te_encoding_create`].
unsafe fn op_ref<'a>(p: *const TeEncodingOperator) -> FfiResult<&'a EncodingOperator> {
    p.as_ref().map(|h| &h.op).ok_or_else(|| null("op"))
}

fn analytic(p: TeProx) -> FfiResult<AnalyticProx> {
    Ok(match p.kind {
        TeProxKind::Identity => AnalyticProx::Identity,
        TeProxKind::SoftThreshold => AnalyticProx::soft_threshold(p.param)?,
        TeProxKind::Tikhonov => AnalyticProx::tikhonov(p.param)?,
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn te_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (truncated and
/// NUL-terminated when `cap > 0`). Returns the full message length in bytes,
/// excluding the terminator. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn te_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Build `E = M F S` from a row-major `height x width` byte mask (nonzero =
/// sampled) and interleaved coil maps of `coils x height x width` values.
///
/// # Safety
/// `mask` must point to `height * width` bytes, `sens` to
/// `2 * coils * height * width` doubles and `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn te_encoding_create(
    height: usize,
    width: usize,
    coils: usize,
    mask: *const u8,
    sens: *const f64,
    out: *mut *mut TeEncodingOperator,
) -> TeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if mask.is_null() {
            return Err(null("mask"));
        }
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Fail(TeStatus::Dimension, "size overflow".into()))?;
        let pattern: Vec<bool> = std::slice::from_raw_parts(mask, n).iter().map(|&b| b != 0).collect();
        let sampled = pattern.iter().filter(|&&b| b).count().max(1);
        let mask = SamplingMask::from_pattern(height, width, pattern, n as f64 / sampled as f64, 0)?;
        let maps = complex_in(sens, coils * n, "sens")?;
        let sens = CoilSensitivities::new(coils, height, width, maps)?;
        let op = EncodingOperator::new(mask, sens)?;
        *out = Box::into_raw(Box::new(TeEncodingOperator { op }));
        Ok(())
    })
}

/// # Safety
/// `op` must be null or a handle from [`te_encoding_create`] not yet destroyed.
#[no_mangle]
pub unsafe extern "C" fn te_encoding_destroy(op: *mut TeEncodingOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// # Safety
/// `op` must be a live handle; the output pointers must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn te_encoding_dims(
    op: *const TeEncodingOperator,
    height: *mut usize,
    width: *mut usize,
    coils: *mut usize,
) -> TeStatus {
    guard(|| {
        let op = op_ref(op)?;
        if let Some(h) = height.as_mut() {
            *h = op.height();
        }
        if let Some(w) = width.as_mut() {
            *w = op.width();
        }
        if let Some(c) = coils.as_mut() {
            *c = op.coils();
        }
        Ok(())
    })
}

/// `y = E x`. Lengths count complex values.
///
/// # Safety
/// `x` must hold `2 * x_len` doubles and `y` room for `2 * y_len`.
#[no_mangle]
pub unsafe extern "C" fn te_encoding_forward(
    op: *const TeEncodingOperator,
    x: *const f64,
    x_len: usize,
    y: *mut f64,
    y_len: usize,
) -> TeStatus {
    guard(|| {
        let op = op_ref(op)?;
        check_len("x", x_len, op.input_dim())?;
        check_len("y", y_len, op.output_dim())?;
        let v = complex_in(x, x_len, "x")?;
        complex_out(y, &op.apply(&v), "y")
    })
}

/// `x = E^H y`. Lengths count complex values.
///
/// # Safety
/// `y` must hold `2 * y_len` doubles and `x` room for `2 * x_len`.
#[no_mangle]
pub unsafe extern "C" fn te_encoding_adjoint(
    op: *const TeEncodingOperator,
    y: *const f64,
    y_len: usize,
    x: *mut f64,
    x_len: usize,
) -> TeStatus {
    guard(|| {
        let op = op_ref(op)?;
        check_len("y", y_len, op.output_dim())?;
        check_len("x", x_len, op.input_dim())?;
        let v = complex_in(y, y_len, "y")?;
        complex_out(x, &op.apply_adjoint(&v), "x")
    })
}

fn write_mask(m: &SamplingMask, out: *mut u8) -> FfiResult {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: the caller provides rows * cols writable bytes.
    let dst = unsafe { std::slice::from_raw_parts_mut(out, m.rows() * m.cols()) };
    for (d, &s) in dst.iter_mut().zip(m.pattern()) {
        *d = u8::from(s);
    }
    Ok(())
}

/// Equispaced column mask with a centered ACS block, written as bytes.
///
/// # Safety
/// `out` must point to `rows * cols` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn te_mask_equispaced(rows: usize, cols: usize, r: usize, acs: usize, out: *mut u8) -> TeStatus {
    guard(|| write_mask(&make_equispaced_mask(rows, cols, r, acs)?, out))
}

/// Random column mask with a centered ACS block, written as bytes.
///
/// # Safety
/// `out` must point to `rows * cols` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn te_mask_random(
    rows: usize,
    cols: usize,
    r: f64,
    acs: usize,
    seed: u64,
    out: *mut u8,
) -> TeStatus {
    guard(|| write_mask(&make_random_mask(rows, cols, r, acs, seed)?, out))
}

/// Ellipse phantom of `height x width` complex values.
///
/// # Safety
/// `out` must point to `2 * height * width` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn te_phantom(
    height: usize,
    width: usize,
    ellipses: usize,
    seed: u64,
    out: *mut f64,
) -> TeStatus {
    guard(|| {
        let img = make_phantom(height, width, ellipses, seed)?;
        complex_out(out, img.as_slice(), "out")
    })
}

/// Smooth coil maps normalized to unit root-sum-of-squares.
///
/// # Safety
/// `out` must point to `2 * coils * height * width` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn te_sensitivities(
    height: usize,
    width: usize,
    coils: usize,
    seed: u64,
    out: *mut f64,
) -> TeStatus {
    guard(|| {
        let s = make_smooth_sensitivities(height, width, coils, seed)?;
        complex_out(out, s.as_slice(), "out")
    })
}

/// VAMP with an analytic denoiser. `y` holds the full `coils x H x W` grid.
///
/// # Safety
/// `y` must hold `2 * y_len` doubles and `x_out` room for `2 * x_len`.
#[no_mangle]
pub unsafe extern "C" fn te_vamp(
    op: *const TeEncodingOperator,
    y: *const f64,
    y_len: usize,
    prox: TeProx,
    max_iters: usize,
    damping: f64,
    x_out: *mut f64,
    x_len: usize,
) -> TeStatus {
    guard(|| {
        let op = op_ref(op)?;
        check_len("y", y_len, op.output_dim())?;
        check_len("x_out", x_len, op.input_dim())?;
        let y = complex_in(y, y_len, "y")?;
        let cfg = VampConfig {
            max_iters,
            damping,
            ..VampConfig::default()
        };
        cfg.validate()?;
        let out = run_vamp(op, &y, &analytic(prox)?, &cfg, None, None)?;
        complex_out(x_out, &out.x, "x_out")
    })
}

fn algorithm(a: TeAlgorithm) -> Algorithm {
    match a {
        TeAlgorithm::Vsqp => Algorithm::Vsqp,
        TeAlgorithm::Admm => Algorithm::Admm,
        TeAlgorithm::Alg1 => Algorithm::Alg1,
        TeAlgorithm::VsqpTe => Algorithm::VsqpTe,
        TeAlgorithm::AdmmTe => Algorithm::AdmmTe,
    }
}

/// Unrolled reconstruction with an analytic prior and constant `mu`, `rho`
/// and `lambda` (unused ones are ignored).
///
/// # Safety
/// `y` must hold `2 * y_len` doubles and `x_out` room for `2 * x_len`.
#[no_mangle]
pub unsafe extern "C" fn te_unroll(
    op: *const TeEncodingOperator,
    y: *const f64,
    y_len: usize,
    algorithm_kind: TeAlgorithm,
    unrolls: usize,
    cg_iters: usize,
    mu: f64,
    rho: f64,
    lambda: f64,
    prox: TeProx,
    x_out: *mut f64,
    x_len: usize,
) -> TeStatus {
    guard(|| {
        let op = op_ref(op)?;
        check_len("y", y_len, op.output_dim())?;
        check_len("x_out", x_len, op.input_dim())?;
        let y = complex_in(y, y_len, "y")?;
        let alg = algorithm(algorithm_kind);
        let mut cfg = UnrollConfig::new(alg, unrolls);
        cfg.cg_iters = cg_iters;
        let sched = Schedules::defaults(alg, unrolls)
            .with_mu(mu)?
            .with_rho(rho)?
            .with_lambda(lambda)?;
        let p = Problem::new(op, &y, op.height(), op.width())?;
        let prox = analytic(prox)?;
        let out = run_unrolled(&cfg, &p, &sched, &ProxBank::shared(&prox), None)?;
        complex_out(x_out, out.image.as_slice(), "x_out")
    })
}

/// Load a checkpoint directory written by the `train` subcommand.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn te_model_load(path: *const c_char, out: *mut *mut TeModel) -> TeStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(TeStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let model = UnrolledModel::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(TeModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`te_model_load`] not yet destroyed.
#[no_mangle]
pub unsafe extern "C" fn te_model_destroy(model: *mut TeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of network parameters of a loaded model.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn te_model_num_parameters(model: *const TeModel, out: *mut usize) -> TeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.num_network_parameters();
        Ok(())
    })
}

/// Reconstruct with a trained model.
///
/// # Safety
/// `y` must hold `2 * y_len` doubles and `x_out` room for `2 * x_len`.
#[no_mangle]
pub unsafe extern "C" fn te_model_reconstruct(
    model: *const TeModel,
    op: *const TeEncodingOperator,
    y: *const f64,
    y_len: usize,
    x_out: *mut f64,
    x_len: usize,
) -> TeStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let op = op_ref(op)?;
        check_len("y", y_len, op.output_dim())?;
        check_len("x_out", x_len, op.input_dim())?;
        let y = complex_in(y, y_len, "y")?;
        let p = Problem::new(op, &y, op.height(), op.width())?;
        let out = run_unrolled(&m.unroll, &p, &m.schedules, &m.bank(), None)?;
        complex_out(x_out, out.image.as_slice(), "x_out")
    })
}

/// PSNR, SSIM and NMSE of `test` against `reference`.
///
/// # Safety
/// Both images must hold `2 * height * width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn te_metrics(
    reference: *const f64,
    test: *const f64,
    height: usize,
    width: usize,
    out: *mut TeMetrics,
) -> TeStatus {
    guard(|| {
        let n = height * width;
        let r = ComplexImage::new(height, width, complex_in(reference, n, "reference")?)?;
        let t = ComplexImage::new(height, width, complex_in(test, n, "test")?)?;
        let m = MetricReport::compute(&r, &t)?;
        *out.as_mut().ok_or_else(|| null("out"))? = TeMetrics {
            psnr_db: m.psnr_db,
            ssim: m.ssim,
            nmse: m.nmse,
        };
        Ok(())
    })
}
