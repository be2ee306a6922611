//! Linear maps on `C^N`, conjugate gradient for the regularized normal
//! equations `(E^H E + mu I) x = b`, and spectral estimators.

use crate::signal::{inner, norm, MeasurementOperator};
use crate::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type ApplyFn<'a> = Box<dyn Fn(&[Complex64]) -> Vec<Complex64> + Send + Sync + 'a>;

/// A linear map `C^dim -> C^dim` given by a closure.
pub struct LinearMap<'a> {
    dim: usize,
    self_adjoint: bool,
    apply: ApplyFn<'a>,
}

impl<'a> LinearMap<'a> {
    pub fn new<F>(dim: usize, self_adjoint: bool, apply: F) -> Self
    where
        F: Fn(&[Complex64]) -> Vec<Complex64> + Send + Sync + 'a,
    {
        Self {
            dim,
            self_adjoint,
            apply: Box::new(apply),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, true, |x| x.to_vec())
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, true, move |x| vec![Complex64::new(0.0, 0.0); x.len()])
    }

    pub fn diagonal(diag: Vec<f64>) -> Self {
        Self::new(diag.len(), true, move |x| {
            x.iter().zip(&diag).map(|(v, d)| v * d).collect()
        })
    }

    /// Row-major dense matrix. `self_adjoint` is taken on trust.
    pub fn dense(dim: usize, data: Vec<Complex64>, self_adjoint: bool) -> Self {
        assert_eq!(data.len(), dim * dim, "dense map must be square");
        Self::new(dim, self_adjoint, move |x| {
            data.chunks_exact(dim)
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect()
        })
    }

    /// `E^H E + mu I`.
    pub fn normal<O: MeasurementOperator + ?Sized>(op: &'a O, mu: f64) -> Self {
        Self::new(op.input_dim(), true, move |x| {
            let mut y = op.normal(x);
            if mu != 0.0 {
                for (o, v) in y.iter_mut().zip(x) {
                    *o += v * mu;
                }
            }
            y
        })
    }

    /// `self + mu I`, borrowing `self`.
    pub fn shifted(&'a self, mu: f64) -> LinearMap<'a> {
        LinearMap::new(self.dim, self.self_adjoint, move |x| {
            let mut y = self.apply(x);
            for (o, v) in y.iter_mut().zip(x) {
                *o += v * mu;
            }
            y
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.self_adjoint
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (self.apply)(x)
    }

    /// Dense matrix built by probing the map with unit vectors.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let n = self.dim;
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            e[j] = Complex64::new(1.0, 0.0);
            let col = self.apply(&e);
            for (i, v) in col.into_iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = Complex64::new(0.0, 0.0);
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Relative residual tolerance `||r|| <= tol ||b||`.
    pub tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            max_iters: 15,
            tol: 1e-12,
        }
    }
}

impl CgOptions {
    pub fn iters(max_iters: usize) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iterations_run: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

/// Conjugate gradient from a zero initial guess.
pub fn cg_solve(a: &LinearMap<'_>, b: &[Complex64], opts: CgOptions) -> Result<(Vec<Complex64>, CgReport)> {
    cg_solve_observed(a, b, None, opts, |_, _| {})
}

/// Conjugate gradient with an optional warm start. `observer` sees every
/// iterate, starting with the initial guess at iteration 0.
pub fn cg_solve_observed<F>(
    a: &LinearMap<'_>,
    b: &[Complex64],
    x0: Option<&[Complex64]>,
    opts: CgOptions,
    mut observer: F,
) -> Result<(Vec<Complex64>, CgReport)>
where
    F: FnMut(usize, &[Complex64]),
{
    if b.len() != a.dim() {
        return Err(Error::dim(format!(
            "right-hand side has length {}, operator dim is {}",
            b.len(),
            a.dim()
        )));
    }
    let b_norm = norm(b);
    if !b_norm.is_finite() {
        return Err(Error::Numerical("right-hand side is not finite".into()));
    }
    let (mut x, mut r) = match x0 {
        Some(x0) => {
            if x0.len() != b.len() {
                return Err(Error::dim("initial guess length does not match"));
            }
            let ax = a.apply(x0);
            let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            (x0.to_vec(), r)
        }
        None => (vec![Complex64::new(0.0, 0.0); b.len()], b.to_vec()),
    };
    observer(0, &x);
    let threshold = opts.tol * b_norm;
    let mut p = r.clone();
    let mut rs = inner(&r, &r).re;
    let mut iterations_run = 0;
    while iterations_run < opts.max_iters && rs.sqrt() > threshold {
        let ap = a.apply(&p);
        let p_ap = inner(&p, &ap).re;
        if !p_ap.is_finite() || p_ap <= 0.0 {
            return Err(Error::Numerical(format!(
                "conjugate gradient curvature {p_ap} at iteration {iterations_run}: operator is not positive definite"
            )));
        }
        let alpha = rs / p_ap;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += pi * alpha;
            *ri -= api * alpha;
        }
        let rs_new = inner(&r, &r).re;
        if !rs_new.is_finite() {
            return Err(Error::Numerical("conjugate gradient residual is not finite".into()));
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + *pi * beta;
        }
        rs = rs_new;
        iterations_run += 1;
        observer(iterations_run, &x);
    }
    let final_residual_norm = rs.sqrt();
    Ok((
        x,
        CgReport {
            iterations_run,
            final_residual_norm,
            converged: final_residual_norm <= threshold,
        },
    ))
}

/// Hutchinson estimate of `(1/N) Tr[(A + mu I)^{-1}]` with Rademacher probes.
/// Each probe solve runs CG to a tight tolerance rather than the 15-step
/// unroll budget.
pub fn estimate_trace_inverse(a: &LinearMap<'_>, mu: f64, num_probes: usize, seed: u64) -> Result<f64> {
    if num_probes == 0 {
        return Err(Error::invalid("num_probes must be >= 1"));
    }
    let n = a.dim();
    let shifted = a.shifted(mu);
    let opts = CgOptions {
        max_iters: n.clamp(15, 1000),
        tol: 1e-12,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..num_probes {
        let v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0))
            .collect();
        let (w, _) = cg_solve(&shifted, &v, opts)?;
        total += inner(&v, &w).re;
    }
    Ok(total / (num_probes as f64 * n as f64))
}

/// Exact `(1/N) Tr[(A + mu I)^{-1}]` through a dense Cholesky factorization.
pub fn exact_trace_inverse(a: &LinearMap<'_>, mu: f64) -> Result<f64> {
    let n = a.dim();
    let mut m = a.to_dense();
    for i in 0..n {
        m[(i, i)] += Complex64::new(mu, 0.0);
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Numerical("A + mu I is not positive definite".into()))?;
    let inv = chol.inverse();
    Ok((0..n).map(|i| inv[(i, i)].re).sum::<f64>() / n as f64)
}

/// Eigenvalues of a self-adjoint map, cached so that
/// `(1/N) Tr[(A + mu I)^{-1}] = mean 1/(lambda_i + mu)` is exact for any `mu`.
#[derive(Clone, Debug)]
pub struct SpectralTrace {
    eigenvalues: Vec<f64>,
}

impl SpectralTrace {
    pub fn new(a: &LinearMap<'_>) -> Result<Self> {
        if !a.is_self_adjoint() {
            return Err(Error::invalid("spectral trace needs a self-adjoint map"));
        }
        let m = a.to_dense();
        let eig = SymmetricEigen::new(m);
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("eigenvalues are not finite".into()));
        }
        Ok(Self { eigenvalues })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn normalized_trace_inverse(&self, mu: f64) -> Result<f64> {
        let mut acc = 0.0;
        for &l in &self.eigenvalues {
            let d = l + mu;
            if !(d > 0.0) {
                return Err(Error::Numerical(format!("A + mu I has non-positive eigenvalue {d}")));
            }
            acc += 1.0 / d;
        }
        Ok(acc / self.eigenvalues.len() as f64)
    }
}

/// Rayleigh-quotient estimate of the largest eigenvalue of a self-adjoint map.
pub fn power_iteration_norm(a: &LinearMap<'_>, iters: usize, seed: u64) -> Result<f64> {
    if iters == 0 {
        return Err(Error::invalid("power iteration needs iters >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Complex64> = (0..a.dim())
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    for _ in 0..iters {
        let w = a.apply(&v);
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Ok(inner(&v, &a.apply(&v)).re)
}

/// Standard complex normal vector (unit variance per complex entry).
pub fn random_complex(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * s, im * s)
        })
        .collect()
}
