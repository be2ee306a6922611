//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::rc::Rc;
use std::time::{Duration, Instant};
use teunroll::linops::{cg_solve, CgOptions, LinearMap};
use teunroll::nn::{film_modulate, film_residual_modulate, sinusoidal_encode, AdamConfig, NetworkConfig, ProxNetwork};
use teunroll::nn::{Tape, Tensor, Var};
use teunroll::prox::{AnalyticProx, Denoiser};
use teunroll::signal::{
    add_noise, inner, make_phantom, make_random_mask, CoilSensitivities, ComplexImage, DenseOperator, EncodingOperator,
    KSpaceData, MeasurementOperator, SamplingMask,
};
use teunroll::train::{evaluate, synthesize, train, zero_filled_metrics, DataSpec, TrainConfig, UnrolledModel};
use teunroll::unroll::{
    run_unrolled, Algorithm, Problem, ProxBank, ProxOperator, Schedules, Sharing, UnrollConfig, UnrollState,
};
use teunroll::vamp::{run_vamp, VampConfig};

type Outcome = Result<String, String>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..n)
        .map(|_| c(StandardNormal.sample(rng), StandardNormal.sample(rng)))
        .collect()
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    (d / b.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn dense_of<O: MeasurementOperator>(op: &O) -> DMatrix<Complex64> {
    let (m, n) = (op.output_dim(), op.input_dim());
    let mut a = DMatrix::zeros(m, n);
    let mut e = vec![c(0.0, 0.0); n];
    for j in 0..n {
        e[j] = c(1.0, 0.0);
        for (i, v) in op.apply(&e).into_iter().enumerate() {
            a[(i, j)] = v;
        }
        e[j] = c(0.0, 0.0);
    }
    a
}

fn solve(a: DMatrix<Complex64>, b: &[Complex64]) -> Vec<Complex64> {
    a.lu()
        .solve(&DVector::from_column_slice(b))
        .expect("nonsingular")
        .iter()
        .copied()
        .collect()
}

fn operator_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_adj = 0.0f64;
    for draw in 0..100u64 {
        let h = rng.random_range(4..=24);
        let w = rng.random_range(6..=24);
        let coils = rng.random_range(1..=4);
        let r = rng.random_range(1.0..5.0);
        let acs = rng.random_range(1..=((w as f64 / r) as usize).min(4));
        let mask = make_random_mask(h, w, r, acs, draw).map_err(|e| e.to_string())?;
        let sens = CoilSensitivities::new(coils, h, w, gaussian_vec(coils * h * w, &mut rng)).unwrap();
        let op = EncodingOperator::new(mask, sens).unwrap();
        let x = ComplexImage::new(h, w, gaussian_vec(h * w, &mut rng)).unwrap();
        let y = KSpaceData::new(coils, h, w, gaussian_vec(coils * h * w, &mut rng)).unwrap();
        let ex = op.forward(&x).unwrap();
        let ehy = op.adjoint(&y).unwrap();
        let lhs = inner(y.as_slice(), ex.as_slice());
        let rhs = inner(ehy.as_slice(), x.as_slice());
        worst_adj = worst_adj.max((lhs - rhs).norm() / (x.norm() * y.norm()));
    }
    let mut worst_parseval = 0.0f64;
    for _ in 0..20 {
        let (h, w, coils) = (
            rng.random_range(3..=20),
            rng.random_range(3..=20),
            rng.random_range(1..=4),
        );
        let mut maps = gaussian_vec(coils * h * w, &mut rng);
        for p in 0..h * w {
            let e: f64 = (0..coils).map(|k| maps[k * h * w + p].norm_sqr()).sum::<f64>().sqrt();
            for k in 0..coils {
                maps[k * h * w + p] /= e;
            }
        }
        let op = EncodingOperator::new(
            SamplingMask::full(h, w),
            CoilSensitivities::new(coils, h, w, maps).unwrap(),
        )
        .unwrap();
        let x = ComplexImage::new(h, w, gaussian_vec(h * w, &mut rng)).unwrap();
        let ex = op.forward(&x).unwrap();
        worst_parseval = worst_parseval.max((ex.norm() - x.norm()).abs() / x.norm());
    }
    let detail =
        format!("max adjoint gap {worst_adj:.2e} (tol 1e-10), max Parseval gap {worst_parseval:.2e} (tol 1e-12)");
    if worst_adj <= 1e-10 && worst_parseval <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Random Hermitian positive definite matrix with eigenvalues in [1, 100]
/// drawn from at most `distinct` values.
fn spd(n: usize, distinct: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let g = DMatrix::from_iterator(n, n, gaussian_vec(n * n, rng));
    let q = g.qr().q();
    let levels: Vec<f64> = (0..distinct)
        .map(|k| {
            if k == 0 {
                1.0
            } else if k == 1 {
                100.0
            } else {
                rng.random_range(1.0..100.0)
            }
        })
        .collect();
    let eig = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        (0..n).map(|i| c(levels[i % distinct.min(n)], 0.0)),
    ));
    let a = &q * eig * q.adjoint();
    (&a + a.adjoint()).map(|v| v * 0.5)
}

fn cg_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut worst_iters = 0;
    for k in 0..50 {
        // Half the systems are small with a generic spectrum, half are up
        // to 64-dimensional with at most 15 distinct eigenvalues, so the
        // Krylov space saturates within the 15-step budget.
        let (n, distinct) = if k % 2 == 0 {
            let n = rng.random_range(2..=15);
            (n, n)
        } else {
            (rng.random_range(16..=64), rng.random_range(2..=15))
        };
        let a = spd(n, distinct, &mut rng);
        let b = gaussian_vec(n, &mut rng);
        let row_major: Vec<Complex64> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)])
            .collect();
        let map = LinearMap::dense(n, row_major, true);
        let (x, rep) = cg_solve(&map, &b, CgOptions::iters(15)).map_err(|e| e.to_string())?;
        let oracle = solve(a, &b);
        worst = worst.max(rel_err(&x, &oracle));
        worst_iters = worst_iters.max(rep.iterations_run);
    }
    let detail = format!("max relative error {worst:.2e} (tol 1e-8), max iterations {worst_iters} (budget 15)");
    if worst <= 1e-8 && worst_iters <= 15 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn vamp_gaussian_prior() -> Outcome {
    let gamma = 0.5;
    let prox = AnalyticProx::tikhonov(gamma).unwrap();
    let cfg = VampConfig {
        max_iters: 20,
        damping: 1.0,
        ..VampConfig::default()
    };
    let mut worst = 0.0f64;
    let mut worst_identity = 0.0f64;
    for (m, n) in [(64, 128), (128, 256)] {
        for seed in 0..10u64 {
            let a = DenseOperator::gaussian(m, n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let y = gaussian_vec(m, &mut rng);
            let out = run_vamp(&a, &y, &prox, &cfg, None, None).map_err(|e| e.to_string())?;
            let dense = dense_of(&a);
            let normal = dense.adjoint() * &dense + DMatrix::<Complex64>::identity(n, n).map(|v| v * gamma);
            let rhs: Vec<Complex64> = (dense.adjoint() * DVector::from_column_slice(&y))
                .iter()
                .copied()
                .collect();
            worst = worst.max(rel_err(&out.x, &solve(normal, &rhs)));
            for d in &out.diagnostics {
                let lhs = 1.0 / d.upsilon_x;
                let rhs = d.mu_x + d.mu_z;
                worst_identity = worst_identity.max((lhs - rhs).abs() / rhs);
            }
        }
    }
    let detail = format!(
        "max ridge gap {worst:.2e} after 20 iterations (tol 1e-6), precision identity gap {worst_identity:.2e} (tol 1e-10)"
    );
    if worst <= 1e-6 && worst_identity <= 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Complex soft threshold at `scale / sqrt(precision)`.
struct ScaledSoftThreshold(f64);

impl ScaledSoftThreshold {
    fn inner(&self, precision: f64) -> AnalyticProx {
        AnalyticProx::soft_threshold(self.0 / precision.max(1e-300).sqrt()).unwrap()
    }
}

impl Denoiser for ScaledSoftThreshold {
    fn denoise(&self, u: &[Complex64], precision: f64) -> teunroll::Result<Vec<Complex64>> {
        self.inner(precision).apply(u, precision)
    }

    fn divergence(&self, u: &[Complex64], precision: f64) -> teunroll::Result<f64> {
        self.inner(precision).divergence(u, precision)
    }
}

/// FISTA on `0.5 ||y - A x||^2 + lambda ||x||_1`.
fn fista(a: &DMatrix<Complex64>, y: &[Complex64], lambda: f64, iters: usize) -> Vec<Complex64> {
    let n = a.ncols();
    let ah = a.adjoint();
    let lip = (ah.clone() * a).symmetric_eigenvalues().max();
    let y = DVector::from_column_slice(y);
    let shrink = AnalyticProx::soft_threshold(lambda / lip).unwrap();
    let mut x = DVector::<Complex64>::zeros(n);
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = &ah * (a * &z - &y);
        let step: Vec<Complex64> = (&z - grad.map(|g| g / lip)).iter().copied().collect();
        let next = DVector::from_vec(shrink.apply(&step, 1.0).unwrap());
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + (&next - &x).map(|v| v * ((t - 1.0) / t_next));
        x = next;
        t = t_next;
    }
    x.iter().copied().collect()
}

fn vamp_sparse_recovery() -> Outcome {
    let (m, n, k) = (128, 256, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = DenseOperator::gaussian(m, n, 40);
    let mut truth = vec![c(0.0, 0.0); n];
    let mut support: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        support.swap(i, j);
        truth[support[i]] = gaussian_vec(1, &mut rng)[0];
    }
    let clean = a.apply(&truth);
    let sigma2 = clean.iter().map(|v| v.norm_sqr()).sum::<f64>() / m as f64 / 1e4;
    let sigma = sigma2.sqrt();
    let noise = gaussian_vec(m, &mut rng);
    // Whiten so the noise has unit precision.
    let y: Vec<Complex64> = clean
        .iter()
        .zip(&noise)
        .map(|(s, e)| (s + e * (sigma2 / 2.0).sqrt()) / sigma)
        .collect();
    let aw = a.scaled(1.0 / sigma);
    let cfg = VampConfig {
        max_iters: 100,
        ..VampConfig::default()
    };
    let nmse_db = |x: &[Complex64]| db(rel_err(x, &truth).powi(2));
    let mut best: Option<(f64, f64, f64)> = None;
    for scale in [0.5, 1.0, 2.0] {
        let out = run_vamp(&aw, &y, &ScaledSoftThreshold(scale), &cfg, None, None).map_err(|e| e.to_string())?;
        let e = nmse_db(&out.x);
        if best.is_none_or(|b| e < b.1) {
            best = Some((scale, e, scale * out.state.mu_z.sqrt()));
        }
    }
    let (scale, vamp_db, lambda) = best.unwrap();
    let oracle_db = nmse_db(&fista(&dense_of(&aw), &y, lambda, 10_000));
    let detail = format!(
        "VAMP NMSE {vamp_db:.2} dB at scale {scale} (need <= -30), FISTA at lambda {lambda:.3e}: {oracle_db:.2} dB (need within 1 dB)"
    );
    if vamp_db <= -30.0 && (vamp_db - oracle_db).abs() <= 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Fixture {
    op: EncodingOperator,
    y: KSpaceData,
}

fn single_coil(seed: u64) -> Fixture {
    let truth = make_phantom(16, 16, 5, seed).unwrap();
    let mask = make_random_mask(16, 16, 2.0, 4, seed).unwrap();
    let op = EncodingOperator::new(mask.clone(), CoilSensitivities::uniform(16, 16)).unwrap();
    let y = add_noise(&op.forward(&truth).unwrap(), &mask, 0.01, seed + 1).unwrap();
    Fixture { op, y }
}

fn fixed_points() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    // (algorithm, mu, gamma, rho, lambda, effective ridge weight)
    let g1 = 1.0 / 2.0;
    let kappa = g1 * 1.1 / (1.0 + g1 * 0.1);
    let cases = [
        (Algorithm::Vsqp, 0.5, 1.0, 0.0, 0.0, 0.5 * 1.0 / 2.0),
        (Algorithm::Admm, 0.5, 0.5, 0.0, 1.0, 0.5 * 0.5),
        (Algorithm::Alg1, 0.5, 1.0, 0.1, 0.0, 0.5 * (1.0 - kappa)),
    ];
    for (i, (alg, mu, gamma, rho, lambda, weight)) in cases.into_iter().enumerate() {
        let f = single_coil(i as u64 + 1);
        let p = Problem::from_kspace(&f.op, &f.y).unwrap();
        let mut cfg = UnrollConfig::new(alg, 200);
        cfg.cg_iters = 200;
        let s = Schedules::defaults(alg, 200)
            .with_mu(mu)
            .and_then(|s| s.with_rho(rho))
            .and_then(|s| s.with_lambda(lambda))
            .map_err(|e| e.to_string())?;
        let prox = AnalyticProx::tikhonov(gamma).unwrap();
        let x = run_unrolled(&cfg, &p, &s, &ProxBank::shared(&prox), None)
            .map_err(|e| e.to_string())?
            .image;
        let oracle = solve(LinearMap::normal(&f.op, weight).to_dense(), p.zero_filled().as_slice());
        let err = rel_err(x.as_slice(), &oracle);
        ok &= err <= 1e-6;
        parts.push(format!("{alg:?} {err:.1e}"));
    }
    let detail = format!(
        "relative gap to dense ridge after 200 iterations: {} (tol 1e-6)",
        parts.join(", ")
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn trajectory(alg: Algorithm, s: &Schedules, prox: &dyn ProxOperator, f: &Fixture) -> Vec<UnrollState> {
    let p = Problem::from_kspace(&f.op, &f.y).unwrap();
    run_unrolled(&UnrollConfig::new(alg, 10), &p, s, &ProxBank::shared(prox), None)
        .unwrap()
        .trajectory
}

fn reduction_lattice() -> Outcome {
    let truth = make_phantom(16, 16, 5, 13).unwrap();
    let mask = teunroll::signal::make_equispaced_mask(16, 16, 2, 4).unwrap();
    let sens = teunroll::signal::make_smooth_sensitivities(16, 16, 4, 13).unwrap();
    let op = EncodingOperator::new(mask.clone(), sens).unwrap();
    let y = add_noise(&op.forward(&truth).unwrap(), &mask, 0.01, 14).unwrap();
    let f = Fixture { op, y };
    let net = ProxNetwork::new(NetworkConfig::resnet_toy(), 1).unwrap();
    let soft = AnalyticProx::soft_threshold(0.02).unwrap();
    let mut checks = 0;
    for prox in [&net as &dyn ProxOperator, &soft] {
        let mut alg1 = Schedules::defaults(Algorithm::Alg1, 10).with_rho(0.0).unwrap();
        alg1.mu.values = (0..10).map(|t| 0.01 + 0.005 * t as f64).collect();
        let mut vte = Schedules::defaults(Algorithm::VsqpTe, 10);
        vte.mu = alg1.mu.clone();
        let a = trajectory(Algorithm::Alg1, &alg1, prox, &f);
        let b = trajectory(Algorithm::VsqpTe, &vte, prox, &f);
        if a.len() != 10 || a.iter().zip(&b).any(|(sa, sb)| sa.x != sb.x || sa.r != sb.z) {
            return Err("alg1 with rho = 0 departs from vsqp_te".into());
        }
        let vte = Schedules::defaults(Algorithm::VsqpTe, 10).with_mu(0.05).unwrap();
        let v = Schedules::defaults(Algorithm::Vsqp, 10).with_mu(0.05).unwrap();
        if trajectory(Algorithm::VsqpTe, &vte, prox, &f) != trajectory(Algorithm::Vsqp, &v, prox, &f) {
            return Err("vsqp_te with constant mu departs from vsqp".into());
        }
        let ate = Schedules::defaults(Algorithm::AdmmTe, 10).with_mu(0.02).unwrap();
        let ad = Schedules::defaults(Algorithm::Admm, 10).with_mu(0.02).unwrap();
        if trajectory(Algorithm::AdmmTe, &ate, prox, &f) != trajectory(Algorithm::Admm, &ad, prox, &f) {
            return Err("admm_te with constant mu departs from admm".into());
        }
        checks += 3;
    }
    Ok(format!(
        "{checks} trajectory pairs bit-identical over 10 unrolls (toy ResNet and soft threshold)"
    ))
}

const FD_STEP: f64 = 1e-5;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

type Primitive = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

fn weighted_loss(inputs: &[Tensor], f: &Primitive, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = random_tensor(tape.value(out).shape(), &mut rng);
    let w = tape.constant(w);
    let loss = tape.dot(out, w);
    let value = tape.value(loss).item();
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(loss).unwrap();
    (value, vars.iter().map(|v| g.require(*v).unwrap().to_vec()).collect())
}

fn primitive_error(inputs: Vec<Tensor>, f: &Primitive) -> f64 {
    let (_, analytic) = weighted_loss(&inputs, f, true);
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut diff = 0.0;
        let mut scale = 0.0;
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= FD_STEP;
            let num = (weighted_loss(&plus, f, false).0 - weighted_loss(&minus, f, false).0) / (2.0 * FD_STEP);
            diff += (analytic[k][i] - num).powi(2);
            scale += num * num;
        }
        worst = worst.max(diff.sqrt() / scale.sqrt().max(1e-12));
    }
    worst
}

fn primitives() -> Vec<(&'static str, Vec<Vec<usize>>, Primitive)> {
    let sym: Rc<Vec<f64>> = {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..25).map(|_| r.random_range(-1.0..1.0)).collect();
        Rc::new((0..25).map(|i| a[i] + a[(i % 5) * 5 + i / 5]).collect())
    };
    vec![
        ("add", vec![vec![2, 3, 4]; 2], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![vec![2, 3, 4]; 2], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![vec![2, 3, 4]; 2], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("div", vec![vec![2, 3, 4]; 2], Box::new(|t, v| t.div(v[0], v[1]))),
        (
            "mul_const",
            vec![vec![2, 3, 4]],
            Box::new(|t, v| t.mul_const(v[0], -1.7)),
        ),
        (
            "scale",
            vec![vec![2, 3, 4], vec![1]],
            Box::new(|t, v| t.scale(v[0], v[1])),
        ),
        ("relu", vec![vec![2, 3, 4]], Box::new(|t, v| t.relu(v[0]))),
        ("silu", vec![vec![2, 3, 4]], Box::new(|t, v| t.silu(v[0]))),
        (
            "reshape",
            vec![vec![2, 3, 4]],
            Box::new(|t, v| t.reshape(v[0], vec![6, 4])),
        ),
        ("dot", vec![vec![3, 5]; 2], Box::new(|t, v| t.dot(v[0], v[1]))),
        ("sum", vec![vec![3, 5]], Box::new(|t, v| t.sum(v[0]))),
        ("mean", vec![vec![3, 5]], Box::new(|t, v| t.mean(v[0]))),
        ("mse", vec![vec![3, 5]; 2], Box::new(|t, v| t.mse(v[0], v[1]))),
        ("index", vec![vec![3, 5]], Box::new(|t, v| t.index(v[0], 4))),
        (
            "matmul",
            vec![vec![3, 4], vec![4, 2]],
            Box::new(|t, v| t.matmul(v[0], v[1])),
        ),
        (
            "conv2d",
            vec![vec![3, 5, 6], vec![2, 3, 3, 3], vec![2]],
            Box::new(|t, v| t.conv2d(v[0], v[1], Some(v[2]))),
        ),
        (
            "conv2d_1x1",
            vec![vec![3, 4, 4], vec![2, 3, 1, 1]],
            Box::new(|t, v| t.conv2d(v[0], v[1], None)),
        ),
        (
            "group_norm",
            vec![vec![4, 3, 3]],
            Box::new(|t, v| t.group_norm(v[0], 2, 1e-5)),
        ),
        (
            "mul_channel",
            vec![vec![3, 2, 4], vec![3]],
            Box::new(|t, v| t.mul_channel(v[0], v[1])),
        ),
        (
            "add_channel",
            vec![vec![3, 2, 4], vec![3]],
            Box::new(|t, v| t.add_channel(v[0], v[1])),
        ),
        (
            "concat",
            vec![vec![2, 3, 3], vec![1, 3, 3]],
            Box::new(|t, v| t.concat(&[v[0], v[1]])),
        ),
        ("avg_pool2", vec![vec![2, 4, 6]], Box::new(|t, v| t.avg_pool2(v[0]))),
        ("upsample2", vec![vec![2, 3, 2]], Box::new(|t, v| t.upsample2(v[0]))),
        (
            "self_adjoint",
            vec![vec![5]],
            Box::new(move |t, v| {
                let m = sym.clone();
                t.self_adjoint(
                    v[0],
                    Rc::new(move |x: &[f64]| (0..5).map(|i| (0..5).map(|j| m[i * 5 + j] * x[j]).sum()).collect()),
                )
            }),
        ),
    ]
}

fn network_gradient_error() -> f64 {
    let mut net = ProxNetwork::new(NetworkConfig::resnet_toy().with_time_embedding(true), 3).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for t in net.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = r.random_range(-0.3..0.3);
        }
    }
    let x = random_tensor(&[2, 8, 8], &mut r);
    let target = random_tensor(&[2, 8, 8], &mut r);
    let loss_of = |net: &ProxNetwork, grads: bool| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let p = net.params().bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let tv = tape.constant(target.clone());
        let y = net.forward_tape(&mut tape, &p, xv, Some(2)).unwrap();
        let loss = tape.mse(y, tv);
        if !grads {
            return (tape.value(loss).item(), Vec::new());
        }
        let g = tape.backward(loss).unwrap();
        let flat = p.iter().flat_map(|v| g.get(*v).unwrap().to_vec()).collect();
        (tape.value(loss).item(), flat)
    };
    let (_, grad) = loss_of(&net, true);
    let (mut diff, mut scale) = (0.0, 0.0);
    for _ in 0..50 {
        let idx = r.random_range(0..grad.len());
        let (mut ti, mut off) = (0, idx);
        while off >= net.params().tensors()[ti].len() {
            off -= net.params().tensors()[ti].len();
            ti += 1;
        }
        let orig = net.params().tensors()[ti].data()[off];
        net.params_mut().tensors_mut()[ti].data_mut()[off] = orig + FD_STEP;
        let lp = loss_of(&net, false).0;
        net.params_mut().tensors_mut()[ti].data_mut()[off] = orig - FD_STEP;
        let lm = loss_of(&net, false).0;
        net.params_mut().tensors_mut()[ti].data_mut()[off] = orig;
        let num = (lp - lm) / (2.0 * FD_STEP);
        diff += (grad[idx] - num).powi(2);
        scale += num * num;
    }
    diff.sqrt() / scale.sqrt()
}

fn autodiff() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = ("", 0.0f64);
    let list = primitives();
    for (name, shapes, f) in &list {
        let inputs = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
        let e = primitive_error(inputs, f);
        if !(e <= worst.1) {
            worst = (name, e);
        }
    }
    let net = network_gradient_error();
    let detail = format!(
        "{} primitives, worst {} {:.1e} (tol 1e-6); TE ResNet 50 coordinates {net:.1e} (tol 1e-5)",
        list.len(),
        worst.0,
        worst.1
    );
    if worst.1 <= 1e-6 && net <= 1e-5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn film_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut tape = Tape::new();
    let f = tape.constant(random_tensor(&[4, 5, 5], &mut rng));
    let ones = tape.constant(Tensor::vector(vec![1.0; 4]));
    let zeros = tape.constant(Tensor::vector(vec![0.0; 4]));
    let alpha = tape.constant(random_tensor(&[4], &mut rng));
    let beta = tape.constant(random_tensor(&[4], &mut rng));
    let gn = tape.group_norm(f, 2, teunroll::nn::layers::GROUP_NORM_EPS);
    let eq13 = film_modulate(&mut tape, f, ones, zeros, 2).map_err(|e| e.to_string())?;
    if tape.value(eq13) != tape.value(gn) {
        return Err("alpha = 1, beta = 0 does not reduce to GroupNorm".into());
    }
    let tau0 = film_residual_modulate(&mut tape, f, alpha, beta, 0.0, 2).map_err(|e| e.to_string())?;
    let flat = film_residual_modulate(&mut tape, f, zeros, zeros, 0.7, 2).map_err(|e| e.to_string())?;
    if tape.value(tau0) != tape.value(f) || tape.value(flat) != tape.value(f) {
        return Err("tau = 0 or alpha = beta = 0 does not reduce to the identity".into());
    }
    let codes: Vec<Vec<f64>> = (0..64).map(|t| sinusoidal_encode(t, 32, 10_000.0).unwrap()).collect();
    for i in 0..64 {
        for j in 0..i {
            if codes[i] == codes[j] {
                return Err(format!("encoder collides at t = {j} and t = {i}"));
            }
        }
    }
    for cfg in [NetworkConfig::resnet_toy(), NetworkConfig::unet_toy()] {
        let mut net = ProxNetwork::new(cfg.with_time_embedding(true), 2).unwrap();
        let names: Vec<String> = net.params().iter().map(|(n, _)| n.to_string()).collect();
        for name in names.iter().filter(|n| n.contains(".film.")) {
            let id = net.params().id(name).unwrap();
            for v in net.params_mut().get_mut(id).data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let x = random_tensor(&[2, 16, 16], &mut rng);
        let a = net.forward(&x, Some(0)).unwrap();
        let b = net.forward(&x, Some(5)).unwrap();
        if a == b {
            return Err(format!("{:?} output does not depend on t", cfg.arch));
        }
    }
    Ok("both FiLM reductions exact, encoder injective on t = 0..63, TE ResNet and U-Net depend on t".into())
}

/// Returns the outcome and, when the time-embedded model trained, its
/// per-sample, per-unroll x/u statistics.
fn training_experiment() -> (Outcome, Option<Vec<f64>>) {
    match train_both() {
        Ok((outcome, x_u)) => (outcome, Some(x_u)),
        Err(e) => (Err(e), None),
    }
}

fn train_both() -> Result<(Outcome, Vec<f64>), String> {
    let spec = DataSpec::default();
    let train_set = synthesize(&spec, 200, 0).map_err(|e| e.to_string())?;
    let test_set = synthesize(&spec, 50, 1).map_err(|e| e.to_string())?;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 4,
        adam: AdamConfig {
            lr: 5e-4,
            ..AdamConfig::default()
        },
        seed: 0,
        threads,
    };
    let run = |alg: Algorithm, sharing: Sharing| -> Result<(f64, Vec<Vec<Option<f64>>>), String> {
        let mut unroll = UnrollConfig::new(alg, 5);
        unroll.sharing = sharing;
        let net = NetworkConfig::resnet_toy().with_time_embedding(sharing == Sharing::TimeEmbedded);
        let mut model = UnrolledModel::new(unroll, net, 0).map_err(|e| e.to_string())?;
        train(&mut model, &train_set, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
        let ev = evaluate(&model, &test_set, threads, None).map_err(|e| e.to_string())?;
        let psnr: Vec<f64> = ev.metrics.iter().map(|m| m.psnr_db).collect();
        Ok((mean(&psnr), ev.x_u_nmse))
    };
    let zf: Vec<f64> = zero_filled_metrics(&test_set)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|m| m.psnr_db)
        .collect();
    let zf = mean(&zf);
    let (shared, _) = run(Algorithm::Vsqp, Sharing::Shared)?;
    let (te, x_u) = run(Algorithm::Alg1, Sharing::TimeEmbedded)?;
    let detail = format!(
        "test PSNR: zero-filled {zf:.2} dB, shared VSQP {shared:.2} dB, alg1 TE {te:.2} dB (need TE >= shared - 0.2, both >= {:.2})",
        zf + 3.0
    );
    let x_u: Vec<f64> = x_u.into_iter().flatten().map(|v| v.unwrap_or(f64::NAN)).collect();
    let outcome = if te >= shared - 0.2 && shared >= zf + 3.0 && te >= zf + 3.0 {
        Ok(detail)
    } else {
        Err(detail)
    };
    Ok((outcome, x_u))
}

fn x_u_diagnostic(x_u: &[f64], unrolls: usize) -> Outcome {
    if x_u.is_empty() || x_u.iter().any(|v| !v.is_finite()) {
        return Err("missing or non-finite x/u statistic".into());
    }
    let worst_after_first = x_u
        .chunks(unrolls)
        .flat_map(|s| s[1..].iter().copied())
        .fold(0.0f64, f64::max);
    let detail = format!("max ||x-u||^2/||x||^2 after unroll 1: {worst_after_first:.3e} (need <= 0.1)");
    if worst_after_first <= 0.1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn parameter_accounting() -> Outcome {
    let count = |cfg: NetworkConfig| ProxNetwork::new(cfg, 0).map(|n| n.num_parameters());
    let res = count(NetworkConfig::resnet_full()).map_err(|e| e.to_string())?;
    let unet = count(NetworkConfig::unet_full()).map_err(|e| e.to_string())?;
    let res_te = count(NetworkConfig::resnet_full().with_time_embedding(true)).map_err(|e| e.to_string())?;
    let unet_te = count(NetworkConfig::unet_full().with_time_embedding(true)).map_err(|e| e.to_string())?;
    let unshared = |cfg: NetworkConfig| -> Result<usize, String> {
        let mut u = UnrollConfig::new(Algorithm::Vsqp, 10);
        u.sharing = Sharing::Unshared;
        Ok(UnrolledModel::new(u, cfg, 0)
            .map_err(|e| e.to_string())?
            .num_network_parameters())
    };
    let res_un = unshared(NetworkConfig::resnet_full())?;
    let unet_un = unshared(NetworkConfig::unet_full())?;
    let ratio = |a: usize, b: usize| a as f64 / b as f64;
    let checks = [
        (0.5..=2.0).contains(&ratio(res, 592_129)),
        (0.5..=2.0).contains(&ratio(unet, 1_724_035)),
        ratio(res_te, res) <= 1.5,
        ratio(unet_te, unet) <= 1.5,
        (9.5..=10.5).contains(&ratio(res_un, res)),
        (9.5..=10.5).contains(&ratio(unet_un, unet)),
    ];
    let detail = format!(
        "ResNet {res} ({:.2}x ref), U-Net {unet} ({:.2}x ref), TE/shared {:.3} and {:.3}, unshared/shared {:.1} and {:.1}",
        ratio(res, 592_129),
        ratio(unet, 1_724_035),
        ratio(res_te, res),
        ratio(unet_te, unet),
        ratio(res_un, res),
        ratio(unet_un, unet)
    );
    if checks.iter().all(|&b| b) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, budget: Duration, start: Instant, outcome: Outcome) {
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:.0} s budget", budget.as_secs_f64())),
            Err(d) => (false, d),
        };
        if !pass {
            self.failures += 1;
        }
        println!(
            "criterion {id:>2} {:<4} {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
}

fn main() {
    let mut report = Report { failures: 0 };
    let secs = Duration::from_secs;
    let t = Instant::now();
    report.record(1, "operator correctness", secs(5), t, operator_correctness());
    let t = Instant::now();
    report.record(2, "CG correctness", secs(5), t, cg_correctness());
    let t = Instant::now();
    report.record(3, "VAMP Gaussian prior", secs(30), t, vamp_gaussian_prior());
    let t = Instant::now();
    report.record(4, "VAMP sparse recovery", secs(60), t, vamp_sparse_recovery());
    let t = Instant::now();
    report.record(5, "fixed points", secs(60), t, fixed_points());
    let t = Instant::now();
    report.record(6, "reduction lattice", secs(10), t, reduction_lattice());
    let t = Instant::now();
    report.record(7, "autodiff", secs(120), t, autodiff());
    let t = Instant::now();
    report.record(8, "FiLM and time embedding", secs(5), t, film_suite());
    let t = Instant::now();
    let (nine, x_u) = training_experiment();
    report.record(9, "desk-scale training", secs(1800), t, nine);
    let t = Instant::now();
    report.record(10, "parameter accounting", secs(5), t, parameter_accounting());
    let t = Instant::now();
    let eleven = match x_u {
        Some(v) => x_u_diagnostic(&v, 5),
        None => Err("training experiment did not complete".into()),
    };
    report.record(11, "x/u diagnostic", secs(5), t, eleven);
    if report.failures > 0 {
        eprintln!("{} acceptance criteria failed", report.failures);
        std::process::exit(1);
    }
}
