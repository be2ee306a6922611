//! Synthetic datasets, unrolled models with trainable parameters, and
//! end-to-end training.
//!
//! Training differentiates straight through the unrolled engine: every CG
//! iteration of every data-fidelity solve is recorded on the tape, so the
//! gradient is exact for the fixed-budget solver that runs at inference.

use crate::linops::CgOptions;
use crate::metrics::MetricReport;
use crate::nn::checkpoint::{load_tensors, save_tensors};
use crate::nn::tape::SelfAdjointMap;
use crate::nn::{Adam, AdamConfig, NetworkConfig, ProxNetwork, Tape, Tensor, Var};
use crate::signal::{
    add_noise, from_planar, make_equispaced_mask, make_phantom, make_random_mask, make_smooth_sensitivities, to_planar,
    CoilSensitivities, ComplexImage, EncodingOperator, KSpaceData, MeasurementOperator, SamplingMask,
};
use crate::unroll::{
    run_unrolled, Algorithm, Problem, ProxBank, ProxOperator, ScalarSchedule, Schedules, Sharing, UnrollConfig,
    UnrollOutput,
};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::rc::Rc;
use std::sync::Arc;

/// One training or evaluation example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub op: Arc<EncodingOperator>,
    pub y: KSpaceData,
    pub reference: ComplexImage,
}

impl Sample {
    pub fn problem(&self) -> Result<Problem<'_, EncodingOperator>> {
        Problem::from_kspace(&self.op, &self.y)
    }

    pub fn zero_filled(&self) -> Result<ComplexImage> {
        self.op.adjoint(&self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Equispaced,
    Random,
}

/// Recipe for synthetic multi-coil phantom data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataSpec {
    pub size: usize,
    pub coils: usize,
    pub ellipses: usize,
    pub acceleration: usize,
    pub acs: usize,
    pub mask: MaskKind,
    /// Noise std per real/imag part at sampled k-space locations.
    pub sigma: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            size: 32,
            coils: 4,
            ellipses: 6,
            acceleration: 4,
            acs: 4,
            mask: MaskKind::Equispaced,
            sigma: 0.01,
        }
    }
}

/// Phantom scaled to unit peak magnitude.
pub fn normalized_phantom(size: usize, ellipses: usize, seed: u64) -> Result<ComplexImage> {
    let img = make_phantom(size, size, ellipses, seed)?;
    let peak = img.magnitude().into_iter().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(img);
    }
    ComplexImage::new(size, size, img.as_slice().iter().map(|v| v / peak).collect())
}

pub fn make_mask(spec: &DataSpec, seed: u64) -> Result<SamplingMask> {
    match spec.mask {
        MaskKind::Equispaced => make_equispaced_mask(spec.size, spec.size, spec.acceleration, spec.acs),
        MaskKind::Random => make_random_mask(spec.size, spec.size, spec.acceleration as f64, spec.acs, seed),
    }
}

/// Per-sample seeds `[phantom, coils, mask, noise]` drawn from one stream.
pub fn sample_seeds(seed: u64, count: usize) -> Vec<[u64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| std::array::from_fn(|_| rng.random())).collect()
}

/// Simulate measurements of `reference` through `sens`. The mask follows
/// `spec` but takes its size from the image.
pub fn simulate(
    spec: &DataSpec,
    reference: ComplexImage,
    sens: CoilSensitivities,
    mask_seed: u64,
    noise_seed: u64,
) -> Result<Sample> {
    let spec = DataSpec {
        size: reference.height(),
        ..*spec
    };
    if reference.width() != reference.height() {
        return Err(Error::dim("reference images must be square"));
    }
    let mask = make_mask(&spec, mask_seed)?;
    let op = EncodingOperator::new(mask.clone(), sens)?;
    let clean = op.forward(&reference)?;
    let y = add_noise(&clean, &mask, spec.sigma, noise_seed)?;
    Ok(Sample {
        op: Arc::new(op),
        y,
        reference,
    })
}

pub fn synthesize(spec: &DataSpec, count: usize, seed: u64) -> Result<Vec<Sample>> {
    sample_seeds(seed, count)
        .into_iter()
        .map(|[p, s, m, n]| {
            let reference = normalized_phantom(spec.size, spec.ellipses, p)?;
            let sens = make_smooth_sensitivities(spec.size, spec.size, spec.coils, s)?;
            simulate(spec, reference, sens, m, n)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    algorithm: Algorithm,
    unrolls: usize,
    cg_iters: usize,
    sharing: Sharing,
    network: NetworkConfig,
}

pub const MODEL_META: &str = "model.toml";

/// Unrolled engine with learned proximal networks and schedules.
#[derive(Clone, Debug)]
pub struct UnrolledModel {
    pub unroll: UnrollConfig,
    pub network: NetworkConfig,
    pub networks: Vec<ProxNetwork>,
    pub schedules: Schedules,
}

fn tensor_of(s: &ScalarSchedule) -> Tensor {
    Tensor::vector(s.values.clone())
}

impl UnrolledModel {
    /// Fresh model with default schedules. Unshared models seed network `i`
    /// with `seed + i`.
    pub fn new(unroll: UnrollConfig, network: NetworkConfig, seed: u64) -> Result<Self> {
        unroll.validate()?;
        let te = unroll.sharing == Sharing::TimeEmbedded;
        if te != network.time_embedded {
            return Err(Error::invalid(format!(
                "{:?} sharing needs a network with time_embedded = {te}",
                unroll.sharing
            )));
        }
        let count = if unroll.sharing == Sharing::Unshared {
            unroll.unrolls
        } else {
            1
        };
        let networks = (0..count)
            .map(|i| ProxNetwork::new(network, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            unroll,
            network,
            networks,
            schedules: Schedules::defaults(unroll.algorithm, unroll.unrolls),
        })
    }

    pub fn num_network_parameters(&self) -> usize {
        self.networks.iter().map(ProxNetwork::num_parameters).sum()
    }

    pub fn bank(&self) -> ProxBank<'_> {
        let ops: Vec<&dyn ProxOperator> = self.networks.iter().map(|n| n as &dyn ProxOperator).collect();
        if ops.len() == 1 {
            ProxBank::shared(ops[0])
        } else {
            ProxBank::per_unroll(ops)
        }
    }

    pub fn reconstruct(&self, sample: &Sample, with_reference: bool) -> Result<UnrollOutput> {
        let p = sample.problem()?;
        let reference = with_reference.then_some(&sample.reference);
        run_unrolled(&self.unroll, &p, &self.schedules, &self.bank(), reference)
    }

    fn trainable_schedules(&self) -> Vec<&ScalarSchedule> {
        let alg = self.unroll.algorithm;
        let mut out = Vec::new();
        if self.schedules.mu.learnable {
            out.push(&self.schedules.mu);
        }
        if alg.uses_rho() && self.schedules.rho.learnable {
            out.push(&self.schedules.rho);
        }
        if alg.uses_lambda() && self.schedules.lambda.learnable {
            out.push(&self.schedules.lambda);
        }
        out
    }

    /// Number of scalars the optimizer updates.
    pub fn num_trainable(&self) -> usize {
        self.num_network_parameters() + self.trainable_schedules().iter().map(|s| s.len()).sum::<usize>()
    }

    /// Trainable scalars in optimizer order: networks, then `mu`, `rho`,
    /// `lambda` where used and learnable.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_trainable());
        for net in &self.networks {
            for t in net.params().tensors() {
                out.extend_from_slice(t.data());
            }
        }
        for s in self.trainable_schedules() {
            out.extend_from_slice(&s.values);
        }
        out
    }

    /// Inverse of [`flat_params`](Self::flat_params); projects `mu` onto its
    /// floor afterwards.
    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_trainable(), "flat parameter length");
        let mut off = 0;
        for net in &mut self.networks {
            for t in net.params_mut().tensors_mut() {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        let alg = self.unroll.algorithm;
        let s = &mut self.schedules;
        let mut take = |sched: &mut ScalarSchedule, used: bool| {
            if used && sched.learnable {
                let n = sched.len();
                sched.values.copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        };
        take(&mut s.mu, true);
        take(&mut s.rho, alg.uses_rho());
        take(&mut s.lambda, alg.uses_lambda());
        s.mu.project();
    }

    /// Record the unrolled reconstruction of `sample` on `tape`. Returns the
    /// final image as a `[2, H, W]` variable and the trainable variables in
    /// [`flat_params`](Self::flat_params) order.
    pub fn forward_tape(&self, tape: &mut Tape, sample: &Sample) -> Result<(Var, Vec<Var>)> {
        self.unroll.validate()?;
        self.schedules.validate(&self.unroll)?;
        let (h, w) = (sample.op.height(), sample.op.width());
        let shape = vec![2, h, w];
        let mut trainable = Vec::new();
        let mut net_vars = Vec::with_capacity(self.networks.len());
        for net in &self.networks {
            let vars = net.params().bind(tape, true);
            trainable.extend_from_slice(&vars);
            net_vars.push(vars);
        }
        let alg = self.unroll.algorithm;
        let mut bind = |tape: &mut Tape, s: &ScalarSchedule, used: bool| {
            if used && s.learnable {
                let v = tape.param(tensor_of(s));
                trainable.push(v);
                v
            } else {
                tape.constant(tensor_of(s))
            }
        };
        let mu = bind(tape, &self.schedules.mu, true);
        let rho = bind(tape, &self.schedules.rho, alg.uses_rho());
        let lambda = bind(tape, &self.schedules.lambda, alg.uses_lambda());
        let pick = |tape: &mut Tape, v: Var, t: usize| {
            let len = tape.value(v).len();
            tape.index(v, if len == 1 { 0 } else { t })
        };

        let ehy = sample.zero_filled()?;
        let ehy = tape.constant(Tensor::new(shape.clone(), ehy.to_planar()));
        let op = sample.op.clone();
        let normal: SelfAdjointMap = Rc::new(move |x: &[f64]| to_planar(&op.normal(&from_planar(x))));
        let cg = self.unroll.cg_options();

        let zeros = tape.constant(Tensor::zeros(shape));
        let (mut x, mut z, mut u, mut r) = (ehy, ehy, zeros, ehy);
        let last = self.unroll.unrolls - 1;
        for t in 0..self.unroll.unrolls {
            let net = &self.networks[if self.networks.len() == 1 { 0 } else { t }];
            let p = &net_vars[if net_vars.len() == 1 { 0 } else { t }];
            let step = net.is_time_embedded().then_some(t);
            let mu_t = pick(tape, mu, t);
            match alg {
                Algorithm::Vsqp | Algorithm::VsqpTe => {
                    x = cg_tape(tape, &normal, mu_t, ehy, z, cg);
                    if t < last {
                        z = net.forward_tape(tape, p, x, step)?;
                    }
                }
                Algorithm::Admm | Algorithm::AdmmTe => {
                    let v = tape.sub(z, u);
                    x = cg_tape(tape, &normal, mu_t, ehy, v, cg);
                    if t < last {
                        let xu = tape.add(x, u);
                        z = net.forward_tape(tape, p, xu, step)?;
                        let d = tape.sub(x, z);
                        let lam = pick(tape, lambda, t);
                        let d = tape.scale(d, lam);
                        u = tape.add(u, d);
                    }
                }
                Algorithm::Alg1 => {
                    x = cg_tape(tape, &normal, mu_t, ehy, r, cg);
                    if t < last {
                        let d = tape.sub(x, r);
                        let rho_t = pick(tape, rho, t);
                        let d = tape.scale(d, rho_t);
                        u = tape.add(x, d);
                        r = net.forward_tape(tape, p, u, step)?;
                    }
                }
            }
        }
        Ok((x, trainable))
    }

    /// Parameters as named tensors: `net{i}.<param>` and `schedule.{mu,rho,lambda}`.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, net) in self.networks.iter().enumerate() {
            for (name, t) in net.params().iter() {
                out.push((format!("net{i}.{name}"), t.clone()));
            }
        }
        out.push(("schedule.mu".into(), tensor_of(&self.schedules.mu)));
        out.push(("schedule.rho".into(), tensor_of(&self.schedules.rho)));
        out.push(("schedule.lambda".into(), tensor_of(&self.schedules.lambda)));
        out
    }

    /// Write a checkpoint directory: tensors, manifest and `model.toml`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        save_tensors(dir, &self.named_tensors())?;
        let meta = ModelMeta {
            algorithm: self.unroll.algorithm,
            unrolls: self.unroll.unrolls,
            cg_iters: self.unroll.cg_iters,
            sharing: self.unroll.sharing,
            network: self.network,
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(dir.join(MODEL_META), text)?;
        Ok(())
    }

    /// Load a checkpoint written by [`save`](Self::save).
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MODEL_META))?;
        let meta: ModelMeta = toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{MODEL_META}: {e}")))?;
        let mut unroll = UnrollConfig::new(meta.algorithm, meta.unrolls);
        unroll.cg_iters = meta.cg_iters;
        unroll.sharing = meta.sharing;
        let mut model = Self::new(unroll, meta.network, 0)?;
        model.load_tensors(&load_tensors(dir)?)?;
        Ok(model)
    }

    /// Overwrite parameters from named tensors, checking names and shapes
    /// against this model's architecture.
    pub fn load_tensors(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let expected = self.named_tensors();
        if entries.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                entries.len(),
                expected.len()
            )));
        }
        let mut per_net: Vec<Vec<(String, Tensor)>> = vec![Vec::new(); self.networks.len()];
        for (name, t) in entries {
            if let Some(rest) = name.strip_prefix("net") {
                let (idx, pname) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::Checkpoint(format!("malformed parameter name {name}")))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("malformed parameter name {name}")))?;
                per_net
                    .get_mut(idx)
                    .ok_or_else(|| Error::Checkpoint(format!("network index {idx} out of range")))?
                    .push((pname.to_string(), t.clone()));
                continue;
            }
            let sched = match name.as_str() {
                "schedule.mu" => &mut self.schedules.mu,
                "schedule.rho" => &mut self.schedules.rho,
                "schedule.lambda" => &mut self.schedules.lambda,
                _ => return Err(Error::Checkpoint(format!("unknown tensor {name}"))),
            };
            if t.shape() != [sched.len()] {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} does not match [{}]",
                    t.shape(),
                    sched.len()
                )));
            }
            sched.values = t.data().to_vec();
        }
        for (net, entries) in self.networks.iter_mut().zip(&per_net) {
            net.params_mut().load(entries)?;
        }
        self.schedules.validate(&self.unroll)
    }
}

/// Conjugate gradient for `(E^H E + mu I) x = E^H y + mu v` recorded on the
/// tape, in the real planar representation (where complex inner products
/// `Re<a, b>` are plain dot products). Stops on the same relative-residual
/// rule as the complex solver.
fn cg_tape(tape: &mut Tape, normal: &SelfAdjointMap, mu: Var, ehy: Var, v: Var, opts: CgOptions) -> Var {
    let mv = tape.scale(v, mu);
    let b = tape.add(ehy, mv);
    let b_norm = tape.value(b).data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = opts.tol * b_norm;
    let zeros = tape.constant(Tensor::zeros(tape.value(b).shape().to_vec()));
    let mut x = zeros;
    let mut r = b;
    let mut p = b;
    let mut rs = tape.dot(r, r);
    for _ in 0..opts.max_iters {
        if tape.value(rs).item().sqrt() <= threshold {
            break;
        }
        let ap = tape.self_adjoint(p, normal.clone());
        let mp = tape.scale(p, mu);
        let ap = tape.add(ap, mp);
        let pap = tape.dot(p, ap);
        let alpha = tape.div(rs, pap);
        let step = tape.scale(p, alpha);
        x = tape.add(x, step);
        let dr = tape.scale(ap, alpha);
        r = tape.sub(r, dr);
        let rs_new = tape.dot(r, r);
        let beta = tape.div(rs_new, rs);
        let bp = tape.scale(p, beta);
        p = tape.add(r, bp);
        rs = rs_new;
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Worker threads for per-sample gradients; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            adam: AdamConfig::default(),
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample training loss of each epoch, measured before each
    /// sample's batch update.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Loss and flat gradient for one sample.
pub fn loss_and_gradient(model: &UnrolledModel, sample: &Sample) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let (x, trainable) = model.forward_tape(&mut tape, sample)?;
    let (h, w) = (sample.reference.height(), sample.reference.width());
    let target = tape.constant(Tensor::new(vec![2, h, w], sample.reference.to_planar()));
    let loss = tape.mse(x, target);
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let mut flat = Vec::with_capacity(model.num_trainable());
    for v in trainable {
        match grads.get(v) {
            Some(g) => flat.extend_from_slice(g),
            None => flat.extend(std::iter::repeat_n(0.0, tape.value(v).len())),
        }
    }
    Ok((value, flat))
}

fn batch_gradients(model: &UnrolledModel, batch: &[&Sample], threads: usize) -> Vec<Result<(f64, Vec<f64>)>> {
    let threads = threads.max(1).min(batch.len().max(1));
    if threads == 1 {
        return batch.iter().map(|s| loss_and_gradient(model, s)).collect();
    }
    let mut results: Vec<Option<Result<(f64, Vec<f64>)>>> = (0..batch.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = batch.len().div_ceil(threads);
        for (slots, samples) in results.chunks_mut(chunk).zip(batch.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, s) in slots.iter_mut().zip(samples) {
                    *slot = Some(loss_and_gradient(model, s));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}

/// Adam on the mean-squared image error. `on_epoch(epoch, loss)` is called
/// after every epoch. Zero epochs leave the model untouched.
pub fn train<F>(model: &mut UnrolledModel, data: &[Sample], cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainReport>
where
    F: FnMut(usize, f64),
{
    cfg.adam.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    if data.is_empty() && cfg.epochs > 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, model.num_trainable());
    let mut params = model.flat_params();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_index = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &data[i]).collect();
            let results = batch_gradients(model, &batch, cfg.threads);
            let mut grad = vec![0.0; params.len()];
            for res in results {
                let (loss, g) = res?;
                if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteLoss { batch: batch_index });
                }
                total += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for v in &mut grad {
                *v *= scale;
            }
            adam.step(&mut params, &grad);
            model.set_flat_params(&params);
            // Keep the optimizer's copy consistent with the projection.
            params = model.flat_params();
            batch_index += 1;
        }
        let mean = total / data.len() as f64;
        log::info!("epoch {}/{}: loss {mean:.6e}", epoch + 1, cfg.epochs);
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        epoch_losses,
        steps: adam.steps_taken(),
    })
}

/// Per-sample metrics of a model's reconstructions, plus the
/// `||x - u||^2 / ||x||^2` statistic of each unroll. Metrics cover the
/// central `crop x crop` region when `crop` is set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Vec<MetricReport>,
    pub x_u_nmse: Vec<Vec<Option<f64>>>,
}

pub fn evaluate(model: &UnrolledModel, data: &[Sample], threads: usize, crop: Option<usize>) -> Result<Evaluation> {
    let eval_one = |s: &Sample| -> Result<(MetricReport, Vec<Option<f64>>)> {
        let out = model.reconstruct(s, true)?;
        let m = scored(&s.reference, &out.image, crop)?;
        Ok((m, out.diagnostics.iter().map(|d| d.x_u_nmse).collect()))
    };
    let threads = threads.max(1).min(data.len().max(1));
    let results: Vec<Result<(MetricReport, Vec<Option<f64>>)>> = if threads == 1 {
        data.iter().map(eval_one).collect()
    } else {
        let mut slots: Vec<Option<Result<(MetricReport, Vec<Option<f64>>)>>> = (0..data.len()).map(|_| None).collect();
        let chunk = data.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (out, samples) in slots.chunks_mut(chunk).zip(data.chunks(chunk)) {
                let f = &eval_one;
                scope.spawn(move || {
                    for (o, s) in out.iter_mut().zip(samples) {
                        *o = Some(f(s));
                    }
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("worker filled every slot"))
            .collect()
    };
    let mut metrics = Vec::with_capacity(data.len());
    let mut x_u = Vec::with_capacity(data.len());
    for r in results {
        let (m, d) = r?;
        metrics.push(m);
        x_u.push(d);
    }
    Ok(Evaluation { metrics, x_u_nmse: x_u })
}

/// Metrics of `test` against `reference`, optionally on a central crop.
pub fn scored(reference: &ComplexImage, test: &ComplexImage, crop: Option<usize>) -> Result<MetricReport> {
    match crop {
        Some(c) => MetricReport::compute(&reference.center_crop(c), &test.center_crop(c)),
        None => MetricReport::compute(reference, test),
    }
}

/// Metrics of the zero-filled adjoint `E^H y`.
pub fn zero_filled_metrics(data: &[Sample]) -> Result<Vec<MetricReport>> {
    data.iter()
        .map(|s| MetricReport::compute(&s.reference, &s.zero_filled()?))
        .collect()
}
