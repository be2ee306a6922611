//! Command-line front end: `phantom`, `mask`, `recon`, `train` and `eval`.

use crate::config::{AlgorithmChoice, EvalTarget, ExperimentConfig, ProxKind};
use crate::export::{write_loss_csv, write_magnitude_png, write_metrics_csv};
use crate::ktn::{self, KtnTensor};
use crate::metrics::{mean_std, MetricReport};
use crate::prox::AnalyticProx;
use crate::signal::{make_smooth_sensitivities, CoilSensitivities, ComplexImage};
use crate::train::{
    make_mask, normalized_phantom, sample_seeds, scored, simulate, synthesize, train, DataSpec, MaskKind, Sample,
    TrainConfig, UnrolledModel,
};
use crate::unroll::{run_unrolled, ProxBank, Schedules, Sharing, UnrollConfig};
use crate::vamp::{run_vamp, ScaledOperator, VampConfig};
use crate::{nn::checkpoint, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "teunroll",
    version,
    about = "Unrolled and message-passing MRI reconstruction"
)]
pub struct Cli {
    /// Master seed; overrides `seed` in config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides `threads` in config files.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write normalized phantoms and coil sensitivities.
    Phantom(PhantomArgs),
    /// Write a k-space sampling mask.
    Mask(MaskArgs),
    /// Reconstruct every sample of the configured data.
    Recon(ConfigArgs),
    /// Train a learned prior end-to-end.
    Train(ConfigArgs),
    /// Score reconstructions of the held-out data.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub coils: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 6)]
    pub ellipses: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MaskKindArg {
    Equispaced,
    Random,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Output KTN1 file; a PNG preview is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub acceleration: usize,
    #[arg(long, default_value_t = 4)]
    pub acs: usize,
    #[arg(long, value_enum, default_value = "equispaced")]
    pub kind: MaskKindArg,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint directory; overrides `model.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::Dimension(_) | Error::Checkpoint(_) => EXIT_CONFIG,
        Error::Numerical(_) | Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        Error::Format { .. } | Error::Io(_) => EXIT_FAILURE,
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(a, cli.seed.unwrap_or(0)),
        Command::Mask(a) => cmd_mask(a, cli.seed.unwrap_or(0)),
        Command::Recon(a) => cmd_recon(&load_config(&a.config, cli)?),
        Command::Train(a) => cmd_train(&load_config(&a.config, cli)?),
        Command::Eval(a) => {
            let mut cfg = load_config(&a.config, cli)?;
            if let Some(ckpt) = &a.checkpoint {
                cfg.model.checkpoint = Some(std::path::absolute(ckpt)?);
            }
            cmd_eval(&cfg)
        }
    }
}

fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn image_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("image_{i:04}.ktn"))
}

fn sens_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("sens_{i:04}.ktn"))
}

pub fn write_image(path: impl AsRef<Path>, img: &ComplexImage) -> Result<()> {
    ktn::write(
        path,
        &KtnTensor::complex(vec![img.height(), img.width()], img.as_slice().to_vec()),
    )
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ComplexImage> {
    let path = path.as_ref();
    let t = ktn::read(path)?;
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if t.dims.len() != 2 {
        return Err(bad("expected a rank-2 complex image"));
    }
    let data = t.as_complex().ok_or_else(|| bad("expected complex data"))?;
    ComplexImage::new(t.dims[0], t.dims[1], data.to_vec())
}

fn read_sens(path: &Path) -> Result<CoilSensitivities> {
    let t = ktn::read(path)?;
    let bad = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if t.dims.len() != 3 {
        return Err(bad("expected a [coils, H, W] complex tensor"));
    }
    let data = t.as_complex().ok_or_else(|| bad("expected complex data"))?;
    CoilSensitivities::new(t.dims[0], t.dims[1], t.dims[2], data.to_vec())
}

/// Write `count` phantoms (`image_NNNN.ktn`, PNG preview) and coil maps
/// (`sens_NNNN.ktn`). Seeds follow [`synthesize`], so a directory written
/// here yields the same samples as synthesizing with the same seed.
pub fn cmd_phantom(a: &PhantomArgs, seed: u64) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    for (i, [p, s, _, _]) in sample_seeds(seed, a.count).into_iter().enumerate() {
        let img = normalized_phantom(a.size, a.ellipses, p)?;
        let sens = make_smooth_sensitivities(a.size, a.size, a.coils, s)?;
        write_image(image_file(&a.out, i), &img)?;
        ktn::write(
            sens_file(&a.out, i),
            &KtnTensor::complex(vec![a.coils, a.size, a.size], sens.as_slice().to_vec()),
        )?;
        write_magnitude_png(a.out.join(format!("image_{i:04}.png")), &img, None)?;
    }
    log::info!("wrote {} phantoms to {}", a.count, a.out.display());
    Ok(())
}

pub fn cmd_mask(a: &MaskArgs, seed: u64) -> Result<()> {
    let spec = DataSpec {
        size: a.size,
        acceleration: a.acceleration,
        acs: a.acs,
        mask: match a.kind {
            MaskKindArg::Equispaced => MaskKind::Equispaced,
            MaskKindArg::Random => MaskKind::Random,
        },
        ..DataSpec::default()
    };
    let mask = make_mask(&spec, seed)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    ktn::write(&a.out, &KtnTensor::mask(vec![mask.rows(), mask.cols()], mask.to_f32()))?;
    let px: Vec<u8> = mask.pattern().iter().map(|&b| if b { 255 } else { 0 }).collect();
    crate::export::write_gray_png(a.out.with_extension("png"), mask.cols(), mask.rows(), &px)?;
    log::info!(
        "mask {}x{}: {} columns, effective R = {:.3}",
        mask.rows(),
        mask.cols(),
        mask.sampled_columns().len(),
        mask.acceleration()
    );
    Ok(())
}

fn load_dir(dir: &Path, spec: &DataSpec, seed: u64) -> Result<Vec<Sample>> {
    let mut count = 0;
    while image_file(dir, count).exists() {
        count += 1;
    }
    if count == 0 {
        return Err(Error::config(
            "data.dir",
            format!("no image_0000.ktn in {}", dir.display()),
        ));
    }
    sample_seeds(seed, count)
        .into_iter()
        .enumerate()
        .map(|(i, [_, _, m, n])| {
            let reference = read_image(image_file(dir, i))?;
            let sens = read_sens(&sens_file(dir, i))?;
            simulate(spec, reference, sens, m, n)
        })
        .collect()
}

fn train_samples(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    match &cfg.data.dir {
        Some(dir) => load_dir(dir, &cfg.data_spec(), cfg.seed),
        None => synthesize(&cfg.data_spec(), cfg.data.count, cfg.seed),
    }
}

fn eval_samples(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    let seed = cfg.seed.wrapping_add(1);
    match &cfg.eval.dir {
        Some(dir) => load_dir(dir, &cfg.data_spec(), seed),
        None => synthesize(&cfg.data_spec(), cfg.eval.count, seed),
    }
}

fn unroll_config(cfg: &ExperimentConfig) -> Result<UnrollConfig> {
    let alg = cfg
        .unroll
        .algorithm
        .unrolled()
        .ok_or_else(|| Error::config("unroll.algorithm", "vamp is not an unrolled engine"))?;
    let mut u = UnrollConfig::new(alg, cfg.unroll.iterations);
    u.cg_iters = cfg.unroll.cg_iters;
    u.sharing = cfg.unroll.sharing.unwrap_or(Sharing::Shared);
    Ok(u)
}

fn schedules(cfg: &ExperimentConfig, u: &UnrollConfig) -> Result<Schedules> {
    let mu = cfg.unroll.mu.unwrap_or(u.algorithm.default_mu());
    Schedules::defaults(u.algorithm, u.unrolls)
        .with_mu(mu)?
        .with_rho(cfg.unroll.rho)?
        .with_lambda(cfg.unroll.lambda)
}

fn analytic_prox(cfg: &ExperimentConfig) -> Result<AnalyticProx> {
    match cfg.model.prox {
        ProxKind::Identity => Ok(AnalyticProx::Identity),
        ProxKind::SoftThreshold => AnalyticProx::soft_threshold(cfg.model.theta),
        ProxKind::Tikhonov => AnalyticProx::tikhonov(cfg.model.gamma),
        ProxKind::Resnet | ProxKind::Unet => Err(Error::config("model.prox", "not an analytic prior")),
    }
}

/// Model for a learned prior: initialized from the experiment seed, then
/// overwritten from `model.checkpoint` when set.
pub fn learned_model(cfg: &ExperimentConfig) -> Result<UnrolledModel> {
    let u = unroll_config(cfg)?;
    let net = cfg
        .network()
        .ok_or_else(|| Error::config("model.prox", "not a learned prior"))?;
    let mut model = UnrolledModel::new(u, net, cfg.seed)?;
    model.schedules = schedules(cfg, &u)?;
    if let Some(dir) = &cfg.model.checkpoint {
        let entries = checkpoint::load_tensors(dir)?;
        model.load_tensors(&entries)?;
        log::info!("loaded checkpoint {}", dir.display());
    }
    Ok(model)
}

enum Reconstructor {
    Learned(UnrolledModel),
    Unrolled(UnrollConfig, Schedules, AnalyticProx),
    /// VAMP with the whitening noise std, if any.
    Vamp(VampConfig, AnalyticProx, Option<f64>),
}

struct Recon {
    image: ComplexImage,
    diagnostics: Vec<u8>,
}

impl Reconstructor {
    fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        if cfg.unroll.algorithm == AlgorithmChoice::Vamp {
            let v = VampConfig {
                max_iters: cfg.unroll.iterations,
                damping: cfg.unroll.damping,
                seed: cfg.seed,
                ..VampConfig::default()
            };
            let sigma = (cfg.data.sigma > 0.0).then_some(cfg.data.sigma);
            return Ok(Reconstructor::Vamp(v, analytic_prox(cfg)?, sigma));
        }
        if cfg.model.prox.is_learned() {
            if cfg.model.checkpoint.is_none() {
                log::warn!("no model.checkpoint; using an untrained network");
            }
            return Ok(Reconstructor::Learned(learned_model(cfg)?));
        }
        let u = unroll_config(cfg)?;
        Ok(Reconstructor::Unrolled(u, schedules(cfg, &u)?, analytic_prox(cfg)?))
    }

    fn run(&self, s: &Sample) -> Result<Recon> {
        let mut diagnostics = Vec::new();
        let image = match self {
            Reconstructor::Learned(m) => {
                let out = m.reconstruct(s, true)?;
                crate::unroll::write_diagnostics_csv(&mut diagnostics, &out.diagnostics)?;
                out.image
            }
            Reconstructor::Unrolled(u, sched, prox) => {
                let p = s.problem()?;
                let out = run_unrolled(u, &p, sched, &ProxBank::shared(prox), Some(&s.reference))?;
                crate::unroll::write_diagnostics_csv(&mut diagnostics, &out.diagnostics)?;
                out.image
            }
            Reconstructor::Vamp(v, prox, sigma) => {
                let reference = Some(s.reference.as_slice());
                let out = match sigma {
                    Some(sigma) => {
                        let op = ScaledOperator::whitening(&*s.op, *sigma)?;
                        run_vamp(&op, &op.scale_data(s.y.as_slice()), prox, v, None, reference)?
                    }
                    None => run_vamp(&*s.op, s.y.as_slice(), prox, v, None, reference)?,
                };
                crate::vamp::write_diagnostics_csv(&mut diagnostics, &out.diagnostics)?;
                ComplexImage::new(s.reference.height(), s.reference.width(), out.x)?
            }
        };
        if image.as_slice().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Numerical("reconstruction produced non-finite values".into()));
        }
        Ok(Recon { image, diagnostics })
    }
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn write_metrics(path: PathBuf, rows: &[MetricReport]) -> Result<()> {
    write_metrics_csv(BufWriter::new(File::create(path)?), rows)
}

fn log_summary(label: &str, rows: &[MetricReport]) {
    let psnr: Vec<f64> = rows.iter().map(|r| r.psnr_db).collect();
    let ssim: Vec<f64> = rows.iter().map(|r| r.ssim).collect();
    let (pm, ps) = mean_std(&psnr);
    let (sm, ss) = mean_std(&ssim);
    log::info!("{label}: PSNR {pm:.2} +- {ps:.2} dB, SSIM {sm:.4} +- {ss:.4}");
}

/// Reconstruct every configured sample. Writes `recon_NNNN.{ktn,png}`,
/// `diagnostics_NNNN.csv`, `metrics.csv` and the effective `config.toml`.
pub fn cmd_recon(cfg: &ExperimentConfig) -> Result<()> {
    let samples = train_samples(cfg)?;
    let rec = Reconstructor::from_config(cfg)?;
    prepare_output(cfg)?;
    let out = &cfg.output_dir;
    let mut rows = Vec::with_capacity(samples.len());
    let mut zf_rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let r = rec.run(s)?;
        write_image(out.join(format!("recon_{i:04}.ktn")), &r.image)?;
        write_magnitude_png(out.join(format!("recon_{i:04}.png")), &r.image, None)?;
        fs::write(out.join(format!("diagnostics_{i:04}.csv")), &r.diagnostics)?;
        rows.push(scored(&s.reference, &r.image, cfg.eval.crop)?);
        zf_rows.push(scored(&s.reference, &s.zero_filled()?, cfg.eval.crop)?);
    }
    write_metrics(out.join("metrics.csv"), &rows)?;
    log_summary("zero-filled", &zf_rows);
    log_summary("reconstruction", &rows);
    Ok(())
}

/// Train the configured learned prior. Writes `checkpoint/`, `loss.csv` and
/// the effective `config.toml`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    if !cfg.model.prox.is_learned() {
        return Err(Error::config(
            "model.prox",
            "training needs a learned prior (resnet or unet)",
        ));
    }
    let samples = train_samples(cfg)?;
    let mut model = learned_model(cfg)?;
    log::info!(
        "training {} on {} samples: {} network parameters",
        model.unroll.algorithm.name(),
        samples.len(),
        model.num_network_parameters()
    );
    prepare_output(cfg)?;
    let tc = TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        adam: cfg.adam(),
        seed: cfg.seed,
        threads: cfg.threads,
    };
    let report = train(&mut model, &samples, &tc, |_, _| {})?;
    model.save(cfg.output_dir.join("checkpoint"))?;
    write_loss_csv(
        BufWriter::new(File::create(cfg.output_dir.join("loss.csv"))?),
        &report.epoch_losses,
    )?;
    Ok(())
}

/// Score the held-out data. Writes `metrics.csv` (per slice plus mean and
/// std rows) and the effective `config.toml`.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<()> {
    let samples = eval_samples(cfg)?;
    let rows: Vec<MetricReport> = match cfg.eval.target {
        EvalTarget::Reference => samples
            .iter()
            .map(|s| scored(&s.reference, &s.reference, cfg.eval.crop))
            .collect::<Result<_>>()?,
        EvalTarget::ZeroFilled => samples
            .iter()
            .map(|s| scored(&s.reference, &s.zero_filled()?, cfg.eval.crop))
            .collect::<Result<_>>()?,
        EvalTarget::Model if cfg.model.prox.is_learned() && cfg.unroll.algorithm != AlgorithmChoice::Vamp => {
            if cfg.model.checkpoint.is_none() {
                return Err(Error::config(
                    "model.checkpoint",
                    "eval of a learned prior needs a checkpoint",
                ));
            }
            crate::train::evaluate(&learned_model(cfg)?, &samples, cfg.threads, cfg.eval.crop)?.metrics
        }
        EvalTarget::Model => {
            let rec = Reconstructor::from_config(cfg)?;
            samples
                .iter()
                .map(|s| scored(&s.reference, &rec.run(s)?.image, cfg.eval.crop))
                .collect::<Result<_>>()?
        }
    };
    prepare_output(cfg)?;
    write_metrics(cfg.output_dir.join("metrics.csv"), &rows)?;
    log_summary("eval", &rows);
    Ok(())
}
