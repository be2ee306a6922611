//! Experiment configuration files.
//!
//! A config is a TOML document with an optional top-level `output_dir` and
//! `seed` and the sections `[data]`, `[mask]`, `[model]`, `[unroll]`,
//! `[train]` and `[eval]`. Every field has a default, unknown keys are
//! rejected, and relative paths are resolved against the directory holding
//! the config file. [`ExperimentConfig::resolve`] fills the defaults that
//! depend on other fields so the echoed config is complete.

use crate::nn::{AdamConfig, NetworkConfig};
use crate::train::{DataSpec, MaskKind};
use crate::unroll::{Algorithm, Sharing, MU_FLOOR};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub data: DataSection,
    pub mask: MaskSection,
    pub model: ModelSection,
    pub unroll: UnrollSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seed: 0,
            threads: 1,
            data: DataSection::default(),
            mask: MaskSection::default(),
            model: ModelSection::default(),
            unroll: UnrollSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Training (or reconstruction) data. With `dir` unset, `count` phantoms are
/// synthesized from the experiment seed; otherwise the directory written by
/// the `phantom` subcommand is read and `size`/`coils`/`ellipses` are unused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    pub count: usize,
    pub size: usize,
    pub coils: usize,
    pub ellipses: usize,
    pub sigma: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DataSpec::default();
        Self {
            dir: None,
            count: 1,
            size: d.size,
            coils: d.coils,
            ellipses: d.ellipses,
            sigma: d.sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSection {
    pub kind: MaskKind,
    pub acceleration: usize,
    pub acs: usize,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self {
            kind: MaskKind::Equispaced,
            acceleration: 4,
            acs: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxKind {
    Identity,
    SoftThreshold,
    Tikhonov,
    Resnet,
    Unet,
}

impl ProxKind {
    pub fn is_learned(self) -> bool {
        matches!(self, ProxKind::Resnet | ProxKind::Unet)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSize {
    Toy,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub prox: ProxKind,
    /// Soft-threshold level.
    pub theta: f64,
    /// Tikhonov weight.
    pub gamma: f64,
    pub size: NetworkSize,
    /// Checkpoint directory written by `train`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            prox: ProxKind::Tikhonov,
            theta: 0.05,
            gamma: 1.0,
            size: NetworkSize::Toy,
            checkpoint: None,
        }
    }
}

/// Algorithm name including `vamp`, which is not an unrolled engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmChoice {
    Vsqp,
    Admm,
    Alg1,
    VsqpTe,
    AdmmTe,
    Vamp,
}

impl AlgorithmChoice {
    pub fn unrolled(self) -> Option<Algorithm> {
        match self {
            AlgorithmChoice::Vsqp => Some(Algorithm::Vsqp),
            AlgorithmChoice::Admm => Some(Algorithm::Admm),
            AlgorithmChoice::Alg1 => Some(Algorithm::Alg1),
            AlgorithmChoice::VsqpTe => Some(Algorithm::VsqpTe),
            AlgorithmChoice::AdmmTe => Some(Algorithm::AdmmTe),
            AlgorithmChoice::Vamp => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnrollSection {
    pub algorithm: AlgorithmChoice,
    /// Unrolls for the unrolled engines, iterations for VAMP.
    pub iterations: usize,
    pub cg_iters: usize,
    /// Defaults to `time_embedded` for learned priors with alg1/vsqp_te/admm_te
    /// and to `shared` otherwise.
    pub sharing: Option<Sharing>,
    /// Defaults to the algorithm's standard value.
    pub mu: Option<f64>,
    pub rho: f64,
    pub lambda: f64,
    /// VAMP message damping.
    pub damping: f64,
}

impl Default for UnrollSection {
    fn default() -> Self {
        Self {
            algorithm: AlgorithmChoice::Alg1,
            iterations: 5,
            cg_iters: 15,
            sharing: None,
            mu: None,
            rho: 0.1,
            lambda: 0.1,
            damping: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            lr: AdamConfig::default().lr,
        }
    }
}

/// What the `eval` subcommand scores against the references.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    Model,
    ZeroFilled,
    Reference,
}

/// Held-out data; same conventions as [`DataSection`]. Synthesized test
/// phantoms use the experiment seed plus one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub dir: Option<PathBuf>,
    pub count: usize,
    pub target: EvalTarget,
    /// Score only the central `crop x crop` region (recon and eval metrics).
    pub crop: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            dir: None,
            count: 10,
            target: EvalTarget::Model,
            crop: None,
        }
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) -> Result<()> {
    if p.is_relative() {
        *p = std::path::absolute(base.join(&p))?;
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parse TOML text. Errors carry the dotted key path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::config("<document>", e.message()))?;
        serde_path_to_error::deserialize(value).map_err(|e| {
            let key = e.path().to_string();
            Error::config(
                if key == "." { "<document>".to_string() } else { key },
                e.into_inner().to_string(),
            )
        })
    }

    /// Read, resolve relative paths against the file's directory, fill
    /// dependent defaults and validate.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.resolve_paths(&base)?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) -> Result<()> {
        absolutize(base, &mut self.output_dir)?;
        for p in [&mut self.data.dir, &mut self.eval.dir, &mut self.model.checkpoint]
            .into_iter()
            .flatten()
        {
            absolutize(base, p)?;
        }
        Ok(())
    }

    /// Fill defaults that depend on other fields, then validate.
    pub fn resolve(&mut self) -> Result<()> {
        let u = &mut self.unroll;
        if let Some(alg) = u.algorithm.unrolled() {
            if u.mu.is_none() {
                u.mu = Some(alg.default_mu());
            }
            if u.sharing.is_none() {
                let te = self.model.prox.is_learned() && alg.has_time_varying_mu();
                u.sharing = Some(if te { Sharing::TimeEmbedded } else { Sharing::Shared });
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(key, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("threads", self.threads)?;
        positive("data.size", self.data.size)?;
        positive("data.coils", self.data.coils)?;
        positive("mask.acceleration", self.mask.acceleration)?;
        positive("unroll.iterations", self.unroll.iterations)?;
        positive("unroll.cg_iters", self.unroll.cg_iters)?;
        positive("train.batch_size", self.train.batch_size)?;
        if self.data.dir.is_none() {
            positive("data.count", self.data.count)?;
        }
        if self.eval.dir.is_none() {
            positive("eval.count", self.eval.count)?;
        }
        if let Some(c) = self.eval.crop {
            positive("eval.crop", c)?;
        }
        if !(self.data.sigma >= 0.0) || !self.data.sigma.is_finite() {
            return Err(Error::config("data.sigma", "must be a finite value >= 0"));
        }
        if self.mask.acs > self.data.size {
            return Err(Error::config("mask.acs", "exceeds the image width"));
        }
        if !(self.model.theta >= 0.0) {
            return Err(Error::config("model.theta", "must be >= 0"));
        }
        if !(self.model.gamma >= 0.0) {
            return Err(Error::config("model.gamma", "must be >= 0"));
        }
        if !(self.train.lr > 0.0) || !self.train.lr.is_finite() {
            return Err(Error::config("train.lr", "must be a finite value > 0"));
        }
        let u = &self.unroll;
        if !(u.damping > 0.0 && u.damping <= 1.0) {
            return Err(Error::config("unroll.damping", "must lie in (0, 1]"));
        }
        if let Some(mu) = u.mu {
            if !(mu >= MU_FLOOR) || !mu.is_finite() {
                return Err(Error::config(
                    "unroll.mu",
                    format!("must be a finite value >= {MU_FLOOR}"),
                ));
            }
        }
        for (key, v) in [("unroll.rho", u.rho), ("unroll.lambda", u.lambda)] {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        match u.algorithm {
            AlgorithmChoice::Vamp => {
                if self.model.prox.is_learned() {
                    return Err(Error::config(
                        "model.prox",
                        "vamp needs an analytic prox with a divergence",
                    ));
                }
                if u.sharing.is_some_and(|s| s != Sharing::Shared) {
                    return Err(Error::config("unroll.sharing", "vamp uses a single denoiser"));
                }
            }
            _ => {
                let sharing = u.sharing.unwrap_or(Sharing::Shared);
                if !self.model.prox.is_learned() && sharing != Sharing::Shared {
                    return Err(Error::config("unroll.sharing", "analytic priors are always shared"));
                }
            }
        }
        if self.model.prox == ProxKind::Unet && self.data.dir.is_none() && self.data.size % 4 != 0 {
            return Err(Error::config("data.size", "the U-Net needs sizes divisible by 4"));
        }
        Ok(())
    }

    /// Network architecture for learned priors.
    pub fn network(&self) -> Option<NetworkConfig> {
        let base = match (self.model.prox, self.model.size) {
            (ProxKind::Resnet, NetworkSize::Toy) => NetworkConfig::resnet_toy(),
            (ProxKind::Resnet, NetworkSize::Full) => NetworkConfig::resnet_full(),
            (ProxKind::Unet, NetworkSize::Toy) => NetworkConfig::unet_toy(),
            (ProxKind::Unet, NetworkSize::Full) => NetworkConfig::unet_full(),
            _ => return None,
        };
        Some(base.with_time_embedding(self.unroll.sharing == Some(Sharing::TimeEmbedded)))
    }

    pub fn data_spec(&self) -> DataSpec {
        DataSpec {
            size: self.data.size,
            coils: self.data.coils,
            ellipses: self.data.ellipses,
            acceleration: self.mask.acceleration,
            acs: self.mask.acs,
            mask: self.mask.kind,
            sigma: self.data.sigma,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.lr,
            ..AdamConfig::default()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }
}
