//! Proximal networks: a residual CNN and a small U-Net, each optionally
//! conditioned on the unroll index through FiLM.
//!
//! Inputs and outputs are 2-channel `[2, H, W]` tensors holding the real
//! and imaginary planes of a complex image.

use super::embed::{film_modulate, film_residual_modulate, EmbedConfig, FilmHeads, TimeEmbedder};
use super::layers::{group_count, Conv2d, GroupNorm, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// `blocks` residual blocks of `channels` features, each residual branch
    /// multiplied by `scale`.
    Resnet { blocks: usize, channels: usize, scale: f64 },
    /// Two pooling levels with channel doubling and a bottleneck.
    Unet { base_channels: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub arch: Architecture,
    pub time_embedded: bool,
    /// FiLM residual scale of the time-embedded ResNet block.
    pub tau: f64,
    pub embed: EmbedConfig,
}

impl NetworkConfig {
    pub fn resnet(blocks: usize, channels: usize) -> Self {
        Self {
            arch: Architecture::Resnet {
                blocks,
                channels,
                scale: 0.1,
            },
            time_embedded: false,
            tau: 0.1,
            embed: EmbedConfig::default(),
        }
    }

    pub fn unet(base_channels: usize) -> Self {
        Self {
            arch: Architecture::Unet { base_channels },
            time_embedded: false,
            tau: 0.1,
            embed: EmbedConfig::default(),
        }
    }

    pub fn resnet_full() -> Self {
        Self::resnet(15, 64)
    }

    pub fn resnet_toy() -> Self {
        Self::resnet(3, 16)
    }

    pub fn unet_full() -> Self {
        Self::unet(32)
    }

    pub fn unet_toy() -> Self {
        Self::unet(16)
    }

    pub fn with_time_embedding(mut self, on: bool) -> Self {
        self.time_embedded = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.arch {
            Architecture::Resnet {
                blocks,
                channels,
                scale,
            } => {
                if blocks == 0 || channels == 0 {
                    return Err(Error::invalid("resnet needs at least one block and one channel"));
                }
                if !scale.is_finite() {
                    return Err(Error::invalid("resnet scale must be finite"));
                }
            }
            Architecture::Unet { base_channels } => {
                if base_channels == 0 {
                    return Err(Error::invalid("unet base_channels must be positive"));
                }
            }
        }
        if !self.tau.is_finite() {
            return Err(Error::invalid("tau must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    film: Option<FilmHeads>,
}

#[derive(Clone, Debug)]
struct UBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    /// Affine normalization of static blocks; FiLM replaces it when
    /// time-embedded.
    norm2: Option<GroupNorm>,
    film: Option<FilmHeads>,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    cout: usize,
}

#[derive(Clone, Debug)]
enum Body {
    Resnet {
        conv_in: Conv2d,
        blocks: Vec<ResBlock>,
        conv_out: Conv2d,
        scale: f64,
    },
    Unet {
        conv_in: Conv2d,
        down0: Vec<UBlock>,
        down1: Vec<UBlock>,
        mid: Vec<UBlock>,
        up1: Vec<UBlock>,
        up0: Vec<UBlock>,
        norm_out: GroupNorm,
        conv_out: Conv2d,
    },
}

#[derive(Clone, Debug)]
pub struct ProxNetwork {
    config: NetworkConfig,
    params: ParamStore,
    time: Option<TimeEmbedder>,
    body: Body,
}

fn ublock(
    store: &mut ParamStore,
    name: &str,
    cin: usize,
    cout: usize,
    hidden: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> UBlock {
    let norm1 = GroupNorm::new(store, &format!("{name}.norm1"), cin);
    let conv1 = Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, rng);
    let (norm2, film) = match hidden {
        Some(h) => (None, Some(FilmHeads::new(store, &format!("{name}.film"), h, cout))),
        None => (Some(GroupNorm::new(store, &format!("{name}.norm2"), cout)), None),
    };
    let conv2 = Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, rng);
    let skip = (cin != cout).then(|| Conv2d::new(store, &format!("{name}.skip"), cin, cout, 1, rng));
    UBlock {
        norm1,
        conv1,
        norm2,
        film,
        conv2,
        skip,
        cout,
    }
}

impl ProxNetwork {
    /// Build with freshly initialized parameters drawn from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let time = if config.time_embedded {
            Some(TimeEmbedder::new(&mut store, "time", config.embed, &mut rng)?)
        } else {
            None
        };
        let hidden = time.map(|t| t.config.hidden);
        let body = match config.arch {
            Architecture::Resnet {
                blocks,
                channels,
                scale,
            } => {
                let conv_in = Conv2d::new(&mut store, "conv_in", 2, channels, 3, &mut rng);
                let blocks = (0..blocks)
                    .map(|i| ResBlock {
                        conv1: Conv2d::new(&mut store, &format!("block{i}.conv1"), channels, channels, 3, &mut rng),
                        conv2: Conv2d::new(&mut store, &format!("block{i}.conv2"), channels, channels, 3, &mut rng),
                        film: hidden.map(|h| FilmHeads::new(&mut store, &format!("block{i}.film"), h, channels)),
                    })
                    .collect();
                let conv_out = Conv2d::new(&mut store, "conv_out", channels, 2, 3, &mut rng);
                Body::Resnet {
                    conv_in,
                    blocks,
                    conv_out,
                    scale,
                }
            }
            Architecture::Unet { base_channels: c } => {
                let s = &mut store;
                let r = &mut rng;
                let conv_in = Conv2d::new(s, "conv_in", 2, c, 3, r);
                let down0 = vec![
                    ublock(s, "down0.0", c, c, hidden, r),
                    ublock(s, "down0.1", c, c, hidden, r),
                ];
                let down1 = vec![
                    ublock(s, "down1.0", c, 2 * c, hidden, r),
                    ublock(s, "down1.1", 2 * c, 2 * c, hidden, r),
                ];
                let mid = vec![
                    ublock(s, "mid.0", 2 * c, 4 * c, hidden, r),
                    ublock(s, "mid.1", 4 * c, 4 * c, hidden, r),
                    ublock(s, "mid.2", 4 * c, 4 * c, hidden, r),
                ];
                let up1 = vec![
                    ublock(s, "up1.0", 6 * c, 2 * c, hidden, r),
                    ublock(s, "up1.1", 2 * c, 2 * c, hidden, r),
                ];
                let up0 = vec![
                    ublock(s, "up0.0", 3 * c, c, hidden, r),
                    ublock(s, "up0.1", c, c, hidden, r),
                ];
                let norm_out = GroupNorm::new(s, "norm_out", c);
                let conv_out = Conv2d::new(s, "conv_out", c, 2, 3, r);
                Body::Unet {
                    conv_in,
                    down0,
                    down1,
                    mid,
                    up1,
                    up0,
                    norm_out,
                    conv_out,
                }
            }
        };
        Ok(Self {
            config,
            params: store,
            time,
            body,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn is_time_embedded(&self) -> bool {
        self.time.is_some()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != 2 || shape[1] == 0 || shape[2] == 0 {
            return Err(Error::dim(format!("network input must be [2, H, W], got {shape:?}")));
        }
        if matches!(self.body, Body::Unet { .. }) && (shape[1] % 4 != 0 || shape[2] % 4 != 0) {
            return Err(Error::dim(format!(
                "U-Net needs spatial dims divisible by 4, got {}x{}",
                shape[1], shape[2]
            )));
        }
        Ok(())
    }

    /// Record the forward pass on `tape`. `p` are this network's parameters
    /// bound on the same tape (see [`ParamStore::bind`]).
    pub fn forward_tape(&self, tape: &mut Tape, p: &[Var], x: Var, t: Option<usize>) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        if p.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "{} bound parameters for a network with {}",
                p.len(),
                self.params.len()
            )));
        }
        let emb = match (&self.time, t) {
            (Some(time), Some(t)) => Some(time.forward(tape, p, t)?),
            (Some(_), None) => {
                return Err(Error::invalid("time-embedded network needs an unroll index"));
            }
            (None, _) => None,
        };
        let out = match &self.body {
            Body::Resnet {
                conv_in,
                blocks,
                conv_out,
                scale,
            } => {
                let mut h = conv_in.forward(tape, p, x);
                for b in blocks {
                    let f = b.conv1.forward(tape, p, h);
                    let f = tape.relu(f);
                    let mut f = b.conv2.forward(tape, p, f);
                    if let (Some(film), Some(e)) = (&b.film, emb) {
                        let (alpha, beta) = film.forward(tape, p, e);
                        let groups = group_count(tape.value(f).shape()[0]);
                        f = film_residual_modulate(tape, f, alpha, beta, self.config.tau, groups)?;
                    }
                    let f = tape.mul_const(f, *scale);
                    h = tape.add(h, f);
                }
                conv_out.forward(tape, p, h)
            }
            Body::Unet {
                conv_in,
                down0,
                down1,
                mid,
                up1,
                up0,
                norm_out,
                conv_out,
            } => {
                let run = |tape: &mut Tape, blocks: &[UBlock], mut h: Var| -> Result<Var> {
                    for b in blocks {
                        h = ublock_forward(tape, p, b, h, emb)?;
                    }
                    Ok(h)
                };
                let h = conv_in.forward(tape, p, x);
                let s0 = run(tape, down0, h)?;
                let h = tape.avg_pool2(s0);
                let s1 = run(tape, down1, h)?;
                let h = tape.avg_pool2(s1);
                let h = run(tape, mid, h)?;
                let h = tape.upsample2(h);
                let h = tape.concat(&[h, s1]);
                let h = run(tape, up1, h)?;
                let h = tape.upsample2(h);
                let h = tape.concat(&[h, s0]);
                let h = run(tape, up0, h)?;
                let h = norm_out.forward(tape, p, h);
                let h = tape.silu(h);
                conv_out.forward(tape, p, h)
            }
        };
        Ok(tape.add(x, out))
    }

    /// Inference on a `[2, H, W]` tensor.
    pub fn forward(&self, x: &Tensor, t: Option<usize>) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward_tape(&mut tape, &p, xv, t)?;
        let out = tape.value(y).clone();
        if !out.is_finite() {
            return Err(Error::Numerical("network output is not finite".into()));
        }
        Ok(out)
    }
}

fn ublock_forward(tape: &mut Tape, p: &[Var], b: &UBlock, x: Var, emb: Option<Var>) -> Result<Var> {
    let h = b.norm1.forward(tape, p, x);
    let h = tape.silu(h);
    let h = b.conv1.forward(tape, p, h);
    let h = match (&b.film, emb, &b.norm2) {
        (Some(film), Some(e), _) => {
            let (alpha, beta) = film.forward(tape, p, e);
            film_modulate(tape, h, alpha, beta, group_count(b.cout))?
        }
        (_, _, Some(norm)) => norm.forward(tape, p, h),
        _ => return Err(Error::invalid("time-embedded block evaluated without an embedding")),
    };
    let h = tape.silu(h);
    let h = b.conv2.forward(tape, p, h);
    let skip = match &b.skip {
        Some(conv) => conv.forward(tape, p, x),
        None => x,
    };
    Ok(tape.add(skip, h))
}
