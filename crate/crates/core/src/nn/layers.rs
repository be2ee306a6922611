use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, named parameter storage. Names are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter name {name}");
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Overwrite values from `(name, tensor)` pairs. Every parameter must be
    /// present with a matching shape.
    pub fn load(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                entries.len()
            )));
        }
        for (name, t) in entries {
            let i = *self
                .lookup
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} does not match {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = t.clone();
        }
        Ok(())
    }

    /// Register every parameter on `tape`; as gradient-carrying leaves when
    /// `trainable`, else as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Replace every tensor by zeros.
    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().fill(0.0);
        }
    }
}

fn uniform(shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
}

/// Largest divisor of `channels` not exceeding 8.
pub fn group_count(channels: usize) -> usize {
    (1..=channels.min(8)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    /// Kaiming-uniform fan-in weights, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(vec![cout, cin, k, k], bound, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![cout]));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Var {
        tape.conv2d(x, p[self.weight.0], Some(p[self.bias.0]))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Uniform `±1/sqrt(fan_in)` weights, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(vec![outputs, inputs], bound, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(vec![outputs, inputs]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    /// `W x + b` for a vector `x`.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Var {
        let col = tape.reshape(x, vec![self.inputs, 1]);
        let wx = tape.matmul(p[self.weight.0], col);
        let wx = tape.reshape(wx, vec![self.outputs]);
        tape.add(wx, p[self.bias.0])
    }
}

/// GroupNorm followed by a per-channel affine map (scale 1, shift 0 at init).
#[derive(Clone, Copy, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(vec![channels], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        Self {
            gamma,
            beta,
            groups: group_count(channels),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Var {
        let n = tape.group_norm(x, self.groups, GROUP_NORM_EPS);
        let s = tape.mul_channel(n, p[self.gamma.0]);
        tape.add_channel(s, p[self.beta.0])
    }
}
