//! Feature extractor, classifier and domain discriminator, with their
//! parameters held in one flat [`ParamStore`].
//!
//! Checkpoints are JSON documents of the form
//!
//! ```text
//! {"format": "toalign-checkpoint-v1",
//!  "params": {"<layer>.<weight|bias>": {"shape": [..], "values": [..]}, ..}}
//! ```
//!
//! with `values` in row-major order, written at full (round-trip) precision.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, PROB_EPS};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "toalign-checkpoint-v1";

/// Index of a parameter tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding(self.values.iter().map(|v| tape.param(v.clone())).collect())
    }

    /// Hash over names, shapes and the exact bits of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            name.hash(&mut h);
            value.shape().hash(&mut h);
            for v in value.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let params = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| {
                let entry = CheckpointEntry {
                    shape: v.shape().to_vec(),
                    values: v.data().to_vec(),
                };
                (n.clone(), entry)
            })
            .collect();
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            params,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Overwrites every parameter from a checkpoint. Names and shapes must
    /// match this store exactly.
    pub fn load_checkpoint_json(&mut self, text: &str) -> Result<()> {
        let doc: Checkpoint = serde_json::from_str(text)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("unknown checkpoint format {:?}", doc.format)));
        }
        if doc.params.len() != self.names.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, model has {}",
                doc.params.len(),
                self.names.len()
            )));
        }
        let mut loaded = Vec::with_capacity(self.values.len());
        for (name, current) in self.names.iter().zip(&self.values) {
            let entry = doc
                .params
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks {name}")))?;
            if entry.shape != current.shape() {
                return Err(Error::Data(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    entry.shape,
                    current.shape()
                )));
            }
            loaded.push(Tensor::new(entry.shape.clone(), entry.values.clone())?);
        }
        self.values = loaded;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    params: BTreeMap<String, CheckpointEntry>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Tape variables for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Binding(Vec<Var>);

impl Binding {
    /// Binds store entries to existing tape variables, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Binding(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Gradients accumulated on the tape, aligned with the store.
    pub fn grads(&self, tape: &Tape) -> Vec<Option<Tensor>> {
        self.0.iter().map(|&v| tape.grad(v).cloned()).collect()
    }
}

/// Glorot-uniform tensor: entries ~ U(-a, a), `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = glorot_bound(fan_in, fan_out);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape")
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Affine layer `y = x W + b` with `W: [inputs, outputs]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            glorot_uniform(rng, &[inputs, outputs], inputs, outputs),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Linear { weight, bias, inputs, outputs }
    }

    /// Accepts `[n, inputs]` or `[inputs]`; output keeps the input's rank.
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let (x2, single) = match shape.as_slice() {
            [m] if *m == self.inputs => (tape.reshape(x, &[1, *m])?, true),
            [_, m] if *m == self.inputs => (x, false),
            _ => {
                return Err(Error::dim(
                    "linear",
                    format!("input {shape:?} does not match width {}", self.inputs),
                ))
            }
        };
        let y = tape.matmul(x2, bind.var(self.weight))?;
        let y = tape.add_bias(y, bind.var(self.bias))?;
        if single {
            tape.reshape(y, &[self.outputs])
        } else {
            Ok(y)
        }
    }
}

/// 3x3 convolution with padding 1 and a per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv3x3 {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let kernels = store.add(
            format!("{name}.weight"),
            glorot_uniform(rng, &[out_channels, in_channels, 3, 3], in_channels * 9, out_channels * 9),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Conv3x3 { kernels, bias, in_channels, out_channels }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, bind.var(self.kernels))?;
        tape.add_bias_channels(y, bind.var(self.bias))
    }
}

impl Tape {
    /// Per-channel bias for `[c, h, w]` or `[n, c, h, w]`.
    fn add_bias_channels(&mut self, x: Var, bias: Var) -> Result<Var> {
        if self.shape(x).len() == 3 {
            let s = self.shape(x).to_vec();
            let x4 = self.reshape(x, &[1, s[0], s[1], s[2]])?;
            let y = self.add_bias(x4, bias)?;
            self.reshape(y, &s)
        } else {
            self.add_bias(x, bias)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channels after the first convolution.
    pub hidden_channels: usize,
    /// Channels `M` of the feature map `F`.
    pub feature_channels: usize,
    /// Width of the discriminator's two hidden layers.
    pub disc_hidden: usize,
    pub disc_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_channels: 16,
            feature_channels: 32,
            disc_hidden: 64,
            disc_dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_channels == 0 || self.feature_channels == 0 || self.disc_hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.disc_dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.disc_dropout)));
        }
        Ok(())
    }
}

/// Smallest spatial size the extractor accepts.
pub const MIN_SPATIAL: usize = 8;

/// Conv(3x3) -> ReLU -> pool(2) -> Conv(3x3) -> ReLU -> pool(2), then GAP.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
}

/// Output of the extractor: the non-negative map `F` and its pooled vector `f`.
#[derive(Clone, Copy, Debug)]
pub struct Features {
    pub map: Var,
    pub pooled: Var,
}

impl Extractor {
    pub fn channels(&self) -> usize {
        self.conv2.out_channels
    }

    /// `x` is `[c, h, w]` or `[n, c, h, w]` with `h, w >= 8`.
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Features> {
        let s = tape.shape(x).to_vec();
        if s.len() < 3 || s[s.len() - 1] < MIN_SPATIAL || s[s.len() - 2] < MIN_SPATIAL {
            return Err(Error::dim(
                "extractor",
                format!("input {s:?} must be [c, h, w] or [n, c, h, w] with h, w >= {MIN_SPATIAL}"),
            ));
        }
        let h = self.conv1.forward(tape, bind, x)?;
        let h = tape.relu(h);
        let h = tape.avg_pool2(h)?;
        let h = self.conv2.forward(tape, bind, h)?;
        let h = tape.relu(h);
        let map = tape.avg_pool2(h)?;
        let pooled = tape.gap(map)?;
        Ok(Features { map, pooled })
    }
}

/// One affine map from `M` features to `K` logits.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub fc: Linear,
}

impl Classifier {
    pub fn num_classes(&self) -> usize {
        self.fc.outputs
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, f: Var) -> Result<Var> {
        self.fc.forward(tape, bind, f)
    }
}

/// `in -> h -> h -> 1` with ReLU and dropout after the two hidden layers and
/// an ε-clamped sigmoid on the output.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
    pub dropout: f64,
}

impl Discriminator {
    pub fn input_width(&self) -> usize {
        self.fc1.inputs
    }

    /// Probability that each row of `v` (`[n, in]`, or one `[in]` vector)
    /// comes from the source domain; shape `[n]`.
    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape, bind: &Binding, v: Var, rng: &mut R) -> Result<Var> {
        let h = self.fc1.forward(tape, bind, v)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.dropout, rng)?;
        let h = self.fc2.forward(tape, bind, h)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, self.dropout, rng)?;
        let logit = self.fc3.forward(tape, bind, h)?;
        let rows = tape.value(logit).len();
        let logit = tape.reshape(logit, &[rows])?;
        let p = tape.sigmoid(logit);
        Ok(tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS))
    }
}

/// G, C and D together with their parameters.
#[derive(Clone, Debug)]
pub struct Networks {
    pub params: ParamStore,
    pub extractor: Extractor,
    pub classifier: Classifier,
    pub discriminator: Discriminator,
}

impl Networks {
    /// Glorot-uniform weights and zero biases, drawn in a fixed order
    /// (extractor, classifier, discriminator) from the seed's init stream.
    pub fn init(cfg: &ModelConfig, in_channels: usize, num_classes: usize, disc_input: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if in_channels == 0 || num_classes < 2 || disc_input == 0 {
            return Err(Error::Config(format!(
                "bad network shape: in_channels={in_channels}, classes={num_classes}, disc_input={disc_input}"
            )));
        }
        let mut rng = rng::stream(seed, Stream::Init);
        let mut params = ParamStore::default();
        let m = cfg.feature_channels;
        let extractor = Extractor {
            conv1: Conv3x3::new(&mut params, "extractor.conv1", in_channels, cfg.hidden_channels, &mut rng),
            conv2: Conv3x3::new(&mut params, "extractor.conv2", cfg.hidden_channels, m, &mut rng),
        };
        let classifier = Classifier {
            fc: Linear::new(&mut params, "classifier.fc", m, num_classes, &mut rng),
        };
        let h = cfg.disc_hidden;
        let discriminator = Discriminator {
            fc1: Linear::new(&mut params, "discriminator.fc1", disc_input, h, &mut rng),
            fc2: Linear::new(&mut params, "discriminator.fc2", h, h, &mut rng),
            fc3: Linear::new(&mut params, "discriminator.fc3", h, 1, &mut rng),
            dropout: cfg.disc_dropout,
        };
        Ok(Networks { params, extractor, classifier, discriminator })
    }

    pub fn extractor_params(&self) -> Vec<usize> {
        let (c1, c2) = (&self.extractor.conv1, &self.extractor.conv2);
        [c1.kernels, c1.bias, c2.kernels, c2.bias].iter().map(|p| p.0).collect()
    }

    pub fn classifier_params(&self) -> Vec<usize> {
        vec![self.classifier.fc.weight.0, self.classifier.fc.bias.0]
    }

    pub fn discriminator_params(&self) -> Vec<usize> {
        let d = &self.discriminator;
        [&d.fc1, &d.fc2, &d.fc3]
            .iter()
            .flat_map(|l| [l.weight.0, l.bias.0])
            .collect()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.params.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.params.load_checkpoint_json(&text)
    }
}
