//! Training for source-only, DANN, DANNP and their task-oriented variants.
//!
//! Every method shares one step: classification loss on the labeled source
//! batch plus, for adversarial methods, the domain loss on discriminator
//! inputs placed behind a gradient reversal layer. G, C and D are updated
//! together by one SGD step; the GRL turns D's minimization into G's
//! maximization.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Sgd, Tape, Var};
use crate::data::{Dataset, DomainData};
use crate::decompose::{self, Attention, Polarity};
use crate::error::{Error, Result};
use crate::nets::{Binding, Discriminator, ModelConfig, Networks};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    SourceOnly,
    #[serde(rename = "DANN")]
    Dann,
    #[serde(rename = "DANNP")]
    Dannp,
    #[serde(rename = "ToAlign_DANN")]
    ToAlignDann,
    #[serde(rename = "ToAlign_DANNP")]
    ToAlignDannp,
    #[serde(rename = "TiAlign_DANN")]
    TiAlignDann,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SourceOnly,
        Method::Dann,
        Method::Dannp,
        Method::ToAlignDann,
        Method::ToAlignDannp,
        Method::TiAlignDann,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "SourceOnly",
            Method::Dann => "DANN",
            Method::Dannp => "DANNP",
            Method::ToAlignDann => "ToAlign_DANN",
            Method::ToAlignDannp => "ToAlign_DANNP",
            Method::TiAlignDann => "TiAlign_DANN",
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != Method::SourceOnly
    }

    /// D sees class probabilities instead of features.
    pub fn conditions_on_probabilities(self) -> bool {
        matches!(self, Method::Dannp | Method::ToAlignDannp)
    }

    /// Which decomposed source feature replaces the holistic one, if any.
    pub fn source_polarity(self) -> Option<Polarity> {
        match self {
            Method::ToAlignDann | Method::ToAlignDannp => Some(Polarity::Positive),
            Method::TiAlignDann => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn disc_input_width(self, feature_channels: usize, num_classes: usize) -> usize {
        if self.conditions_on_probabilities() {
            num_classes
        } else {
            feature_channels
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(skip)]
    pub method: Method,
    #[serde(skip)]
    pub seed: u64,
    pub eta0: f64,
    pub gamma: f64,
    pub tau: f64,
    /// Samples per step, split evenly between source and target.
    pub batch_size: usize,
    pub epochs: usize,
    pub grl_lambda_max: f64,
    pub momentum: f64,
    /// Replaces every class gradient by this constant vector. Diagnostic only.
    #[serde(skip)]
    pub weight_override: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Dann,
            seed: 0,
            eta0: 1e-3,
            gamma: 10.0,
            tau: 0.75,
            batch_size: 32,
            epochs: 10,
            grl_lambda_max: 1.0,
            momentum: 0.9,
            weight_override: None,
        }
    }
}

impl Default for Method {
    fn default() -> Self {
        Method::Dann
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) {
            return Err(Error::Config(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2 (one source and one target sample), got {}",
                self.batch_size
            )));
        }
        if !(self.gamma >= 0.0) || !(self.tau >= 0.0) {
            return Err(Error::Config("gamma and tau must be non-negative".into()));
        }
        if !(self.grl_lambda_max >= 0.0) {
            return Err(Error::Config("grl_lambda_max must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn source_batch(&self) -> usize {
        self.batch_size / 2
    }

    pub fn target_batch(&self) -> usize {
        self.batch_size - self.source_batch()
    }
}

/// Annealed learning rate `eta0 / (1 + gamma p)^tau`.
pub fn lr_at(p: f64, cfg: &TrainConfig) -> f64 {
    cfg.eta0 / (1.0 + cfg.gamma * p).powf(cfg.tau)
}

/// GRL weight warmup `lambda_max (2 / (1 + e^{-10p}) - 1)`.
pub fn grl_lambda_at(p: f64, lambda_max: f64) -> f64 {
    lambda_max * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
}

/// Domain classification loss: mean `-log D(s)` over source rows plus mean
/// `-log(1 - D(t))` over target rows. Inputs go to D as given.
pub fn domain_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    bind: &Binding,
    disc: &Discriminator,
    source: Var,
    target: Var,
    rng: &mut R,
) -> Result<Var> {
    for (side, v) in [("source", source), ("target", target)] {
        if tape.value(v).is_empty() {
            return Err(Error::Contract(format!("empty {side} batch")));
        }
    }
    let ps = disc.forward(tape, bind, source, rng)?;
    let pt = disc.forward(tape, bind, target, rng)?;
    let ls = tape.binary_cross_entropy(ps, 1.0)?;
    let lt = tape.binary_cross_entropy(pt, 0.0)?;
    tape.add(ls, lt)
}

/// The domain loss with the source side replaced by its decomposed feature
/// `f ⊙ attention`; the target keeps its holistic feature.
pub fn domain_loss_toalign<R: Rng + ?Sized>(
    tape: &mut Tape,
    bind: &Binding,
    disc: &Discriminator,
    source_feats: Var,
    source_attention: &Attention,
    target_feats: Var,
    rng: &mut R,
) -> Result<Var> {
    let fp = decompose::apply_attention(tape, source_feats, source_attention)?;
    domain_loss(tape, bind, disc, fp, target_feats, rng)
}

/// Losses of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub l_cls: f64,
    /// Zero for source-only training.
    pub l_d: f64,
    pub step: usize,
    pub progress: f64,
    pub degenerate: usize,
}

/// Everything a step produces before parameters change.
pub struct StepGradients {
    pub grads: Vec<Option<Tensor>>,
    pub report: LossReport,
    /// Parameter indices the step updates.
    pub trainable: Vec<usize>,
}

/// Builds one step's graph and backpropagates it without updating anything.
pub fn step_gradients<R: Rng + ?Sized>(
    nets: &Networks,
    cfg: &TrainConfig,
    source: &Dataset,
    source_idx: &[usize],
    target: &Dataset,
    target_idx: &[usize],
    step: usize,
    progress: f64,
    rng: &mut R,
) -> Result<StepGradients> {
    if source_idx.is_empty() {
        return Err(Error::Contract("empty source batch".into()));
    }
    let labels = source.labels(source_idx)?;
    let mut tape = Tape::new(Mode::Train);
    let bind = nets.params.bind(&mut tape);

    let xs = tape.constant(source.batch(source_idx)?);
    let fs = nets.extractor.forward(&mut tape, &bind, xs)?.pooled;
    let logits_s = nets.classifier.forward(&mut tape, &bind, fs)?;
    let l_cls = tape.cross_entropy(logits_s, &labels)?;

    let mut trainable = nets.extractor_params();
    trainable.extend(nets.classifier_params());
    let mut l_d = 0.0;
    let mut degenerate = 0;
    let mut loss = l_cls;

    if cfg.method.is_adversarial() {
        if target_idx.is_empty() {
            return Err(Error::Contract("empty target batch".into()));
        }
        let xt = tape.constant(target.batch(target_idx)?);
        let ft = nets.extractor.forward(&mut tape, &bind, xt)?.pooled;
        let lambda = grl_lambda_at(progress, cfg.grl_lambda_max);

        let mut src_in = fs;
        let mut src_logits = Some(logits_s);
        if let Some(polarity) = cfg.method.source_polarity() {
            let w = match cfg.weight_override {
                Some(c) => Tensor::full(tape.shape(fs), c),
                None => decompose::class_gradient(&tape, fs, logits_s, &labels)?,
            };
            let att = decompose::attention(tape.value(fs), &w, polarity)?;
            degenerate = att.degenerate;
            src_in = decompose::apply_attention(&mut tape, fs, &att)?;
            src_logits = None;
        }
        let mut tgt_in = ft;
        if cfg.method.conditions_on_probabilities() {
            let sl = match src_logits {
                Some(l) => l,
                None => nets.classifier.forward(&mut tape, &bind, src_in)?,
            };
            src_in = tape.softmax(sl);
            let tl = nets.classifier.forward(&mut tape, &bind, ft)?;
            tgt_in = tape.softmax(tl);
        }
        let src_in = tape.grl(src_in, lambda)?;
        let tgt_in = tape.grl(tgt_in, lambda)?;
        let ld = domain_loss(&mut tape, &bind, &nets.discriminator, src_in, tgt_in, rng)?;
        l_d = tape.value(ld).item()?;
        loss = tape.add(loss, ld)?;
        trainable.extend(nets.discriminator_params());
    }

    tape.backward(loss)?;
    let report = LossReport {
        l_cls: tape.value(l_cls).item()?,
        l_d,
        step,
        progress,
        degenerate,
    };
    Ok(StepGradients { grads: bind.grads(&tape), report, trainable })
}

/// One SGD step at learning rate `lr_at(progress)`.
pub fn train_step<R: Rng + ?Sized>(
    nets: &mut Networks,
    opt: &mut Sgd,
    cfg: &TrainConfig,
    source: &Dataset,
    source_idx: &[usize],
    target: &Dataset,
    target_idx: &[usize],
    step: usize,
    progress: f64,
    rng: &mut R,
) -> Result<LossReport> {
    let sg = step_gradients(nets, cfg, source, source_idx, target, target_idx, step, progress, rng)?;
    opt.step(nets.params.values_mut(), &sg.grads, &sg.trainable, lr_at(progress, cfg))?;
    Ok(sg.report)
}

/// Rows evaluated per forward pass in [`predict`].
const EVAL_CHUNK: usize = 128;

/// Arg-max class for every sample (lowest index wins ties), in eval mode.
pub fn predict(nets: &Networks, dataset: &Dataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(dataset.len());
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new(Mode::Eval);
        let bind = nets.params.bind(&mut tape);
        let x = tape.constant(dataset.batch(chunk)?);
        let f = nets.extractor.forward(&mut tape, &bind, x)?.pooled;
        let logits = nets.classifier.forward(&mut tape, &bind, f)?;
        let k = nets.classifier.num_classes();
        for row in tape.value(logits).data().chunks(k) {
            out.push(argmax(row));
        }
    }
    Ok(out)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose prediction equals their label.
pub fn evaluate(nets: &Networks, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Contract("evaluate on an empty dataset".into()));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let labels = dataset.labels(&all)?;
    let preds = predict(nets, dataset)?;
    let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// One line of the per-epoch log. Epoch 0 is the untrained model and has no
/// losses; source-only runs never have a domain loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub method: Method,
    pub seed: u64,
    pub epoch: usize,
    pub l_cls: Option<f64>,
    pub l_d: Option<f64>,
    pub target_acc: f64,
    pub degenerate_decomp_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub method: Method,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
}

impl ExperimentRecord {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("record holds the initial evaluation")
    }
}

pub struct TrainOutcome {
    pub record: ExperimentRecord,
    pub nets: Networks,
}

pub fn build_networks(cfg: &TrainConfig, model: &ModelConfig, data: &DomainData) -> Result<Networks> {
    let first = data
        .source_train
        .samples
        .first()
        .ok_or_else(|| Error::Contract("empty source dataset".into()))?;
    let in_channels = first.x.shape()[0];
    let k = data.source_train.samples.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1);
    let k = k.max(data.target_test.samples.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1));
    let disc_in = cfg.method.disc_input_width(model.feature_channels, k);
    Networks::init(model, in_channels, k, disc_in, cfg.seed)
}

pub fn train_loop(cfg: &TrainConfig, model: &ModelConfig, data: &DomainData) -> Result<TrainOutcome> {
    train_loop_with(cfg, model, data, |_| {})
}

/// Trains for `cfg.epochs` epochs over the source set, drawing target batches
/// cyclically from a reshuffled target set. Progress runs linearly from 0 to
/// 1 across all steps. `on_epoch` sees each record as it is produced.
pub fn train_loop_with(
    cfg: &TrainConfig,
    model: &ModelConfig,
    data: &DomainData,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.method.is_adversarial() && data.target_train.is_empty() {
        return Err(Error::Contract("adversarial training needs target samples".into()));
    }
    let mut nets = build_networks(cfg, model, data)?;
    let mut opt = Sgd::new(cfg.momentum)?;
    let mut dropout_rng = rng::stream(cfg.seed, Stream::Dropout);
    let mut order_rng = rng::stream(cfg.seed, Stream::DataOrder);

    let record_for = |epoch, l_cls, l_d, acc, degenerate| EpochRecord {
        method: cfg.method,
        seed: cfg.seed,
        epoch,
        l_cls,
        l_d,
        target_acc: acc,
        degenerate_decomp_count: degenerate,
    };
    let initial = record_for(0, None, None, evaluate(&nets, &data.target_test)?, 0);
    on_epoch(&initial);
    let mut epochs = vec![initial];

    let n_src = data.source_train.len();
    let (sb, tb) = (cfg.source_batch(), cfg.target_batch());
    let steps_per_epoch = n_src.div_ceil(sb);
    let total = cfg.epochs * steps_per_epoch;
    let mut target_order: Vec<usize> = (0..data.target_train.len()).collect();
    target_order.shuffle(&mut order_rng);
    let mut target_cursor = 0;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let mut source_order: Vec<usize> = (0..n_src).collect();
        source_order.shuffle(&mut order_rng);
        let (mut sum_cls, mut sum_d, mut degenerate) = (0.0, 0.0, 0);
        for batch in source_order.chunks(sb) {
            let mut target_idx = Vec::with_capacity(tb);
            if cfg.method.is_adversarial() {
                while target_idx.len() < tb {
                    if target_cursor == target_order.len() {
                        target_order.shuffle(&mut order_rng);
                        target_cursor = 0;
                    }
                    target_idx.push(target_order[target_cursor]);
                    target_cursor += 1;
                }
            }
            let progress = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
            let report = train_step(
                &mut nets,
                &mut opt,
                cfg,
                &data.source_train,
                batch,
                &data.target_train,
                &target_idx,
                step,
                progress,
                &mut dropout_rng,
            )?;
            if !report.l_cls.is_finite() || !report.l_d.is_finite() {
                return Err(Error::Contract(format!("non-finite loss at step {step}")));
            }
            sum_cls += report.l_cls;
            sum_d += report.l_d;
            degenerate += report.degenerate;
            step += 1;
        }
        let n = steps_per_epoch as f64;
        let l_d = cfg.method.is_adversarial().then_some(sum_d / n);
        let rec = record_for(epoch, Some(sum_cls / n), l_d, evaluate(&nets, &data.target_test)?, degenerate);
        on_epoch(&rec);
        epochs.push(rec);
    }
    Ok(TrainOutcome {
        record: ExperimentRecord { method: cfg.method, seed: cfg.seed, epochs },
        nets,
    })
}
