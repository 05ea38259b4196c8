//! The invariant and gradient suites behind the `check` verb.

use std::time::Instant;

use rand::Rng;
use toalign_core::autodiff::gradcheck::{check_gradients_in, numeric_gradient_in, relative_error, GradCheck, FD_STEP};
use toalign_core::autodiff::{Mode, Sgd, Tape, Var};
use toalign_core::data::BlobConfig;
use toalign_core::decompose::{class_gradient, decompose};
use toalign_core::nets::{Binding, Linear, ModelConfig, Networks, ParamStore};
use toalign_core::rng::{self, ExperimentRng, Stream};
use toalign_core::train::{self, domain_loss, grl_lambda_at, lr_at, Method, TrainConfig};
use toalign_core::{Result, Tensor};

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, failures: Vec<String>, summary: String) -> Self {
        let passed = failures.is_empty();
        let detail = if passed { summary } else { format!("{summary}; {}", failures.join("; ")) };
        CheckOutcome { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<CheckOutcome>) -> Self {
        r.unwrap_or_else(|e| CheckOutcome { name, passed: false, detail: format!("error: {e}") })
    }
}

pub const GRAD_TOL: f64 = 1e-4;
pub const KINK_MARGIN: f64 = 1e-3;
pub const GRAD_SEEDS: u64 = 10;

fn uniform(rng: &mut ExperimentRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

fn probe(t: &mut Tape, y: Var, r: &[f64]) -> Result<Var> {
    let shape = t.shape(y).to_vec();
    let r = t.constant(Tensor::new(shape, r[..t.value(y).len()].to_vec())?);
    let p = t.hadamard(y, r)?;
    Ok(t.sum(p))
}

type OpFn = fn(&mut Tape, &[Var]) -> Result<Var>;

/// Differentiable ops with their input shapes and sampling ranges.
fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, (f64, f64), OpFn)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], (-1.0, 1.0), |t, v| t.matmul(v[0], v[1])),
        ("transpose", vec![vec![3, 4]], (-1.0, 1.0), |t, v| t.transpose(v[0])),
        ("reshape", vec![vec![3, 4]], (-1.0, 1.0), |t, v| t.reshape(v[0], &[6, 2])),
        ("add", vec![vec![2, 3], vec![2, 3]], (-1.0, 1.0), |t, v| t.add(v[0], v[1])),
        ("add_bias", vec![vec![2, 3, 2, 2], vec![3]], (-1.0, 1.0), |t, v| t.add_bias(v[0], v[1])),
        ("hadamard", vec![vec![2, 3], vec![2, 3]], (-1.0, 1.0), |t, v| t.hadamard(v[0], v[1])),
        ("scale", vec![vec![5]], (-1.0, 1.0), |t, v| Ok(t.scale(v[0], -1.5))),
        ("sum", vec![vec![2, 3]], (-1.0, 1.0), |t, v| Ok(t.sum(v[0]))),
        ("relu", vec![vec![4, 5]], (-1.0, 1.0), |t, v| Ok(t.relu(v[0]))),
        ("sigmoid", vec![vec![4, 5]], (-4.0, 4.0), |t, v| Ok(t.sigmoid(v[0]))),
        ("clamp", vec![vec![4, 5]], (-1.0, 1.0), |t, v| Ok(t.clamp(v[0], -0.5, 0.5))),
        ("conv2d", vec![vec![2, 2, 5, 4], vec![3, 2, 3, 3]], (-1.0, 1.0), |t, v| t.conv2d(v[0], v[1])),
        ("avg_pool2", vec![vec![2, 3, 5, 4]], (-1.0, 1.0), |t, v| t.avg_pool2(v[0])),
        ("gap", vec![vec![2, 3, 4, 4]], (-1.0, 1.0), |t, v| t.gap(v[0])),
        ("softmax", vec![vec![3, 4]], (-3.0, 3.0), |t, v| Ok(t.softmax(v[0]))),
        ("cross_entropy", vec![vec![4, 3]], (-3.0, 3.0), |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2])),
        ("bce_source", vec![vec![6]], (0.05, 0.95), |t, v| t.binary_cross_entropy(v[0], 1.0)),
        ("bce_target", vec![vec![6]], (0.05, 0.95), |t, v| t.binary_cross_entropy(v[0], 0.0)),
    ]
}

fn small_model() -> ModelConfig {
    ModelConfig { hidden_channels: 3, feature_channels: 4, disc_hidden: 5, disc_dropout: 0.5 }
}

/// Redraws until the base point is clear of ReLU kinks: every ReLU input at
/// least `KINK_MARGIN` from zero for single ops, at most 5% of coordinates
/// crossing a kink for composed graphs.
fn kink_free(name: &str, mut draw: impl FnMut() -> Result<GradCheck>, strict: bool) -> Result<GradCheck> {
    for _ in 0..100 {
        let c = draw()?;
        let clear = if strict { c.clear_of_kinks(KINK_MARGIN) } else { c.skipped * 20 <= c.checked };
        if clear {
            return Ok(c);
        }
    }
    Err(toalign_core::Error::Contract(format!("{name}: no kink-free sample")))
}

fn g_grl_d_check(seed: u64, lambda: f64) -> Result<GradCheck> {
    let nets = Networks::init(&small_model(), 1, 3, 4, seed)?;
    let mut rng = rng::stream(200 + seed, Stream::Generate);
    let np = nets.params.len();
    let (g, d) = (nets.extractor_params(), nets.discriminator_params());
    kink_free(
        "G->GRL->D",
        || {
            let xs = uniform(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
            let xt = uniform(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
            let mask_seed: u64 = rng.gen();
            let inputs = nets.params.values().to_vec();
            let graph = |t: &mut Tape, v: &[Var], lam: Option<f64>| -> Result<Var> {
                let bind = Binding::from_vars(v[..np].to_vec());
                let mut mask = rng::stream(mask_seed, Stream::Dropout);
                let mut side = |t: &mut Tape, x: &Tensor, target: f64| -> Result<Var> {
                    let x = t.constant(x.clone());
                    let f = nets.extractor.forward(t, &bind, x)?.pooled;
                    let f = match lam {
                        Some(l) => t.grl(f, l)?,
                        None => f,
                    };
                    let p = nets.discriminator.forward(t, &bind, f, &mut mask)?;
                    t.binary_cross_entropy(p, target)
                };
                let ls = side(t, &xs, 1.0)?;
                let lt = side(t, &xt, 0.0)?;
                t.add(ls, lt)
            };
            let mut tape = Tape::new(Mode::Train);
            let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
            let loss = graph(&mut tape, &vars, Some(lambda))?;
            tape.backward(loss)?;
            let plain = |t: &mut Tape, v: &[Var]| graph(t, v, None);
            let (numeric, crossed) = numeric_gradient_in(Mode::Train, &plain, &inputs, FD_STEP)?;
            let (mut skipped, mut checked, mut rel_errors) = (0, 0, Vec::new());
            for i in 0..np {
                // parameters below the GRL see the reversed, scaled gradient
                let factor = if g.contains(&i) {
                    -lambda
                } else if d.contains(&i) {
                    1.0
                } else {
                    continue;
                };
                let a = tape.grad(vars[i]).expect("leaf grad");
                let (mut av, mut nv) = (Vec::new(), Vec::new());
                for j in 0..a.len() {
                    if crossed[i][j] {
                        skipped += 1;
                    } else {
                        checked += 1;
                        av.push(a.data()[j]);
                        nv.push(factor * numeric[i].data()[j]);
                    }
                }
                rel_errors.push(relative_error(&av, &nv));
            }
            Ok(GradCheck { rel_errors, relu_margin: tape.min_relu_margin(), skipped, checked })
        },
        false,
    )
}

fn g_c_ce_check(seed: u64) -> Result<GradCheck> {
    let nets = Networks::init(&small_model(), 1, 3, 4, seed)?;
    let mut rng = rng::stream(100 + seed, Stream::Generate);
    let np = nets.params.len();
    kink_free(
        "G->C->CE",
        || {
            let mut inputs = nets.params.values().to_vec();
            inputs.push(uniform(&mut rng, &[2, 1, 8, 8], 0.0, 1.0));
            let labels = [rng.gen_range(0..3), rng.gen_range(0..3)];
            let f = |t: &mut Tape, v: &[Var]| {
                let bind = Binding::from_vars(v[..np].to_vec());
                let feats = nets.extractor.forward(t, &bind, v[np])?;
                let logits = nets.classifier.forward(t, &bind, feats.pooled)?;
                t.cross_entropy(logits, &labels)
            };
            check_gradients_in(Mode::Eval, f, &inputs, FD_STEP)
        },
        false,
    )
}

/// Criterion 1: central differences for every op and both composed graphs,
/// plus the exact GRL backward.
pub fn gradient_suite() -> CheckOutcome {
    let start = Instant::now();
    CheckOutcome::from_result("gradient oracle", (|| {
        let mut failures = Vec::new();
        let mut worst = (0.0f64, String::new());
        let mut note = |name: String, c: &GradCheck, failures: &mut Vec<String>| {
            let e = c.max_rel_error();
            if e > worst.0 {
                worst = (e, name.clone());
            }
            if e >= GRAD_TOL {
                failures.push(format!("{name}: rel err {e:.2e}"));
            }
        };
        let mut cases = 0;
        for seed in 0..GRAD_SEEDS {
            let mut rng = rng::stream(seed, Stream::Generate);
            for (name, shapes, (lo, hi), op) in op_cases() {
                let c = kink_free(
                    name,
                    || {
                        let inputs: Vec<Tensor> = shapes.iter().map(|s| uniform(&mut rng, s, lo, hi)).collect();
                        let r: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        check_gradients_in(Mode::Eval, |t: &mut Tape, v: &[Var]| { let y = op(t, v)?; probe(t, y, &r) }, &inputs, FD_STEP)
                    },
                    true,
                )?;
                note(format!("{name} seed {seed}"), &c, &mut failures);
                cases += 1;
            }
            let x = uniform(&mut rng, &[4, 6], -1.0, 1.0);
            let r: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mask_seed: u64 = rng.gen();
            let c = check_gradients_in(
                Mode::Train,
                |t: &mut Tape, v: &[Var]| {
                    let y = t.dropout(v[0], 0.3, &mut rng::stream(mask_seed, Stream::Dropout))?;
                    probe(t, y, &r)
                },
                &[x],
                FD_STEP,
            )?;
            note(format!("dropout seed {seed}"), &c, &mut failures);
            note(format!("G->C->CE seed {seed}"), &g_c_ce_check(seed)?, &mut failures);
            note(format!("G->GRL->D seed {seed}"), &g_grl_d_check(seed, 0.7)?, &mut failures);
            cases += 3;

            for lambda in [0.0, 0.5, 1.0] {
                let x = uniform(&mut rng, &[3, 4], -1.0, 1.0);
                let r: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut t = Tape::new(Mode::Eval);
                let xv = t.param(x.clone());
                let y = t.grl(xv, lambda)?;
                let loss = probe(&mut t, y, &r)?;
                t.backward(loss)?;
                let exact = t.value(y) == &x
                    && t.grad(xv).expect("leaf grad").data().iter().zip(&r).all(|(g, u)| *g == -lambda * u);
                if !exact {
                    failures.push(format!("GRL lambda {lambda} seed {seed} not exact"));
                }
            }
        }
        let secs = start.elapsed().as_secs_f64();
        if secs >= 60.0 {
            failures.push(format!("took {secs:.1}s"));
        }
        Ok(CheckOutcome::new(
            "gradient oracle",
            failures,
            format!("{cases} cases over {GRAD_SEEDS} seeds, worst rel err {:.2e} ({}), GRL exact, {secs:.1}s", worst.0, worst.1),
        ))
    })())
}

/// Criterion 2: energy conservation, sign symmetry, constant-weight identity
/// and scale covariance over random trials.
pub fn decomposition_invariants(trials: usize) -> CheckOutcome {
    CheckOutcome::from_result("decomposition invariants", (|| {
        let mut rng = rng::stream(2024, Stream::Generate);
        let mut failures = Vec::new();
        let energy = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let (mut worst_energy, mut worst_scale) = (0.0f64, 0.0f64);
        for trial in 0..trials {
            let m = rng.gen_range(1..=64);
            let f = uniform(&mut rng, &[m], 0.0, 5.0);
            let w = uniform(&mut rng, &[m], -2.0, 2.0);
            let d = decompose(&f, &w)?;
            let (ef, ep) = (energy(f.data()), energy(d.positive.data()));
            worst_energy = worst_energy.max((ep - ef).abs() / ef);
            if (ep - ef).abs() > 1e-9 * ef {
                failures.push(format!("trial {trial}: energy {ep} vs {ef}"));
            }
            if d.negative.data().iter().zip(d.positive.data()).any(|(n, p)| *n != -p) {
                failures.push(format!("trial {trial}: f_n != -f_p"));
            }
            let c = rng.gen_range(0.01..10.0);
            let constant = decompose(&f, &Tensor::full(&[m], c))?;
            if constant.positive.data().iter().zip(f.data()).any(|(p, x)| (p - x).abs() > 1e-12) {
                failures.push(format!("trial {trial}: constant weight {c} changed f"));
            }
            for alpha in [0.1, 10.0] {
                let scaled = decompose(&f, &w.map(|x| alpha * x))?;
                for (a, b) in scaled.positive.data().iter().zip(d.positive.data()) {
                    worst_scale = worst_scale.max((a - b).abs());
                    if (a - b).abs() > 1e-9 {
                        failures.push(format!("trial {trial}: alpha {alpha} moved f_p by {}", (a - b).abs()));
                    }
                }
            }
        }
        failures.truncate(5);
        Ok(CheckOutcome::new(
            "decomposition invariants",
            failures,
            format!("{trials} trials, worst relative energy gap {worst_energy:.1e}, worst scale drift {worst_scale:.1e}"),
        ))
    })())
}

/// Criterion 3: for a purely linear classifier the class gradient is the
/// class's weight vector, bit for bit.
pub fn linear_class_gradient() -> CheckOutcome {
    CheckOutcome::from_result("linear class gradient", (|| {
        let mut failures = Vec::new();
        let mut rng = rng::stream(3, Stream::Generate);
        for trial in 0..20u64 {
            let (m, k, n) = (rng.gen_range(2..40), rng.gen_range(2..10), rng.gen_range(1..6));
            let mut store = ParamStore::default();
            let c = Linear::new(&mut store, "c", m, k, &mut rng::stream(trial, Stream::Init));
            *store.get_mut(c.bias) = uniform(&mut rng, &[k], -1.0, 1.0);
            let mut tape = Tape::new(Mode::Eval);
            let bind = store.bind(&mut tape);
            let f = tape.param(uniform(&mut rng, &[n, m], 0.0, 3.0));
            let logits = c.forward(&mut tape, &bind, f)?;
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let w = class_gradient(&tape, f, logits, &labels)?;
            // the weight is stored [m, k]: class j's vector is column j
            let weight = store.get(c.weight).data();
            for (row, &label) in labels.iter().enumerate() {
                let got = &w.data()[row * m..(row + 1) * m];
                if (0..m).any(|i| got[i].to_bits() != weight[i * k + label].to_bits()) {
                    failures.push(format!("trial {trial} row {row}"));
                }
            }
        }
        Ok(CheckOutcome::new("linear class gradient", failures, "20 random linear classifiers, bitwise equal".into()))
    })())
}

/// Criterion 4: with every class gradient forced to one positive constant,
/// task-oriented training reproduces the baseline's losses step for step.
pub fn reduction_consistency(steps: usize) -> CheckOutcome {
    CheckOutcome::from_result("reduction consistency", (|| {
        let data = BlobConfig::default().generate()?;
        let model = ModelConfig::default();
        let base = TrainConfig { method: Method::Dann, eta0: 0.01, seed: 11, ..Default::default() };
        let aligned = TrainConfig { method: Method::ToAlignDann, weight_override: Some(0.37), ..base.clone() };
        let mut a = train::build_networks(&base, &model, &data)?;
        let mut b = train::build_networks(&aligned, &model, &data)?;
        let (mut oa, mut ob) = (Sgd::new(base.momentum)?, Sgd::new(base.momentum)?);
        let (mut ra, mut rb) = (rng::stream(11, Stream::Dropout), rng::stream(11, Stream::Dropout));
        let n = data.source_train.len();
        let mut worst = 0.0f64;
        let mut failures = Vec::new();
        for step in 0..steps {
            let idx: Vec<usize> = (0..8).map(|i| (step * 8 + i) % n).collect();
            let p = step as f64 / (steps - 1).max(1) as f64;
            let la = train::train_step(&mut a, &mut oa, &base, &data.source_train, &idx, &data.target_train, &idx, step, p, &mut ra)?;
            let lb = train::train_step(&mut b, &mut ob, &aligned, &data.source_train, &idx, &data.target_train, &idx, step, p, &mut rb)?;
            let gap = (la.l_cls - lb.l_cls).abs().max((la.l_d - lb.l_d).abs());
            worst = worst.max(gap);
            if gap > 1e-9 {
                failures.push(format!("step {step}: gap {gap:.2e}"));
            }
        }
        Ok(CheckOutcome::new("reduction consistency", failures, format!("{steps} steps, worst loss gap {worst:.1e}")))
    })())
}

/// Criterion 5: schedule values and defaults.
pub fn schedule_spots() -> CheckOutcome {
    let cfg = TrainConfig::default();
    let mut failures = Vec::new();
    if lr_at(0.0, &cfg) != cfg.eta0 {
        failures.push("lr_at(0) != eta0".into());
    }
    let spot = lr_at(0.3, &TrainConfig { eta0: 1e-3, gamma: 10.0, tau: 0.75, ..cfg.clone() });
    if (spot - 3.5355e-4).abs() > 1e-8 {
        failures.push(format!("lr_at(0.3) = {spot}"));
    }
    if (cfg.eta0, cfg.gamma, cfg.tau) != (1e-3, 10.0, 0.75) {
        failures.push(format!("defaults eta0={} gamma={} tau={}", cfg.eta0, cfg.gamma, cfg.tau));
    }
    if grl_lambda_at(0.0, 1.0) != 0.0 || (grl_lambda_at(1.0, 1.0) - 0.99991).abs() > 1e-5 {
        failures.push("grl warmup endpoints".into());
    }
    CheckOutcome::new(
        "schedule spot checks",
        failures,
        format!("lr_at(0.3) = {spot:.6e}, defaults eta0={} gamma={} tau={}", cfg.eta0, cfg.gamma, cfg.tau),
    )
}

/// Criterion 7: uniform-prediction cross-entropy is ln K and a discriminator
/// stuck at 0.5 gives a domain loss of 2 ln 2.
pub fn loss_anchors() -> CheckOutcome {
    CheckOutcome::from_result("loss anchors", (|| {
        let mut failures = Vec::new();
        for k in [2usize, 3, 10] {
            let mut t = Tape::new(Mode::Eval);
            let logits = t.constant(Tensor::full(&[4, k], 1.7));
            let ce = t.cross_entropy(logits, &[0, k - 1, 1, 0])?;
            let v = t.value(ce).item()?;
            if (v - (k as f64).ln()).abs() > 1e-12 {
                failures.push(format!("CE K={k}: {v}"));
            }
        }
        let mut nets = Networks::init(&ModelConfig::default(), 1, 3, 32, 0)?;
        let w3 = nets.discriminator.fc3.weight;
        let shape = nets.params.get(w3).shape().to_vec();
        *nets.params.get_mut(w3) = Tensor::zeros(&shape);
        let mut t = Tape::new(Mode::Train);
        let bind = nets.params.bind(&mut t);
        let mut rng = rng::stream(0, Stream::Generate);
        let s = t.constant(uniform(&mut rng, &[5, 32], 0.0, 1.0));
        let tg = t.constant(uniform(&mut rng, &[3, 32], 0.0, 1.0));
        let ld = domain_loss(&mut t, &bind, &nets.discriminator, s, tg, &mut rng::stream(0, Stream::Dropout))?;
        let v = t.value(ld).item()?;
        if (v - 2.0 * 2f64.ln()).abs() > 1e-12 {
            failures.push(format!("domain loss {v}"));
        }
        Ok(CheckOutcome::new("loss anchors", failures, format!("CE = ln K for K in {{2, 3, 10}}; L_D = {v:.15}")))
    })())
}

/// Every suite that runs without training a full experiment.
pub fn all() -> Vec<CheckOutcome> {
    vec![
        gradient_suite(),
        decomposition_invariants(1000),
        linear_class_gradient(),
        reduction_consistency(20),
        schedule_spots(),
        loss_anchors(),
    ]
}
