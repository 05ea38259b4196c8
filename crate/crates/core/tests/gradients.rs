//! Finite-difference oracle for every differentiable op and for the composed
//! G -> C -> CE and G -> GRL -> D graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toalign_core::autodiff::gradcheck::{check_gradients, check_gradients_in, numeric_gradient_in, relative_error, GradCheck, FD_STEP};
use toalign_core::autodiff::{Mode, Tape, Var};
use toalign_core::nets::{Binding, ModelConfig, Networks};
use toalign_core::{Result, Tensor};

const TOL: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-3;
const SEEDS: u64 = 10;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `sum(y ⊙ r)` for a fixed random `r`: turns any op into a scalar whose
/// gradient is the op's vector-Jacobian product with `r`.
fn probe(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let r = tape.constant(r.clone().reshape(&shape)?);
    let p = tape.hadamard(y, r)?;
    Ok(tape.sum(p))
}

/// Runs `make(seed, attempt)` until the base point is at least
/// `KINK_MARGIN` away from every ReLU kink, then asserts the tolerance.
fn assert_op<M>(name: &str, make: M)
where
    M: Fn(&mut ChaCha8Rng) -> GradCheck,
{
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 1);
        let mut attempts = 0;
        let check = loop {
            let c = make(&mut rng);
            if c.clear_of_kinks(KINK_MARGIN) {
                break c;
            }
            attempts += 1;
            assert!(attempts < 100, "{name}: no kink-free sample for seed {seed}");
        };
        assert!(
            check.max_rel_error() < TOL,
            "{name} seed {seed}: relative errors {:?}",
            check.rel_errors
        );
    }
}

macro_rules! unary {
    ($test:ident, $shape:expr, $lo:expr, $hi:expr, |$t:ident, $x:ident| $body:expr) => {
        #[test]
        fn $test() {
            assert_op(stringify!($test), |rng| {
                let x = rand_tensor(rng, &$shape, $lo, $hi);
                let op = |$t: &mut Tape, $x: Var| -> Var { $body };
                let out_len = {
                    let mut t = Tape::new(Mode::Eval);
                    let xv = t.constant(x.clone());
                    let y = op(&mut t, xv);
                    t.value(y).len()
                };
                let r = rand_tensor(rng, &[out_len], -1.0, 1.0);
                check_gradients(
                    |t: &mut Tape, v: &[Var]| {
                        let y = op(t, v[0]);
                        probe(t, y, &r)
                    },
                    &[x],
                    FD_STEP,
                )
                .unwrap()
            });
        }
    };
}

unary!(relu, [4, 5], -1.0, 1.0, |t, x| t.relu(x));
unary!(sigmoid, [4, 5], -4.0, 4.0, |t, x| t.sigmoid(x));
unary!(clamp_inside_and_outside, [4, 5], -1.0, 1.0, |t, x| t.clamp(x, -0.5, 0.5));
unary!(scale, [3, 3], -1.0, 1.0, |t, x| t.scale(x, -2.5));
unary!(transpose, [3, 4], -1.0, 1.0, |t, x| t.transpose(x).unwrap());
unary!(reshape, [3, 4], -1.0, 1.0, |t, x| t.reshape(x, &[2, 6]).unwrap());
unary!(softmax, [3, 4], -3.0, 3.0, |t, x| t.softmax(x));
unary!(softmax_vector, [5], -3.0, 3.0, |t, x| t.softmax(x));
unary!(avg_pool_even, [2, 3, 4, 4], -1.0, 1.0, |t, x| t.avg_pool2(x).unwrap());
unary!(avg_pool_odd_floor, [3, 5, 4], -1.0, 1.0, |t, x| t.avg_pool2(x).unwrap());
unary!(gap_batched, [2, 3, 4, 4], -1.0, 1.0, |t, x| t.gap(x).unwrap());
unary!(gap_single, [3, 2, 5], -1.0, 1.0, |t, x| t.gap(x).unwrap());
unary!(eval_dropout, [4, 5], -1.0, 1.0, |t, x| t.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap());

#[test]
fn sum() {
    assert_op("sum", |rng| {
        let x = rand_tensor(rng, &[3, 4], -1.0, 1.0);
        check_gradients(|t: &mut Tape, v: &[Var]| Ok(t.sum(v[0])), &[x], FD_STEP).unwrap()
    });
}

fn binary<F>(name: &str, sa: &[usize], sb: &[usize], op: F)
where
    F: Fn(&mut Tape, Var, Var) -> Result<Var> + Copy,
{
    assert_op(name, |rng| {
        let a = rand_tensor(rng, sa, -1.0, 1.0);
        let b = rand_tensor(rng, sb, -1.0, 1.0);
        let probe_vals = {
            let mut t = Tape::new(Mode::Eval);
            let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
            let y = op(&mut t, va, vb).unwrap();
            rand_tensor(rng, &[t.value(y).len()], -1.0, 1.0)
        };
        check_gradients(
            |t: &mut Tape, v: &[Var]| {
                let y = op(t, v[0], v[1])?;
                probe(t, y, &probe_vals)
            },
            &[a, b],
            FD_STEP,
        )
        .unwrap()
    });
}

#[test]
fn matmul() {
    binary("matmul", &[3, 4], &[4, 2], |t, a, b| t.matmul(a, b));
}

#[test]
fn add() {
    binary("add", &[2, 3], &[2, 3], |t, a, b| t.add(a, b));
}

#[test]
fn hadamard() {
    binary("hadamard", &[2, 3], &[2, 3], |t, a, b| t.hadamard(a, b));
}

#[test]
fn add_bias_rows() {
    binary("add_bias rows", &[4, 3], &[3], |t, a, b| t.add_bias(a, b));
}

#[test]
fn add_bias_channels() {
    binary("add_bias channels", &[2, 3, 2, 2], &[3], |t, a, b| t.add_bias(a, b));
}

#[test]
fn conv2d_batched() {
    binary("conv2d batched", &[2, 2, 5, 4], &[3, 2, 3, 3], |t, a, b| t.conv2d(a, b));
}

#[test]
fn conv2d_single() {
    binary("conv2d single", &[1, 4, 4], &[2, 1, 3, 3], |t, a, b| t.conv2d(a, b));
}

#[test]
fn cross_entropy() {
    assert_op("cross_entropy", |rng| {
        let logits = rand_tensor(rng, &[5, 4], -3.0, 3.0);
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
        check_gradients(|t: &mut Tape, v: &[Var]| t.cross_entropy(v[0], &labels), &[logits], FD_STEP).unwrap()
    });
}

#[test]
fn binary_cross_entropy_both_targets() {
    for target in [0.0, 1.0] {
        assert_op("bce", |rng| {
            let p = rand_tensor(rng, &[6], 0.05, 0.95);
            check_gradients(|t: &mut Tape, v: &[Var]| t.binary_cross_entropy(v[0], target), &[p], FD_STEP).unwrap()
        });
    }
}

#[test]
fn train_mode_dropout_with_fixed_mask() {
    assert_op("dropout", |rng| {
        let x = rand_tensor(rng, &[4, 6], -1.0, 1.0);
        let r = rand_tensor(rng, &[24], -1.0, 1.0);
        let mask_seed: u64 = rng.gen();
        check_gradients_in(
            Mode::Train,
            |t: &mut Tape, v: &[Var]| {
                let y = t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
                probe(t, y, &r)
            },
            &[x],
            FD_STEP,
        )
        .unwrap()
    });
}

#[test]
fn grl_backward_is_exactly_negated_and_scaled() {
    for lambda in [0.0, 0.5, 0.7, 1.0] {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            let r = rand_tensor(&mut rng, &[12], -1.0, 1.0);
            let mut t = Tape::new(Mode::Eval);
            let xv = t.param(x.clone());
            let y = t.grl(xv, lambda).unwrap();
            assert_eq!(t.value(y), &x, "forward must be the identity");
            let loss = probe(&mut t, y, &r).unwrap();
            t.backward(loss).unwrap();
            let g = t.grad(xv).unwrap();
            // the upstream gradient of sum(y ⊙ r) is r itself
            for (gi, ri) in g.data().iter().zip(r.data()) {
                assert_eq!(*gi, -lambda * ri);
            }
        }
    }
}

fn small_model() -> ModelConfig {
    ModelConfig { hidden_channels: 3, feature_channels: 4, disc_hidden: 5, disc_dropout: 0.5 }
}

/// Redraws the data until at most 5% of the coordinates sit at a ReLU kink.
fn kink_free<T>(name: &str, mut attempt: impl FnMut() -> (T, usize, usize)) -> T {
    for _ in 0..50 {
        let (out, skipped, checked) = attempt();
        if skipped * 20 <= checked {
            return out;
        }
    }
    panic!("{name}: every sample sits on ReLU kinks");
}

#[test]
fn composed_extractor_classifier_cross_entropy() {
    for seed in 0..SEEDS {
        let nets = Networks::init(&small_model(), 1, 3, 4, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let np = nets.params.len();
        let check = kink_free("G->C->CE", || {
            let x = rand_tensor(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
            let labels = [rng.gen_range(0..3), rng.gen_range(0..3)];
            let mut inputs = nets.params.values().to_vec();
            inputs.push(x);
            let f = |t: &mut Tape, v: &[Var]| {
                let bind = Binding::from_vars(v[..np].to_vec());
                let feats = nets.extractor.forward(t, &bind, v[np])?;
                let logits = nets.classifier.forward(t, &bind, feats.pooled)?;
                t.cross_entropy(logits, &labels)
            };
            let c = check_gradients(f, &inputs, FD_STEP).unwrap();
            let (s, k) = (c.skipped, c.checked);
            (c, s, k)
        });
        assert!(check.max_rel_error() < TOL, "G->C->CE seed {seed}: {:?}", check.rel_errors);
    }
}

#[test]
fn composed_extractor_grl_discriminator() {
    let lambda = 0.7;
    for seed in 0..SEEDS {
        let nets = Networks::init(&small_model(), 1, 3, 4, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let np = nets.params.len();
        let g_params = nets.extractor_params();
        let d_params = nets.discriminator_params();
        let errors = kink_free("G->GRL->D", || {
            let xs = rand_tensor(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
            let xt = rand_tensor(&mut rng, &[2, 1, 8, 8], 0.0, 1.0);
            let mask_seed: u64 = rng.gen();
            let inputs = nets.params.values().to_vec();
            let graph = |t: &mut Tape, v: &[Var], lam: Option<f64>| -> Result<Var> {
                let bind = Binding::from_vars(v[..np].to_vec());
                let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
                let mut side = |t: &mut Tape, x: &Tensor, target: f64| -> Result<Var> {
                    let x = t.constant(x.clone());
                    let f = nets.extractor.forward(t, &bind, x)?.pooled;
                    let f = match lam {
                        Some(l) => t.grl(f, l)?,
                        None => f,
                    };
                    let p = nets.discriminator.forward(t, &bind, f, &mut mask_rng)?;
                    t.binary_cross_entropy(p, target)
                };
                let ls = side(t, &xs, 1.0)?;
                let lt = side(t, &xt, 0.0)?;
                t.add(ls, lt)
            };

            let mut tape = Tape::new(Mode::Train);
            let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
            let loss = graph(&mut tape, &vars, Some(lambda)).unwrap();
            tape.backward(loss).unwrap();
            let plain = |t: &mut Tape, v: &[Var]| graph(t, v, None);
            let (numeric, crossed) = numeric_gradient_in(Mode::Train, &plain, &inputs, FD_STEP).unwrap();

            let (mut skipped, mut checked) = (0, 0);
            let mut errors = Vec::new();
            for i in 0..np {
                // D sits above the GRL and sees the true gradient; G sees it reversed and scaled
                let factor = if g_params.contains(&i) {
                    -lambda
                } else if d_params.contains(&i) {
                    1.0
                } else {
                    continue;
                };
                let analytic = tape.grad(vars[i]).unwrap();
                let (mut a, mut n) = (Vec::new(), Vec::new());
                for j in 0..analytic.len() {
                    if crossed[i][j] {
                        skipped += 1;
                        continue;
                    }
                    checked += 1;
                    a.push(analytic.data()[j]);
                    n.push(factor * numeric[i].data()[j]);
                }
                errors.push((nets.params.names()[i].clone(), relative_error(&a, &n)));
            }
            (errors, skipped, checked)
        });
        for (name, err) in errors {
            assert!(err < TOL, "G->GRL->D seed {seed} param {name}: {err}");
        }
    }
}

#[test]
fn summed_losses_match_separate_backward_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let build = |t: &mut Tape, xv: Var| {
        let a = t.sigmoid(xv);
        let a = t.sum(a);
        let b = t.softmax(xv);
        let b = t.cross_entropy(b, &[0, 1, 2]).unwrap();
        (a, b)
    };
    let mut t1 = Tape::new(Mode::Eval);
    let x1 = t1.param(x.clone());
    let (a, b) = build(&mut t1, x1);
    let total = t1.add(a, b).unwrap();
    t1.backward(total).unwrap();

    let mut t2 = Tape::new(Mode::Eval);
    let x2 = t2.param(x);
    let (a, b) = build(&mut t2, x2);
    t2.backward(a).unwrap();
    t2.backward(b).unwrap();
    let (g1, g2) = (t1.grad(x1).unwrap(), t2.grad(x2).unwrap());
    for (p, q) in g1.data().iter().zip(g2.data()) {
        assert!((p - q).abs() <= 1e-15 * (1.0 + p.abs()));
    }
}
