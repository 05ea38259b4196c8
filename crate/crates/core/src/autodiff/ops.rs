//! Forward operations. Each appends one node (or a short chain) to the tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kernels::{self, PatchGeom};
use super::tape::{Mode, Op, Tape, Var};

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

impl Tape {
    fn derived(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let value = Tensor::new(shape, data).expect("op produced consistent shape");
        self.push(value, op, inputs)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// `a[n,k] * b[k,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.derived(vec![n, m], data, Op::Matmul { a, b, n, k, m }, &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("needs a matrix, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let data = kernels::transpose(self.value(x).data(), rows, cols);
        Ok(self.derived(vec![cols, rows], data, Op::Transpose { x, rows, cols }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        Ok(self.derived(self.shape(a).to_vec(), data, Op::Add { a, b }, &[a, b]))
    }

    /// Adds `bias[c]` along axis 1 of `x` (`[n, c]` or `[n, c, ...]`), or
    /// along axis 0 when `x` is a vector.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let axis = if s.len() == 1 { 0 } else { 1 };
        let c = s[axis];
        if self.shape(bias) != [c] {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} for input {s:?}", self.shape(bias)),
            ));
        }
        let inner: usize = s[axis + 1..].iter().product();
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(inner)
            .enumerate()
            .flat_map(|(j, chunk)| chunk.iter().map(move |v| v + b[j % c]))
            .collect();
        Ok(self.derived(s, data, Op::AddBias { x, bias, c, inner }, &[x, bias]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        Ok(self.derived(self.shape(a).to_vec(), data, Op::Hadamard { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::sigmoid);
        self.push(value, Op::Sigmoid { x }, &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Inverted dropout. In eval mode, or with `rate == 0`, returns `x`
    /// itself and draws nothing from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.mode() == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.derived(self.shape(x).to_vec(), data, Op::Dropout { x, mask }, &[x]))
    }

    /// Gradient reversal: identity forward, `-lambda * upstream` backward.
    pub fn grl(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("GRL lambda must be >= 0, got {lambda}")));
        }
        let value = self.value(x).clone();
        Ok(self.push(value, Op::Grl { x, lambda }, &[x]))
    }

    /// 3x3 cross-correlation with padding 1 over `[c_in, h, w]` or
    /// `[n, c_in, h, w]`, computed as patch unrolling followed by a matmul.
    pub fn conv2d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernels).to_vec();
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
            return Err(Error::dim("conv2d", format!("kernels must be [c_out, c_in, 3, 3], got {ks:?}")));
        }
        let batched = match xs.len() {
            3 => false,
            4 => true,
            _ => return Err(Error::dim("conv2d", format!("input must be rank 3 or 4, got {xs:?}"))),
        };
        let (n, c, h, w) = if batched { (xs[0], xs[1], xs[2], xs[3]) } else { (1, xs[0], xs[1], xs[2]) };
        let (c_out, c_in) = (ks[0], ks[1]);
        if c != c_in {
            return Err(Error::dim("conv2d", format!("input has {c} channels, kernels expect {c_in}")));
        }
        let geom = PatchGeom { n, c, h, w };
        let cols = kernels::im2col(self.value(x).data(), geom);
        let cols = self.derived(vec![geom.rows(), geom.cols()], cols, Op::Im2col { x, geom }, &[x]);
        let flat_k = self.reshape(kernels, &[c_out, c_in * 9])?;
        let kt = self.transpose(flat_k)?;
        let rows = self.matmul(cols, kt)?;
        let data = kernels::rows_to_channels(self.value(rows).data(), n, c_out, h * w);
        let shape = if batched { vec![n, c_out, h, w] } else { vec![c_out, h, w] };
        Ok(self.derived(shape, data, Op::RowsToChannels { x: rows, n, c: c_out, hw: h * w }, &[rows]))
    }

    /// 2x2 average pooling with stride 2 over the last two axes; odd trailing
    /// rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || s[s.len() - 2] < 2 || s[s.len() - 1] < 2 {
            return Err(Error::dim("avg_pool2", format!("spatial dims too small in {s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes: usize = s[..s.len() - 2].iter().product();
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut data = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for oy in 0..oh {
                for ox in 0..ow {
                    let at = |dy: usize, dx: usize| src[(p * h + 2 * oy + dy) * w + 2 * ox + dx];
                    data[(p * oh + oy) * ow + ox] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
                }
            }
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.extend([oh, ow]);
        Ok(self.derived(shape, data, Op::AvgPool2 { x, planes, h, w }, &[x]))
    }

    /// Spatial global average pooling: `[m, h, w] -> [m]`, `[n, m, h, w] -> [n, m]`.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 && s.len() != 4 {
            return Err(Error::dim("gap", format!("input must be rank 3 or 4, got {s:?}")));
        }
        let hw = s[s.len() - 2] * s[s.len() - 1];
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(self.derived(s[..s.len() - 2].to_vec(), data, Op::Gap { x, hw }, &[x]))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let cols = *s.last().unwrap_or(&1);
        let mut data = vec![0.0; self.value(x).len()];
        for (row, out) in self.value(x).data().chunks(cols).zip(data.chunks_mut(cols)) {
            kernels::softmax_row(row, out);
        }
        self.derived(s, data, Op::Softmax { x, cols }, &[x])
    }

    /// Mean of `-log softmax(logits_i)[label_i]` over rows. `logits` is `[k]`
    /// (one label) or `[n, k]` (`n` labels).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let (n, k) = match s.as_slice() {
            [k] => (1, *k),
            [n, k] => (*n, *k),
            _ => return Err(Error::dim("cross_entropy", format!("logits must be rank 1 or 2, got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::dim("cross_entropy", format!("{n} rows but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index { op: "cross_entropy", index: bad, bound: k });
        }
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for (i, row) in self.value(logits).data().chunks(k).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[i]];
            kernels::softmax_row(row, &mut probs[i * k..(i + 1) * k]);
        }
        let loss = Tensor::scalar(total / n as f64);
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(loss, op, &[logits]))
    }

    /// Mean binary cross entropy of probabilities `p` against one shared
    /// 0/1 target, with `p` clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn binary_cross_entropy(&mut self, p: Var, target: f64) -> Result<Var> {
        if target != 0.0 && target != 1.0 {
            return Err(Error::Contract(format!("BCE target must be 0 or 1, got {target}")));
        }
        let eps = PROB_EPS;
        let values = self.value(p).data();
        let total: f64 = values
            .iter()
            .map(|&v| {
                let v = v.clamp(eps, 1.0 - eps);
                if target == 1.0 { -v.ln() } else { -(1.0 - v).ln() }
            })
            .sum();
        let loss = Tensor::scalar(total / values.len() as f64);
        Ok(self.push(loss, Op::Bce { p, target, eps }, &[p]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval_tape() -> Tape {
        Tape::new(Mode::Eval)
    }

    #[test]
    fn matmul_identity_and_small_product() {
        let mut t = eval_tape();
        let i2 = t.constant(Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let b = t.constant(Tensor::matrix(&[&[3.0, 4.0], &[5.0, 6.0]]));
        let out = t.matmul(i2, b).unwrap();
        assert_eq!(t.value(out).data(), &[3.0, 4.0, 5.0, 6.0]);

        let a = t.constant(Tensor::matrix(&[&[1.0, 2.0]]));
        let c = t.constant(Tensor::matrix(&[&[3.0], &[4.0]]));
        let out = t.matmul(a, c).unwrap();
        assert_eq!(t.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let mut t = eval_tape();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let msg = t.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn conv_zero_kernels_and_delta_kernel() {
        let mut t = eval_tape();
        let x: Vec<f64> = (0..25).map(|i| (i as f64).sin()).collect();
        let x = t.constant(Tensor::new(vec![1, 5, 5], x).unwrap());
        let zero = t.constant(Tensor::zeros(&[2, 1, 3, 3]));
        let out = t.conv2d(x, zero).unwrap();
        assert_eq!(t.shape(out), &[2, 5, 5]);
        assert!(t.value(out).data().iter().all(|&v| v == 0.0));

        let mut delta = Tensor::zeros(&[1, 1, 3, 3]);
        delta.data_mut()[4] = 1.0;
        let delta = t.constant(delta);
        let out = t.conv2d(x, delta).unwrap();
        assert_eq!(t.value(out).data(), t.value(x).data());
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let mut t = eval_tape();
        let x = t.constant(Tensor::zeros(&[2, 4, 4]));
        let k = t.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(t.conv2d(x, k), Err(Error::Dimension { .. })));
    }

    #[test]
    fn relu_sign_cases() {
        let mut t = eval_tape();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
        let pos = t.constant(Tensor::vector(vec![0.0, 0.5, 7.0]));
        let y = t.relu(pos);
        assert_eq!(t.value(y).data(), t.value(pos).data());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = eval_tape();
        let x = t.param(Tensor::vector(vec![0.0, 1.0]));
        let y = t.relu(x);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn dropout_degenerate_and_eval_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let value = Tensor::vector(vec![1.0, -2.0, 3.0]);
        for mode in [Mode::Train, Mode::Eval] {
            let mut t = Tape::new(mode);
            let x = t.constant(value.clone());
            let y = t.dropout(x, 0.0, &mut rng).unwrap();
            assert_eq!(t.value(y), &value);
        }
        let mut t = eval_tape();
        let x = t.constant(value.clone());
        let y = t.dropout(x, 0.5, &mut rng).unwrap();
        assert_eq!(t.value(y), &value);
        assert!(matches!(t.dropout(x, 1.0, &mut rng), Err(Error::Config(_))));
        assert!(matches!(t.dropout(x, -0.1, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_monte_carlo_keep_fraction_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = Tape::new(Mode::Train);
        let n = 100_000;
        let x = t.constant(Tensor::ones(&[n]));
        let y = t.dropout(x, 0.5, &mut rng).unwrap();
        let out = t.value(y).data();
        let kept = out.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        let mean = out.iter().sum::<f64>() / n as f64;
        assert!((kept - 0.5).abs() < 0.01, "keep fraction {kept}");
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn gap_cases() {
        let mut t = eval_tape();
        let x = t.constant(Tensor::full(&[3, 2, 4], 1.5));
        let f = t.gap(x).unwrap();
        assert_eq!(t.value(f).data(), &[1.5, 1.5, 1.5]);

        let x = t.constant(Tensor::new(vec![3, 1, 1], vec![4.0, -1.0, 2.0]).unwrap());
        let f = t.gap(x).unwrap();
        assert_eq!(t.value(f).data(), &[4.0, -1.0, 2.0]);

        let x = t.constant(Tensor::new(vec![1, 2, 2], vec![0.0, 2.0, 4.0, 6.0]).unwrap());
        let f = t.gap(x).unwrap();
        assert_eq!(t.value(f).data(), &[3.0]);
    }

    #[test]
    fn hadamard_cases() {
        let mut t = eval_tape();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![3.0, 4.0]));
        let ab = t.hadamard(a, b).unwrap();
        assert_eq!(t.value(ab).data(), &[3.0, 8.0]);
        let ba = t.hadamard(b, a).unwrap();
        assert_eq!(t.value(ab), t.value(ba));
        let ones = t.constant(Tensor::ones(&[2]));
        let a1 = t.hadamard(a, ones).unwrap();
        assert_eq!(t.value(a1), t.value(a));
        let c = t.constant(Tensor::ones(&[3]));
        assert!(matches!(t.hadamard(a, c), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cross_entropy_anchor_values() {
        let mut t = eval_tape();
        for k in [2usize, 3, 7] {
            let logits = t.constant(Tensor::full(&[k], 0.3));
            let loss = t.cross_entropy(logits, &[k - 1]).unwrap();
            assert!((t.value(loss).item().unwrap() - (k as f64).ln()).abs() < 1e-12);
        }
        let logits = t.constant(Tensor::vector(vec![10.0, -10.0]));
        let loss = t.cross_entropy(logits, &[0]).unwrap();
        // -log sigmoid(20) = log(1 + e^-20)
        let expected = (-20.0f64).exp().ln_1p();
        let got = t.value(loss).item().unwrap();
        assert!((got - expected).abs() < 1e-6 * expected);
        assert!((got - 2.06e-9).abs() < 1e-11);
        assert!(matches!(
            t.cross_entropy(logits, &[2]),
            Err(Error::Index { index: 2, bound: 2, .. })
        ));
    }

    #[test]
    fn bce_anchor_values() {
        let mut t = eval_tape();
        let half = t.constant(Tensor::vector(vec![0.5]));
        for target in [0.0, 1.0] {
            let l = t.binary_cross_entropy(half, target).unwrap();
            assert!((t.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-15);
        }
        let sure = t.constant(Tensor::vector(vec![1.0 - PROB_EPS]));
        let l = t.binary_cross_entropy(sure, 1.0).unwrap();
        assert!(t.value(l).item().unwrap() < 1.1e-7);
        // boundary values are absorbed by the clamp
        let edge = t.constant(Tensor::vector(vec![0.0, 1.0]));
        let l = t.binary_cross_entropy(edge, 1.0).unwrap();
        assert!(t.value(l).item().unwrap().is_finite());

        let s = t.constant(Tensor::vector(vec![0.5]));
        let tg = t.constant(Tensor::vector(vec![0.5]));
        let ls = t.binary_cross_entropy(s, 1.0).unwrap();
        let lt = t.binary_cross_entropy(tg, 0.0).unwrap();
        let total = t.add(ls, lt).unwrap();
        assert!((t.value(total).item().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn grl_forward_identity_and_reversed_backward() {
        for lambda in [0.0, 0.5, 0.7, 1.0] {
            let mut t = Tape::new(Mode::Train);
            let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
            let y = t.grl(x, lambda).unwrap();
            assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0]);
            let g = Tensor::vector(vec![0.25, -3.0, 1.5]);
            let gx = t.gradient(y, &g, &[x]).unwrap().remove(0);
            for (got, up) in gx.data().iter().zip(g.data()) {
                assert_eq!(*got, -lambda * up);
            }
        }
        let mut t = eval_tape();
        let x = t.param(Tensor::vector(vec![1.0]));
        assert!(t.grl(x, -1.0).is_err());
    }

    #[test]
    fn backward_linear_and_quadratic_forms() {
        let mut t = eval_tape();
        let x = t.param(Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap());
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &Tensor::ones(&[2, 3]));

        t.zero_grads();
        let sq = t.hadamard(x, x).unwrap();
        let s = t.sum(sq);
        let half = t.scale(s, 0.5);
        t.backward(half).unwrap();
        assert_eq!(t.grad(x).unwrap(), t.value(x));
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut t = eval_tape();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let y = t.hadamard(x, x).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        let once = t.grad(x).unwrap().clone();
        t.backward(s).unwrap();
        let twice = t.grad(x).unwrap();
        assert_eq!(twice.data(), &[2.0 * once.data()[0], 2.0 * once.data()[1]]);
        t.zero_grads();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn summed_losses_equal_separate_backward_calls() {
        let build = |t: &mut Tape| {
            let x = t.param(Tensor::vector(vec![0.3, -1.2, 2.0]));
            let w = t.param(Tensor::vector(vec![1.5, 0.5, -0.25]));
            let xw = t.hadamard(x, w).unwrap();
            let l1 = t.sum(xw);
            let r = t.relu(xw);
            let sq = t.hadamard(r, r).unwrap();
            let l2 = t.sum(sq);
            (x, w, l1, l2)
        };
        let mut joint = eval_tape();
        let (x, w, l1, l2) = build(&mut joint);
        let total = joint.add(l1, l2).unwrap();
        joint.backward(total).unwrap();

        let mut split = eval_tape();
        let (x2, w2, m1, m2) = build(&mut split);
        split.backward(m1).unwrap();
        split.backward(m2).unwrap();
        assert_eq!(joint.grad(x), split.grad(x2));
        assert_eq!(joint.grad(w), split.grad(w2));
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let mut t = eval_tape();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_trainable_leaves_get_zero_grad() {
        let mut t = eval_tape();
        let x = t.param(Tensor::vector(vec![1.0]));
        let unused = t.param(Tensor::vector(vec![5.0, 6.0]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(unused).unwrap(), &Tensor::zeros(&[2]));
    }
}
