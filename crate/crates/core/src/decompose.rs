//! Task-oriented feature decomposition.
//!
//! The gradient of the ground-truth logit with respect to the pooled feature,
//! `w = dy_k / df`, acts as channel attention. The positive feature is
//! `f_p = s * w ⊙ f` with `s = sqrt(|f|² / |w ⊙ f|²)`, so `|f_p|² = |f|²`; the
//! negative feature is `f_n = -f_p`. `w` and `s` are constants: no gradient
//! flows back through them into the classifier.

use crate::autodiff::{Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::nets::Networks;
use crate::tensor::Tensor;

/// `|w ⊙ f|` at or below this is treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Which side of the decomposition to take.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedFeature {
    pub f: Tensor,
    pub w_cls: Tensor,
    pub scale: f64,
    pub positive: Tensor,
    pub negative: Tensor,
}

/// `dy_k / df` for each row of `f`, where `y = logits` was computed from `f`
/// on `tape` and `k` is the row's label. Rows are independent, so a single
/// one-hot-seeded reverse sweep yields every row's gradient. The result is a
/// detached tensor shaped like `f`.
pub fn class_gradient(tape: &Tape, f: Var, logits: Var, labels: &[usize]) -> Result<Tensor> {
    let shape = tape.shape(logits).to_vec();
    let (rows, k) = match shape.as_slice() {
        [k] => (1, *k),
        [n, k] => (*n, *k),
        _ => return Err(Error::dim("class_gradient", format!("logits shape {shape:?}"))),
    };
    if labels.len() != rows {
        return Err(Error::dim(
            "class_gradient",
            format!("{rows} logit rows but {} labels", labels.len()),
        ));
    }
    let mut seed = Tensor::zeros(&shape);
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::Index { op: "class_gradient", index: label, bound: k });
        }
        seed.data_mut()[i * k + label] = 1.0;
    }
    Ok(tape.gradient(logits, &seed, &[f])?.remove(0))
}

/// `s = sqrt(Σ f² / Σ (w f)²)`.
pub fn energy_scale(f: &[f64], w: &[f64]) -> Result<f64> {
    if f.len() != w.len() {
        return Err(Error::dim("energy_scale", format!("f has {} entries, w has {}", f.len(), w.len())));
    }
    let energy: f64 = f.iter().map(|v| v * v).sum();
    let weighted: f64 = f.iter().zip(w).map(|(f, w)| (w * f) * (w * f)).sum();
    let norm = weighted.sqrt();
    if norm <= DEGENERATE_NORM {
        return Err(Error::DegenerateWeight { norm, threshold: DEGENERATE_NORM });
    }
    Ok((energy / weighted).sqrt())
}

/// Decomposes one pooled feature vector.
pub fn decompose(f: &Tensor, w_cls: &Tensor) -> Result<DecomposedFeature> {
    if f.rank() != 1 || f.shape() != w_cls.shape() {
        return Err(Error::dim(
            "decompose",
            format!("f {:?} and w {:?} must be equal-length vectors", f.shape(), w_cls.shape()),
        ));
    }
    let scale = energy_scale(f.data(), w_cls.data())?;
    let positive: Vec<f64> = f.data().iter().zip(w_cls.data()).map(|(f, w)| scale * w * f).collect();
    let negative = positive.iter().map(|v| -v).collect();
    Ok(DecomposedFeature {
        f: f.clone(),
        w_cls: w_cls.clone(),
        scale,
        positive: Tensor::vector(positive),
        negative: Tensor::vector(negative),
    })
}

/// Per-row channel weights `±s·w`, ready to multiply into `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub weights: Tensor,
    /// Rows whose `w ⊙ f` was degenerate; those fall back to `±1` (`f_p = f`).
    pub degenerate: usize,
}

/// Builds the (detached) weights that turn each row of `f` into its positive
/// or negative feature.
pub fn attention(f: &Tensor, w_cls: &Tensor, polarity: Polarity) -> Result<Attention> {
    if f.shape() != w_cls.shape() || f.rank() == 0 || f.rank() > 2 {
        return Err(Error::dim(
            "attention",
            format!("f {:?} vs w {:?}", f.shape(), w_cls.shape()),
        ));
    }
    let m = *f.shape().last().expect("rank >= 1");
    let sign = polarity.sign();
    let mut weights = Vec::with_capacity(f.len());
    let mut degenerate = 0;
    for (fr, wr) in f.data().chunks(m).zip(w_cls.data().chunks(m)) {
        match energy_scale(fr, wr) {
            Ok(s) => weights.extend(wr.iter().map(|w| sign * (s * w))),
            Err(Error::DegenerateWeight { .. }) => {
                degenerate += 1;
                weights.extend(std::iter::repeat_n(sign, m));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Attention {
        weights: Tensor::new(f.shape().to_vec(), weights)?,
        degenerate,
    })
}

/// `f ⊙ weights` on the tape, with the weights held constant.
pub fn apply_attention(tape: &mut Tape, f: Var, attention: &Attention) -> Result<Var> {
    let w = tape.constant(attention.weights.clone());
    tape.hadamard(f, w)
}

/// Channel-modulated spatial response of a feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// `max(0, Σ_m sign·w_m·F[m])`, row-major.
    pub raw: Vec<f64>,
    /// `raw / max(raw)`, or all zeros when `raw` is all zero.
    pub normalized: Vec<f64>,
}

impl Heatmap {
    /// `(row, col)` of the largest raw response; first occurrence wins.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.raw.iter().enumerate() {
            if v > self.raw[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Binary PGM (P5), each cell blown up to an `upscale`×`upscale` block.
    pub fn to_pgm(&self, upscale: usize) -> Vec<u8> {
        let upscale = upscale.max(1);
        let (w, h) = (self.width * upscale, self.height * upscale);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                let v = self.normalized[(y / upscale) * self.width + x / upscale];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    /// Raw responses as CSV, one line per row, full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.raw.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Spatial map of `F` (`[m, h, w]`) with channels weighted by `sign·w`,
/// rectified and max-normalized.
pub fn spatial_response_map(map: &Tensor, w: &[f64], polarity: Polarity) -> Result<Heatmap> {
    let s = map.shape();
    if s.len() != 3 || s[0] != w.len() {
        return Err(Error::dim(
            "spatial_response_map",
            format!("map {s:?} vs {} channel weights", w.len()),
        ));
    }
    let (height, width) = (s[1], s[2]);
    let hw = height * width;
    let sign = polarity.sign();
    let mut raw = vec![0.0; hw];
    for (plane, &wm) in map.data().chunks(hw).zip(w) {
        for (r, v) in raw.iter_mut().zip(plane) {
            *r += sign * wm * v;
        }
    }
    raw.iter_mut().for_each(|v| *v = v.max(0.0));
    let peak = raw.iter().copied().fold(0.0, f64::max);
    let normalized = if peak > 0.0 {
        raw.iter().map(|v| v / peak).collect()
    } else {
        vec![0.0; hw]
    };
    Ok(Heatmap { height, width, raw, normalized })
}

/// Positive and negative response maps of one `[c, h, w]` image for `class`,
/// from an eval-mode pass of G and C.
pub fn response_maps(nets: &Networks, x: &Tensor, class: usize) -> Result<(Heatmap, Heatmap)> {
    let mut tape = Tape::new(Mode::Eval);
    let bind = nets.params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let feats = nets.extractor.forward(&mut tape, &bind, xv)?;
    let logits = nets.classifier.forward(&mut tape, &bind, feats.pooled)?;
    let w = class_gradient(&tape, feats.pooled, logits, &[class])?;
    let map = tape.value(feats.map);
    Ok((
        spatial_response_map(map, w.data(), Polarity::Positive)?,
        spatial_response_map(map, w.data(), Polarity::Negative)?,
    ))
}
