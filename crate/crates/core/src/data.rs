//! Seeded synthetic two-domain datasets.
//!
//! Images carry a class-specific foreground shape inside a central window and
//! a domain-specific texture outside it: faint uniform noise for the source,
//! bright vertical stripes for the target. The class signal and the domain
//! shift therefore never overlap spatially.
//!
//! CSV layout: header `domain,label,pixel_0,..,pixel_{N-1}`, one sample per
//! row, `domain` is `source` or `target`, unlabeled rows carry label `-1`,
//! pixel values are written at round-trip precision.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub label: Option<usize>,
    pub domain: Domain,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the selected samples into one `[n, ...]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let xs: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].x).collect();
        Tensor::stack(&xs)
    }

    /// Labels of the selected samples; fails on any unlabeled one.
    pub fn labels(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| {
                self.samples[i]
                    .label
                    .ok_or_else(|| Error::Data(format!("sample {i} has no label")))
            })
            .collect()
    }

    /// Count of labeled samples per class.
    pub fn class_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut hist = vec![0; num_classes];
        for s in &self.samples {
            if let Some(l) = s.label {
                hist[l] += 1;
            }
        }
        hist
    }
}

/// The three splits used by every experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainData {
    pub source_train: Dataset,
    /// Unlabeled.
    pub target_train: Dataset,
    pub target_test: Dataset,
}

/// Foreground shapes, assigned to classes in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Disk,
    Cross,
    Bar,
    VerticalBar,
    Ring,
    Diagonal,
}

pub const PATTERNS: [Pattern; 6] = [
    Pattern::Disk,
    Pattern::Cross,
    Pattern::Bar,
    Pattern::VerticalBar,
    Pattern::Ring,
    Pattern::Diagonal,
];

impl Pattern {
    /// Membership at window-relative coordinates `(u, v)` in `[0, 1)²`.
    fn contains(self, u: f64, v: f64) -> bool {
        let (du, dv) = (u - 0.5, v - 0.5);
        let r = (du * du + dv * dv).sqrt();
        match self {
            Pattern::Disk => r <= 0.3,
            Pattern::Cross => du.abs() < 0.125 || dv.abs() < 0.125,
            Pattern::Bar => du.abs() < 0.125,
            Pattern::VerticalBar => dv.abs() < 0.125,
            Pattern::Ring => (0.2..=0.4).contains(&r),
            Pattern::Diagonal => (u - v).abs() < 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    /// `[channels, height, width]`.
    pub image_size: [usize; 3],
    /// Samples per class in each split.
    pub n_source: usize,
    pub n_target_train: usize,
    pub n_target_test: usize,
    /// Peak foreground brightness; each sample scales it by U(0.8, 1).
    pub foreground_intensity: f64,
    /// Upper bound of the uniform background noise (both domains).
    pub source_background: f64,
    /// Brightness of the target stripes.
    pub target_background: f64,
    /// Stripe width in pixels; stripes repeat every `2 * stripe_width` columns.
    pub stripe_width: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 3,
            image_size: [1, 16, 16],
            n_source: 60,
            n_target_train: 60,
            n_target_test: 50,
            foreground_intensity: 0.9,
            source_background: 0.2,
            target_background: 0.2,
            stripe_width: 1,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

/// Half-open pixel ranges of the foreground window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl Window {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.rows.0..self.rows.1).contains(&row) && (self.cols.0..self.cols.1).contains(&col)
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.image_size;
        if self.num_classes < 2 || self.num_classes > PATTERNS.len() {
            return Err(Error::Config(format!(
                "num_classes must be in 2..={}, got {}",
                PATTERNS.len(),
                self.num_classes
            )));
        }
        if c == 0 || h < 8 || w < 8 {
            return Err(Error::Config(format!("image_size {:?} must be at least [1, 8, 8]", self.image_size)));
        }
        if self.n_source == 0 || self.n_target_train == 0 || self.n_target_test == 0 {
            return Err(Error::Config("per-class sample counts must be >= 1".into()));
        }
        if self.stripe_width == 0 {
            return Err(Error::Config("stripe_width must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        for (name, v) in [
            ("foreground_intensity", self.foreground_intensity),
            ("source_background", self.source_background),
            ("target_background", self.target_background),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// The central `h/2 × w/2` window holding the foreground.
    pub fn foreground_window(&self) -> Window {
        let [_, h, w] = self.image_size;
        Window {
            rows: (h / 4, h / 4 + h / 2),
            cols: (w / 4, w / 4 + w / 2),
        }
    }

    pub fn pattern(&self, class: usize) -> Pattern {
        PATTERNS[class]
    }

    /// Per-pixel shape membership for `class` over one `h × w` plane.
    pub fn pattern_mask(&self, class: usize) -> Vec<bool> {
        let [_, h, w] = self.image_size;
        let win = self.foreground_window();
        let (wh, ww) = (win.rows.1 - win.rows.0, win.cols.1 - win.cols.0);
        let pattern = self.pattern(class);
        let mut mask = vec![false; h * w];
        for r in win.rows.0..win.rows.1 {
            for c in win.cols.0..win.cols.1 {
                let u = (r - win.rows.0) as f64 / wh as f64 + 0.5 / wh as f64;
                let v = (c - win.cols.0) as f64 / ww as f64 + 0.5 / ww as f64;
                mask[r * w + c] = pattern.contains(u, v);
            }
        }
        mask
    }

    fn render<R: Rng + ?Sized>(&self, class: usize, texture: Domain, masks: &[Vec<bool>], noise: &Normal<f64>, rng: &mut R) -> Tensor {
        let [ch, h, w] = self.image_size;
        let win = self.foreground_window();
        let amplitude = self.foreground_intensity * rng.gen_range(0.8..=1.0);
        let mut data = Vec::with_capacity(ch * h * w);
        for _ in 0..ch {
            for r in 0..h {
                for c in 0..w {
                    let base = if win.contains(r, c) {
                        if masks[class][r * w + c] { amplitude } else { 0.0 }
                    } else {
                        let faint = rng.gen_range(0.0..=self.source_background);
                        let stripe = (c / self.stripe_width) % 2 == 0;
                        match texture {
                            Domain::Target if stripe => self.target_background.max(faint),
                            _ => faint,
                        }
                    };
                    data.push((base + noise.sample(rng)).clamp(0.0, 1.0));
                }
            }
        }
        Tensor::new(vec![ch, h, w], data).expect("image shape")
    }

    fn split<R: Rng + ?Sized>(
        &self,
        per_class: usize,
        domain: Domain,
        texture: Domain,
        labeled: bool,
        masks: &[Vec<bool>],
        noise: &Normal<f64>,
        rng: &mut R,
    ) -> Dataset {
        let mut samples = Vec::with_capacity(per_class * self.num_classes);
        for _ in 0..per_class {
            for class in 0..self.num_classes {
                let x = self.render(class, texture, masks, noise, rng);
                samples.push(Sample {
                    x,
                    label: labeled.then_some(class),
                    domain,
                });
            }
        }
        Dataset { samples }
    }

    fn generate_with(&self, target_texture: Domain) -> Result<DomainData> {
        self.validate()?;
        let mut rng = rng::stream(self.seed, Stream::Generate);
        let noise = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        let masks: Vec<Vec<bool>> = (0..self.num_classes).map(|k| self.pattern_mask(k)).collect();
        let source_train = self.split(self.n_source, Domain::Source, Domain::Source, true, &masks, &noise, &mut rng);
        let target_train = self.split(self.n_target_train, Domain::Target, target_texture, false, &masks, &noise, &mut rng);
        let target_test = self.split(self.n_target_test, Domain::Target, target_texture, true, &masks, &noise, &mut rng);
        Ok(DomainData { source_train, target_train, target_test })
    }

    /// Source, unlabeled target-train and labeled target-test splits, class
    /// balanced and fully determined by the config.
    pub fn generate(&self) -> Result<DomainData> {
        self.generate_with(Domain::Target)
    }

    /// Same draws as [`generate`](Self::generate) but target images get the
    /// source texture, removing the domain shift.
    pub fn generate_matched(&self) -> Result<DomainData> {
        self.generate_with(Domain::Source)
    }
}

/// Flat Gaussian-blob datasets shaped `[1, 8, 8]`, for fast tests.
///
/// Class means differ in the first half of the coordinates; the target domain
/// is shifted by `shift` along the second half.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub separation: f64,
    pub shift: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            num_classes: 3,
            per_class: 20,
            separation: 1.0,
            shift: 1.0,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl BlobConfig {
    pub fn generate(&self) -> Result<DomainData> {
        if self.num_classes < 2 || self.per_class == 0 {
            return Err(Error::Config("blobs need >= 2 classes and >= 1 sample per class".into()));
        }
        let dim = 64;
        let mut rng = rng::stream(self.seed, Stream::Generate);
        let noise = Normal::new(0.0, self.sigma).map_err(|e| Error::Config(e.to_string()))?;
        let means: Vec<Vec<f64>> = (0..self.num_classes)
            .map(|_| {
                (0..dim)
                    .map(|d| if d < dim / 2 { self.separation * rng.gen_range(-1.0..1.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        let split = |domain: Domain, labeled: bool, rng: &mut rng::ExperimentRng| {
            let mut samples = Vec::new();
            for _ in 0..self.per_class {
                for (class, mean) in means.iter().enumerate() {
                    let data = mean
                        .iter()
                        .enumerate()
                        .map(|(d, m)| {
                            let offset = if domain == Domain::Target && d >= dim / 2 { self.shift } else { 0.0 };
                            m + offset + noise.sample(rng)
                        })
                        .collect();
                    samples.push(Sample {
                        x: Tensor::new(vec![1, 8, 8], data).expect("blob shape"),
                        label: labeled.then_some(class),
                        domain,
                    });
                }
            }
            Dataset { samples }
        };
        let source_train = split(Domain::Source, true, &mut rng);
        let target_train = split(Domain::Target, false, &mut rng);
        let target_test = split(Domain::Target, true, &mut rng);
        Ok(DomainData { source_train, target_train, target_test })
    }
}

pub fn export_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let width = dataset.samples.first().map_or(0, |s| s.x.len());
    if let Some(bad) = dataset.samples.iter().find(|s| s.x.len() != width) {
        return Err(Error::dim("export_csv", format!("mixed sample sizes {width} and {}", bad.x.len())));
    }
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let mut header = String::from("domain,label");
    for i in 0..width {
        header.push_str(&format!(",pixel_{i}"));
    }
    writeln!(out, "{header}")?;
    for s in &dataset.samples {
        let label = s.label.map_or("-1".to_string(), |l| l.to_string());
        write!(out, "{},{}", s.domain.as_str(), label)?;
        for v in s.x.data() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`export_csv`]. Samples of `N` pixels come back
/// as `[1, s, s]` images when `N = s²`, otherwise as `[N]` vectors.
pub fn import_csv(path: &Path) -> Result<Dataset> {
    import_csv_impl(path, None)
}

/// Like [`import_csv`] with an explicit per-sample shape.
pub fn import_csv_with_shape(path: &Path, shape: &[usize]) -> Result<Dataset> {
    import_csv_impl(path, Some(shape))
}

fn import_csv_impl(path: &Path, shape: Option<&[usize]>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.get(0) != Some("domain") || headers.get(1) != Some("label") {
        return Err(Error::Parse { line: 1, message: "header must start with domain,label".into() });
    }
    for (i, name) in headers.iter().skip(2).enumerate() {
        if name != format!("pixel_{i}") {
            return Err(Error::Parse { line: 1, message: format!("unexpected column {name:?}") });
        }
    }
    let width = headers.len() - 2;
    let shape = match shape {
        Some(s) if s.iter().product::<usize>() == width => s.to_vec(),
        Some(s) => {
            return Err(Error::dim("import_csv", format!("shape {s:?} does not hold {width} pixels")));
        }
        None => {
            let side = (width as f64).sqrt().round() as usize;
            if side * side == width { vec![1, side, side] } else { vec![width] }
        }
    };
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse { line, message };
        let domain = match &record[0] {
            "source" => Domain::Source,
            "target" => Domain::Target,
            other => return Err(bad(format!("unknown domain {other:?}"))),
        };
        let label = match record[1].parse::<i64>() {
            Ok(-1) => None,
            Ok(l) if l >= 0 => Some(l as usize),
            _ => return Err(bad(format!("bad label {:?}", &record[1]))),
        };
        let data = record
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad pixel value {v:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample {
            x: Tensor::new(shape.clone(), data).map_err(|e| bad(e.to_string()))?,
            label,
            domain,
        });
    }
    Ok(Dataset { samples })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}
