//! Files written next to `results.csv`: per-run JSON lines, accuracy curves
//! and heatmaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use toalign_core::data::Dataset;
use toalign_core::decompose::{response_maps, Heatmap};
use toalign_core::nets::Networks;
use toalign_core::train::{EpochRecord, ExperimentRecord, Method};
use toalign_core::{Error as CoreError, Tensor};

use crate::error::{HarnessError, Result};

pub fn jsonl_name(method: Method, seed: u64) -> String {
    format!("{}_seed{seed}.jsonl", method.name())
}

pub fn checkpoint_name(method: Method, seed: u64) -> String {
    format!("{}_seed{seed}.checkpoint.json", method.name())
}

pub fn write_jsonl(record: &ExperimentRecord, path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in &record.epochs {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(HarnessError::io(path))
}

pub fn read_jsonl(path: &Path) -> Result<ExperimentRecord> {
    let file = fs::File::open(path).map_err(HarnessError::io(path))?;
    let mut epochs: Vec<EpochRecord> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(HarnessError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: i as u64 + 1,
            message: format!("{}: {e}", path.display()),
        })?;
        epochs.push(rec);
    }
    let first = epochs
        .first()
        .ok_or_else(|| CoreError::Data(format!("{} holds no records", path.display())))?;
    let (method, seed) = (first.method, first.seed);
    if epochs.iter().any(|e| e.method != method || e.seed != seed) {
        return Err(CoreError::Data(format!("{} mixes runs", path.display())).into());
    }
    Ok(ExperimentRecord { method, seed, epochs })
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Seed-averaged target accuracy per epoch, by method name.
pub fn mean_curves(records: &[ExperimentRecord]) -> BTreeMap<&'static str, Vec<f64>> {
    let mut groups: BTreeMap<&'static str, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.method.name()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(name, rs)| {
            let len = rs.iter().map(|r| r.epochs.len()).min().unwrap_or(0);
            let curve = (0..len)
                .map(|i| rs.iter().map(|r| r.epochs[i].target_acc).sum::<f64>() / rs.len() as f64)
                .collect();
            (name, curve)
        })
        .collect()
}

/// Plot coordinates of accuracy `acc` at epoch index `i` out of `last`.
pub fn plot_point(i: usize, last: usize, acc: f64) -> (f64, f64) {
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let x = LEFT + if last == 0 { 0.0 } else { pw * i as f64 / last as f64 };
    (x, TOP + ph * (1.0 - acc))
}

pub fn render_svg(records: &[ExperimentRecord]) -> String {
    let curves = mean_curves(records);
    let last = curves.values().map(|c| c.len().saturating_sub(1)).max().unwrap_or(0);
    let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
    let x1 = WIDTH - RIGHT;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line class="axis" x1="{x0}" y1="{TOP}" x2="{x0}" y2="{y0}" stroke="black"/>"#);
    for k in 0..=4 {
        let acc = k as f64 / 4.0;
        let (_, y) = plot_point(0, last, acc);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{acc:.2}</text>"#, x0 - 6.0, y + 4.0);
    }
    let ticks = last.min(10).max(1);
    for k in 0..=ticks {
        let epoch = k * last / ticks;
        let (x, _) = plot_point(epoch, last, 0.0);
        let _ = writeln!(s, r#"<line x1="{x}" y1="{y0}" x2="{x}" y2="{}" stroke="black"/>"#, y0 + 4.0);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{epoch}</text>"#, y0 + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, (x0 + x1) / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{0}" text-anchor="middle" transform="rotate(-90 15 {0})">target accuracy</text>"#,
        (TOP + y0) / 2.0
    );
    for (idx, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        if !curve.is_empty() {
            let points: Vec<String> = curve
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let (x, y) = plot_point(i, last, a);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline data-method="{name}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                points.join(" ")
            );
        }
        let ly = TOP + 10.0 + 20.0 * idx as f64;
        let lx = x1 + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text class="legend" x="{}" y="{}">{name}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg_curves(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    fs::write(path, render_svg(records)).map_err(HarnessError::io(path))
}

/// `k` evenly spaced indices into a set of `n` items.
pub fn sample_indices(n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..k.min(n)).map(|i| i * n / k.min(n)).collect();
    idx.dedup();
    idx
}

/// Grey-level PGM of the first channel of a `[c, h, w]` image in `[0, 1]`.
pub fn image_pgm(x: &Tensor, upscale: usize) -> Vec<u8> {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let plane = Heatmap { height: h, width: w, raw: x.data()[..h * w].to_vec(), normalized: x.data()[..h * w].to_vec() };
    plane.to_pgm(upscale)
}

/// Approximate side, in pixels, that PGM outputs are blown up to.
pub const HEATMAP_PIXELS: usize = 64;

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(HarnessError::io(path))?;
    f.write_all(bytes).map_err(HarnessError::io(path))
}

/// Writes positive/negative maps (PGM and CSV) of the chosen target-test
/// images, plus each input image, into `dir`.
pub fn emit_heatmaps(
    nets: &Networks,
    method: Method,
    seed: u64,
    test: &Dataset,
    images: &[usize],
    dir: &Path,
) -> Result<Vec<(usize, Heatmap, Heatmap)>> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let mut maps = Vec::with_capacity(images.len());
    for &i in images {
        let sample = test
            .samples
            .get(i)
            .ok_or_else(|| CoreError::Index { op: "emit_heatmaps", index: i, bound: test.len() })?;
        let label = sample.label.ok_or_else(|| CoreError::Data(format!("target-test image {i} is unlabeled")))?;
        let (pos, neg) = response_maps(nets, &sample.x, label)?;
        let input = dir.join(format!("input_img{i:03}.pgm"));
        if !input.exists() {
            let w = sample.x.shape()[sample.x.rank() - 1];
            write(&input, &image_pgm(&sample.x, (HEATMAP_PIXELS / w).max(1)))?;
        }
        let stem = format!("{}_seed{seed}_img{i:03}", method.name());
        for (tag, map) in [("pos", &pos), ("neg", &neg)] {
            let up = (HEATMAP_PIXELS / map.width).max(1);
            write(&dir.join(format!("{stem}_{tag}.pgm")), &map.to_pgm(up))?;
            write(&dir.join(format!("{stem}_{tag}.csv")), map.to_csv().as_bytes())?;
        }
        maps.push((i, pos, neg));
    }
    Ok(maps)
}
