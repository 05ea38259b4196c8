//! Runs a method × seed matrix and writes every artifact.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use toalign_core::data::DomainData;
use toalign_core::nets::Networks;
use toalign_core::train::{build_networks, train_loop, ExperimentRecord, Method};

use crate::aggregate::{aggregate, with_failures, write_results_csv, AggregateRow};
use crate::artifacts::{checkpoint_name, emit_heatmaps, emit_svg_curves, jsonl_name, read_jsonl, sample_indices, write_jsonl};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Outcome of one (method, seed) cell.
pub struct Cell {
    pub method: Method,
    pub seed: u64,
    pub result: std::result::Result<(ExperimentRecord, Networks), String>,
}

pub struct RunOutput {
    pub out_dir: PathBuf,
    pub rows: Vec<AggregateRow>,
    pub cells: Vec<Cell>,
}

impl RunOutput {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }

    pub fn records(&self) -> Vec<ExperimentRecord> {
        self.cells.iter().filter_map(|c| c.result.as_ref().ok().map(|(r, _)| r.clone())).collect()
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Trains every cell on up to `jobs` threads. Each cell owns its networks and
/// generators, so results do not depend on scheduling; they come back in
/// matrix order (methods outer, seeds inner).
pub fn run_cells(cfg: &ExperimentConfig, data: &DomainData, jobs: usize) -> Result<Vec<Cell>> {
    let grid: Vec<(Method, u64)> = cfg
        .experiment
        .methods
        .iter()
        .flat_map(|&m| cfg.experiment.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        grid.par_iter()
            .map(|&(method, seed)| {
                let tc = cfg.cell(method, seed);
                let result = catch_unwind(AssertUnwindSafe(|| train_loop(&tc, &cfg.model, data)))
                    .map_err(panic_message)
                    .and_then(|r| r.map_err(|e| e.to_string()))
                    .map(|o| (o.record, o.nets));
                match &result {
                    Ok((r, _)) => info!("{method} seed {seed}: target acc {:.4}", r.last().target_acc),
                    Err(e) => warn!("{method} seed {seed} failed: {e}"),
                }
                Cell { method, seed, result }
            })
            .collect()
    }))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(HarnessError::io(path))
}

/// Writes records, checkpoints, `results.csv`, `curves.svg` and heatmaps for
/// finished cells. Only the calling thread touches the file system.
pub fn write_outputs(cfg: &ExperimentConfig, data: &DomainData, cells: &[Cell], out: &Path) -> Result<Vec<AggregateRow>> {
    let runs = out.join("runs");
    create_dir(&runs)?;
    let config_path = out.join("config.toml");
    fs::write(&config_path, cfg.to_toml()).map_err(HarnessError::io(&config_path))?;
    let mut failures: BTreeMap<Method, usize> = BTreeMap::new();
    let mut records = Vec::new();
    for cell in cells {
        match &cell.result {
            Ok((record, nets)) => {
                write_jsonl(record, &runs.join(jsonl_name(cell.method, cell.seed)))?;
                nets.save_checkpoint(&runs.join(checkpoint_name(cell.method, cell.seed)))?;
                records.push(record.clone());
            }
            Err(_) => *failures.entry(cell.method).or_default() += 1,
        }
    }
    let rows = with_failures(aggregate(&records)?, &failures);
    write_results_csv(&rows, &out.join("results.csv"))?;
    emit_svg_curves(&records, &out.join("curves.svg"))?;
    let images = sample_indices(data.target_test.len(), cfg.experiment.heatmap_images);
    let heat_dir = out.join("heatmaps");
    for &method in &cfg.experiment.methods {
        // the first seed that trained successfully stands for the method
        if let Some((seed, nets)) = cells
            .iter()
            .filter(|c| c.method == method)
            .find_map(|c| c.result.as_ref().ok().map(|(_, n)| (c.seed, n)))
        {
            emit_heatmaps(nets, method, seed, &data.target_test, &images, &heat_dir)?;
        }
    }
    Ok(rows)
}

/// The whole `run` verb: generate data, train the matrix, write outputs.
pub fn run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunOutput> {
    create_dir(out)?;
    let data = cfg.data.generate()?;
    let cells = run_cells(cfg, &data, jobs)?;
    let rows = write_outputs(cfg, &data, &cells, out)?;
    Ok(RunOutput { out_dir: out.to_path_buf(), rows, cells })
}

/// The `viz` verb: rebuilds `results.csv`, `curves.svg` and heatmaps from a
/// run directory's stored config, records and checkpoints.
pub fn viz(run_dir: &Path) -> Result<Vec<AggregateRow>> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.toml"))?;
    let data = cfg.data.generate()?;
    let runs = run_dir.join("runs");
    let mut cells = Vec::new();
    for &method in &cfg.experiment.methods {
        for &seed in &cfg.experiment.seeds {
            let path = runs.join(jsonl_name(method, seed));
            let result = if path.exists() {
                let record = read_jsonl(&path)?;
                let tc = cfg.cell(method, seed);
                let mut nets = build_networks(&tc, &cfg.model, &data)?;
                nets.load_checkpoint(&runs.join(checkpoint_name(method, seed)))?;
                Ok((record, nets))
            } else {
                Err(format!("no record at {}", path.display()))
            };
            cells.push(Cell { method, seed, result });
        }
    }
    write_outputs(&cfg, &data, &cells, run_dir)
}

/// The `gen-data` verb: the three splits as CSV files.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let data = cfg.data.generate()?;
    let mut paths = Vec::new();
    for (name, split) in [
        ("source_train", &data.source_train),
        ("target_train", &data.target_train),
        ("target_test", &data.target_test),
    ] {
        let path = out.join(format!("{name}.csv"));
        toalign_core::data::export_csv(split, &path)?;
        paths.push(path);
    }
    Ok(paths)
}
