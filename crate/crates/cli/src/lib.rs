//! Config-driven runner for the cocycle-lab experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod config;
pub mod demo;
pub mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cocycle_lab::flows::LORENZ_Z_EQUATION;
use cocycle_lab::Error;
use serde_json::{json, Value};

use config::{Params, RunConfig};
use run::Table;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Core errors caused by the inputs rather than by the numerics.
pub fn is_input_error(e: &Error) -> bool {
    matches!(e, Error::InvalidInput(_) | Error::DimensionMismatch(_))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output: Option<PathBuf>,
    pub seed_offset: Option<u64>,
    pub jobs: Option<usize>,
}

/// Replaces every seed of the run by `offset` (scan and probe seed offsets,
/// random ensembles and sampled starting points).
pub fn apply_seed_offset(cfg: &mut RunConfig, offset: u64) {
    match &mut cfg.params {
        Params::SimplicityScan(p) => p.seed_offset = offset,
        Params::OpennessProbe(p) => p.seed_offset = offset,
        Params::MapSpectrum(p) => {
            if let Some(r) = &mut p.random {
                r.seed = offset;
            }
        }
        Params::Birkhoff(p) => p.seed = offset,
        _ => {}
    }
}

fn seed_offset_of(cfg: &RunConfig) -> Option<u64> {
    match &cfg.params {
        Params::SimplicityScan(p) => Some(p.seed_offset),
        Params::OpennessProbe(p) => Some(p.seed_offset),
        Params::MapSpectrum(p) => p.random.as_ref().map(|r| r.seed),
        Params::Birkhoff(p) => p.x0_list.is_none().then_some(p.seed),
        _ => None,
    }
}

pub fn results_json(cfg: &RunConfig, result: &Value) -> String {
    let doc = json!({
        "format_version": cfg.format_version,
        "experiment": cfg.experiment,
        "config": cfg.echo(),
        "result": result,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("results serialize");
    s.push('\n');
    s
}

fn write_table(path: &Path, t: &Table) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(&t.header)?;
    for r in &t.rows {
        w.write_record(r)?;
    }
    w.flush()
}

pub struct Report {
    pub exit_code: i32,
    pub errors: Vec<String>,
    pub output_dir: PathBuf,
}

/// Runs a parsed config and writes `results.json`, `aggregates.csv` and
/// `manifest.json` into the output directory. The manifest is written on
/// failure too.
pub fn run_config(mut cfg: RunConfig, opts: &RunOptions) -> Report {
    if let Some(o) = opts.seed_offset {
        apply_seed_offset(&mut cfg, o);
    }
    if let Some(dir) = &opts.output {
        cfg.output_dir = dir.clone();
    }
    let dir = cfg.output_dir.clone();
    let started = Instant::now();
    let outcome = run::execute(&cfg);
    let wall = started.elapsed().as_secs_f64();
    let (status, code, errors, streams) = match &outcome {
        Ok(o) => ("ok", EXIT_OK, vec![], o.streams.clone()),
        Err(e) if is_input_error(e) => ("validation-error", EXIT_VALIDATION, vec![e.to_string()], vec![]),
        Err(e) => ("numerical-failure", EXIT_NUMERICAL, vec![e.to_string()], vec![]),
    };
    let mut errors = errors;
    let mut code = code;
    let mut io = |r: std::io::Result<()>| {
        if let Err(e) = r {
            errors.push(format!("writing output: {e}"));
            if code == EXIT_OK {
                code = EXIT_NUMERICAL;
            }
        }
    };
    io(fs::create_dir_all(&dir));
    if let Ok(o) = &outcome {
        io(fs::write(dir.join("results.json"), results_json(&cfg, &o.result)));
        io(write_table(&dir.join("aggregates.csv"), &o.table));
    }
    let manifest = json!({
        "config": cfg,
        "status": status,
        "errors": errors,
        "wall_time_s": wall,
        "versions": {
            "cocycle-lab": cocycle_lab::VERSION,
            "cocycle-lab-cli": env!("CARGO_PKG_VERSION"),
        },
        "lorenz_z_equation": LORENZ_Z_EQUATION,
        "seed_streams": streams,
        "seed_offset": seed_offset_of(&cfg),
        "jobs": opts.jobs.unwrap_or_else(rayon::current_num_threads),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(e) = fs::write(dir.join("manifest.json"), text) {
        errors.push(format!("writing manifest: {e}"));
        if code == EXIT_OK {
            code = EXIT_NUMERICAL;
        }
    }
    Report { exit_code: code, errors, output_dir: dir }
}
