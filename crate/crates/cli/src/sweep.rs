use std::path::{Path, PathBuf};

use serde::Serialize;

use erank_core::experiments::{run_sweep, PowerLawFit, SeedRecord, SweepResult};
use erank_core::matrix::format_f64;
use erank_core::Execution;

use crate::config::{Resolved, RunConfig};
use crate::error::{CliError, EXIT_OK};
use crate::output::{json_line, write_atomic};
use crate::Outcome;

pub const MANIFEST_FORMAT: &str = "erank-sweep/1";
pub const FILES: [&str; 5] = [
    "results.csv",
    "results.json",
    "gap_vs_m.csv",
    "rank_vs_m.csv",
    "bound_vs_m.csv",
];

#[derive(Serialize)]
struct Grid<'a> {
    train_sizes: &'a [usize],
    replicates: usize,
    cells: usize,
}

#[derive(Serialize)]
struct Failure {
    m: usize,
    seed: u64,
    error: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: &'static str,
    config_hash: &'a str,
    config: &'a RunConfig,
    seeds: Vec<SeedRecord>,
    grid: Grid<'a>,
    /// `running`, `complete` or `failed`.
    state: &'static str,
    completed_cells: usize,
    failures: Vec<Failure>,
    files: Vec<&'static str>,
}

impl<'a> Manifest<'a> {
    fn new(r: &'a Resolved, state: &'static str) -> Self {
        let cfg = &r.config;
        Manifest {
            format: MANIFEST_FORMAT,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &r.hash,
            config: cfg,
            seeds: cfg.sweep().seeds(),
            grid: Grid {
                train_sizes: &cfg.task.train_sizes,
                replicates: cfg.replicates,
                cells: cfg.sweep().cells(),
            },
            state,
            completed_cells: 0,
            failures: Vec::new(),
            files: Vec::new(),
        }
    }
}

fn plot_csv(header: &str, rows: impl Iterator<Item = (usize, Vec<f64>)>, fit: Option<&PowerLawFit>) -> String {
    let mut out = format!("{header},fit\n");
    for (m, vals) in rows {
        let fitted = fit.map(|f| format_f64(f.predict(m as f64))).unwrap_or_default();
        let cols: Vec<String> = vals.into_iter().map(format_f64).collect();
        out.push_str(&format!("{m},{},{fitted}\n", cols.join(",")));
    }
    out
}

fn write_results(dir: &Path, result: &SweepResult) -> Result<(), CliError> {
    let s = &result.summary;
    let files = [
        result.to_csv(),
        json_line(result),
        plot_csv(
            "m,gap,gap_stderr",
            s.iter().map(|x| (x.m, vec![x.gap, x.gap_stderr])),
            result.fits.gap.as_ref(),
        ),
        plot_csv(
            "m,R_measured",
            s.iter().map(|x| (x.m, vec![x.capacity])),
            result.fits.capacity.as_ref(),
        ),
        plot_csv(
            "m,bound,L_D_hat,L_S",
            s.iter().map(|x| (x.m, vec![x.bound, x.test_loss, x.train_loss])),
            result.fits.bound.as_ref(),
        ),
    ];
    for (name, contents) in FILES.iter().zip(files) {
        write_atomic(&dir.join(name), &contents)?;
    }
    Ok(())
}

fn dir_is_occupied(dir: &Path) -> bool {
    std::fs::read_dir(dir).is_ok_and(|mut it| it.next().is_some())
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    output: String,
    state: &'static str,
    completed_cells: usize,
    bound_coverage: f64,
    fits: &'a erank_core::experiments::SweepFits,
}

pub fn run(
    r: &Resolved,
    out: Option<&Path>,
    dry_run: bool,
    force: bool,
    json: bool,
    exec: Execution,
) -> Result<Outcome, CliError> {
    let cfg = r.config.sweep();
    cfg.validate()?;
    let dir: Option<PathBuf> = out.map(Path::to_path_buf).or_else(|| r.config.output.clone());
    if dry_run {
        let doc = serde_json::json!({
            "config_hash": r.hash,
            "config": r.config,
            "grid": {
                "train_sizes": cfg.task.train_sizes,
                "replicates": cfg.replicates,
                "cells": cfg.cells(),
                "seeds": cfg.seeds(),
            },
            "output": dir.as_ref().map(|d| d.display().to_string()),
        });
        return Ok(Outcome::ok(json_line(&doc)));
    }
    let dir = dir.ok_or_else(|| CliError::Config("no output directory (use --out or `output`)".into()))?;
    if dir_is_occupied(&dir) && !force {
        return Err(CliError::Input(format!(
            "{} exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let manifest_path = dir.join("MANIFEST.json");
    write_atomic(&manifest_path, &json_line(&Manifest::new(r, "running")))?;
    eprintln!("erank: sweeping {} cells into {}", cfg.cells(), dir.display());

    let run = run_sweep(&cfg, exec)?;
    let completed = run.rows.len();
    let result = SweepResult::from_rows(&cfg, run.rows);
    write_results(&dir, &result)?;

    let mut manifest = Manifest::new(r, if run.failures.is_empty() { "complete" } else { "failed" });
    manifest.completed_cells = completed;
    manifest.files = FILES.to_vec();
    manifest.failures = run
        .failures
        .iter()
        .map(|f| Failure {
            m: f.m,
            seed: f.seed,
            error: f.error.to_string(),
        })
        .collect();
    write_atomic(&manifest_path, &json_line(&manifest))?;

    let code = match run.failures.into_iter().next() {
        Some(f) => {
            eprintln!("erank: cell m={} seed={} failed: {}", f.m, f.seed, f.error);
            CliError::Core(f.error).exit_code()
        }
        None => EXIT_OK,
    };
    let stdout = if json {
        json_line(&Summary {
            config_hash: &r.hash,
            output: dir.display().to_string(),
            state: manifest.state,
            completed_cells: completed,
            bound_coverage: result.bound_coverage,
            fits: &result.fits,
        })
    } else {
        let mut s = String::new();
        for x in &result.summary {
            s.push_str(&format!(
                "m={} L_S={} L_D_hat={} gap={} R={} bound={}\n",
                x.m,
                format_f64(x.train_loss),
                format_f64(x.test_loss),
                format_f64(x.gap),
                format_f64(x.capacity),
                format_f64(x.bound)
            ));
        }
        match &result.fits.gap {
            Some(f) => s.push_str(&format!("gap exponent {}\n", format_f64(f.exponent))),
            None => s.push_str("gap exponent unavailable\n"),
        }
        s.push_str(&format!("bound coverage {}\n", format_f64(result.bound_coverage)));
        s
    };
    Ok(Outcome { stdout, code })
}
