//! Full sweeps over (seed, scope, rate, arm, perturbation function).
//!
//! Cells run in parallel; results are collected and written in plan order so
//! the output files do not depend on scheduling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use frae_prune_core::frae::FraeModel;

use crate::format;
use crate::plot::{emit_plot_data, Figure};
use crate::protocol::{save_records, Cell, CellOutcome, Experiment, ResultRecord};
use crate::HarnessError;

/// Every cell of the configured grid. The baseline arm does not depend on
/// the perturbation function, so it appears once per (seed, scope, rate).
pub fn plan(config: &crate::ExperimentConfig) -> Vec<Cell> {
    let e = &config.experiment;
    let mut cells = Vec::new();
    for &seed in &e.seeds {
        for &scope in &e.scopes {
            for &rate in &e.rate_grid {
                cells.push(Cell::baseline(scope, rate, seed));
                for &kind in &e.perturbations {
                    cells.push(Cell::pa(scope, rate, kind, seed));
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub records: Vec<ResultRecord>,
    pub failures: Vec<CellFailure>,
    /// Figures skipped because the grid does not cover their series.
    pub skipped_figures: Vec<(Figure, String)>,
}

impl SweepReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every planned cell. With `out_dir`, writes `results.csv`,
/// `failures.csv`, `fig1.csv` to `fig6.csv` and a `checkpoints/` directory.
pub fn run_sweep(exp: &Experiment, out_dir: Option<&Path>) -> Result<SweepReport, HarnessError> {
    let seeds = &exp.config().experiment.seeds;
    let checkpoints = match out_dir {
        Some(dir) => {
            let dir = dir.join("checkpoints");
            fs::create_dir_all(&dir)?;
            Some(dir)
        }
        None => None,
    };

    let references: Vec<Result<FraeModel, String>> = seeds
        .par_iter()
        .map(|&seed| {
            let model = exp.train_reference(seed).map_err(|e| e.to_string())?;
            if let Some(dir) = &checkpoints {
                format::save_checkpoint(&dir.join(format!("reference-s{seed}.frae")), &model)
                    .map_err(|e| e.to_string())?;
            }
            Ok(model)
        })
        .collect();

    let cells = plan(exp.config());
    let outcomes: Vec<Result<ResultRecord, String>> = cells
        .par_iter()
        .map(|cell| {
            let index = seeds
                .iter()
                .position(|&s| s == cell.seed)
                .expect("planned seed");
            let reference = references[index]
                .as_ref()
                .map_err(|e| format!("reference model failed: {e}"))?;
            let outcome: CellOutcome = exp.run_cell(reference, *cell).map_err(|e| e.to_string())?;
            if let Some(dir) = &checkpoints {
                outcome.save_checkpoints(dir).map_err(|e| e.to_string())?;
            }
            Ok(outcome.record)
        })
        .collect();

    let mut report = SweepReport::default();
    for (cell, outcome) in cells.into_iter().zip(outcomes) {
        match outcome {
            Ok(record) => report.records.push(record),
            Err(error) => report.failures.push(CellFailure { cell, error }),
        }
    }
    for figure in Figure::ALL {
        if let Err(e) = emit_plot_data(&report.records, figure, &exp.config().experiment.rate_grid)
        {
            report.skipped_figures.push((figure, e.to_string()));
        }
    }

    if let Some(dir) = out_dir {
        write_outputs(dir, exp, &report)?;
    }
    Ok(report)
}

fn write_outputs(dir: &Path, exp: &Experiment, report: &SweepReport) -> Result<(), HarnessError> {
    save_records(&dir.join("results.csv"), &report.records)?;

    let mut failures = csv::Writer::from_path(dir.join("failures.csv"))?;
    failures.write_record(["arm", "scope", "rate", "g_kind", "seed", "error"])?;
    for f in &report.failures {
        let c = &f.cell;
        failures.write_record([
            c.arm.to_string(),
            c.scope.to_string(),
            c.rate.to_string(),
            c.g_kind.map_or("none".to_string(), |k| k.to_string()),
            c.seed.to_string(),
            f.error.clone(),
        ])?;
    }
    failures.flush()?;

    for figure in Figure::ALL {
        let path = dir.join(format!("{figure}.csv"));
        match emit_plot_data(&report.records, figure, &exp.config().experiment.rate_grid) {
            Ok(table) => table.write_csv(fs::File::create(path)?)?,
            Err(_) => {
                if path.exists() {
                    fs::remove_file(path)?;
                }
            }
        }
    }

    let mut used = fs::File::create(dir.join("config.toml"))?;
    used.write_all(exp.config().to_toml_string().as_bytes())?;
    Ok(())
}
