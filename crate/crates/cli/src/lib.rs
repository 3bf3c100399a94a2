//! Library side of the `ncsched` command: experiment specs, sweep
//! execution, figures and the text summary.

pub mod config;
pub mod figures;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ncsched::report::{emit_csv, emit_traces, ReportError};
use ncsched::{run_sweep_observed, CellFailure, ResultRow};
use thiserror::Error;

use crate::config::ExperimentSpec;
use crate::figures::{cell_means, FigureError};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Figure(#[from] FigureError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("could not write traces: {}", .0.join("; "))]
    Traces(Vec<String>),
}

/// What a run produced on disk.
#[derive(Debug)]
pub struct RunReport {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
    pub results: PathBuf,
    pub figures: Vec<PathBuf>,
}

fn trace_name(cfg: &ncsched::RunConfig) -> String {
    format!(
        "{}_n{}_ul{}_dl{}_seed{}.csv",
        cfg.scheduler,
        cfg.n_loops(),
        cfg.r_ul,
        cfg.r_dl,
        cfg.seed
    )
}

/// Runs every cell of `spec` and writes `results.csv`, `spec.conf`, the
/// optional per-run traces and, when `with_figures` is set and the sweep is
/// complete, the figures.
pub fn run_experiment(spec: &ExperimentSpec, with_figures: bool) -> Result<RunReport, RunError> {
    let out = &spec.output_dir;
    mkdir(out)?;
    let spec_path = out.join("spec.conf");
    fs::write(&spec_path, config::render(spec)).map_err(|source| RunError::Io {
        path: spec_path,
        source,
    })?;

    let trace_dir = out.join("traces");
    if spec.traces {
        mkdir(&trace_dir)?;
    }
    let trace_errors = Mutex::new(Vec::new());
    let outcome = run_sweep_observed(&spec.run_configs(), spec.repetitions, |cfg, metrics| {
        if let Some(traces) = &metrics.traces {
            if let Err(e) = emit_traces(traces, &trace_dir.join(trace_name(cfg))) {
                trace_errors.lock().expect("trace error list").push(e.to_string());
            }
        }
    });
    let trace_errors = trace_errors.into_inner().expect("trace error list");
    if !trace_errors.is_empty() {
        return Err(RunError::Traces(trace_errors));
    }

    let results = out.join("results.csv");
    emit_csv(&outcome.rows, &results)?;
    let figures = if with_figures && outcome.is_complete() && !outcome.rows.is_empty() {
        let classes = spec.loop_classes(spec.classes.len());
        figures::write_figures(&outcome.rows, Some(&classes), &out.join("figures"))?
    } else {
        Vec::new()
    };
    Ok(RunReport {
        rows: outcome.rows,
        failures: outcome.failures,
        results,
        figures,
    })
}

fn mkdir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Fixed-width table of per-cell means over seeds.
pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<9} {:>5} {:>5} {:>5} {:>6} {:>10} {:>14} {:>8}",
        "scheduler", "n", "r_ul", "r_dl", "seeds", "avg_aoi", "iae", "starved"
    );
    for ((s, n, u, d), m) in cell_means(rows) {
        let _ = writeln!(
            out,
            "{:<9} {:>5} {:>5} {:>5} {:>6} {:>10.4} {:>14.1} {:>8}",
            s.to_string(),
            n,
            u,
            d,
            m.seeds,
            m.avg_aoi,
            m.iae,
            if m.starved { "yes" } else { "no" }
        );
    }
    out
}
