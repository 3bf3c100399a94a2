//! Experiment grids: every (config, repetition) cell is run independently
//! and turned into one [`ResultRow`]. Repetition `r` of a cell uses seed
//! `config.seed + r`, so cells that differ only in the scheduler see the
//! same noise realizations.

use rayon::prelude::*;

use crate::scheduling::SchedulerKind;
use crate::simulation::{run_simulation, RunConfig, RunMetrics, SimError};

/// Per-class columns of a result row.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub label: String,
    pub avg_aoi: f64,
    pub iae: f64,
    pub starved: usize,
}

/// One completed cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scheduler: SchedulerKind,
    pub n: usize,
    pub r_ul: usize,
    pub r_dl: usize,
    pub t_s: u64,
    pub t_sim: u64,
    pub seed: u64,
    pub avg_aoi: f64,
    pub iae: f64,
    pub starved_loops: usize,
    pub noise_checksum: u64,
    pub classes: Vec<ClassRow>,
}

impl ResultRow {
    pub fn from_run(config: &RunConfig, metrics: &RunMetrics) -> Self {
        Self {
            scheduler: config.scheduler,
            n: config.n_loops(),
            r_ul: config.r_ul,
            r_dl: config.r_dl,
            t_s: config.sampling_period,
            t_sim: config.t_sim,
            seed: config.seed,
            avg_aoi: metrics.avg_aoi,
            iae: metrics.iae,
            starved_loops: metrics.starved_loops(),
            noise_checksum: metrics.noise_checksum(),
            classes: metrics
                .classes
                .iter()
                .map(|c| ClassRow {
                    label: c.label.clone(),
                    avg_aoi: c.avg_aoi,
                    iae: c.iae,
                    starved: c.starved,
                })
                .collect(),
        }
    }

    /// Canonical output order.
    pub fn sort_key(&self) -> (SchedulerKind, usize, usize, usize, u64, u64, u64) {
        (self.scheduler, self.n, self.r_ul, self.r_dl, self.seed, self.t_s, self.t_sim)
    }
}

/// A cell that did not complete.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub scheduler: SchedulerKind,
    pub n: usize,
    pub r_ul: usize,
    pub r_dl: usize,
    pub seed: u64,
    pub error: SimError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Expands `cells` into `repetitions` seeds each, runs them in parallel and
/// returns rows sorted by [`ResultRow::sort_key`]. Failing cells are
/// collected instead of aborting the sweep.
pub fn run_sweep(cells: &[RunConfig], repetitions: u32) -> SweepOutcome {
    run_sweep_observed(cells, repetitions, |_, _| {})
}

/// [`run_sweep`] that also hands every successful run's full metrics to
/// `observe` (from worker threads, in no particular order) before they are
/// reduced to a row. Traces are dropped after the call.
pub fn run_sweep_observed<F>(cells: &[RunConfig], repetitions: u32, observe: F) -> SweepOutcome
where
    F: Fn(&RunConfig, &RunMetrics) + Sync,
{
    let jobs: Vec<RunConfig> = cells
        .iter()
        .flat_map(|c| {
            (0..repetitions.max(1)).map(move |r| RunConfig {
                seed: c.seed.wrapping_add(r as u64),
                ..c.clone()
            })
        })
        .collect();

    let results: Vec<(RunConfig, Result<ResultRow, SimError>)> = jobs
        .into_par_iter()
        .map(|cfg| {
            let res = run_simulation(&cfg).map(|m| {
                observe(&cfg, &m);
                ResultRow::from_run(&cfg, &m)
            });
            (cfg, res)
        })
        .collect();

    let mut outcome = SweepOutcome::default();
    for (cfg, res) in results {
        match res {
            Ok(row) => outcome.rows.push(row),
            Err(error) => outcome.failures.push(CellFailure {
                scheduler: cfg.scheduler,
                n: cfg.n_loops(),
                r_ul: cfg.r_ul,
                r_dl: cfg.r_dl,
                seed: cfg.seed,
                error,
            }),
        }
    }
    outcome.rows.sort_by_key(ResultRow::sort_key);
    outcome
        .failures
        .sort_by_key(|f| (f.scheduler, f.n, f.r_ul, f.r_dl, f.seed));
    outcome
}
