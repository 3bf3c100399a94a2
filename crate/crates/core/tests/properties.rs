//! Whole-run invariants, checked by stepping simulations slot by slot.

use proptest::prelude::*;

use ncsched::simulation::LoopClass;
use ncsched::{
    compute_avg_aoi, compute_iae, run_simulation, RunConfig, RunMetrics, ScheduleDecision,
    SchedulerKind, Simulation,
};

fn short(n: usize, r_ul: usize, r_dl: usize, kind: SchedulerKind, seed: u64, t_sim: u64) -> RunConfig {
    RunConfig {
        t_sim,
        ..RunConfig::reference(n, r_ul, r_dl, kind, seed)
    }
}

fn with_noise(mut cfg: RunConfig, w: f64) -> RunConfig {
    for c in &mut cfg.classes {
        c.w *= w;
    }
    cfg
}

/// Runs `cfg` to completion and returns every committed decision.
fn decisions(cfg: &RunConfig) -> Vec<ScheduleDecision> {
    let mut sim = Simulation::new(cfg.clone()).unwrap();
    let mut out = Vec::new();
    while !sim.is_done() {
        out.push(sim.step().unwrap());
    }
    out
}

fn traced(cfg: &RunConfig) -> RunMetrics {
    run_simulation(&RunConfig {
        keep_traces: true,
        ..cfg.clone()
    })
    .unwrap()
}

// ============================================================================
// Information flow
// ============================================================================

#[test]
fn base_station_dominates_and_information_is_monotone() {
    for kind in SchedulerKind::ALL {
        let cfg = short(40, 1, 3, kind, 5, 3_000);
        let mut sim = Simulation::new(cfg).unwrap();
        let n = sim.params().len();
        let mut last_ctrl = vec![-1i64; n];
        let mut last_bs = vec![-1i64; n];
        while !sim.is_done() {
            let d = sim.step().unwrap();
            assert!(d.ul.len() <= 1 && d.dl.len() <= 3);
            for i in 0..n {
                let ctrl = sim.network().controller_view(i).latest_step_or_genesis();
                let bs = sim.network().bs_view(i).latest_step_or_genesis();
                assert!(bs >= ctrl, "{kind} loop {i}: bs {bs} < ctrl {ctrl}");
                assert!(ctrl >= last_ctrl[i] && bs >= last_bs[i]);
                if ctrl > last_ctrl[i] {
                    assert!(d.dl.contains(&i), "controller of loop {i} advanced without a DL grant");
                }
                last_ctrl[i] = ctrl;
                last_bs[i] = bs;
            }
        }
    }
}

#[test]
fn age_grows_at_most_one_step_per_period_and_drops_only_on_delivery() {
    for kind in SchedulerKind::ALL {
        let cfg = RunConfig {
            keep_traces: true,
            ..short(60, 1, 1, kind, 11, 4_000)
        };
        let mut sim = Simulation::new(cfg).unwrap();
        let mut log = Vec::new();
        while !sim.is_done() {
            log.push(sim.step().unwrap());
        }
        let params = sim.params().to_vec();
        let m = sim.finish().unwrap();
        for (i, tr) in m.traces.as_ref().unwrap().iter().enumerate() {
            let p = &params[i];
            let period = p.period() as usize;
            let start = tr.start_slot as usize;
            for t in 0..tr.aoi.len().saturating_sub(period) {
                let (now, later) = (tr.aoi[t], tr.aoi[t + period]);
                assert!(later <= now + 1, "{kind} loop {i} slot {}: {now} -> {later}", start + t);
                if later < now {
                    // the later step's age is fixed by deliveries anywhere in it
                    let k = p.step_at((start + t + period) as u64).unwrap();
                    let from = p.step_start(k) as usize;
                    let to = (p.step_start(k + 1) as usize).min(log.len());
                    assert!(log[from..to].iter().any(|d| d.dl.contains(&i)));
                }
            }
        }
    }
}

#[test]
fn completed_steps_do_not_depend_on_later_slots() {
    let cfg = short(24, 1, 1, SchedulerKind::Voi, 3, 2_000);
    let long = traced(&RunConfig { t_sim: 3_000, ..cfg.clone() });
    let cut = traced(&cfg);
    let long_traces = long.traces.unwrap();
    for (i, tr) in cut.traces.unwrap().iter().enumerate() {
        // the trailing step of the shorter run is still open, so compare
        // everything before its start
        let period = 10;
        let open_from = ((cfg.t_sim - tr.start_slot) / period) * period;
        let keep = open_from.min(tr.aoi.len() as u64) as usize;
        assert_eq!(tr.aoi[..keep], long_traces[i].aoi[..keep], "loop {i}");
        assert_eq!(tr.error_norm[..keep], long_traces[i].error_norm[..keep], "loop {i}");
    }
}

// ============================================================================
// Metrics
// ============================================================================

#[test]
fn aggregates_equal_trace_recomputation() {
    for kind in SchedulerKind::ALL {
        let m = traced(&short(40, 2, 3, kind, 8, 2_500));
        let traces = m.traces.as_ref().unwrap();
        let avg = compute_avg_aoi(traces, m.t_sim);
        let iae = compute_iae(traces);
        assert!((avg - m.avg_aoi).abs() <= 1e-12 * avg.max(1.0));
        assert!((iae - m.iae).abs() <= 1e-9 * iae.max(1.0));
        let per_loop = m.loops.iter().map(|l| l.avg_aoi).sum::<f64>() / m.n_loops() as f64;
        assert!((per_loop - m.avg_aoi).abs() <= 1e-12 * per_loop.max(1.0));
    }
}

#[test]
fn warmup_is_excluded_from_traces_and_metrics() {
    let cfg = RunConfig {
        warmup: 500,
        ..short(16, 1, 1, SchedulerKind::Aoi, 2, 1_500)
    };
    let m = traced(&cfg);
    for tr in m.traces.as_ref().unwrap() {
        assert_eq!(tr.start_slot, 500);
        assert_eq!(tr.aoi.len(), 1_000);
    }
    assert!((compute_avg_aoi(m.traces.as_ref().unwrap(), 1_000) - m.avg_aoi).abs() < 1e-12);
}

#[test]
fn single_loop_is_never_delayed() {
    for kind in SchedulerKind::ALL {
        let cfg = RunConfig {
            classes: vec![LoopClass::deadbeat(1.25, 1.0, 1)],
            ..RunConfig::reference(4, 1, 1, kind, 17)
        };
        let m = run_simulation(&cfg).unwrap();
        assert_eq!(m.avg_aoi, 0.0, "{kind}");
        assert_eq!(m.iae, 0.0, "{kind}");
    }
}

#[test]
fn noiseless_plants_have_zero_error() {
    for kind in SchedulerKind::ALL {
        let m = run_simulation(&with_noise(short(80, 1, 1, kind, 4, 3_000), 0.0)).unwrap();
        assert_eq!(m.iae, 0.0, "{kind}");
        assert!(m.avg_aoi > 0.0);
    }
}

#[test]
fn aoi_scheduler_is_fair_between_symmetric_loops() {
    for (n, r) in [(40usize, 1usize), (80, 3), (120, 3)] {
        let cfg = RunConfig {
            classes: vec![LoopClass::deadbeat(1.0, 1.0, n)],
            ..RunConfig::reference(n, r, r, SchedulerKind::Aoi, 21)
        };
        let m = run_simulation(&cfg).unwrap();
        let ages: Vec<f64> = m.loops.iter().map(|l| l.avg_aoi).collect();
        let lo = ages.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ages.iter().cloned().fold(0.0, f64::max);
        assert!((hi - lo) / hi < 0.05, "N={n} {r}:{r}: ages {lo:.3}..{hi:.3}");
    }
}

// ============================================================================
// Scheduling behaviour over whole runs
// ============================================================================

#[test]
fn voi_stops_serving_stable_loops_under_saturation() {
    let cfg = short(40, 1, 1, SchedulerKind::Voi, 6, 6_000);
    let mut sim = Simulation::new(cfg).unwrap();
    let stable: Vec<usize> = (0..40).filter(|&i| sim.class_of(i) == 0).collect();
    let mut late_grants = 0;
    while !sim.is_done() {
        let t = sim.slot();
        let d = sim.step().unwrap();
        if t >= 3_000 {
            late_grants += d.ul.iter().chain(&d.dl).filter(|i| stable.contains(i)).count();
        }
    }
    assert_eq!(late_grants, 0);
}

#[test]
fn aoi_grants_ignore_noise_level() {
    let base = short(40, 1, 2, SchedulerKind::Aoi, 12, 2_000);
    assert_eq!(decisions(&base), decisions(&with_noise(base.clone(), 0.3)));
}

#[test]
fn runs_are_reproducible() {
    for kind in SchedulerKind::ALL {
        let cfg = traced_config(kind);
        assert_eq!(run_simulation(&cfg).unwrap(), run_simulation(&cfg).unwrap());
    }
}

fn traced_config(kind: SchedulerKind) -> RunConfig {
    RunConfig {
        keep_traces: true,
        ..short(32, 2, 1, kind, 99, 1_500)
    }
}

#[test]
fn schedulers_see_identical_noise() {
    let sums: Vec<u64> = SchedulerKind::ALL
        .iter()
        .map(|&k| run_simulation(&short(20, 1, 1, k, 31, 1_000)).unwrap().noise_checksum())
        .collect();
    assert!(sums.windows(2).all(|w| w[0] == w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn voi_grants_are_invariant_to_common_noise_scaling(
        seed in 0u64..1_000,
        exponent in -2i32..=3,
        n in 4usize..=40,
        r_ul in 1usize..=3,
        r_dl in 1usize..=3,
    ) {
        let base = short(n, r_ul, r_dl, SchedulerKind::Voi, seed, 600);
        let scaled = with_noise(base.clone(), 4f64.powi(exponent));
        prop_assert_eq!(decisions(&base), decisions(&scaled));
    }

    #[test]
    fn random_runs_respect_capacities_and_invariants(
        seed in any::<u64>(),
        n in 1usize..=30,
        r_ul in 1usize..=4,
        r_dl in 1usize..=4,
        period in 1u64..=12,
        kind in prop::sample::select(SchedulerKind::ALL.to_vec()),
    ) {
        let cfg = RunConfig {
            classes: vec![
                LoopClass::deadbeat(0.75, 1.0, n.div_ceil(2)),
                LoopClass::deadbeat(1.5, 0.5, n / 2),
            ],
            sampling_period: period,
            ..short(n, r_ul, r_dl, kind, seed, 400)
        };
        let mut sim = Simulation::new(cfg).unwrap();
        while !sim.is_done() {
            let d = sim.step().unwrap();
            prop_assert!(d.ul.len() <= r_ul && d.dl.len() <= r_dl);
        }
        let m = sim.finish().unwrap();
        prop_assert!(m.avg_aoi >= 0.0 && m.iae >= 0.0);
        prop_assert!(m.avg_aoi.is_finite() && m.iae.is_finite());
    }
}
