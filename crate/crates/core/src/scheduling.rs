//! Per-slot schedulers: greedy two-hop AoI with hop mirroring, greedy
//! per-hop VoI, and a uniform random baseline.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::model::{RngStream, Substream};
use crate::network::{ResourceGrid, ScheduleDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchedulerKind {
    Aoi,
    Voi,
    Random,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] = [SchedulerKind::Aoi, SchedulerKind::Voi, SchedulerKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Aoi => "aoi",
            SchedulerKind::Voi => "voi",
            SchedulerKind::Random => "random",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aoi" => Ok(SchedulerKind::Aoi),
            "voi" => Ok(SchedulerKind::Voi),
            "random" => Ok(SchedulerKind::Random),
            other => Err(format!("unknown scheduler '{other}' (expected aoi, voi or random)")),
        }
    }
}

// ============================================================================
// Snapshot
// ============================================================================

/// A loop with a sensor sample the base station has not seen yet.
#[derive(Debug, Clone, PartialEq)]
pub struct UlCandidate {
    pub loop_id: usize,
    /// Newest step held by the controller, -1 before the first reception.
    pub controller_latest_step: i64,
    /// Newest step held by the base station, -1 before the first reception.
    pub bs_latest_step: i64,
    /// The loop's current control step.
    pub step: u64,
    /// Slots elapsed since the controller's newest sample was generated.
    pub controller_age_slots: u64,
    /// Uplink value of information.
    pub value: f64,
}

impl UlCandidate {
    /// Controller-side age in steps.
    pub fn controller_age(&self) -> u64 {
        (self.step as i64 - self.controller_latest_step).max(0) as u64
    }
}

/// A loop whose buffered base-station packet is newer than the controller's.
#[derive(Debug, Clone, PartialEq)]
pub struct DlCandidate {
    pub loop_id: usize,
    pub buffered_step: u64,
    /// Downlink value of information.
    pub value: f64,
}

/// What the scheduler sees at the start of a slot: deliveries up to the end
/// of the previous slot plus this slot's fresh samples. Both lists are
/// sorted by loop id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub slot: u64,
    pub ul: Vec<UlCandidate>,
    pub dl: Vec<DlCandidate>,
}

impl Snapshot {
    pub fn ul_ids(&self) -> Vec<usize> {
        self.ul.iter().map(|c| c.loop_id).collect()
    }

    pub fn dl_ids(&self) -> Vec<usize> {
        self.dl.iter().map(|c| c.loop_id).collect()
    }
}

// ============================================================================
// Policies
// ============================================================================

/// Mutable state carried by a scheduler between slots.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    pub previous_ul: Vec<usize>,
    pub rng: RngStream,
}

impl SchedulerState {
    pub fn new(seed: u64) -> Self {
        Self {
            previous_ul: Vec::new(),
            rng: RngStream::for_role(seed, Substream::Scheduler),
        }
    }
}

/// Takes up to `limit` ids with the largest keys, ties to the lowest id.
fn top_by_key(mut keyed: Vec<(usize, f64)>, limit: usize) -> Vec<usize> {
    keyed.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        other => other,
    });
    keyed.into_iter().take(limit).map(|(id, _)| id).collect()
}

/// Two-hop greedy age scheduler.
///
/// The DL grant repeats last slot's UL grant (restricted to loops that are
/// still DL candidates). The UL grant fetches, among loops with pending data,
/// the `min(R_UL, R_DL)` loops with the oldest controllers, ties to the
/// lowest id. Age is taken at slot resolution; its step-level value is
/// `floor(age_slots / T_s)`, so loops of equal step age are ordered by how
/// long ago their controller's sample was taken. Under a UL bottleneck that is the plain greedy UL rule; under a
/// DL bottleneck it is the greedy DL choice for the next slot made one slot
/// early, so both branches share one rule.
pub fn schedule_aoi(
    snapshot: &Snapshot,
    grid: &ResourceGrid,
    state: &mut SchedulerState,
) -> ScheduleDecision {
    let dl: Vec<usize> = state
        .previous_ul
        .iter()
        .copied()
        .filter(|id| snapshot.dl.binary_search_by_key(id, |c| c.loop_id).is_ok())
        .collect();

    let keyed = snapshot
        .ul
        .iter()
        .map(|c| (c.loop_id, c.controller_age_slots as f64))
        .collect();
    let ul = top_by_key(keyed, grid.ul().min(grid.dl()));

    let decision = ScheduleDecision::new(ul, dl);
    state.previous_ul = decision.ul.clone();
    decision
}

/// Greedy per-hop VoI scheduler. Zero-valued candidates are never granted.
pub fn schedule_voi(snapshot: &Snapshot, grid: &ResourceGrid) -> ScheduleDecision {
    let pick = |values: Vec<(usize, f64)>, cap| {
        top_by_key(values.into_iter().filter(|(_, v)| *v > 0.0).collect(), cap)
    };
    let ul = pick(snapshot.ul.iter().map(|c| (c.loop_id, c.value)).collect(), grid.ul());
    let dl = pick(snapshot.dl.iter().map(|c| (c.loop_id, c.value)).collect(), grid.dl());
    ScheduleDecision::new(ul, dl)
}

/// Uniform sample without replacement of `min(R, |candidates|)` per hop.
pub fn schedule_random(
    snapshot: &Snapshot,
    grid: &ResourceGrid,
    state: &mut SchedulerState,
) -> ScheduleDecision {
    let mut pick = |ids: Vec<usize>, cap: usize| -> Vec<usize> {
        let amount = cap.min(ids.len());
        rand::seq::index::sample(state.rng.rng_mut(), ids.len(), amount)
            .into_iter()
            .map(|i| ids[i])
            .collect()
    };
    let ul = pick(snapshot.ul_ids(), grid.ul());
    let dl = pick(snapshot.dl_ids(), grid.dl());
    let decision = ScheduleDecision::new(ul, dl);
    state.previous_ul = decision.ul.clone();
    decision
}

/// A scheduler of a fixed kind together with its state.
#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    state: SchedulerState,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, seed: u64) -> Self {
        Self {
            kind,
            state: SchedulerState::new(seed),
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn state(&self) -> &SchedulerState {
        &self.state
    }

    pub fn decide(&mut self, snapshot: &Snapshot, grid: &ResourceGrid) -> ScheduleDecision {
        match self.kind {
            SchedulerKind::Aoi => schedule_aoi(snapshot, grid, &mut self.state),
            SchedulerKind::Voi => schedule_voi(snapshot, grid),
            SchedulerKind::Random => schedule_random(snapshot, grid, &mut self.state),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ul(loop_id: usize, age: u64, value: f64) -> UlCandidate {
        UlCandidate {
            loop_id,
            controller_latest_step: 0,
            bs_latest_step: 0,
            step: age,
            controller_age_slots: 10 * age,
            value,
        }
    }

    fn dl(loop_id: usize, value: f64) -> DlCandidate {
        DlCandidate {
            loop_id,
            buffered_step: 1,
            value,
        }
    }

    fn grid(ul: usize, dl: usize) -> ResourceGrid {
        ResourceGrid::new(ul, dl).unwrap()
    }

    #[test]
    fn aoi_picks_oldest_controllers() {
        let snap = Snapshot {
            slot: 0,
            ul: vec![ul(1, 5, 0.0), ul(2, 2, 0.0), ul(3, 7, 0.0)],
            dl: vec![],
        };
        let mut st = SchedulerState::new(0);
        let d = schedule_aoi(&snap, &grid(2, 3), &mut st);
        assert_eq!(d.ul, vec![1, 3]);
        assert!(d.dl.is_empty());
        assert_eq!(st.previous_ul, vec![1, 3]);
    }

    #[test]
    fn aoi_orders_equal_step_ages_by_slot_age() {
        let mut a = ul(4, 1, 0.0);
        a.controller_age_slots = 12;
        let mut b = ul(7, 1, 0.0);
        b.controller_age_slots = 17;
        let mut c = ul(9, 1, 0.0);
        c.controller_age_slots = 17;
        let snap = Snapshot {
            slot: 0,
            ul: vec![a, b, c],
            dl: vec![],
        };
        let d = schedule_aoi(&snap, &grid(1, 1), &mut SchedulerState::new(0));
        assert_eq!(d.ul, vec![7]);
    }

    #[test]
    fn aoi_without_contention_grants_all() {
        let snap = Snapshot {
            slot: 0,
            ul: (0..4).map(|i| ul(i, 1, 0.0)).collect(),
            dl: vec![],
        };
        let d = schedule_aoi(&snap, &grid(4, 6), &mut SchedulerState::new(0));
        assert_eq!(d.ul, vec![0, 1, 2, 3]);
    }

    #[test]
    fn aoi_mirrors_previous_uplink() {
        let mut st = SchedulerState::new(0);
        st.previous_ul = vec![2, 5];
        let snap = Snapshot {
            slot: 9,
            ul: vec![ul(2, 1, 0.0), ul(4, 3, 0.0)],
            dl: vec![dl(2, 0.0), dl(5, 0.0), dl(7, 9.0)],
        };
        let d = schedule_aoi(&snap, &grid(1, 3), &mut st);
        assert_eq!(d.dl, vec![2, 5]);
        assert_eq!(d.ul, vec![4]);
    }

    #[test]
    fn aoi_dl_bottleneck_caps_fetches_at_dl_capacity() {
        let snap = Snapshot {
            slot: 0,
            ul: (0..10).map(|i| ul(i, i as u64, 0.0)).collect(),
            dl: vec![],
        };
        let d = schedule_aoi(&snap, &grid(9, 3), &mut SchedulerState::new(0));
        assert_eq!(d.ul, vec![7, 8, 9]);
    }

    #[test]
    fn voi_examples() {
        let snap = Snapshot {
            slot: 0,
            ul: vec![ul(1, 0, 2.286), ul(2, 0, 5.0), ul(3, 0, 11.25)],
            dl: vec![dl(4, 2.25), dl(6, 2.25)],
        };
        let d = schedule_voi(&snap, &grid(1, 1));
        assert_eq!(d.ul, vec![3]);
        assert_eq!(d.dl, vec![4]);

        let zero = Snapshot {
            slot: 0,
            ul: vec![ul(0, 0, 0.0), ul(1, 0, 0.0)],
            dl: vec![dl(0, 0.0)],
        };
        assert!(schedule_voi(&zero, &grid(2, 2)).is_empty());
    }

    #[test]
    fn random_examples() {
        let mut st = SchedulerState::new(3);
        assert!(schedule_random(&Snapshot::default(), &grid(2, 2), &mut st).is_empty());

        let snap = Snapshot {
            slot: 0,
            ul: vec![ul(0, 0, 0.0), ul(4, 0, 0.0)],
            dl: vec![dl(1, 0.0)],
        };
        let d = schedule_random(&snap, &grid(3, 3), &mut st);
        assert_eq!(d.ul, vec![0, 4]);
        assert_eq!(d.dl, vec![1]);

        let big = Snapshot {
            slot: 0,
            ul: (0..20).map(|i| ul(i, 0, 0.0)).collect(),
            dl: (0..20).map(|i| dl(i, 0.0)).collect(),
        };
        let run = |seed| {
            let mut st = SchedulerState::new(seed);
            (0..50)
                .map(|_| schedule_random(&big, &grid(3, 2), &mut st))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn kind_parsing() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.name().parse::<SchedulerKind>().unwrap(), k);
        }
        assert!("fifo".parse::<SchedulerKind>().is_err());
    }

    fn arb_snapshot() -> impl Strategy<Value = Snapshot> {
        (
            proptest::collection::btree_map(0usize..40, (0u64..30, 0.0f64..20.0), 0..25),
            proptest::collection::btree_map(0usize..40, 0.0f64..20.0, 0..25),
        )
            .prop_map(|(u, d)| Snapshot {
                slot: 0,
                ul: u.into_iter().map(|(id, (age, v))| ul(id, age, v)).collect(),
                dl: d.into_iter().map(|(id, v)| dl(id, v)).collect(),
            })
    }

    proptest! {
        #[test]
        fn decisions_are_feasible_and_greedy(
            snap in arb_snapshot(),
            r_ul in 1usize..6,
            r_dl in 1usize..6,
            seed in any::<u64>(),
        ) {
            let g = grid(r_ul, r_dl);
            let ul_ids = snap.ul_ids();
            let dl_ids = snap.dl_ids();
            for kind in SchedulerKind::ALL {
                let mut s = Scheduler::new(kind, seed);
                let d = s.decide(&snap, &g);
                prop_assert!(d.validate(&g, &ul_ids, &dl_ids).is_ok());
            }

            let d = schedule_voi(&snap, &g);
            let value = |id: usize| snap.ul.iter().find(|c| c.loop_id == id).unwrap().value;
            for c in &snap.ul {
                if !d.ul.contains(&c.loop_id) {
                    prop_assert!(d.ul.iter().all(|&g| value(g) >= c.value));
                }
            }

            let d = schedule_aoi(&snap, &g, &mut SchedulerState::new(0));
            let age = |id: usize| snap.ul.iter().find(|c| c.loop_id == id).unwrap().controller_age();
            for c in &snap.ul {
                if !d.ul.contains(&c.loop_id) {
                    prop_assert!(d.ul.iter().all(|&g| age(g) >= c.controller_age()));
                }
            }
        }

        #[test]
        fn voi_selection_is_scale_invariant(snap in arb_snapshot(), scale in 0.01f64..100.0) {
            let g = grid(2, 3);
            let mut scaled = snap.clone();
            scaled.ul.iter_mut().for_each(|c| c.value *= scale);
            scaled.dl.iter_mut().for_each(|c| c.value *= scale);
            prop_assert_eq!(schedule_voi(&snap, &g).ul, schedule_voi(&scaled, &g).ul);
        }
    }
}
