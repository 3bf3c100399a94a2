//! Two-hop packet path: sensor buffers with replacement, the base-station
//! forwarding buffer, the FDD resource grid and end-of-slot delivery.

use nalgebra::DVector;
use thiserror::Error;

use crate::estimation::{EstimationError, EstimatorView};
use crate::model::{PlantState, SubSystemParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetworkError {
    #[error("resource grid needs at least one UL and one DL resource (got {ul}:{dl})")]
    EmptyGrid { ul: usize, dl: usize },
    #[error("{hop} grant of {granted} loops exceeds {capacity} resources")]
    OverCapacity {
        hop: Hop,
        granted: usize,
        capacity: usize,
    },
    #[error("{hop} grant for loop {loop_id} which has nothing new to send")]
    NotACandidate { hop: Hop, loop_id: usize },
    #[error("{hop} grant lists loop {loop_id} twice")]
    DuplicateGrant { hop: Hop, loop_id: usize },
    #[error("loop {loop_id}: {source}")]
    Estimation {
        loop_id: usize,
        source: EstimationError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hop {
    Uplink,
    Downlink,
}

impl std::fmt::Display for Hop {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Hop::Uplink => f.write_str("UL"),
            Hop::Downlink => f.write_str("DL"),
        }
    }
}

/// A sampled state tagged with its loop and generation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub loop_id: usize,
    pub gen_step: u64,
    pub payload: DVector<f64>,
}

/// Single-slot sensor queue; a newer sample replaces an unsent one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SensorBuffer {
    pub pending: Option<Packet>,
    pub delivered_up_to: Option<u64>,
}

/// Per-loop slot of the base-station buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BsEntry {
    pub packet: Option<Packet>,
    pub forwarded_up_to: Option<u64>,
}

/// Base-station forwarding buffer, one entry per loop.
#[derive(Debug, Clone, PartialEq)]
pub struct BsBuffer {
    entries: Vec<BsEntry>,
}

impl BsBuffer {
    pub fn new(loops: usize) -> Self {
        Self {
            entries: vec![BsEntry::default(); loops],
        }
    }

    pub fn entry(&self, loop_id: usize) -> &BsEntry {
        &self.entries[loop_id]
    }

    pub fn entries(&self) -> &[BsEntry] {
        &self.entries
    }

    /// Stores `packet`, dropping any older buffered packet of the same loop.
    pub fn store(&mut self, packet: Packet) {
        let slot = &mut self.entries[packet.loop_id];
        if slot
            .packet
            .as_ref()
            .is_none_or(|held| held.gen_step < packet.gen_step)
        {
            slot.packet = Some(packet);
        }
    }
}

/// Cardinalities of the disjoint UL and DL resource pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceGrid {
    ul: usize,
    dl: usize,
}

impl ResourceGrid {
    pub fn new(ul: usize, dl: usize) -> Result<Self, NetworkError> {
        if ul == 0 || dl == 0 {
            return Err(NetworkError::EmptyGrid { ul, dl });
        }
        Ok(Self { ul, dl })
    }

    pub fn ul(&self) -> usize {
        self.ul
    }

    pub fn dl(&self) -> usize {
        self.dl
    }

    /// UL is treated as the bottleneck when the pools are equal.
    pub fn uplink_is_bottleneck(&self) -> bool {
        self.ul <= self.dl
    }
}

/// Loops granted a resource on each hop in one slot, ascending by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ScheduleDecision {
    pub ul: Vec<usize>,
    pub dl: Vec<usize>,
}

impl ScheduleDecision {
    pub fn new(mut ul: Vec<usize>, mut dl: Vec<usize>) -> Self {
        ul.sort_unstable();
        dl.sort_unstable();
        Self { ul, dl }
    }

    pub fn is_empty(&self) -> bool {
        self.ul.is_empty() && self.dl.is_empty()
    }

    /// Checks caps, duplicates and candidacy. `ul_candidates` and
    /// `dl_candidates` must be sorted.
    pub fn validate(
        &self,
        grid: &ResourceGrid,
        ul_candidates: &[usize],
        dl_candidates: &[usize],
    ) -> Result<(), NetworkError> {
        for (hop, granted, cap, cands) in [
            (Hop::Uplink, &self.ul, grid.ul(), ul_candidates),
            (Hop::Downlink, &self.dl, grid.dl(), dl_candidates),
        ] {
            if granted.len() > cap {
                return Err(NetworkError::OverCapacity {
                    hop,
                    granted: granted.len(),
                    capacity: cap,
                });
            }
            for (pos, &id) in granted.iter().enumerate() {
                if granted[..pos].contains(&id) {
                    return Err(NetworkError::DuplicateGrant { hop, loop_id: id });
                }
                if cands.binary_search(&id).is_err() {
                    return Err(NetworkError::NotACandidate { hop, loop_id: id });
                }
            }
        }
        Ok(())
    }
}

// ============================================================================
// Network state
// ============================================================================

/// Everything between the sensors and the controllers: buffers on both hops
/// and the information sets held at the base station and the controllers.
#[derive(Debug, Clone)]
pub struct Network {
    grid: ResourceGrid,
    sensors: Vec<SensorBuffer>,
    bs: BsBuffer,
    bs_views: Vec<EstimatorView>,
    controller_views: Vec<EstimatorView>,
}

impl Network {
    pub fn new(grid: ResourceGrid, params: &[SubSystemParams]) -> Self {
        let n = params.len();
        Self {
            grid,
            sensors: vec![SensorBuffer::default(); n],
            bs: BsBuffer::new(n),
            bs_views: params.iter().map(|p| EstimatorView::new(p.state_dim())).collect(),
            controller_views: params.iter().map(|p| EstimatorView::new(p.state_dim())).collect(),
        }
    }

    pub fn grid(&self) -> ResourceGrid {
        self.grid
    }

    pub fn loops(&self) -> usize {
        self.sensors.len()
    }

    pub fn sensor(&self, loop_id: usize) -> &SensorBuffer {
        &self.sensors[loop_id]
    }

    pub fn bs_buffer(&self) -> &BsBuffer {
        &self.bs
    }

    pub fn bs_view(&self, loop_id: usize) -> &EstimatorView {
        &self.bs_views[loop_id]
    }

    pub fn controller_view(&self, loop_id: usize) -> &EstimatorView {
        &self.controller_views[loop_id]
    }

    /// Samples the plant if slot `t` is a sampling instant of the loop,
    /// replacing any unsent packet. Returns whether a packet was generated.
    pub fn maybe_generate(&mut self, t: u64, p: &SubSystemParams, plant: &PlantState) -> bool {
        if !p.is_sampling_slot(t) {
            return false;
        }
        debug_assert_eq!(p.step_at(t), Some(plant.k));
        self.sensors[p.id()].pending = Some(Packet {
            loop_id: p.id(),
            gen_step: plant.k,
            payload: plant.x.clone(),
        });
        true
    }

    /// Loops whose pending sample is newer than what the base station holds.
    pub fn ul_candidates(&self) -> Vec<usize> {
        self.sensors
            .iter()
            .enumerate()
            .filter(|(i, s)| {
                s.pending.as_ref().is_some_and(|pkt| {
                    pkt.gen_step as i64 > self.bs_views[*i].latest_step_or_genesis()
                })
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Loops whose buffered base-station packet is newer than the
    /// controller's latest sample.
    pub fn dl_candidates(&self) -> Vec<usize> {
        self.bs
            .entries
            .iter()
            .enumerate()
            .filter(|(i, e)| {
                e.packet.as_ref().is_some_and(|pkt| {
                    pkt.gen_step as i64 > self.controller_views[*i].latest_step_or_genesis()
                })
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Commits the slot's transmissions. Both hops act on the state as of
    /// the start of the slot, so a packet received on UL now can only be
    /// forwarded from the next slot on.
    pub fn deliver(
        &mut self,
        decision: &ScheduleDecision,
        params: &[SubSystemParams],
    ) -> Result<(), NetworkError> {
        decision.validate(&self.grid, &self.ul_candidates(), &self.dl_candidates())?;

        for &i in &decision.dl {
            let entry = &mut self.bs.entries[i];
            let pkt = entry.packet.take().expect("validated DL candidate");
            entry.forwarded_up_to = Some(pkt.gen_step);
            self.controller_views[i]
                .receive(pkt.gen_step, pkt.payload, &params[i])
                .map_err(|source| NetworkError::Estimation { loop_id: i, source })?;
        }
        for &i in &decision.ul {
            let sensor = &mut self.sensors[i];
            let pkt = sensor.pending.take().expect("validated UL candidate");
            sensor.delivered_up_to = Some(pkt.gen_step);
            self.bs_views[i]
                .receive(pkt.gen_step, pkt.payload.clone(), &params[i])
                .map_err(|source| NetworkError::Estimation { loop_id: i, source })?;
            self.bs.store(pkt);
        }
        Ok(())
    }

    /// Propagates input `u[k]` into both information sets of a loop at the
    /// end of its control step.
    pub fn advance_step(&mut self, loop_id: usize, u: &DVector<f64>, p: &SubSystemParams) {
        self.bs_views[loop_id].advance(u.clone(), p);
        self.controller_views[loop_id].advance(u.clone(), p);
    }
}
