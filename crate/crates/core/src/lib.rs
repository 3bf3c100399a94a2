//! Deterministic slot-level simulator of a two-hop cellular networked control
//! system. `N` LTI loops share UL (sensor to base station) and DL (base
//! station to controller) resources; a central scheduler at the base station
//! decides each slot which loops may transmit, using either the age or the
//! value of the information they carry.
//!
//! Modules, bottom-up:
//!
//! - [`model`]: loop parameters, plant dynamics, control law, seeded streams
//! - [`estimation`]: rollout estimator, expected error growth, link VoI
//! - [`network`]: sensor/base-station buffers, resource grid, delivery
//! - [`scheduling`]: AoI, VoI and random schedulers
//! - [`simulation`]: the slot loop and run metrics
//! - [`sweep`] / [`report`]: experiment grids and CSV output

pub mod estimation;
pub mod model;
pub mod network;
pub mod report;
pub mod scheduling;
pub mod simulation;
pub mod sweep;

pub use estimation::{
    aoi_of, estimate_state, estimation_error, expected_error_sq, voi_downlink, voi_uplink,
    ErrorGrowth, ErrorSample, EstimationError, EstimatorView,
};
pub use model::{
    control_input, draw_offset, map_slot_to_step, plant_step, sample_noise, ModelError,
    PlantState, RngStream, SubSystemParams, Substream,
};
pub use network::{
    BsBuffer, Hop, Network, NetworkError, Packet, ResourceGrid, ScheduleDecision, SensorBuffer,
};
pub use scheduling::{
    schedule_aoi, schedule_random, schedule_voi, Scheduler, SchedulerKind, SchedulerState,
    Snapshot,
};
pub use simulation::{
    compute_avg_aoi, compute_iae, run_simulation, LoopClass, LoopMetrics, LoopTrace, RunConfig,
    RunMetrics, SimError, Simulation,
};
pub use sweep::{run_sweep, run_sweep_observed, CellFailure, ResultRow, SweepOutcome};
