//! CASCADE reconciliation: schedules, the block registry, the mirrored
//! engine and the two session drivers.

pub mod engine;
pub mod registry;
pub mod schedule;
pub mod session;

pub use engine::{frame_digest, Engine, Role};
pub use registry::{partition, BlockId, BlockRef, BlockRegistry, SearchBatch};
pub use schedule::{make_schedule, make_schedule_with_constant, PartitionSchedule, ScheduleVariant};
pub use session::{
    run_correcting, run_reference, CorrectingSession, Outcome, ReconciliationResult, ReferenceReport,
    SessionConfig,
};
