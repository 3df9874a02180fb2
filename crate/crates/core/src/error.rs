use thiserror::Error;

use crate::engine::{Cycle, ResourceId};
use crate::mapping::MapError;

/// Errors raised while building or running a simulation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event scheduled at cycle {time} but simulation time is already {now}")]
    ScheduleInPast { time: Cycle, now: Cycle },
    #[error("watchdog: more than {limit} events processed, a model is probably livelocked")]
    Watchdog { limit: u64 },
    #[error("deadlock at cycle {cycle}: blocked waits {blocked:?}")]
    Deadlock { cycle: Cycle, blocked: Vec<String> },
    #[error("timeline entry on {resource} [{start}, {end}) overlaps or is inverted")]
    TimelineOrder {
        resource: ResourceId,
        start: Cycle,
        end: Cycle,
    },
    #[error("IMA job {c_in}x{c_out} exceeds the {rows}x{cols} crossbar")]
    CrossbarExceeded {
        c_in: u32,
        c_out: u32,
        rows: u32,
        cols: u32,
    },
    #[error("IMA job on cluster {cluster} reads buffer {buffer} before it is ready")]
    BufferNotReady { cluster: usize, buffer: u32 },
    #[error("invalid DMA descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("broadcast requested but the interconnect does not support it")]
    BroadcastUnsupported,
    #[error("broadcast needs at least one destination")]
    EmptyBroadcast,
    #[error("L2 address {addr:#x}+{bytes} is outside the {capacity}-byte L2")]
    L2OutOfRange { addr: u64, bytes: u64, capacity: u64 },
    #[error("cluster index {0} out of range")]
    NoSuchCluster(usize),
    #[error(transparent)]
    Mapping(#[from] MapError),
}
