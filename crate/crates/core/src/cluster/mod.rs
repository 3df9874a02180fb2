//! In-cluster resources: banked L1, IMA, DMA descriptors and event unit.

pub mod dma;
pub mod event_unit;
pub mod ima;
pub mod l1;

pub use dma::{BroadcastKey, DmaDescriptor, DmaDirection};
pub use event_unit::EventUnit;
pub use ima::{ima_job_seconds, ima_phase_cycles, ImaJob, ImaPhases};
pub use l1::{L1Banks, L1Stats, RequesterClass, WordStream};
