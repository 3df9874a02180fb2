//! Layer descriptions, L1 tiling and cluster mappings.

pub mod layer;
pub mod plan;
pub mod tiling;

use thiserror::Error;

pub use layer::{parse_layer_table, tiles_required, LayerDescriptor};
pub use plan::{
    critical_stage, map_data_parallel, map_pipelining, pipeline_stage_cycles, Assignment, ChannelSlice, Edge,
    Endpoint, MappingPlan, StageTimes, Strategy,
};
pub use tiling::{balanced_split, build_tile_plan, ima_job_decompose, TilePlan, RUNTIME_RESERVE_BYTES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("one pixel needs {needed} bytes of double-buffered L1 but only {budget} are available")]
    TileInfeasible { needed: u64, budget: u64 },
    #[error("layer table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error("invalid mapping plan: {0}")]
    Plan(String),
    #[error("unknown strategy `{0}` (expected pipelining or data_parallel)")]
    UnknownStrategy(String),
}
