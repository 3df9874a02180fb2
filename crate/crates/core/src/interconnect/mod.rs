//! Cluster-to-L2 and cluster-to-cluster communication fabric.

pub mod l2;
pub mod link;

pub use l2::{GrantSchedule, L2Memory, L2Request};
pub use link::{
    broadcast_transfer, link_transfer, BroadcastOutcome, Direction, FlowId, FlowProgress, FlowSpec, Link,
    LinkRequest, LinkStats,
};
