//! DMA transfer descriptors.

use serde::{Deserialize, Serialize};

use crate::error::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmaDirection {
    L2ToL1,
    L1ToL2,
    L1ToL1Remote,
}

/// Subscribers of one broadcast share the same `id`; the transfer starts
/// once `group_size` of them are waiting on a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BroadcastKey {
    pub id: u64,
    pub group_size: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaDescriptor {
    pub direction: DmaDirection,
    pub bytes: u64,
    /// Issuing cluster.
    pub cluster: usize,
    pub l1_addr: u64,
    pub l2_addr: u64,
    /// Receiving cluster and its L1 address, for remote copies.
    pub remote: Option<(usize, u64)>,
    pub broadcast: Option<BroadcastKey>,
    /// Opaque value handed back on completion.
    pub tag: u64,
}

impl DmaDescriptor {
    pub fn l2_to_l1(cluster: usize, l2_addr: u64, l1_addr: u64, bytes: u64) -> Self {
        Self {
            direction: DmaDirection::L2ToL1,
            bytes,
            cluster,
            l1_addr,
            l2_addr,
            remote: None,
            broadcast: None,
            tag: 0,
        }
    }

    pub fn l1_to_l2(cluster: usize, l1_addr: u64, l2_addr: u64, bytes: u64) -> Self {
        Self {
            direction: DmaDirection::L1ToL2,
            ..Self::l2_to_l1(cluster, l2_addr, l1_addr, bytes)
        }
    }

    pub fn l1_to_remote(cluster: usize, l1_addr: u64, dst: usize, dst_addr: u64, bytes: u64) -> Self {
        Self {
            direction: DmaDirection::L1ToL1Remote,
            remote: Some((dst, dst_addr)),
            ..Self::l2_to_l1(cluster, 0, l1_addr, bytes)
        }
    }

    pub fn with_tag(mut self, tag: u64) -> Self {
        self.tag = tag;
        self
    }

    pub fn with_broadcast(mut self, key: BroadcastKey) -> Self {
        self.broadcast = Some(key);
        self
    }

    pub fn validate(&self, n_clusters: usize, broadcast_enabled: bool) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidDescriptor(m.to_string()));
        if self.bytes == 0 {
            return bad("bytes must be > 0");
        }
        if self.cluster >= n_clusters {
            return Err(SimError::NoSuchCluster(self.cluster));
        }
        match (self.direction, self.remote) {
            (DmaDirection::L1ToL1Remote, None) => return bad("remote copy needs a destination"),
            (DmaDirection::L1ToL1Remote, Some((dst, _))) => {
                if dst >= n_clusters {
                    return Err(SimError::NoSuchCluster(dst));
                }
                if dst == self.cluster {
                    return bad("remote copy needs distinct clusters");
                }
            }
            (_, Some(_)) => return bad("only remote copies name a destination cluster"),
            _ => {}
        }
        if let Some(key) = self.broadcast {
            if !broadcast_enabled {
                return Err(SimError::BroadcastUnsupported);
            }
            if self.direction != DmaDirection::L2ToL1 {
                return bad("only L2 reads can be broadcast");
            }
            if key.group_size == 0 {
                return Err(SimError::EmptyBroadcast);
            }
        }
        Ok(())
    }
}
