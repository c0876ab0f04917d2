use std::collections::BTreeMap;

use serde::Serialize;

use crate::sphinx::{DropReason, NodeId};
use crate::time::SimTime;

pub type PacketId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeliveryRecord {
    pub packet: PacketId,
    pub endpoint: NodeId,
    pub submitted_at: SimTime,
    pub delivered_at: SimTime,
    /// Held in the provider inbox because the endpoint was offline.
    pub queued: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DropRecord {
    pub packet: PacketId,
    pub node: NodeId,
    pub at: SimTime,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LostRecord {
    pub packet: PacketId,
    pub node: NodeId,
    pub at: SimTime,
}

/// Packet outcomes and per-node counters for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SimReport {
    pub submitted: u64,
    pub deliveries: Vec<DeliveryRecord>,
    pub drops: Vec<DropRecord>,
    pub lost: Vec<LostRecord>,
    /// Packets handled by each mix/provider, and deliveries per endpoint.
    pub node_counts: BTreeMap<u32, u64>,
}

impl SimReport {
    pub fn terminated(&self) -> u64 {
        (self.deliveries.len() + self.drops.len() + self.lost.len()) as u64
    }

    pub fn drops_with(&self, reason: DropReason) -> usize {
        self.drops.iter().filter(|d| d.reason == reason).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub(crate) fn bump(&mut self, node: NodeId) {
        *self.node_counts.entry(node.0).or_default() += 1;
    }
}
