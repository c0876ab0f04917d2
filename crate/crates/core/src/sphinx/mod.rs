//! Fixed-size onion packets with per-hop integrity, and single-use reply
//! blocks built from them.
//!
//! Geometry: at most [`MAX_HOPS`] hops, a [`BODY_LEN`]-byte body. Every packet
//! is [`PACKET_LEN`] bytes and every encoded SURB [`SURB_LEN`] bytes.

mod fragment;
mod onion;
mod packet;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{fake_public_key, CryptoError, GroupElement, ELEMENT_LEN, MAC_LEN};
use crate::time::SimDuration;

pub use fragment::{fragment, Fragment, FragmentError, Reassembler, FRAGMENT_HEADER_LEN, MAX_FRAGMENT_DATA};
pub use packet::{
    apply_surb, build_packet, create_surb, peel_packet, MixState, PayloadKey, Processed, SphinxHeader,
    SphinxPacket, Surb,
};

pub const MAX_HOPS: usize = 5;
pub const ROUTING_SLOT: usize = 64;
pub const ROUTING_INFO_LEN: usize = ROUTING_SLOT - MAC_LEN;
pub const BETA_LEN: usize = MAX_HOPS * ROUTING_SLOT;
pub const HEADER_LEN: usize = ELEMENT_LEN + MAC_LEN + BETA_LEN;
pub const TAG_SLOT: usize = MAC_LEN;
pub const TAG_BLOCK_LEN: usize = MAX_HOPS * TAG_SLOT;
pub const BODY_LEN: usize = 2048;
pub const PAYLOAD_LEN: usize = MAC_LEN + TAG_BLOCK_LEN + BODY_LEN;
pub const PACKET_LEN: usize = HEADER_LEN + PAYLOAD_LEN;
/// Largest application payload a single packet carries (body minus u16 length).
pub const MAX_PAYLOAD: usize = BODY_LEN - 2;
pub const PAYLOAD_KEY_LEN: usize = 64;
pub const SURB_LEN: usize = 4 + HEADER_LEN + 1 + MAX_HOPS * PAYLOAD_KEY_LEN;
pub const INBOX_LEN: usize = 16;
pub const CONTACT_LEN: usize = ELEMENT_LEN + 4 + INBOX_LEN;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Reserved destination every node treats as a drop.
    pub const BLACK_HOLE: NodeId = NodeId(u32::MAX);
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == NodeId::BLACK_HOLE {
            f.write_str("N#blackhole")
        } else {
            write!(f, "N#{}", self.0)
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InboxId(pub [u8; INBOX_LEN]);

impl fmt::Debug for InboxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Inbox({})", hex::encode(&self.0[..4]))
    }
}

/// Δ: what a sender needs to reach a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContactInfo {
    pub pk: GroupElement,
    pub provider: NodeId,
    pub inbox: InboxId,
}

impl ContactInfo {
    /// Δ_fake: the unowned public key at the black hole.
    pub fn fake() -> Self {
        ContactInfo {
            pk: fake_public_key(),
            provider: NodeId::BLACK_HOLE,
            inbox: InboxId([0; INBOX_LEN]),
        }
    }

    pub fn is_fake(&self) -> bool {
        self.provider == NodeId::BLACK_HOLE
    }

    pub fn to_bytes(&self) -> [u8; CONTACT_LEN] {
        let mut out = [0u8; CONTACT_LEN];
        out[..ELEMENT_LEN].copy_from_slice(self.pk.as_bytes());
        out[ELEMENT_LEN..ELEMENT_LEN + 4].copy_from_slice(&self.provider.0.to_be_bytes());
        out[ELEMENT_LEN + 4..].copy_from_slice(&self.inbox.0);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, SphinxError> {
        if b.len() != CONTACT_LEN {
            return Err(SphinxError::Malformed("contact length"));
        }
        let pk = GroupElement::from_bytes_non_identity(&b[..ELEMENT_LEN])?;
        let provider = NodeId(u32::from_be_bytes(b[ELEMENT_LEN..ELEMENT_LEN + 4].try_into().unwrap()));
        let mut inbox = [0u8; INBOX_LEN];
        inbox.copy_from_slice(&b[ELEMENT_LEN + 4..]);
        Ok(ContactInfo { pk, provider, inbox: InboxId(inbox) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub node: NodeId,
    pub pk: GroupElement,
    /// Delay this hop applies before forwarding or delivering.
    pub delay: SimDuration,
}

/// Ordered hops; the last one is the destination provider (or the black hole).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteSpec {
    pub hops: Vec<Hop>,
    pub inbox: InboxId,
}

impl RouteSpec {
    pub fn new(hops: Vec<Hop>, inbox: InboxId) -> Result<Self, SphinxError> {
        let r = RouteSpec { hops, inbox };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), SphinxError> {
        if self.hops.is_empty() || self.hops.len() > MAX_HOPS {
            return Err(SphinxError::InvalidRoute("hop count must be in 1..=5"));
        }
        if self.hops.iter().any(|h| h.pk.is_identity()) {
            return Err(SphinxError::InvalidRoute("identity node key"));
        }
        let last = self.hops.len() - 1;
        if self.hops[..last].iter().any(|h| h.node == NodeId::BLACK_HOLE) {
            return Err(SphinxError::InvalidRoute("black hole before the final hop"));
        }
        Ok(())
    }

    pub fn destination(&self) -> NodeId {
        self.hops.last().expect("validated route").node
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Integrity,
    Replay,
    BlackHole,
    Malformed,
    UnknownInbox,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SphinxError {
    #[error("payload of {len} bytes exceeds the {max}-byte limit")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("invalid route: {0}")]
    InvalidRoute(&'static str),
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}
