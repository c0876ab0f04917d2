//! Outputs of protocol state machines. The harness turns these into packets,
//! emails and timers.

use crate::email::{DomainKeyStore, EmailMessage};
use crate::sim::{OutboundPacket, Topology};
use crate::sphinx::{ContactInfo, NodeId, Surb};
use crate::time::{SimDuration, SimTime};
use crate::wire::{Nonce, RegId, WireMessage};

/// Read-only view of the world handed to every handler call.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub now: SimTime,
    pub topology: &'a Topology,
    /// Mean per-hop delay in seconds, for route sampling.
    pub mu: f64,
    pub dkim: &'a DomainKeyStore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Timer {
    DAuthGrace(RegId),
    RegisterTimeout(RegId),
    LookupTimeout(Nonce),
    ContactInitTimeout([u8; 32]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Register,
    Lookup,
    ContactInitAddFriend,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Register => "register",
            OpKind::Lookup => "lookup",
            OpKind::ContactInitAddFriend => "contact_init_add_friend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpEvent {
    Start,
    Success,
    Failure(String),
}

/// Why an AddFriend endpoint gave up on a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbortReason {
    Signature,
    Mac,
    KeyConfirm,
    MissingBlindingKey,
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Searcher,
    Searchee,
}

/// Registration checks a discovery node applies to a forwarded reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegistrationCheck {
    UnknownRegistration,
    Unparseable,
    MissingChallenge,
    Dkim,
    Sender,
    DeltaMismatch,
    Invalid,
}

/// Structured trace for the harness. Never fed back into protocol logic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trace {
    Op { op: u64, kind: OpKind, event: OpEvent },
    LookupRejected { nonce: Nonce, reason: String },
    LookupAccepted { nonce: Nonce, target: String, surb: Vec<u8>, bpk: [u8; 32] },
    ContactInitSent { g_a: [u8; 32], reply_surb: Vec<u8>, reflector: NodeId, attempt: usize },
    NeedsNewLookup { g_a: [u8; 32] },
    SearcheeReplied { g_a: [u8; 32], g_b: [u8; 32], reply_surb: Vec<u8> },
    SearcheeIgnored,
    SearcherFinished { g_a: [u8; 32], g_b: [u8; 32] },
    FriendAdded { role: Role, k_s: [u8; 32] },
    Abort { role: Role, reason: AbortReason },
    UserRefusedEmail,
    NodeCheckFailed { node: NodeId, check: RegistrationCheck },
    NodeStored { node: NodeId, username: String, contact: ContactInfo },
    VerificationSent { node: NodeId, challenges: usize },
    ReflectDropped { node: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    /// Route a message to a known contact.
    Send { to: ContactInfo, msg: WireMessage },
    /// Send through a reply block. The message must fit in one packet.
    Reply { surb: Surb, msg: WireMessage },
    /// Hand a prebuilt packet to the network unchanged.
    Submit(OutboundPacket),
    /// Send an email. Unsigned messages are signed by the sender's domain.
    Email(EmailMessage),
    Timer { after: SimDuration, timer: Timer },
    Trace(Trace),
}
