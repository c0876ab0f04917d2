//! User devices: registration, quorum lookups, and the ContactInit/AddFriend
//! handshake that ends in a shared session key.

mod handshake;
mod lookup;
mod register;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore};

use crate::crypto::{GroupElement, KeyPair, Seed};
use crate::discovery::Directory;
use crate::effect::{Effect, Env, OpEvent, OpKind, Timer, Trace};
use crate::email::EmailMessage;
use crate::sphinx::{create_surb, ContactInfo, NodeId, Surb};
use crate::time::SimDuration;
use crate::wire::{Nonce, WireMessage};

pub use handshake::{InitBody, PeerIdentity, INIT_BODY_LEN, KEY_CONFIRM_LABEL, MAX_CODEWORD_LEN};
pub use lookup::{LookupOutcome, LookupRejection, LookupSession, OwnerBlindingState};

pub(crate) use handshake::reply_mac_input;
use handshake::{PendingSearchee, SearcheeSession, SearcherSession};
use register::RegisterState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityChoice {
    Named,
    Anonymous,
}

/// What the searchee learns about an incoming request before deciding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncomingRequest {
    pub from: PeerIdentity,
    pub codeword: Option<String>,
}

#[derive(Clone, Default)]
pub enum RespondPolicy {
    #[default]
    Always,
    Never,
    /// Respond only when the request carries this codeword.
    Codeword(String),
    Custom(Arc<dyn Fn(&IncomingRequest) -> bool + Send + Sync>),
}

impl RespondPolicy {
    pub fn accepts(&self, req: &IncomingRequest) -> bool {
        match self {
            RespondPolicy::Always => true,
            RespondPolicy::Never => false,
            RespondPolicy::Codeword(c) => req.codeword.as_deref() == Some(c.as_str()),
            RespondPolicy::Custom(f) => f(req),
        }
    }
}

impl fmt::Debug for RespondPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RespondPolicy::Always => f.write_str("Always"),
            RespondPolicy::Never => f.write_str("Never"),
            RespondPolicy::Codeword(c) => f.debug_tuple("Codeword").field(c).finish(),
            RespondPolicy::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientConfig {
    pub lookup_timeout: SimDuration,
    pub contact_timeout: SimDuration,
    pub register_timeout: SimDuration,
    /// Lookup rounds (each with a fresh nonce) before giving up.
    pub max_lookup_attempts: usize,
    pub max_register_attempts: usize,
    /// Fresh lookups after ContactInit exhausted its reflectors.
    pub max_discovery_restarts: usize,
}

impl ClientConfig {
    /// Timeouts as multiples of the mean one-way latency.
    pub fn from_one_way(mean: SimDuration) -> Self {
        ClientConfig {
            lookup_timeout: mean * 10,
            contact_timeout: mean * 30,
            register_timeout: mean * 60,
            max_lookup_attempts: 3,
            max_register_attempts: 5,
            max_discovery_restarts: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FriendRecord {
    pub peer: PeerIdentity,
    pub k_s: Seed,
    pub surbs: Vec<Surb>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum LookupPurpose {
    Discover { mode: IdentityChoice, codeword: Option<String>, op: u64, attempt: usize, restarts: usize },
    /// The searchee checking a named searcher; keyed by the pending request.
    PeerCheck { pending: u64, attempt: usize },
}

#[derive(Debug, Clone)]
pub struct UserDevice {
    pub id: NodeId,
    keys: KeyPair,
    pub contact: ContactInfo,
    /// The email address this device registers and is looked up under.
    pub username: String,
    directory: Directory,
    pub config: ClientConfig,
    pub policy: RespondPolicy,
    /// First reflector for contact requests; random when unset.
    pub reflector_hint: Option<NodeId>,
    next_op: u64,
    next_pending: u64,
    registration: Option<RegisterState>,
    lookups: BTreeMap<Nonce, (LookupSession, LookupPurpose)>,
    blinding: OwnerBlindingState,
    searcher: BTreeMap<[u8; 32], SearcherSession>,
    pending_searchee: BTreeMap<u64, PendingSearchee>,
    searchee: BTreeMap<[u8; 32], SearcheeSession>,
    seen_inits: BTreeSet<[u8; 32]>,
    waiting_inits: BTreeMap<Nonce, Vec<WireMessage>>,
    waiting_replies: BTreeMap<Nonce, Vec<WireMessage>>,
    replied_emails: BTreeSet<String>,
    pub friends: Vec<FriendRecord>,
}

impl UserDevice {
    pub fn new(id: NodeId, keys: KeyPair, contact: ContactInfo, username: &str, directory: Directory, config: ClientConfig) -> Self {
        assert_eq!(contact.pk, keys.pk, "contact key must be the device key");
        UserDevice {
            id,
            keys,
            contact,
            username: username.to_string(),
            directory,
            config,
            policy: RespondPolicy::Always,
            reflector_hint: None,
            next_op: 0,
            next_pending: 0,
            registration: None,
            lookups: BTreeMap::new(),
            blinding: OwnerBlindingState::default(),
            searcher: BTreeMap::new(),
            pending_searchee: BTreeMap::new(),
            searchee: BTreeMap::new(),
            seen_inits: BTreeSet::new(),
            waiting_inits: BTreeMap::new(),
            waiting_replies: BTreeMap::new(),
            replied_emails: BTreeSet::new(),
            friends: Vec::new(),
        }
    }

    pub fn public_key(&self) -> GroupElement {
        self.keys.pk
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    /// The device secret, as an adversary controlling the device would hold it.
    pub fn compromise(&self) -> KeyPair {
        self.keys.clone()
    }

    pub fn blinding(&self) -> &OwnerBlindingState {
        &self.blinding
    }

    pub fn active_lookups(&self) -> usize {
        self.lookups.len()
    }

    fn new_op(&mut self, kind: OpKind, out: &mut Vec<Effect>) -> u64 {
        let op = self.next_op;
        self.next_op += 1;
        out.push(Effect::Trace(Trace::Op { op, kind, event: OpEvent::Start }));
        op
    }

    fn finish_op(op: u64, kind: OpKind, event: OpEvent, out: &mut Vec<Effect>) {
        out.push(Effect::Trace(Trace::Op { op, kind, event }));
    }

    /// A fresh single-use reply block leading back to this device.
    fn self_surb<R: RngCore + CryptoRng>(&self, env: &Env<'_>, rng: &mut R) -> Surb {
        let route = env.topology.random_route(rng, &self.contact, env.mu).expect("own contact routes");
        create_surb(&route, rng).expect("valid route")
    }

    fn random_node<R: RngCore>(&self, rng: &mut R, avoid: &[NodeId]) -> NodeId {
        let fresh: Vec<NodeId> = self.directory.nodes.iter().map(|e| e.id).filter(|id| !avoid.contains(id)).collect();
        let pool: Vec<NodeId> = if fresh.is_empty() { self.directory.nodes.iter().map(|e| e.id).collect() } else { fresh };
        *pool.choose(rng).expect("directory is not empty")
    }

    fn start_lookup<R: RngCore + CryptoRng>(
        &mut self,
        env: &Env<'_>,
        target: &str,
        purpose: LookupPurpose,
        rng: &mut R,
    ) -> Vec<Effect> {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let mut out = Vec::with_capacity(self.directory.n() + 1);
        for entry in self.directory.nodes.clone() {
            let reply_surb = self.self_surb(env, rng).to_bytes();
            out.push(Effect::Send {
                to: entry.contact,
                msg: WireMessage::LookupRequest { target: target.to_string(), nonce, reply_surb },
            });
        }
        out.push(Effect::Timer { after: self.config.lookup_timeout, timer: Timer::LookupTimeout(nonce) });
        self.lookups.insert(nonce, (LookupSession::new(target, nonce), purpose));
        out
    }

    /// Looks up `target` and, once a quorum agrees, sends it a contact request.
    pub fn discover<R: RngCore + CryptoRng>(
        &mut self,
        env: &Env<'_>,
        target: &str,
        mode: IdentityChoice,
        codeword: Option<String>,
        rng: &mut R,
    ) -> Vec<Effect> {
        self.discover_inner(env, target, mode, codeword, 0, rng)
    }

    fn discover_inner<R: RngCore + CryptoRng>(
        &mut self,
        env: &Env<'_>,
        target: &str,
        mode: IdentityChoice,
        codeword: Option<String>,
        restarts: usize,
        rng: &mut R,
    ) -> Vec<Effect> {
        let mut out = Vec::new();
        let op = self.new_op(OpKind::Lookup, &mut out);
        let purpose = LookupPurpose::Discover { mode, codeword, op, attempt: 1, restarts };
        out.extend(self.start_lookup(env, target, purpose, rng));
        out
    }

    pub fn handle_message<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, msg: WireMessage, rng: &mut R) -> Vec<Effect> {
        match msg {
            WireMessage::LookupResponse { node, nonce, surb, bpk, sig } => {
                self.on_lookup_response(env, node, nonce, &surb, &bpk, &sig, rng)
            }
            WireMessage::BlindingNotice { node, nonce, y, sig } => self.on_blinding_notice(env, node, nonce, &y, &sig, rng),
            m @ WireMessage::ContactInit { .. } => self.on_contact_init(env, m, rng),
            m @ WireMessage::AddFriendReply { .. } => self.on_add_friend_reply(env, m, rng),
            m @ WireMessage::AddFriendFinish { .. } => self.on_add_friend_finish(env, m, rng),
            m @ WireMessage::KeyConfirm { .. } => self.on_key_confirm(m),
            WireMessage::Confirmation { node, username, contact, sig } => {
                self.on_registration_confirmation(node, &username, &contact, &sig)
            }
            _ => Vec::new(),
        }
    }

    pub fn handle_timer<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, timer: Timer, rng: &mut R) -> Vec<Effect> {
        match timer {
            Timer::LookupTimeout(nonce) => self.on_lookup_timeout(env, nonce, rng),
            Timer::ContactInitTimeout(g_a) => self.on_contact_timeout(env, g_a, rng),
            Timer::RegisterTimeout(reg_id) => self.on_register_timeout(env, reg_id, rng),
            Timer::DAuthGrace(_) => Vec::new(),
        }
    }

    pub fn handle_email(&mut self, email: EmailMessage) -> Vec<Effect> {
        self.on_verification_email(email)
    }

    #[allow(clippy::too_many_arguments)]
    fn on_lookup_response<R: RngCore + CryptoRng>(
        &mut self,
        env: &Env<'_>,
        node: NodeId,
        nonce: Nonce,
        surb: &[u8],
        bpk: &[u8; 32],
        sig: &[u8],
        rng: &mut R,
    ) -> Vec<Effect> {
        let Some((session, _)) = self.lookups.get_mut(&nonce) else {
            return vec![Effect::Trace(Trace::LookupRejected {
                nonce,
                reason: LookupRejection::WrongNonce.as_str().into(),
            })];
        };
        match session.on_response(&self.directory, node, &nonce, surb, bpk, sig) {
            LookupOutcome::Pending => Vec::new(),
            LookupOutcome::Rejected(r) => {
                vec![Effect::Trace(Trace::LookupRejected { nonce, reason: r.as_str().into() })]
            }
            LookupOutcome::Complete { surb, bpk } => {
                let (session, purpose) = self.lookups.remove(&nonce).expect("present");
                let mut out = vec![Effect::Trace(Trace::LookupAccepted {
                    nonce,
                    target: session.target.clone(),
                    surb: surb.clone(),
                    bpk,
                })];
                match purpose {
                    LookupPurpose::Discover { mode, codeword, op, restarts, .. } => {
                        Self::finish_op(op, OpKind::Lookup, OpEvent::Success, &mut out);
                        out.extend(self.contact_init(env, &session.target, nonce, &surb, &bpk, mode, codeword, restarts, rng));
                    }
                    LookupPurpose::PeerCheck { pending, .. } => {
                        out.extend(self.respond_after_peer_check(env, pending, nonce, &bpk, rng));
                    }
                }
                out
            }
        }
    }

    fn on_lookup_timeout<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, nonce: Nonce, rng: &mut R) -> Vec<Effect> {
        let Some((session, purpose)) = self.lookups.remove(&nonce) else { return Vec::new() };
        let mut out = Vec::new();
        match purpose {
            LookupPurpose::Discover { mode, codeword, op, attempt, restarts } => {
                if attempt < self.config.max_lookup_attempts {
                    let p = LookupPurpose::Discover { mode, codeword, op, attempt: attempt + 1, restarts };
                    out.extend(self.start_lookup(env, &session.target, p, rng));
                } else {
                    Self::finish_op(op, OpKind::Lookup, OpEvent::Failure("lookup timeout".into()), &mut out);
                }
            }
            LookupPurpose::PeerCheck { pending, attempt } => {
                if attempt < self.config.max_lookup_attempts {
                    let p = LookupPurpose::PeerCheck { pending, attempt: attempt + 1 };
                    out.extend(self.start_lookup(env, &session.target, p, rng));
                } else {
                    self.pending_searchee.remove(&pending);
                }
            }
        }
        out
    }

    fn on_blinding_notice<R: RngCore + CryptoRng>(
        &mut self,
        env: &Env<'_>,
        node: NodeId,
        nonce: Nonce,
        y: &[u8; 32],
        sig: &[u8],
        rng: &mut R,
    ) -> Vec<Effect> {
        if self.blinding.on_notice(&self.directory, node, &nonce, y, sig).is_none() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for m in self.waiting_inits.remove(&nonce).unwrap_or_default() {
            out.extend(self.on_contact_init(env, m, rng));
        }
        for m in self.waiting_replies.remove(&nonce).unwrap_or_default() {
            out.extend(self.on_add_friend_reply(env, m, rng));
        }
        out
    }
}
