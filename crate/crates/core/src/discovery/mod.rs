//! Discovery nodes: the replicated username → contact directory.
//!
//! Lookups are answered with a SURB and blinded key derived from a PRG seeded
//! by `KDF(nonce || username || k)`, so every honest node returns the same
//! bytes and an unregistered name looks like a registered one.

mod registration;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rand::{CryptoRng, RngCore};

use crate::crypto::{
    blind_public_key, fake_public_key, kdf_with, sign, BlindedPublicKey, DetPrg, GroupElement, KdfLabel, KeyPair,
    Scalar, SIGNATURE_LEN,
};
use crate::effect::{Effect, Env, Timer, Trace};
use crate::email::EmailMessage;
use crate::sim::{OutboundPacket, SimError, Topology};
use crate::sphinx::{create_surb, ContactInfo, NodeId, SphinxError, SphinxPacket, Surb, CONTACT_LEN};
use crate::time::SimDuration;
use crate::wire::{
    blinding_notice_signed_bytes, lookup_response_signed_bytes, Nonce, RegId, WireMessage, CHALLENGE_LEN,
};

pub use registration::PendingRegistration;

pub const SHARED_SECRET_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiscoveryError {
    #[error("route: {0}")]
    Route(#[from] SimError),
    #[error("sphinx: {0}")]
    Sphinx(#[from] SphinxError),
    #[error("contact key cannot be blinded")]
    Blind,
}

/// The secret `k` shared by all discovery nodes. Deliberately neither
/// serializable nor printable.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret([u8; SHARED_SECRET_LEN]);

impl SharedSecret {
    pub fn new(bytes: [u8; SHARED_SECRET_LEN]) -> Self {
        SharedSecret(bytes)
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; SHARED_SECRET_LEN];
        rng.fill_bytes(&mut b);
        SharedSecret(b)
    }

    /// Raw bytes, exposed for leak scans in tests.
    pub fn expose(&self) -> &[u8; SHARED_SECRET_LEN] {
        &self.0
    }
}

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeEntry {
    pub id: NodeId,
    pub signing_pk: GroupElement,
    pub contact: ContactInfo,
    pub email: String,
}

/// Public view of the deployment that every client and node knows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Directory {
    pub nodes: Vec<NodeEntry>,
    pub f: usize,
}

impl Directory {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn get(&self, id: NodeId) -> Option<&NodeEntry> {
        self.nodes.iter().find(|e| e.id == id)
    }

    pub fn by_email(&self, addr: &str) -> Option<&NodeEntry> {
        self.nodes.iter().find(|e| e.email == addr)
    }

    /// Identical lookup responses a client needs.
    pub fn lookup_quorum(&self) -> usize {
        self.f + 1
    }

    /// Challenges D_auth needs before emailing, and confirmations a
    /// registrant needs.
    pub fn strong_quorum(&self) -> usize {
        2 * self.f + 1
    }
}

#[derive(Clone)]
pub struct LookupMaterials {
    pub surb: Surb,
    pub y: Scalar,
    pub bpk: BlindedPublicKey,
    /// Where the SURB leads: the record, or Δ_fake.
    pub dest: ContactInfo,
}

impl fmt::Debug for LookupMaterials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LookupMaterials").field("bpk", &self.bpk).finish_non_exhaustive()
    }
}

fn materials_seed(username: &str, nonce: &Nonce, k: &SharedSecret) -> crate::crypto::Seed {
    let mut input = Vec::with_capacity(nonce.len() + username.len() + SHARED_SECRET_LEN);
    input.extend_from_slice(nonce);
    input.extend_from_slice(username.as_bytes());
    input.extend_from_slice(&k.0);
    kdf_with(&input, KdfLabel::SurbSeed)
}

/// The SURB, blinding key and blinded key every honest node derives for
/// `(username, nonce)`. PRG draw order: `y`, then the route, then SURB
/// construction.
pub fn deterministic_lookup_materials(
    topology: &Topology,
    mu: f64,
    username: &str,
    nonce: &Nonce,
    record: Option<&ContactInfo>,
    k: &SharedSecret,
) -> Result<LookupMaterials, DiscoveryError> {
    let mut prg = DetPrg::new(&materials_seed(username, nonce, k));
    let y = Scalar::random_nonzero(&mut prg);
    let dest = record.copied().unwrap_or_else(ContactInfo::fake);
    let route = topology.random_route(&mut prg, &dest, mu)?;
    let surb = create_surb(&route, &mut prg)?;
    let pk = if dest.is_fake() { fake_public_key() } else { dest.pk };
    let bpk = blind_public_key(&pk, &y).map_err(|_| DiscoveryError::Blind)?;
    Ok(LookupMaterials { surb, y, bpk, dest })
}

/// What one lookup produced: the response for the searcher, and the
/// blinding-key notice for the owner when the name is registered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupAnswer {
    pub response: WireMessage,
    pub notice: Option<(ContactInfo, WireMessage)>,
}

#[derive(Debug, Clone)]
pub struct DiscoveryNode {
    pub id: NodeId,
    keys: KeyPair,
    k: SharedSecret,
    directory: Directory,
    grace: SimDuration,
    records: BTreeMap<String, ContactInfo>,
    nonces: HashSet<Nonce>,
    pending: BTreeMap<RegId, PendingRegistration>,
    early_challenges: BTreeMap<RegId, BTreeMap<NodeId, [u8; CHALLENGE_LEN]>>,
    confirmations: BTreeMap<(String, [u8; CONTACT_LEN]), BTreeSet<NodeId>>,
}

impl DiscoveryNode {
    /// `grace` is how long D_auth waits for the last challenges before
    /// emailing with a 2f+1 subset.
    pub fn new(id: NodeId, keys: KeyPair, k: SharedSecret, directory: Directory, grace: SimDuration) -> Self {
        DiscoveryNode {
            id,
            keys,
            k,
            directory,
            grace,
            records: BTreeMap::new(),
            nonces: HashSet::new(),
            pending: BTreeMap::new(),
            early_challenges: BTreeMap::new(),
            confirmations: BTreeMap::new(),
        }
    }

    pub fn public_key(&self) -> GroupElement {
        self.keys.pk
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    pub fn record(&self, username: &str) -> Option<&ContactInfo> {
        self.records.get(username)
    }

    pub fn records(&self) -> &BTreeMap<String, ContactInfo> {
        &self.records
    }

    /// Inserts a record directly, bypassing email verification. Used to
    /// set up experiments.
    pub fn preload(&mut self, username: &str, contact: ContactInfo) {
        self.records.insert(username.to_string(), contact);
    }

    pub fn pending(&self, reg_id: &RegId) -> Option<&PendingRegistration> {
        self.pending.get(reg_id)
    }

    pub fn nonces_seen(&self) -> usize {
        self.nonces.len()
    }

    /// The node's signing key, as an adversary that corrupts it would hold it.
    pub fn compromise(&self) -> KeyPair {
        self.keys.clone()
    }

    pub(crate) fn sign(&self, msg: &[u8]) -> [u8; SIGNATURE_LEN] {
        sign(&self.keys.sk, msg).expect("node key is nonzero").0
    }

    pub fn materials(&self, env: &Env<'_>, username: &str, nonce: &Nonce) -> Result<LookupMaterials, DiscoveryError> {
        deterministic_lookup_materials(env.topology, env.mu, username, nonce, self.records.get(username), &self.k)
    }

    /// Builds the lookup answer without touching the nonce store.
    pub fn answer_lookup(&self, env: &Env<'_>, username: &str, nonce: &Nonce) -> Result<LookupAnswer, DiscoveryError> {
        let m = self.materials(env, username, nonce)?;
        let surb = m.surb.to_bytes();
        let bpk = m.bpk.to_bytes();
        let sig = self.sign(&lookup_response_signed_bytes(nonce, &surb, &bpk));
        let response = WireMessage::LookupResponse { node: self.id, nonce: *nonce, surb, bpk, sig };
        let notice = self.records.get(username).map(|delta| {
            let y = m.y.to_bytes();
            let sig = self.sign(&blinding_notice_signed_bytes(nonce, &y));
            (*delta, WireMessage::BlindingNotice { node: self.id, nonce: *nonce, y, sig })
        });
        Ok(LookupAnswer { response, notice })
    }

    pub fn handle_lookup(&mut self, env: &Env<'_>, target: &str, nonce: Nonce, reply_surb: &[u8]) -> Vec<Effect> {
        if !self.nonces.insert(nonce) {
            return Vec::new();
        }
        let Ok(reply) = Surb::from_bytes(reply_surb) else { return Vec::new() };
        let Ok(answer) = self.answer_lookup(env, target, &nonce) else { return Vec::new() };
        let mut out = vec![Effect::Reply { surb: reply, msg: answer.response }];
        if let Some((to, msg)) = answer.notice {
            out.push(Effect::Send { to, msg });
        }
        out
    }

    pub fn handle_reflect(&mut self, first_hop: NodeId, packet: &[u8]) -> Vec<Effect> {
        match SphinxPacket::from_bytes(packet) {
            Ok(packet) => vec![Effect::Submit(OutboundPacket { first_hop, packet })],
            Err(_) => vec![Effect::Trace(Trace::ReflectDropped { node: self.id })],
        }
    }

    pub fn handle_message<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, msg: WireMessage, rng: &mut R) -> Vec<Effect> {
        match msg {
            WireMessage::LookupRequest { target, nonce, reply_surb } => self.handle_lookup(env, &target, nonce, &reply_surb),
            WireMessage::Reflect { first_hop, packet } => self.handle_reflect(first_hop, &packet),
            WireMessage::RegisterRequest { reg_id, username, contact, d_auth } => {
                self.handle_register_request(env, reg_id, &username, &contact, d_auth, rng)
            }
            WireMessage::Challenge { reg_id, node, username, challenge } => {
                self.handle_challenge(env, reg_id, node, &username, challenge)
            }
            WireMessage::EmailForward { reg_id, raw } => self.handle_email_forward(env, reg_id, &raw),
            WireMessage::Confirmation { node, username, contact, sig } => {
                self.handle_confirmation(node, &username, &contact, &sig)
            }
            _ => Vec::new(),
        }
    }

    pub fn handle_timer(&mut self, env: &Env<'_>, timer: Timer) -> Vec<Effect> {
        match timer {
            Timer::DAuthGrace(reg_id) => self.on_grace_expired(env, reg_id),
            _ => Vec::new(),
        }
    }

    /// Mail arriving at this node's address: a registrant's reply to a
    /// verification email this node sent as D_auth.
    pub fn handle_email(&mut self, env: &Env<'_>, email: EmailMessage) -> Vec<Effect> {
        self.forward_reply(env, email)
    }
}
