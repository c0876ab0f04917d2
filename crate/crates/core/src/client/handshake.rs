//! ContactInit and the three-message AddFriend handshake.
//!
//! Searcher A holds a quorum-approved SURB and blinded key for B. It sends
//! `M_init = (g^a, nonce, AEAD_{K_e}(body))` through a reflector, B answers
//! with `g^b` and a blinded signature over `g^a || g^b`, A answers with its
//! own signature, and B's first message under `K_s` confirms the key.

use rand::{CryptoRng, RngCore};

use super::{FriendRecord, IdentityChoice, IncomingRequest, UserDevice};
use crate::crypto::{
    aead_open, aead_seal, blind_public_key, kdf_with, mac, mac_verify, sign_blinded, verify_blinded,
    BlindedPublicKey, GroupElement, KdfLabel, Scalar, Seed,
};
use crate::effect::{AbortReason, Effect, Env, OpEvent, OpKind, Role, Timer, Trace};
use crate::sphinx::{apply_surb, fragment, NodeId, Surb, SURB_LEN};
use crate::wire::{Nonce, WireMessage};

pub const MAX_CODEWORD_LEN: usize = 64;
const MAX_NAME_LEN: usize = 256;
/// Fixed plaintext size, so named and anonymous requests encrypt to the same length.
pub const INIT_BODY_LEN: usize = SURB_LEN + 1 + MAX_CODEWORD_LEN + 1 + 2 + MAX_NAME_LEN;
pub const KEY_CONFIRM_LABEL: &[u8] = b"pudding key confirm";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PeerIdentity {
    Named(String),
    Blinded([u8; 32]),
}

/// Plaintext of a contact request:
/// `surb || cw_len u8 || codeword || tag u8 || identity`, zero padded.
/// A zero-length codeword means none. Identity is `0x01 || u16 len || name`
/// or `0x02 || bpk`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitBody {
    pub reply_surb: Vec<u8>,
    pub codeword: Option<String>,
    pub identity: PeerIdentity,
}

impl InitBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(INIT_BODY_LEN);
        out.extend_from_slice(&self.reply_surb);
        let cw = self.codeword.as_deref().unwrap_or("").as_bytes();
        let cw = &cw[..cw.len().min(MAX_CODEWORD_LEN)];
        out.push(cw.len() as u8);
        out.extend_from_slice(cw);
        match &self.identity {
            PeerIdentity::Named(name) => {
                let name = &name.as_bytes()[..name.len().min(MAX_NAME_LEN)];
                out.push(1);
                out.extend_from_slice(&(name.len() as u16).to_be_bytes());
                out.extend_from_slice(name);
            }
            PeerIdentity::Blinded(bpk) => {
                out.push(2);
                out.extend_from_slice(bpk);
            }
        }
        out.resize(INIT_BODY_LEN, 0);
        out
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != INIT_BODY_LEN {
            return None;
        }
        let reply_surb = b[..SURB_LEN].to_vec();
        let mut at = SURB_LEN;
        let cw_len = b[at] as usize;
        at += 1;
        if cw_len > MAX_CODEWORD_LEN {
            return None;
        }
        let codeword = match cw_len {
            0 => None,
            _ => Some(String::from_utf8(b[at..at + cw_len].to_vec()).ok()?),
        };
        at += cw_len;
        let tag = b[at];
        at += 1;
        let identity = match tag {
            1 => {
                let len = u16::from_be_bytes([b[at], b[at + 1]]) as usize;
                at += 2;
                if len > MAX_NAME_LEN {
                    return None;
                }
                let name = String::from_utf8(b[at..at + len].to_vec()).ok()?;
                at += len;
                PeerIdentity::Named(name)
            }
            2 => {
                let bpk = b[at..at + 32].try_into().ok()?;
                at += 32;
                PeerIdentity::Blinded(bpk)
            }
            _ => return None,
        };
        b[at..].iter().all(|&x| x == 0).then_some(InitBody { reply_surb, codeword, identity })
    }
}

fn cat(a: &[u8], b: &[u8]) -> Vec<u8> {
    [a, b].concat()
}

/// MAC input for message 2: `ID_B || bpk_B`, extended with the reply SURB and
/// lookup nonce so neither can be swapped in transit.
pub(crate) fn reply_mac_input(id_b: &str, bpk_b: &[u8; 32], reply_surb: &[u8], lookup_nonce: Option<&Nonce>) -> Vec<u8> {
    let mut m = Vec::new();
    m.extend_from_slice(&(id_b.len() as u16).to_be_bytes());
    m.extend_from_slice(id_b.as_bytes());
    m.extend_from_slice(bpk_b);
    m.extend_from_slice(reply_surb);
    if let Some(n) = lookup_nonce {
        m.extend_from_slice(n);
    }
    m
}

/// MAC input for message 3: `[ID_A ||] bpk_A || reply SURB`.
pub(crate) fn finish_mac_input(id_a: Option<&str>, bpk_a: &[u8; 32], reply_surb: &[u8]) -> Vec<u8> {
    let mut m = Vec::new();
    if let Some(id) = id_a {
        m.extend_from_slice(&(id.len() as u16).to_be_bytes());
        m.extend_from_slice(id.as_bytes());
    }
    m.extend_from_slice(bpk_a);
    m.extend_from_slice(reply_surb);
    m
}

#[derive(Debug, Clone)]
pub(super) enum SearcherState {
    AwaitReply,
    AwaitConfirm { g_b: [u8; 32], k_s: Seed },
}

#[derive(Debug, Clone)]
pub(super) struct SearcherSession {
    op: u64,
    target: String,
    mode: IdentityChoice,
    codeword: Option<String>,
    a: Scalar,
    bpk_b: BlindedPublicKey,
    y_a: Option<Scalar>,
    reflect: WireMessage,
    tried: Vec<NodeId>,
    restarts: usize,
    state: SearcherState,
}

#[derive(Debug, Clone)]
pub(super) struct PendingSearchee {
    g_a: GroupElement,
    y_b: Scalar,
    reply_surb: Surb,
    peer: PeerIdentity,
}

#[derive(Debug, Clone)]
pub(super) struct SearcheeSession {
    g_a: [u8; 32],
    bpk_a: BlindedPublicKey,
    peer: PeerIdentity,
    k_m: Seed,
    k_s: Seed,
}

impl UserDevice {
    #[allow(clippy::too_many_arguments)]
    pub(super) fn contact_init<R: RngCore + CryptoRng>(
        &mut self,
        env: &Env<'_>,
        target: &str,
        nonce: Nonce,
        surb: &[u8],
        bpk: &[u8; 32],
        mode: IdentityChoice,
        codeword: Option<String>,
        restarts: usize,
        rng: &mut R,
    ) -> Vec<Effect> {
        let mut out = Vec::new();
        let op = self.new_op(OpKind::ContactInitAddFriend, &mut out);
        let (Ok(surb), Ok(bpk_b)) = (Surb::from_bytes(surb), BlindedPublicKey::from_bytes(bpk)) else {
            Self::finish_op(op, OpKind::ContactInitAddFriend, OpEvent::Failure("malformed lookup result".into()), &mut out);
            return out;
        };
        let a = Scalar::random_nonzero(rng);
        let g_a = GroupElement::base_mul(&a).to_bytes();
        let k_e = kdf_with(bpk_b.0.mul(&a).as_bytes(), KdfLabel::InitKey);
        let reply = self.self_surb(env, rng).to_bytes();
        let (identity, y_a) = match mode {
            IdentityChoice::Named => (PeerIdentity::Named(self.username.clone()), None),
            IdentityChoice::Anonymous => {
                let y = Scalar::random_nonzero(rng);
                let bpk = blind_public_key(&self.keys.pk, &y).expect("device key is not the identity");
                (PeerIdentity::Blinded(bpk.to_bytes()), Some(y))
            }
        };
        let body = InitBody { reply_surb: reply.clone(), codeword: codeword.clone(), identity }.encode();
        let ciphertext = aead_seal(&k_e, &body, &cat(&g_a, &nonce));
        let payload = WireMessage::ContactInit { g_a, nonce, ciphertext }.encode();
        let frame = fragment(rng.next_u64(), &payload).expect("fits").remove(0);
        let packet = apply_surb(&surb, &frame).expect("contact request fits one packet");
        let reflect = WireMessage::Reflect { first_hop: surb.first_hop, packet: packet.to_bytes() };
        let reflector = match self.reflector_hint.filter(|id| self.directory.get(*id).is_some()) {
            Some(id) => id,
            None => self.random_node(rng, &[]),
        };
        out.push(Effect::Send { to: self.directory.get(reflector).expect("listed").contact, msg: reflect.clone() });
        out.push(Effect::Timer { after: self.config.contact_timeout, timer: Timer::ContactInitTimeout(g_a) });
        out.push(Effect::Trace(Trace::ContactInitSent { g_a, reply_surb: reply, reflector, attempt: 1 }));
        self.searcher.insert(
            g_a,
            SearcherSession {
                op,
                target: target.to_string(),
                mode,
                codeword,
                a,
                bpk_b,
                y_a,
                reflect,
                tried: vec![reflector],
                restarts,
                state: SearcherState::AwaitReply,
            },
        );
        out
    }

    /// Resends the same `M_init` through an unused reflector, up to f+1
    /// reflectors in total. A reflector that did forward it already spent the
    /// SURB, so the resend is then dropped as a replay; after the last
    /// reflector only a fresh lookup can help.
    pub(super) fn on_contact_timeout<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, g_a: [u8; 32], rng: &mut R) -> Vec<Effect> {
        let Some(s) = self.searcher.get(&g_a) else { return Vec::new() };
        let mut out = Vec::new();
        match s.state {
            SearcherState::AwaitReply if s.tried.len() < self.directory.lookup_quorum() => {
                let tried = s.tried.clone();
                let reflector = self.random_node(rng, &tried);
                let s = self.searcher.get_mut(&g_a).expect("present");
                s.tried.push(reflector);
                let attempt = s.tried.len();
                out.push(Effect::Send { to: self.directory.get(reflector).expect("listed").contact, msg: s.reflect.clone() });
                out.push(Effect::Timer { after: self.config.contact_timeout, timer: Timer::ContactInitTimeout(g_a) });
                out.push(Effect::Trace(Trace::ContactInitSent { g_a, reply_surb: Vec::new(), reflector, attempt }));
            }
            SearcherState::AwaitReply => {
                let s = self.searcher.remove(&g_a).expect("present");
                out.push(Effect::Trace(Trace::NeedsNewLookup { g_a }));
                Self::finish_op(s.op, OpKind::ContactInitAddFriend, OpEvent::Failure("no reply".into()), &mut out);
                if s.restarts < self.config.max_discovery_restarts {
                    out.extend(self.discover_inner(env, &s.target, s.mode, s.codeword, s.restarts + 1, rng));
                }
            }
            SearcherState::AwaitConfirm { .. } => {
                let s = self.searcher.remove(&g_a).expect("present");
                Self::finish_op(s.op, OpKind::ContactInitAddFriend, OpEvent::Failure("no key confirmation".into()), &mut out);
            }
        }
        out
    }

    pub(super) fn on_contact_init<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, m: WireMessage, rng: &mut R) -> Vec<Effect> {
        let WireMessage::ContactInit { g_a, nonce, ciphertext } = &m else { return Vec::new() };
        let Some(y_b) = self.blinding.get(nonce).copied() else {
            let q = self.waiting_inits.entry(*nonce).or_default();
            if q.len() < 8 {
                q.push(m);
            }
            return Vec::new();
        };
        if self.seen_inits.contains(g_a) {
            return Vec::new();
        }
        let Ok(g_a_el) = GroupElement::from_bytes_non_identity(g_a) else { return Vec::new() };
        let k_e = kdf_with(g_a_el.mul(&(self.keys.sk * y_b)).as_bytes(), KdfLabel::InitKey);
        let Ok(body) = aead_open(&k_e, ciphertext, &cat(g_a, nonce)) else { return Vec::new() };
        let Some(body) = InitBody::decode(&body) else { return Vec::new() };
        let Ok(reply_surb) = Surb::from_bytes(&body.reply_surb) else { return Vec::new() };
        self.seen_inits.insert(*g_a);
        let req = IncomingRequest { from: body.identity.clone(), codeword: body.codeword.clone() };
        if !self.policy.accepts(&req) {
            return vec![Effect::Trace(Trace::SearcheeIgnored)];
        }
        let pending = PendingSearchee { g_a: g_a_el, y_b, reply_surb, peer: body.identity.clone() };
        match body.identity {
            PeerIdentity::Blinded(bpk) => match BlindedPublicKey::from_bytes(&bpk) {
                Ok(bpk_a) => self.respond(env, pending, bpk_a, None, rng),
                Err(_) => Vec::new(),
            },
            PeerIdentity::Named(name) => {
                let id = self.next_pending;
                self.next_pending += 1;
                self.pending_searchee.insert(id, pending);
                self.start_lookup(env, &name, super::LookupPurpose::PeerCheck { pending: id, attempt: 1 }, rng)
            }
        }
    }

    pub(super) fn respond_after_peer_check<R: RngCore + CryptoRng>(
        &mut self,
        env: &Env<'_>,
        pending: u64,
        lookup_nonce: Nonce,
        bpk: &[u8; 32],
        rng: &mut R,
    ) -> Vec<Effect> {
        let Some(p) = self.pending_searchee.remove(&pending) else { return Vec::new() };
        match BlindedPublicKey::from_bytes(bpk) {
            Ok(bpk_a) => self.respond(env, p, bpk_a, Some(lookup_nonce), rng),
            Err(_) => Vec::new(),
        }
    }

    fn respond<R: RngCore + CryptoRng>(
        &mut self,
        env: &Env<'_>,
        p: PendingSearchee,
        bpk_a: BlindedPublicKey,
        lookup_nonce: Option<Nonce>,
        rng: &mut R,
    ) -> Vec<Effect> {
        let b = Scalar::random_nonzero(rng);
        let g_b = GroupElement::base_mul(&b).to_bytes();
        let g_a = p.g_a.to_bytes();
        let shared = p.g_a.mul(&b);
        let k_m = kdf_with(shared.as_bytes(), KdfLabel::MacKey);
        let k_s = kdf_with(shared.as_bytes(), KdfLabel::SessionKey);
        let bpk_b = blind_public_key(&self.keys.pk, &p.y_b).expect("nonzero blind").to_bytes();
        let sig = sign_blinded(&self.keys.sk, &p.y_b, &cat(&g_a, &g_b)).expect("nonzero key").0;
        let reply_surb = self.self_surb(env, rng).to_bytes();
        let tag = mac(&k_m, &reply_mac_input(&self.username, &bpk_b, &reply_surb, lookup_nonce.as_ref())).0;
        self.searchee.insert(g_b, SearcheeSession { g_a, bpk_a, peer: p.peer, k_m, k_s });
        vec![
            Effect::Reply {
                surb: p.reply_surb,
                msg: WireMessage::AddFriendReply { g_a, g_b, sig, mac: tag, reply_surb: reply_surb.clone(), lookup_nonce },
            },
            Effect::Trace(Trace::SearcheeReplied { g_a, g_b, reply_surb }),
        ]
    }

    fn abort_searcher(&mut self, g_a: &[u8; 32], reason: AbortReason) -> Vec<Effect> {
        let mut out = vec![Effect::Trace(Trace::Abort { role: Role::Searcher, reason })];
        if let Some(s) = self.searcher.remove(g_a) {
            Self::finish_op(s.op, OpKind::ContactInitAddFriend, OpEvent::Failure(format!("abort: {reason:?}")), &mut out);
        }
        out
    }

    pub(super) fn on_add_friend_reply<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, m: WireMessage, rng: &mut R) -> Vec<Effect> {
        let WireMessage::AddFriendReply { g_a, g_b, sig, mac: tag, reply_surb, lookup_nonce } = &m else {
            return Vec::new();
        };
        let Some(s) = self.searcher.get(g_a) else { return Vec::new() };
        if !matches!(s.state, SearcherState::AwaitReply) {
            return Vec::new();
        }
        let Ok(g_b_el) = GroupElement::from_bytes_non_identity(g_b) else {
            return self.abort_searcher(g_a, AbortReason::Malformed);
        };
        if !verify_blinded(&s.bpk_b, &cat(g_a, g_b), sig) {
            return self.abort_searcher(g_a, AbortReason::Signature);
        }
        let shared = g_b_el.mul(&s.a);
        let k_m = kdf_with(shared.as_bytes(), KdfLabel::MacKey);
        let bpk_b = s.bpk_b.to_bytes();
        if !mac_verify(&k_m, &reply_mac_input(&s.target, &bpk_b, reply_surb, lookup_nonce.as_ref()), tag) {
            return self.abort_searcher(g_a, AbortReason::Mac);
        }
        let y_a = match (s.mode, lookup_nonce) {
            (IdentityChoice::Anonymous, _) => s.y_a.expect("anonymous sessions carry a blind"),
            (IdentityChoice::Named, None) => return self.abort_searcher(g_a, AbortReason::MissingBlindingKey),
            (IdentityChoice::Named, Some(n)) => match self.blinding.get(n) {
                Some(y) => *y,
                None => {
                    // B's lookup of us is still delivering our blinding key.
                    let q = self.waiting_replies.entry(*n).or_default();
                    if q.len() < 8 {
                        q.push(m.clone());
                    }
                    return Vec::new();
                }
            },
        };
        let Ok(r_b) = Surb::from_bytes(reply_surb) else {
            return self.abort_searcher(g_a, AbortReason::Malformed);
        };
        let named = matches!(s.mode, IdentityChoice::Named);
        let bpk_a = blind_public_key(&self.keys.pk, &y_a).expect("nonzero blind").to_bytes();
        let sig_a = sign_blinded(&self.keys.sk, &y_a, &cat(g_b, g_a)).expect("nonzero key").0;
        let r_a2 = self.self_surb(env, rng).to_bytes();
        let id_a = named.then_some(self.username.as_str());
        let mac_a = mac(&k_m, &finish_mac_input(id_a, &bpk_a, &r_a2)).0;
        let k_s = kdf_with(shared.as_bytes(), KdfLabel::SessionKey);
        let s = self.searcher.get_mut(g_a).expect("present");
        s.state = SearcherState::AwaitConfirm { g_b: *g_b, k_s };
        vec![
            Effect::Reply { surb: r_b, msg: WireMessage::AddFriendFinish { g_b: *g_b, sig: sig_a, mac: mac_a, reply_surb: r_a2 } },
            Effect::Trace(Trace::SearcherFinished { g_a: *g_a, g_b: *g_b }),
        ]
    }

    pub(super) fn on_add_friend_finish<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, m: WireMessage, rng: &mut R) -> Vec<Effect> {
        let WireMessage::AddFriendFinish { g_b, sig, mac: tag, reply_surb } = &m else { return Vec::new() };
        let Some(s) = self.searchee.get(g_b) else { return Vec::new() };
        let abort = |this: &mut Self, reason| {
            this.searchee.remove(g_b);
            vec![Effect::Trace(Trace::Abort { role: Role::Searchee, reason })]
        };
        if !verify_blinded(&s.bpk_a, &cat(g_b, &s.g_a), sig) {
            return abort(self, AbortReason::Signature);
        }
        let id_a = match &s.peer {
            PeerIdentity::Named(n) => Some(n.as_str()),
            PeerIdentity::Blinded(_) => None,
        };
        if !mac_verify(&s.k_m, &finish_mac_input(id_a, &s.bpk_a.to_bytes(), reply_surb), tag) {
            return abort(self, AbortReason::Mac);
        }
        let Ok(r_a2) = Surb::from_bytes(reply_surb) else { return abort(self, AbortReason::Malformed) };
        let s = self.searchee.remove(g_b).expect("present");
        let fresh = self.self_surb(env, rng).to_bytes();
        let ciphertext = aead_seal(&s.k_s, &cat(KEY_CONFIRM_LABEL, &fresh), &cat(&s.g_a, g_b));
        self.friends.push(FriendRecord { peer: s.peer, k_s: s.k_s, surbs: Vec::new() });
        vec![
            Effect::Reply { surb: r_a2, msg: WireMessage::KeyConfirm { g_a: s.g_a, ciphertext } },
            Effect::Trace(Trace::FriendAdded { role: Role::Searchee, k_s: s.k_s.0 }),
        ]
    }

    pub(super) fn on_key_confirm(&mut self, m: WireMessage) -> Vec<Effect> {
        let WireMessage::KeyConfirm { g_a, ciphertext } = &m else { return Vec::new() };
        let Some(s) = self.searcher.get(g_a) else { return Vec::new() };
        let SearcherState::AwaitConfirm { g_b, k_s } = s.state else { return Vec::new() };
        let surb = aead_open(&k_s, ciphertext, &cat(g_a, &g_b))
            .ok()
            .and_then(|pt| pt.strip_prefix(KEY_CONFIRM_LABEL).and_then(|rest| Surb::from_bytes(rest).ok()));
        let Some(surb) = surb else { return self.abort_searcher(g_a, AbortReason::KeyConfirm) };
        let s = self.searcher.remove(g_a).expect("present");
        self.friends.push(FriendRecord { peer: PeerIdentity::Named(s.target), k_s, surbs: vec![surb] });
        let mut out = vec![Effect::Trace(Trace::FriendAdded { role: Role::Searcher, k_s: k_s.0 })];
        Self::finish_op(s.op, OpKind::ContactInitAddFriend, OpEvent::Success, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_body_round_trip_and_fixed_length() {
        let named = InitBody {
            reply_surb: vec![7; SURB_LEN],
            codeword: Some("tulip".into()),
            identity: PeerIdentity::Named("alice@a.test".into()),
        };
        let anon = InitBody { reply_surb: vec![7; SURB_LEN], codeword: None, identity: PeerIdentity::Blinded([9; 32]) };
        for b in [&named, &anon] {
            let e = b.encode();
            assert_eq!(e.len(), INIT_BODY_LEN);
            assert_eq!(InitBody::decode(&e).as_ref(), Some(b));
        }
        let mut trailing = anon.encode();
        *trailing.last_mut().unwrap() = 1;
        assert_eq!(InitBody::decode(&trailing), None);
    }

    #[test]
    fn codeword_is_capped() {
        let b = InitBody {
            reply_surb: vec![0; SURB_LEN],
            codeword: Some("x".repeat(100)),
            identity: PeerIdentity::Blinded([1; 32]),
        };
        let d = InitBody::decode(&b.encode()).unwrap();
        assert_eq!(d.codeword.unwrap().len(), MAX_CODEWORD_LEN);
    }

    #[test]
    fn mac_inputs_are_unambiguous() {
        let a = reply_mac_input("ab", &[0; 32], &[1; 4], None);
        let b = reply_mac_input("a", &[0; 32], &[1; 4], None);
        assert_ne!(a, b);
        assert_ne!(finish_mac_input(Some("x"), &[0; 32], &[1]), finish_mac_input(None, &[0; 32], &[1]));
    }

    proptest! {
        #[test]
        fn decode_never_panics(b in proptest::collection::vec(any::<u8>(), INIT_BODY_LEN..=INIT_BODY_LEN)) {
            let _ = InitBody::decode(&b);
        }
    }
}
