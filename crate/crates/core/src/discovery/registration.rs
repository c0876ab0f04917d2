//! Email-verified registration.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};

use super::DiscoveryNode;
use crate::crypto::verify;
use crate::effect::{Effect, Env, RegistrationCheck, Timer, Trace};
use crate::email::{
    dkim_verify, domain_of, parse_verification_body, verification_body, EmailMessage, VERIFICATION_SUBJECT,
};
use crate::sphinx::{ContactInfo, NodeId, CONTACT_LEN};
use crate::wire::{confirmation_signed_bytes, RegId, WireMessage, CHALLENGE_LEN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRegistration {
    pub username: String,
    pub contact: ContactInfo,
    pub d_auth: NodeId,
    pub own_challenge: [u8; CHALLENGE_LEN],
    /// The name was already bound to a different contact when the request came in.
    pub invalid: bool,
    /// Collected by D_auth only.
    pub challenges: BTreeMap<NodeId, [u8; CHALLENGE_LEN]>,
    pub grace_expired: bool,
    pub email_sent: bool,
    pub verified: bool,
    pub stored: bool,
    pub failed: Option<RegistrationCheck>,
}

impl DiscoveryNode {
    pub(super) fn handle_register_request<R: RngCore + CryptoRng>(
        &mut self,
        _env: &Env<'_>,
        reg_id: RegId,
        username: &str,
        contact: &[u8; CONTACT_LEN],
        d_auth: NodeId,
        rng: &mut R,
    ) -> Vec<Effect> {
        if self.pending.contains_key(&reg_id) {
            return Vec::new();
        }
        let Ok(contact) = ContactInfo::from_bytes(contact) else { return Vec::new() };
        let Some(d_auth_entry) = self.directory.get(d_auth).cloned() else { return Vec::new() };
        // Re-registering the same binding is not a conflict.
        let invalid = self.records.get(username).is_some_and(|c| *c != contact);
        let mut own_challenge = [0u8; CHALLENGE_LEN];
        rng.fill_bytes(&mut own_challenge);
        let mut p = PendingRegistration {
            username: username.to_string(),
            contact,
            d_auth,
            own_challenge,
            invalid,
            challenges: BTreeMap::new(),
            grace_expired: false,
            email_sent: false,
            verified: false,
            stored: false,
            failed: None,
        };
        if d_auth != self.id {
            self.pending.insert(reg_id, p);
            return vec![Effect::Send {
                to: d_auth_entry.contact,
                msg: WireMessage::Challenge { reg_id, node: self.id, username: username.to_string(), challenge: own_challenge },
            }];
        }
        p.challenges.insert(self.id, own_challenge);
        if let Some(early) = self.early_challenges.remove(&reg_id) {
            for (node, c) in early {
                p.challenges.entry(node).or_insert(c);
            }
        }
        self.pending.insert(reg_id, p);
        let mut out = vec![Effect::Timer { after: self.grace, timer: Timer::DAuthGrace(reg_id) }];
        out.extend(self.maybe_send_verification(reg_id));
        out
    }

    pub(super) fn handle_challenge(
        &mut self,
        _env: &Env<'_>,
        reg_id: RegId,
        node: NodeId,
        username: &str,
        challenge: [u8; CHALLENGE_LEN],
    ) -> Vec<Effect> {
        if self.directory.get(node).is_none() {
            return Vec::new();
        }
        match self.pending.get_mut(&reg_id) {
            Some(p) if p.d_auth == self.id && p.username == username => {
                p.challenges.entry(node).or_insert(challenge);
                self.maybe_send_verification(reg_id)
            }
            Some(_) => Vec::new(),
            None => {
                self.early_challenges.entry(reg_id).or_default().entry(node).or_insert(challenge);
                Vec::new()
            }
        }
    }

    pub(super) fn on_grace_expired(&mut self, _env: &Env<'_>, reg_id: RegId) -> Vec<Effect> {
        match self.pending.get_mut(&reg_id) {
            Some(p) => {
                p.grace_expired = true;
                self.maybe_send_verification(reg_id)
            }
            None => Vec::new(),
        }
    }

    /// Emails once every node's challenge is in, or once the grace period has
    /// passed with at least 2f+1.
    fn maybe_send_verification(&mut self, reg_id: RegId) -> Vec<Effect> {
        let n = self.directory.n();
        let quorum = self.directory.strong_quorum();
        let from = self.directory.get(self.id).map(|e| e.email.clone()).unwrap_or_default();
        let Some(p) = self.pending.get_mut(&reg_id) else { return Vec::new() };
        let have = p.challenges.len();
        if p.email_sent || !(have >= n || (p.grace_expired && have >= quorum)) {
            return Vec::new();
        }
        p.email_sent = true;
        let body = verification_body(&p.challenges, &p.contact);
        vec![
            Effect::Email(EmailMessage::new(&from, &p.username, VERIFICATION_SUBJECT, &body)),
            Effect::Trace(Trace::VerificationSent { node: self.id, challenges: have }),
        ]
    }

    /// As D_auth: hands a registrant's reply, verbatim, to every node.
    pub(super) fn forward_reply(&mut self, env: &Env<'_>, email: EmailMessage) -> Vec<Effect> {
        let Some(original) = email.original.as_deref().and_then(|o| EmailMessage::parse(o).ok()) else {
            return Vec::new();
        };
        let mine = parse_verification_body(&original.body).challenges.remove(&self.id);
        let found = self.pending.iter().find(|(_, p)| {
            p.d_auth == self.id && p.email_sent && p.username == email.from && mine.as_deref() == Some(&p.own_challenge[..])
        });
        let Some((&reg_id, _)) = found else { return Vec::new() };
        let raw = email.serialize();
        let mut out: Vec<Effect> = self
            .directory
            .nodes
            .iter()
            .filter(|e| e.id != self.id)
            .map(|e| Effect::Send { to: e.contact, msg: WireMessage::EmailForward { reg_id, raw: raw.clone() } })
            .collect();
        out.extend(self.handle_email_forward(env, reg_id, &raw));
        out
    }

    fn check_reply(&self, env: &Env<'_>, p: &PendingRegistration, raw: &str) -> Result<(), RegistrationCheck> {
        let reply = EmailMessage::parse(raw).map_err(|_| RegistrationCheck::Unparseable)?;
        let original = reply
            .original
            .as_deref()
            .and_then(|o| EmailMessage::parse(o).ok())
            .ok_or(RegistrationCheck::Unparseable)?;
        let content = parse_verification_body(&original.body);
        if content.challenges.get(&self.id).map(Vec::as_slice) != Some(&p.own_challenge[..]) {
            return Err(RegistrationCheck::MissingChallenge);
        }
        let signer_domain = reply.dkim.as_ref().map(|d| d.domain.as_str());
        if !dkim_verify(env.dkim, &reply) || signer_domain != domain_of(&p.username) {
            return Err(RegistrationCheck::Dkim);
        }
        if reply.from != p.username {
            return Err(RegistrationCheck::Sender);
        }
        if content.delta.as_deref() != Some(&p.contact.to_bytes()[..]) {
            return Err(RegistrationCheck::DeltaMismatch);
        }
        if p.invalid {
            return Err(RegistrationCheck::Invalid);
        }
        Ok(())
    }

    pub(super) fn handle_email_forward(&mut self, env: &Env<'_>, reg_id: RegId, raw: &str) -> Vec<Effect> {
        let Some(p) = self.pending.get(&reg_id) else {
            return vec![Effect::Trace(Trace::NodeCheckFailed {
                node: self.id,
                check: RegistrationCheck::UnknownRegistration,
            })];
        };
        if p.verified || p.failed.is_some() {
            return Vec::new();
        }
        let verdict = self.check_reply(env, p, raw);
        let p = self.pending.get_mut(&reg_id).expect("checked above");
        if let Err(check) = verdict {
            p.failed = Some(check);
            return vec![Effect::Trace(Trace::NodeCheckFailed { node: self.id, check })];
        }
        p.verified = true;
        let username = p.username.clone();
        let contact = p.contact.to_bytes();
        let sig = self.sign(&confirmation_signed_bytes(&username, &contact));
        let mut out: Vec<Effect> = self
            .directory
            .nodes
            .iter()
            .filter(|e| e.id != self.id)
            .map(|e| Effect::Send {
                to: e.contact,
                msg: WireMessage::Confirmation { node: self.id, username: username.clone(), contact, sig },
            })
            .collect();
        out.extend(self.try_store(&username, &contact));
        out
    }

    pub(super) fn handle_confirmation(
        &mut self,
        node: NodeId,
        username: &str,
        contact: &[u8; CONTACT_LEN],
        sig: &[u8],
    ) -> Vec<Effect> {
        if node == self.id {
            return Vec::new();
        }
        let Some(entry) = self.directory.get(node) else { return Vec::new() };
        if !verify(&entry.signing_pk, &confirmation_signed_bytes(username, contact), sig) {
            return Vec::new();
        }
        self.confirmations.entry((username.to_string(), *contact)).or_default().insert(node);
        self.try_store(username, contact)
    }

    /// Stores after this node's own check passed and 2f other nodes confirmed
    /// the same binding, then tells the registrant.
    fn try_store(&mut self, username: &str, contact: &[u8; CONTACT_LEN]) -> Vec<Effect> {
        let peers = self.confirmations.get(&(username.to_string(), *contact)).map_or(0, |s| s.len());
        if peers < 2 * self.directory.f {
            return Vec::new();
        }
        let ready: Vec<RegId> = self
            .pending
            .iter()
            .filter(|(_, p)| p.verified && !p.stored && p.username == username && p.contact.to_bytes() == *contact)
            .map(|(id, _)| *id)
            .collect();
        let Some(first) = ready.first() else { return Vec::new() };
        let delta = self.pending[first].contact;
        for id in &ready {
            self.pending.get_mut(id).expect("listed").stored = true;
        }
        let mut out = Vec::new();
        match self.records.get(username) {
            Some(existing) if *existing != delta => return out,
            Some(_) => {}
            None => {
                self.records.insert(username.to_string(), delta);
                out.push(Effect::Trace(Trace::NodeStored { node: self.id, username: username.to_string(), contact: delta }));
            }
        }
        let sig = self.sign(&confirmation_signed_bytes(username, contact));
        out.push(Effect::Send {
            to: delta,
            msg: WireMessage::Confirmation { node: self.id, username: username.to_string(), contact: *contact, sig },
        });
        out
    }
}
