use std::collections::BTreeSet;

use rand::{CryptoRng, RngCore};

use super::UserDevice;
use crate::crypto::verify;
use crate::effect::{Effect, Env, OpEvent, OpKind, Timer, Trace};
use crate::email::{parse_verification_body, reply, EmailMessage, VERIFICATION_SUBJECT};
use crate::sphinx::{NodeId, CONTACT_LEN};
use crate::wire::{confirmation_signed_bytes, RegId, WireMessage};

#[derive(Debug, Clone)]
pub(super) struct RegisterState {
    op: u64,
    username: String,
    reg_id: RegId,
    tried: Vec<NodeId>,
    confirmations: BTreeSet<NodeId>,
    done: bool,
}

impl UserDevice {
    /// True once `username` reached 2f+1 confirmations in the latest registration.
    pub fn is_registered(&self, username: &str) -> bool {
        self.registration.as_ref().is_some_and(|r| r.done && r.username == username)
    }

    /// Asks every discovery node to bind this device's contact to `username`
    /// (an address whose mail reaches this device), with a randomly picked
    /// D_auth. A registration still in flight for another name is abandoned.
    pub fn register<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, username: &str, rng: &mut R) -> Vec<Effect> {
        let mut out = Vec::new();
        if let Some(st) = &self.registration {
            if st.username == username {
                return out;
            }
            if !st.done {
                Self::finish_op(st.op, OpKind::Register, OpEvent::Failure("superseded".into()), &mut out);
            }
        }
        let op = self.new_op(OpKind::Register, &mut out);
        self.registration = Some(RegisterState {
            op,
            username: username.to_string(),
            reg_id: [0; 16],
            tried: Vec::new(),
            confirmations: BTreeSet::new(),
            done: false,
        });
        out.extend(self.send_registration(env, rng));
        out
    }

    fn send_registration<R: RngCore + CryptoRng>(&mut self, _env: &Env<'_>, rng: &mut R) -> Vec<Effect> {
        let tried = self.registration.as_ref().map(|r| r.tried.clone()).unwrap_or_default();
        let d_auth = self.random_node(rng, &tried);
        let mut reg_id = [0u8; 16];
        rng.fill_bytes(&mut reg_id);
        let st = self.registration.as_mut().expect("registration started");
        st.reg_id = reg_id;
        st.tried.push(d_auth);
        let contact = self.contact.to_bytes();
        let username = st.username.clone();
        let mut out: Vec<Effect> = self
            .directory
            .nodes
            .iter()
            .map(|e| Effect::Send {
                to: e.contact,
                msg: WireMessage::RegisterRequest { reg_id, username: username.clone(), contact, d_auth },
            })
            .collect();
        out.push(Effect::Timer { after: self.config.register_timeout, timer: Timer::RegisterTimeout(reg_id) });
        out
    }

    pub(super) fn on_register_timeout<R: RngCore + CryptoRng>(&mut self, env: &Env<'_>, reg_id: RegId, rng: &mut R) -> Vec<Effect> {
        let Some(st) = self.registration.as_ref() else { return Vec::new() };
        if st.done || st.reg_id != reg_id {
            return Vec::new();
        }
        if st.tried.len() < self.config.max_register_attempts {
            return self.send_registration(env, rng);
        }
        let op = st.op;
        self.registration = None;
        let mut out = Vec::new();
        Self::finish_op(op, OpKind::Register, OpEvent::Failure("registration timeout".into()), &mut out);
        out
    }

    /// Replies to a verification email only if it carries this device's own
    /// contact; answers each distinct email once.
    pub(super) fn on_verification_email(&mut self, email: EmailMessage) -> Vec<Effect> {
        let expected = self.registration.as_ref().map(|r| r.username.as_str());
        if expected != Some(email.to.as_str()) || email.subject != VERIFICATION_SUBJECT {
            return Vec::new();
        }
        let content = parse_verification_body(&email.body);
        if content.delta.as_deref() != Some(&self.contact.to_bytes()[..]) {
            return vec![Effect::Trace(Trace::UserRefusedEmail)];
        }
        if !self.replied_emails.insert(email.serialize()) {
            return Vec::new();
        }
        vec![Effect::Email(reply(&email, "confirm"))]
    }

    pub(super) fn on_registration_confirmation(
        &mut self,
        node: NodeId,
        username: &str,
        contact: &[u8; CONTACT_LEN],
        sig: &[u8],
    ) -> Vec<Effect> {
        if *contact != self.contact.to_bytes() {
            return Vec::new();
        }
        let Some(entry) = self.directory.get(node) else { return Vec::new() };
        if !verify(&entry.signing_pk, &confirmation_signed_bytes(username, contact), sig) {
            return Vec::new();
        }
        let quorum = self.directory.strong_quorum();
        let Some(st) = self.registration.as_mut() else { return Vec::new() };
        if st.done || st.username != username {
            return Vec::new();
        }
        st.confirmations.insert(node);
        if st.confirmations.len() < quorum {
            return Vec::new();
        }
        st.done = true;
        let mut out = Vec::new();
        Self::finish_op(st.op, OpKind::Register, OpEvent::Success, &mut out);
        out
    }
}
