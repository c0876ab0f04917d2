//! Simulated email with domain-level signatures.
//!
//! One signature per message over its canonical text minus the `dkim:` line.
//! Keys live in a [`DomainKeyStore`] (the stand-in for DNS); only a domain's
//! [`MailServer`] holds its signing key.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{CryptoRng, RngCore};

use crate::crypto::{sign, verify, GroupElement, KeyPair, SIGNATURE_LEN};
use crate::sphinx::{ContactInfo, NodeId};
use crate::wire::CHALLENGE_LEN;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmailError {
    #[error("sender {from} is outside domain {domain}")]
    DomainMismatch { from: String, domain: String },
    #[error("malformed email: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DkimSignature {
    pub domain: String,
    pub sig: [u8; SIGNATURE_LEN],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmailMessage {
    pub from: String,
    pub to: String,
    pub subject: String,
    pub body: String,
    /// Canonical text of the message being replied to, attached verbatim.
    pub original: Option<String>,
    pub dkim: Option<DkimSignature>,
}

pub fn domain_of(addr: &str) -> Option<&str> {
    let (local, domain) = addr.rsplit_once('@')?;
    (!local.is_empty() && !domain.is_empty()).then_some(domain)
}

fn single_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

impl EmailMessage {
    pub fn new(from: &str, to: &str, subject: &str, body: &str) -> Self {
        EmailMessage {
            from: from.into(),
            to: to.into(),
            subject: subject.into(),
            body: body.into(),
            original: None,
            dkim: None,
        }
    }

    fn render(&self, with_dkim: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "from:{}", single_line(&self.from));
        let _ = writeln!(s, "to:{}", single_line(&self.to));
        let _ = writeln!(s, "subject:{}", single_line(&self.subject));
        if with_dkim {
            if let Some(d) = &self.dkim {
                let _ = writeln!(s, "dkim:{}:{}", single_line(&d.domain), hex::encode(d.sig));
            }
        }
        let _ = writeln!(s, "body:{}", self.body.len());
        s.push_str(&self.body);
        s.push('\n');
        let orig = self.original.as_deref().unwrap_or("");
        let _ = writeln!(s, "original:{}", orig.len());
        s.push_str(orig);
        s.push('\n');
        s
    }

    /// Canonical text, including the signature line if signed.
    pub fn serialize(&self) -> String {
        self.render(true)
    }

    /// The bytes a domain signature covers.
    pub fn signing_input(&self) -> String {
        self.render(false)
    }

    pub fn parse(text: &str) -> Result<Self, EmailError> {
        let mut rest = text;
        let mut line = |prefix: &'static str| -> Result<&str, EmailError> {
            let (l, r) = rest.split_once('\n').ok_or(EmailError::Malformed("missing line"))?;
            rest = r;
            l.strip_prefix(prefix).ok_or(EmailError::Malformed(prefix))
        };
        let from = line("from:")?.to_string();
        let to = line("to:")?.to_string();
        let subject = line("subject:")?.to_string();
        let (l, r) = rest.split_once('\n').ok_or(EmailError::Malformed("missing line"))?;
        let (dkim, body_hdr) = if let Some(d) = l.strip_prefix("dkim:") {
            let (domain, sig) = d.rsplit_once(':').ok_or(EmailError::Malformed("dkim"))?;
            let sig = hex::decode(sig).map_err(|_| EmailError::Malformed("dkim hex"))?;
            let sig: [u8; SIGNATURE_LEN] = sig.try_into().map_err(|_| EmailError::Malformed("dkim length"))?;
            let (b, r2) = r.split_once('\n').ok_or(EmailError::Malformed("missing line"))?;
            rest = r2;
            (Some(DkimSignature { domain: domain.to_string(), sig }), b)
        } else {
            rest = r;
            (None, l)
        };
        let take_block = |rest: &mut &str, hdr: &str, prefix: &'static str| -> Result<String, EmailError> {
            let len: usize = hdr
                .strip_prefix(prefix)
                .and_then(|n| n.parse().ok())
                .ok_or(EmailError::Malformed(prefix))?;
            if rest.len() < len + 1 || !rest.is_char_boundary(len) || rest.as_bytes()[len] != b'\n' {
                return Err(EmailError::Malformed(prefix));
            }
            let out = rest[..len].to_string();
            *rest = &rest[len + 1..];
            Ok(out)
        };
        let body = take_block(&mut rest, body_hdr, "body:")?;
        let (orig_hdr, r) = rest.split_once('\n').ok_or(EmailError::Malformed("missing line"))?;
        rest = r;
        let orig = take_block(&mut rest, orig_hdr, "original:")?;
        if !rest.is_empty() {
            return Err(EmailError::Malformed("trailing text"));
        }
        Ok(EmailMessage {
            from,
            to,
            subject,
            body,
            original: (!orig.is_empty()).then_some(orig),
            dkim,
        })
    }
}

/// Domain → verification key; what DNS TXT records publish.
#[derive(Debug, Clone, Default)]
pub struct DomainKeyStore {
    keys: BTreeMap<String, GroupElement>,
}

impl DomainKeyStore {
    pub fn publish(&mut self, domain: &str, pk: GroupElement) {
        self.keys.insert(domain.to_string(), pk);
    }

    pub fn lookup(&self, domain: &str) -> Option<GroupElement> {
        self.keys.get(domain).copied()
    }
}

/// The mail server of one domain, the only holder of its signing key.
#[derive(Debug, Clone)]
pub struct MailServer {
    pub domain: String,
    key: KeyPair,
}

impl MailServer {
    pub fn new<R: RngCore + CryptoRng>(domain: &str, store: &mut DomainKeyStore, rng: &mut R) -> Self {
        let key = KeyPair::generate(rng);
        store.publish(domain, key.pk);
        MailServer { domain: domain.to_string(), key }
    }

    pub fn dkim_sign(&self, mut msg: EmailMessage) -> Result<EmailMessage, EmailError> {
        if domain_of(&msg.from) != Some(self.domain.as_str()) {
            return Err(EmailError::DomainMismatch { from: msg.from, domain: self.domain.clone() });
        }
        msg.dkim = None;
        let sig = sign(&self.key.sk, msg.signing_input().as_bytes()).expect("key is nonzero");
        msg.dkim = Some(DkimSignature { domain: self.domain.clone(), sig: sig.0 });
        Ok(msg)
    }

    /// Replaces the signing key and republishes; old signatures stop verifying.
    pub fn rotate_key<R: RngCore + CryptoRng>(&mut self, store: &mut DomainKeyStore, rng: &mut R) -> KeyPair {
        let old = std::mem::replace(&mut self.key, KeyPair::generate(rng));
        store.publish(&self.domain, self.key.pk);
        old
    }

    /// Leaks the signing key, for compromised-domain scenarios.
    pub fn compromise(&self) -> KeyPair {
        self.key.clone()
    }
}

/// True iff the signature verifies under the published key of the sender's
/// own domain.
pub fn dkim_verify(store: &DomainKeyStore, msg: &EmailMessage) -> bool {
    let Some(d) = &msg.dkim else { return false };
    if domain_of(&msg.from) != Some(d.domain.as_str()) {
        return false;
    }
    let Some(pk) = store.lookup(&d.domain) else { return false };
    verify(&pk, msg.signing_input().as_bytes(), &d.sig)
}

/// A reply to `original` from its recipient, with the original attached verbatim.
/// Unsigned; the replier's server signs it on send.
pub fn reply(original: &EmailMessage, body: &str) -> EmailMessage {
    EmailMessage {
        from: original.to.clone(),
        to: original.from.clone(),
        subject: format!("Re: {}", original.subject),
        body: body.to_string(),
        original: Some(original.serialize()),
        dkim: None,
    }
}

/// An attacker-built message claiming to come from `claimed_from`. Without a
/// domain key the attacker signs with a key of its own; with `stolen_key`
/// (a compromised or stale domain key) it signs with that.
pub fn adversary_forge<R: RngCore + CryptoRng>(
    claimed_from: &str,
    to: &str,
    subject: &str,
    body: &str,
    original: Option<String>,
    stolen_key: Option<&KeyPair>,
    rng: &mut R,
) -> EmailMessage {
    let mut msg = EmailMessage {
        from: claimed_from.to_string(),
        to: to.to_string(),
        subject: subject.to_string(),
        body: body.to_string(),
        original,
        dkim: None,
    };
    let own;
    let key = match stolen_key {
        Some(k) => k,
        None => {
            own = KeyPair::generate(rng);
            &own
        }
    };
    let sig = sign(&key.sk, msg.signing_input().as_bytes()).expect("key is nonzero");
    msg.dkim = Some(DkimSignature { domain: domain_of(claimed_from).unwrap_or("").to_string(), sig: sig.0 });
    msg
}

pub const VERIFICATION_SUBJECT: &str = "Pudding registration";

/// `challenge:<node>:<hex>` per node in id order, then `delta:<hex>`.
pub fn verification_body(challenges: &BTreeMap<NodeId, [u8; CHALLENGE_LEN]>, delta: &ContactInfo) -> String {
    let mut s = String::new();
    for (node, c) in challenges {
        let _ = writeln!(s, "challenge:{}:{}", node.0, hex::encode(c));
    }
    let _ = writeln!(s, "delta:{}", hex::encode(delta.to_bytes()));
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerificationContent {
    pub challenges: BTreeMap<NodeId, Vec<u8>>,
    pub delta: Option<Vec<u8>>,
}

/// Lenient parse: unrecognised lines are skipped, malformed hex is ignored.
pub fn parse_verification_body(body: &str) -> VerificationContent {
    let mut out = VerificationContent::default();
    for line in body.lines() {
        if let Some(rest) = line.strip_prefix("challenge:") {
            if let Some((node, hx)) = rest.split_once(':') {
                if let (Ok(n), Ok(c)) = (node.parse::<u32>(), hex::decode(hx)) {
                    out.challenges.entry(NodeId(n)).or_insert(c);
                }
            }
        } else if let Some(hx) = line.strip_prefix("delta:") {
            if let Ok(d) = hex::decode(hx) {
                out.delta.get_or_insert(d);
            }
        }
    }
    out
}
