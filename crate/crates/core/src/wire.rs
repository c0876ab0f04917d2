//! Application messages carried inside Sphinx bodies.
//!
//! Encoding: one tag byte, then each field as `u16 BE length || bytes`.
//! Fixed-size fields are length-checked on decode and trailing bytes are
//! rejected.

use crate::crypto::{ELEMENT_LEN, MAC_LEN, SCALAR_LEN, SIGNATURE_LEN};
use crate::sphinx::{NodeId, CONTACT_LEN, PACKET_LEN, SURB_LEN};

pub const NONCE_LEN: usize = 16;
pub const REG_ID_LEN: usize = 16;
pub const CHALLENGE_LEN: usize = 32;

pub type Nonce = [u8; NONCE_LEN];
pub type RegId = [u8; REG_ID_LEN];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("empty message")]
    Empty,
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("truncated field")]
    Truncated,
    #[error("field {field} has length {got}, expected {want}")]
    BadLength { field: &'static str, got: usize, want: usize },
    #[error("trailing bytes after message")]
    Trailing,
    #[error("field {0} is not valid utf-8")]
    Utf8(&'static str),
    #[error("field {0} exceeds 65535 bytes")]
    TooLong(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    LookupRequest {
        target: String,
        nonce: Nonce,
        reply_surb: Vec<u8>,
    },
    LookupResponse {
        node: NodeId,
        nonce: Nonce,
        surb: Vec<u8>,
        bpk: [u8; ELEMENT_LEN],
        sig: [u8; SIGNATURE_LEN],
    },
    BlindingNotice {
        node: NodeId,
        nonce: Nonce,
        y: [u8; SCALAR_LEN],
        sig: [u8; SIGNATURE_LEN],
    },
    Reflect {
        first_hop: NodeId,
        packet: Vec<u8>,
    },
    ContactInit {
        g_a: [u8; ELEMENT_LEN],
        nonce: Nonce,
        ciphertext: Vec<u8>,
    },
    AddFriendReply {
        g_a: [u8; ELEMENT_LEN],
        g_b: [u8; ELEMENT_LEN],
        sig: [u8; SIGNATURE_LEN],
        mac: [u8; MAC_LEN],
        reply_surb: Vec<u8>,
        lookup_nonce: Option<Nonce>,
    },
    AddFriendFinish {
        g_b: [u8; ELEMENT_LEN],
        sig: [u8; SIGNATURE_LEN],
        mac: [u8; MAC_LEN],
        reply_surb: Vec<u8>,
    },
    KeyConfirm {
        g_a: [u8; ELEMENT_LEN],
        ciphertext: Vec<u8>,
    },
    RegisterRequest {
        reg_id: RegId,
        username: String,
        contact: [u8; CONTACT_LEN],
        d_auth: NodeId,
    },
    Challenge {
        reg_id: RegId,
        node: NodeId,
        username: String,
        challenge: [u8; CHALLENGE_LEN],
    },
    EmailForward {
        reg_id: RegId,
        raw: String,
    },
    Confirmation {
        node: NodeId,
        username: String,
        contact: [u8; CONTACT_LEN],
        sig: [u8; SIGNATURE_LEN],
    },
}

pub mod tag {
    pub const LOOKUP_REQUEST: u8 = 0x01;
    pub const LOOKUP_RESPONSE: u8 = 0x02;
    pub const BLINDING_NOTICE: u8 = 0x03;
    pub const REFLECT: u8 = 0x04;
    pub const CONTACT_INIT: u8 = 0x05;
    pub const ADD_FRIEND_REPLY: u8 = 0x06;
    pub const ADD_FRIEND_FINISH: u8 = 0x07;
    pub const KEY_CONFIRM: u8 = 0x08;
    pub const REGISTER_REQUEST: u8 = 0x10;
    pub const CHALLENGE: u8 = 0x11;
    pub const EMAIL_FORWARD: u8 = 0x12;
    pub const CONFIRMATION: u8 = 0x13;
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(tag: u8) -> Self {
        Writer(vec![tag])
    }

    fn field(&mut self, b: &[u8]) -> &mut Self {
        let len = u16::try_from(b.len()).expect("wire fields are below 64 KiB");
        self.0.extend_from_slice(&len.to_be_bytes());
        self.0.extend_from_slice(b);
        self
    }

    fn node(&mut self, n: NodeId) -> &mut Self {
        self.field(&n.0.to_be_bytes())
    }

    fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.0)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn field(&mut self) -> Result<&'a [u8], WireError> {
        if self.buf.len() < 2 {
            return Err(WireError::Truncated);
        }
        let len = u16::from_be_bytes([self.buf[0], self.buf[1]]) as usize;
        if self.buf.len() < 2 + len {
            return Err(WireError::Truncated);
        }
        let out = &self.buf[2..2 + len];
        self.buf = &self.buf[2 + len..];
        Ok(out)
    }

    fn fixed<const N: usize>(&mut self, name: &'static str) -> Result<[u8; N], WireError> {
        let f = self.field()?;
        f.try_into().map_err(|_| WireError::BadLength { field: name, got: f.len(), want: N })
    }

    fn sized(&mut self, name: &'static str, want: usize) -> Result<Vec<u8>, WireError> {
        let f = self.field()?;
        if f.len() != want {
            return Err(WireError::BadLength { field: name, got: f.len(), want });
        }
        Ok(f.to_vec())
    }

    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        Ok(self.field()?.to_vec())
    }

    fn string(&mut self, name: &'static str) -> Result<String, WireError> {
        String::from_utf8(self.field()?.to_vec()).map_err(|_| WireError::Utf8(name))
    }

    fn node(&mut self) -> Result<NodeId, WireError> {
        Ok(NodeId(u32::from_be_bytes(self.fixed::<4>("node")?)))
    }

    fn opt_nonce(&mut self) -> Result<Option<Nonce>, WireError> {
        let f = self.field()?;
        match f.len() {
            0 => Ok(None),
            NONCE_LEN => Ok(Some(f.try_into().unwrap())),
            got => Err(WireError::BadLength { field: "lookup_nonce", got, want: NONCE_LEN }),
        }
    }

    fn end(&self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing)
        }
    }
}

impl WireMessage {
    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::LookupRequest { .. } => tag::LOOKUP_REQUEST,
            WireMessage::LookupResponse { .. } => tag::LOOKUP_RESPONSE,
            WireMessage::BlindingNotice { .. } => tag::BLINDING_NOTICE,
            WireMessage::Reflect { .. } => tag::REFLECT,
            WireMessage::ContactInit { .. } => tag::CONTACT_INIT,
            WireMessage::AddFriendReply { .. } => tag::ADD_FRIEND_REPLY,
            WireMessage::AddFriendFinish { .. } => tag::ADD_FRIEND_FINISH,
            WireMessage::KeyConfirm { .. } => tag::KEY_CONFIRM,
            WireMessage::RegisterRequest { .. } => tag::REGISTER_REQUEST,
            WireMessage::Challenge { .. } => tag::CHALLENGE,
            WireMessage::EmailForward { .. } => tag::EMAIL_FORWARD,
            WireMessage::Confirmation { .. } => tag::CONFIRMATION,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(self.tag());
        match self {
            WireMessage::LookupRequest { target, nonce, reply_surb } => {
                w.field(target.as_bytes()).field(nonce).field(reply_surb)
            }
            WireMessage::LookupResponse { node, nonce, surb, bpk, sig } => {
                w.node(*node).field(nonce).field(surb).field(bpk).field(sig)
            }
            WireMessage::BlindingNotice { node, nonce, y, sig } => w.node(*node).field(nonce).field(y).field(sig),
            WireMessage::Reflect { first_hop, packet } => w.node(*first_hop).field(packet),
            WireMessage::ContactInit { g_a, nonce, ciphertext } => w.field(g_a).field(nonce).field(ciphertext),
            WireMessage::AddFriendReply { g_a, g_b, sig, mac, reply_surb, lookup_nonce } => w
                .field(g_a)
                .field(g_b)
                .field(sig)
                .field(mac)
                .field(reply_surb)
                .field(lookup_nonce.as_ref().map(|n| &n[..]).unwrap_or(&[])),
            WireMessage::AddFriendFinish { g_b, sig, mac, reply_surb } => {
                w.field(g_b).field(sig).field(mac).field(reply_surb)
            }
            WireMessage::KeyConfirm { g_a, ciphertext } => w.field(g_a).field(ciphertext),
            WireMessage::RegisterRequest { reg_id, username, contact, d_auth } => {
                w.field(reg_id).field(username.as_bytes()).field(contact).node(*d_auth)
            }
            WireMessage::Challenge { reg_id, node, username, challenge } => {
                w.field(reg_id).node(*node).field(username.as_bytes()).field(challenge)
            }
            WireMessage::EmailForward { reg_id, raw } => w.field(reg_id).field(raw.as_bytes()),
            WireMessage::Confirmation { node, username, contact, sig } => {
                w.node(*node).field(username.as_bytes()).field(contact).field(sig)
            }
        };
        w.finish()
    }

    pub fn decode(b: &[u8]) -> Result<Self, WireError> {
        let (&t, rest) = b.split_first().ok_or(WireError::Empty)?;
        let mut r = Reader { buf: rest };
        let msg = match t {
            tag::LOOKUP_REQUEST => WireMessage::LookupRequest {
                target: r.string("target")?,
                nonce: r.fixed("nonce")?,
                reply_surb: r.sized("reply_surb", SURB_LEN)?,
            },
            tag::LOOKUP_RESPONSE => WireMessage::LookupResponse {
                node: r.node()?,
                nonce: r.fixed("nonce")?,
                surb: r.sized("surb", SURB_LEN)?,
                bpk: r.fixed("bpk")?,
                sig: r.fixed("sig")?,
            },
            tag::BLINDING_NOTICE => WireMessage::BlindingNotice {
                node: r.node()?,
                nonce: r.fixed("nonce")?,
                y: r.fixed("y")?,
                sig: r.fixed("sig")?,
            },
            tag::REFLECT => WireMessage::Reflect { first_hop: r.node()?, packet: r.sized("packet", PACKET_LEN)? },
            tag::CONTACT_INIT => WireMessage::ContactInit {
                g_a: r.fixed("g_a")?,
                nonce: r.fixed("nonce")?,
                ciphertext: r.bytes()?,
            },
            tag::ADD_FRIEND_REPLY => WireMessage::AddFriendReply {
                g_a: r.fixed("g_a")?,
                g_b: r.fixed("g_b")?,
                sig: r.fixed("sig")?,
                mac: r.fixed("mac")?,
                reply_surb: r.sized("reply_surb", SURB_LEN)?,
                lookup_nonce: r.opt_nonce()?,
            },
            tag::ADD_FRIEND_FINISH => WireMessage::AddFriendFinish {
                g_b: r.fixed("g_b")?,
                sig: r.fixed("sig")?,
                mac: r.fixed("mac")?,
                reply_surb: r.sized("reply_surb", SURB_LEN)?,
            },
            tag::KEY_CONFIRM => WireMessage::KeyConfirm { g_a: r.fixed("g_a")?, ciphertext: r.bytes()? },
            tag::REGISTER_REQUEST => WireMessage::RegisterRequest {
                reg_id: r.fixed("reg_id")?,
                username: r.string("username")?,
                contact: r.fixed("contact")?,
                d_auth: r.node()?,
            },
            tag::CHALLENGE => WireMessage::Challenge {
                reg_id: r.fixed("reg_id")?,
                node: r.node()?,
                username: r.string("username")?,
                challenge: r.fixed("challenge")?,
            },
            tag::EMAIL_FORWARD => WireMessage::EmailForward { reg_id: r.fixed("reg_id")?, raw: r.string("raw")? },
            tag::CONFIRMATION => WireMessage::Confirmation {
                node: r.node()?,
                username: r.string("username")?,
                contact: r.fixed("contact")?,
                sig: r.fixed("sig")?,
            },
            other => return Err(WireError::UnknownTag(other)),
        };
        r.end()?;
        Ok(msg)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::LookupRequest { .. } => "lookup_request",
            WireMessage::LookupResponse { .. } => "lookup_response",
            WireMessage::BlindingNotice { .. } => "blinding_notice",
            WireMessage::Reflect { .. } => "reflect",
            WireMessage::ContactInit { .. } => "contact_init",
            WireMessage::AddFriendReply { .. } => "add_friend_reply",
            WireMessage::AddFriendFinish { .. } => "add_friend_finish",
            WireMessage::KeyConfirm { .. } => "key_confirm",
            WireMessage::RegisterRequest { .. } => "register_request",
            WireMessage::Challenge { .. } => "challenge",
            WireMessage::EmailForward { .. } => "email_forward",
            WireMessage::Confirmation { .. } => "confirmation",
        }
    }
}

/// Bytes signed by a discovery node in a lookup response.
pub fn lookup_response_signed_bytes(nonce: &Nonce, surb: &[u8], bpk: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(3 + NONCE_LEN + surb.len() + bpk.len());
    m.extend_from_slice(b"LR");
    m.extend_from_slice(nonce);
    m.extend_from_slice(surb);
    m.extend_from_slice(bpk);
    m
}

/// Bytes signed by a discovery node when handing the blinding key to its owner.
pub fn blinding_notice_signed_bytes(nonce: &Nonce, y: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(2 + NONCE_LEN + y.len());
    m.extend_from_slice(b"BN");
    m.extend_from_slice(nonce);
    m.extend_from_slice(y);
    m
}

/// Bytes signed by a discovery node to confirm a registration.
pub fn confirmation_signed_bytes(username: &str, contact: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(4 + username.len() + contact.len());
    m.extend_from_slice(b"CF");
    m.extend_from_slice(&(username.len() as u16).to_be_bytes());
    m.extend_from_slice(username.as_bytes());
    m.extend_from_slice(contact);
    m
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn samples() -> Vec<WireMessage> {
        let surb = vec![0x5A; SURB_LEN];
        vec![
            WireMessage::LookupRequest { target: "bob@example.org".into(), nonce: [1; 16], reply_surb: surb.clone() },
            WireMessage::LookupResponse { node: NodeId(3), nonce: [1; 16], surb: surb.clone(), bpk: [2; 32], sig: [3; 64] },
            WireMessage::BlindingNotice { node: NodeId(4), nonce: [1; 16], y: [5; 32], sig: [6; 64] },
            WireMessage::Reflect { first_hop: NodeId(0), packet: vec![7; PACKET_LEN] },
            WireMessage::ContactInit { g_a: [8; 32], nonce: [1; 16], ciphertext: vec![9; 40] },
            WireMessage::AddFriendReply {
                g_a: [8; 32],
                g_b: [10; 32],
                sig: [11; 64],
                mac: [12; 32],
                reply_surb: surb.clone(),
                lookup_nonce: Some([13; 16]),
            },
            WireMessage::AddFriendReply {
                g_a: [8; 32],
                g_b: [10; 32],
                sig: [11; 64],
                mac: [12; 32],
                reply_surb: surb.clone(),
                lookup_nonce: None,
            },
            WireMessage::AddFriendFinish { g_b: [10; 32], sig: [14; 64], mac: [15; 32], reply_surb: surb },
            WireMessage::KeyConfirm { g_a: [8; 32], ciphertext: vec![16; 30] },
            WireMessage::RegisterRequest {
                reg_id: [17; 16],
                username: "alice@example.org".into(),
                contact: [18; CONTACT_LEN],
                d_auth: NodeId(21),
            },
            WireMessage::Challenge { reg_id: [17; 16], node: NodeId(22), username: "alice@example.org".into(), challenge: [19; 32] },
            WireMessage::EmailForward { reg_id: [17; 16], raw: "from:a@b\n".into() },
            WireMessage::Confirmation {
                node: NodeId(23),
                username: "alice@example.org".into(),
                contact: [18; CONTACT_LEN],
                sig: [20; 64],
            },
        ]
    }

    #[test]
    fn round_trips() {
        for m in samples() {
            let b = m.encode();
            assert_eq!(b[0], m.tag());
            assert_eq!(WireMessage::decode(&b).unwrap(), m);
        }
    }

    #[test]
    fn rejects_malformed() {
        assert_eq!(WireMessage::decode(&[]), Err(WireError::Empty));
        assert_eq!(WireMessage::decode(&[0x7f]), Err(WireError::UnknownTag(0x7f)));
        for m in samples() {
            let b = m.encode();
            assert!(WireMessage::decode(&b[..b.len() - 1]).is_err());
            let mut longer = b.clone();
            longer.push(0);
            assert_eq!(WireMessage::decode(&longer), Err(WireError::Trailing));
        }
        let mut bad = samples()[1].encode();
        bad[7] = 0xff; // nonce length prefix
        assert!(WireMessage::decode(&bad).is_err());
    }

    #[test]
    fn response_length_is_fixed() {
        let a = samples()[1].encode();
        assert_eq!(a.len(), 1 + 2 * 5 + 4 + 16 + SURB_LEN + 32 + 64);
    }

    proptest! {
        #[test]
        fn decode_never_panics(b in proptest::collection::vec(any::<u8>(), 0..400)) {
            let _ = WireMessage::decode(&b);
        }
    }
}
