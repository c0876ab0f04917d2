use std::collections::HashSet;
use std::fmt;

use rand::{CryptoRng, RngCore};

use super::onion::{peel, wrap};
use super::{
    DropReason, InboxId, NodeId, RouteSpec, SphinxError, BETA_LEN, BODY_LEN, HEADER_LEN, INBOX_LEN,
    MAX_HOPS, MAX_PAYLOAD, PACKET_LEN, PAYLOAD_KEY_LEN, PAYLOAD_LEN, ROUTING_INFO_LEN, ROUTING_SLOT,
    SURB_LEN, TAG_BLOCK_LEN, TAG_SLOT,
};
use crate::crypto::{
    kdf_with, DetPrg, GroupElement, KdfLabel, KeyPair, Scalar, Seed, ELEMENT_LEN, MAC_LEN,
};
use crate::time::SimDuration;

const BLIND_DOMAIN: &[u8] = b"pudding sphinx blind";
const INFO_FORWARD: u8 = 0x01;
const INFO_FINAL: u8 = 0x02;

#[derive(Clone, PartialEq, Eq)]
pub struct SphinxHeader {
    pub alpha: [u8; ELEMENT_LEN],
    pub gamma: [u8; MAC_LEN],
    pub beta: [u8; BETA_LEN],
}

impl SphinxHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..32].copy_from_slice(&self.alpha);
        out[32..64].copy_from_slice(&self.gamma);
        out[64..].copy_from_slice(&self.beta);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, SphinxError> {
        if b.len() != HEADER_LEN {
            return Err(SphinxError::Malformed("header length"));
        }
        Ok(SphinxHeader {
            alpha: b[..32].try_into().unwrap(),
            gamma: b[32..64].try_into().unwrap(),
            beta: b[64..].try_into().unwrap(),
        })
    }
}

impl fmt::Debug for SphinxHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SphinxHeader(alpha={}..)", hex::encode(&self.alpha[..4]))
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SphinxPacket {
    pub header: SphinxHeader,
    pub payload: Vec<u8>,
}

impl SphinxPacket {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PACKET_LEN);
        out.extend_from_slice(&self.header.to_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, SphinxError> {
        if b.len() != PACKET_LEN {
            return Err(SphinxError::Malformed("packet length"));
        }
        Ok(SphinxPacket {
            header: SphinxHeader::from_bytes(&b[..HEADER_LEN])?,
            payload: b[HEADER_LEN..].to_vec(),
        })
    }
}

// Routing contents stay encrypted; only lengths and an alpha prefix show.
impl fmt::Debug for SphinxPacket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SphinxPacket {{ alpha: {}.., len: {} }}",
            hex::encode(&self.header.alpha[..4]),
            HEADER_LEN + self.payload.len()
        )
    }
}

/// Per-hop payload keys: stream key and MAC key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PayloadKey {
    pub stream: Seed,
    pub mac: Seed,
}

impl fmt::Debug for PayloadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PayloadKey(..)")
    }
}

/// A single-use reply block. The holder can send one packet to a destination
/// it cannot see.
#[derive(Clone, PartialEq, Eq)]
pub struct Surb {
    pub first_hop: NodeId,
    pub header: SphinxHeader,
    pub payload_keys: Vec<PayloadKey>,
}

impl Surb {
    /// Fixed-length encoding; unused payload-key slots are zero.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SURB_LEN);
        out.extend_from_slice(&self.first_hop.0.to_be_bytes());
        out.extend_from_slice(&self.header.to_bytes());
        out.push(self.payload_keys.len() as u8);
        for k in &self.payload_keys {
            out.extend_from_slice(&k.stream.0);
            out.extend_from_slice(&k.mac.0);
        }
        out.resize(SURB_LEN, 0);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, SphinxError> {
        if b.len() != SURB_LEN {
            return Err(SphinxError::Malformed("surb length"));
        }
        let first_hop = NodeId(u32::from_be_bytes(b[..4].try_into().unwrap()));
        let header = SphinxHeader::from_bytes(&b[4..4 + HEADER_LEN])?;
        let count = b[4 + HEADER_LEN] as usize;
        if count == 0 || count > MAX_HOPS {
            return Err(SphinxError::Malformed("surb hop count"));
        }
        let keys_at = 5 + HEADER_LEN;
        let payload_keys = (0..count)
            .map(|i| {
                let o = keys_at + i * PAYLOAD_KEY_LEN;
                PayloadKey {
                    stream: Seed(b[o..o + 32].try_into().unwrap()),
                    mac: Seed(b[o + 32..o + 64].try_into().unwrap()),
                }
            })
            .collect();
        if b[keys_at + count * PAYLOAD_KEY_LEN..].iter().any(|&x| x != 0) {
            return Err(SphinxError::Malformed("surb padding"));
        }
        Ok(Surb { first_hop, header, payload_keys })
    }
}

impl fmt::Debug for Surb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Surb {{ first_hop: {}, header: {:?} }}", self.first_hop, self.header)
    }
}

struct HopSecrets {
    header_stream: Vec<u8>,
    header_mac: Seed,
    payload: PayloadKey,
    replay_tag: Seed,
}

fn hop_secrets(shared: &GroupElement) -> HopSecrets {
    let s = shared.as_bytes();
    HopSecrets {
        header_stream: DetPrg::new(&kdf_with(s, KdfLabel::HeaderStream)).next_bytes(BETA_LEN + ROUTING_SLOT),
        header_mac: kdf_with(s, KdfLabel::HeaderMac),
        payload: PayloadKey {
            stream: kdf_with(s, KdfLabel::PayloadStream),
            mac: kdf_with(s, KdfLabel::PayloadMac),
        },
        replay_tag: kdf_with(s, KdfLabel::ReplayTag),
    }
}

fn blinding_factor(alpha: &GroupElement, shared: &GroupElement) -> Scalar {
    Scalar::hash_from(&[BLIND_DOMAIN, alpha.as_bytes(), shared.as_bytes()])
}

/// Tag-block keystream followed by body keystream.
fn payload_streams(k: &PayloadKey) -> (Vec<u8>, Vec<u8>) {
    let mut prg = DetPrg::new(&k.stream);
    let tags = prg.next_bytes(TAG_BLOCK_LEN + TAG_SLOT);
    let body = prg.next_bytes(BODY_LEN);
    (tags, body)
}

enum RoutingInfo {
    Forward { next: NodeId, delay: SimDuration },
    Final { inbox: InboxId, delay: SimDuration },
}

impl RoutingInfo {
    fn encode(&self) -> Vec<u8> {
        let mut out = vec![0u8; ROUTING_INFO_LEN];
        match self {
            RoutingInfo::Forward { next, delay } => {
                out[0] = INFO_FORWARD;
                out[1..5].copy_from_slice(&next.0.to_be_bytes());
                out[5..13].copy_from_slice(&delay.0.to_be_bytes());
            }
            RoutingInfo::Final { inbox, delay } => {
                out[0] = INFO_FINAL;
                out[1..1 + INBOX_LEN].copy_from_slice(&inbox.0);
                out[17..25].copy_from_slice(&delay.0.to_be_bytes());
            }
        }
        out
    }

    fn decode(b: &[u8]) -> Option<Self> {
        match b[0] {
            INFO_FORWARD if b[13..].iter().all(|&x| x == 0) => Some(RoutingInfo::Forward {
                next: NodeId(u32::from_be_bytes(b[1..5].try_into().unwrap())),
                delay: SimDuration(u64::from_be_bytes(b[5..13].try_into().unwrap())),
            }),
            INFO_FINAL if b[25..].iter().all(|&x| x == 0) => Some(RoutingInfo::Final {
                inbox: InboxId(b[1..17].try_into().unwrap()),
                delay: SimDuration(u64::from_be_bytes(b[17..25].try_into().unwrap())),
            }),
            _ => None,
        }
    }
}

/// Builds a reply block for `route`. All randomness (ephemeral scalar and
/// header padding) comes from `rng`, so a [`DetPrg`] makes this deterministic.
pub fn create_surb<R: RngCore + CryptoRng + ?Sized>(route: &RouteSpec, rng: &mut R) -> Result<Surb, SphinxError> {
    route.validate()?;
    let v = route.hops.len();
    let mut acc = Scalar::random_nonzero(rng);
    let mut pad = vec![0u8; BETA_LEN];
    rng.fill_bytes(&mut pad);

    let mut alpha0 = None;
    let mut secrets = Vec::with_capacity(v);
    for hop in &route.hops {
        let alpha = GroupElement::base_mul(&acc);
        let shared = hop.pk.mul(&acc);
        alpha0.get_or_insert(alpha);
        secrets.push(hop_secrets(&shared));
        acc = acc * blinding_factor(&alpha, &shared);
    }

    let infos: Vec<Vec<u8>> = route
        .hops
        .iter()
        .enumerate()
        .map(|(i, hop)| {
            if i + 1 < v {
                RoutingInfo::Forward { next: route.hops[i + 1].node, delay: hop.delay }.encode()
            } else {
                RoutingInfo::Final { inbox: route.inbox, delay: hop.delay }.encode()
            }
        })
        .collect();
    let streams: Vec<Vec<u8>> = secrets.iter().map(|s| s.header_stream.clone()).collect();
    let macs: Vec<Seed> = secrets.iter().map(|s| s.header_mac).collect();
    let extras: Vec<&[u8]> = vec![&[]; v];
    let (gamma, beta) = wrap(ROUTING_SLOT, BETA_LEN, &streams, &macs, &infos, &extras, &pad);

    Ok(Surb {
        first_hop: route.hops[0].node,
        header: SphinxHeader {
            alpha: alpha0.expect("non-empty route").to_bytes(),
            gamma,
            beta: beta.try_into().expect("beta length"),
        },
        payload_keys: secrets.iter().map(|s| s.payload).collect(),
    })
}

/// Encrypts `payload` under the SURB's hop keys so that it emerges in the clear
/// at the hidden destination.
pub fn apply_surb(surb: &Surb, payload: &[u8]) -> Result<SphinxPacket, SphinxError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(SphinxError::PayloadTooLarge { len: payload.len(), max: MAX_PAYLOAD });
    }
    let v = surb.payload_keys.len();
    if v == 0 || v > MAX_HOPS {
        return Err(SphinxError::InvalidRoute("hop count must be in 1..=5"));
    }
    let mut body = vec![0u8; BODY_LEN];
    body[..2].copy_from_slice(&(payload.len() as u16).to_be_bytes());
    body[2..2 + payload.len()].copy_from_slice(payload);

    let streams: Vec<(Vec<u8>, Vec<u8>)> = surb.payload_keys.iter().map(payload_streams).collect();
    // bodies[i] is the body as hop i receives it.
    let mut bodies = vec![Vec::new(); v];
    for i in (0..v).rev() {
        for (b, k) in body.iter_mut().zip(&streams[i].1) {
            *b ^= k;
        }
        bodies[i] = body.clone();
    }
    let tag_streams: Vec<Vec<u8>> = streams.iter().map(|s| s.0.clone()).collect();
    let macs: Vec<Seed> = surb.payload_keys.iter().map(|k| k.mac).collect();
    let infos = vec![Vec::new(); v];
    let extras: Vec<&[u8]> = bodies.iter().map(|b| b.as_slice()).collect();
    let pad = DetPrg::new(&surb.payload_keys[0].mac).next_bytes(TAG_BLOCK_LEN);
    let (gamma, tags) = wrap(TAG_SLOT, TAG_BLOCK_LEN, &tag_streams, &macs, &infos, &extras, &pad);

    let mut out = Vec::with_capacity(PAYLOAD_LEN);
    out.extend_from_slice(&gamma);
    out.extend_from_slice(&tags);
    out.extend_from_slice(&bodies[0]);
    Ok(SphinxPacket { header: surb.header.clone(), payload: out })
}

/// A fresh packet along `route`: a SURB built and applied immediately.
pub fn build_packet<R: RngCore + CryptoRng + ?Sized>(
    route: &RouteSpec,
    payload: &[u8],
    rng: &mut R,
) -> Result<SphinxPacket, SphinxError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(SphinxError::PayloadTooLarge { len: payload.len(), max: MAX_PAYLOAD });
    }
    apply_surb(&create_surb(route, rng)?, payload)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Processed {
    Forward { next: NodeId, delay: SimDuration, packet: SphinxPacket },
    Deliver { inbox: InboxId, delay: SimDuration, payload: Vec<u8> },
    Drop(DropReason),
}

/// Strips one layer without replay tracking. Returns the outcome and the
/// packet's replay tag at this node.
pub fn peel_packet(keys: &KeyPair, packet: &SphinxPacket) -> (Processed, Option<Seed>) {
    if packet.payload.len() != PAYLOAD_LEN {
        return (Processed::Drop(DropReason::Malformed), None);
    }
    let alpha = match GroupElement::from_bytes_non_identity(&packet.header.alpha) {
        Ok(a) => a,
        Err(_) => return (Processed::Drop(DropReason::Malformed), None),
    };
    let shared = alpha.mul(&keys.sk);
    let sec = hop_secrets(&shared);
    let Some(h) = peel(
        ROUTING_SLOT,
        &sec.header_stream,
        &sec.header_mac,
        &packet.header.gamma,
        &packet.header.beta,
        &[],
    ) else {
        return (Processed::Drop(DropReason::Integrity), None);
    };

    let (tag_stream, body_stream) = payload_streams(&sec.payload);
    let p_gamma = &packet.payload[..MAC_LEN];
    let p_tags = &packet.payload[MAC_LEN..MAC_LEN + TAG_BLOCK_LEN];
    let body = &packet.payload[MAC_LEN + TAG_BLOCK_LEN..];
    let Some(t) = peel(TAG_SLOT, &tag_stream, &sec.payload.mac, p_gamma, p_tags, body) else {
        return (Processed::Drop(DropReason::Integrity), None);
    };
    let body: Vec<u8> = body.iter().zip(&body_stream).map(|(a, b)| a ^ b).collect();
    let tag = Some(sec.replay_tag);

    let out = match RoutingInfo::decode(&h.info) {
        None => Processed::Drop(DropReason::Malformed),
        Some(RoutingInfo::Forward { next, .. }) if next == NodeId::BLACK_HOLE => {
            Processed::Drop(DropReason::BlackHole)
        }
        Some(RoutingInfo::Forward { next, delay }) => {
            let next_alpha = alpha.mul(&blinding_factor(&alpha, &shared));
            let mut payload = Vec::with_capacity(PAYLOAD_LEN);
            payload.extend_from_slice(&t.gamma);
            payload.extend_from_slice(&t.beta);
            payload.extend_from_slice(&body);
            Processed::Forward {
                next,
                delay,
                packet: SphinxPacket {
                    header: SphinxHeader {
                        alpha: next_alpha.to_bytes(),
                        gamma: h.gamma,
                        beta: h.beta.try_into().expect("beta length"),
                    },
                    payload,
                },
            }
        }
        Some(RoutingInfo::Final { inbox, delay }) => {
            let len = u16::from_be_bytes([body[0], body[1]]) as usize;
            if len > MAX_PAYLOAD || body[2 + len..].iter().any(|&x| x != 0) {
                Processed::Drop(DropReason::Malformed)
            } else {
                Processed::Deliver { inbox, delay, payload: body[2..2 + len].to_vec() }
            }
        }
    };
    (out, tag)
}

/// Per-node processing state: long-term keys plus the replay cache.
#[derive(Debug, Clone)]
pub struct MixState {
    keys: KeyPair,
    seen: HashSet<[u8; 32]>,
}

impl MixState {
    pub fn new(keys: KeyPair) -> Self {
        MixState { keys, seen: HashSet::new() }
    }

    pub fn public_key(&self) -> GroupElement {
        self.keys.pk
    }

    pub fn seen_count(&self) -> usize {
        self.seen.len()
    }

    pub fn process(&mut self, packet: &SphinxPacket) -> Processed {
        let (out, tag) = peel_packet(&self.keys, packet);
        match tag {
            Some(t) if !self.seen.insert(t.0) => Processed::Drop(DropReason::Replay),
            _ => out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphinx::{ContactInfo, Hop};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Net {
        nodes: Vec<(NodeId, KeyPair)>,
    }

    impl Net {
        fn new(count: u32, seed: u64) -> Self {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            Net { nodes: (0..count).map(|i| (NodeId(i), KeyPair::generate(&mut rng))).collect() }
        }

        fn route(&self, ids: &[usize], inbox: u8) -> RouteSpec {
            let hops = ids
                .iter()
                .enumerate()
                .map(|(k, &i)| Hop {
                    node: self.nodes[i].0,
                    pk: self.nodes[i].1.pk,
                    delay: SimDuration(1000 * (k as u64 + 1)),
                })
                .collect();
            RouteSpec::new(hops, InboxId([inbox; 16])).unwrap()
        }

        fn keys(&self, id: NodeId) -> &KeyPair {
            &self.nodes.iter().find(|(n, _)| *n == id).unwrap().1
        }

        /// Runs the packet to completion, returning the terminal outcome and
        /// the sequence of (node, next) routing decisions.
        fn run(&self, first: NodeId, mut pkt: SphinxPacket) -> (Processed, Vec<(NodeId, NodeId)>) {
            let mut at = first;
            let mut trail = Vec::new();
            loop {
                let (out, _) = peel_packet(self.keys(at), &pkt);
                match out {
                    Processed::Forward { next, packet, .. } => {
                        trail.push((at, next));
                        at = next;
                        pkt = packet;
                    }
                    other => return (other, trail),
                }
            }
        }
    }

    #[test]
    fn one_hop_delivers() {
        let net = Net::new(3, 1);
        let route = net.route(&[0], 9);
        let pkt = build_packet(&route, b"hello", &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        assert_eq!(pkt.to_bytes().len(), PACKET_LEN);
        let (out, _) = net.run(NodeId(0), pkt);
        assert_eq!(
            out,
            Processed::Deliver { inbox: InboxId([9; 16]), delay: SimDuration(1000), payload: b"hello".to_vec() }
        );
    }

    #[test]
    fn three_hop_delivers_and_hops_learn_only_next() {
        let net = Net::new(6, 3);
        let route = net.route(&[1, 3, 5], 4);
        let pkt = build_packet(&route, b"three layers", &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
        let (out, trail) = net.run(NodeId(1), pkt);
        assert!(matches!(out, Processed::Deliver { ref payload, .. } if payload == b"three layers"));
        assert_eq!(trail, vec![(NodeId(1), NodeId(3)), (NodeId(3), NodeId(5))]);
    }

    #[test]
    fn forward_carries_embedded_delay() {
        let net = Net::new(3, 5);
        let route = net.route(&[0, 1, 2], 1);
        let pkt = build_packet(&route, b"x", &mut ChaCha20Rng::seed_from_u64(6)).unwrap();
        let (out, _) = peel_packet(net.keys(NodeId(0)), &pkt);
        assert!(matches!(out, Processed::Forward { next: NodeId(1), delay: SimDuration(1000), .. }));
    }

    #[test]
    fn wrong_node_keys_fail_integrity() {
        let net = Net::new(3, 7);
        let pkt = build_packet(&net.route(&[0, 1], 1), b"x", &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
        assert_eq!(peel_packet(net.keys(NodeId(2)), &pkt).0, Processed::Drop(DropReason::Integrity));
    }

    #[test]
    fn header_byte_flip_sweep_rejected_at_first_hop() {
        let net = Net::new(3, 9);
        let pkt = build_packet(&net.route(&[0, 1, 2], 1), b"x", &mut ChaCha20Rng::seed_from_u64(10)).unwrap();
        let bytes = pkt.to_bytes();
        for i in 0..HEADER_LEN {
            let mut b = bytes.clone();
            b[i] ^= 0x01;
            let tampered = SphinxPacket::from_bytes(&b).unwrap();
            let (out, _) = peel_packet(net.keys(NodeId(0)), &tampered);
            assert!(
                matches!(out, Processed::Drop(DropReason::Integrity | DropReason::Malformed)),
                "byte {i}: {out:?}"
            );
        }
    }

    #[test]
    fn every_bit_flip_dropped_at_next_hop() {
        let net = Net::new(3, 11);
        let pkt = build_packet(&net.route(&[0, 1, 2], 1), b"bits", &mut ChaCha20Rng::seed_from_u64(12)).unwrap();
        let bytes = pkt.to_bytes();
        for bit in (0..PACKET_LEN * 8).step_by(7) {
            let mut b = bytes.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            let (out, _) = peel_packet(net.keys(NodeId(0)), &SphinxPacket::from_bytes(&b).unwrap());
            assert!(matches!(out, Processed::Drop(_)), "bit {bit}");
        }
        // Tampering after the first hop is caught by the second.
        let Processed::Forward { packet, .. } = peel_packet(net.keys(NodeId(0)), &pkt).0 else { panic!() };
        let mid = packet.to_bytes();
        for bit in (0..PACKET_LEN * 8).step_by(13) {
            let mut b = mid.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            let (out, _) = peel_packet(net.keys(NodeId(1)), &SphinxPacket::from_bytes(&b).unwrap());
            assert!(matches!(out, Processed::Drop(_)), "bit {bit}");
        }
    }

    #[test]
    fn surbs_deterministic_under_prg_and_random_otherwise() {
        let net = Net::new(4, 13);
        let route = net.route(&[0, 1, 2, 3], 2);
        let seed = kdf_with(b"seed", KdfLabel::SurbSeed);
        let a = create_surb(&route, &mut DetPrg::new(&seed)).unwrap();
        let b = create_surb(&route, &mut DetPrg::new(&seed)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let mut sys = ChaCha20Rng::from_entropy();
        let c = create_surb(&route, &mut sys).unwrap();
        let d = create_surb(&route, &mut sys).unwrap();
        assert_ne!(c.to_bytes(), d.to_bytes());
        assert_eq!(Surb::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn surb_round_trip_and_black_hole() {
        let net = Net::new(4, 15);
        let route = net.route(&[0, 1, 2, 3], 6);
        let surb = create_surb(&route, &mut ChaCha20Rng::seed_from_u64(16)).unwrap();
        let (out, _) = net.run(surb.first_hop, apply_surb(&surb, b"reply").unwrap());
        assert!(matches!(out, Processed::Deliver { inbox, ref payload, .. } if payload == b"reply" && inbox == InboxId([6; 16])));

        let fake = ContactInfo::fake();
        let mut hops = route.hops[..3].to_vec();
        hops.push(Hop { node: fake.provider, pk: fake.pk, delay: SimDuration(5) });
        let fake_route = RouteSpec::new(hops, fake.inbox).unwrap();
        let fs = create_surb(&fake_route, &mut ChaCha20Rng::seed_from_u64(17)).unwrap();
        assert_eq!(fs.to_bytes().len(), surb.to_bytes().len());
        let (out, trail) = net.run(fs.first_hop, apply_surb(&fs, b"reply").unwrap());
        assert_eq!(out, Processed::Drop(DropReason::BlackHole));
        assert_eq!(trail.len(), 2);
    }

    #[test]
    fn replay_rejected_at_first_hop() {
        let net = Net::new(2, 19);
        let surb = create_surb(&net.route(&[0, 1], 1), &mut ChaCha20Rng::seed_from_u64(20)).unwrap();
        let mut mix = MixState::new(net.keys(NodeId(0)).clone());
        assert!(matches!(mix.process(&apply_surb(&surb, b"a").unwrap()), Processed::Forward { .. }));
        assert_eq!(mix.process(&apply_surb(&surb, b"b").unwrap()), Processed::Drop(DropReason::Replay));
    }

    #[test]
    fn oversize_payload_rejected() {
        let net = Net::new(1, 21);
        let err = build_packet(&net.route(&[0], 1), &vec![0; MAX_PAYLOAD + 1], &mut ChaCha20Rng::seed_from_u64(1));
        assert!(matches!(err, Err(SphinxError::PayloadTooLarge { .. })));
        assert!(build_packet(&net.route(&[0], 1), &vec![7; MAX_PAYLOAD], &mut ChaCha20Rng::seed_from_u64(1)).is_ok());
    }

    #[test]
    fn invalid_routes() {
        assert!(RouteSpec::new(vec![], InboxId([0; 16])).is_err());
        let net = Net::new(6, 23);
        let hops: Vec<Hop> = (0..6)
            .map(|i| Hop { node: NodeId(i), pk: net.nodes[i as usize].1.pk, delay: SimDuration(0) })
            .collect();
        assert!(RouteSpec::new(hops, InboxId([0; 16])).is_err());
    }

    #[test]
    fn debug_output_hides_routing() {
        let net = Net::new(2, 25);
        let pkt = build_packet(&net.route(&[0, 1], 0xAB), b"secret", &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let s = format!("{pkt:?}");
        assert!(!s.contains("abab") && !s.contains("secret") && s.len() < 64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn length_invariance_and_delivery(v in 1usize..=MAX_HOPS, seed in any::<u64>(),
                                          payload in proptest::collection::vec(any::<u8>(), 0..300)) {
            let net = Net::new(MAX_HOPS as u32, seed);
            let ids: Vec<usize> = (0..v).collect();
            let route = net.route(&ids, 3);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let surb = create_surb(&route, &mut rng).unwrap();
            prop_assert_eq!(surb.to_bytes().len(), SURB_LEN);
            let pkt = apply_surb(&surb, &payload).unwrap();
            prop_assert_eq!(pkt.to_bytes().len(), PACKET_LEN);
            let (out, trail) = net.run(NodeId(0), pkt);
            prop_assert_eq!(trail.len(), v - 1);
            let delivered = matches!(out, Processed::Deliver { payload: ref p, .. } if *p == payload);
            prop_assert!(delivered);
        }
    }
}
