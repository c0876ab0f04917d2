//! The simulated deployment: discovery nodes, user devices, mail servers and
//! an optional adversary, driven by the mixnet simulator.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::client::{reply_mac_input, ClientConfig, IdentityChoice, InitBody, PeerIdentity, UserDevice};
use crate::crypto::{
    aead_seal, blind_public_key, kdf_with, mac, sign, sign_blinded, GroupElement, KdfLabel, KeyPair, Scalar,
};
use crate::discovery::{Directory, DiscoveryNode, NodeEntry, SharedSecret};
use crate::effect::{Effect, Env, OpEvent, OpKind, Timer, Trace};
use crate::email::{
    adversary_forge, domain_of, parse_verification_body, verification_body, DomainKeyStore, EmailMessage, MailServer,
    VERIFICATION_SUBJECT,
};
use crate::sim::{Application, Ctx, OutboundPacket, SimConfig, Simulator, Topology, TopologySpec};
use crate::sphinx::{
    apply_surb, build_packet, create_surb, fragment, ContactInfo, Fragment, NodeId, Reassembler, Surb, HEADER_LEN,
};
use crate::time::{SimDuration, SimTime};
use crate::wire::{lookup_response_signed_bytes, Nonce, WireMessage, CHALLENGE_LEN};

/// What a Byzantine discovery node does differently while its fault is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Byzantine {
    /// Answer lookups with an adversary SURB and blinded key.
    pub substitute: bool,
    /// Send every lookup answer twice.
    pub duplicate: bool,
    /// Drop reflected contact requests.
    pub refuse_reflect: bool,
    /// Reflect an adversary-built contact request in place of the real one.
    pub replace_m_init: bool,
    /// Forge AddFriend messages through reply blocks leaked to the adversary.
    pub forge: bool,
    /// As D_auth, put the adversary's contact into verification emails.
    pub bad_delta: bool,
}

impl Byzantine {
    /// The flags as a bitmask, in field order.
    pub fn from_bits(bits: u8) -> Self {
        Byzantine {
            substitute: bits & 1 != 0,
            duplicate: bits & 2 != 0,
            refuse_reflect: bits & 4 != 0,
            replace_m_init: bits & 8 != 0,
            forge: bits & 16 != 0,
            bad_delta: bits & 32 != 0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum WorldEvent {
    Timer(Timer),
    Email(EmailMessage),
    Register { username: String },
    Discover { target: String, mode: IdentityChoice, codeword: Option<String> },
    /// The adversary endpoint asks every node to bind `username` to its own contact.
    AdversaryRegister { username: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub at: SimTime,
    pub actor: NodeId,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub actor: NodeId,
    pub kind: OpKind,
    pub start: SimTime,
    pub end: Option<(SimTime, Outcome)>,
}

/// Everything the adversary holds or has seen. Leaks from honest traces are
/// deliberate worst-case assumptions for the games.
#[derive(Debug, Clone)]
pub struct Adversary {
    pub endpoint: NodeId,
    pub keys: KeyPair,
    pub contact: ContactInfo,
    /// Every exponent the adversary chose or learned.
    pub scalars: Vec<Scalar>,
    /// Every DH element that crossed the wire in the clear.
    pub elements: BTreeSet<[u8; 32]>,
    pub received: Vec<(SimTime, Vec<u8>)>,
    pub forged: usize,
    /// Honest lookup answers of Byzantine nodes, by SURB header.
    answered: BTreeMap<Vec<u8>, (NodeId, String, Nonce)>,
    /// Mail server of a domain the adversary owns.
    pub domain: MailServer,
    /// Usernames whose verification emails the adversary reads and answers.
    pub victims: BTreeSet<String>,
    /// Forgery strategies, used in turn for successive verification emails.
    pub forgeries: Vec<EmailForgery>,
    pub emails_forged: usize,
    rng: ChaCha20Rng,
}

/// How the adversary signs a reply it forges on a victim's behalf.
#[derive(Debug, Clone)]
pub enum EmailForgery {
    /// A key of its own, claiming the victim's domain.
    NoKey,
    /// A key the victim's domain used before rotating.
    StaleKey(KeyPair),
    /// A valid signature of the adversary's own domain.
    WrongDomain,
    /// The victim domain's current key.
    Compromised(KeyPair),
}

/// A single-bit flip applied to the first delivered message of one kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tamper {
    pub kind: &'static str,
    pub field: &'static str,
    pub bit: usize,
    pub applied: bool,
}

#[derive(Debug, Clone)]
pub struct World {
    pub nodes: BTreeMap<NodeId, DiscoveryNode>,
    pub devices: BTreeMap<NodeId, UserDevice>,
    pub dkim: DomainKeyStore,
    pub mail: BTreeMap<String, MailServer>,
    pub adversary: Option<Adversary>,
    pub log: Vec<LogEntry>,
    pub ops: BTreeMap<(NodeId, u64), OpRecord>,
    /// Plaintext messages emitted, per actor, when recording is on.
    pub sent: Vec<(SimTime, NodeId, WireMessage)>,
    pub record_sent: bool,
    /// Endpoints whose raw deliveries are kept in `observed`.
    pub observe: BTreeSet<NodeId>,
    pub observed: Vec<(SimTime, NodeId, Vec<u8>)>,
    pub tamper: Option<Tamper>,
    mailboxes: BTreeMap<String, NodeId>,
    rngs: BTreeMap<NodeId, ChaCha20Rng>,
    reassembly: BTreeMap<NodeId, Reassembler>,
    mu: f64,
    email_delay: SimDuration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub n: usize,
    /// Fault bound; `(n - 1) / 3` when absent.
    pub f: Option<usize>,
    pub clients: usize,
    pub layers: usize,
    pub mixes_per_layer: usize,
    pub providers: usize,
    pub domains: usize,
    pub sim: SimConfig,
    pub email_delay: SimDuration,
    pub grace: SimDuration,
    pub client: Option<ClientConfig>,
    pub adversary: bool,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n: 4,
            f: None,
            clients: 4,
            layers: 3,
            mixes_per_layer: 3,
            providers: 2,
            domains: 2,
            sim: SimConfig::default(),
            email_delay: SimDuration::from_millis(500),
            grace: SimDuration::from_secs(5),
            client: None,
            adversary: false,
            seed: 0,
        }
    }
}

impl WorldSpec {
    /// Expected one-way latency: one exponential delay per hop after the
    /// sender, plus a transit per link.
    pub fn mean_one_way(&self) -> SimDuration {
        let hops = (self.layers + 1) as f64;
        SimDuration::from_secs_f64(hops * self.sim.mu) + self.sim.transit * (self.layers as u64 + 3)
    }
}

pub fn actor_rng(seed: u64, actor: NodeId) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1 + u64::from(actor.0));
    rng
}

/// Mail for `local+tag@domain` lands in the mailbox of `local@domain`.
fn mailbox_key(addr: &str) -> String {
    match addr.split_once('@') {
        Some((local, domain)) => format!("{}@{}", local.split('+').next().unwrap_or(local), domain),
        None => addr.to_string(),
    }
}

pub fn username_of(i: usize, domains: usize) -> String {
    format!("user{i}@d{}.test", i % domains.max(1))
}

pub const NODE_DOMAIN: &str = "nodes.test";
pub const ADVERSARY_DOMAIN: &str = "evil.test";

/// Fragment id derived from public bytes, so it does not consume sender
/// randomness.
fn message_id(data: &[u8]) -> u64 {
    let digest = Sha256::digest(data);
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn build_world(spec: &WorldSpec) -> Result<Simulator<World>, HarnessError> {
    if spec.n == 0 {
        return Err(HarnessError::config("n", "need at least one discovery node"));
    }
    let f = spec.f.unwrap_or((spec.n - 1) / 3);
    if 3 * f + 1 > spec.n {
        return Err(HarnessError::config("f", format!("n = {} cannot tolerate f = {f}", spec.n)));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let tspec = TopologySpec {
        layers: spec.layers,
        mixes_per_layer: spec.mixes_per_layer,
        providers: spec.providers,
        discovery_nodes: spec.n,
        clients: spec.clients + usize::from(spec.adversary),
    };
    let (topology, mix_keys) = Topology::generate(&tspec, &mut rng)?;
    let k = SharedSecret::generate(&mut rng);
    let mut dkim = DomainKeyStore::default();
    let mut mail = BTreeMap::new();
    mail.insert(NODE_DOMAIN.to_string(), MailServer::new(NODE_DOMAIN, &mut dkim, &mut rng));
    for d in 0..spec.domains.max(1) {
        let domain = format!("d{d}.test");
        mail.insert(domain.clone(), MailServer::new(&domain, &mut dkim, &mut rng));
    }
    let node_keys: Vec<KeyPair> = (0..spec.n).map(|_| KeyPair::generate(&mut rng)).collect();
    let directory = Directory {
        nodes: topology
            .discovery
            .iter()
            .zip(&node_keys)
            .map(|(&id, kp)| NodeEntry {
                id,
                signing_pk: kp.pk,
                contact: topology.contact_for(id, kp.pk).expect("attached"),
                email: format!("node{}@{NODE_DOMAIN}", id.0),
            })
            .collect(),
        f,
    };
    let mut mailboxes = BTreeMap::new();
    let mut rngs = BTreeMap::new();
    let mut nodes = BTreeMap::new();
    for (entry, kp) in directory.nodes.clone().into_iter().zip(node_keys) {
        mailboxes.insert(entry.email.clone(), entry.id);
        rngs.insert(entry.id, actor_rng(spec.seed, entry.id));
        nodes.insert(entry.id, DiscoveryNode::new(entry.id, kp, k.clone(), directory.clone(), spec.grace));
    }
    let config = spec.client.unwrap_or_else(|| ClientConfig::from_one_way(spec.mean_one_way()));
    let mut devices = BTreeMap::new();
    for (i, &id) in topology.clients.iter().take(spec.clients).enumerate() {
        let keys = KeyPair::generate(&mut rng);
        let contact = topology.contact_for(id, keys.pk).expect("attached");
        let username = username_of(i, spec.domains);
        mailboxes.insert(username.clone(), id);
        rngs.insert(id, actor_rng(spec.seed, id));
        devices.insert(id, UserDevice::new(id, keys, contact, &username, directory.clone(), config));
    }
    let adversary = match (spec.adversary, topology.clients.last()) {
        (true, Some(&endpoint)) => {
            let keys = KeyPair::generate(&mut rng);
            let contact = topology.contact_for(endpoint, keys.pk).expect("attached");
            let domain = MailServer::new(ADVERSARY_DOMAIN, &mut dkim, &mut rng);
            let mut own = ChaCha20Rng::seed_from_u64(spec.seed);
            own.set_stream(u64::MAX - 1);
            rngs.insert(endpoint, own);
            Some(Adversary {
                endpoint,
                scalars: vec![keys.sk],
                keys,
                contact,
                elements: BTreeSet::new(),
                received: Vec::new(),
                forged: 0,
                answered: BTreeMap::new(),
                domain,
                victims: BTreeSet::new(),
                forgeries: Vec::new(),
                emails_forged: 0,
                rng: actor_rng(spec.seed, endpoint),
            })
        }
        _ => None,
    };
    let world = World {
        nodes,
        devices,
        dkim,
        mail,
        adversary,
        log: Vec::new(),
        ops: BTreeMap::new(),
        sent: Vec::new(),
        record_sent: false,
        observe: BTreeSet::new(),
        observed: Vec::new(),
        tamper: None,
        mailboxes,
        rngs,
        reassembly: BTreeMap::new(),
        mu: spec.sim.mu,
        email_delay: spec.email_delay,
    };
    Ok(Simulator::new(topology, mix_keys, spec.sim, world)?)
}

impl World {
    /// Binds every device's own username at every node, as if registered.
    pub fn preload_all(&mut self) {
        let bindings: Vec<(String, ContactInfo)> =
            self.devices.values().map(|d| (d.username.clone(), d.contact)).collect();
        for node in self.nodes.values_mut() {
            for (u, c) in &bindings {
                node.preload(u, *c);
            }
        }
    }

    pub fn device_by_name(&self, username: &str) -> Option<&UserDevice> {
        self.devices.values().find(|d| d.username == username)
    }

    pub fn traces(&self) -> impl Iterator<Item = &LogEntry> {
        self.log.iter()
    }

    fn execute(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, actor: NodeId, effects: Vec<Effect>) {
        for effect in effects {
            match effect {
                Effect::Send { to, msg } => {
                    if self.record_sent {
                        self.sent.push((ctx.now(), actor, msg.clone()));
                    }
                    let rng = self.rngs.get_mut(&actor).expect("actor rng");
                    let data = msg.encode();
                    let frames = fragment(message_id(&data), &data).expect("message size");
                    for frame in frames {
                        let Ok(route) = ctx.topology().random_route(rng, &to, self.mu) else { continue };
                        let packet = build_packet(&route, &frame, rng).expect("frame fits");
                        let first_hop = route.hops[0].node;
                        let _ = ctx.submit(actor, OutboundPacket { first_hop, packet });
                    }
                }
                Effect::Reply { surb, msg } => {
                    if self.record_sent {
                        self.sent.push((ctx.now(), actor, msg.clone()));
                    }
                    // Keyed to the reply block, which the recipient chose.
                    let frames = fragment(message_id(&surb.header.to_bytes()), &msg.encode()).expect("message size");
                    if let [frame] = frames.as_slice() {
                        let packet = apply_surb(&surb, frame).expect("frame fits");
                        let _ = ctx.submit(actor, OutboundPacket { first_hop: surb.first_hop, packet });
                    }
                }
                Effect::Submit(out) => {
                    let _ = ctx.submit(actor, out);
                }
                Effect::Email(msg) => self.send_email(ctx, msg),
                Effect::Timer { after, timer } => ctx.schedule(after, actor, WorldEvent::Timer(timer)),
                Effect::Trace(trace) => self.on_trace(ctx, actor, trace),
            }
        }
    }

    /// Signs with the sender's domain server and delivers after the mail delay.
    pub fn send_email(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, msg: EmailMessage) {
        let signed = match (msg.dkim.is_some(), domain_of(&msg.from).and_then(|d| self.mail.get(d))) {
            (true, _) => msg,
            (false, Some(server)) => match server.dkim_sign(msg) {
                Ok(m) => m,
                Err(_) => return,
            },
            (false, None) => return,
        };
        self.forge_verification_reply(ctx, &signed);
        if let Some(&to) = self.mailboxes.get(&mailbox_key(&signed.to)) {
            ctx.schedule(self.email_delay, to, WorldEvent::Email(signed));
        }
    }

    /// Answers a victim's verification email in the victim's name, as if the
    /// adversary could read the victim's inbox but not use its mail server.
    fn forge_verification_reply(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, email: &EmailMessage) {
        let Some(adv) = self.adversary.as_mut() else { return };
        if email.subject != VERIFICATION_SUBJECT || !adv.victims.contains(&email.to) || adv.forgeries.is_empty() {
            return;
        }
        let strategy = adv.forgeries[adv.emails_forged % adv.forgeries.len()].clone();
        adv.emails_forged += 1;
        let subject = format!("Re: {}", email.subject);
        let original = Some(email.serialize());
        let forged = match &strategy {
            EmailForgery::NoKey => adversary_forge(&email.to, &email.from, &subject, "confirm", original, None, &mut adv.rng),
            EmailForgery::StaleKey(k) | EmailForgery::Compromised(k) => {
                adversary_forge(&email.to, &email.from, &subject, "confirm", original, Some(k), &mut adv.rng)
            }
            EmailForgery::WrongDomain => {
                let key = adv.domain.compromise();
                let mut m = adversary_forge(&email.to, &email.from, &subject, "confirm", original, Some(&key), &mut adv.rng);
                if let Some(d) = m.dkim.as_mut() {
                    d.domain = ADVERSARY_DOMAIN.to_string();
                }
                m
            }
        };
        if let Some(&to) = self.mailboxes.get(&mailbox_key(&forged.to)) {
            ctx.schedule(self.email_delay, to, WorldEvent::Email(forged));
        }
    }

    fn on_trace(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, actor: NodeId, trace: Trace) {
        let now = ctx.now();
        match &trace {
            Trace::Op { op, kind, event } => match event {
                OpEvent::Start => {
                    self.ops.insert((actor, *op), OpRecord { actor, kind: *kind, start: now, end: None });
                }
                OpEvent::Success | OpEvent::Failure(_) => {
                    if let Some(r) = self.ops.get_mut(&(actor, *op)) {
                        let outcome = match event {
                            OpEvent::Failure(why) => Outcome::Failure(why.clone()),
                            _ => Outcome::Success,
                        };
                        r.end.get_or_insert((now, outcome));
                    }
                }
            },
            Trace::ContactInitSent { g_a, reply_surb, .. } => {
                if let Some(adv) = self.adversary.as_mut() {
                    adv.elements.insert(*g_a);
                }
                if !reply_surb.is_empty() && self.forging(ctx) {
                    self.forge_reply(ctx, *g_a, reply_surb);
                }
            }
            Trace::SearcheeReplied { g_a, g_b, reply_surb } => {
                if let Some(adv) = self.adversary.as_mut() {
                    adv.elements.insert(*g_a);
                    adv.elements.insert(*g_b);
                }
                if self.forging(ctx) {
                    self.forge_finish(ctx, *g_b, reply_surb);
                }
            }
            Trace::SearcherFinished { g_a, g_b } => {
                if let Some(adv) = self.adversary.as_mut() {
                    adv.elements.insert(*g_a);
                    adv.elements.insert(*g_b);
                }
            }
            _ => {}
        }
        self.log.push(LogEntry { at: now, actor, trace });
    }

    fn forging(&self, ctx: &Ctx<'_, WorldEvent, Byzantine>) -> bool {
        self.adversary.is_some() && self.nodes.keys().any(|&id| ctx.behavior(id).is_some_and(|b| b.forge))
    }

    /// A message 2 through the searcher's leaked reply block, signed with the
    /// adversary's own key.
    fn forge_reply(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, g_a: [u8; 32], reply_surb: &[u8]) {
        let Some(adv) = self.adversary.as_mut() else { return };
        let (Ok(surb), Ok(g_a_el)) = (Surb::from_bytes(reply_surb), GroupElement::from_bytes(&g_a)) else { return };
        let b = Scalar::random_nonzero(&mut adv.rng);
        let y = Scalar::random_nonzero(&mut adv.rng);
        adv.scalars.extend([b, y]);
        let g_b = GroupElement::base_mul(&b).to_bytes();
        let k_m = kdf_with(g_a_el.mul(&b).as_bytes(), KdfLabel::MacKey);
        let bpk = blind_public_key(&adv.keys.pk, &y).expect("nonzero").to_bytes();
        let sig = sign_blinded(&adv.keys.sk, &y, &[g_a, g_b].concat()).expect("nonzero").0;
        let own = create_surb(&ctx.topology().random_route(&mut adv.rng, &adv.contact, self.mu).expect("route"), &mut adv.rng)
            .expect("surb")
            .to_bytes();
        let tag = mac(&k_m, &reply_mac_input("", &bpk, &own, None)).0;
        let msg = WireMessage::AddFriendReply { g_a, g_b, sig, mac: tag, reply_surb: own, lookup_nonce: None };
        Self::adversary_reply(ctx, adv, &surb, &msg);
    }

    /// A message 3 through the searchee's leaked reply block.
    fn forge_finish(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, g_b: [u8; 32], reply_surb: &[u8]) {
        let Some(adv) = self.adversary.as_mut() else { return };
        let Ok(surb) = Surb::from_bytes(reply_surb) else { return };
        let y = Scalar::random_nonzero(&mut adv.rng);
        adv.scalars.push(y);
        let sig = sign_blinded(&adv.keys.sk, &y, &g_b).expect("nonzero").0;
        let mut tag = [0u8; 32];
        adv.rng.fill_bytes(&mut tag);
        let own = create_surb(&ctx.topology().random_route(&mut adv.rng, &adv.contact, self.mu).expect("route"), &mut adv.rng)
            .expect("surb")
            .to_bytes();
        let msg = WireMessage::AddFriendFinish { g_b, sig, mac: tag, reply_surb: own };
        Self::adversary_reply(ctx, adv, &surb, &msg);
    }

    fn adversary_reply(ctx: &mut Ctx<'_, WorldEvent, Byzantine>, adv: &mut Adversary, surb: &Surb, msg: &WireMessage) {
        let frame = fragment(adv.rng.next_u64(), &msg.encode()).expect("fits").remove(0);
        if let Ok(packet) = apply_surb(surb, &frame) {
            adv.forged += 1;
            let _ = ctx.submit(adv.endpoint, OutboundPacket { first_hop: surb.first_hop, packet });
        }
    }

    fn dispatch(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, actor: NodeId, input: Input) {
        if let Input::Event(WorldEvent::AdversaryRegister { username }) = &input {
            self.adversary_register(ctx, actor, username);
            return;
        }
        let byz = ctx.behavior(actor).copied();
        if let (Some(b), Input::Message(WireMessage::Reflect { first_hop, packet })) = (byz, &input) {
            if b.refuse_reflect {
                return;
            }
            if b.replace_m_init && self.replace_m_init(ctx, actor, *first_hop, packet) {
                return;
            }
        }
        if let (Some(_), Input::Message(WireMessage::LookupRequest { target, nonce, .. })) = (byz, &input) {
            self.note_answer(ctx, actor, target, nonce);
        }
        let env = Env { now: ctx.now(), topology: ctx.topology(), mu: self.mu, dkim: &self.dkim };
        let rng = self.rngs.get_mut(&actor).expect("actor rng");
        let effects = if let Some(node) = self.nodes.get_mut(&actor) {
            match input {
                Input::Message(m) => node.handle_message(&env, m, rng),
                Input::Event(WorldEvent::Timer(t)) => node.handle_timer(&env, t),
                Input::Event(WorldEvent::Email(e)) => node.handle_email(&env, e),
                Input::Event(_) => Vec::new(),
            }
        } else if let Some(dev) = self.devices.get_mut(&actor) {
            match input {
                Input::Message(m) => dev.handle_message(&env, m, rng),
                Input::Event(WorldEvent::Timer(t)) => dev.handle_timer(&env, t, rng),
                Input::Event(WorldEvent::Email(e)) => dev.handle_email(e),
                Input::Event(WorldEvent::Register { username }) => dev.register(&env, &username, rng),
                Input::Event(WorldEvent::Discover { target, mode, codeword }) => {
                    dev.discover(&env, &target, mode, codeword, rng)
                }
                Input::Event(WorldEvent::AdversaryRegister { .. }) => Vec::new(),
            }
        } else {
            Vec::new()
        };
        let effects = match byz {
            Some(b) => self.corrupt(ctx, actor, b, effects),
            None => effects,
        };
        self.execute(ctx, actor, effects);
    }

    fn adversary_register(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, actor: NodeId, username: &str) {
        let Some(adv) = self.adversary.as_mut().filter(|a| a.endpoint == actor) else { return };
        let Some(dir) = self.nodes.values().next().map(|n| n.directory().clone()) else { return };
        let mut reg_id = [0u8; 16];
        adv.rng.fill_bytes(&mut reg_id);
        let d_auth = dir.nodes[(adv.rng.next_u32() as usize) % dir.nodes.len()].id;
        let contact = adv.contact.to_bytes();
        let effects = dir
            .nodes
            .iter()
            .map(|e| Effect::Send {
                to: e.contact,
                msg: WireMessage::RegisterRequest { reg_id, username: username.to_string(), contact, d_auth },
            })
            .collect();
        self.execute(ctx, actor, effects);
    }

    fn note_answer(&mut self, ctx: &Ctx<'_, WorldEvent, Byzantine>, actor: NodeId, target: &str, nonce: &Nonce) {
        let (Some(adv), Some(node)) = (self.adversary.as_mut(), self.nodes.get(&actor)) else { return };
        let env = Env { now: ctx.now(), topology: ctx.topology(), mu: self.mu, dkim: &self.dkim };
        if let Ok(m) = node.materials(&env, target, nonce) {
            adv.scalars.push(m.y);
            adv.answered.insert(m.surb.header.to_bytes().to_vec(), (actor, target.to_string(), *nonce));
        }
    }

    /// Swaps a reflected contact request for one the adversary built on the
    /// same deterministic SURB, which a Byzantine node can recompute.
    fn replace_m_init(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, actor: NodeId, _first_hop: NodeId, packet: &[u8]) -> bool {
        if packet.len() < HEADER_LEN {
            return false;
        }
        let Some(adv) = self.adversary.as_mut() else { return false };
        let Some((_, target, nonce)) = adv.answered.get(&packet[..HEADER_LEN]).cloned() else { return false };
        let Some(node) = self.nodes.get(&actor) else { return false };
        let env = Env { now: ctx.now(), topology: ctx.topology(), mu: self.mu, dkim: &self.dkim };
        let Ok(m) = node.materials(&env, &target, &nonce) else { return false };
        let a = Scalar::random_nonzero(&mut adv.rng);
        let y = Scalar::random_nonzero(&mut adv.rng);
        adv.scalars.extend([a, y]);
        let g_a = GroupElement::base_mul(&a).to_bytes();
        adv.elements.insert(g_a);
        let k_e = kdf_with(m.bpk.0.mul(&a).as_bytes(), KdfLabel::InitKey);
        let own = create_surb(&ctx.topology().random_route(&mut adv.rng, &adv.contact, self.mu).expect("route"), &mut adv.rng)
            .expect("surb");
        let bpk = blind_public_key(&adv.keys.pk, &y).expect("nonzero").to_bytes();
        let body = InitBody { reply_surb: own.to_bytes(), codeword: None, identity: PeerIdentity::Blinded(bpk) }.encode();
        let ciphertext = aead_seal(&k_e, &body, &[&g_a[..], &nonce[..]].concat());
        let payload = WireMessage::ContactInit { g_a, nonce, ciphertext }.encode();
        let frame = fragment(adv.rng.next_u64(), &payload).expect("fits").remove(0);
        let Ok(forged) = apply_surb(&m.surb, &frame) else { return false };
        adv.forged += 1;
        let _ = ctx.submit(actor, OutboundPacket { first_hop: m.surb.first_hop, packet: forged });
        true
    }

    fn corrupt(&mut self, ctx: &Ctx<'_, WorldEvent, Byzantine>, actor: NodeId, b: Byzantine, effects: Vec<Effect>) -> Vec<Effect> {
        let Some(adv) = self.adversary.as_mut() else { return effects };
        let node_key = self.nodes.get(&actor).map(|n| n.compromise());
        let mut out = Vec::with_capacity(effects.len());
        for e in effects {
            match e {
                Effect::Reply { surb, msg: WireMessage::LookupResponse { node, nonce, surb: s, bpk, sig } } => {
                    let (s, bpk, sig) = match (&node_key, b.substitute) {
                        (Some(key), true) => {
                            let y = Scalar::random_nonzero(&mut adv.rng);
                            adv.scalars.push(y);
                            let route = ctx.topology().random_route(&mut adv.rng, &adv.contact, self.mu).expect("route");
                            let fake = create_surb(&route, &mut adv.rng).expect("surb").to_bytes();
                            let fbpk = blind_public_key(&adv.keys.pk, &y).expect("nonzero").to_bytes();
                            let fsig = sign(&key.sk, &lookup_response_signed_bytes(&nonce, &fake, &fbpk)).expect("nonzero").0;
                            (fake, fbpk, fsig)
                        }
                        _ => (s, bpk, sig),
                    };
                    let msg = WireMessage::LookupResponse { node, nonce, surb: s, bpk, sig };
                    if b.duplicate {
                        out.push(Effect::Reply { surb: surb.clone(), msg: msg.clone() });
                    }
                    out.push(Effect::Reply { surb, msg });
                }
                Effect::Email(mut email) if b.bad_delta => {
                    let content = parse_verification_body(&email.body);
                    let challenges: BTreeMap<NodeId, [u8; CHALLENGE_LEN]> =
                        content.challenges.into_iter().filter_map(|(n, c)| Some((n, c.try_into().ok()?))).collect();
                    email.body = verification_body(&challenges, &adv.contact);
                    out.push(Effect::Email(email));
                }
                other => out.push(other),
            }
        }
        out
    }
}

enum Input {
    Message(WireMessage),
    Event(WorldEvent),
}

impl Application for World {
    type Event = WorldEvent;
    type Behavior = Byzantine;

    fn on_delivery(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, endpoint: NodeId, payload: Vec<u8>) {
        if self.observe.contains(&endpoint) {
            self.observed.push((ctx.now(), endpoint, payload.clone()));
        }
        if let Some(adv) = self.adversary.as_mut().filter(|a| a.endpoint == endpoint) {
            adv.received.push((ctx.now(), payload));
            return;
        }
        let Ok(frag) = Fragment::decode(&payload) else { return };
        let Some(data) = self.reassembly.entry(endpoint).or_default().push(frag) else { return };
        let Ok(mut msg) = WireMessage::decode(&data) else { return };
        if let Some(t) = self.tamper.as_mut().filter(|t| !t.applied && t.kind == msg.kind()) {
            if self.devices.contains_key(&endpoint) {
                t.applied = flip_field_bit(&mut msg, t.field, t.bit);
            }
        }
        self.dispatch(ctx, endpoint, Input::Message(msg));
    }

    fn on_event(&mut self, ctx: &mut Ctx<'_, WorldEvent, Byzantine>, target: NodeId, event: WorldEvent) {
        self.dispatch(ctx, target, Input::Event(event));
    }
}

/// Handshake message fields and their byte lengths, for tamper sweeps.
pub fn handshake_fields(msg: &WireMessage) -> Vec<(&'static str, usize)> {
    match msg {
        WireMessage::ContactInit { ciphertext, .. } => vec![("g_a", 32), ("nonce", 16), ("ciphertext", ciphertext.len())],
        WireMessage::AddFriendReply { sig, reply_surb, lookup_nonce, .. } => {
            let mut v = vec![("g_a", 32), ("g_b", 32), ("sig", sig.len()), ("mac", 32), ("reply_surb", reply_surb.len())];
            if lookup_nonce.is_some() {
                v.push(("lookup_nonce", 16));
            }
            v
        }
        WireMessage::AddFriendFinish { sig, reply_surb, .. } => {
            vec![("g_b", 32), ("sig", sig.len()), ("mac", 32), ("reply_surb", reply_surb.len())]
        }
        WireMessage::KeyConfirm { ciphertext, .. } => vec![("g_a", 32), ("ciphertext", ciphertext.len())],
        _ => Vec::new(),
    }
}

/// Flips one bit of a named field. False when the field is absent or too short.
pub fn flip_field_bit(msg: &mut WireMessage, field: &str, bit: usize) -> bool {
    let bytes: &mut [u8] = match (msg, field) {
        (WireMessage::ContactInit { g_a, .. }, "g_a") => g_a,
        (WireMessage::ContactInit { nonce, .. }, "nonce") => nonce,
        (WireMessage::ContactInit { ciphertext, .. }, "ciphertext") => ciphertext,
        (WireMessage::AddFriendReply { g_a, .. }, "g_a") => g_a,
        (WireMessage::AddFriendReply { g_b, .. }, "g_b") => g_b,
        (WireMessage::AddFriendReply { sig, .. }, "sig") => sig,
        (WireMessage::AddFriendReply { mac, .. }, "mac") => mac,
        (WireMessage::AddFriendReply { reply_surb, .. }, "reply_surb") => reply_surb,
        (WireMessage::AddFriendReply { lookup_nonce: Some(n), .. }, "lookup_nonce") => n,
        (WireMessage::AddFriendFinish { g_b, .. }, "g_b") => g_b,
        (WireMessage::AddFriendFinish { sig, .. }, "sig") => sig,
        (WireMessage::AddFriendFinish { mac, .. }, "mac") => mac,
        (WireMessage::AddFriendFinish { reply_surb, .. }, "reply_surb") => reply_surb,
        (WireMessage::KeyConfirm { g_a, .. }, "g_a") => g_a,
        (WireMessage::KeyConfirm { ciphertext, .. }, "ciphertext") => ciphertext,
        _ => return false,
    };
    match bytes.get_mut(bit / 8) {
        Some(b) => {
            *b ^= 1 << (bit % 8);
            true
        }
        None => false,
    }
}

/// Starts an operation on a device at `at`.
pub fn schedule(sim: &mut Simulator<World>, at: SimTime, device: NodeId, event: WorldEvent) {
    sim.schedule_at(at, device, event);
}

/// Messages in a payload as delivered: a single-fragment wire message.
pub fn decode_delivery(payload: &[u8]) -> Option<WireMessage> {
    let frag = Fragment::decode(payload).ok()?;
    (frag.total == 1).then_some(())?;
    WireMessage::decode(&frag.data).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::FriendRecord;

    fn world(seed: u64, n: usize) -> Simulator<World> {
        build_world(&WorldSpec { n, seed, ..WorldSpec::default() }).unwrap()
    }

    fn friends(sim: &Simulator<World>, id: NodeId) -> Vec<FriendRecord> {
        sim.app.devices[&id].friends.clone()
    }

    #[test]
    fn registration_end_to_end() {
        let mut sim = world(1, 4);
        let dev = *sim.app.devices.keys().next().unwrap();
        let name = sim.app.devices[&dev].username.clone();
        schedule(&mut sim, SimTime::ZERO, dev, WorldEvent::Register { username: name.clone() });
        sim.run_until(SimTime::from_secs_f64(60.0));
        assert!(sim.app.devices[&dev].is_registered(&name));
        let contact = sim.app.devices[&dev].contact;
        for node in sim.app.nodes.values() {
            assert_eq!(node.record(&name), Some(&contact));
        }
        let op = sim.app.ops.values().find(|o| o.kind == OpKind::Register).unwrap();
        assert_eq!(op.end.as_ref().unwrap().1, Outcome::Success);
    }

    #[test]
    fn alias_registration_reaches_the_same_mailbox() {
        let mut sim = world(2, 4);
        let dev = *sim.app.devices.keys().next().unwrap();
        let alias = sim.app.devices[&dev].username.replace('@', "+r1@");
        schedule(&mut sim, SimTime::ZERO, dev, WorldEvent::Register { username: alias.clone() });
        sim.run_until(SimTime::from_secs_f64(60.0));
        assert!(sim.app.devices[&dev].is_registered(&alias));
    }

    fn handshake(seed: u64, mode: IdentityChoice) -> Simulator<World> {
        let mut sim = world(seed, 4);
        sim.app.preload_all();
        let ids: Vec<NodeId> = sim.app.devices.keys().copied().collect();
        let target = sim.app.devices[&ids[1]].username.clone();
        schedule(&mut sim, SimTime::ZERO, ids[0], WorldEvent::Discover { target, mode, codeword: None });
        sim.run_until(SimTime::from_secs_f64(120.0));
        sim
    }

    #[test]
    fn discovery_both_modes_agree_on_key() {
        for mode in [IdentityChoice::Anonymous, IdentityChoice::Named] {
            let sim = handshake(3, mode);
            let ids: Vec<NodeId> = sim.app.devices.keys().copied().collect();
            let (a, b) = (friends(&sim, ids[0]), friends(&sim, ids[1]));
            assert_eq!(a.len(), 1, "{mode:?}");
            assert_eq!(b.len(), 1, "{mode:?}");
            assert_eq!(a[0].k_s, b[0].k_s);
            assert_eq!(a[0].surbs.len(), 1);
            let want = match mode {
                IdentityChoice::Named => PeerIdentity::Named(sim.app.devices[&ids[0]].username.clone()),
                IdentityChoice::Anonymous => b[0].peer.clone(),
            };
            assert_eq!(b[0].peer, want);
            let ops: Vec<&OpRecord> = sim.app.ops.values().filter(|o| o.actor == ids[0]).collect();
            assert_eq!(ops.len(), 2);
            assert!(ops.iter().all(|o| matches!(o.end, Some((_, Outcome::Success)))));
        }
    }

    #[test]
    fn unregistered_target_times_out_like_a_silent_one() {
        let mut sim = world(4, 4);
        let ids: Vec<NodeId> = sim.app.devices.keys().copied().collect();
        schedule(
            &mut sim,
            SimTime::ZERO,
            ids[0],
            WorldEvent::Discover { target: "nobody@d0.test".into(), mode: IdentityChoice::Anonymous, codeword: None },
        );
        sim.run_until(SimTime::from_secs_f64(300.0));
        let fails: Vec<&OpRecord> = sim.app.ops.values().filter(|o| o.kind == OpKind::ContactInitAddFriend).collect();
        // First attempt plus one restart, both unanswered.
        assert_eq!(fails.len(), 2);
        assert!(fails.iter().all(|o| matches!(o.end, Some((_, Outcome::Failure(_))))));
        assert!(sim.report().drops_with(crate::sphinx::DropReason::BlackHole) >= 1);
    }
}
