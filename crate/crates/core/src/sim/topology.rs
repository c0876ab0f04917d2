use std::collections::BTreeMap;

use rand::{CryptoRng, Rng, RngCore};

use super::{sample_delay, SimError};
use crate::crypto::{GroupElement, KeyPair};
use crate::sphinx::{ContactInfo, Hop, InboxId, NodeId, RouteSpec, MAX_HOPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Mix { layer: usize },
    Provider,
    Discovery,
    Client,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologySpec {
    pub layers: usize,
    pub mixes_per_layer: usize,
    pub providers: usize,
    pub discovery_nodes: usize,
    pub clients: usize,
}

/// Who is where. Mixes and providers carry Sphinx keys; discovery nodes and
/// clients are endpoints, each attached to one provider inbox.
#[derive(Debug, Clone)]
pub struct Topology {
    pub layers: Vec<Vec<NodeId>>,
    pub providers: Vec<NodeId>,
    pub discovery: Vec<NodeId>,
    pub clients: Vec<NodeId>,
    keys: BTreeMap<NodeId, GroupElement>,
    kinds: BTreeMap<NodeId, NodeKind>,
    attachment: BTreeMap<NodeId, (NodeId, InboxId)>,
    inboxes: BTreeMap<(NodeId, InboxId), NodeId>,
}

impl Topology {
    /// Lays out nodes with consecutive ids (mixes, providers, discovery nodes,
    /// clients) and returns the Sphinx secrets of mixes and providers.
    pub fn generate<R: RngCore + CryptoRng>(
        spec: &TopologySpec,
        rng: &mut R,
    ) -> Result<(Topology, Vec<(NodeId, KeyPair)>), SimError> {
        if spec.layers < 3 || spec.layers + 1 > MAX_HOPS {
            return Err(SimError::Topology(format!("layer count {} outside 3..={}", spec.layers, MAX_HOPS - 1)));
        }
        if spec.mixes_per_layer == 0 || spec.providers == 0 {
            return Err(SimError::Topology("need at least one mix per layer and one provider".into()));
        }
        let mut next = 0u32;
        let mut alloc = || {
            let id = NodeId(next);
            next += 1;
            id
        };
        let mut t = Topology {
            layers: Vec::new(),
            providers: Vec::new(),
            discovery: Vec::new(),
            clients: Vec::new(),
            keys: BTreeMap::new(),
            kinds: BTreeMap::new(),
            attachment: BTreeMap::new(),
            inboxes: BTreeMap::new(),
        };
        let mut secrets = Vec::new();
        for layer in 0..spec.layers {
            let mut ids = Vec::new();
            for _ in 0..spec.mixes_per_layer {
                let id = alloc();
                let kp = KeyPair::generate(rng);
                t.keys.insert(id, kp.pk);
                t.kinds.insert(id, NodeKind::Mix { layer });
                secrets.push((id, kp));
                ids.push(id);
            }
            t.layers.push(ids);
        }
        for _ in 0..spec.providers {
            let id = alloc();
            let kp = KeyPair::generate(rng);
            t.keys.insert(id, kp.pk);
            t.kinds.insert(id, NodeKind::Provider);
            secrets.push((id, kp));
            t.providers.push(id);
        }
        let endpoint_count = spec.discovery_nodes + spec.clients;
        for i in 0..endpoint_count {
            let id = alloc();
            let kind = if i < spec.discovery_nodes { NodeKind::Discovery } else { NodeKind::Client };
            let provider = t.providers[i % t.providers.len()];
            let mut inbox = [0u8; 16];
            rng.fill_bytes(&mut inbox);
            t.attach(id, kind, provider, InboxId(inbox));
        }
        Ok((t, secrets))
    }

    fn attach(&mut self, id: NodeId, kind: NodeKind, provider: NodeId, inbox: InboxId) {
        self.kinds.insert(id, kind);
        match kind {
            NodeKind::Discovery => self.discovery.push(id),
            _ => self.clients.push(id),
        }
        self.attachment.insert(id, (provider, inbox));
        self.inboxes.insert((provider, inbox), id);
    }

    pub fn kind(&self, id: NodeId) -> Option<NodeKind> {
        self.kinds.get(&id).copied()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.kinds.contains_key(&id)
    }

    /// Sphinx public key of a mix or provider.
    pub fn node_key(&self, id: NodeId) -> Option<GroupElement> {
        self.keys.get(&id).copied()
    }

    pub fn provider_of(&self, endpoint: NodeId) -> Option<NodeId> {
        self.attachment.get(&endpoint).map(|a| a.0)
    }

    pub fn inbox_of(&self, endpoint: NodeId) -> Option<InboxId> {
        self.attachment.get(&endpoint).map(|a| a.1)
    }

    pub fn endpoint_at(&self, provider: NodeId, inbox: InboxId) -> Option<NodeId> {
        self.inboxes.get(&(provider, inbox)).copied()
    }

    /// Routing half of an endpoint's contact info.
    pub fn contact_for(&self, endpoint: NodeId, pk: GroupElement) -> Option<ContactInfo> {
        let (provider, inbox) = *self.attachment.get(&endpoint)?;
        Some(ContactInfo { pk, provider, inbox })
    }

    pub fn mix_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// One uniformly chosen mix per layer, then the destination provider (or
    /// the black hole for Δ_fake). Every hop draws an exponential delay.
    /// Draw order: for each hop, mix index then delay.
    pub fn random_route<R: RngCore + ?Sized>(
        &self,
        rng: &mut R,
        dest: &ContactInfo,
        mu: f64,
    ) -> Result<RouteSpec, SimError> {
        let mut hops = Vec::with_capacity(self.layers.len() + 1);
        for layer in &self.layers {
            let node = layer[rng.gen_range(0..layer.len())];
            let pk = self.keys[&node];
            hops.push(Hop { node, pk, delay: sample_delay(rng, mu)? });
        }
        let last = if dest.is_fake() {
            Hop { node: NodeId::BLACK_HOLE, pk: dest.pk, delay: sample_delay(rng, mu)? }
        } else {
            let pk = self
                .node_key(dest.provider)
                .filter(|_| self.kind(dest.provider) == Some(NodeKind::Provider))
                .ok_or(SimError::UnknownNode(dest.provider))?;
            Hop { node: dest.provider, pk, delay: sample_delay(rng, mu)? }
        };
        hops.push(last);
        RouteSpec::new(hops, dest.inbox).map_err(|e| SimError::Topology(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn spec() -> TopologySpec {
        TopologySpec { layers: 3, mixes_per_layer: 3, providers: 3, discovery_nodes: 4, clients: 5 }
    }

    #[test]
    fn layout() {
        let (t, secrets) = Topology::generate(&spec(), &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert_eq!(t.layers.len(), 3);
        assert_eq!(secrets.len(), 12);
        assert_eq!(t.discovery.len(), 4);
        assert_eq!(t.clients.len(), 5);
        for &c in t.clients.iter().chain(&t.discovery) {
            let p = t.provider_of(c).unwrap();
            assert_eq!(t.kind(p), Some(NodeKind::Provider));
            assert_eq!(t.endpoint_at(p, t.inbox_of(c).unwrap()), Some(c));
        }
    }

    #[test]
    fn rejects_too_few_layers() {
        let mut s = spec();
        s.layers = 2;
        assert!(Topology::generate(&s, &mut ChaCha20Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn routes_cover_each_layer() {
        let (t, _) = Topology::generate(&spec(), &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        let c = t.clients[0];
        let dest = t.contact_for(c, GroupElement::generator()).unwrap();
        let r = t.random_route(&mut ChaCha20Rng::seed_from_u64(3), &dest, 0.05).unwrap();
        assert_eq!(r.hops.len(), 4);
        for (i, h) in r.hops[..3].iter().enumerate() {
            assert_eq!(t.kind(h.node), Some(NodeKind::Mix { layer: i }));
        }
        assert_eq!(r.destination(), dest.provider);
        let fr = t.random_route(&mut ChaCha20Rng::seed_from_u64(3), &ContactInfo::fake(), 0.05).unwrap();
        assert_eq!(fr.destination(), NodeId::BLACK_HOLE);
        assert_eq!(fr.hops.len(), 4);
    }
}
