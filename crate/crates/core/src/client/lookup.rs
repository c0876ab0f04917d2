use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{verify, Scalar};
use crate::discovery::Directory;
use crate::sphinx::NodeId;
use crate::wire::{blinding_notice_signed_bytes, lookup_response_signed_bytes, Nonce};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LookupRejection {
    WrongNonce,
    UnknownSigner,
    BadSignature,
    Duplicate,
    AlreadyComplete,
}

impl LookupRejection {
    pub fn as_str(self) -> &'static str {
        match self {
            LookupRejection::WrongNonce => "wrong_nonce",
            LookupRejection::UnknownSigner => "unknown_signer",
            LookupRejection::BadSignature => "bad_signature",
            LookupRejection::Duplicate => "duplicate",
            LookupRejection::AlreadyComplete => "already_complete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LookupOutcome {
    Pending,
    Complete { surb: Vec<u8>, bpk: [u8; 32] },
    Rejected(LookupRejection),
}

/// Responses to one lookup. Completes on f+1 byte-identical `(surb, bpk)`
/// pairs, counting at most one response per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupSession {
    pub target: String,
    pub nonce: Nonce,
    responses: BTreeMap<NodeId, (Vec<u8>, [u8; 32])>,
    result: Option<(Vec<u8>, [u8; 32])>,
}

impl LookupSession {
    pub fn new(target: &str, nonce: Nonce) -> Self {
        LookupSession { target: target.to_string(), nonce, responses: BTreeMap::new(), result: None }
    }

    pub fn result(&self) -> Option<&(Vec<u8>, [u8; 32])> {
        self.result.as_ref()
    }

    pub fn responders(&self) -> usize {
        self.responses.len()
    }

    pub fn on_response(
        &mut self,
        directory: &Directory,
        node: NodeId,
        nonce: &Nonce,
        surb: &[u8],
        bpk: &[u8; 32],
        sig: &[u8],
    ) -> LookupOutcome {
        if *nonce != self.nonce {
            return LookupOutcome::Rejected(LookupRejection::WrongNonce);
        }
        let Some(entry) = directory.get(node) else {
            return LookupOutcome::Rejected(LookupRejection::UnknownSigner);
        };
        if !verify(&entry.signing_pk, &lookup_response_signed_bytes(nonce, surb, bpk), sig) {
            return LookupOutcome::Rejected(LookupRejection::BadSignature);
        }
        if self.result.is_some() {
            return LookupOutcome::Rejected(LookupRejection::AlreadyComplete);
        }
        if self.responses.contains_key(&node) {
            return LookupOutcome::Rejected(LookupRejection::Duplicate);
        }
        let value = (surb.to_vec(), *bpk);
        self.responses.insert(node, value.clone());
        let agreeing = self.responses.values().filter(|v| **v == value).count();
        if agreeing >= directory.lookup_quorum() {
            self.result = Some(value.clone());
            return LookupOutcome::Complete { surb: value.0, bpk: value.1 };
        }
        LookupOutcome::Pending
    }
}

/// Blinding keys handed to this user by discovery nodes, accepted once f+1
/// nodes sent the same value for a nonce.
#[derive(Debug, Clone, Default)]
pub struct OwnerBlindingState {
    votes: BTreeMap<Nonce, BTreeMap<[u8; 32], BTreeSet<NodeId>>>,
    voters: BTreeMap<Nonce, BTreeSet<NodeId>>,
    keys: BTreeMap<Nonce, Scalar>,
}

impl OwnerBlindingState {
    pub fn get(&self, nonce: &Nonce) -> Option<&Scalar> {
        self.keys.get(nonce)
    }

    /// Returns the key if this notice completed the quorum.
    pub fn on_notice(&mut self, directory: &Directory, node: NodeId, nonce: &Nonce, y: &[u8; 32], sig: &[u8]) -> Option<Scalar> {
        let entry = directory.get(node)?;
        if !verify(&entry.signing_pk, &blinding_notice_signed_bytes(nonce, y), sig) {
            return None;
        }
        if self.keys.contains_key(nonce) || !self.voters.entry(*nonce).or_default().insert(node) {
            return None;
        }
        let count = {
            let set = self.votes.entry(*nonce).or_default().entry(*y).or_default();
            set.insert(node);
            set.len()
        };
        if count < directory.lookup_quorum() {
            return None;
        }
        let scalar = Scalar::from_bytes(y).ok().filter(|s| !s.is_zero())?;
        self.keys.insert(*nonce, scalar);
        self.votes.remove(nonce);
        Some(scalar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{sign, GroupElement, KeyPair};
    use crate::discovery::NodeEntry;
    use crate::sphinx::{ContactInfo, InboxId};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn directory(n: usize, seed: u64) -> (Directory, Vec<KeyPair>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let keys: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate(&mut rng)).collect();
        let nodes = keys
            .iter()
            .enumerate()
            .map(|(i, k)| NodeEntry {
                id: NodeId(100 + i as u32),
                signing_pk: k.pk,
                contact: ContactInfo { pk: k.pk, provider: NodeId(1), inbox: InboxId([i as u8; 16]) },
                email: format!("n{i}@x"),
            })
            .collect();
        (Directory { nodes, f: (n - 1) / 3 }, keys)
    }

    type Resp = (NodeId, Nonce, Vec<u8>, [u8; 32], [u8; 64]);

    fn resp(keys: &[KeyPair], i: usize, nonce: Nonce, surb: &[u8], bpk: [u8; 32]) -> Resp {
        let sig = sign(&keys[i].sk, &lookup_response_signed_bytes(&nonce, surb, &bpk)).unwrap().0;
        (NodeId(100 + i as u32), nonce, surb.to_vec(), bpk, sig)
    }

    fn feed(s: &mut LookupSession, d: &Directory, r: &Resp) -> LookupOutcome {
        s.on_response(d, r.0, &r.1, &r.2, &r.3, &r.4)
    }

    #[test]
    fn two_honest_complete() {
        let (d, k) = directory(4, 1);
        let mut s = LookupSession::new("b", [1; 16]);
        assert_eq!(feed(&mut s, &d, &resp(&k, 0, [1; 16], b"s", [2; 32])), LookupOutcome::Pending);
        let out = feed(&mut s, &d, &resp(&k, 1, [1; 16], b"s", [2; 32]));
        assert_eq!(out, LookupOutcome::Complete { surb: b"s".to_vec(), bpk: [2; 32] });
        assert_eq!(
            feed(&mut s, &d, &resp(&k, 2, [1; 16], b"s", [2; 32])),
            LookupOutcome::Rejected(LookupRejection::AlreadyComplete)
        );
    }

    #[test]
    fn rejections() {
        let (d, k) = directory(4, 2);
        let mut s = LookupSession::new("b", [1; 16]);
        let r = resp(&k, 0, [1; 16], b"s", [2; 32]);
        assert_eq!(feed(&mut s, &d, &resp(&k, 0, [9; 16], b"s", [2; 32])), LookupOutcome::Rejected(LookupRejection::WrongNonce));
        let mut forged = r.clone();
        forged.3[0] ^= 1;
        assert_eq!(feed(&mut s, &d, &forged), LookupOutcome::Rejected(LookupRejection::BadSignature));
        let mut stranger = r.clone();
        stranger.0 = NodeId(7);
        assert_eq!(feed(&mut s, &d, &stranger), LookupOutcome::Rejected(LookupRejection::UnknownSigner));
        // signed by node 1 but claiming to be node 0
        let mut spoof = resp(&k, 1, [1; 16], b"s", [2; 32]);
        spoof.0 = NodeId(100);
        assert_eq!(feed(&mut s, &d, &spoof), LookupOutcome::Rejected(LookupRejection::BadSignature));
        assert_eq!(feed(&mut s, &d, &r), LookupOutcome::Pending);
        assert_eq!(feed(&mut s, &d, &r), LookupOutcome::Rejected(LookupRejection::Duplicate));
        let other = resp(&k, 0, [1; 16], b"t", [3; 32]);
        assert_eq!(feed(&mut s, &d, &other), LookupOutcome::Rejected(LookupRejection::Duplicate));
    }

    /// Every interleaving of honest responses with f Byzantine nodes that each
    /// send up to two arbitrary values.
    fn never_adversarial(n: usize, schedule: &[Resp], honest: &(Vec<u8>, [u8; 32]), d: &Directory) -> bool {
        let mut s = LookupSession::new("b", [1; 16]);
        for r in schedule {
            if let LookupOutcome::Complete { surb, bpk } = feed(&mut s, d, r) {
                return (surb, bpk) == *honest;
            }
        }
        let _ = n;
        true
    }

    fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let x = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x.clone());
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn quorum_soundness_exhaustive_n4() {
        let (d, k) = directory(4, 3);
        let honest = (b"honest".to_vec(), [1u8; 32]);
        let adv_values = [(b"evil-1".to_vec(), [2u8; 32]), (b"honest".to_vec(), [3u8; 32]), (b"evil-2".to_vec(), [1u8; 32])];
        let mut checked = 0;
        for byz in 0..4 {
            for a in &adv_values {
                for b in &adv_values {
                    let mut msgs: Vec<Resp> = (0..4).filter(|&i| i != byz).map(|i| resp(&k, i, [1; 16], &honest.0, honest.1)).collect();
                    msgs.push(resp(&k, byz, [1; 16], &a.0, a.1));
                    msgs.push(resp(&k, byz, [1; 16], &b.0, b.1));
                    for p in permutations(&msgs) {
                        assert!(never_adversarial(4, &p, &honest, &d));
                        checked += 1;
                    }
                }
            }
        }
        assert_eq!(checked, 4 * 9 * 120);
    }

    #[test]
    fn quorum_soundness_randomized_n7() {
        let (d, k) = directory(7, 4);
        let honest = (b"honest".to_vec(), [1u8; 32]);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let mut ids: Vec<usize> = (0..7).collect();
            ids.shuffle(&mut rng);
            let (byz, good) = ids.split_at(2);
            let mut msgs: Vec<Resp> = good.iter().map(|&i| resp(&k, i, [1; 16], &honest.0, honest.1)).collect();
            // both Byzantine nodes collude on one value and send it repeatedly
            let evil = (vec![rng.gen::<u8>(); 6], [rng.gen::<u8>(); 32]);
            for &b in byz {
                for _ in 0..rng.gen_range(1..4) {
                    msgs.push(resp(&k, b, [1; 16], &evil.0, evil.1));
                }
            }
            msgs.shuffle(&mut rng);
            assert!(never_adversarial(7, &msgs, &honest, &d));
        }
    }

    #[test]
    fn blinding_state_threshold() {
        let (d, k) = directory(4, 6);
        let mut st = OwnerBlindingState::default();
        let y = Scalar::from_u64(77).to_bytes();
        let other = Scalar::from_u64(78).to_bytes();
        let n = [5u8; 16];
        let note = |i: usize, y: &[u8; 32]| sign(&k[i].sk, &blinding_notice_signed_bytes(&n, y)).unwrap().0;
        assert!(st.on_notice(&d, NodeId(100), &n, &y, &note(0, &y)).is_none());
        // repeat from the same node is not a second copy
        assert!(st.on_notice(&d, NodeId(100), &n, &y, &note(0, &y)).is_none());
        // a mismatched value is never co-counted
        assert!(st.on_notice(&d, NodeId(101), &n, &other, &note(1, &other)).is_none());
        // bad signature ignored
        assert!(st.on_notice(&d, NodeId(102), &n, &y, &note(3, &y)).is_none());
        assert_eq!(st.on_notice(&d, NodeId(102), &n, &y, &note(2, &y)), Some(Scalar::from_u64(77)));
        assert_eq!(st.get(&n), Some(&Scalar::from_u64(77)));
        let _ = GroupElement::generator();
    }

    proptest! {
        #[test]
        fn completes_only_with_quorum_value(order in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(), byz in 0..4usize) {
            let (d, k) = directory(4, 7);
            let mut s = LookupSession::new("b", [1; 16]);
            for i in order {
                let r = if i == byz { resp(&k, i, [1; 16], b"bad", [0; 32]) } else { resp(&k, i, [1; 16], b"ok", [1; 32]) };
                if let LookupOutcome::Complete { surb, .. } = feed(&mut s, &d, &r) {
                    prop_assert_eq!(surb, b"ok".to_vec());
                }
            }
            prop_assert!(s.result().is_some());
        }
    }
}
