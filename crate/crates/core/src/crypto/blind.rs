//! Key-blinded Schnorr signatures.
//!
//! The signer uses the effective secret `x*y mod p`; verification uses
//! `(g^x)^y`. With `y = 1` this is an ordinary Schnorr signature, which is
//! what discovery nodes use for their response signatures.

use std::fmt;

use curve25519_dalek::ristretto::RistrettoPoint;


use super::group::{GroupElement, Scalar, ELEMENT_LEN, SCALAR_LEN};
use super::CryptoError;

pub const SIGNATURE_LEN: usize = ELEMENT_LEN + SCALAR_LEN;

const NONCE_DOMAIN: &[u8] = b"pudding schnorr nonce";
const CHALLENGE_DOMAIN: &[u8] = b"pudding schnorr challenge";

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlindedPublicKey(pub GroupElement);

impl BlindedPublicKey {
    pub fn to_bytes(&self) -> [u8; ELEMENT_LEN] {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        GroupElement::from_bytes_non_identity(bytes).map(BlindedPublicKey)
    }
}

impl fmt::Debug for BlindedPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlindedPublicKey({})", hex::encode(&self.0.as_bytes()[..6]))
    }
}

/// `R || s`, 64 bytes.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct BlindSignature(pub [u8; SIGNATURE_LEN]);

impl BlindSignature {
    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(BlindSignature)
            .map_err(|_| CryptoError::Malformed)
    }
}

impl fmt::Debug for BlindSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlindSignature({})", hex::encode(&self.0[..6]))
    }
}

pub fn blind_public_key(pk: &GroupElement, y: &Scalar) -> Result<BlindedPublicKey, CryptoError> {
    y.nonzero()?;
    if pk.is_identity() {
        return Err(CryptoError::IdentityElement);
    }
    Ok(BlindedPublicKey(pk.mul(y)))
}

fn challenge(r: &[u8], p: &[u8], msg: &[u8]) -> Scalar {
    Scalar::hash_from(&[CHALLENGE_DOMAIN, r, p, msg])
}

pub fn sign_blinded(sk: &Scalar, blind: &Scalar, msg: &[u8]) -> Result<BlindSignature, CryptoError> {
    let e = sk.nonzero()? * blind.nonzero()?;
    let p = GroupElement::base_mul(&e);
    let r = Scalar::hash_from(&[NONCE_DOMAIN, &e.to_bytes(), msg]);
    let big_r = GroupElement::base_mul(&r);
    let c = challenge(big_r.as_bytes(), p.as_bytes(), msg);
    let s = r + c * e;
    let mut out = [0u8; SIGNATURE_LEN];
    out[..ELEMENT_LEN].copy_from_slice(big_r.as_bytes());
    out[ELEMENT_LEN..].copy_from_slice(&s.to_bytes());
    Ok(BlindSignature(out))
}

/// Returns false on any malformed input instead of erroring.
pub fn verify_blinded(bpk: &BlindedPublicKey, msg: &[u8], sig: &[u8]) -> bool {
    if sig.len() != SIGNATURE_LEN || bpk.0.is_identity() {
        return false;
    }
    let Ok(big_r) = GroupElement::from_bytes(&sig[..ELEMENT_LEN]) else {
        return false;
    };
    let Ok(s) = Scalar::from_bytes(&sig[ELEMENT_LEN..]) else {
        return false;
    };
    let c = challenge(&sig[..ELEMENT_LEN], bpk.0.as_bytes(), msg);
    // s*G - c*P == R
    let neg_c = -c.0;
    let lhs = RistrettoPoint::vartime_double_scalar_mul_basepoint(&neg_c, bpk.0.point(), &s.0);
    lhs == *big_r.point()
}

/// Plain signature under a long-term key.
pub fn sign(sk: &Scalar, msg: &[u8]) -> Result<BlindSignature, CryptoError> {
    sign_blinded(sk, &Scalar::ONE, msg)
}

pub fn verify(pk: &GroupElement, msg: &[u8], sig: &[u8]) -> bool {
    verify_blinded(&BlindedPublicKey(*pk), msg, sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(s: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(s)
    }

    #[test]
    fn blinding_by_one_is_identity() {
        let kp = KeyPair::generate(&mut rng(1));
        assert_eq!(blind_public_key(&kp.pk, &Scalar::ONE).unwrap().0, kp.pk);
    }

    #[test]
    fn zero_blind_and_identity_key_rejected() {
        let kp = KeyPair::generate(&mut rng(2));
        assert_eq!(
            blind_public_key(&kp.pk, &Scalar::ZERO).unwrap_err(),
            CryptoError::ZeroScalar
        );
        assert_eq!(
            blind_public_key(&GroupElement::identity(), &Scalar::ONE).unwrap_err(),
            CryptoError::IdentityElement
        );
        assert!(sign_blinded(&Scalar::ZERO, &Scalar::ONE, b"m").is_err());
        assert!(sign_blinded(&kp.sk, &Scalar::ZERO, b"m").is_err());
    }

    #[test]
    fn blinding_homomorphism_against_scalar_oracle() {
        let mut r = rng(3);
        for _ in 0..1000 {
            let x = Scalar::random_nonzero(&mut r);
            let y = Scalar::random_nonzero(&mut r);
            let lhs = blind_public_key(&GroupElement::base_mul(&x), &y).unwrap();
            assert_eq!(lhs.0, GroupElement::base_mul(&(x * y)));
        }
    }

    #[test]
    fn round_trip_and_plain_signature() {
        let mut r = rng(4);
        let kp = KeyPair::generate(&mut r);
        let y = Scalar::random_nonzero(&mut r);
        let bpk = blind_public_key(&kp.pk, &y).unwrap();
        let sig = sign_blinded(&kp.sk, &y, b"hello").unwrap();
        assert!(verify_blinded(&bpk, b"hello", &sig.0));
        let plain = sign_blinded(&kp.sk, &Scalar::ONE, b"hello").unwrap();
        assert!(verify(&kp.pk, b"hello", &plain.0));
        assert!(!verify(&kp.pk, b"hello", &sig.0));
    }

    #[test]
    fn single_bit_flip_sweep() {
        let mut r = rng(5);
        let kp = KeyPair::generate(&mut r);
        let y = Scalar::random_nonzero(&mut r);
        let bpk = blind_public_key(&kp.pk, &y).unwrap();
        let msg = b"short message".to_vec();
        let sig = sign_blinded(&kp.sk, &y, &msg).unwrap();
        for i in 0..msg.len() * 8 {
            let mut m = msg.clone();
            m[i / 8] ^= 1 << (i % 8);
            assert!(!verify_blinded(&bpk, &m, &sig.0));
        }
        for i in 0..SIGNATURE_LEN * 8 {
            let mut s = sig.0;
            s[i / 8] ^= 1 << (i % 8);
            assert!(!verify_blinded(&bpk, &msg, &s));
        }
    }

    #[test]
    fn malformed_signatures_are_false() {
        let kp = KeyPair::generate(&mut rng(6));
        let sig = sign(&kp.sk, b"m").unwrap();
        assert!(!verify(&kp.pk, b"m", &sig.0[..63]));
        assert!(!verify(&kp.pk, b"m", &[]));
        assert!(!verify(&kp.pk, b"m", &[0xff; 64]));
        assert!(!verify(&GroupElement::identity(), b"m", &sig.0));
    }

    #[test]
    fn wrong_blind_never_verifies() {
        let mut r = rng(7);
        let kp = KeyPair::generate(&mut r);
        for i in 0..10_000u32 {
            let y1 = Scalar::random_nonzero(&mut r);
            let y2 = Scalar::random_nonzero(&mut r);
            let msg = i.to_be_bytes();
            let sig = sign_blinded(&kp.sk, &y1, &msg).unwrap();
            let bpk2 = blind_public_key(&kp.pk, &y2).unwrap();
            assert!(!verify_blinded(&bpk2, &msg, &sig.0));
        }
    }

    fn hamming(a: &[u8], b: &[u8]) -> u32 {
        a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
    }

    // Pairwise Hamming distances among signatures/bpks from one long-term key
    // (fresh blinds) look like those from independent keys.
    #[test]
    fn one_key_vs_many_keys_hamming_profile() {
        let mut r = rng(8);
        let one = KeyPair::generate(&mut r);
        let n = 400;
        let msg = b"same message";
        let mut same = Vec::new();
        let mut many = Vec::new();
        for _ in 0..n {
            let y = Scalar::random_nonzero(&mut r);
            let mut v = sign_blinded(&one.sk, &y, msg).unwrap().0.to_vec();
            v.extend(blind_public_key(&one.pk, &y).unwrap().to_bytes());
            same.push(v);
            let kp = KeyPair::generate(&mut r);
            let y = Scalar::random_nonzero(&mut r);
            let mut w = sign_blinded(&kp.sk, &y, msg).unwrap().0.to_vec();
            w.extend(blind_public_key(&kp.pk, &y).unwrap().to_bytes());
            many.push(w);
        }
        let mean = |set: &[Vec<u8>]| {
            let d: Vec<f64> = set
                .windows(2)
                .map(|w| hamming(&w[0], &w[1]) as f64)
                .collect();
            d.iter().sum::<f64>() / d.len() as f64
        };
        let (a, b) = (mean(&same), mean(&many));
        // 768 bits; ~384 expected with std ~13.9 per pair, ~0.7 over 399 pairs.
        assert!((a - b).abs() < 5.0, "{a} vs {b}");
        assert!((a - 384.0).abs() < 8.0 && (b - 384.0).abs() < 8.0);
        assert!(same.iter().all(|v| v.len() == SIGNATURE_LEN + ELEMENT_LEN));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sign_verify_prop(xs in any::<[u8; 64]>(), ys in any::<[u8; 64]>(),
                            msg in proptest::collection::vec(any::<u8>(), 0..200)) {
            let x = Scalar::from_wide_bytes(&xs);
            let y = Scalar::from_wide_bytes(&ys);
            prop_assume!(!x.is_zero() && !y.is_zero());
            let bpk = blind_public_key(&GroupElement::base_mul(&x), &y).unwrap();
            let sig = sign_blinded(&x, &y, &msg).unwrap();
            prop_assert!(verify_blinded(&bpk, &msg, &sig.0));
        }
    }
}
