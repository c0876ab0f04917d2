//! Prime-order group arithmetic over ristretto255.

use std::fmt;
use std::sync::OnceLock;

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as RawScalar;
use curve25519_dalek::traits::Identity;
use rand::{CryptoRng, RngCore};
use sha2::Sha512;

use super::CryptoError;

pub const SCALAR_LEN: usize = 32;
pub const ELEMENT_LEN: usize = 32;

/// Hash-to-group input for the public key nobody holds a discrete log for.
pub const FAKE_IDENTITY_INPUT: &[u8] = b"Pudding fake identity";

/// An integer modulo the group order.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Scalar(pub(crate) RawScalar);

impl Scalar {
    pub const ONE: Scalar = Scalar(RawScalar::ONE);
    pub const ZERO: Scalar = Scalar(RawScalar::ZERO);

    pub fn from_u64(v: u64) -> Self {
        Scalar(RawScalar::from(v))
    }

    /// Decodes a canonical little-endian encoding. Values `>= p` are rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SCALAR_LEN] = bytes.try_into().map_err(|_| CryptoError::Malformed)?;
        Option::from(RawScalar::from_canonical_bytes(arr))
            .map(Scalar)
            .ok_or(CryptoError::NonCanonicalScalar)
    }

    /// Reduces 64 uniform bytes modulo the group order.
    pub fn from_wide_bytes(bytes: &[u8; 64]) -> Self {
        Scalar(RawScalar::from_bytes_mod_order_wide(bytes))
    }

    pub fn hash_from(parts: &[&[u8]]) -> Self {
        use sha2::Digest;
        let mut h = Sha512::new();
        for p in parts {
            h.update(p);
        }
        Scalar(RawScalar::from_hash(h))
    }

    /// Samples a uniformly random nonzero scalar.
    pub fn random_nonzero<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let mut wide = [0u8; 64];
            rng.fill_bytes(&mut wide);
            let s = Self::from_wide_bytes(&wide);
            if !s.is_zero() {
                return s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0 == RawScalar::ZERO
    }

    pub fn to_bytes(&self) -> [u8; SCALAR_LEN] {
        self.0.to_bytes()
    }

    pub(crate) fn nonzero(self) -> Result<Self, CryptoError> {
        if self.is_zero() {
            Err(CryptoError::ZeroScalar)
        } else {
            Ok(self)
        }
    }
}

impl std::ops::Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 * rhs.0)
    }
}

impl std::ops::Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // never print secret material
        f.write_str("Scalar(..)")
    }
}

/// A ristretto255 group element, cached together with its canonical encoding.
#[derive(Clone, Copy)]
pub struct GroupElement {
    point: RistrettoPoint,
    bytes: [u8; ELEMENT_LEN],
}

impl GroupElement {
    pub(crate) fn from_point(point: RistrettoPoint) -> Self {
        GroupElement {
            point,
            bytes: point.compress().to_bytes(),
        }
    }

    pub fn generator() -> Self {
        Self::from_point(curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT)
    }

    pub fn identity() -> Self {
        Self::from_point(RistrettoPoint::identity())
    }

    /// `g^s`.
    pub fn base_mul(s: &Scalar) -> Self {
        Self::from_point(&s.0 * RISTRETTO_BASEPOINT_TABLE)
    }

    /// `self^s`.
    pub fn mul(&self, s: &Scalar) -> Self {
        Self::from_point(self.point * s.0)
    }

    pub fn add(&self, other: &GroupElement) -> Self {
        Self::from_point(self.point + other.point)
    }

    pub fn is_identity(&self) -> bool {
        self.point == RistrettoPoint::identity()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; ELEMENT_LEN] = bytes.try_into().map_err(|_| CryptoError::Malformed)?;
        let point = CompressedRistretto(arr)
            .decompress()
            .ok_or(CryptoError::InvalidElement)?;
        Ok(GroupElement { point, bytes: arr })
    }

    /// Rejects the identity, for values used as public keys.
    pub fn from_bytes_non_identity(bytes: &[u8]) -> Result<Self, CryptoError> {
        let e = Self::from_bytes(bytes)?;
        if e.is_identity() {
            return Err(CryptoError::IdentityElement);
        }
        Ok(e)
    }

    pub fn to_bytes(&self) -> [u8; ELEMENT_LEN] {
        self.bytes
    }

    pub fn as_bytes(&self) -> &[u8; ELEMENT_LEN] {
        &self.bytes
    }

    pub(crate) fn point(&self) -> &RistrettoPoint {
        &self.point
    }
}

impl PartialEq for GroupElement {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes
    }
}

impl Eq for GroupElement {}

impl std::hash::Hash for GroupElement {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bytes.hash(state)
    }
}

impl PartialOrd for GroupElement {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroupElement {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bytes.cmp(&other.bytes)
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", hex::encode(&self.bytes[..6]))
    }
}

#[derive(Clone)]
pub struct KeyPair {
    pub sk: Scalar,
    pub pk: GroupElement,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let sk = Scalar::random_nonzero(rng);
        KeyPair {
            sk,
            pk: GroupElement::base_mul(&sk),
        }
    }

    pub fn from_secret(sk: Scalar) -> Result<Self, CryptoError> {
        let sk = sk.nonzero()?;
        Ok(KeyPair {
            sk,
            pk: GroupElement::base_mul(&sk),
        })
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("pk", &self.pk).finish_non_exhaustive()
    }
}

/// Public key of the black-hole contact, derived by hash-to-group from a
/// fixed string so that its discrete log is unknown to everyone.
pub fn fake_public_key() -> GroupElement {
    static FAKE: OnceLock<GroupElement> = OnceLock::new();
    *FAKE.get_or_init(|| {
        GroupElement::from_point(RistrettoPoint::hash_from_bytes::<Sha512>(FAKE_IDENTITY_INPUT))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn fake_key_is_deterministic_and_well_formed() {
        let a = fake_public_key();
        let b = fake_public_key();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(!a.is_identity());
        assert_eq!(GroupElement::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn fake_key_is_not_a_small_multiple_of_the_generator() {
        let fake = fake_public_key();
        let g = GroupElement::generator();
        let mut acc = g;
        for _ in 1..=10_000u32 {
            assert_ne!(acc, fake);
            acc = acc.add(&g);
        }
    }

    #[test]
    fn scalar_decoding_rejects_non_canonical() {
        assert!(Scalar::from_bytes(&[0xff; 32]).is_err());
        assert!(Scalar::from_bytes(&[1; 31]).is_err());
        let s = Scalar::from_u64(7);
        assert_eq!(Scalar::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    #[test]
    fn keypair_rejects_zero_secret() {
        assert_eq!(KeyPair::from_secret(Scalar::ZERO).unwrap_err(), CryptoError::ZeroScalar);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let kp = KeyPair::generate(&mut rng);
        assert_eq!(kp.pk, GroupElement::base_mul(&kp.sk));
    }

    #[test]
    fn element_decoding_rejects_garbage() {
        assert!(GroupElement::from_bytes(&[0xff; 32]).is_err());
        assert_eq!(
            GroupElement::from_bytes_non_identity(&[0u8; 32]).unwrap_err(),
            CryptoError::IdentityElement
        );
    }
}
