//! Cryptographic primitives: group arithmetic, key-blinded Schnorr signatures,
//! a labelled KDF, MAC, deterministic AEAD and a seedable PRG.

mod blind;
mod group;
mod prg;
mod symmetric;

pub use blind::{
    blind_public_key, sign, sign_blinded, verify, verify_blinded, BlindSignature, BlindedPublicKey,
    SIGNATURE_LEN,
};
pub use group::{
    fake_public_key, GroupElement, KeyPair, Scalar, ELEMENT_LEN, FAKE_IDENTITY_INPUT, SCALAR_LEN,
};
pub use prg::DetPrg;
pub use symmetric::{
    aead_open, aead_seal, kdf, kdf_with, mac, mac_verify, KdfLabel, MacTag, Seed, AEAD_OVERHEAD,
    MAC_LEN, SEED_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("malformed encoding")]
    Malformed,
    #[error("scalar encoding is not canonical")]
    NonCanonicalScalar,
    #[error("bytes do not encode a group element")]
    InvalidElement,
    #[error("identity element is not a valid key")]
    IdentityElement,
    #[error("zero scalar rejected as key or blinding factor")]
    ZeroScalar,
    #[error("unknown kdf context label {0:?}")]
    UnknownLabel(String),
    #[error("authenticated decryption failed")]
    Decrypt,
}
