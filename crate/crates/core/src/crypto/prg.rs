use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20;
use rand::{CryptoRng, RngCore};

use super::Seed;

/// Deterministic byte stream: the ChaCha20 keystream under `seed` with a zero
/// nonce. Consecutive reads continue the stream.
pub struct DetPrg {
    cipher: ChaCha20,
}

impl DetPrg {
    pub fn new(seed: &Seed) -> Self {
        DetPrg {
            cipher: ChaCha20::new(seed.as_bytes().into(), &[0u8; 12].into()),
        }
    }

    pub fn next_bytes(&mut self, n: usize) -> Vec<u8> {
        let mut out = vec![0u8; n];
        self.cipher.apply_keystream(&mut out);
        out
    }

    /// XORs the next `buf.len()` keystream bytes into `buf`.
    pub fn xor_into(&mut self, buf: &mut [u8]) {
        self.cipher.apply_keystream(buf);
    }
}

impl std::fmt::Debug for DetPrg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("DetPrg(..)")
    }
}

impl RngCore for DetPrg {
    fn next_u32(&mut self) -> u32 {
        let mut b = [0u8; 4];
        self.fill_bytes(&mut b);
        u32::from_le_bytes(b)
    }

    fn next_u64(&mut self) -> u64 {
        let mut b = [0u8; 8];
        self.fill_bytes(&mut b);
        u64::from_le_bytes(b)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        dest.fill(0);
        self.cipher.apply_keystream(dest);
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

impl CryptoRng for DetPrg {}
