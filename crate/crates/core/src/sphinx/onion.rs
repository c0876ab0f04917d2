//! Slot-based MAC-chained onion shared by the routing header and the payload
//! tag block.
//!
//! Hop `i` holds `(gamma_i, beta_i)`. It checks `gamma_i = MAC(beta_i || extra_i)`,
//! then XORs `beta_i || 0^slot` with its keystream. The first `slot` bytes are
//! its routing info plus `gamma_{i+1}`; the rest is `beta_{i+1}`.

use crate::crypto::{mac, mac_verify, Seed, MAC_LEN};

pub(crate) struct Peeled {
    pub info: Vec<u8>,
    pub gamma: [u8; MAC_LEN],
    pub beta: Vec<u8>,
}

fn xor_in_place(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

fn tag(key: &Seed, beta: &[u8], extra: &[u8]) -> [u8; MAC_LEN] {
    let mut buf = Vec::with_capacity(beta.len() + extra.len());
    buf.extend_from_slice(beta);
    buf.extend_from_slice(extra);
    mac(key, &buf).0
}

/// Builds `(gamma_0, beta_0)` for `v = streams.len()` hops.
///
/// Every stream must be `beta_len + slot` bytes; every info `slot - MAC_LEN`
/// bytes; `pad` at least `beta_len` bytes.
pub(crate) fn wrap(
    slot: usize,
    beta_len: usize,
    streams: &[Vec<u8>],
    mac_keys: &[Seed],
    infos: &[Vec<u8>],
    extras: &[&[u8]],
    pad: &[u8],
) -> ([u8; MAC_LEN], Vec<u8>) {
    let v = streams.len();
    assert!(v >= 1 && v * slot <= beta_len, "route length out of range");
    debug_assert!(infos.iter().all(|i| i.len() + MAC_LEN == slot));

    let mut filler: Vec<u8> = Vec::with_capacity((v - 1) * slot);
    for (i, stream) in streams.iter().enumerate().take(v - 1) {
        filler.extend(std::iter::repeat(0u8).take(slot));
        xor_in_place(&mut filler, &stream[beta_len - i * slot..beta_len + slot]);
    }

    let head_len = beta_len - (v - 1) * slot;
    let mut beta = Vec::with_capacity(beta_len);
    beta.extend_from_slice(&infos[v - 1]);
    beta.extend_from_slice(&[0u8; MAC_LEN]);
    beta.extend_from_slice(&pad[..head_len - slot]);
    xor_in_place(&mut beta, &streams[v - 1][..head_len]);
    beta.extend_from_slice(&filler);
    let mut gamma = tag(&mac_keys[v - 1], &beta, extras[v - 1]);

    for i in (0..v - 1).rev() {
        let mut next = Vec::with_capacity(beta_len);
        next.extend_from_slice(&infos[i]);
        next.extend_from_slice(&gamma);
        next.extend_from_slice(&beta[..beta_len - slot]);
        xor_in_place(&mut next, &streams[i][..beta_len]);
        beta = next;
        gamma = tag(&mac_keys[i], &beta, extras[i]);
    }
    (gamma, beta)
}

/// Verifies and strips one layer. `None` on MAC failure.
pub(crate) fn peel(
    slot: usize,
    stream: &[u8],
    mac_key: &Seed,
    gamma: &[u8],
    beta: &[u8],
    extra: &[u8],
) -> Option<Peeled> {
    let mut buf = Vec::with_capacity(beta.len() + extra.len());
    buf.extend_from_slice(beta);
    buf.extend_from_slice(extra);
    if !mac_verify(mac_key, &buf, gamma) {
        return None;
    }
    let mut b = Vec::with_capacity(beta.len() + slot);
    b.extend_from_slice(beta);
    b.extend(std::iter::repeat(0u8).take(slot));
    xor_in_place(&mut b, stream);
    let info_len = slot - MAC_LEN;
    let mut g = [0u8; MAC_LEN];
    g.copy_from_slice(&b[info_len..slot]);
    Some(Peeled {
        info: b[..info_len].to_vec(),
        gamma: g,
        beta: b[slot..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{kdf_with, DetPrg, KdfLabel};

    #[test]
    fn wrap_then_peel_every_length() {
        let (slot, cap) = (48usize, 4usize);
        let beta_len = slot * cap;
        for v in 1..=cap {
            let seeds: Vec<Seed> = (0..v)
                .map(|i| kdf_with(&[i as u8], KdfLabel::HeaderStream))
                .collect();
            let streams: Vec<Vec<u8>> = seeds
                .iter()
                .map(|s| DetPrg::new(s).next_bytes(beta_len + slot))
                .collect();
            let keys: Vec<Seed> = seeds.iter().map(|s| kdf_with(&s.0, KdfLabel::HeaderMac)).collect();
            let infos: Vec<Vec<u8>> = (0..v).map(|i| vec![i as u8 + 1; slot - MAC_LEN]).collect();
            let extras: Vec<&[u8]> = vec![b"x"; v];
            let pad = vec![0xAA; beta_len];
            let (mut gamma, mut beta) = wrap(slot, beta_len, &streams, &keys, &infos, &extras, &pad);
            for i in 0..v {
                let p = peel(slot, &streams[i], &keys[i], &gamma, &beta, b"x").expect("mac");
                assert_eq!(p.info, infos[i]);
                assert_eq!(p.beta.len(), beta_len);
                gamma = p.gamma;
                beta = p.beta;
            }
        }
    }
}
