//! Splitting application messages across packet bodies.
//!
//! Frame: `msg_id u64 BE || seq u8 || total u8 || data`.

use std::collections::{BTreeMap, HashMap};

use super::MAX_PAYLOAD;

pub const FRAGMENT_HEADER_LEN: usize = 10;
pub const MAX_FRAGMENT_DATA: usize = MAX_PAYLOAD - FRAGMENT_HEADER_LEN;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FragmentError {
    #[error("message of {0} bytes needs more than 255 fragments")]
    TooLarge(usize),
    #[error("fragment shorter than its header")]
    Truncated,
    #[error("fragment index {seq} out of range for total {total}")]
    BadIndex { seq: u8, total: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub msg_id: u64,
    pub seq: u8,
    pub total: u8,
    pub data: Vec<u8>,
}

impl Fragment {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAGMENT_HEADER_LEN + self.data.len());
        out.extend_from_slice(&self.msg_id.to_be_bytes());
        out.push(self.seq);
        out.push(self.total);
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, FragmentError> {
        if b.len() < FRAGMENT_HEADER_LEN {
            return Err(FragmentError::Truncated);
        }
        let (seq, total) = (b[8], b[9]);
        if total == 0 || seq >= total {
            return Err(FragmentError::BadIndex { seq, total });
        }
        Ok(Fragment {
            msg_id: u64::from_be_bytes(b[..8].try_into().unwrap()),
            seq,
            total,
            data: b[FRAGMENT_HEADER_LEN..].to_vec(),
        })
    }
}

/// Encoded fragments of `data`, each at most [`MAX_PAYLOAD`] bytes. An empty
/// message still yields one fragment.
pub fn fragment(msg_id: u64, data: &[u8]) -> Result<Vec<Vec<u8>>, FragmentError> {
    let total = data.len().div_ceil(MAX_FRAGMENT_DATA).max(1);
    if total > u8::MAX as usize {
        return Err(FragmentError::TooLarge(data.len()));
    }
    let chunks: Vec<&[u8]> = if data.is_empty() { vec![&[]] } else { data.chunks(MAX_FRAGMENT_DATA).collect() };
    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(i, c)| Fragment { msg_id, seq: i as u8, total: total as u8, data: c.to_vec() }.encode())
        .collect())
}

#[derive(Debug, Default, Clone)]
pub struct Reassembler {
    partial: HashMap<u64, (u8, BTreeMap<u8, Vec<u8>>)>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the full message once its last missing fragment arrives.
    /// Fragments that disagree on `total` with earlier ones are ignored.
    pub fn push(&mut self, frag: Fragment) -> Option<Vec<u8>> {
        if frag.total == 1 {
            return Some(frag.data);
        }
        let entry = self.partial.entry(frag.msg_id).or_insert_with(|| (frag.total, BTreeMap::new()));
        if entry.0 != frag.total {
            return None;
        }
        entry.1.entry(frag.seq).or_insert(frag.data);
        if entry.1.len() < frag.total as usize {
            return None;
        }
        let (_, parts) = self.partial.remove(&frag.msg_id)?;
        Some(parts.into_values().flatten().collect())
    }

    pub fn pending(&self) -> usize {
        self.partial.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_message_is_one_fragment() {
        let f = fragment(7, b"abc").unwrap();
        assert_eq!(f.len(), 1);
        let d = Fragment::decode(&f[0]).unwrap();
        assert_eq!((d.msg_id, d.seq, d.total, d.data.as_slice()), (7, 0, 1, &b"abc"[..]));
    }

    #[test]
    fn rejects_bad_frames() {
        assert_eq!(Fragment::decode(&[0; 5]), Err(FragmentError::Truncated));
        let mut b = Fragment { msg_id: 1, seq: 2, total: 2, data: vec![] }.encode();
        assert!(Fragment::decode(&b).is_err());
        b[9] = 0;
        assert!(Fragment::decode(&b).is_err());
        assert!(fragment(1, &vec![0; MAX_FRAGMENT_DATA * 256]).is_err());
    }

    proptest! {
        #[test]
        fn reassembles_in_any_order(len in 0usize..6000, id in any::<u64>(), rot in 0usize..4) {
            let data: Vec<u8> = (0..len).map(|i| i as u8).collect();
            let mut frags = fragment(id, &data).unwrap();
            prop_assert!(frags.iter().all(|f| f.len() <= MAX_PAYLOAD));
            let k = rot % frags.len();
            frags.rotate_left(k);
            let mut r = Reassembler::new();
            let mut out = None;
            for f in frags {
                if let Some(m) = r.push(Fragment::decode(&f).unwrap()) {
                    out = Some(m);
                }
            }
            prop_assert_eq!(out, Some(data));
            prop_assert_eq!(r.pending(), 0);
        }
    }
}
