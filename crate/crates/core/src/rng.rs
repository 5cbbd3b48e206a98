//! Reproducible random streams.
//!
//! A 64-bit master seed expands into independent streams by hashing, never by
//! sequential draws: the generator for `(master, stream, index)` is a
//! `Pcg64Mcg` whose 128-bit state is two SplitMix64 outputs of a key built
//! from the three integers. Campaigns index streams by chunk number, and chunk
//! boundaries are fixed by the replication count alone, so the draws seen by a
//! replication do not depend on how many workers execute the campaign.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

/// The generator used by every simulation routine.
pub type SimRng = Pcg64Mcg;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn stream labels into integers.
fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Provenance of a random stream: the user's master seed plus the stream key
/// derived from labels along the call path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub stream: u64,
}

impl SeedRecord {
    pub fn new(master: u64) -> Self {
        SeedRecord { master, stream: 0 }
    }

    /// Child stream key for a named sub-computation.
    pub fn derive(&self, label: &str) -> SeedRecord {
        let mut s = self.stream ^ fnv1a(label).rotate_left(17);
        SeedRecord {
            master: self.master,
            stream: splitmix64(&mut s),
        }
    }

    /// Child stream key for an integer-indexed sub-computation.
    pub fn derive_index(&self, index: u64) -> SeedRecord {
        let mut s = self.stream ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        SeedRecord {
            master: self.master,
            stream: splitmix64(&mut s),
        }
    }

    /// Generator for counter value `index` of this stream.
    pub fn rng(&self, index: u64) -> SimRng {
        let mut s = self.master;
        let a = splitmix64(&mut s);
        let mut s = a ^ self.stream;
        let b = splitmix64(&mut s);
        let mut s = b ^ index.wrapping_mul(0xA24B_AED4_963E_E407);
        let hi = splitmix64(&mut s);
        let lo = splitmix64(&mut s);
        let mut seed = [0u8; 16];
        seed[..8].copy_from_slice(&hi.to_le_bytes());
        seed[8..].copy_from_slice(&lo.to_le_bytes());
        SimRng::from_seed(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    #[test]
    fn same_key_same_stream() {
        let s = SeedRecord::new(42).derive("ladder");
        let a: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(s.rng(7), |r, _| Some(r.random()))
            .collect();
        let b: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(s.rng(7), |r, _| Some(r.random()))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_and_indices_separate_streams() {
        let root = SeedRecord::new(42);
        let x: u64 = root.derive("a").rng(0).random();
        let y: u64 = root.derive("b").rng(0).random();
        let z: u64 = root.derive("a").rng(1).random();
        let w: u64 = SeedRecord::new(43).derive("a").rng(0).random();
        assert!(x != y && x != z && x != w);
        assert_ne!(root.derive_index(1), root.derive_index(2));
    }
}
