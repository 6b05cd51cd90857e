//! Counter-based random substreams.
//!
//! Each stream is a SplitMix64 sequence whose starting state is a hash of a seed and a
//! coordinate path, so draws for one `(s, i, t)` never depend on the order other cells
//! are visited in.

use rand::{Error as RandError, RngCore};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream tags separating independent uses of one master seed.
pub mod stream {
    pub const FACTORS: u64 = 1;
    pub const ERRORS: u64 = 2;
    pub const OVERLAY: u64 = 3;
    pub const SELECT: u64 = 4;
    pub const MASK: u64 = 5;
    pub const AUXILIARY: u64 = 6;
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct SubstreamRng {
    state: u64,
}

impl SubstreamRng {
    /// Stream keyed by `seed` and an arbitrary coordinate path.
    pub fn new(seed: u64, path: &[u64]) -> Self {
        let mut key = mix64(seed ^ GOLDEN);
        for &p in path {
            key = mix64(key ^ mix64(p.wrapping_add(GOLDEN)));
        }
        SubstreamRng { state: key }
    }
}

impl RngCore for SubstreamRng {
    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), RandError> {
        self.fill_bytes(dest);
        Ok(())
    }
}
