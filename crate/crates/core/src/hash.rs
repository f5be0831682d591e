//! Seeded 64-bit mixing shared by every hashed structure in the crate.
//!
//! All positions are derived from [`mix64`], a keyed double application of the
//! murmur3 finalizer. Distinct seeds give hash functions that behave
//! independently for the purposes of Bloom filters and CM rows.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// murmur3 64-bit finalizer.
#[inline]
pub fn fmix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}

#[inline]
pub fn mix64(seed: u64, value: u64) -> u64 {
    let s = fmix64(seed ^ GOLDEN);
    fmix64(fmix64(value ^ s).wrapping_add(s.rotate_left(29)))
}

/// Hashes a value of up to 128 bits. Values below 2^64 hash through the low
/// word with a seed-dependent constant for the (zero) high word.
#[inline]
pub fn mix128(seed: u64, value: u128) -> u64 {
    let hi = (value >> 64) as u64;
    let lo = value as u64;
    mix64(seed, lo ^ mix64(seed.wrapping_add(GOLDEN), hi))
}

/// SplitMix64 generator used to expand one master seed into the many seeds a
/// sketch needs.
#[derive(Clone, Debug)]
pub struct SeedSequence {
    state: u64,
}

impl SeedSequence {
    pub fn new(master: u64) -> Self {
        Self { state: master }
    }

    pub fn next_seed(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn take(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.next_seed()).collect()
    }
}
