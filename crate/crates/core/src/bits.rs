/// Fixed-length bit array backed by `u64` words, LSB-first within each word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct BitArray {
    words: Vec<u64>,
    len: u64,
}

impl BitArray {
    pub fn new(len: u64) -> Self {
        Self {
            words: vec![0; len.div_ceil(64) as usize],
            len,
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    #[inline]
    pub fn set(&mut self, i: u64) {
        debug_assert!(i < self.len);
        self.words[(i / 64) as usize] |= 1 << (i % 64);
    }

    #[inline]
    pub fn get(&self, i: u64) -> bool {
        debug_assert!(i < self.len);
        self.words[(i / 64) as usize] >> (i % 64) & 1 == 1
    }

    #[cfg(test)]
    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Indices of set bits in `[start, start + len)`, relative to `start`.
    pub fn ones_in(&self, start: u64, len: u64) -> impl Iterator<Item = u64> + '_ {
        let end = start + len;
        let words = (start / 64)..end.div_ceil(64);
        words.flat_map(move |wi| {
            let base = wi * 64;
            let mut w = self.words[wi as usize];
            if base < start {
                w &= !0u64 << (start - base);
            }
            if end - base < 64 {
                w &= (1u64 << (end - base)) - 1;
            }
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as u64;
                w &= w - 1;
                Some(base + tz - start)
            })
        })
    }

    /// True when every bit set in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BitArray) -> bool {
        self.len == other.len
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8) as usize;
        let mut out = Vec::with_capacity(n);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(n);
        out
    }

    pub fn from_bytes(len: u64, bytes: &[u8]) -> Option<Self> {
        if bytes.len() as u64 != len.div_ceil(8) {
            return None;
        }
        let mut bits = Self::new(len);
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            bits.words[i] = u64::from_le_bytes(buf);
        }
        // Stray bits past `len` would make equal filters compare unequal.
        if !len.is_multiple_of(64) {
            let last = bits.words.len() - 1;
            if bits.words[last] >> (len % 64) != 0 {
                return None;
            }
        }
        Some(bits)
    }
}
