//! Per-SST bloom filter. No false negatives for contained keys.

#[derive(Debug, Clone, PartialEq)]
pub struct Bloom {
    nbits: u64,
    nhashes: u32,
    bits: Vec<u8>,
}

fn fnv1a(key: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in key {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Bloom {
    pub fn build<'a>(keys: impl IntoIterator<Item = &'a [u8]>, n_keys: usize, bits_per_key: usize) -> Bloom {
        let nbits = ((n_keys * bits_per_key) as u64).max(64);
        let nhashes = ((bits_per_key as f64 * 0.69) as u32).clamp(1, 30);
        let mut bloom = Bloom {
            nbits,
            nhashes,
            bits: vec![0u8; nbits.div_ceil(8) as usize],
        };
        for key in keys {
            bloom.insert(key);
        }
        bloom
    }

    fn insert(&mut self, key: &[u8]) {
        let h1 = fnv1a(key);
        let h2 = h1.rotate_left(31) | 1;
        for i in 0..self.nhashes as u64 {
            let bit = h1.wrapping_add(i.wrapping_mul(h2)) % self.nbits;
            self.bits[(bit / 8) as usize] |= 1 << (bit % 8);
        }
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        let h1 = fnv1a(key);
        let h2 = h1.rotate_left(31) | 1;
        (0..self.nhashes as u64).all(|i| {
            let bit = h1.wrapping_add(i.wrapping_mul(h2)) % self.nbits;
            self.bits[(bit / 8) as usize] & (1 << (bit % 8)) != 0
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.bits.len());
        out.extend_from_slice(&self.nbits.to_le_bytes());
        out.extend_from_slice(&self.nhashes.to_le_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Bloom> {
        if bytes.len() < 12 {
            return None;
        }
        let nbits = u64::from_le_bytes(bytes[0..8].try_into().ok()?);
        let nhashes = u32::from_le_bytes(bytes[8..12].try_into().ok()?);
        let bits = bytes[12..].to_vec();
        if bits.len() as u64 != nbits.div_ceil(8) {
            return None;
        }
        Some(Bloom {
            nbits,
            nhashes,
            bits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn no_false_negatives_exhaustive() {
        let keys: Vec<Vec<u8>> = (0..5000u32).map(|i| format!("key{i}").into_bytes()).collect();
        let bloom = Bloom::build(keys.iter().map(|k| k.as_slice()), keys.len(), 10);
        for k in &keys {
            assert!(bloom.contains(k));
        }
    }

    #[test]
    fn false_positive_rate_reasonable() {
        let keys: Vec<Vec<u8>> = (0..10_000u32).map(|i| format!("in{i}").into_bytes()).collect();
        let bloom = Bloom::build(keys.iter().map(|k| k.as_slice()), keys.len(), 10);
        let fp = (0..10_000u32)
            .filter(|i| bloom.contains(format!("out{i}").as_bytes()))
            .count();
        // 10 bits/key targets ~1%; allow generous slack
        assert!(fp < 500, "false positive count {fp}");
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_membership(keys in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 1..20), 1..200)) {
            let bloom = Bloom::build(keys.iter().map(|k| k.as_slice()), keys.len(), 10);
            let decoded = Bloom::decode(&bloom.encode()).unwrap();
            for k in &keys {
                prop_assert!(decoded.contains(k));
            }
        }
    }
}
