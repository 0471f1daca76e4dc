//! In-memory write buffer. Ordered map from key to its newest version;
//! flushed to an L0 SST once the byte accumulator crosses the threshold.

use std::collections::BTreeMap;
use std::ops::Bound;

use super::record::{Record, RecordKind};

#[derive(Debug, Clone)]
pub struct MemEntry {
    pub seqno: u64,
    pub kind: RecordKind,
    pub value: Vec<u8>,
}

#[derive(Debug, Default)]
pub struct Memtable {
    map: BTreeMap<Vec<u8>, MemEntry>,
    bytes: usize,
}

impl Memtable {
    pub fn new() -> Memtable {
        Memtable::default()
    }

    pub fn insert(&mut self, key: Vec<u8>, seqno: u64, kind: RecordKind, value: Vec<u8>) {
        let key_len = key.len();
        let added = key_len + value.len() + 16;
        if let Some(old) = self.map.insert(
            key,
            MemEntry {
                seqno,
                kind,
                value,
            },
        ) {
            self.bytes = self.bytes.saturating_sub(key_len + old.value.len() + 16);
        }
        self.bytes += added;
    }

    pub fn get(&self, key: &[u8]) -> Option<&MemEntry> {
        self.map.get(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn bytes(&self) -> usize {
        self.bytes
    }

    /// Ascending-key iterator over records at or after `start`.
    pub fn range_from<'a>(&'a self, start: &[u8]) -> impl Iterator<Item = Record> + 'a {
        self.map
            .range((Bound::Included(start.to_vec()), Bound::Unbounded))
            .map(|(k, e)| Record {
                key: k.clone(),
                seqno: e.seqno,
                kind: e.kind,
                value: e.value.clone(),
            })
    }

    /// Drain into an ascending-key record sequence for flushing.
    pub fn to_records(&self) -> Vec<Record> {
        self.range_from(&[]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascending_iteration_and_latest_version() {
        let mut m = Memtable::new();
        m.insert(b"b".to_vec(), 1, RecordKind::Put, b"1".to_vec());
        m.insert(b"a".to_vec(), 2, RecordKind::Put, b"2".to_vec());
        m.insert(b"b".to_vec(), 3, RecordKind::Put, b"3".to_vec());
        let recs = m.to_records();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].key, b"a");
        assert_eq!(recs[1].key, b"b");
        assert_eq!(recs[1].seqno, 3);
        assert_eq!(recs[1].value, b"3");
    }

    #[test]
    fn byte_accumulator_grows_with_inserts() {
        let mut m = Memtable::new();
        assert_eq!(m.bytes(), 0);
        m.insert(b"key".to_vec(), 1, RecordKind::Put, vec![0u8; 100]);
        let one = m.bytes();
        assert!(one >= 103);
        m.insert(b"key2".to_vec(), 2, RecordKind::Put, vec![0u8; 100]);
        assert!(m.bytes() > one);
    }
}
