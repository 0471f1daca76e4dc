//! Versioned key-value records.

/// Write kind: a live value or a delete marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Put,
    Tombstone,
}

impl RecordKind {
    pub fn to_byte(self) -> u8 {
        match self {
            RecordKind::Put => 0,
            RecordKind::Tombstone => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<RecordKind> {
        match b {
            0 => Some(RecordKind::Put),
            1 => Some(RecordKind::Tombstone),
            _ => None,
        }
    }
}

/// One committed write. `seqno` is the global version: strictly increasing
/// across committed writes, at most one record per (key, seqno).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub key: Vec<u8>,
    pub seqno: u64,
    pub kind: RecordKind,
    pub value: Vec<u8>,
}

impl Record {
    pub fn put(key: impl Into<Vec<u8>>, seqno: u64, value: impl Into<Vec<u8>>) -> Record {
        Record {
            key: key.into(),
            seqno,
            kind: RecordKind::Put,
            value: value.into(),
        }
    }

    pub fn tombstone(key: impl Into<Vec<u8>>, seqno: u64) -> Record {
        Record {
            key: key.into(),
            seqno,
            kind: RecordKind::Tombstone,
            value: Vec::new(),
        }
    }

    pub fn is_tombstone(&self) -> bool {
        self.kind == RecordKind::Tombstone
    }

    /// On-disk footprint: lengths + seqno + kind + payloads.
    pub fn encoded_size(&self) -> usize {
        4 + self.key.len() + 8 + 1 + 4 + self.value.len()
    }
}
