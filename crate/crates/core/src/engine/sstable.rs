//! Sorted String Table files.
//!
//! Layout: a sequence of data blocks (target `block_size` each), a bloom
//! filter block, an index block (first key + offset per data block), a
//! properties block (entry count, key range), and a fixed-size footer.
//! Every block carries a trailing CRC32; a mismatch surfaces as
//! [`Error::Corruption`].

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::block_cache::{BlockCache, BlockKind};
use super::bloom::Bloom;
use super::record::{Record, RecordKind};
use crate::error::{Error, Result};
use crate::tiers::TierSet;

const MAGIC: u64 = 0x7469_6572_6b76_0001;
const FOOTER_LEN: usize = 8 + 4 + 8 + 4 + 8 + 4 + 8;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Cursor<'a> {
        Cursor { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }
}

fn seal_block(payload: &mut Vec<u8>) {
    let crc = crc32fast::hash(payload);
    put_u32(payload, crc);
}

fn check_block(block: &[u8], path: &Path, offset: u64) -> Result<Vec<u8>> {
    if block.len() < 4 {
        return Err(Error::Corruption {
            file: path.to_path_buf(),
            offset,
        });
    }
    let (payload, crc_bytes) = block.split_at(block.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(payload) != stored {
        return Err(Error::Corruption {
            file: path.to_path_buf(),
            offset,
        });
    }
    Ok(payload.to_vec())
}

fn encode_entry(out: &mut Vec<u8>, rec: &Record) {
    put_u32(out, rec.key.len() as u32);
    out.extend_from_slice(&rec.key);
    put_u64(out, rec.seqno);
    out.push(rec.kind.to_byte());
    put_u32(out, rec.value.len() as u32);
    out.extend_from_slice(&rec.value);
}

fn decode_entries(payload: &[u8], path: &Path, offset: u64) -> Result<Vec<Record>> {
    let corrupt = || Error::Corruption {
        file: path.to_path_buf(),
        offset,
    };
    let mut cur = Cursor::new(payload);
    let mut out = Vec::new();
    while cur.remaining() > 0 {
        let klen = cur.u32().ok_or_else(corrupt)? as usize;
        let key = cur.take(klen).ok_or_else(corrupt)?.to_vec();
        let seqno = cur.u64().ok_or_else(corrupt)?;
        let kind = RecordKind::from_byte(cur.u8().ok_or_else(corrupt)?).ok_or_else(corrupt)?;
        let vlen = cur.u32().ok_or_else(corrupt)? as usize;
        let value = cur.take(vlen).ok_or_else(corrupt)?.to_vec();
        out.push(Record {
            key,
            seqno,
            kind,
            value,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct IndexEntry {
    first_key: Vec<u8>,
    offset: u64,
    len: u32,
}

fn decode_index(payload: &[u8], path: &Path, offset: u64) -> Result<Vec<IndexEntry>> {
    let corrupt = || Error::Corruption {
        file: path.to_path_buf(),
        offset,
    };
    let mut cur = Cursor::new(payload);
    let count = cur.u32().ok_or_else(corrupt)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let klen = cur.u32().ok_or_else(corrupt)? as usize;
        let first_key = cur.take(klen).ok_or_else(corrupt)?.to_vec();
        let off = cur.u64().ok_or_else(corrupt)?;
        let len = cur.u32().ok_or_else(corrupt)?;
        out.push(IndexEntry {
            first_key,
            offset: off,
            len,
        });
    }
    Ok(out)
}

/// Builds an SST in memory from records added in ascending key order.
pub struct SstBuilder {
    block_size: usize,
    bits_per_key: usize,
    out: Vec<u8>,
    block: Vec<u8>,
    block_first_key: Option<Vec<u8>>,
    index: Vec<IndexEntry>,
    keys: Vec<Vec<u8>>,
    entry_count: u64,
    min_key: Option<Vec<u8>>,
    max_key: Option<Vec<u8>>,
}

impl SstBuilder {
    pub fn new(block_size: usize, bits_per_key: usize) -> SstBuilder {
        SstBuilder {
            block_size,
            bits_per_key,
            out: Vec::new(),
            block: Vec::new(),
            block_first_key: None,
            index: Vec::new(),
            keys: Vec::new(),
            entry_count: 0,
            min_key: None,
            max_key: None,
        }
    }

    pub fn add(&mut self, rec: &Record) {
        debug_assert!(
            self.max_key.as_deref().is_none_or(|m| m < rec.key.as_slice()),
            "keys must be added in strictly ascending order"
        );
        if self.block_first_key.is_none() {
            self.block_first_key = Some(rec.key.clone());
        }
        encode_entry(&mut self.block, rec);
        self.keys.push(rec.key.clone());
        self.entry_count += 1;
        if self.min_key.is_none() {
            self.min_key = Some(rec.key.clone());
        }
        self.max_key = Some(rec.key.clone());
        if self.block.len() >= self.block_size {
            self.finish_block();
        }
    }

    fn finish_block(&mut self) {
        if self.block.is_empty() {
            return;
        }
        let mut block = std::mem::take(&mut self.block);
        seal_block(&mut block);
        self.index.push(IndexEntry {
            first_key: self.block_first_key.take().expect("nonempty block"),
            offset: self.out.len() as u64,
            len: block.len() as u32,
        });
        self.out.extend_from_slice(&block);
    }

    pub fn entry_count(&self) -> u64 {
        self.entry_count
    }

    pub fn is_empty(&self) -> bool {
        self.entry_count == 0
    }

    /// Current encoded size estimate, for output-file chunking.
    pub fn estimated_bytes(&self) -> u64 {
        (self.out.len() + self.block.len()) as u64
    }

    pub fn keys(&self) -> &[Vec<u8>] {
        &self.keys
    }

    /// Finalize: returns the file bytes plus (entry count, min key, max key).
    pub fn finish(mut self) -> (Vec<u8>, u64, Vec<u8>, Vec<u8>) {
        assert!(self.entry_count > 0, "flush of empty SST");
        self.finish_block();

        let bloom = Bloom::build(
            self.keys.iter().map(|k| k.as_slice()),
            self.keys.len(),
            self.bits_per_key,
        );
        let mut filter = bloom.encode();
        seal_block(&mut filter);
        let filter_off = self.out.len() as u64;
        let filter_len = filter.len() as u32;
        self.out.extend_from_slice(&filter);

        let mut index = Vec::new();
        put_u32(&mut index, self.index.len() as u32);
        for e in &self.index {
            put_u32(&mut index, e.first_key.len() as u32);
            index.extend_from_slice(&e.first_key);
            put_u64(&mut index, e.offset);
            put_u32(&mut index, e.len);
        }
        seal_block(&mut index);
        let index_off = self.out.len() as u64;
        let index_len = index.len() as u32;
        self.out.extend_from_slice(&index);

        let min_key = self.min_key.expect("nonempty");
        let max_key = self.max_key.expect("nonempty");
        let mut props = Vec::new();
        put_u64(&mut props, self.entry_count);
        put_u32(&mut props, min_key.len() as u32);
        props.extend_from_slice(&min_key);
        put_u32(&mut props, max_key.len() as u32);
        props.extend_from_slice(&max_key);
        seal_block(&mut props);
        let props_off = self.out.len() as u64;
        let props_len = props.len() as u32;
        self.out.extend_from_slice(&props);

        put_u64(&mut self.out, index_off);
        put_u32(&mut self.out, index_len);
        put_u64(&mut self.out, filter_off);
        put_u32(&mut self.out, filter_len);
        put_u64(&mut self.out, props_off);
        put_u32(&mut self.out, props_len);
        put_u64(&mut self.out, MAGIC);

        (self.out, self.entry_count, min_key, max_key)
    }
}

/// Open SST file handle with parsed footer metadata.
pub struct SstReader {
    pub file_id: u64,
    pub tier: usize,
    pub path: PathBuf,
    pub entry_count: u64,
    pub min_key: Vec<u8>,
    pub max_key: Vec<u8>,
    file: File,
    index_off: u64,
    index_len: u32,
    filter_off: u64,
    filter_len: u32,
}

/// Result of a point lookup inside one SST.
#[derive(Debug)]
pub struct SstGet {
    pub seqno: u64,
    pub kind: RecordKind,
    pub value: Vec<u8>,
    /// True when the data block was served from the block cache.
    pub from_cache: bool,
}

impl SstReader {
    pub fn open(file_id: u64, tier: usize, path: PathBuf, tiers: &TierSet) -> Result<SstReader> {
        let file = File::open(&path)?;
        let file_len = file.metadata()?.len();
        if file_len < FOOTER_LEN as u64 {
            return Err(Error::Corruption {
                file: path,
                offset: 0,
            });
        }
        let mut footer = [0u8; FOOTER_LEN];
        tiers.read_at(tier, &file, file_len - FOOTER_LEN as u64, &mut footer)?;
        let mut cur = Cursor::new(&footer);
        let index_off = cur.u64().unwrap();
        let index_len = cur.u32().unwrap();
        let filter_off = cur.u64().unwrap();
        let filter_len = cur.u32().unwrap();
        let props_off = cur.u64().unwrap();
        let props_len = cur.u32().unwrap();
        let magic = cur.u64().unwrap();
        if magic != MAGIC {
            return Err(Error::Corruption {
                file: path,
                offset: file_len - 8,
            });
        }

        let mut props_block = vec![0u8; props_len as usize];
        tiers.read_at(tier, &file, props_off, &mut props_block)?;
        let props = check_block(&props_block, &path, props_off)?;
        let corrupt = || Error::Corruption {
            file: path.clone(),
            offset: props_off,
        };
        let mut cur = Cursor::new(&props);
        let entry_count = cur.u64().ok_or_else(corrupt)?;
        let minlen = cur.u32().ok_or_else(corrupt)? as usize;
        let min_key = cur.take(minlen).ok_or_else(corrupt)?.to_vec();
        let maxlen = cur.u32().ok_or_else(corrupt)? as usize;
        let max_key = cur.take(maxlen).ok_or_else(corrupt)?.to_vec();

        Ok(SstReader {
            file_id,
            tier,
            path,
            entry_count,
            min_key,
            max_key,
            file,
            index_off,
            index_len,
            filter_off,
            filter_len,
        })
    }

    /// Fetch one block, optionally through the block cache. Returns the
    /// verified payload and whether it was a cache hit.
    fn fetch_block(
        &self,
        tiers: &TierSet,
        cache: Option<&Mutex<BlockCache>>,
        kind: BlockKind,
        offset: u64,
        len: u32,
    ) -> Result<(Arc<Vec<u8>>, bool)> {
        if let Some(cache) = cache {
            if let Some(data) = cache.lock().unwrap().get((self.file_id, offset), kind) {
                return Ok((data, true));
            }
        }
        let mut raw = vec![0u8; len as usize];
        tiers.read_at(self.tier, &self.file, offset, &mut raw)?;
        let payload = Arc::new(check_block(&raw, &self.path, offset)?);
        if let Some(cache) = cache {
            cache
                .lock()
                .unwrap()
                .insert((self.file_id, offset), kind, payload.clone());
        }
        Ok((payload, false))
    }

    fn load_index(
        &self,
        tiers: &TierSet,
        cache: Option<&Mutex<BlockCache>>,
    ) -> Result<Vec<IndexEntry>> {
        let (payload, _) = self.fetch_block(
            tiers,
            cache,
            BlockKind::Index,
            self.index_off,
            self.index_len,
        )?;
        decode_index(&payload, &self.path, self.index_off)
    }

    fn load_bloom(&self, tiers: &TierSet, cache: Option<&Mutex<BlockCache>>) -> Result<Bloom> {
        let (payload, _) = self.fetch_block(
            tiers,
            cache,
            BlockKind::Filter,
            self.filter_off,
            self.filter_len,
        )?;
        Bloom::decode(&payload).ok_or_else(|| Error::Corruption {
            file: self.path.clone(),
            offset: self.filter_off,
        })
    }

    /// Point lookup. Consults the bloom filter first; a negative answer
    /// skips all data-block I/O.
    pub fn get(
        &self,
        key: &[u8],
        tiers: &TierSet,
        cache: Option<&Mutex<BlockCache>>,
    ) -> Result<Option<SstGet>> {
        if key < self.min_key.as_slice() || key > self.max_key.as_slice() {
            return Ok(None);
        }
        if !self.load_bloom(tiers, cache)?.contains(key) {
            return Ok(None);
        }
        let index = self.load_index(tiers, cache)?;
        // last block whose first key <= key
        let pos = index.partition_point(|e| e.first_key.as_slice() <= key);
        if pos == 0 {
            return Ok(None);
        }
        let entry = &index[pos - 1];
        let (payload, from_cache) =
            self.fetch_block(tiers, cache, BlockKind::Data, entry.offset, entry.len)?;
        let records = decode_entries(&payload, &self.path, entry.offset)?;
        // entries are sorted (key asc, seqno desc); first match is newest
        for rec in records {
            if rec.key == key {
                return Ok(Some(SstGet {
                    seqno: rec.seqno,
                    kind: rec.kind,
                    value: rec.value,
                    from_cache,
                }));
            }
        }
        Ok(None)
    }

    /// Streaming iterator over all records, in (key asc, seqno desc) order.
    /// Block reads go through the cache only when one is supplied
    /// (compactions bypass it).
    pub fn iter<'a>(
        &'a self,
        tiers: &'a TierSet,
        cache: Option<&'a Mutex<BlockCache>>,
    ) -> Result<SstIter<'a>> {
        let index = self.load_index(tiers, cache)?;
        Ok(SstIter {
            reader: self,
            tiers,
            cache,
            index,
            next_block: 0,
            pending: Vec::new(),
            pending_pos: 0,
        })
    }

    /// Iterator positioned at the first record with key >= start.
    pub fn iter_from<'a>(
        &'a self,
        start: &[u8],
        tiers: &'a TierSet,
        cache: Option<&'a Mutex<BlockCache>>,
    ) -> Result<SstIter<'a>> {
        let index = self.load_index(tiers, cache)?;
        let next_block = index
            .partition_point(|e| e.first_key.as_slice() <= start)
            .saturating_sub(1);
        let mut it = SstIter {
            reader: self,
            tiers,
            cache,
            index,
            next_block,
            pending: Vec::new(),
            pending_pos: 0,
        };
        it.skip_before(start)?;
        Ok(it)
    }
}

pub struct SstIter<'a> {
    reader: &'a SstReader,
    tiers: &'a TierSet,
    cache: Option<&'a Mutex<BlockCache>>,
    index: Vec<IndexEntry>,
    next_block: usize,
    pending: Vec<Record>,
    pending_pos: usize,
}

impl SstIter<'_> {
    fn fill(&mut self) -> Result<bool> {
        while self.pending_pos >= self.pending.len() {
            if self.next_block >= self.index.len() {
                return Ok(false);
            }
            let e = &self.index[self.next_block];
            self.next_block += 1;
            let (payload, _) = self.reader.fetch_block(
                self.tiers,
                self.cache,
                BlockKind::Data,
                e.offset,
                e.len,
            )?;
            self.pending = decode_entries(&payload, &self.reader.path, e.offset)?;
            self.pending_pos = 0;
        }
        Ok(true)
    }

    fn skip_before(&mut self, start: &[u8]) -> Result<()> {
        loop {
            if !self.fill()? {
                return Ok(());
            }
            while self.pending_pos < self.pending.len() {
                if self.pending[self.pending_pos].key.as_slice() >= start {
                    return Ok(());
                }
                self.pending_pos += 1;
            }
        }
    }
}

impl Iterator for SstIter<'_> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.fill() {
            Err(e) => Some(Err(e)),
            Ok(false) => None,
            Ok(true) => {
                let rec = self.pending[self.pending_pos].clone();
                self.pending_pos += 1;
                Some(Ok(rec))
            }
        }
    }
}
