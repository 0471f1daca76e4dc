//! LRU block cache keyed by (file id, block offset), with hit/miss
//! accounting split by block kind.

use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Data = 0,
    Index = 1,
    Filter = 2,
}

pub const BLOCK_KINDS: [BlockKind; 3] = [BlockKind::Data, BlockKind::Index, BlockKind::Filter];

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Data => "data",
            BlockKind::Index => "index",
            BlockKind::Filter => "filter",
        }
    }
}

#[derive(Debug, Default, Clone, Copy, serde::Serialize)]
pub struct CacheStats {
    pub hits: [u64; 3],
    pub misses: [u64; 3],
}

impl CacheStats {
    pub fn hit_rate(&self, kind: BlockKind) -> f64 {
        let h = self.hits[kind as usize];
        let m = self.misses[kind as usize];
        if h + m == 0 {
            0.0
        } else {
            h as f64 / (h + m) as f64
        }
    }

    pub fn total_requests(&self) -> u64 {
        self.hits.iter().sum::<u64>() + self.misses.iter().sum::<u64>()
    }
}

const NIL: usize = usize::MAX;

struct Node {
    key: (u64, u64),
    data: Arc<Vec<u8>>,
    prev: usize,
    next: usize,
}

/// LRU over byte blocks; resident bytes never exceed `capacity`.
pub struct BlockCache {
    capacity: u64,
    map: HashMap<(u64, u64), usize>,
    nodes: Vec<Node>,
    free: Vec<usize>,
    head: usize, // most recently used
    tail: usize, // least recently used
    resident: u64,
    stats: CacheStats,
}

impl BlockCache {
    pub fn new(capacity: u64) -> BlockCache {
        BlockCache {
            capacity,
            map: HashMap::new(),
            nodes: Vec::new(),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
            resident: 0,
            stats: CacheStats::default(),
        }
    }

    fn unlink(&mut self, idx: usize) {
        let (prev, next) = (self.nodes[idx].prev, self.nodes[idx].next);
        if prev != NIL {
            self.nodes[prev].next = next;
        } else {
            self.head = next;
        }
        if next != NIL {
            self.nodes[next].prev = prev;
        } else {
            self.tail = prev;
        }
    }

    fn push_front(&mut self, idx: usize) {
        self.nodes[idx].prev = NIL;
        self.nodes[idx].next = self.head;
        if self.head != NIL {
            self.nodes[self.head].prev = idx;
        }
        self.head = idx;
        if self.tail == NIL {
            self.tail = idx;
        }
    }

    pub fn get(&mut self, key: (u64, u64), kind: BlockKind) -> Option<Arc<Vec<u8>>> {
        match self.map.get(&key).copied() {
            Some(idx) => {
                self.stats.hits[kind as usize] += 1;
                self.unlink(idx);
                self.push_front(idx);
                Some(self.nodes[idx].data.clone())
            }
            None => {
                self.stats.misses[kind as usize] += 1;
                None
            }
        }
    }

    pub fn insert(&mut self, key: (u64, u64), _kind: BlockKind, data: Arc<Vec<u8>>) {
        let size = data.len() as u64;
        if size > self.capacity {
            return; // would never fit
        }
        if let Some(idx) = self.map.get(&key).copied() {
            self.resident -= self.nodes[idx].data.len() as u64;
            self.resident += size;
            self.nodes[idx].data = data;
            self.unlink(idx);
            self.push_front(idx);
        } else {
            let node = Node {
                key,
                data,
                prev: NIL,
                next: NIL,
            };
            let idx = match self.free.pop() {
                Some(i) => {
                    self.nodes[i] = node;
                    i
                }
                None => {
                    self.nodes.push(node);
                    self.nodes.len() - 1
                }
            };
            self.map.insert(key, idx);
            self.resident += size;
            self.push_front(idx);
        }
        while self.resident > self.capacity {
            let victim = self.tail;
            debug_assert_ne!(victim, NIL);
            self.unlink(victim);
            self.map.remove(&self.nodes[victim].key);
            self.resident -= self.nodes[victim].data.len() as u64;
            self.nodes[victim].data = Arc::new(Vec::new());
            self.free.push(victim);
        }
    }

    /// Drop all blocks belonging to `file_id` (file deleted by compaction).
    pub fn evict_file(&mut self, file_id: u64) {
        let keys: Vec<(u64, u64)> = self
            .map
            .keys()
            .filter(|(f, _)| *f == file_id)
            .copied()
            .collect();
        for key in keys {
            let idx = self.map.remove(&key).unwrap();
            self.unlink(idx);
            self.resident -= self.nodes[idx].data.len() as u64;
            self.nodes[idx].data = Arc::new(Vec::new());
            self.free.push(idx);
        }
    }

    pub fn resident_bytes(&self) -> u64 {
        self.resident
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    #[cfg(test)]
    fn lru_order(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut cur = self.head;
        while cur != NIL {
            out.push(self.nodes[cur].key);
            cur = self.nodes[cur].next;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(n: usize) -> Arc<Vec<u8>> {
        Arc::new(vec![0u8; n])
    }

    #[test]
    fn capacity_respected_and_lru_evicted() {
        let mut c = BlockCache::new(100);
        c.insert((1, 0), BlockKind::Data, block(40));
        c.insert((1, 40), BlockKind::Data, block(40));
        c.insert((1, 80), BlockKind::Data, block(40));
        assert!(c.resident_bytes() <= 100);
        assert!(c.get((1, 0), BlockKind::Data).is_none()); // oldest evicted
        assert!(c.get((1, 40), BlockKind::Data).is_some());
    }

    #[test]
    fn hit_miss_accounting_by_kind() {
        let mut c = BlockCache::new(1000);
        c.insert((1, 0), BlockKind::Index, block(10));
        c.get((1, 0), BlockKind::Index);
        c.get((2, 0), BlockKind::Filter);
        c.get((1, 0), BlockKind::Data); // same key, counted under data
        let s = c.stats();
        assert_eq!(s.hits[BlockKind::Index as usize], 1);
        assert_eq!(s.misses[BlockKind::Filter as usize], 1);
        assert_eq!(s.hits[BlockKind::Data as usize], 1);
        assert_eq!(s.total_requests(), 3);
    }

    /// Replay a random access trace against a naive reference LRU and
    /// compare eviction behavior exactly.
    #[test]
    fn matches_reference_lru_on_random_trace() {
        let capacity = 10 * 64;
        let mut cache = BlockCache::new(capacity as u64);
        let mut reference: Vec<(u64, u64)> = Vec::new(); // front = MRU
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5000 {
            let key = (rng.random_range(0..4u64), rng.random_range(0..8u64) * 64);
            let hit = cache.get(key, BlockKind::Data).is_some();
            let ref_hit = reference.contains(&key);
            assert_eq!(hit, ref_hit, "divergence on {key:?}");
            if hit {
                reference.retain(|k| k != &key);
                reference.insert(0, key);
            } else {
                cache.insert(key, BlockKind::Data, block(64));
                reference.insert(0, key);
                while reference.len() * 64 > capacity {
                    reference.pop();
                }
            }
            assert_eq!(cache.lru_order(), reference);
            assert!(cache.resident_bytes() <= capacity as u64);
        }
    }

    #[test]
    fn evict_file_drops_all_its_blocks() {
        let mut c = BlockCache::new(1000);
        c.insert((1, 0), BlockKind::Data, block(10));
        c.insert((1, 10), BlockKind::Data, block(10));
        c.insert((2, 0), BlockKind::Data, block(10));
        c.evict_file(1);
        assert!(c.get((1, 0), BlockKind::Data).is_none());
        assert!(c.get((2, 0), BlockKind::Data).is_some());
        assert_eq!(c.resident_bytes(), 10);
    }
}
