//! Metadata machinery of the five protection schemes.
//!
//! Every scheme moves the same data blocks; they differ in what *extra*
//! traffic and stalls the security metadata costs:
//!
//! - `baseline`: no protection, no metadata.
//! - `secure`: per-block counters behind a counter cache and an 8-ary
//!   integrity tree (a miss serializes the counter read plus one read per
//!   tree level), plus per-block tags behind a MAC cache.
//! - `tnpu`: per-tile versions held in a host-managed table (a fixed-cost
//!   message per tile transition, overlappable with the data burst), plus
//!   the same MAC cache.
//! - `guardnn`: per-tile versions via host messages and *uncached* per-block
//!   tags; a single line register coalesces back-to-back transfers for the
//!   same tag line, so one isolated block read costs exactly one extra
//!   metadata read.
//! - `seculator`: versions come from pattern registers and tags are folded
//!   into per-layer accumulators, so no metadata ever crosses the bus.
//!
//! State is a pure counting machine: callers feed it block transfers and
//! tile transitions; it reports traffic and stall contributions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::layout::{BLOCKS_PER_COUNTER_LINE, TAGS_PER_LINE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Baseline,
    Secure,
    Tnpu,
    GuardNn,
    Seculator,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Baseline,
        Scheme::Secure,
        Scheme::Tnpu,
        Scheme::GuardNn,
        Scheme::Seculator,
    ];

    /// Schemes that actually verify and would catch an attack.
    pub fn is_protected(self) -> bool {
        self != Scheme::Baseline
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Scheme::Baseline => "baseline",
            Scheme::Secure => "secure",
            Scheme::Tnpu => "tnpu",
            Scheme::GuardNn => "guardnn",
            Scheme::Seculator => "seculator",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Scheme::Baseline),
            "secure" => Ok(Scheme::Secure),
            "tnpu" => Ok(Scheme::Tnpu),
            "guardnn" => Ok(Scheme::GuardNn),
            "seculator" => Ok(Scheme::Seculator),
            other => Err(Error::UnknownScheme(other.to_string())),
        }
    }
}

/// Sizing and cost knobs shared by all schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub mac_cache_bytes: u64,
    pub counter_cache_bytes: u64,
    pub cache_ways: usize,
    /// Cost of one host version message (guardnn), in cycles.
    pub host_vn_message_cycles: u64,
    /// Cost of one version-table access (tnpu), in cycles.
    pub tensor_table_access_cycles: u64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            mac_cache_bytes: 8192,
            counter_cache_bytes: 4096,
            cache_ways: 4,
            host_vn_message_cycles: 100,
            tensor_table_access_cycles: 100,
        }
    }
}

/// Traffic and stall contributions of one metadata step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MetadataEffects {
    /// Metadata blocks read from DRAM.
    pub reads: u64,
    /// Metadata blocks written to DRAM.
    pub writes: u64,
    /// Of `reads`, how many sit on the critical path (each costs a full
    /// DRAM round trip before the data can be used).
    pub dependent_reads: u64,
    /// Integrity-tree reads included in `reads`.
    pub merkle_reads: u64,
    /// Host/table version messages issued.
    pub host_messages: u64,
    /// Message cycles, overlappable with the event's data burst.
    pub message_cycles: u64,
}

impl MetadataEffects {
    pub fn add(&mut self, other: MetadataEffects) {
        self.reads += other.reads;
        self.writes += other.writes;
        self.dependent_reads += other.dependent_reads;
        self.merkle_reads += other.merkle_reads;
        self.host_messages += other.host_messages;
        self.message_cycles += other.message_cycles;
    }

    pub fn blocks(&self) -> u64 {
        self.reads + self.writes
    }
}

#[derive(Debug, Clone, Copy)]
struct CacheLine {
    key: u64,
    dirty: bool,
    used: u64,
}

/// Set-associative LRU write-back cache over metadata lines.
#[derive(Debug, Clone)]
pub struct CacheModel {
    sets: Vec<Vec<CacheLine>>,
    ways: usize,
    tick: u64,
    pub lookups: u64,
    pub hits: u64,
    pub misses: u64,
    pub write_backs: u64,
}

pub struct CacheOutcome {
    pub hit: bool,
    pub wrote_back: bool,
}

impl CacheModel {
    pub fn new(capacity_bytes: u64, line_bytes: u64, ways: usize) -> Self {
        let lines = (capacity_bytes / line_bytes).max(1) as usize;
        let sets = (lines / ways).max(1);
        Self {
            sets: vec![Vec::with_capacity(ways); sets],
            ways,
            tick: 0,
            lookups: 0,
            hits: 0,
            misses: 0,
            write_backs: 0,
        }
    }

    /// Set index via a multiplicative hash, so strided key sequences (fmap
    /// strides are often powers of two) spread over all sets instead of
    /// aliasing onto a few.
    fn set_of(&self, key: u64) -> usize {
        let h = key.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> 32;
        (h % self.sets.len() as u64) as usize
    }

    /// Touches `key`; `dirty` marks the line modified (write-back on evict).
    pub fn access(&mut self, key: u64, dirty: bool) -> CacheOutcome {
        self.lookups += 1;
        self.tick += 1;
        let set = self.set_of(key);
        let lines = &mut self.sets[set];
        if let Some(line) = lines.iter_mut().find(|l| l.key == key) {
            line.used = self.tick;
            line.dirty |= dirty;
            self.hits += 1;
            return CacheOutcome {
                hit: true,
                wrote_back: false,
            };
        }
        self.misses += 1;
        let mut wrote_back = false;
        if lines.len() == self.ways {
            let lru = lines
                .iter()
                .enumerate()
                .min_by_key(|(_, l)| l.used)
                .map(|(i, _)| i)
                .expect("full set");
            wrote_back = lines.swap_remove(lru).dirty;
            if wrote_back {
                self.write_backs += 1;
            }
        }
        lines.push(CacheLine {
            key,
            dirty,
            used: self.tick,
        });
        CacheOutcome {
            hit: false,
            wrote_back,
        }
    }

    /// Write-back count for all dirty lines (marks them clean).
    pub fn drain_dirty(&mut self) -> u64 {
        let mut n = 0;
        for set in &mut self.sets {
            for line in set.iter_mut() {
                if line.dirty {
                    line.dirty = false;
                    n += 1;
                }
            }
        }
        self.write_backs += n;
        n
    }

    pub fn miss_rate(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.misses as f64 / self.lookups as f64
        }
    }
}

/// Live metadata state of one scheme during a run.
#[derive(Debug)]
pub struct SchemeState {
    pub scheme: Scheme,
    pub config: SchemeConfig,
    merkle_height: u32,
    mac_cache: Option<CacheModel>,
    counter_cache: Option<CacheModel>,
    /// guardnn: write-combining buffer holding the one tag line currently
    /// being filled by outgoing block tags.
    wc_tag_line: Option<u64>,
}

impl SchemeState {
    pub fn new(scheme: Scheme, config: SchemeConfig, merkle_height: u32) -> Self {
        let mac_cache = matches!(scheme, Scheme::Secure | Scheme::Tnpu)
            .then(|| CacheModel::new(config.mac_cache_bytes, 64, config.cache_ways));
        let counter_cache = matches!(scheme, Scheme::Secure)
            .then(|| CacheModel::new(config.counter_cache_bytes, 64, config.cache_ways));
        Self {
            scheme,
            config,
            merkle_height,
            mac_cache,
            counter_cache,
            wc_tag_line: None,
        }
    }

    /// Metadata cost of moving one data block (identified by its global
    /// block number) in the given direction. `weight` marks blocks of a
    /// read-only weight tile, whose integrity unit under the per-block
    /// scheme is the whole tile (see [`Self::on_weight_tile`]).
    pub fn on_block(&mut self, global_block: u64, write: bool, weight: bool) -> MetadataEffects {
        let mut fx = MetadataEffects::default();
        match self.scheme {
            Scheme::Baseline | Scheme::Seculator => {}
            Scheme::Secure => {
                self.counter_step(global_block, write, &mut fx);
                self.mac_cache_step(global_block, write, &mut fx);
            }
            Scheme::Tnpu => {
                self.mac_cache_step(global_block, write, &mut fx);
            }
            Scheme::GuardNn if weight => {}
            Scheme::GuardNn => {
                let line = global_block / TAGS_PER_LINE;
                if write {
                    // Outgoing tags gather in a combining buffer and leave
                    // as one line write when the stream moves off the line.
                    match self.wc_tag_line {
                        Some(held) if held == line => {}
                        other => {
                            if other.is_some() {
                                fx.writes += 1;
                            }
                            self.wc_tag_line = Some(line);
                        }
                    }
                } else {
                    // Tag reads cannot combine: each block's tag must be in
                    // hand before the block is consumed, and nothing caches
                    // it. A pending combined line over the same tags drains
                    // first so the fetch sees current data.
                    if self.wc_tag_line == Some(line) {
                        fx.writes += 1;
                        self.wc_tag_line = None;
                    }
                    fx.reads += 1;
                }
            }
        }
        fx
    }

    fn counter_step(&mut self, global_block: u64, write: bool, fx: &mut MetadataEffects) {
        let cache = self.counter_cache.as_mut().expect("secure has counters");
        let line = global_block / BLOCKS_PER_COUNTER_LINE;
        let out = cache.access(line, write);
        if !out.hit {
            // The counter and every tree level up to the on-chip root must
            // arrive before the block can be decrypted or its bump sealed.
            let chain = 1 + u64::from(self.merkle_height);
            fx.reads += chain;
            fx.dependent_reads += chain;
            fx.merkle_reads += u64::from(self.merkle_height);
        }
        if out.wrote_back {
            fx.writes += 1;
        }
    }

    fn mac_cache_step(&mut self, global_block: u64, write: bool, fx: &mut MetadataEffects) {
        let cache = self.mac_cache.as_mut().expect("scheme has a mac cache");
        let out = cache.access(global_block / TAGS_PER_LINE, write);
        if !out.hit {
            fx.reads += 1;
        }
        if out.wrote_back {
            fx.writes += 1;
        }
    }

    /// Tag fetch for one read-only weight tile. Weights are provisioned
    /// once and never reversioned, so the per-block scheme seals each tile
    /// under a single tag (one line) instead of per-block tags; cached
    /// schemes keep their ordinary per-block path.
    pub fn on_weight_tile(&mut self) -> MetadataEffects {
        let mut fx = MetadataEffects::default();
        if self.scheme == Scheme::GuardNn {
            fx.reads += 1;
        }
        fx
    }

    /// Version bookkeeping when the engine moves to a different activation
    /// tile. Weights are version-constant, so they never pay this.
    pub fn on_tile_transition(&mut self) -> MetadataEffects {
        let mut fx = MetadataEffects::default();
        match self.scheme {
            Scheme::Tnpu => {
                fx.host_messages = 1;
                fx.message_cycles = self.config.tensor_table_access_cycles;
            }
            Scheme::GuardNn => {
                fx.host_messages = 1;
                fx.message_cycles = self.config.host_vn_message_cycles;
            }
            _ => {}
        }
        fx
    }

    /// End-of-run flush of dirty metadata still on chip.
    pub fn flush(&mut self) -> MetadataEffects {
        let mut fx = MetadataEffects::default();
        if let Some(c) = self.counter_cache.as_mut() {
            fx.writes += c.drain_dirty();
        }
        if let Some(c) = self.mac_cache.as_mut() {
            fx.writes += c.drain_dirty();
        }
        if self.wc_tag_line.take().is_some() {
            fx.writes += 1;
        }
        fx
    }

    pub fn mac_cache(&self) -> Option<&CacheModel> {
        self.mac_cache.as_ref()
    }

    pub fn counter_cache(&self) -> Option<&CacheModel> {
        self.counter_cache.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!(matches!(
            "sgx".parse::<Scheme>(),
            Err(Error::UnknownScheme(_))
        ));
    }

    #[test]
    fn cache_counts_are_conserved_and_lru_evicts_oldest() {
        // 2 sets x 2 ways of 64-byte lines; three keys hashing to one set.
        let mut c = CacheModel::new(256, 64, 2);
        let ks: Vec<u64> = (0..100).filter(|&k| c.set_of(k) == c.set_of(0)).collect();
        let (a, b, d) = (ks[0], ks[1], ks[2]);
        assert!(!c.access(a, false).hit);
        assert!(!c.access(b, false).hit);
        assert!(c.access(a, false).hit); // refresh a
        let out = c.access(d, true); // evicts b, the LRU (clean)
        assert!(!out.hit);
        assert!(!out.wrote_back);
        assert!(c.access(a, false).hit); // refresh a so d becomes LRU
        let out = c.access(b, false); // evicts d (dirty)
        assert!(!out.hit);
        assert!(out.wrote_back);
        assert_eq!(c.hits + c.misses, c.lookups);
        assert_eq!(c.lookups, 6);
        assert_eq!(c.hits, 2);
    }

    #[test]
    fn drain_writes_back_each_dirty_line_once() {
        let mut c = CacheModel::new(256, 64, 2);
        c.access(0, true);
        c.access(1, true);
        c.access(2, false);
        assert_eq!(c.drain_dirty(), 2);
        assert_eq!(c.drain_dirty(), 0);
    }

    #[test]
    fn baseline_and_pattern_scheme_move_no_metadata() {
        for scheme in [Scheme::Baseline, Scheme::Seculator] {
            let mut st = SchemeState::new(scheme, SchemeConfig::default(), 2);
            let mut fx = MetadataEffects::default();
            for b in 0..100 {
                fx.add(st.on_block(b, b % 3 == 0, false));
                fx.add(st.on_tile_transition());
            }
            fx.add(st.flush());
            assert_eq!(fx, MetadataEffects::default());
        }
    }

    #[test]
    fn counter_miss_serializes_the_tree_walk() {
        let mut st = SchemeState::new(Scheme::Secure, SchemeConfig::default(), 3);
        let fx = st.on_block(0, false, false);
        // Cold: counter chain (1 + 3 levels) + one tag line read.
        assert_eq!(fx.reads, 5);
        assert_eq!(fx.dependent_reads, 4);
        assert_eq!(fx.merkle_reads, 3);
        // Same line again: everything hits.
        let fx = st.on_block(1, false, false);
        assert_eq!(fx, MetadataEffects::default());
    }

    #[test]
    fn tag_reads_fetch_every_block_and_tag_writes_combine() {
        let mut st = SchemeState::new(Scheme::GuardNn, SchemeConfig::default(), 0);
        // Every block read costs exactly one extra tag read, even within
        // one line: there is no cache to hold neighbours.
        for b in 0..8 {
            assert_eq!(
                st.on_block(b, false, false),
                MetadataEffects {
                    reads: 1,
                    ..Default::default()
                }
            );
        }
        // Writes to one line combine; leaving the line emits one write.
        for b in 8..16 {
            assert_eq!(st.on_block(b, true, false), MetadataEffects::default());
        }
        let fx = st.on_block(16, true, false);
        assert_eq!(fx.writes, 1);
        assert_eq!(fx.reads, 0);
        // Reading a line with a pending combined write drains it first.
        let fx = st.on_block(17, false, false);
        assert_eq!(fx.writes, 1);
        assert_eq!(fx.reads, 1);
        assert_eq!(st.flush(), MetadataEffects::default());
        // A combined line still pending at the end drains on flush.
        st.on_block(0, true, false);
        assert_eq!(st.flush().writes, 1);
        // Weight tiles are sealed whole: one tag line per tile, nothing
        // per block.
        assert_eq!(st.on_weight_tile().reads, 1);
        assert_eq!(st.on_block(40, false, true), MetadataEffects::default());
    }

    #[test]
    fn version_messages_cost_fixed_cycles() {
        let mut tnpu = SchemeState::new(Scheme::Tnpu, SchemeConfig::default(), 0);
        let fx = tnpu.on_tile_transition();
        assert_eq!(fx.host_messages, 1);
        assert_eq!(fx.message_cycles, 100);
        assert_eq!(fx.blocks(), 0);
        let mut g = SchemeState::new(Scheme::GuardNn, SchemeConfig::default(), 0);
        assert_eq!(g.on_tile_transition().message_cycles, 100);
    }
}
