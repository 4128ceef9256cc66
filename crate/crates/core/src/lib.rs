//! Trace-driven simulator for tile-granular memory protection on DNN
//! accelerators.
//!
//! The crate models an NPU that moves feature-map tiles between an on-chip
//! global buffer and untrusted DRAM. Off-chip data is encrypted with a
//! counter-mode cipher whose freshness input is a per-tile version number
//! (VN), and integrity is checked once per layer by folding per-block MACs
//! into XOR accumulators. The crate covers:
//!
//! - [`dataflow`]: tiled loop nests for convolution, matrix multiply,
//!   pre-processing and pooling layers, producing deterministic tile-level
//!   access traces.
//! - [`pattern`]: the closed-form version-number patterns those traces induce
//!   (triplet `<eta, kappa, rho>` expanding to `(1^eta .. kappa^eta)^rho`),
//!   plus the runtime VN generator that replaces stored VN tables.
//! - [`crypto`]: AES-128 CTR block encryption keyed by (fmap, layer, VN,
//!   block) counters, SHA-256 per-block MACs, and the XOR accumulator
//!   registers with the layer verification equation.
//! - [`memory`]: the untrusted DRAM model and a scriptable adversary that
//!   can tamper, replay, swap, or drop blocks between accesses.
//! - [`layout`]: assignment of fmaps and 64-byte blocks to DRAM addresses,
//!   and the tile -> block mapping shared by producer and consumer layers.
//! - [`schemes`]: per-access metadata state machines for five protection
//!   designs (baseline, counter+Merkle, tensor-table, per-block-MAC,
//!   pattern-generated VNs).
//! - [`perf`]: cycle and DRAM-traffic accounting plus scheme comparison and
//!   the layer-widening scalability study.
//! - [`attack`]: randomized injection campaigns that must all be detected.
//! - [`netdesc`]: the textual network/schedule description format.

pub mod attack;
pub mod crypto;
pub mod dataflow;
pub mod layout;
pub mod memory;
pub mod netdesc;
pub mod pattern;
pub mod perf;
pub mod schemes;

pub use dataflow::{AccessEvent, AccessTrace, Direction, LayerKind, LayerSpec, Role, TileId, TileSchedule};
pub use pattern::PatternTriplet;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tile size does not divide its dimension exactly.
    #[error("tile size {tile} does not divide {dim}={value}")]
    NonDivisibleTiling {
        dim: &'static str,
        value: u32,
        tile: u32,
    },

    /// The schedule names no supported pattern-table row, or its loop order
    /// does not match the row it names.
    #[error("no supported pattern-table row matches: {0}")]
    UnknownRow(String),

    /// A (kind, reuse, loop-order) combination the pattern tables mark as
    /// absent, or a schedule violating a row's tiling constraints.
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),

    /// A layer spec violates a structural invariant of its kind.
    #[error("invalid layer: {0}")]
    InvalidLayer(String),

    /// More write events occurred than the pattern predicts. Treated as a
    /// security-relevant fault: the supplied triplet disagrees with traffic.
    #[error("VN pattern exhausted at sequence position {position}")]
    PatternExhausted { position: u64 },

    /// The pattern-predicted VN disagrees with the trace-implied VN.
    #[error("VN divergence at position {position}: pattern gives {predicted}, trace implies {observed}")]
    PatternDivergence {
        position: u64,
        predicted: u32,
        observed: u32,
    },

    /// `widen_layer` was asked to shrink a layer.
    #[error("cannot widen {h}x{w} layer to smaller {target_h}x{target_w}")]
    ShrinkNotAllowed {
        h: u32,
        w: u32,
        target_h: u32,
        target_w: u32,
    },

    /// DRAM access outside every registered region.
    #[error("unmapped DRAM address {0:#x}")]
    UnmappedAddress(u64),

    /// Scheme name not recognized.
    #[error("unknown protection scheme `{0}`")]
    UnknownScheme(String),

    /// Structured-text parse failure (network, adversary, or vector file).
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
