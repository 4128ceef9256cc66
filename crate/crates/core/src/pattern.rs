//! Version-number patterns: closed-form prediction of every version a
//! layer's output stream uses.
//!
//! Each output tile is rewritten as its partial sums spill; write `n` of a
//! tile carries version `n`. For every catalogued schedule the version
//! sequence, taken in trace order, is `(1^eta, 2^eta, ..., kappa^eta)^rho`,
//! so three registers replace an off-chip version table. Spilled partials
//! are read back one version behind the next write, giving the same shape
//! with `kappa - 1` values. `derive_row_patterns` computes the triplets from
//! the schedule alone; `VnState` replays a trace against them and flags the
//! first divergence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataflow::{
    validate_schedule, AccessTrace, Direction, LayerKind, LayerSpec, LoopDim, Role, TileId,
    TileSchedule,
};
use crate::{Error, Result};

/// The three-register description of a version sequence:
/// `(1^eta, 2^eta, ..., kappa^eta)` repeated `rho` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternTriplet {
    /// Run length of each version value.
    pub eta: u64,
    /// Highest version value reached.
    pub kappa: u32,
    /// Number of times the ramp repeats.
    pub rho: u64,
}

impl PatternTriplet {
    /// The all-ones pattern covering `n` accesses.
    pub const fn flat(n: u64) -> Self {
        PatternTriplet {
            eta: n,
            kappa: 1,
            rho: 1,
        }
    }

    /// Total accesses the pattern covers.
    pub fn len(&self) -> u64 {
        self.eta * self.kappa as u64 * self.rho
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Version at 0-based stream position `pos`.
    pub fn vn_at(&self, pos: u64) -> Result<u32> {
        if pos >= self.len() {
            return Err(Error::PatternExhausted { position: pos });
        }
        Ok(((pos / self.eta) % self.kappa as u64) as u32 + 1)
    }

    /// Materializes the whole sequence (tests and diagnostics).
    pub fn expand(&self) -> Vec<u32> {
        (0..self.len()).map(|p| self.vn_at(p).unwrap()).collect()
    }
}

impl std::fmt::Display for PatternTriplet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.kappa == 1 {
            write!(f, "(1^{})", self.eta * self.rho)
        } else {
            write!(f, "(1^{e},..,{k}^{e})^{r}", e = self.eta, k = self.kappa, r = self.rho)
        }
    }
}

/// Write-back and read-back version patterns of one layer's output stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowPatterns {
    pub write: PatternTriplet,
    /// `None` when no partial sum ever leaves the chip.
    pub read: Option<PatternTriplet>,
}

/// Loop dimensions that select an output tile for this layer kind.
fn output_dims(kind: LayerKind) -> &'static [LoopDim] {
    match kind {
        LayerKind::Convolution
        | LayerKind::PreprocStyle3
        | LayerKind::PreprocStyle1
        | LayerKind::Pooling => &[LoopDim::K, LoopDim::H, LoopDim::W],
        // Output columns are the channel axis of the result.
        LayerKind::MatMul => &[LoopDim::W, LoopDim::H],
        LayerKind::PreprocStyle2 => &[LoopDim::H, LoopDim::W],
    }
}

fn has_contraction(kind: LayerKind) -> bool {
    !matches!(kind, LayerKind::PreprocStyle1 | LayerKind::Pooling)
}

/// Derives the version patterns of a schedule from its loop structure.
///
/// Valid for the canonical single-slot global buffer (the configuration the
/// published patterns assume): a tile spills between two contraction steps
/// exactly when some output-dim loop nested inside the contraction loop
/// visits other tiles in between.
pub fn derive_row_patterns(layer: &LayerSpec, sched: &TileSchedule) -> Result<RowPatterns> {
    let (_, alphas) = validate_schedule(layer, sched)?;
    let odims = output_dims(layer.kind);
    let alpha_of = |d: LoopDim| match d {
        LoopDim::K => alphas.k,
        LoopDim::C => alphas.c,
        LoopDim::H => alphas.h,
        LoopDim::W => alphas.w,
    };
    let n_tiles: u64 = odims.iter().map(|d| alpha_of(*d) as u64).product();
    let flat = RowPatterns {
        write: PatternTriplet::flat(n_tiles),
        read: None,
    };

    let kappa = alphas.c;
    if !has_contraction(layer.kind) || kappa == 1 {
        return Ok(flat);
    }
    let Some(c_pos) = sched.loop_order.iter().position(|t| t.dim == LoopDim::C) else {
        // Whole contraction held on-chip.
        return Ok(flat);
    };

    // Output tiles cycled between two partial versions of the same tile.
    let eta: u64 = sched.loop_order[c_pos + 1..]
        .iter()
        .filter(|t| odims.contains(&t.dim))
        .map(|t| alpha_of(t.dim) as u64)
        .product();
    if eta == 1 {
        // Contraction steps run back-to-back on the resident tile; only the
        // final version is ever written.
        return Ok(flat);
    }
    let rho = n_tiles / eta;
    Ok(RowPatterns {
        write: PatternTriplet { eta, kappa, rho },
        read: Some(PatternTriplet {
            eta,
            kappa: kappa - 1,
            rho,
        }),
    })
}

/// Streams predicted versions for one layer's output accesses while
/// cross-checking them against per-tile ordinals observed in the trace.
#[derive(Debug, Clone)]
pub struct VnState {
    patterns: RowPatterns,
    write_pos: u64,
    read_pos: u64,
    tile_vn: BTreeMap<TileId, u32>,
}

impl VnState {
    pub fn new(patterns: RowPatterns) -> Self {
        VnState {
            patterns,
            write_pos: 0,
            read_pos: 0,
            tile_vn: BTreeMap::new(),
        }
    }

    /// Version every tile ends the layer on.
    pub fn final_version(&self) -> u32 {
        self.patterns.write.kappa
    }

    /// Distinct tiles currently tracked — the whole on-chip version state.
    pub fn tracked_tiles(&self) -> usize {
        self.tile_vn.len()
    }

    /// Predicted version for the next output write; errors if the tile's
    /// actual write ordinal disagrees.
    pub fn next_write_vn(&mut self, tile: TileId) -> Result<u32> {
        let pos = self.write_pos;
        let predicted = self.patterns.write.vn_at(pos)?;
        self.write_pos += 1;
        let observed = self.tile_vn.entry(tile).or_insert(0);
        *observed += 1;
        if predicted != *observed {
            return Err(Error::PatternDivergence {
                position: pos,
                predicted,
                observed: *observed,
            });
        }
        Ok(predicted)
    }

    /// Predicted version for the next partial-sum read-back.
    pub fn next_read_vn(&mut self, tile: TileId) -> Result<u32> {
        let pos = self.read_pos;
        let predicted = match self.patterns.read {
            Some(rp) => rp.vn_at(pos)?,
            None => return Err(Error::PatternExhausted { position: pos }),
        };
        self.read_pos += 1;
        let observed = self.tile_vn.get(&tile).copied().unwrap_or(0);
        if predicted != observed {
            return Err(Error::PatternDivergence {
                position: pos,
                predicted,
                observed,
            });
        }
        Ok(predicted)
    }

    /// Checks that the patterns were consumed exactly. `observed = 0` in the
    /// error marks a stream that ended before its pattern did.
    pub fn finish(&self) -> Result<()> {
        if self.write_pos != self.patterns.write.len() {
            return Err(Error::PatternDivergence {
                position: self.write_pos,
                predicted: self.patterns.write.vn_at(self.write_pos)?,
                observed: 0,
            });
        }
        let read_len = self.patterns.read.map_or(0, |p| p.len());
        if self.read_pos != read_len {
            return Err(Error::PatternDivergence {
                position: self.read_pos,
                predicted: self.patterns.read.unwrap().vn_at(self.read_pos)?,
                observed: 0,
            });
        }
        Ok(())
    }
}

impl RowPatterns {
    /// Replays a trace's output stream against the patterns, reporting the
    /// first divergence.
    pub fn verify_trace(&self, trace: &AccessTrace) -> Result<()> {
        let mut st = VnState::new(*self);
        for e in &trace.events {
            if e.tile.role != Role::Ofmap {
                continue;
            }
            match e.dir {
                Direction::Write => {
                    st.next_write_vn(e.tile)?;
                }
                Direction::Read => {
                    st.next_read_vn(e.tile)?;
                }
            }
        }
        st.finish()
    }
}

/// The observed write-back and read-back version sequences of a trace,
/// derived by brute force from per-tile ordinals (no pattern involved).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VnStreams {
    pub write: Vec<u32>,
    pub read: Vec<u32>,
}

/// Brute-force observer: version of each output access without assuming any
/// pattern. Ground truth for pattern derivation.
pub fn oracle_vn_sequences(trace: &AccessTrace) -> VnStreams {
    let mut counts: BTreeMap<TileId, u32> = BTreeMap::new();
    let mut out = VnStreams {
        write: Vec::new(),
        read: Vec::new(),
    };
    for e in &trace.events {
        if e.tile.role != Role::Ofmap {
            continue;
        }
        match e.dir {
            Direction::Write => {
                let n = counts.entry(e.tile).or_insert(0);
                *n += 1;
                out.write.push(*n);
            }
            Direction::Read => {
                let n = counts
                    .get(&e.tile)
                    .copied()
                    .expect("read-back precedes any write of the tile");
                out.read.push(n);
            }
        }
    }
    out
}

/// Version number in force for every output access of a trace, keyed by
/// event `seq` (writes get their new version, read-backs the current one).
pub fn ofmap_event_versions(trace: &AccessTrace) -> BTreeMap<u64, u32> {
    let mut counts: BTreeMap<TileId, u32> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for e in &trace.events {
        if e.tile.role != Role::Ofmap {
            continue;
        }
        let vn = match e.dir {
            Direction::Write => {
                let n = counts.entry(e.tile).or_insert(0);
                *n += 1;
                *n
            }
            Direction::Read => counts
                .get(&e.tile)
                .copied()
                .expect("read-back precedes any write of the tile"),
        };
        out.insert(e.seq, vn);
    }
    out
}
