//! Layer specifications, tile schedules, and tile-granularity access traces.
//!
//! A layer is a set of output fmaps computed from input fmaps (and, for
//! convolution/matmul, a weight tensor). A schedule tiles each dimension and
//! fixes a loop order drawn from one of the catalogued pattern-table rows;
//! walking that loop nest with a one-tile-resident global buffer yields a
//! deterministic sequence of tile reads, ofmap writes (evictions), and
//! partial-sum read-backs. Those traces are the input to every other module.

mod engine;
mod rows;

pub use engine::{generate_trace, GbConfig};
pub use rows::{
    enumerate_table_rows, row_def, sample_shape, validate_schedule, RowDef, RowFamily, RowInfo,
    StyleRow,
};

use std::fmt;
use std::io::Write as IoWrite;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Kind of computation a layer performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Convolution,
    MatMul,
    PreprocStyle1,
    PreprocStyle2,
    PreprocStyle3,
    Pooling,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Convolution => "conv",
            LayerKind::MatMul => "matmul",
            LayerKind::PreprocStyle1 => "pre1",
            LayerKind::PreprocStyle2 => "pre2",
            LayerKind::PreprocStyle3 => "pre3",
            LayerKind::Pooling => "pool",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LayerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "conv" => LayerKind::Convolution,
            "matmul" => LayerKind::MatMul,
            "pre1" => LayerKind::PreprocStyle1,
            "pre2" => LayerKind::PreprocStyle2,
            "pre3" => LayerKind::PreprocStyle3,
            "pool" => LayerKind::Pooling,
            other => return Err(format!("unknown layer kind `{other}`")),
        })
    }
}

/// Which tensor a tile belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Ifmap,
    Weight,
    Ofmap,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Ifmap => "ifmap",
            Role::Weight => "weight",
            Role::Ofmap => "ofmap",
        })
    }
}

/// Direction of a DRAM access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Read,
    Write,
}

/// Which operand a row keeps anchored in the global buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reuse {
    InputReuse,
    OutputReuse,
    WeightReuse,
}

/// Loop dimensions a schedule may iterate over.
///
/// `K` ranges over output channels, `C` over input channels (the contraction
/// for convolution/matmul), `H`/`W` over the spatial grid. For matrix
/// multiply (`A: HxC, B: CxW, out: HxW`) the `W` dimension plays the role of
/// the output-column axis and `K` mirrors it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoopDim {
    K,
    C,
    H,
    W,
}

/// One iterator symbol in a loop order: a dimension plus whether it steps in
/// tiles (`k_T`) or single elements (`k`, which forces that tile size to 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LoopToken {
    pub dim: LoopDim,
    pub tiled: bool,
}

impl LoopToken {
    pub const fn tiled(dim: LoopDim) -> Self {
        LoopToken { dim, tiled: true }
    }
    pub const fn unit(dim: LoopDim) -> Self {
        LoopToken { dim, tiled: false }
    }
}

impl fmt::Display for LoopToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.dim {
            LoopDim::K => "k",
            LoopDim::C => "c",
            LoopDim::H => "h",
            LoopDim::W => "w",
        };
        if self.tiled {
            write!(f, "{base}_T")
        } else {
            f.write_str(base)
        }
    }
}

impl std::str::FromStr for LoopToken {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (base, tiled) = match s.strip_suffix("_T") {
            Some(base) => (base, true),
            None => (s, false),
        };
        let dim = match base {
            "k" => LoopDim::K,
            "c" => LoopDim::C,
            "h" => LoopDim::H,
            "w" => LoopDim::W,
            other => return Err(format!("unknown loop iterator `{other}`")),
        };
        Ok(LoopToken { dim, tiled })
    }
}

/// Renders a loop order like `h_T > w_T > c > k_T`.
pub fn format_loop_order(tokens: &[LoopToken]) -> String {
    tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" > ")
}

/// Dimensions of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output fmap count. For MatMul this mirrors `w` (output columns).
    pub k: u32,
    /// Input fmap count; the contraction dimension where one exists.
    pub c: u32,
    /// Rows per fmap.
    pub h: u32,
    /// Cols per fmap. For MatMul: output columns of `B: CxW`.
    pub w: u32,
    /// Filter rows (1 where not meaningful).
    pub r: u32,
    /// Filter cols (1 where not meaningful).
    pub s: u32,
    /// Ordinal of this layer within its network, starting at 1.
    pub layer_id: u32,
}

impl LayerSpec {
    /// Checks the structural invariants of the layer kind.
    pub fn validate(&self) -> Result<()> {
        let LayerSpec { k, c, h, w, r, s, .. } = *self;
        if k == 0 || c == 0 || h == 0 || w == 0 || r == 0 || s == 0 {
            return Err(Error::InvalidLayer(format!(
                "layer {}: all dimensions must be >= 1",
                self.layer_id
            )));
        }
        match self.kind {
            LayerKind::Convolution => Ok(()),
            LayerKind::MatMul => {
                if r != 1 || s != 1 {
                    Err(Error::InvalidLayer(format!(
                        "layer {}: matmul has no filter window (R=S=1 required)",
                        self.layer_id
                    )))
                } else if k != w {
                    Err(Error::InvalidLayer(format!(
                        "layer {}: matmul output count K must equal W (got K={k}, W={w})",
                        self.layer_id
                    )))
                } else {
                    Ok(())
                }
            }
            LayerKind::PreprocStyle1 | LayerKind::Pooling => {
                if k != c {
                    Err(Error::InvalidLayer(format!(
                        "layer {}: channel-wise layer requires K = C (got K={k}, C={c})",
                        self.layer_id
                    )))
                } else {
                    Ok(())
                }
            }
            LayerKind::PreprocStyle2 => {
                if k != 1 {
                    Err(Error::InvalidLayer(format!(
                        "layer {}: style-2 pre-processing merges channels (K=1 required, got {k})",
                        self.layer_id
                    )))
                } else if r != 1 || s != 1 {
                    Err(Error::InvalidLayer(format!(
                        "layer {}: style-2 pre-processing has no filter window",
                        self.layer_id
                    )))
                } else {
                    Ok(())
                }
            }
            LayerKind::PreprocStyle3 => {
                if r != 1 || s != 1 {
                    Err(Error::InvalidLayer(format!(
                        "layer {}: style-3 pre-processing has no filter window",
                        self.layer_id
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Total multiply-accumulate style operations, the compute-cycle stub.
    pub fn op_count(&self) -> u64 {
        let LayerSpec { k, c, h, w, r, s, .. } = *self;
        match self.kind {
            LayerKind::Convolution => {
                k as u64 * c as u64 * h as u64 * w as u64 * r as u64 * s as u64
            }
            LayerKind::MatMul => h as u64 * w as u64 * c as u64,
            LayerKind::PreprocStyle1 | LayerKind::Pooling => {
                k as u64 * h as u64 * w as u64 * r as u64 * s as u64
            }
            LayerKind::PreprocStyle2 => c as u64 * h as u64 * w as u64,
            LayerKind::PreprocStyle3 => k as u64 * c as u64 * h as u64 * w as u64,
        }
    }
}

/// Pads a layer's spatial extent (model-shape hiding study).
///
/// The padded region is junk data but is traced, encrypted, and verified
/// exactly like real data.
pub fn widen_layer(layer: &LayerSpec, target_hw: (u32, u32)) -> Result<LayerSpec> {
    let (target_h, target_w) = target_hw;
    if target_h < layer.h || target_w < layer.w {
        return Err(Error::ShrinkNotAllowed {
            h: layer.h,
            w: layer.w,
            target_h,
            target_w,
        });
    }
    Ok(LayerSpec {
        h: target_h,
        w: target_w,
        ..*layer
    })
}

/// Rounds layer dimensions up to the next multiple of each tile size so the
/// divisibility requirement holds (explicit zero padding).
pub fn pad_to_divisible(layer: &LayerSpec, sched: &TileSchedule) -> LayerSpec {
    fn round_up(v: u32, t: u32) -> u32 {
        v.div_ceil(t.max(1)) * t.max(1)
    }
    let mut out = *layer;
    out.k = round_up(layer.k, sched.k_t);
    out.c = round_up(layer.c, sched.c_t);
    out.h = round_up(layer.h, sched.h_t);
    out.w = round_up(layer.w, sched.w_t);
    // Kind invariants tie some dimensions together; keep them tied.
    match layer.kind {
        LayerKind::PreprocStyle1 | LayerKind::Pooling => {
            let m = out.k.max(out.c);
            out.k = m;
            out.c = m;
        }
        LayerKind::MatMul => out.k = out.w,
        LayerKind::PreprocStyle2 => out.k = 1,
        _ => {}
    }
    out
}

/// Tile sizes plus the loop order of one pattern-table row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSchedule {
    pub k_t: u32,
    pub c_t: u32,
    pub h_t: u32,
    pub w_t: u32,
    /// Iterator nest, outermost first. Must match the named row.
    pub loop_order: Vec<LoopToken>,
    /// Operand the row anchors on-chip; `None` for rows whose table leaves
    /// it unstated (matmul, single-operand pre-processing).
    pub reuse: Option<Reuse>,
    /// Which pattern-table row this schedule instantiates.
    pub style_row: StyleRow,
}

impl TileSchedule {
    /// Builds the canonical schedule for a row with the given tile sizes.
    pub fn for_row(row: StyleRow, k_t: u32, c_t: u32, h_t: u32, w_t: u32) -> Result<Self> {
        let def = row_def(row).ok_or_else(|| Error::UnknownRow(row.to_string()))?;
        Ok(TileSchedule {
            k_t,
            c_t,
            h_t,
            w_t,
            loop_order: def.nest.to_vec(),
            reuse: def.reuse,
            style_row: row,
        })
    }
}

/// A layer paired with the schedule that will execute it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledLayer {
    pub layer: LayerSpec,
    pub sched: TileSchedule,
}

/// Tile-count ratios per dimension (all exact by the divisibility rule).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphas {
    pub k: u32,
    pub c: u32,
    pub h: u32,
    pub w: u32,
}

impl Alphas {
    pub fn for_schedule(layer: &LayerSpec, sched: &TileSchedule) -> Result<Self> {
        fn ratio(dim: &'static str, value: u32, tile: u32) -> Result<u32> {
            if tile == 0 || !value.is_multiple_of(tile) {
                Err(Error::NonDivisibleTiling { dim, value, tile })
            } else {
                Ok(value / tile)
            }
        }
        Ok(Alphas {
            k: ratio("K", layer.k, sched.k_t)?,
            c: ratio("C", layer.c, sched.c_t)?,
            h: ratio("H", layer.h, sched.h_t)?,
            w: ratio("W", layer.w, sched.w_t)?,
        })
    }

    pub fn hw(&self) -> u64 {
        self.h as u64 * self.w as u64
    }
}

/// Identity of one tile within a layer's tensors.
///
/// `channel` indexes the channel-group (`c_T` for ifmaps/weights, `k_T` for
/// ofmaps; the output-column group for matmul outputs). `row`/`col` index the
/// spatial tile grid; weight tiles use `row` for their output-channel group
/// and `col = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileId {
    pub role: Role,
    pub layer_id: u32,
    pub channel: u32,
    pub row: u32,
    pub col: u32,
}

/// One tile-granularity DRAM access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    /// Dense, strictly increasing ordinal within the layer's trace.
    pub seq: u64,
    pub tile: TileId,
    pub dir: Direction,
    /// Set on the final write of an ofmap tile (never read back in-layer).
    pub last_write: bool,
}

/// The full ordered access stream of one layer.
#[derive(Debug, Clone)]
pub struct AccessTrace {
    pub layer: LayerSpec,
    pub schedule: TileSchedule,
    pub events: Vec<AccessEvent>,
}

impl AccessTrace {
    pub fn ofmap_writes(&self) -> impl Iterator<Item = &AccessEvent> {
        self.events
            .iter()
            .filter(|e| e.tile.role == Role::Ofmap && e.dir == Direction::Write)
    }

    pub fn ofmap_reads(&self) -> impl Iterator<Item = &AccessEvent> {
        self.events
            .iter()
            .filter(|e| e.tile.role == Role::Ofmap && e.dir == Direction::Read)
    }

    /// Writes the trace in the one-event-per-line exchange format:
    /// `seq,layer,role,channel,row_tile,col_tile,R|W,last_write_flag`.
    pub fn write_csv<W: IoWrite>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "seq,layer,role,channel,row_tile,col_tile,dir,last_write")?;
        for e in &self.events {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                e.seq,
                self.layer.layer_id,
                e.tile.role,
                e.tile.channel,
                e.tile.row,
                e.tile.col,
                match e.dir {
                    Direction::Read => "R",
                    Direction::Write => "W",
                },
                u8::from(e.last_write),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loop_token_round_trip() {
        for s in ["k", "c_T", "h_T", "w"] {
            let t: LoopToken = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("q_T".parse::<LoopToken>().is_err());
    }

    #[test]
    fn widen_grows_and_rejects_shrink() {
        let base = LayerSpec {
            kind: LayerKind::Convolution,
            k: 8,
            c: 3,
            h: 32,
            w: 32,
            r: 3,
            s: 3,
            layer_id: 1,
        };
        let wide = widen_layer(&base, (64, 64)).unwrap();
        assert_eq!((wide.h, wide.w), (64, 64));
        assert_eq!(wide.c, 3);
        // Identity widening is allowed.
        assert_eq!(widen_layer(&base, (32, 32)).unwrap(), base);
        assert!(matches!(
            widen_layer(&base, (16, 64)),
            Err(Error::ShrinkNotAllowed { .. })
        ));
    }

    #[test]
    fn pad_rounds_up_to_tile_multiples() {
        let layer = LayerSpec {
            kind: LayerKind::Convolution,
            k: 5,
            c: 3,
            h: 30,
            w: 30,
            r: 3,
            s: 3,
            layer_id: 1,
        };
        let sched = TileSchedule::for_row("conv-ir-2".parse().unwrap(), 2, 2, 16, 16).unwrap();
        let padded = pad_to_divisible(&layer, &sched);
        assert_eq!((padded.k, padded.c, padded.h, padded.w), (6, 4, 32, 32));
        assert!(Alphas::for_schedule(&padded, &sched).is_ok());
    }

    #[test]
    fn matmul_requires_unit_window() {
        let bad = LayerSpec {
            kind: LayerKind::MatMul,
            k: 4,
            c: 8,
            h: 16,
            w: 4,
            r: 3,
            s: 1,
            layer_id: 1,
        };
        assert!(bad.validate().is_err());
    }
}
