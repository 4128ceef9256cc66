//! Catalog of every supported pattern-table row.
//!
//! Each row fixes a loop order plus tiling constraints. `nest` is the
//! canonical executable order: the nest whose one-tile-resident replay
//! reproduces the row's published VN pattern expression. For a handful of
//! rows the publication's loop-order cell is internally inconsistent with its
//! own pattern expression (or two rows print the same order with different
//! patterns); for those, `printed` preserves the cell verbatim while `nest`
//! follows the pattern expression, which is the authoritative artifact.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Alphas, LayerKind, LayerSpec, LoopDim, LoopToken, Reuse, TileSchedule};
use crate::{Error, Result};

/// Which table (and anchoring column, where the table has several) a row
/// comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RowFamily {
    /// Convolution, input tiles anchored in the GB.
    ConvInput,
    /// Convolution, output tiles anchored (partial sums never leave).
    ConvOutput,
    /// Convolution with whole-fmap tiles, weights anchored.
    ConvWeight,
    /// Matrix multiply (`A: HxC, B: CxW`), one operand fixed per row.
    MatMul,
    /// Channel-wise transforms and pooling (K = C).
    Style1,
    /// Channel-merging pre-processing (K = 1).
    Style2,
    /// Cross-channel pre-processing, output tiles anchored.
    Style3Output,
    /// Cross-channel pre-processing, input tiles anchored.
    Style3Input,
}

impl RowFamily {
    /// Layer kinds that may schedule rows of this family.
    pub fn kinds(self) -> &'static [LayerKind] {
        match self {
            RowFamily::ConvInput | RowFamily::ConvOutput | RowFamily::ConvWeight => {
                &[LayerKind::Convolution]
            }
            RowFamily::MatMul => &[LayerKind::MatMul],
            RowFamily::Style1 => &[LayerKind::PreprocStyle1, LayerKind::Pooling],
            RowFamily::Style2 => &[LayerKind::PreprocStyle2],
            RowFamily::Style3Output | RowFamily::Style3Input => &[LayerKind::PreprocStyle3],
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            RowFamily::ConvInput => "conv-ir",
            RowFamily::ConvOutput => "conv-or",
            RowFamily::ConvWeight => "conv-wr",
            RowFamily::MatMul => "mm",
            RowFamily::Style1 => "s1",
            RowFamily::Style2 => "s2",
            RowFamily::Style3Output => "s3-or",
            RowFamily::Style3Input => "s3-ir",
        }
    }
}

/// A row identifier such as `conv-ir-1` or `s3-or-7`. `index` is the row
/// number within its table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StyleRow {
    pub family: RowFamily,
    pub index: u8,
}

impl fmt::Display for StyleRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.family.prefix(), self.index)
    }
}

impl std::str::FromStr for StyleRow {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (prefix, index) = s
            .rsplit_once('-')
            .ok_or_else(|| format!("malformed row id `{s}`"))?;
        let family = match prefix {
            "conv-ir" => RowFamily::ConvInput,
            "conv-or" => RowFamily::ConvOutput,
            "conv-wr" => RowFamily::ConvWeight,
            "mm" => RowFamily::MatMul,
            "s1" => RowFamily::Style1,
            "s2" => RowFamily::Style2,
            "s3-or" => RowFamily::Style3Output,
            "s3-ir" => RowFamily::Style3Input,
            other => return Err(format!("unknown row family `{other}`")),
        };
        let index: u8 = index.parse().map_err(|_| format!("bad row index in `{s}`"))?;
        Ok(StyleRow { family, index })
    }
}

/// Full definition of one catalogued row.
#[derive(Debug, Clone, Copy)]
pub struct RowDef {
    pub row: StyleRow,
    pub reuse: Option<Reuse>,
    /// Canonical executable loop nest, outermost first.
    pub nest: &'static [LoopToken],
    /// Loop order exactly as published (differs from `nest` where the
    /// publication's cell contradicts its own pattern expression).
    pub printed: &'static str,
    /// Row requires whole-fmap spatial tiles (H_T = H, W_T = W).
    pub spatial_full: bool,
    /// Row keeps the whole contraction on-chip (C_T = C).
    pub ct_full: bool,
    /// Row processes all output channels per spatial tile (K_T = K).
    pub kt_full: bool,
}

const K_T: LoopToken = LoopToken::tiled(LoopDim::K);
const C_T: LoopToken = LoopToken::tiled(LoopDim::C);
const H_T: LoopToken = LoopToken::tiled(LoopDim::H);
const W_T: LoopToken = LoopToken::tiled(LoopDim::W);
const K1: LoopToken = LoopToken::unit(LoopDim::K);
const C1: LoopToken = LoopToken::unit(LoopDim::C);
const H1: LoopToken = LoopToken::unit(LoopDim::H);
const W1: LoopToken = LoopToken::unit(LoopDim::W);

#[derive(Clone, Copy)]
struct Flags {
    spatial_full: bool,
    ct_full: bool,
    kt_full: bool,
}

const PLAIN: Flags = Flags { spatial_full: false, ct_full: false, kt_full: false };
const SPATIAL_FULL: Flags = Flags { spatial_full: true, ..PLAIN };
const CT_FULL: Flags = Flags { ct_full: true, ..PLAIN };
const KT_FULL: Flags = Flags { kt_full: true, ..PLAIN };
const SPATIAL_CT_FULL: Flags = Flags { spatial_full: true, ct_full: true, kt_full: false };

const fn def(
    family: RowFamily,
    index: u8,
    reuse: Option<Reuse>,
    nest: &'static [LoopToken],
    printed: &'static str,
    flags: Flags,
) -> RowDef {
    RowDef {
        row: StyleRow { family, index },
        reuse,
        nest,
        printed,
        spatial_full: flags.spatial_full,
        ct_full: flags.ct_full,
        kt_full: flags.kt_full,
    }
}

const IR: Option<Reuse> = Some(Reuse::InputReuse);
const OR: Option<Reuse> = Some(Reuse::OutputReuse);
const WR: Option<Reuse> = Some(Reuse::WeightReuse);
const NR: Option<Reuse> = None;

/// Every supported row, in table order.
pub static ROWS: &[RowDef] = &[
    // Convolution, input tiles anchored. Rows 1/3 fix C_T = 1; row 5 uses
    // whole-fmap spatial tiles; row 6 keeps every input channel on-chip.
    def(RowFamily::ConvInput, 1, IR, &[H_T, W_T, C1, K_T], "h_T > w_T > c > k_T", PLAIN),
    def(RowFamily::ConvInput, 2, IR, &[H_T, W_T, C_T, K_T], "h_T > w_T > c_T > k_T", PLAIN),
    def(RowFamily::ConvInput, 3, IR, &[C1, H_T, W_T, K_T], "c > h_T > w_T > k_T", PLAIN),
    def(RowFamily::ConvInput, 4, IR, &[C_T, H_T, W_T, K_T], "c_T > h_T > w_T > k_T", PLAIN),
    def(RowFamily::ConvInput, 5, IR, &[C_T, K_T], "c_T > k_T", SPATIAL_FULL),
    def(RowFamily::ConvInput, 6, IR, &[H_T, W_T, K_T], "h_T > w_T > k_T", CT_FULL),
    // Convolution, output tiles anchored; the contraction runs innermost so
    // partial sums never leave the GB. Rows 3/4 of the table are marked
    // absent and are not catalogued.
    def(RowFamily::ConvOutput, 1, OR, &[H_T, W_T, K_T, C1], "h_T > w_T > k_T > c", PLAIN),
    def(RowFamily::ConvOutput, 2, OR, &[H_T, W_T, K_T, C_T], "h_T > w_T > k_T > c_T", PLAIN),
    def(RowFamily::ConvOutput, 5, OR, &[K_T, C_T], "k_T > c_T", SPATIAL_FULL),
    def(RowFamily::ConvOutput, 6, OR, &[H_T, W_T, K_T], "h_T > w_T > k_T", CT_FULL),
    // Convolution with whole-fmap tiles, weights anchored.
    def(RowFamily::ConvWeight, 1, WR, &[C_T, K_T], "c_T > k_T", SPATIAL_FULL),
    def(RowFamily::ConvWeight, 2, WR, &[K_T, C1], "k_T > c", SPATIAL_FULL),
    def(RowFamily::ConvWeight, 3, WR, &[K_T], "k_T", SPATIAL_CT_FULL),
    // Matrix multiply. Row 2's published order contradicts its own pattern
    // expression (it would group by h_T, not w_T); the nest follows the
    // pattern.
    def(RowFamily::MatMul, 1, NR, &[H_T, C_T, W_T], "h_T > c_T > w_T", PLAIN),
    def(RowFamily::MatMul, 2, NR, &[W_T, C_T, H_T], "c_T > w_T > h_T", PLAIN),
    def(RowFamily::MatMul, 3, NR, &[W_T, H_T, C_T], "w_T > h_T > c_T", PLAIN),
    // Style-1 pre-processing and pooling: channel k reads only channel k,
    // so there is no contraction and every write is final.
    def(RowFamily::Style1, 1, NR, &[K1], "k", SPATIAL_FULL),
    def(RowFamily::Style1, 2, NR, &[K_T], "k_T", SPATIAL_FULL),
    def(RowFamily::Style1, 3, NR, &[H1, W1, K_T], "h > w > k_T", PLAIN),
    def(RowFamily::Style1, 4, NR, &[H_T, W_T, K_T], "h_T > w_T > k_T", PLAIN),
    def(RowFamily::Style1, 5, NR, &[H_T, W_T], "h_T > w_T", KT_FULL),
    // Style-2 pre-processing (K = 1): rows 1/2 keep the single output fmap
    // resident for the whole layer, so exactly one write is observed.
    def(RowFamily::Style2, 1, NR, &[C1], "c", SPATIAL_FULL),
    def(RowFamily::Style2, 2, NR, &[C_T], "c_T", SPATIAL_FULL),
    def(RowFamily::Style2, 3, NR, &[H_T, W_T, C1], "h_T > w_T > c", PLAIN),
    def(RowFamily::Style2, 4, NR, &[H_T, W_T, C_T], "h_T > w_T > c_T", PLAIN),
    def(RowFamily::Style2, 5, NR, &[C1, H_T, W_T], "c > h_T > w_T", PLAIN),
    def(RowFamily::Style2, 6, NR, &[C_T, H_T, W_T], "c_T > h_T > w_T", PLAIN),
    def(RowFamily::Style2, 7, NR, &[H_T, W_T], "h_T > w_T", CT_FULL),
    // Style-3 pre-processing. The published table swaps rows 1/2's loop
    // orders between the two anchoring columns, and prints identical orders
    // for input-anchored rows 3/5 (and 4/6) despite distinct patterns; the
    // nests below are the ones that reproduce each row's pattern expression.
    def(RowFamily::Style3Output, 1, OR, &[K_T, C1], "c > k_T", SPATIAL_FULL),
    def(RowFamily::Style3Output, 2, OR, &[K_T, C_T], "c_T > k_T", SPATIAL_FULL),
    def(RowFamily::Style3Output, 3, OR, &[H_T, W_T, K_T, C1], "h_T > w_T > k_T > c", PLAIN),
    def(RowFamily::Style3Output, 4, OR, &[H_T, W_T, K_T, C_T], "h_T > w_T > k_T > c_T", PLAIN),
    def(RowFamily::Style3Output, 7, OR, &[H_T, W_T, K_T], "h_T > w_T > k_T", CT_FULL),
    def(RowFamily::Style3Input, 1, IR, &[C1, K_T], "k_T > c", SPATIAL_FULL),
    def(RowFamily::Style3Input, 2, IR, &[C_T, K_T], "k_T > c_T", SPATIAL_FULL),
    def(RowFamily::Style3Input, 3, IR, &[H_T, W_T, C1, K_T], "k_T > h_T > w_T > c", PLAIN),
    def(RowFamily::Style3Input, 4, IR, &[H_T, W_T, C_T, K_T], "k_T > h_T > w_T > c_T", PLAIN),
    def(RowFamily::Style3Input, 5, IR, &[C1, H_T, W_T, K_T], "k_T > h_T > w_T > c", PLAIN),
    def(RowFamily::Style3Input, 6, IR, &[C_T, H_T, W_T, K_T], "k_T > h_T > w_T > c_T", PLAIN),
    def(RowFamily::Style3Input, 7, IR, &[K_T, H_T, W_T], "k_T > h_T > w_T", CT_FULL),
];

/// Looks up a row's definition.
pub fn row_def(row: StyleRow) -> Option<&'static RowDef> {
    ROWS.iter().find(|d| d.row == row)
}

/// One entry of the row enumeration.
#[derive(Debug, Clone, Copy)]
pub struct RowInfo {
    pub kind: LayerKind,
    pub reuse: Option<Reuse>,
    pub row: StyleRow,
    pub loop_order: &'static [LoopToken],
    pub printed_loop_order: &'static str,
}

/// Enumerates every catalogued row with its canonical loop order.
pub fn enumerate_table_rows() -> Vec<RowInfo> {
    ROWS.iter()
        .map(|d| RowInfo {
            kind: d.row.family.kinds()[0],
            reuse: d.reuse,
            row: d.row,
            loop_order: d.nest,
            printed_loop_order: d.printed,
        })
        .collect()
}

/// Validates a (layer, schedule) pair against the named row's constraints
/// and returns the row definition plus the tile-count ratios.
pub fn validate_schedule(
    layer: &LayerSpec,
    sched: &TileSchedule,
) -> Result<(&'static RowDef, Alphas)> {
    layer.validate()?;
    let def = row_def(sched.style_row)
        .ok_or_else(|| Error::UnknownRow(sched.style_row.to_string()))?;
    if !def.row.family.kinds().contains(&layer.kind) {
        return Err(Error::UnsupportedCombination(format!(
            "row {} does not apply to {} layers",
            def.row, layer.kind
        )));
    }
    if sched.loop_order != def.nest {
        return Err(Error::UnknownRow(format!(
            "loop order {} does not match row {} ({})",
            super::format_loop_order(&sched.loop_order),
            def.row,
            super::format_loop_order(def.nest),
        )));
    }
    if sched.reuse != def.reuse {
        return Err(Error::UnsupportedCombination(format!(
            "row {} expects reuse {:?}, schedule says {:?}",
            def.row, def.reuse, sched.reuse
        )));
    }
    let alphas = Alphas::for_schedule(layer, sched)?;

    let constraint = |ok: bool, msg: String| -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::UnsupportedCombination(msg))
        }
    };
    for tok in def.nest {
        if !tok.tiled {
            let (name, size) = match tok.dim {
                LoopDim::K => ("K_T", sched.k_t),
                LoopDim::C => ("C_T", sched.c_t),
                LoopDim::H => ("H_T", sched.h_t),
                LoopDim::W => ("W_T", sched.w_t),
            };
            constraint(
                size == 1,
                format!("row {} iterates `{tok}` element-wise, so {name} must be 1", def.row),
            )?;
        }
    }
    if def.spatial_full {
        constraint(
            sched.h_t == layer.h && sched.w_t == layer.w,
            format!("row {} uses whole-fmap tiles (H_T=H, W_T=W)", def.row),
        )?;
    }
    if def.ct_full {
        constraint(
            sched.c_t == layer.c,
            format!("row {} keeps the whole contraction on-chip (C_T=C)", def.row),
        )?;
    }
    if def.kt_full {
        constraint(
            sched.k_t == layer.k,
            format!("row {} processes all output channels per tile (K_T=K)", def.row),
        )?;
    }
    match layer.kind {
        LayerKind::PreprocStyle1 | LayerKind::Pooling => constraint(
            sched.c_t == sched.k_t,
            format!("row {}: channel-wise layers tie C_T to K_T", def.row),
        )?,
        LayerKind::PreprocStyle2 => constraint(
            sched.k_t == 1,
            format!("row {}: K_T must be 1 when K=1", def.row),
        )?,
        LayerKind::MatMul => constraint(
            sched.k_t == sched.w_t,
            format!("row {}: matmul ties K_T to W_T (outputs are columns)", def.row),
        )?,
        _ => {}
    }
    Ok((def, alphas))
}

/// Draws a random (layer, schedule) pair satisfying the row's constraints:
/// tiled dimensions get several tiles of a small random size, element-wise
/// dimensions a small extent, and dimensions the row never iterates stay one
/// whole-size tile. Used to fuzz the pattern derivation against the trace
/// oracle across shapes.
pub fn sample_shape<R: Rng>(info: &RowInfo, rng: &mut R) -> (LayerSpec, TileSchedule) {
    let def = row_def(info.row).expect("catalogued row");
    let token = |dim| def.nest.iter().find(|t| t.dim == dim).map(|t| t.tiled);
    // Per-dimension (count, tile) with dim = count * tile.
    let mut pick = |dim| -> (u32, u32) {
        match token(dim) {
            Some(true) => (rng.gen_range(2..=4), rng.gen_range(1..=3)),
            Some(false) => (rng.gen_range(2..=5), 1),
            None => (1, rng.gen_range(2..=6)),
        }
    };
    let (ak, kt) = pick(LoopDim::K);
    let (ac, ct) = pick(LoopDim::C);
    let (ah, ht) = pick(LoopDim::H);
    let (aw, wt) = pick(LoopDim::W);
    let (mut k, mut c, h, w) = (ak * kt, ac * ct, ah * ht, aw * wt);
    let (mut k_t, mut c_t) = (kt, ct);
    let (r, s) = if info.kind == LayerKind::Convolution {
        (
            if rng.gen_bool(0.5) { 3 } else { 1 },
            if rng.gen_bool(0.5) { 3 } else { 1 },
        )
    } else {
        (1, 1)
    };
    match info.kind {
        // Outputs are columns of the product: K rides W.
        LayerKind::MatMul => {
            k = w;
            k_t = wt;
        }
        // Channel-wise: every output channel reads exactly its input channel.
        LayerKind::PreprocStyle1 | LayerKind::Pooling => {
            c = k;
            c_t = k_t;
        }
        // Merging: all input channels fold into one output fmap.
        LayerKind::PreprocStyle2 => {
            k = 1;
            k_t = 1;
        }
        _ => {}
    }
    let layer = LayerSpec {
        kind: info.kind,
        k,
        c,
        h,
        w,
        r,
        s,
        layer_id: 1,
    };
    let sched = TileSchedule {
        k_t,
        c_t,
        h_t: ht,
        w_t: wt,
        loop_order: def.nest.to_vec(),
        reuse: def.reuse,
        style_row: def.row,
    };
    validate_schedule(&layer, &sched).expect("sampled shape satisfies its row");
    (layer, sched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_rows_catalogued() {
        assert_eq!(ROWS.len(), 40);
        let infos = enumerate_table_rows();
        assert_eq!(infos.len(), 40);
        // No duplicate identifiers.
        let mut ids: Vec<String> = infos.iter().map(|i| i.row.to_string()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 40);
    }

    #[test]
    fn sampled_shapes_satisfy_their_rows() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for info in enumerate_table_rows() {
            for _ in 0..25 {
                // sample_shape validates internally; a bad draw panics.
                let (layer, sched) = sample_shape(&info, &mut rng);
                assert_eq!(sched.style_row, info.row);
                assert!(layer.validate().is_ok());
            }
        }
    }

    #[test]
    fn row_id_round_trip() {
        for def in ROWS {
            let id = def.row.to_string();
            let parsed: StyleRow = id.parse().unwrap();
            assert_eq!(parsed, def.row);
        }
        assert!("conv-xy-1".parse::<StyleRow>().is_err());
    }

    #[test]
    fn enumeration_contains_published_examples() {
        let infos = enumerate_table_rows();
        let find = |id: &str| {
            let row: StyleRow = id.parse().unwrap();
            infos.iter().find(|i| i.row == row).unwrap()
        };

        let conv1 = find("conv-ir-1");
        assert_eq!(conv1.kind, LayerKind::Convolution);
        assert_eq!(conv1.reuse, Some(Reuse::InputReuse));
        assert_eq!(
            crate::dataflow::format_loop_order(conv1.loop_order),
            "h_T > w_T > c > k_T"
        );

        let mm3 = find("mm-3");
        assert_eq!(mm3.kind, LayerKind::MatMul);
        assert_eq!(mm3.reuse, None);
        assert_eq!(
            crate::dataflow::format_loop_order(mm3.loop_order),
            "w_T > h_T > c_T"
        );

        let s2_5 = find("s2-5");
        assert_eq!(s2_5.kind, LayerKind::PreprocStyle2);
        assert_eq!(
            crate::dataflow::format_loop_order(s2_5.loop_order),
            "c > h_T > w_T"
        );
    }

    #[test]
    fn nests_have_no_duplicate_dims() {
        for def in ROWS {
            let mut dims: Vec<LoopDim> = def.nest.iter().map(|t| t.dim).collect();
            let before = dims.len();
            dims.sort_by_key(|d| *d as u8);
            dims.dedup();
            assert_eq!(dims.len(), before, "row {} repeats a dimension", def.row);
        }
    }

    #[test]
    fn validate_rejects_mismatches() {
        let layer = LayerSpec {
            kind: LayerKind::Convolution,
            k: 4,
            c: 4,
            h: 8,
            w: 8,
            r: 1,
            s: 1,
            layer_id: 1,
        };
        // Wrong kind for a matmul row.
        let sched = TileSchedule::for_row("mm-1".parse().unwrap(), 1, 2, 4, 1).unwrap();
        assert!(matches!(
            validate_schedule(&layer, &sched),
            Err(Error::UnsupportedCombination(_))
        ));
        // Unit iterator with a non-unit tile size.
        let mut sched = TileSchedule::for_row("conv-ir-1".parse().unwrap(), 2, 2, 4, 4).unwrap();
        assert!(matches!(
            validate_schedule(&layer, &sched),
            Err(Error::UnsupportedCombination(_))
        ));
        sched.c_t = 1;
        assert!(validate_schedule(&layer, &sched).is_ok());
        // Non-divisible tiling.
        let sched = TileSchedule::for_row("conv-ir-2".parse().unwrap(), 3, 2, 4, 4).unwrap();
        assert!(matches!(
            validate_schedule(&layer, &sched),
            Err(Error::NonDivisibleTiling { .. })
        ));
        // Tampered loop order.
        let mut sched = TileSchedule::for_row("conv-ir-2".parse().unwrap(), 2, 2, 4, 4).unwrap();
        sched.loop_order.reverse();
        assert!(matches!(
            validate_schedule(&layer, &sched),
            Err(Error::UnknownRow(_))
        ));
    }
}
