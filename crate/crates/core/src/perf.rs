//! End-to-end simulation: drives a network's tile traces through the sealed
//! data plane, one protection scheme's metadata machinery, and a cycle
//! model, producing traffic and verification reports.
//!
//! Timing model: DRAM transfers pipeline across channels at
//! `dram_latency / channels` cycles per block, except metadata a scheme
//! must have *before* using a block (counter-tree walks), which serialize
//! at full latency. Host version messages overlap with the event's data
//! burst; only the exposed remainder stalls. Compute is a per-layer budget
//! (`ops / pe_lanes`) spread uniformly over output-write phases; each phase
//! costs `max(compute, memory)`.
//!
//! Verification model: the pattern scheme folds every transferred block
//! into per-layer accumulator banks and checks producer/consumer boundaries
//! at layer retirement (plus a host read of the last layer's output, which
//! moves no accounted traffic). Per-block schemes compare each read's tag
//! against the tag stored at write time. The baseline checks nothing.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::crypto::{
    boundary_holds, verify_layer, BlockMeta, Engine, Mac, MacAccumulators, RegisterFile,
    SessionKey, VerificationResult, VerifyFailure,
};
use crate::dataflow::{
    generate_trace, widen_layer, Direction, GbConfig, LayerSpec, Role, ScheduledLayer,
    TileId, TileSchedule,
};
use crate::layout::NetworkLayout;
use crate::memory::{AdversaryScript, UntrustedDram};
use crate::netdesc::Network;
use crate::pattern::{derive_row_patterns, ofmap_event_versions, RowPatterns, VnState};
use crate::schemes::{MetadataEffects, Scheme, SchemeConfig, SchemeState};
use crate::{Error, Result};

/// Cycle-model knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyParams {
    /// Full DRAM round trip, cycles.
    pub dram_latency_cycles: u64,
    /// Independent DRAM channels (pipelined transfers).
    pub dram_channels: u64,
    /// Core clock, for converting cycles to wall time in reports.
    pub frequency_ghz: f64,
    /// Cost of one layer-boundary verification (pattern scheme).
    pub verification_cycles: u64,
    /// MAC lanes; compute cycles = ops / pe_lanes.
    pub pe_lanes: u64,
}

impl Default for LatencyParams {
    fn default() -> Self {
        Self {
            dram_latency_cycles: 100,
            dram_channels: 2,
            frequency_ghz: 2.75,
            verification_cycles: 100,
            pe_lanes: 1024,
        }
    }
}

impl LatencyParams {
    /// Pipelined cost of one block transfer.
    pub fn block_cycles(&self) -> u64 {
        (self.dram_latency_cycles / self.dram_channels).max(1)
    }
}

/// One recorded integrity check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    /// Layer whose output (or input stream) was being vouched for.
    pub layer: u32,
    /// `boundary`, `final-output`, `block-tags`, or `pattern`.
    pub kind: String,
    pub result: VerificationResult,
    /// First divergence position for pattern faults.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LayerReport {
    pub layer: u32,
    pub kind: String,
    pub cycles: u64,
    pub compute_cycles: u64,
    pub data_reads: u64,
    pub data_writes: u64,
    pub metadata_reads: u64,
    pub metadata_writes: u64,
    /// Of the metadata reads, those serialized on the critical path.
    pub dependent_reads: u64,
    pub merkle_reads: u64,
    pub host_messages: u64,
    pub exposed_message_cycles: u64,
    pub events: u64,
}

/// Everything one run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub network: String,
    pub scheme: Scheme,
    pub layers: Vec<LayerReport>,
    pub total_cycles: u64,
    pub data_blocks: u64,
    pub metadata_blocks: u64,
    pub total_blocks: u64,
    pub mac_cache_miss_rate: Option<f64>,
    pub counter_cache_miss_rate: Option<f64>,
    pub checks: Vec<CheckRecord>,
    /// True when every check passed and the run finished.
    pub clean: bool,
    /// True when a pattern fault stopped the run early.
    pub aborted: bool,
    /// Peak on-chip version-state entries at any instant.
    pub peak_vn_tiles: u64,
    /// Largest single-layer output tile count (the allowed budget).
    pub max_layer_tiles: u64,
    /// What a cross-layer version table would have had to hold.
    pub cumulative_vn_tiles: u64,
    /// Performance relative to the unprotected baseline (filled by
    /// scheme comparisons; 1.0 = baseline speed).
    pub normalized_perf: Option<f64>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "layer,kind,cycles,compute_cycles,data_reads,data_writes,\
             metadata_reads,metadata_writes,host_messages"
        )?;
        for l in &self.layers {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                l.layer,
                l.kind,
                l.cycles,
                l.compute_cycles,
                l.data_reads,
                l.data_writes,
                l.metadata_reads,
                l.metadata_writes,
                l.host_messages
            )?;
        }
        writeln!(
            w,
            "total,,{},,{},{},{},{},{}",
            self.total_cycles,
            self.layers.iter().map(|l| l.data_reads).sum::<u64>(),
            self.layers.iter().map(|l| l.data_writes).sum::<u64>(),
            self.layers.iter().map(|l| l.metadata_reads).sum::<u64>(),
            self.layers.iter().map(|l| l.metadata_writes).sum::<u64>(),
            self.layers.iter().map(|l| l.host_messages).sum::<u64>()
        )
    }
}

/// Simulates `net` under one scheme and returns the report together with
/// the memory (access log, mutations) for callers that inspect the bus.
pub fn simulate_with_dram(
    net: &Network,
    scheme: Scheme,
    cfg: &SchemeConfig,
    lat: &LatencyParams,
    seed: u64,
    adversary: Option<&AdversaryScript>,
) -> Result<(RunReport, UntrustedDram)> {
    let layout = NetworkLayout::new(&net.units)?;
    let engine = Engine::new(&SessionKey::from_seed(seed));
    let mut dram = UntrustedDram::new();
    let (data_base, data_blocks) = layout.regions()[0];
    dram.register_region(data_base, data_blocks);

    // Host provisioning: seal the network input and every weight tensor
    // under layer 0, version 1. Off-line, so no bus traffic is charged.
    let mut written: HashMap<u64, Mac> = HashMap::new();
    for b in layout.provisioned_blocks() {
        let meta = BlockMeta {
            layer: 0,
            fmap: b.fmap,
            vn: 1,
            block_index: b.index,
        };
        let ct = engine.encrypt_block(meta, &crate::crypto::synth_block(meta));
        dram.provision(layout.block_addr(b), ct);
        written.insert(layout.block_addr(b), engine.block_mac(meta, &ct));
    }
    if let Some(script) = adversary {
        dram.attach_adversary(script);
    }

    // Virtual producer bank for the network input: its "writes" are the
    // provisioned input blocks.
    let seculator = scheme == Scheme::Seculator;
    let mut rf = RegisterFile::new();
    if seculator {
        rf.open_layer(0);
        for f in layout.input_tensor_fmaps() {
            let info = layout.fmap(f);
            for index in 0..info.blocks as u32 {
                let addr = info.base_addr + u64::from(index) * 64;
                rf.layer_mut(0).fold_write(written[&addr]);
            }
        }
    }

    let mut st = SchemeState::new(scheme, *cfg, layout.merkle_height());
    let mut report = RunReport {
        network: net.name.clone(),
        scheme,
        layers: Vec::new(),
        total_cycles: 0,
        data_blocks: 0,
        metadata_blocks: 0,
        total_blocks: 0,
        mac_cache_miss_rate: None,
        counter_cache_miss_rate: None,
        checks: Vec::new(),
        clean: true,
        aborted: false,
        peak_vn_tiles: 0,
        max_layer_tiles: 0,
        cumulative_vn_tiles: 0,
        normalized_perf: None,
    };
    let mut clock = 0u64;
    // Final (exchanged) version of each layer's output; index 0 = host.
    let mut final_vn: Vec<u32> = vec![1];
    let block_cycles = lat.block_cycles();

    'layers: for (li, unit) in net.units.iter().enumerate() {
        let layer_id = unit.layer.layer_id;
        let trace = generate_trace(&unit.layer, &unit.sched, &GbConfig::default())?;
        let mut patterns: RowPatterns = derive_row_patterns(&unit.layer, &unit.sched)?;
        if let Some(t) = net.overrides.get(&(layer_id, Direction::Write)) {
            patterns.write = *t;
        }
        if let Some(t) = net.overrides.get(&(layer_id, Direction::Read)) {
            patterns.read = Some(*t);
        }
        let vn_of = ofmap_event_versions(&trace);
        let mut vns = VnState::new(patterns);
        final_vn.push(vns.final_version());
        let tiles_this_layer = layout.output_tiles(li);
        report.max_layer_tiles = report.max_layer_tiles.max(tiles_this_layer);
        report.cumulative_vn_tiles += tiles_this_layer;

        if seculator {
            rf.open_layer(layer_id);
        }
        let mut lr = LayerReport {
            layer: layer_id,
            kind: unit.layer.kind.to_string(),
            events: trace.events.len() as u64,
            ..Default::default()
        };
        // First-read tags of this layer's input stream, for repeat checks.
        let mut first_read: HashMap<u64, Mac> = HashMap::new();
        let mut block_tags_ok = true;
        let mut first_bad: Option<String> = None;
        let mut last_activation_tile: Option<TileId> = None;

        let writes_total = trace
            .events
            .iter()
            .filter(|e| e.tile.role == Role::Ofmap && e.dir == Direction::Write)
            .count() as u64;
        let compute_total = unit.layer.op_count() / lat.pe_lanes;
        let chunk = compute_total.checked_div(writes_total).unwrap_or(0);
        let mut writes_seen = 0u64;
        let mut phase_mem = 0u64;

        for ev in &trace.events {
            let blocks = layout.blocks_for_tile(li, ev.tile);
            let is_write = ev.dir == Direction::Write;
            let is_weight = ev.tile.role == Role::Weight;
            let mut fx = MetadataEffects::default();
            if is_weight && !blocks.is_empty() {
                fx.add(st.on_weight_tile());
            }
            for b in &blocks {
                fx.add(st.on_block(layout.global_block(*b), is_write, is_weight));
            }
            if ev.tile.role != Role::Weight
                && !blocks.is_empty()
                && last_activation_tile != Some(ev.tile)
            {
                fx.add(st.on_tile_transition());
            }
            if ev.tile.role != Role::Weight {
                last_activation_tile = Some(ev.tile);
            }

            // Version this event runs under, per role.
            let vn = match (ev.tile.role, ev.dir) {
                (Role::Ofmap, Direction::Write) => {
                    if seculator {
                        match vns.next_write_vn(ev.tile) {
                            Ok(v) => v,
                            Err(e) => {
                                pattern_fault(&mut report, layer_id, &e);
                                break 'layers;
                            }
                        }
                    } else {
                        vn_of[&ev.seq]
                    }
                }
                (Role::Ofmap, Direction::Read) => {
                    if seculator {
                        match vns.next_read_vn(ev.tile) {
                            Ok(v) => v,
                            Err(e) => {
                                pattern_fault(&mut report, layer_id, &e);
                                break 'layers;
                            }
                        }
                    } else {
                        vn_of[&ev.seq]
                    }
                }
                (Role::Weight, _) => 1,
                (Role::Ifmap, _) => final_vn[layout.producer_layer(li) as usize],
            };

            for b in &blocks {
                let addr = layout.block_addr(*b);
                let meta = BlockMeta {
                    layer: layout.fmap(b.fmap).owner_layer,
                    fmap: b.fmap,
                    vn,
                    block_index: b.index,
                };
                if is_write {
                    let ct = engine.encrypt_block(meta, &crate::crypto::synth_block(meta));
                    let mac = engine.block_mac(meta, &ct);
                    dram.write(addr, ct, clock)?;
                    written.insert(addr, mac);
                    if seculator {
                        rf.layer_mut(layer_id).fold_write(mac);
                    }
                } else {
                    let ct = dram.read(addr, clock)?;
                    let mac = engine.block_mac(meta, &ct);
                    match ev.tile.role {
                        Role::Ofmap => {
                            if seculator {
                                rf.layer_mut(layer_id).fold_read_back(mac);
                            }
                        }
                        Role::Weight => {
                            if seculator {
                                rf.layer_mut(layer_id).fold_repeat_read(mac, written[&addr]);
                            }
                        }
                        Role::Ifmap => {
                            if seculator {
                                if let Some(first) = first_read.get(&addr) {
                                    rf.layer_mut(layer_id).fold_repeat_read(mac, *first);
                                } else {
                                    first_read.insert(addr, mac);
                                    rf.layer_mut(layer_id).fold_first_read(mac);
                                }
                            }
                        }
                    }
                    if scheme.is_protected() && !seculator && written[&addr] != mac {
                        block_tags_ok = false;
                        first_bad.get_or_insert_with(|| format!("block at {addr:#x}"));
                    }
                }
            }

            // Cycle accounting for this event.
            let burst = blocks.len() as u64 * block_cycles;
            let pipelined = (fx.reads - fx.dependent_reads + fx.writes) * block_cycles;
            let dependent = fx.dependent_reads * lat.dram_latency_cycles;
            let exposed = fx.message_cycles.saturating_sub(burst);
            let mem = burst + pipelined + dependent + exposed;
            phase_mem += mem;
            clock += mem;

            if is_write {
                lr.data_writes += blocks.len() as u64;
            } else {
                lr.data_reads += blocks.len() as u64;
            }
            lr.metadata_reads += fx.reads;
            lr.metadata_writes += fx.writes;
            lr.dependent_reads += fx.dependent_reads;
            lr.merkle_reads += fx.merkle_reads;
            lr.host_messages += fx.host_messages;
            lr.exposed_message_cycles += exposed;

            if ev.tile.role == Role::Ofmap && is_write {
                writes_seen += 1;
                let mut compute = chunk;
                if writes_seen == writes_total {
                    compute += compute_total % writes_total.max(1);
                }
                let phase = phase_mem.max(compute);
                lr.cycles += phase;
                lr.compute_cycles += compute;
                clock += phase - phase_mem;
                phase_mem = 0;
            }
        }
        lr.cycles += phase_mem; // trailing events after the last write

        if seculator {
            // The engine retires version state with the layer; record the
            // high-water mark a shared cross-layer table would need.
            let live = vns.tracked_tiles() as u64;
            debug_assert!(live <= tiles_this_layer);
            report.peak_vn_tiles = report.peak_vn_tiles.max(live);
            if let Err(e) = vns.finish() {
                pattern_fault(&mut report, layer_id, &e);
                report.layers.push(lr);
                break 'layers;
            }
            lr.cycles += lat.verification_cycles;
            clock += lat.verification_cycles;
            // Retire the producer: its writes must be covered by its
            // read-backs plus this layer's first reads.
            let prev_id = layout.producer_layer(li);
            let result = verify_layer(rf.layer(prev_id), rf.layer(layer_id));
            report.checks.push(CheckRecord {
                layer: prev_id,
                kind: "boundary".into(),
                result,
                detail: None,
            });
            rf.retire(prev_id);
        } else if scheme.is_protected() {
            let result = if block_tags_ok {
                VerificationResult::Pass
            } else {
                VerificationResult::Fail(VerifyFailure::InputStream)
            };
            report.checks.push(CheckRecord {
                layer: layer_id,
                kind: "block-tags".into(),
                result,
                detail: first_bad.take(),
            });
        }
        report.layers.push(lr);
    }

    // End of run: flush dirty metadata still on chip.
    if !report.aborted {
        let fx = st.flush();
        if let Some(last) = report.layers.last_mut() {
            last.metadata_writes += fx.writes;
            last.cycles += fx.writes * block_cycles;
        }

        if seculator {
            // Host reads the last layer's output through a side channel
            // (no bus traffic): the final first-read pass that closes the
            // last boundary.
            let last_idx = net.units.len() - 1;
            let last_id = net.units[last_idx].layer.layer_id;
            let mut host = MacAccumulators::new(last_id + 1);
            for b in layout.output_blocks(last_idx) {
                let meta = BlockMeta {
                    layer: last_id,
                    fmap: b.fmap,
                    vn: final_vn[last_id as usize],
                    block_index: b.index,
                };
                let ct = dram.peek(layout.block_addr(b))?;
                host.fold_first_read(engine.block_mac(meta, &ct));
            }
            let producer = rf.layer(last_id);
            let result = if boundary_holds(producer, host.mac_fr) {
                VerificationResult::Pass
            } else {
                VerificationResult::Fail(VerifyFailure::WriteBoundary)
            };
            report.checks.push(CheckRecord {
                layer: last_id,
                kind: "final-output".into(),
                result,
                detail: None,
            });
        }
    }

    for l in &report.layers {
        report.total_cycles += l.cycles;
        report.data_blocks += l.data_reads + l.data_writes;
        report.metadata_blocks += l.metadata_reads + l.metadata_writes;
    }
    report.total_blocks = report.data_blocks + report.metadata_blocks;
    report.mac_cache_miss_rate = st.mac_cache().map(|c| c.miss_rate());
    report.counter_cache_miss_rate = st.counter_cache().map(|c| c.miss_rate());
    report.clean = !report.aborted && report.checks.iter().all(|c| c.result.is_pass());
    Ok((report, dram))
}

fn pattern_fault(report: &mut RunReport, layer: u32, e: &Error) {
    report.checks.push(CheckRecord {
        layer,
        kind: "pattern".into(),
        result: VerificationResult::Fail(VerifyFailure::WriteBoundary),
        detail: Some(e.to_string()),
    });
    report.aborted = true;
    report.clean = false;
}

/// Simulates and returns only the report.
pub fn simulate(
    net: &Network,
    scheme: Scheme,
    cfg: &SchemeConfig,
    lat: &LatencyParams,
    seed: u64,
    adversary: Option<&AdversaryScript>,
) -> Result<RunReport> {
    simulate_with_dram(net, scheme, cfg, lat, seed, adversary).map(|(r, _)| r)
}

/// One scheme's line in a comparison.
#[derive(Debug, Clone, Serialize)]
pub struct SchemeRow {
    pub scheme: Scheme,
    pub cycles: u64,
    pub data_blocks: u64,
    pub metadata_blocks: u64,
    pub total_blocks: u64,
    pub normalized_perf: f64,
    pub clean: bool,
}

/// All schemes over one workload, normalized to the baseline.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub network: String,
    pub rows: Vec<SchemeRow>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "scheme,cycles,data_blocks,metadata_blocks,total_blocks,normalized_perf,clean"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{:.6},{}",
                r.scheme,
                r.cycles,
                r.data_blocks,
                r.metadata_blocks,
                r.total_blocks,
                r.normalized_perf,
                r.clean
            )?;
        }
        Ok(())
    }

    pub fn row(&self, scheme: Scheme) -> &SchemeRow {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme)
            .expect("scheme present in comparison")
    }
}

/// Runs every requested scheme over the network.
pub fn compare_schemes(
    net: &Network,
    schemes: &[Scheme],
    cfg: &SchemeConfig,
    lat: &LatencyParams,
    seed: u64,
) -> Result<ComparisonReport> {
    let baseline = simulate(net, Scheme::Baseline, cfg, lat, seed, None)?;
    let mut rows = Vec::new();
    for &scheme in schemes {
        let r = if scheme == Scheme::Baseline {
            baseline.clone()
        } else {
            simulate(net, scheme, cfg, lat, seed, None)?
        };
        rows.push(SchemeRow {
            scheme,
            cycles: r.total_cycles,
            data_blocks: r.data_blocks,
            metadata_blocks: r.metadata_blocks,
            total_blocks: r.total_blocks,
            normalized_perf: baseline.total_cycles as f64 / r.total_cycles as f64,
            clean: r.clean,
        });
    }
    Ok(ComparisonReport {
        network: net.name.clone(),
        rows,
    })
}

/// One scheme's latency ratios across widened variants of a base layer.
#[derive(Debug, Clone, Serialize)]
pub struct WideningRow {
    pub scheme: Scheme,
    pub cycles: Vec<u64>,
    /// Latency at each width divided by the same scheme's latency at the
    /// first (base) width.
    pub ratios: Vec<f64>,
}

/// Scalability of each scheme as one layer's spatial extent grows.
#[derive(Debug, Clone, Serialize)]
pub struct WideningReport {
    pub widths: Vec<u32>,
    pub rows: Vec<WideningRow>,
}

impl WideningReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "scheme")?;
        for width in &self.widths {
            write!(w, ",x{width}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(w, "{}", r.scheme)?;
            for ratio in &r.ratios {
                write!(w, ",{ratio:.6}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn row(&self, scheme: Scheme) -> &WideningRow {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme)
            .expect("scheme present in study")
    }
}

/// Re-tiles a widened copy of the base layer: tile height follows the
/// layer (the row-band count stays fixed), while tile width keeps the
/// buffer's row granularity unless the base tile already spanned the full
/// row. Full-dimension tiles stay full, so a spatial-full schedule keeps
/// its row.
fn rescale_tiles(base: &ScheduledLayer, widened: &LayerSpec) -> Result<TileSchedule> {
    let grow = |tile: u32, from: u32, to: u32, dim: &'static str| -> Result<u32> {
        let n = tile as u64 * to as u64;
        if !n.is_multiple_of(from as u64) {
            return Err(Error::NonDivisibleTiling {
                dim,
                value: to,
                tile,
            });
        }
        Ok((n / from as u64) as u32)
    };
    let w_t = if base.sched.w_t == base.layer.w {
        widened.w
    } else {
        if !widened.w.is_multiple_of(base.sched.w_t) {
            return Err(Error::NonDivisibleTiling {
                dim: "w",
                value: widened.w,
                tile: base.sched.w_t,
            });
        }
        base.sched.w_t
    };
    Ok(TileSchedule {
        h_t: grow(base.sched.h_t, base.layer.h, widened.h, "h")?,
        w_t,
        ..base.sched.clone()
    })
}

/// Pads the base layer out to each square width (junk pixels included in
/// the trace like real ones), rescales its tiling, and simulates every
/// scheme on the result. The first width is the normalization base, so it
/// must be the smallest.
pub fn widening_study(
    base: &ScheduledLayer,
    widths: &[u32],
    schemes: &[Scheme],
    cfg: &SchemeConfig,
    lat: &LatencyParams,
    seed: u64,
) -> Result<WideningReport> {
    let mut nets = Vec::new();
    for &width in widths {
        let layer = widen_layer(&base.layer, (width, width))?;
        let sched = rescale_tiles(base, &layer)?;
        let net = Network {
            name: format!("widen_{width}"),
            units: vec![ScheduledLayer { layer, sched }],
            overrides: BTreeMap::new(),
        };
        nets.push(net);
    }
    let mut rows = Vec::new();
    for &scheme in schemes {
        let cycles: Vec<u64> = nets
            .iter()
            .map(|net| simulate(net, scheme, cfg, lat, seed, None).map(|r| r.total_cycles))
            .collect::<Result<_>>()?;
        let base_cycles = cycles[0] as f64;
        let ratios = cycles.iter().map(|&c| c as f64 / base_cycles).collect();
        rows.push(WideningRow {
            scheme,
            cycles,
            ratios,
        });
    }
    Ok(WideningReport {
        widths: widths.to_vec(),
        rows,
    })
}
