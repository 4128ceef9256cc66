//! Randomized memory-attack campaigns against a running network.
//!
//! A campaign dry-runs the workload once to learn the bus schedule, then
//! for each trial picks an injection point where the mutated block is
//! provably consumed afterwards (the tampered/replayed/swapped data is
//! fetched by the very read that trips the trigger; a dropped write is
//! followed by a later read of the same address or lands in the final
//! output the host reads back). Every trial is a full simulation with a
//! short adversary script; detection means the run's report is not clean.
//! Positions index the data-block access log, which is identical across
//! schemes, so one dry run serves any scheme.
//!
//! Replay and drop-write corrupt *versioned state*, so the version-binding
//! tag pairing flags them no matter how long the corruption lingers.
//! Tamper and swap are modeled as bus-level injections against one victim
//! read — the block is restored before the next read of that address (a
//! trailing write overwrites it anyway). A corruption parked in memory
//! across an *even* number of repeat reads of the same block would cancel
//! in an XOR aggregate; pinning the corruption to a single fetch is both
//! the classic bus-attack model and the variant every read pairing sees.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::dataflow::Direction;
use crate::layout::NetworkLayout;
use crate::memory::{Action, AdversaryScript, Effect, Trigger};
use crate::netdesc::Network;
use crate::perf::{simulate, simulate_with_dram, LatencyParams};
use crate::schemes::{Scheme, SchemeConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackClass {
    Tamper,
    ReplayStale,
    Swap,
    DropWrite,
}

impl AttackClass {
    pub const ALL: [AttackClass; 4] = [
        AttackClass::Tamper,
        AttackClass::ReplayStale,
        AttackClass::Swap,
        AttackClass::DropWrite,
    ];
}

impl fmt::Display for AttackClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AttackClass::Tamper => "tamper",
            AttackClass::ReplayStale => "replay-stale",
            AttackClass::Swap => "swap",
            AttackClass::DropWrite => "drop-write",
        };
        write!(f, "{name}")
    }
}

/// Outcome of one injection class.
#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub class: AttackClass,
    pub trials: u32,
    pub detected: u32,
    /// Scripts that slipped through, for diagnosis (capped).
    pub undetected: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignReport {
    pub network: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub classes: Vec<ClassReport>,
}

impl CampaignReport {
    pub fn all_detected(&self) -> bool {
        self.classes.iter().all(|c| c.detected == c.trials)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "class,trials,detected")?;
        for c in &self.classes {
            writeln!(w, "{},{},{}", c.class, c.trials, c.detected)?;
        }
        Ok(())
    }
}

/// Injection points learned from the dry run.
struct TargetPools {
    /// Every read: (1-based bus position, address).
    reads: Vec<(u64, u64)>,
    /// Reads of addresses that had >= 2 prior writes: (pos, addr, max depth
    /// that still lands on a real stale version).
    replayable: Vec<(u64, u64, u32)>,
    /// Writes followed by a read of the same address, or covered by the
    /// host's final-output pass: (pos, addr).
    droppable: Vec<(u64, u64)>,
}

fn build_pools(net: &Network, scheme: Scheme, log_source: &crate::memory::UntrustedDram) -> Result<TargetPools> {
    let layout = NetworkLayout::new(&net.units)?;
    let final_outputs: BTreeSet<u64> = layout
        .output_blocks(net.units.len() - 1)
        .map(|b| layout.block_addr(b))
        .collect();
    let log = &log_source.log;
    let mut write_count: HashMap<u64, u32> = HashMap::new();
    let mut reads = Vec::new();
    let mut replayable = Vec::new();
    let mut writes = Vec::new();
    for (i, e) in log.iter().enumerate() {
        let pos = i as u64 + 1;
        match e.dir {
            Direction::Read => {
                reads.push((pos, e.addr));
                let wc = write_count.get(&e.addr).copied().unwrap_or(0);
                if wc >= 2 {
                    replayable.push((pos, e.addr, wc - 1));
                }
            }
            Direction::Write => {
                *write_count.entry(e.addr).or_insert(0) += 1;
                writes.push((pos, e.addr));
            }
        }
    }
    let mut last_read: HashMap<u64, u64> = HashMap::new();
    for &(pos, addr) in &reads {
        last_read.insert(addr, pos);
    }
    // The host pass only runs under the pattern scheme; per-block schemes
    // need an in-band read after the drop.
    let host_pass = scheme == Scheme::Seculator;
    let droppable: Vec<(u64, u64)> = writes
        .iter()
        .copied()
        .filter(|&(pos, addr)| {
            last_read.get(&addr).is_some_and(|&r| r > pos)
                || (host_pass && final_outputs.contains(&addr))
        })
        .collect();
    Ok(TargetPools {
        reads,
        replayable,
        droppable,
    })
}

/// Runs `trials` injections of every class against the network under one
/// scheme. Each trial is an independent simulation carrying exactly one
/// adversary action aimed at data some later (or triggering) read consumes.
pub fn run_campaign(
    net: &Network,
    scheme: Scheme,
    cfg: &SchemeConfig,
    lat: &LatencyParams,
    seed: u64,
    trials: u32,
) -> Result<CampaignReport> {
    let (_, dram) = simulate_with_dram(net, scheme, cfg, lat, seed, None)?;
    let pools = build_pools(net, scheme, &dram)?;
    // Per-address access order, for placing the restore that keeps a
    // tamper or swap pinned to its single victim read.
    let mut access_seq: HashMap<u64, Vec<(u64, Direction)>> = HashMap::new();
    for (i, e) in dram.log.iter().enumerate() {
        access_seq.entry(e.addr).or_default().push((i as u64 + 1, e.dir));
    }
    for (pool, name) in [
        (pools.reads.len(), "tamper/swap"),
        (pools.replayable.len(), "replay-stale"),
        (pools.droppable.len(), "drop-write"),
    ] {
        if pool == 0 {
            return Err(Error::UnsupportedCombination(format!(
                "workload offers no {name} injection points"
            )));
        }
    }

    let mut classes = Vec::new();
    for (ci, class) in AttackClass::ALL.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(0x9e37 * ci as u64));
        let mut detected = 0;
        let mut undetected = Vec::new();
        for _ in 0..trials {
            let actions = match class {
                AttackClass::Tamper => {
                    let (pos, addr) = pools.reads[rng.gen_range(0..pools.reads.len())];
                    let offset = rng.gen_range(0..64);
                    let mask = rng.gen_range(1..=255);
                    let mut acts = vec![Action {
                        trigger: Trigger::AfterAccess(pos),
                        effect: Effect::TamperBits { addr, offset, mask },
                    }];
                    // Undo the flip before the next read of the address (it
                    // fires pre-fetch); a trailing write overwrites it anyway.
                    let next = access_seq[&addr].iter().find(|&&(p, _)| p > pos);
                    if let Some(&(p2, Direction::Read)) = next {
                        acts.push(Action {
                            trigger: Trigger::AfterAccess(p2),
                            effect: Effect::TamperBits { addr, offset, mask },
                        });
                    }
                    acts
                }
                AttackClass::ReplayStale => {
                    let (pos, addr, max_depth) =
                        pools.replayable[rng.gen_range(0..pools.replayable.len())];
                    vec![Action {
                        trigger: Trigger::AfterAccess(pos),
                        effect: Effect::ReplayStale {
                            addr,
                            depth: rng.gen_range(1..=max_depth),
                        },
                    }]
                }
                AttackClass::Swap => {
                    // Swap the block a read is about to fetch with any other
                    // block that already exists at that point, then swap back
                    // at the next access. A write at that next position would
                    // beat the swap-back to memory, so partners (or picks)
                    // that collide with it are re-rolled.
                    let (pos, a, b) = loop {
                        let (pos, a) = pools.reads[rng.gen_range(0..pools.reads.len())];
                        if pos < 2 {
                            continue;
                        }
                        let next = dram.log.get(pos as usize);
                        if next.is_some_and(|e| e.dir == Direction::Write && e.addr == a) {
                            continue;
                        }
                        let banned =
                            next.and_then(|e| (e.dir == Direction::Write).then_some(e.addr));
                        let earlier: Vec<u64> = {
                            let mut seen: BTreeSet<u64> = dram.log[..(pos - 1) as usize]
                                .iter()
                                .map(|e| e.addr)
                                .collect();
                            seen.remove(&a);
                            if let Some(c) = banned {
                                seen.remove(&c);
                            }
                            seen.into_iter().collect()
                        };
                        if earlier.is_empty() {
                            continue;
                        }
                        break (pos, a, earlier[rng.gen_range(0..earlier.len())]);
                    };
                    let mut acts = vec![Action {
                        trigger: Trigger::AfterAccess(pos),
                        effect: Effect::SwapBlocks { a, b },
                    }];
                    if (pos as usize) < dram.log.len() {
                        acts.push(Action {
                            trigger: Trigger::AfterAccess(pos + 1),
                            effect: Effect::SwapBlocks { a, b },
                        });
                    }
                    acts
                }
                AttackClass::DropWrite => {
                    let (pos, addr) = pools.droppable[rng.gen_range(0..pools.droppable.len())];
                    vec![Action {
                        trigger: Trigger::AfterAccess(pos),
                        effect: Effect::DropWrite { addr },
                    }]
                }
            };
            let desc = actions
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(" + ");
            let script = AdversaryScript::new(actions);
            let report = simulate(net, scheme, cfg, lat, seed, Some(&script))?;
            if report.clean {
                if undetected.len() < 8 {
                    undetected.push(desc);
                }
            } else {
                detected += 1;
            }
        }
        classes.push(ClassReport {
            class: *class,
            trials,
            detected,
            undetected,
        });
    }
    Ok(CampaignReport {
        network: net.name.clone(),
        scheme,
        seed,
        classes,
    })
}
