//! Untrusted off-chip memory: a block store that answers every request but
//! makes no promises about what it returns.
//!
//! The store keeps a history of every block's previous contents, an ordered
//! access log (cycle stamps are supplied by the caller so the store itself
//! stays timing-agnostic), and an optional adversary script. Script actions
//! fire once each, when their trigger matches an access, and mutate the
//! store the way a physical attacker on the memory bus would: flipping bits,
//! rolling a block back to stale contents, swapping two blocks, or blocking
//! a write from landing.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataflow::Direction;
use crate::{Error, Result};

pub const BLOCK_BYTES: usize = 64;
pub type Block = [u8; BLOCK_BYTES];

/// One entry in the bus access log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub addr: u64,
    pub dir: Direction,
    pub cycle: u64,
}

/// When an adversary action fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    /// After the Nth bus access of the run (1-based).
    AfterAccess(u64),
    /// On the next write to this address.
    OnWrite(u64),
    /// On the next read of this address (applied before data is returned).
    OnRead(u64),
}

/// What the adversary does to the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Effect {
    /// XOR `mask` into the byte at `offset` of the block at `addr`.
    TamperBits { addr: u64, offset: u8, mask: u8 },
    /// Roll `addr` back `depth` versions (1 = the previous contents).
    ReplayStale { addr: u64, depth: u32 },
    /// Exchange the contents of two blocks.
    SwapBlocks { a: u64, b: u64 },
    /// The triggering write never reaches the array (stale contents remain).
    DropWrite { addr: u64 },
}

/// A triggered action; fires at most once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub trigger: Trigger,
    pub effect: Effect,
}

/// What an action actually did, for the run report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Mutation {
    pub action: Action,
    /// Index into the access log of the access that tripped it.
    pub at_access: u64,
}

/// An ordered list of one-shot actions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversaryScript {
    pub actions: Vec<Action>,
}

impl AdversaryScript {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions }
    }

    /// Parses the one-action-per-line form. Blank lines and `#` comments are
    /// skipped. Lines are `trigger,trigger_arg,effect,effect_args...`:
    ///
    /// ```text
    /// after,120,tamper,0x1c0,5,0x80
    /// on_write,0x240,drop,0x240
    /// on_read,0x300,replay,0x300,1
    /// after,64,swap,0x100,0x140
    /// ```
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut actions = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                file: file.to_string(),
                line: no + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 3 {
                return Err(err("expected trigger,arg,effect,args...".into()));
            }
            let num = |s: &str| -> Result<u64> {
                let parsed = if let Some(hex) = s.strip_prefix("0x") {
                    u64::from_str_radix(hex, 16)
                } else {
                    s.parse()
                };
                parsed.map_err(|_| err(format!("bad number `{s}`")))
            };
            let trigger = match fields[0] {
                "after" => Trigger::AfterAccess(num(fields[1])?),
                "on_write" => Trigger::OnWrite(num(fields[1])?),
                "on_read" => Trigger::OnRead(num(fields[1])?),
                other => return Err(err(format!("unknown trigger `{other}`"))),
            };
            let want = |n: usize| -> Result<()> {
                if fields.len() == 3 + n {
                    Ok(())
                } else {
                    Err(err(format!("effect `{}` takes {n} args", fields[2])))
                }
            };
            let effect = match fields[2] {
                "tamper" => {
                    want(3)?;
                    Effect::TamperBits {
                        addr: num(fields[3])?,
                        offset: num(fields[4])? as u8,
                        mask: num(fields[5])? as u8,
                    }
                }
                "replay" => {
                    want(2)?;
                    Effect::ReplayStale {
                        addr: num(fields[3])?,
                        depth: num(fields[4])? as u32,
                    }
                }
                "swap" => {
                    want(2)?;
                    Effect::SwapBlocks {
                        a: num(fields[3])?,
                        b: num(fields[4])?,
                    }
                }
                "drop" => {
                    want(1)?;
                    Effect::DropWrite {
                        addr: num(fields[3])?,
                    }
                }
                other => return Err(err(format!("unknown effect `{other}`"))),
            };
            actions.push(Action { trigger, effect });
        }
        Ok(Self { actions })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.trigger {
            Trigger::AfterAccess(n) => write!(f, "after,{n}")?,
            Trigger::OnWrite(a) => write!(f, "on_write,{a:#x}")?,
            Trigger::OnRead(a) => write!(f, "on_read,{a:#x}")?,
        }
        match self.effect {
            Effect::TamperBits { addr, offset, mask } => {
                write!(f, ",tamper,{addr:#x},{offset},{mask:#x}")
            }
            Effect::ReplayStale { addr, depth } => write!(f, ",replay,{addr:#x},{depth}"),
            Effect::SwapBlocks { a, b } => write!(f, ",swap,{a:#x},{b:#x}"),
            Effect::DropWrite { addr } => write!(f, ",drop,{addr:#x}"),
        }
    }
}

impl fmt::Display for AdversaryScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for action in &self.actions {
            writeln!(f, "{action}")?;
        }
        Ok(())
    }
}

/// The off-chip store plus everything an attacker on the bus can reach.
#[derive(Debug, Default)]
pub struct UntrustedDram {
    blocks: BTreeMap<u64, Block>,
    /// Prior contents of each address, oldest first.
    history: BTreeMap<u64, Vec<Block>>,
    pub log: Vec<LogEntry>,
    script: Vec<Action>,
    fired: Vec<bool>,
    pending: Vec<usize>,
    pub mutations: Vec<Mutation>,
}

impl UntrustedDram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a zero-filled region so in-bounds reads always answer.
    pub fn register_region(&mut self, base: u64, blocks: u64) {
        for i in 0..blocks {
            self.blocks.entry(base + i * BLOCK_BYTES as u64).or_insert([0; BLOCK_BYTES]);
        }
    }

    pub fn attach_adversary(&mut self, script: &AdversaryScript) {
        self.script = script.actions.clone();
        self.fired = vec![false; self.script.len()];
    }

    /// Host-side store that bypasses the bus: not logged, not counted,
    /// no triggers. Used for pre-run provisioning.
    pub fn provision(&mut self, addr: u64, data: Block) {
        debug_assert_eq!(addr % BLOCK_BYTES as u64, 0);
        if let Some(old) = self.blocks.insert(addr, data) {
            self.history.entry(addr).or_default().push(old);
        }
    }

    /// Host-side load that bypasses the bus (final-pass reads).
    pub fn peek(&self, addr: u64) -> Result<Block> {
        self.blocks.get(&addr).copied().ok_or(Error::UnmappedAddress(addr))
    }

    pub fn read(&mut self, addr: u64, cycle: u64) -> Result<Block> {
        self.log.push(LogEntry {
            addr,
            dir: Direction::Read,
            cycle,
        });
        self.run_adversary(Direction::Read, addr);
        self.blocks.get(&addr).copied().ok_or(Error::UnmappedAddress(addr))
    }

    pub fn write(&mut self, addr: u64, data: Block, cycle: u64) -> Result<()> {
        debug_assert_eq!(addr % BLOCK_BYTES as u64, 0);
        self.log.push(LogEntry {
            addr,
            dir: Direction::Write,
            cycle,
        });
        if !self.blocks.contains_key(&addr) {
            return Err(Error::UnmappedAddress(addr));
        }
        let dropped = self.take_matching(Direction::Write, addr).iter().any(|&i| {
            matches!(self.script[i].effect, Effect::DropWrite { addr: a } if a == addr)
        });
        if !dropped {
            let old = self.blocks.insert(addr, data).expect("registered above");
            self.history.entry(addr).or_default().push(old);
        }
        // Non-drop effects triggered by this write land after it.
        self.apply_pending();
        Ok(())
    }

    pub fn accesses(&self) -> u64 {
        self.log.len() as u64
    }

    /// Indices of not-yet-fired actions whose trigger matches this access;
    /// marks them fired and records the mutation. Effects are applied by the
    /// caller (reads apply them before fetching, writes after storing, except
    /// DropWrite which suppresses the store itself).
    fn take_matching(&mut self, dir: Direction, addr: u64) -> Vec<usize> {
        let n = self.log.len() as u64;
        let mut hit = Vec::new();
        for (i, action) in self.script.iter().enumerate() {
            if self.fired[i] {
                continue;
            }
            let matches = match action.trigger {
                Trigger::AfterAccess(at) => at == n,
                Trigger::OnWrite(a) => dir == Direction::Write && a == addr,
                Trigger::OnRead(a) => dir == Direction::Read && a == addr,
            };
            if matches {
                self.fired[i] = true;
                self.mutations.push(Mutation {
                    action: *action,
                    at_access: n,
                });
                hit.push(i);
            }
        }
        self.pending.extend(hit.iter().copied());
        hit
    }

    fn run_adversary(&mut self, dir: Direction, addr: u64) {
        self.take_matching(dir, addr);
        self.apply_pending();
    }

    fn apply_pending(&mut self) {
        let pending = std::mem::take(&mut self.pending);
        for i in pending {
            self.apply(self.script[i].effect);
        }
    }

    fn apply(&mut self, effect: Effect) {
        match effect {
            Effect::TamperBits { addr, offset, mask } => {
                if let Some(b) = self.blocks.get_mut(&addr) {
                    b[offset as usize % BLOCK_BYTES] ^= mask;
                }
            }
            Effect::ReplayStale { addr, depth } => {
                let stale = self.history.get(&addr).and_then(|v| {
                    if depth == 0 || (depth as usize) > v.len() {
                        None
                    } else {
                        Some(v[v.len() - depth as usize])
                    }
                });
                if let Some(old) = stale {
                    self.blocks.insert(addr, old);
                }
            }
            Effect::SwapBlocks { a, b } => {
                if self.blocks.contains_key(&a) && self.blocks.contains_key(&b) {
                    let va = self.blocks[&a];
                    let vb = self.blocks[&b];
                    self.blocks.insert(a, vb);
                    self.blocks.insert(b, va);
                }
            }
            Effect::DropWrite { .. } => {
                // Handled inline in `write`.
            }
        }
    }

    /// Versions ever stored at an address (history plus current).
    pub fn versions(&self, addr: u64) -> usize {
        self.history.get(&addr).map_or(0, Vec::len) + usize::from(self.blocks.contains_key(&addr))
    }
}
