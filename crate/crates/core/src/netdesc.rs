//! Plain-text network descriptions: an ordered list of scheduled layers
//! plus optional per-layer version-pattern overrides.
//!
//! ```text
//! # desk-scale example
//! name tiny_net
//! layer conv k=8 c=3 h=16 w=16 r=3 s=3 row=conv-ir-2 kt=2 ct=1 ht=8 wt=8
//! layer pool k=8 h=16 w=16 r=2 s=2 row=s1-4 kt=2 ht=8 wt=8
//! triplet 1 write 4,3,4
//! ```
//!
//! Layers are numbered by position, starting at 1. `triplet L <write|read>
//! eta,kappa,rho` pins the version pattern a verifier should expect for that
//! layer's output writes (or partial read-backs) instead of deriving it —
//! the exchange format a host uses to hand patterns to a device, and the
//! hook for deliberately wrong patterns in negative tests.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::dataflow::{Direction, LayerKind, LayerSpec, ScheduledLayer, StyleRow, TileSchedule};
use crate::pattern::PatternTriplet;
use crate::{Error, Result};

/// A parsed network: what the simulator runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    pub name: String,
    pub units: Vec<ScheduledLayer>,
    /// Expected version patterns pinned by the description, by layer id.
    pub overrides: BTreeMap<(u32, Direction), PatternTriplet>,
}

impl Network {
    pub fn parse(text: &str, file: &str) -> Result<Network> {
        let mut name = String::from("unnamed");
        let mut units: Vec<ScheduledLayer> = Vec::new();
        let mut overrides = BTreeMap::new();
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
            let mut words = line.split_whitespace();
            match words.next() {
                Some("name") => {
                    name = words.collect::<Vec<_>>().join(" ");
                    if name.is_empty() {
                        return Err(err("name line needs a value".into()));
                    }
                }
                Some("layer") => {
                    let unit = parse_layer(words, units.len() as u32 + 1).map_err(&err)?;
                    units.push(unit);
                }
                Some("triplet") => {
                    let layer: u32 = words
                        .next()
                        .and_then(|w| w.parse().ok())
                        .ok_or_else(|| err("triplet needs a layer number".into()))?;
                    if layer == 0 || layer as usize > units.len() {
                        return Err(err(format!("triplet refers to unknown layer {layer}")));
                    }
                    let dir = match words.next() {
                        Some("write") => Direction::Write,
                        Some("read") => Direction::Read,
                        other => {
                            return Err(err(format!(
                                "triplet direction must be write or read, got {other:?}"
                            )))
                        }
                    };
                    let spec = words
                        .next()
                        .ok_or_else(|| err("triplet needs eta,kappa,rho".into()))?;
                    let parts: Vec<&str> = spec.split(',').collect();
                    if parts.len() != 3 {
                        return Err(err(format!("bad triplet `{spec}`, want eta,kappa,rho")));
                    }
                    let n = |s: &str| -> std::result::Result<u64, String> {
                        s.parse().map_err(|_| format!("bad number `{s}`"))
                    };
                    let t = PatternTriplet {
                        eta: n(parts[0]).map_err(&err)?,
                        kappa: n(parts[1]).map_err(&err)? as u32,
                        rho: n(parts[2]).map_err(&err)?,
                    };
                    overrides.insert((layer, dir), t);
                }
                Some(other) => return Err(err(format!("unknown directive `{other}`"))),
                None => unreachable!("blank lines skipped"),
            }
        }
        if units.is_empty() {
            return Err(Error::Parse {
                file: file.to_string(),
                line: text.lines().count(),
                msg: "network has no layers".into(),
            });
        }
        Ok(Network {
            name,
            units,
            overrides,
        })
    }

    pub fn load(path: &Path) -> Result<Network> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Checks every layer against its schedule (divisibility, loop order,
    /// kind ties) without generating traces.
    pub fn validate(&self) -> Result<()> {
        for unit in &self.units {
            crate::dataflow::validate_schedule(&unit.layer, &unit.sched)?;
        }
        Ok(())
    }
}

fn parse_layer<'a>(
    mut words: impl Iterator<Item = &'a str>,
    layer_id: u32,
) -> std::result::Result<ScheduledLayer, String> {
    let kind: LayerKind = words.next().ok_or("layer needs a kind")?.parse()?;
    let mut dims: BTreeMap<&str, u32> = BTreeMap::new();
    let mut row: Option<StyleRow> = None;
    for word in words {
        let (key, value) = word
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{word}`"))?;
        if key == "row" {
            row = Some(StyleRow::from_str(value)?);
        } else {
            let v: u32 = value
                .parse()
                .map_err(|_| format!("bad number `{value}` for `{key}`"))?;
            if !matches!(key, "k" | "c" | "h" | "w" | "r" | "s" | "kt" | "ct" | "ht" | "wt") {
                return Err(format!("unknown layer field `{key}`"));
            }
            dims.insert(key, v);
        }
    }
    let row = row.ok_or("layer needs row=<style row>")?;
    let get = |k: &str, default: Option<u32>| -> std::result::Result<u32, String> {
        dims.get(k)
            .copied()
            .or(default)
            .ok_or_else(|| format!("layer needs `{k}=`"))
    };
    let h = get("h", None)?;
    let w = get("w", None)?;
    // Kind-specific defaults mirror the shape ties: single-tensor layers
    // have c == k, style-2 has one output channel, matmul has k == w.
    let (k, c) = match kind {
        LayerKind::PreprocStyle1 | LayerKind::Pooling => {
            let k = get("k", dims.get("c").copied())?;
            (k, get("c", Some(k))?)
        }
        LayerKind::PreprocStyle2 => (get("k", Some(1))?, get("c", None)?),
        LayerKind::MatMul => {
            let w_dim = w;
            (get("k", Some(w_dim))?, get("c", None)?)
        }
        _ => (get("k", None)?, get("c", None)?),
    };
    let layer = LayerSpec {
        kind,
        k,
        c,
        h,
        w,
        r: get("r", Some(1))?,
        s: get("s", Some(1))?,
        layer_id,
    };
    layer.validate().map_err(|e| e.to_string())?;
    let kt = get("kt", Some(1))?;
    let ct = match kind {
        LayerKind::PreprocStyle1 | LayerKind::Pooling => get("ct", Some(kt))?,
        _ => get("ct", Some(1))?,
    };
    let sched = TileSchedule::for_row(row, kt, ct, get("ht", Some(1))?, get("wt", Some(1))?)
        .map_err(|e| e.to_string())?;
    Ok(ScheduledLayer { layer, sched })
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name {}", self.name)?;
        for unit in &self.units {
            let l = &unit.layer;
            let s = &unit.sched;
            write!(f, "layer {} k={} c={} h={} w={}", l.kind, l.k, l.c, l.h, l.w)?;
            if l.r != 1 || l.s != 1 {
                write!(f, " r={} s={}", l.r, l.s)?;
            }
            writeln!(
                f,
                " row={} kt={} ct={} ht={} wt={}",
                s.style_row, s.k_t, s.c_t, s.h_t, s.w_t
            )?;
        }
        for ((layer, dir), t) in &self.overrides {
            let d = match dir {
                Direction::Write => "write",
                Direction::Read => "read",
            };
            writeln!(f, "triplet {layer} {d} {},{},{}", t.eta, t.kappa, t.rho)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two layers and a pinned pattern
name tiny_net
layer conv k=8 c=3 h=16 w=16 r=3 s=3 row=conv-ir-2 kt=2 ct=1 ht=8 wt=8
layer pool k=8 h=16 w=16 r=2 s=2 row=s1-4 kt=2 ht=8 wt=8
triplet 1 write 4,3,4
";

    #[test]
    fn parses_layers_defaults_and_overrides() {
        let net = Network::parse(SAMPLE, "tiny.net").unwrap();
        assert_eq!(net.name, "tiny_net");
        assert_eq!(net.units.len(), 2);
        let conv = &net.units[0];
        assert_eq!(conv.layer.kind, LayerKind::Convolution);
        assert_eq!(conv.layer.layer_id, 1);
        assert_eq!(conv.sched.c_t, 1);
        let pool = &net.units[1];
        assert_eq!(pool.layer.c, 8, "pool c defaults to k");
        assert_eq!(pool.sched.c_t, pool.sched.k_t, "pool ct defaults to kt");
        assert_eq!(
            net.overrides[&(1, Direction::Write)],
            PatternTriplet {
                eta: 4,
                kappa: 3,
                rho: 4
            }
        );
        net.validate().unwrap();
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "name x\nlayer conv k=8 c=3 h=16 w=16 row=conv-ir-2\nlayer bogus k=1\n";
        match Network::parse(bad, "bad.net") {
            Err(Error::Parse { file, line, .. }) => {
                assert_eq!(file, "bad.net");
                assert_eq!(line, 3);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        match Network::parse("name x\ntriplet 1 write 1,1,1\n", "t.net") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn description_round_trips() {
        let net = Network::parse(SAMPLE, "tiny.net").unwrap();
        let printed = net.to_string();
        let reparsed = Network::parse(&printed, "echo").unwrap();
        assert_eq!(reparsed, net);
    }
}
