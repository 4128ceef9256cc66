//! The four subcommands: pattern fuzzing, attack campaigns or script
//! replays, scheme comparisons (with an optional widening study), and the
//! defaults dump. Each returns an [`Outcome`] whose `ok` drives the exit
//! status; the JSON payload lands in the invocation summary.

use std::fmt::Write as FmtWrite;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::json;
use tilesec::attack::run_campaign;
use tilesec::dataflow::{enumerate_table_rows, generate_trace, sample_shape, GbConfig, RowInfo};
use tilesec::memory::AdversaryScript;
use tilesec::netdesc::Network;
use tilesec::pattern::{derive_row_patterns, oracle_vn_sequences, PatternTriplet};
use tilesec::perf::{compare_schemes, simulate, widening_study, RunReport};

use crate::config::{ExperimentConfig, TripletOverride};

/// What a subcommand produced: pass/fail plus the machine-readable payload.
pub struct Outcome {
    pub ok: bool,
    pub payload: serde_json::Value,
}

/// Anything that stops a command before its assertions run.
pub type CmdError = Box<dyn std::error::Error>;

fn read_network(path: &Path) -> Result<Network, CmdError> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("network file {}: {e}", path.display()))?;
    Ok(Network::parse(&text, &path.display().to_string())?)
}

fn write_report(
    out: &Path,
    name: &str,
    csv: Option<String>,
    json_text: Option<String>,
    generated: &mut Vec<String>,
) -> Result<(), CmdError> {
    if let Some(body) = csv {
        let p = out.join(format!("{name}.csv"));
        fs::write(&p, body)?;
        generated.push(p.display().to_string());
    }
    if let Some(body) = json_text {
        let p = out.join(format!("{name}.json"));
        fs::write(&p, body)?;
        generated.push(p.display().to_string());
    }
    Ok(())
}

// ---------------------------------------------------------------- patterns

#[derive(Debug, Serialize)]
struct RowOutcome {
    row: String,
    shapes: u32,
    pass: bool,
    /// "shape S <write|read> index I" for the first mismatch.
    first_divergence: Option<String>,
}

/// Fuzzes each selected row: random divisible shapes, derived triplets
/// expanded and compared against the brute-force trace observer.
pub fn cmd_patterns(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
) -> Result<Outcome, CmdError> {
    let all = enumerate_table_rows();
    let selected: Vec<RowInfo> = match &cfg.patterns.rows {
        None => all,
        Some(ids) => {
            let mut picked = Vec::new();
            for id in ids {
                let row = id.parse().map_err(|e: String| e)?;
                picked.push(
                    *all.iter()
                        .find(|i| i.row == row)
                        .ok_or_else(|| format!("row {id} is not catalogued"))?,
                );
            }
            picked
        }
    };
    if selected.is_empty() {
        println!("warning: no rows selected; the pattern suite passes vacuously");
        let payload = json!({"rows": [], "vacuous": true});
        fs::write(
            out.join("patterns.json"),
            serde_json::to_string_pretty(&payload)?,
        )?;
        return Ok(Outcome { ok: true, payload });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut ok = true;
    for info in &selected {
        let mut first: Option<String> = None;
        for shape in 0..cfg.patterns.shapes_per_row {
            let (layer, sched) = sample_shape(info, &mut rng);
            let trace = generate_trace(&layer, &sched, &GbConfig::default())?;
            let mut pats = derive_row_patterns(&layer, &sched)?;
            apply_override(&cfg.patterns.r#override, &info.row.to_string(), &mut pats);
            let oracle = oracle_vn_sequences(&trace);
            let mut diverge = |stream: &str, got: &[u32], want: &[u32]| {
                if first.is_none() {
                    if let Some(i) = first_divergence(got, want) {
                        first = Some(format!("shape {shape} {stream} index {i}"));
                    }
                }
            };
            diverge("write", &pats.write.expand(), &oracle.write);
            let read = pats.read.map(|p| p.expand()).unwrap_or_default();
            diverge("read", &read, &oracle.read);
            if first.is_some() {
                break;
            }
        }
        let pass = first.is_none();
        ok &= pass;
        match &first {
            None => println!("row {}: pass ({} shapes)", info.row, cfg.patterns.shapes_per_row),
            Some(d) => println!("row {}: FAIL ({d})", info.row),
        }
        rows.push(RowOutcome {
            row: info.row.to_string(),
            shapes: cfg.patterns.shapes_per_row,
            pass,
            first_divergence: first,
        });
    }

    let (want_csv, want_json) = cfg.formats();
    let csv = want_csv.then(|| {
        let mut s = String::from("row,shapes,pass,first_divergence\n");
        for r in &rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.row,
                r.shapes,
                r.pass,
                r.first_divergence.as_deref().unwrap_or("")
            );
        }
        s
    });
    let payload = json!({"rows": rows, "vacuous": false});
    let json_text = want_json.then(|| serde_json::to_string_pretty(&payload).unwrap());
    let mut generated = Vec::new();
    write_report(out, "patterns", csv, json_text, &mut generated)?;
    Ok(Outcome { ok, payload })
}

fn apply_override(
    ov: &Option<TripletOverride>,
    row: &str,
    pats: &mut tilesec::pattern::RowPatterns,
) {
    let Some(ov) = ov else { return };
    if ov.row != row {
        return;
    }
    let t = PatternTriplet {
        eta: ov.eta,
        kappa: ov.kappa,
        rho: ov.rho,
    };
    match ov.dir.as_str() {
        "read" => pats.read = Some(t),
        _ => pats.write = t,
    }
}

/// First index where the sequences differ (a longer tail diverges at the
/// shorter one's length).
fn first_divergence(got: &[u32], want: &[u32]) -> Option<usize> {
    if got == want {
        return None;
    }
    Some(
        got.iter()
            .zip(want)
            .position(|(a, b)| a != b)
            .unwrap_or_else(|| got.len().min(want.len())),
    )
}

// ------------------------------------------------------------------ attack

/// Replays a scripted adversary or runs the built-in randomized campaign
/// against the first configured network.
pub fn cmd_attack(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
) -> Result<Outcome, CmdError> {
    let net_path = cfg
        .network
        .files
        .first()
        .ok_or("attack needs at least one network file in [network].files")?;
    let net = read_network(net_path)?;
    let (want_csv, want_json) = cfg.formats();
    let mut generated = Vec::new();

    if let Some(script_path) = &cfg.adversary.script {
        let text = fs::read_to_string(script_path)
            .map_err(|e| format!("adversary script {}: {e}", script_path.display()))?;
        let script = AdversaryScript::parse(&text, &script_path.display().to_string())?;
        let report = simulate(
            &net,
            cfg.adversary.scheme,
            &cfg.scheme_params,
            &cfg.latency,
            seed,
            Some(&script),
        )?;
        print_script_run(&report, script.actions.len());
        let json_text = want_json.then(|| report.to_json());
        let csv = want_csv.then(|| {
            let mut s = String::from("layer,kind,result,detail\n");
            for c in &report.checks {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    c.layer,
                    c.kind,
                    if c.result.is_pass() { "pass" } else { "fail" },
                    c.detail.as_deref().unwrap_or("")
                );
            }
            s
        });
        write_report(out, "attack", csv, json_text, &mut generated)?;
        let detections = report.checks.iter().filter(|c| !c.result.is_pass()).count();
        let payload = json!({
            "mode": "script",
            "script": script_path.display().to_string(),
            "actions": script.actions.len(),
            "detections": detections,
            "clean": report.clean,
            "generated": generated,
        });
        // A script replay reports what happened; it asserts nothing.
        return Ok(Outcome { ok: true, payload });
    }

    let report = run_campaign(
        &net,
        cfg.adversary.scheme,
        &cfg.scheme_params,
        &cfg.latency,
        seed,
        cfg.adversary.trials,
    )?;
    for c in &report.classes {
        println!(
            "class {}: {}/{} detected{}",
            c.class,
            c.detected,
            c.trials,
            if c.detected == c.trials { "" } else { "  <-- MISSED" }
        );
    }
    let ok = report.all_detected();
    let csv = want_csv.then(|| {
        let mut buf = Vec::new();
        report.write_csv(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("csv is utf-8")
    });
    let json_text = want_json.then(|| report.to_json());
    write_report(out, "attack", csv, json_text, &mut generated)?;
    let payload = json!({
        "mode": "campaign",
        "network": report.network,
        "scheme": report.scheme,
        "trials_per_class": cfg.adversary.trials,
        "all_detected": ok,
        "classes": report.classes,
        "generated": generated,
    });
    Ok(Outcome { ok, payload })
}

fn print_script_run(report: &RunReport, actions: usize) {
    println!(
        "script replay: {} actions against {} under {}",
        actions, report.network, report.scheme
    );
    for c in &report.checks {
        if !c.result.is_pass() {
            println!(
                "  layer {} {} check: FAIL{}",
                c.layer,
                c.kind,
                c.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
            );
        }
    }
    println!(
        "  verdict: {}",
        if report.clean { "all layers pass" } else { "corruption detected" }
    );
}

// ----------------------------------------------------------------- compare

/// Simulates every configured benchmark under every enabled scheme, or the
/// widening study when `widen` is set.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    seed: u64,
    out: &Path,
    widen: bool,
) -> Result<Outcome, CmdError> {
    let (want_csv, want_json) = cfg.formats();
    let mut generated = Vec::new();

    if widen {
        let base_path = cfg
            .network
            .widen_base
            .as_ref()
            .ok_or("--widen needs [network].widen_base")?;
        let mut net = read_network(base_path)?;
        if net.units.is_empty() {
            return Err(format!("{}: no layers", base_path.display()).into());
        }
        let base = net.units.remove(0);
        let report = widening_study(
            &base,
            &cfg.network.widths,
            &cfg.schemes.enabled,
            &cfg.scheme_params,
            &cfg.latency,
            seed,
        )?;
        for row in &report.rows {
            let cells: Vec<String> = report
                .widths
                .iter()
                .zip(&row.ratios)
                .map(|(w, r)| format!("x{w}={r:.3}"))
                .collect();
            println!("{:<10} {}", row.scheme.to_string(), cells.join(" "));
        }
        let csv = want_csv.then(|| {
            let mut buf = Vec::new();
            report.write_csv(&mut buf).expect("write to vec");
            String::from_utf8(buf).expect("csv is utf-8")
        });
        let json_text = want_json.then(|| report.to_json());
        write_report(out, "widening", csv, json_text, &mut generated)?;
        let payload = json!({
            "mode": "widening",
            "widths": report.widths,
            "rows": report.rows,
            "generated": generated,
        });
        return Ok(Outcome { ok: true, payload });
    }

    if cfg.network.files.is_empty() {
        return Err("compare needs network files in [network].files".into());
    }
    let mut combined = String::from(
        "network,scheme,cycles,data_blocks,metadata_blocks,total_blocks,normalized_perf,clean\n",
    );
    let mut ok = true;
    let mut nets = Vec::new();
    for path in &cfg.network.files {
        let net = read_network(path)?;
        let report = compare_schemes(
            &net,
            &cfg.schemes.enabled,
            &cfg.scheme_params,
            &cfg.latency,
            seed,
        )?;
        println!("{}:", report.network);
        for r in &report.rows {
            println!(
                "  {:<10} cycles {:>12}  blocks {:>9} (+{} metadata)  perf {:.3}{}",
                r.scheme.to_string(),
                r.cycles,
                r.total_blocks,
                r.metadata_blocks,
                r.normalized_perf,
                if r.clean { "" } else { "  INTEGRITY FAIL" }
            );
            ok &= r.clean;
            let _ = writeln!(
                combined,
                "{},{},{},{},{},{},{:.6},{}",
                report.network,
                r.scheme,
                r.cycles,
                r.data_blocks,
                r.metadata_blocks,
                r.total_blocks,
                r.normalized_perf,
                r.clean
            );
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| report.network.clone());
        let csv = want_csv.then(|| {
            let mut buf = Vec::new();
            report.write_csv(&mut buf).expect("write to vec");
            String::from_utf8(buf).expect("csv is utf-8")
        });
        let json_text = want_json.then(|| report.to_json());
        write_report(out, &format!("compare_{stem}"), csv, json_text, &mut generated)?;
        nets.push(serde_json::to_value(&report)?);
    }
    if want_csv {
        let p = out.join("compare.csv");
        fs::write(&p, &combined)?;
        generated.push(p.display().to_string());
    }
    let payload = json!({
        "mode": "benchmarks",
        "networks": nets,
        "generated": generated,
    });
    Ok(Outcome { ok, payload })
}

// ------------------------------------------------------------ dump-config

pub fn cmd_dump_config() -> Outcome {
    let text = ExperimentConfig::dump_default();
    print!("{text}");
    Outcome {
        ok: true,
        payload: json!({"mode": "dump-config"}),
    }
}
