use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use orhleak_core::attack::{lemma1_recover, AttackState};
use orhleak_core::block_codec::MAX_BLOCK_BITS;
use orhleak_core::coupon_analysis::{
    graph_placed_coverage, monte_carlo_drivers_needed, MAX_COUPON_BITS,
};
use orhleak_core::experiment::{compare_with_truth, DriverPlacement, GroundTruth, Scenario};
use orhleak_core::export::{RecoveryReport, TranscriptConfig, TranscriptDoc};
use orhleak_core::road_network::{EmbeddingConfig, EncodingParams, GraphError, RoadGraph};

use crate::config::FileConfig;
use crate::error::{CliError, CliResult, ExitContext, ExitKind};
use crate::{AttackArgs, CouponArgs, EncodingArgs, GraphArgs, LemmaArgs, SimulateArgs};

const DEFAULT_GRID: &str = "10x10";

fn parse_grid(spec: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::config(format!("--grid expects WxH, got {spec:?}"));
    let (w, h) = spec.split_once(['x', 'X']).ok_or_else(bad)?;
    let w = w.trim().parse().map_err(|_| bad())?;
    let h = h.trim().parse().map_err(|_| bad())?;
    Ok((w, h))
}

/// Loads the graph and a short label for transcript metadata. Flags beat
/// the config file; with neither, a 10x10 grid.
fn load_graph(args: &GraphArgs, file: &FileConfig) -> CliResult<(RoadGraph, String)> {
    if let Some(path) = &args.graph {
        return load_graph_file(path);
    }
    if let Some(grid) = &args.grid {
        return load_grid(grid);
    }
    match (file.get::<PathBuf>("graph")?, file.get::<String>("grid")?) {
        (Some(_), Some(_)) => Err(CliError::config("config sets both grid and graph")),
        (Some(p), None) => load_graph_file(&p),
        (None, Some(g)) => load_grid(&g),
        (None, None) => load_grid(DEFAULT_GRID),
    }
}

fn load_grid(spec: &str) -> CliResult<(RoadGraph, String)> {
    let (w, h) = parse_grid(spec)?;
    let graph = RoadGraph::grid(w, h).map_err(|e| CliError::config(format!("grid {spec}: {e}")))?;
    Ok((graph, format!("grid:{w}x{h}")))
}

fn load_graph_file(path: &Path) -> CliResult<(RoadGraph, String)> {
    let text = fs::read_to_string(path)
        .exit_with(ExitKind::Io, format!("reading graph {}", path.display()))?;
    let graph = RoadGraph::parse_edge_list(&text)
        .map_err(|e: GraphError| CliError::config(format!("graph {}: {e}", path.display())))?;
    Ok((graph, format!("file:{}", path.display())))
}

fn encoding(args: &EncodingArgs, file: &FileConfig) -> CliResult<(usize, u32, u32)> {
    Ok((
        file.pick(args.eta, "eta", 8)?,
        file.pick(args.l, "l", 2)?,
        file.pick(args.m, "m", 5)?,
    ))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).exit_with(ExitKind::Io, format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).exit_with(ExitKind::Io, format!("writing {}", path.display()))
}

fn to_json<T: serde::Serialize>(value: &T, pretty: bool) -> CliResult<String> {
    let s = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    };
    s.exit_with(ExitKind::Data, "serializing output")
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let (graph, label) = load_graph(&args.graph, &file)?;
    let (eta, l, m) = encoding(&args.encoding, &file)?;
    let drivers: usize = file.pick(args.drivers, "drivers", 30)?;
    let queries: usize = file.pick(args.queries, "queries", 1)?;
    let seed: u64 = file.pick(args.seed, "seed", 0)?;
    let placement = file.pick(args.placement, "placement", DriverPlacement::UniformBlocks)?;
    let reveal = file.switch(args.reveal_truth, "reveal-truth")?;
    let out: Option<PathBuf> = file.pick_opt(args.out.clone(), "out")?;

    if drivers == 0 {
        return Err(CliError::config("--drivers must be at least 1"));
    }
    if queries == 0 {
        return Err(CliError::config("--queries must be at least 1"));
    }
    let cfg = EmbeddingConfig::new(eta, l, m, seed).map_err(CliError::config)?;
    let scenario = Scenario::new(graph, cfg).map_err(CliError::config)?;
    let outcomes = scenario
        .run_queries(queries, drivers, placement)
        .exit_with(ExitKind::PropertyViolation, "simulation failed")?;

    let params = scenario.params();
    let base = TranscriptConfig {
        seed: Some(seed),
        graph: Some(label),
        placement: Some(placement.to_string()),
        ..TranscriptConfig::bare(&params)
    };
    let docs = outcomes
        .iter()
        .map(|o| TranscriptDoc::from_outcome(o, base.clone(), reveal));

    match out {
        Some(dir) => {
            create_dir(&dir)?;
            for doc in docs {
                let q = doc.config.query.unwrap_or(0);
                let mut text = to_json(&doc, true)?;
                text.push('\n');
                write_file(&dir.join(format!("query_{q:04}.json")), &text)?;
            }
            eprintln!("wrote {queries} transcript(s) to {}", dir.display());
        }
        None => {
            let mut stdout = BufWriter::new(io::stdout().lock());
            for doc in docs {
                writeln!(stdout, "{}", to_json(&doc, false)?)
                    .exit_with(ExitKind::Io, "writing stdout")?;
            }
            stdout.flush().exit_with(ExitKind::Io, "writing stdout")?;
        }
    }
    Ok(())
}

/// Expands directories into their `*.json` files, sorted by name.
fn transcript_paths(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        let meta =
            fs::metadata(input).exit_with(ExitKind::Io, format!("reading {}", input.display()))?;
        if meta.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .exit_with(ExitKind::Io, format!("listing {}", input.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()
                .exit_with(ExitKind::Io, format!("listing {}", input.display()))?;
            found.retain(|p| p.extension().is_some_and(|x| x == "json"));
            found.sort();
            out.extend(found);
        } else {
            out.push(input.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::config("no transcript files found"));
    }
    Ok(out)
}

struct LoadedTranscript {
    path: PathBuf,
    doc: TranscriptDoc,
}

fn load_transcript(path: &Path) -> CliResult<LoadedTranscript> {
    let text =
        fs::read_to_string(path).exit_with(ExitKind::Io, format!("reading {}", path.display()))?;
    let doc: TranscriptDoc = serde_json::from_str(&text)
        .exit_with(ExitKind::Data, format!("parsing {}", path.display()))?;
    Ok(LoadedTranscript {
        path: path.to_path_buf(),
        doc,
    })
}

pub fn attack(args: &AttackArgs) -> CliResult<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let eta = file.pick_opt(args.encoding.eta, "eta")?;
    let l = file.pick_opt(args.encoding.l, "l")?;
    let m = file.pick_opt(args.encoding.m, "m")?;
    let same_rider = file.switch(args.same_rider, "same-rider")?;
    let out: Option<PathBuf> = file.pick_opt(args.out.clone(), "out")?;

    let mut loaded = Vec::new();
    for path in transcript_paths(&args.transcripts)? {
        loaded.push(load_transcript(&path)?);
    }
    // flags pin individual parameters; otherwise the first transcript sets them
    let first = loaded[0].doc.config.clone();
    let expected = EncodingParams::new(
        eta.unwrap_or(first.eta),
        l.unwrap_or(first.l),
        m.unwrap_or(first.m),
    )
    .map_err(CliError::config)?;
    for t in &loaded {
        let found = t
            .doc
            .config
            .params()
            .exit_with(ExitKind::Data, t.path.display())?;
        if found != expected {
            return Err(CliError::config(format!(
                "{}: transcript has {found}, expected {expected}",
                t.path.display()
            )));
        }
    }

    let mut reports = Vec::new();
    if same_rider {
        let mut state = AttackState::new(expected).assume_same_rider();
        let mut merged: Option<GroundTruth> = None;
        let mut truth_usable = true;
        for t in &loaded {
            let transcript = t
                .doc
                .to_transcript()
                .exit_with(ExitKind::Data, t.path.display())?;
            state
                .observe(&transcript)
                .exit_with(ExitKind::Data, t.path.display())?;
            match (
                t.doc.truth().exit_with(ExitKind::Data, t.path.display())?,
                merged.as_mut(),
            ) {
                (Some(truth), None) => merged = Some(truth),
                (Some(truth), Some(acc)) if truth.rider == acc.rider => {
                    acc.drivers.extend(truth.drivers)
                }
                _ => truth_usable = false,
            }
        }
        let recovered = state.recover();
        let report = match merged.filter(|_| truth_usable) {
            Some(truth) => RecoveryReport::with_truth(&compare_with_truth(recovered, &truth), None),
            None => RecoveryReport::new(&recovered, None),
        };
        reports.push((PathBuf::from("combined"), report));
    } else {
        for t in &loaded {
            let transcript = t
                .doc
                .to_transcript()
                .exit_with(ExitKind::Data, t.path.display())?;
            let mut state = AttackState::new(expected);
            state
                .observe(&transcript)
                .exit_with(ExitKind::Data, t.path.display())?;
            let recovered = state.recover();
            let query = t.doc.config.query;
            let report = match t.doc.truth().exit_with(ExitKind::Data, t.path.display())? {
                Some(truth) => {
                    RecoveryReport::with_truth(&compare_with_truth(recovered, &truth), query)
                }
                None => RecoveryReport::new(&recovered, query),
            };
            reports.push((t.path.clone(), report));
        }
    }

    match out {
        Some(dir) => {
            create_dir(&dir)?;
            for (src, report) in &reports {
                let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
                let mut text = to_json(report, true)?;
                text.push('\n');
                write_file(&dir.join(format!("{stem}.report.json")), &text)?;
            }
        }
        None => {
            let mut stdout = BufWriter::new(io::stdout().lock());
            for (_, report) in &reports {
                writeln!(stdout, "{}", to_json(report, false)?)
                    .exit_with(ExitKind::Io, "writing stdout")?;
            }
            stdout.flush().exit_with(ExitKind::Io, "writing stdout")?;
        }
    }
    Ok(())
}

fn parse_l_range(spec: &str) -> CliResult<(u32, u32)> {
    let bad = |why: &str| CliError::config(format!("--l-range {spec:?}: {why}"));
    let (a, b) = match spec.split_once("..") {
        Some((a, b)) => (a, b.strip_prefix('=').unwrap_or(b)),
        None => (spec, spec),
    };
    let a: u32 = a.trim().parse().map_err(|_| bad("expected A..B"))?;
    let b: u32 = b.trim().parse().map_err(|_| bad("expected A..B"))?;
    if a == 0 || a > b {
        return Err(bad("need 1 <= A <= B"));
    }
    if b > MAX_COUPON_BITS {
        return Err(bad(&format!("B is at most {MAX_COUPON_BITS}")));
    }
    Ok((a, b))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .exit_with(ExitKind::Io, "writing stdout")
        }
    }
}

pub fn coupon(args: &CouponArgs) -> CliResult<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let range: String = file.pick(args.l_range.clone(), "l-range", "1..4".to_string())?;
    let trials: usize = file.pick(args.trials, "trials", 100_000)?;
    let seed: u64 = file.pick(args.seed, "seed", 0)?;
    let placement = file.pick(args.placement, "placement", DriverPlacement::UniformBlocks)?;
    let out: Option<PathBuf> = file.pick_opt(args.out.clone(), "out")?;
    let (lo, hi) = parse_l_range(&range)?;
    if trials == 0 {
        return Err(CliError::config("--trials must be at least 1"));
    }

    let mut csv = String::new();
    match placement {
        DriverPlacement::UniformBlocks => {
            csv.push_str("l,trials,closed_form,closed_form_ceil,mc_mean,mc_std,p50,p90,p99\n");
            for l in lo..=hi {
                let stats = monte_carlo_drivers_needed(l, trials, seed.wrapping_add(l as u64))
                    .map_err(CliError::config)?;
                let q = |p: u32| stats.mc_quantiles[&p];
                csv.push_str(&format!(
                    "{},{},{:.6},{},{:.6},{:.6},{},{},{}\n",
                    l,
                    trials,
                    stats.expected_closed_form,
                    stats.closed_form_ceil,
                    stats.mc_mean,
                    stats.mc_stddev,
                    q(50),
                    q(90),
                    q(99)
                ));
            }
        }
        DriverPlacement::GraphNodes => {
            let (graph, _) = load_graph(&args.graph, &file)?;
            let eta: usize = file.pick(args.eta, "eta", 8)?;
            let m: u32 = file.pick(args.m, "m", 5)?;
            let drivers: usize = file.pick(args.drivers, "drivers", 100)?;
            if drivers == 0 {
                return Err(CliError::config("--drivers must be at least 1"));
            }
            if hi > MAX_BLOCK_BITS {
                return Err(CliError::config(format!(
                    "graph placement supports l up to {MAX_BLOCK_BITS}"
                )));
            }
            csv.push_str("l,coordinate,block,trials,drivers,distinct_values,singleton_rate,mean_drivers_to_singleton\n");
            for l in lo..=hi {
                let cfg = EmbeddingConfig::new(eta, l, m, seed).map_err(CliError::config)?;
                let scenario = Scenario::new(graph.clone(), cfg).map_err(CliError::config)?;
                let pool = scenario.embedder.embed_all();
                let rows = graph_placed_coverage(
                    &pool,
                    &scenario.params(),
                    drivers,
                    trials,
                    seed.wrapping_add(l as u64),
                )
                .map_err(CliError::config)?;
                for r in rows {
                    let mean = r
                        .mean_drivers_to_singleton
                        .map(|v| format!("{v:.6}"))
                        .unwrap_or_default();
                    csv.push_str(&format!(
                        "{},{},{},{},{},{},{:.6},{}\n",
                        l,
                        r.coordinate,
                        r.block,
                        trials,
                        drivers,
                        r.distinct_values,
                        r.singleton_rate,
                        mean
                    ));
                }
            }
        }
    }
    emit(out.as_deref(), &csv)
}

pub fn lemma_check(args: &LemmaArgs) -> CliResult<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let l_max: u32 = file.pick(args.l_max, "l-max", MAX_BLOCK_BITS)?;
    if !(1..=MAX_BLOCK_BITS).contains(&l_max) {
        return Err(CliError::config(format!(
            "--l-max must be in 1..={MAX_BLOCK_BITS}"
        )));
    }
    let mut total = 0u64;
    let mut failures = 0u64;
    for l in 1..=l_max {
        let radix = 1i64 << l;
        let mut failed = 0u64;
        for x in 0..radix {
            // reversed order so the check does not rely on sorted input
            let diffs: Vec<i64> = (0..radix).rev().map(|z| z - x).collect();
            match lemma1_recover(&diffs, l) {
                Ok(got) if i64::from(got) == x => {}
                _ => failed += 1,
            }
        }
        total += radix as u64;
        failures += failed;
        println!(
            "l={l} cases={radix} {}",
            if failed == 0 {
                "pass".to_string()
            } else {
                format!("FAIL ({failed})")
            }
        );
    }
    println!("total cases={total} failures={failures}");
    if failures > 0 {
        return Err(CliError::new(
            ExitKind::PropertyViolation,
            anyhow!("{failures} of {total} cases failed to recover"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec() {
        assert_eq!(parse_grid("10x12").unwrap(), (10, 12));
        assert!(parse_grid("10").is_err());
        assert!(parse_grid("ax3").is_err());
    }

    #[test]
    fn l_range_spec() {
        assert_eq!(parse_l_range("1..4").unwrap(), (1, 4));
        assert_eq!(parse_l_range("2..=3").unwrap(), (2, 3));
        assert_eq!(parse_l_range("5").unwrap(), (5, 5));
        for bad in ["0..3", "4..2", "1..17", "x"] {
            assert_eq!(parse_l_range(bad).unwrap_err().code(), 2, "{bad}");
        }
    }
}
