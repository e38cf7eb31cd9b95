use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn orhleak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orhleak"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    orhleak(&args)
}

#[test]
fn simulate_writes_one_transcript_with_all_differences() {
    let tmp = TempDir::new().unwrap();
    let out = simulate(
        tmp.path(),
        &[
            "--grid",
            "10x10",
            "--eta",
            "8",
            "--l",
            "2",
            "--m",
            "5",
            "--drivers",
            "30",
            "--seed",
            "42",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(files.len(), 1);
    let doc = read_json(&tmp.path().join("query_0000.json"));
    let per_driver = doc["per_driver"].as_array().unwrap();
    assert_eq!(per_driver.len(), 30);
    let diffs: usize = per_driver
        .iter()
        .map(|d| d["diffs"].as_array().unwrap().len())
        .sum();
    assert_eq!(diffs, 8 * 5 * 30);
    assert!(doc.get("rider_hidden").is_none());
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = [
        "--drivers",
        "12",
        "--queries",
        "3",
        "--seed",
        "9",
        "--reveal-truth",
    ];
    assert_eq!(code(&simulate(a.path(), &args)), 0);
    assert_eq!(code(&simulate(b.path(), &args)), 0);
    for q in 0..3 {
        let name = format!("query_{q:04}.json");
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap()
        );
    }
    let other = TempDir::new().unwrap();
    simulate(
        other.path(),
        &[
            "--drivers",
            "12",
            "--queries",
            "3",
            "--seed",
            "10",
            "--reveal-truth",
        ],
    );
    assert_ne!(
        fs::read(a.path().join("query_0000.json")).unwrap(),
        fs::read(other.path().join("query_0000.json")).unwrap()
    );
}

#[test]
fn simulate_rejects_bad_configuration() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&simulate(tmp.path(), &["--drivers", "0"])), 2);
    // 2^(1*2) = 4 cannot hold the grid diameter of 18
    assert_eq!(code(&simulate(tmp.path(), &["--l", "2", "--m", "1"])), 2);
    assert_eq!(code(&simulate(tmp.path(), &["--grid", "ten"])), 2);
    assert_eq!(
        code(&simulate(
            tmp.path(),
            &["--graph", "/nonexistent/graph.txt"]
        )),
        3
    );
}

#[test]
fn simulate_reads_edge_list_files() {
    let tmp = TempDir::new().unwrap();
    let graph = tmp.path().join("g.txt");
    fs::write(&graph, "# a path\nnodes 4\n0 1 3\n1 2 1\n2 3 2\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = simulate(
        &out_dir,
        &[
            "--graph",
            graph.to_str().unwrap(),
            "--eta",
            "2",
            "--drivers",
            "3",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&out_dir.join("query_0000.json"));
    assert_eq!(doc["config"]["eta"], 2);

    fs::write(&graph, "nodes 3\n0 1 1\n").unwrap();
    assert_eq!(
        code(&simulate(&out_dir, &["--graph", graph.to_str().unwrap()])),
        2
    );
}

#[test]
fn attack_recovers_everything_from_one_hundred_drivers() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path().join("t");
    assert_eq!(
        code(&simulate(
            &t,
            &[
                "--drivers",
                "100",
                "--queries",
                "4",
                "--seed",
                "42",
                "--reveal-truth"
            ]
        )),
        0
    );
    let out = orhleak(&["attack", t.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    for report in &lines {
        assert_eq!(report["complete"], true);
        let exact = &report["exact_match"];
        assert_eq!(exact["rider"], true);
        let drivers = exact["drivers"].as_object().unwrap();
        assert_eq!(drivers.len(), 100);
        assert!(drivers.values().all(|v| v == true));
        assert_eq!(report["rider_vec"].as_array().unwrap().len(), 8);
    }
}

#[test]
fn attack_reports_intervals_when_incomplete() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path().join("t");
    assert_eq!(
        code(&simulate(
            &t,
            &["--l", "4", "--m", "2", "--drivers", "1", "--reveal-truth"]
        )),
        0
    );
    let reports = tmp.path().join("r");
    let out = orhleak(&[
        "attack",
        t.join("query_0000.json").to_str().unwrap(),
        "--out",
        reports.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&reports.join("query_0000.report.json"));
    assert_eq!(report["complete"], false);
    assert!(report.get("rider_vec").is_none());
    let blocks = report["per_block"].as_array().unwrap();
    assert_eq!(blocks.len(), 16);
    for b in blocks {
        let (lo, hi) = (
            b["candidates_lo"].as_u64().unwrap(),
            b["candidates_hi"].as_u64().unwrap(),
        );
        assert!(lo <= hi && hi <= 15);
    }
    assert!(blocks
        .iter()
        .any(|b| b["candidates_lo"] != b["candidates_hi"]));
    assert_eq!(report["exact_match"]["rider"], false);
}

#[test]
fn attack_rejects_forged_and_mismatched_transcripts() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path().join("t");
    assert_eq!(code(&simulate(&t, &["--drivers", "5"])), 0);
    let path = t.join("query_0000.json");
    let good = read_json(&path);

    assert_eq!(
        code(&orhleak(&["attack", path.to_str().unwrap(), "--l", "3"])),
        2
    );
    assert_eq!(
        code(&orhleak(&[
            "attack",
            path.to_str().unwrap(),
            "--l",
            "2",
            "--eta",
            "8"
        ])),
        0
    );

    let mut forged = good.clone();
    let d = forged["per_driver"][0]["distance"].as_u64().unwrap();
    forged["per_driver"][0]["distance"] = Value::from(d + 1);
    let forged_path = tmp.path().join("forged.json");
    fs::write(&forged_path, forged.to_string()).unwrap();
    assert_eq!(
        code(&orhleak(&["attack", forged_path.to_str().unwrap()])),
        4
    );

    // a block-0 difference outside [-(2^l - 1), 2^l - 1]
    let mut forged = good;
    forged["per_driver"][1]["diffs"][0][2] = Value::from(9);
    fs::write(&forged_path, forged.to_string()).unwrap();
    assert_eq!(
        code(&orhleak(&["attack", forged_path.to_str().unwrap()])),
        4
    );

    fs::write(&forged_path, "{ not json").unwrap();
    assert_eq!(
        code(&orhleak(&["attack", forged_path.to_str().unwrap()])),
        4
    );
    assert_eq!(code(&orhleak(&["attack", "/nonexistent.json"])), 3);
}

#[test]
fn same_rider_mode_requires_consistent_transcripts() {
    let tmp = TempDir::new().unwrap();
    let t = tmp.path().join("t");
    assert_eq!(
        code(&simulate(
            &t,
            &["--drivers", "40", "--queries", "2", "--seed", "3"]
        )),
        0
    );
    // seed 3 puts the two queries' riders at different nodes, so folding
    // them together contradicts itself
    let out = orhleak(&["attack", "--same-rider", t.to_str().unwrap()]);
    assert_eq!(code(&out), 4, "{}", stdout(&out));
    let single = orhleak(&[
        "attack",
        "--same-rider",
        t.join("query_0001.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&single), 0);
    assert_eq!(stdout(&single).lines().count(), 1);
}

#[test]
fn coupon_reproduces_expected_driver_counts() {
    let out = orhleak(&[
        "coupon",
        "--l-range",
        "1..4",
        "--trials",
        "100000",
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "l,trials,closed_form,closed_form_ceil,mc_mean,mc_std,p50,p90,p99"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let ceils: Vec<&str> = rows.iter().map(|r| r[3]).collect();
    assert_eq!(ceils, ["3", "9", "22", "55"]);
    for r in &rows {
        let closed: f64 = r[2].parse().unwrap();
        let mean: f64 = r[4].parse().unwrap();
        let sd: f64 = r[5].parse().unwrap();
        assert!(
            (mean - closed).abs() < 5.0 * sd / (100_000f64).sqrt(),
            "{r:?}"
        );
    }
}

#[test]
fn coupon_single_trial_and_determinism() {
    let out = orhleak(&["coupon", "--l-range", "2..2", "--trials", "1"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[5], "0.000000");
    assert_eq!(
        row[4].parse::<f64>().unwrap(),
        row[6].parse::<f64>().unwrap()
    );

    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    for p in [&a, &b] {
        let out = orhleak(&[
            "coupon",
            "--trials",
            "2000",
            "--seed",
            "5",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    for bad in ["0..2", "3..1", "1..40", "nope"] {
        assert_eq!(code(&orhleak(&["coupon", "--l-range", bad])), 2, "{bad}");
    }
    assert_eq!(code(&orhleak(&["coupon", "--trials", "0"])), 2);
}

#[test]
fn coupon_graph_placement_reports_every_position() {
    let out = orhleak(&[
        "coupon",
        "--placement",
        "graph-nodes",
        "--grid",
        "6x6",
        "--eta",
        "3",
        "--m",
        "4",
        "--l-range",
        "2..2",
        "--trials",
        "50",
        "--drivers",
        "40",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "l,coordinate,block,trials,drivers,distinct_values,singleton_rate,mean_drivers_to_singleton"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 12);
    for r in rows {
        let rate: f64 = r[6].parse().unwrap();
        assert!((0.0..=1.0).contains(&rate));
        // a position whose values never span 0 and 3 cannot resolve
        if r[5].parse::<usize>().unwrap() < 4 {
            assert_eq!(rate, 0.0, "{r:?}");
        }
    }
}

#[test]
fn lemma_check_counts_cases() {
    let out = orhleak(&["lemma-check", "--l-max", "4"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("total cases=30 failures=0"));
    let out = orhleak(&["lemma-check", "--l-max", "1"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("total cases=2 failures=0"));
    assert_eq!(code(&orhleak(&["lemma-check", "--l-max", "9"])), 2);
    assert_eq!(code(&orhleak(&["lemma-check", "--l-max", "0"])), 2);
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(
        &cfg,
        "# defaults for this run\ngrid = 5x5\neta = 3\nl = 2\nm = 3\ndrivers = 4\nseed = 11\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("o");
    let out = simulate(
        &out_dir,
        &["--config", cfg.to_str().unwrap(), "--drivers", "6"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&out_dir.join("query_0000.json"));
    assert_eq!(doc["config"]["eta"], 3);
    assert_eq!(doc["config"]["seed"], 11);
    assert_eq!(doc["config"]["graph"], "grid:5x5");
    assert_eq!(doc["per_driver"].as_array().unwrap().len(), 6);

    fs::write(&cfg, "eta 3\n").unwrap();
    assert_eq!(
        code(&simulate(&out_dir, &["--config", cfg.to_str().unwrap()])),
        2
    );
    fs::write(&cfg, "eta = many\n").unwrap();
    assert_eq!(
        code(&simulate(&out_dir, &["--config", cfg.to_str().unwrap()])),
        2
    );
    assert_eq!(
        code(&simulate(&out_dir, &["--config", "/nonexistent.conf"])),
        3
    );
}
