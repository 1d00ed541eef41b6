mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssdrec::dataio::UserSequence;
use ssdrec::relgraph::GraphConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ssdrec"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 30 users over 20 items, 8 to 14 rated interactions each.
fn write_log(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut text = String::new();
    for u in 0..30 {
        let n = rng.gen_range(8..=14);
        for t in 0..n {
            let item = (u * 3 + t * rng.gen_range(1..4)) % 20;
            text.push_str(&format!("u{u}\ti{item}\t{}\t{}\n", 1000 + t * 10 + u, rng.gen_range(1..=5)));
        }
    }
    let path = dir.join("ratings.tsv");
    fs::write(&path, text).unwrap();
    path
}

fn small_config(data: &Path) -> Vec<String> {
    [
        format!("data.path={}", data.display()),
        "data.min_item_freq=2".into(),
        "encoder.dim=8".into(),
        "trainer.max_epochs=3".into(),
        "trainer.patience=5".into(),
        "trainer.batch_size=64".into(),
        "trainer.prefixes_per_user=3".into(),
        "encoder.refresh=per_step".into(),
    ]
    .into_iter()
    .flat_map(|kv| ["--set".to_string(), kv])
    .collect()
}

fn args<'a>(head: &[&'a str], rest: &'a [String]) -> Vec<&'a str> {
    head.iter().copied().chain(rest.iter().map(String::as_str)).collect()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn build_graph_matches_oracle_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    // Three users; items already indexed by first appearance in time order.
    let log = "a\tx\t1\na\ty\t2\na\tz\t3\na\tx\t4\na\tw\t5\n\
               b\ty\t1\nb\tz\t2\nb\tw\t3\nb\tv\t4\nb\tx\t5\n\
               c\tv\t1\nc\tw\t2\nc\tq\t3\nc\ty\t4\nc\tr\t5\nc\tx\t6\n";
    let data = tmp.path().join("log.tsv");
    fs::write(&data, log).unwrap();
    let out = tmp.path().join("graph");
    let sets = [
        "--set".to_string(),
        format!("data.path={}", data.display()),
        "--set".into(),
        "data.min_item_freq=1".into(),
        "--set".into(),
        "graph.item_ratio=0.5".into(),
    ];
    let o = run(&args(&["build-graph", out.to_str().unwrap()], &sets));
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();

    let cfg = ssdrec::config::RunConfig::default();
    let mut cfg = cfg;
    for kv in sets.iter().skip(1).step_by(2) {
        cfg.apply_override(kv).unwrap();
    }
    let prepared = ssdrec::cli::Prepared::load(&cfg).unwrap();
    let train: Vec<UserSequence> = prepared.train_prefixes();
    let oracle = common::oracle_graph(
        &train,
        prepared.num_users,
        prepared.num_items,
        &GraphConfig { item_ratio: 0.5, ..Default::default() },
    );
    let counts = &manifest["edge_counts"];
    assert_eq!(counts["interactional"], oracle.interactional.len());
    assert_eq!(counts["transitional"], oracle.transitional.len());
    assert_eq!(counts["incompatible"], oracle.incompatible.len());
    assert_eq!(counts["similar_user"], oracle.similar.len());
    assert_eq!(counts["dissimilar_user"], oracle.dissimilar.len());

    let first = dir_bytes(&out);
    assert!(first.len() >= 6, "{:?}", first.iter().map(|f| &f.0).collect::<Vec<_>>());
    let refused = run(&args(&["build-graph", out.to_str().unwrap()], &sets));
    assert_eq!(refused.status.code(), Some(2));
    assert!(stderr(&refused).contains("--force"));
    let again = run(&args(&["build-graph", out.to_str().unwrap(), "--force"], &sets));
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(dir_bytes(&out), first);
}

#[test]
fn missing_input_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["build-graph", tmp.path().join("g").to_str().unwrap(), "--set", "data.path=/nonexistent/ratings.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/ratings.tsv"), "{}", stderr(&o));
    let bad = run(&["train", "x", "--set", "trainer.sed=1"]);
    assert_eq!(bad.status.code(), Some(2));
    let usage = run(&["frobnicate"]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn train_eval_oups_plot_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_log(tmp.path());
    let sets = small_config(&data);
    let run_dir = tmp.path().join("run");
    let rd = run_dir.to_str().unwrap();

    let o = run(&args(&["train", rd, "--seed", "4"], &sets));
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.txt", "params.bin", "log.jsonl", "report.json", "graph"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let config = fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(config.contains("trainer.seed = 4"), "{config}");
    let log = ssdrec::cli::read_log(&run_dir).unwrap();
    let epochs = log.iter().filter(|e| matches!(e, ssdrec::cli::LogEntry::Epoch(_))).count();
    assert_eq!(epochs, 3);

    let e1 = run(&["eval", rd]);
    let e2 = run(&["eval", rd]);
    assert!(e1.status.success(), "{}", stderr(&e1));
    assert_eq!(stdout(&e1), stdout(&e2));
    let report: serde_json::Value = serde_json::from_str(&stdout(&e1)).unwrap();
    let saved: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["hr@20"], saved["hr@20"]);

    let u1 = run(&["oups", rd, "--seed", "8", "--noise-ratio", "0.2"]);
    let u2 = run(&["oups", rd, "--seed", "8", "--noise-ratio", "0.2"]);
    assert!(u1.status.success(), "{}", stderr(&u1));
    assert_eq!(stdout(&u1), stdout(&u2));

    let p = run(&["plot", rd]);
    assert!(p.status.success(), "{}", stderr(&p));
    let svg = fs::read_to_string(run_dir.join("valid_hr20.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 3);
    let table = fs::read_to_string(run_dir.join("metrics.md")).unwrap();
    assert_eq!(table.lines().filter(|l| l.starts_with("| valid")).count(), 3);

    // A rerun from the echoed config and seed reproduces the run.
    let again = tmp.path().join("again");
    let o2 = run(&["train", again.to_str().unwrap(), "--config", run_dir.join("config.txt").to_str().unwrap()]);
    assert!(o2.status.success(), "{}", stderr(&o2));
    assert_eq!(fs::read(again.join("params.bin")).unwrap(), fs::read(run_dir.join("params.bin")).unwrap());
    assert_eq!(fs::read(again.join("report.json")).unwrap(), fs::read(run_dir.join("report.json")).unwrap());

    let params = run_dir.join("params.bin");
    let mut bytes = fs::read(&params).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&params, &bytes).unwrap();
    let corrupt = run(&["eval", rd]);
    assert_eq!(corrupt.status.code(), Some(3), "{}", stderr(&corrupt));
    fs::write(run_dir.join("log.jsonl"), "{not json\n").unwrap();
    assert_eq!(run(&["plot", rd]).status.code(), Some(3));
    fs::remove_file(run_dir.join("config.txt")).unwrap();
    assert_eq!(run(&["eval", rd]).status.code(), Some(3));
}
