use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rtbust_core::synth::DEFAULT_WINDOW_START;

const SMALL_SPEC: &str = r#"
window_days = 14

[[group]]
kind = "human"
count = 30
rate_min = 5.0
rate_max = 30.0

[[group]]
kind = "straight_line"
count = 15
rate_min = 16.0
rate_max = 20.0
session_period_s = 14400.0
session_length_s = 3600.0
botnet = "bn1"
"#;

fn rtbust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtbust"))
        .args(args)
        .env_remove("RTBUST_SEED")
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn rtbust")
}

fn ok(args: &[&str]) -> Output {
    let out = rtbust(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the small corpus and returns (events, truth).
fn small_corpus(dir: &Path, seed: &str) -> (PathBuf, PathBuf) {
    let spec = dir.join("spec.toml");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let events = dir.join("events.tsv");
    let truth = dir.join("truth.csv");
    ok(&["synth", "--spec", s(&spec), "--seed", seed, "--out", s(&events), "--truth", s(&truth)]);
    (events, truth)
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(rtbust(&[]).status.code(), Some(2));
    assert_eq!(rtbust(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(rtbust(&["cluster", "--latents"]).status.code(), Some(2));
    assert_eq!(rtbust(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.tsv");
    let out = rtbust(&["run", "--events", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.tsv"));
    let out = rtbust(&["ingest", "--input", s(&missing), "--window-start", "0", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (events, _) = small_corpus(dir.path(), "1");
    let out = rtbust(&["run", "--events", s(&events), "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = rtbust(&["run", "--events", s(&events), "--extractor", "magic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.csv");
    let truth = dir.path().join("truth.csv");
    fs::write(&labels, "user_id,label,provenance\nu1,bot,clustered\n").unwrap();
    fs::write(&truth, "user_id,label\nu2,bot\n").unwrap();
    let out = rtbust(&["eval", "--pred", s(&labels), "--truth", s(&truth), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let (a, b) = (dir.path().join("a.tsv"), dir.path().join("b.tsv"));
    ok(&["synth", "--spec", s(&spec), "--seed", "77", "--out", s(&a), "--truth", s(&dir.path().join("ta.csv"))]);
    let out = Command::new(env!("CARGO_BIN_EXE_rtbust"))
        .args(["synth", "--spec", s(&spec), "--out", s(&b), "--truth", s(&dir.path().join("tb.csv"))])
        .env("RTBUST_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn subcommands_chain_into_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (events, truth) = small_corpus(d, "3");
    let start = DEFAULT_WINDOW_START.to_string();
    let series = d.join("series.txt");
    ok(&["ingest", "--input", s(&events), "--window-start", &start, "--out", s(&series)]);
    let n_series = fs::read_to_string(&series).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(n_series, 45);

    let latents = d.join("latents.csv");
    let model = d.join("model.proj");
    ok(&["features", "--extractor", "pca", "--dim", "4", "--series", s(&series), "--model-out", s(&model), "--out", s(&latents)]);
    let text = fs::read_to_string(&latents).unwrap();
    assert_eq!(text.lines().count(), 46);
    assert!(text.lines().all(|l| l.split(',').count() == 5));

    // a saved projector reproduces the fitted latents
    let again = d.join("again.csv");
    ok(&["features", "--extractor", "pca", "--series", s(&series), "--model", s(&model), "--out", s(&again)]);
    assert_eq!(fs::read(&latents).unwrap(), fs::read(&again).unwrap());

    let clusters = d.join("clusters.csv");
    ok(&["cluster", "--latents", s(&latents), "--out", s(&clusters)]);
    let labels = d.join("labels.csv");
    ok(&["detect", "--clusters", s(&clusters), "--out", s(&labels)]);
    assert_eq!(fs::read_to_string(&labels).unwrap().lines().count(), 46);
    let report = d.join("report.json");
    ok(&["eval", "--pred", s(&labels), "--truth", s(&truth), "--out", s(&report)]);
    let json = fs::read_to_string(&report).unwrap();
    for key in ["precision", "recall", "accuracy", "f1", "mcc"] {
        assert!(json.contains(&format!("\"{key}\"")), "{key} missing");
    }

    let hand = d.join("hand.csv");
    ok(&["features", "--extractor", "handcrafted", "--series", s(&series), "--events", s(&events), "--out", s(&hand)]);
    assert_eq!(fs::read_to_string(&hand).unwrap().lines().next().unwrap().split(',').count(), 13);
}

#[test]
fn trained_autoencoder_feeds_feature_extraction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (events, _) = small_corpus(d, "4");
    let series = d.join("series.txt");
    ok(&["ingest", "--input", s(&events), "--window-start", &DEFAULT_WINDOW_START.to_string(), "--out", s(&series)]);
    let model = d.join("model.vae");
    let losses = d.join("loss.csv");
    ok(&[
        "train-vae", "--series", s(&series), "--dim", "2", "--hidden", "6", "--seq-len", "32", "--epochs", "3",
        "--batch-size", "16", "--seed", "5", "--model-out", s(&model), "--loss-out", s(&losses),
    ]);
    assert!(fs::read_to_string(&model).unwrap().starts_with("RTBUST-VAE v1 d=2 h=6 L=32"));
    assert_eq!(fs::read_to_string(&losses).unwrap().lines().count(), 4);
    let latents = d.join("latents.csv");
    ok(&["features", "--extractor", "vae", "--series", s(&series), "--model", s(&model), "--out", s(&latents)]);
    let text = fs::read_to_string(&latents).unwrap();
    assert_eq!(text.lines().count(), 46);
    assert!(text.lines().all(|l| l.split(',').count() == 3));
}

#[test]
fn rtt_renders_single_and_group_figures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (events, truth) = small_corpus(d, "5");
    let bots: Vec<String> = fs::read_to_string(&truth)
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",bot"))
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    let one = d.join("one.svg");
    ok(&["rtt", "--events", s(&events), "--user", &bots[0], "--out", s(&one)]);
    let svg = fs::read_to_string(&one).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    let list = d.join("bots.txt");
    fs::write(&list, bots.join("\n")).unwrap();
    let group = d.join("group.svg");
    let zoom = format!("{}:{}", DEFAULT_WINDOW_START, DEFAULT_WINDOW_START + 86_400);
    ok(&["rtt", "--events", s(&events), "--users", s(&list), "--zoom", &zoom, "--out", s(&group)]);
    let svg = fs::read_to_string(&group).unwrap();
    assert!(svg.contains("zoom-inset"));
    let again = d.join("again.svg");
    ok(&["rtt", "--events", s(&events), "--users", s(&list), "--zoom", &zoom, "--out", s(&again)]);
    assert_eq!(fs::read(&group).unwrap(), fs::read(&again).unwrap());
    assert_eq!(rtbust(&["rtt", "--events", s(&events), "--out", s(&again)]).status.code(), Some(2));
}

#[test]
fn run_writes_every_artifact_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (events, truth) = small_corpus(d, "6");
    let config = d.join("run.conf");
    fs::write(&config, "# small run\nextractor = tica\nlatent_dim = 4\nseq_len = 128\nseed = 9\n").unwrap();
    let (a, b) = (d.join("a"), d.join("b"));
    for out in [&a, &b] {
        ok(&["run", "--config", s(&config), "--events", s(&events), "--truth", s(&truth), "--out-dir", s(out)]);
    }
    for name in ["series.txt", "latents.csv", "model.proj", "clusters.csv", "labels.csv", "report.json", "trace.log"] {
        assert!(a.join(name).is_file(), "{name} missing");
    }
    for name in ["labels.csv", "report.json", "latents.csv", "clusters.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    assert!(fs::read_dir(&a).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".partial")));
    let trace = fs::read_to_string(a.join("trace.log")).unwrap();
    assert!(trace.contains("seed") && trace.contains("cluster"));
}
