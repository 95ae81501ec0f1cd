//! The `etlab` binary end to end.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use etlab::config::SCHEMA;
use etlab::corpus::toy_corpus_tsv;

fn etlab(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_etlab"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn text(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Small model settings shared by the training commands.
const TINY: &[&str] = &["--model.d_model", "16", "--model.d_ff", "32", "--model.n_heads", "2", "--model.n_layers", "1"];

fn train_tiny(dir: &Path) -> std::path::PathBuf {
    let corpus = dir.join("corpus.tsv");
    std::fs::write(&corpus, toy_corpus_tsv(40, 3)).unwrap();
    let run = dir.join("run");
    let mut args = vec!["train", "--corpus", "tsv", corpus.to_str().unwrap(), "--out", run.to_str().unwrap()];
    args.extend(TINY);
    args.extend(["--train.epochs", "2"]);
    let o = etlab(&args, "");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    run
}

#[test]
fn help_lists_every_setting_with_its_default() {
    let o = etlab(&["--help"], "");
    assert_eq!(o.status.code(), Some(0));
    let help = text(&o);
    let listed: Vec<(String, String)> = help
        .split("settings (key=default):\n")
        .nth(1)
        .unwrap()
        .lines()
        .map(|l| {
            let entry = l.trim_start().split("  ").next().unwrap();
            let (k, v) = entry.split_once('=').unwrap();
            (k.to_string(), v.to_string())
        })
        .collect();
    let schema: Vec<(String, String)> = SCHEMA.iter().map(|s| (s.key.to_string(), s.default.to_string())).collect();
    assert_eq!(listed, schema);
    for cmd in ["train", "evaluate", "translate", "pe-learn", "ablate", "gradcheck", "heatmap"] {
        assert!(help.contains(&format!("  {cmd} ")), "{cmd} missing from help");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(etlab(&[], "").status.code(), Some(1));
    assert_eq!(etlab(&["frobnicate"], "").status.code(), Some(1));
    assert_eq!(etlab(&["train", "--bogus"], "").status.code(), Some(1));
    assert_eq!(etlab(&["train", "--model.nope", "1"], "").status.code(), Some(2));
    assert_eq!(etlab(&["train", "--model.d_model", "wide"], "").status.code(), Some(2));
    assert_eq!(etlab(&["translate", "--checkpoint", "/nonexistent/ck.etck"], "").status.code(), Some(2));
    assert_eq!(etlab(&["train", "--corpus", "tsv", "/nonexistent/c.tsv"], "").status.code(), Some(2));
}

#[test]
fn settings_file_then_flags_land_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    std::fs::write(&corpus, toy_corpus_tsv(30, 4)).unwrap();
    let cfg = dir.path().join("lab.conf");
    std::fs::write(&cfg, "# tiny\ntrain.epochs=1\ntrain.seed=9\nmodel.d_model=16\nmodel.d_ff=24\nmodel.n_heads=2\n").unwrap();
    let run = dir.path().join("run");
    let o = etlab(
        &["train", "--config", cfg.to_str().unwrap(), "--train.seed", "5", "--corpus", "tsv", corpus.to_str().unwrap(), "--out", run.to_str().unwrap(), "--model.n_layers", "1"],
        "",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).starts_with("epochs=1 "));
    let manifest = std::fs::read_to_string(run.join("manifest.txt")).unwrap();
    for line in ["settings.train.seed=5", "settings.train.epochs=1", "settings.model.d_ff=24", "settings.model.n_layers=1", "settings.model.dropout=0.1"] {
        assert!(manifest.lines().any(|l| l == line), "{line} missing from manifest");
    }
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,config,train_loss,test_bleu,avg_bleu_last100"));
}

#[test]
fn translate_evaluate_and_heatmap_on_a_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_tiny(dir.path());
    let ck = run.join("checkpoint.etck");
    let ck = ck.to_str().unwrap();

    let o = etlab(&["translate", "--checkpoint", ck], "");
    assert_eq!((o.status.code(), text(&o)), (Some(0), String::new()));
    let once = etlab(&["translate", "--checkpoint", ck], "the man sees a dog .\n\nein hund\n");
    let twice = etlab(&["translate", "--checkpoint", ck], "the man sees a dog .\n\nein hund\n");
    assert!(once.status.success());
    assert_eq!(text(&once).lines().count(), 3);
    assert_eq!(text(&once).lines().nth(1), Some(""));
    assert_eq!(once.stdout, twice.stdout);

    let corpus = dir.path().join("corpus.tsv");
    let o = etlab(&["evaluate", "--checkpoint", ck, "--corpus", "tsv", corpus.to_str().unwrap()], "");
    assert!(o.status.success());
    assert!(text(&o).starts_with("bleu="));

    let maps = dir.path().join("maps");
    let o = etlab(&["heatmap", "--checkpoint", ck, "--sentence", "i love you so much", "--out", maps.to_str().unwrap()], "");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svgs = std::fs::read_dir(&maps).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")).count();
    assert_eq!(svgs, 2 + 1, "one map per encoder head plus the positional matrix");
}

#[test]
fn pe_learn_writes_matrix_heatmap_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("pe.csv");
    let o = etlab(
        &["pe-learn", "--out", csv.to_str().unwrap(), "--pe.sac.steps", "300", "--pe.sac.warmup", "50", "--pe.ascent.steps", "50"],
        "",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).starts_with("learned_reward="));
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 16);
    assert!(rows.lines().all(|l| l.split(',').count() == 8));
    assert!(dir.path().join("pe.svg").exists());
    let trace = std::fs::read_to_string(dir.path().join("pe_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 301);
}
