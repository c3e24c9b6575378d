use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use strokegan::checkpoint::Checkpoint;
use strokegan::config::ModelKind;
use strokegan::seeded_rng;
use strokegan::toy::toy_corpus;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_strokegan"));
    c.env_remove("STROKEGAN_DATA_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "failed: {}\n{}", String::from_utf8_lossy(&o.stderr), stdout(&o));
    stdout(&o)
}

fn corpus(dir: &Path, count: usize) -> PathBuf {
    let p = dir.join("boxes.ndjson");
    toy_corpus(count, &mut seeded_rng(4)).unwrap().write_records(std::fs::File::create(&p).unwrap()).unwrap();
    p
}

const TINY_SKEGAN: &[&str] =
    &["--pretrain-g", "3", "--pretrain-d", "2", "--rounds", "1", "--epoch-iters", "1", "--rollouts", "2", "--batch", "4"];

fn trained_skegan(dir: &Path) -> PathBuf {
    let data = corpus(dir, 24);
    let out = dir.join("skegan.ckpt");
    let mut args = vec!["train-skegan", "--dataset", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--held-out", "4"];
    args.extend_from_slice(TINY_SKEGAN);
    let text = ok(run(&args));
    assert!(text.contains("round 1"), "{text}");
    assert!(text.contains("held-out"), "{text}");
    out
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["sample"]).status.code(), Some(2));
    let o = run(&["render", "--dataset", "/definitely/not/here.ndjson"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot open dataset"));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn ingest_filters_and_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 10);
    let mut text = std::fs::read_to_string(&data).unwrap();
    text.push_str("not json\n{\"label\":\"cat\",\"drawing\":[[1,2,0],[3,4,1]]}\n");
    std::fs::write(&data, text).unwrap();
    let out = dir.path().join("clean.ndjson");
    let summary = ok(run(&["ingest", "--input", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--category", "box", "--limit", "6"]));
    let v: serde_json::Value = serde_json::from_str(summary.trim()).unwrap();
    assert_eq!(v["read"], 11);
    assert_eq!(v["kept"], 6);
    assert_eq!(v["n_max"], 7);
    assert!((v["ske_score"]["mean"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 6);
}

#[test]
fn data_dir_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), 5);
    let svg = ok(bin().env("STROKEGAN_DATA_DIR", dir.path()).args(["render", "--dataset", "boxes.ndjson", "--index", "2"]).output().unwrap());
    assert!(svg.contains("<svg"));
    assert_eq!(run(&["render", "--dataset", "boxes.ndjson"]).status.code(), Some(1));
}

#[test]
fn skegan_pipeline_train_sample_complete_score() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained_skegan(dir.path());
    let c = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(c.meta.kind, ModelKind::Skegan);
    assert_eq!(c.meta.n_max, 7);
    assert_eq!(c.meta.category, "box");
    let m = ckpt.to_str().unwrap();

    let grid = dir.path().join("grid.svg");
    ok(run(&["sample", "--model", m, "--count", "5", "--out", grid.to_str().unwrap()]));
    assert!(std::fs::read_to_string(&grid).unwrap().contains("<svg"));

    let a = ok(run(&["sample", "--model", m, "--count", "3", "--seed", "9"]));
    let b = ok(run(&["sample", "--model", m, "--count", "3", "--seed", "9"]));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 3);
    for line in a.lines() {
        strokegan::stroke::parse_record(line).unwrap();
    }

    let prefix = "[[10.0,0.0,0],[0.0,10.0,1]]";
    let done = ok(run(&["complete", "--model", m, "--strokes", prefix, "--count", "2"]));
    for line in done.lines() {
        let rec = strokegan::stroke::parse_record(line).unwrap();
        assert_eq!(rec.drawing[0].dx, 10.0);
        assert!(rec.drawing[1].lift);
        assert!(rec.drawing.len() >= 2 && rec.drawing.len() <= 7);
    }
    let svg = dir.path().join("done.svg");
    ok(run(&["complete", "--model", m, "--strokes", prefix, "--out", svg.to_str().unwrap()]));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
    assert_eq!(run(&["complete", "--model", m, "--strokes", "[]"]).status.code(), Some(1));
    assert_eq!(run(&["complete", "--model", m, "--strokes", prefix, "--tau", "0"]).status.code(), Some(1));

    let data = dir.path().join("boxes.ndjson");
    let scores = ok(run(&["score", "--dataset", data.to_str().unwrap(), "--model", m, "--samples", "50", "--json"]));
    let lines: Vec<serde_json::Value> = scores.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["source"], "dataset");
    assert!(lines[2]["goodness"].is_boolean());

    let sweep = dir.path().join("sweep.svg");
    let table = ok(run(&["sweep", "--model", m, "--values", "0.5,1.0", "--count", "3", "--out", sweep.to_str().unwrap()]));
    assert!(table.contains("tau 0.5") && table.contains("tau 1"));
    assert!(sweep.exists());
}

#[test]
fn pretrain_then_resume_into_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 16);
    let pre = dir.path().join("pre.ckpt");
    let mut args = vec!["pretrain", "--dataset", data.to_str().unwrap(), "--out", pre.to_str().unwrap()];
    args.extend_from_slice(TINY_SKEGAN);
    let text = ok(run(&args));
    assert!(text.contains("generator pre-training") && !text.contains("round 1"));
    let counters: serde_json::Value = serde_json::from_str(&Checkpoint::load(&pre).unwrap().meta.counters).unwrap();
    assert_eq!(counters["pretrain_g"], 3);
    assert_eq!(counters["rounds"], 0);

    let text = ok(run(&["train-skegan", "--dataset", data.to_str().unwrap(), "--out", pre.to_str().unwrap(), "--resume", pre.to_str().unwrap()]));
    assert!(text.contains("round 1"), "{text}");
    let counters: serde_json::Value = serde_json::from_str(&Checkpoint::load(&pre).unwrap().meta.counters).unwrap();
    assert_eq!(counters["pretrain_g"], 3);
    assert_eq!(counters["rounds"], 1);
}

#[test]
fn vaskegan_training_with_metrics_and_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 12);
    let out = dir.path().join("vae.ckpt");
    let metrics = dir.path().join("metrics.ndjson");
    let args = ["train-vaskegan", "--dataset", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--iters", "4", "--batch", "4", "--metrics", metrics.to_str().unwrap(), "--disc", "gru"];
    let text = ok(run(&args));
    assert!(text.contains("after 4 iterations"), "{text}");
    assert_eq!(Checkpoint::load(&out).unwrap().meta.kind, ModelKind::Vaskegan);
    assert!(std::fs::read_to_string(&metrics).unwrap().lines().count() >= 4);

    let pure = dir.path().join("pure.ckpt");
    let init = ["train-vaskegan", "--dataset", data.to_str().unwrap(), "--out", pure.to_str().unwrap(), "--iters", "2", "--batch", "4", "--pure-gan", "--init", out.to_str().unwrap(), "--disc", "gru"];
    ok(run(&init));
    let done = ok(run(&["complete", "--model", pure.to_str().unwrap(), "--strokes", "[[1,1,0]]"]));
    assert_eq!(done.lines().count(), 1);
}
