use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pmkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmkg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--types",
    "3",
    "--entities-per-type",
    "12",
    "--relations",
    "8",
    "--patterns",
    "3",
    "--triples-per-relation",
    "10",
    "--valid-relations",
    "2",
    "--test-relations",
    "2",
    "--background-relations",
    "4",
    "--background-triples",
    "20",
    "--dim",
    "6",
    "--candidates",
    "20",
];

fn gen(dir: &Path, seed: &str) -> Output {
    let mut args = vec!["gen-synthetic", "--out", path(dir), "--seed", seed];
    args.extend_from_slice(SMALL);
    pmkg(&args)
}

fn small_train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        path(data),
        "--out",
        path(out),
        "--steps",
        "4",
        "--batch-size",
        "3",
        "--eval-interval",
        "2",
        "--k-shot",
        "3",
        "--set",
        "pool_size=8",
        "--set",
        "num_negatives=16",
    ];
    args.extend_from_slice(extra);
    pmkg(&args)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
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
fn help_and_version_exit_zero() {
    assert_eq!(code(&pmkg(&["--help"])), 0);
    assert_eq!(code(&pmkg(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&pmkg(&["no-such-command"])), 1);
    assert_eq!(code(&pmkg(&["train", "--data", "x"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let o = pmkg(&["train", "--data", path(dir.path()), "--out", path(dir.path()), "--set", "bogus=1"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let o = pmkg(&["train", "--data", path(dir.path()), "--out", path(dir.path()), "--set", "lambda"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = pmkg(&["train", "--data", path(&dir.path().join("absent")), "--out", path(&dir.path().join("run"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_verdict_sets_exit_code() {
    let ok = pmkg(&["gradcheck"]);
    assert_eq!(code(&ok), 0);
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("gradcheck passed"), "{text}");
    assert_eq!(text.lines().filter(|l| l.ends_with(" ok")).count(), 10, "{text}");
    assert_eq!(code(&pmkg(&["gradcheck", "--tolerance", "0"])), 3);
    assert_eq!(code(&pmkg(&["gradcheck", "--eps", "0"])), 1);
}

#[test]
fn generation_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&gen(&a, "7")), 0);
    assert_eq!(code(&gen(&b, "7")), 0);
    assert_eq!(code(&gen(&c, "8")), 0);
    assert_eq!(files(&a), files(&b));
    assert_ne!(files(&a), files(&c));
    assert_eq!(files(&a).len(), 9);
}

#[test]
fn single_type_generation_works() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["gen-synthetic", "--out", path(dir.path())];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--types", "1"]);
    let o = pmkg(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let spec: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("spec.json")).unwrap()).unwrap();
    let pats = spec["relation_patterns"].as_object().unwrap();
    assert!(pats.values().all(|p| p == &serde_json::json!([0, 0])));
}

#[test]
fn zero_steps_writes_initial_run() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = (dir.path().join("data"), dir.path().join("run"));
    gen(&data, "1");
    let o = small_train(&data, &out, &["--steps", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2, "{log}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["best_step"], 0);
    assert!(out.join("checkpoint.pmkg").exists());
    let cfg = fs::read_to_string(out.join("run-config.txt")).unwrap();
    assert!(cfg.lines().any(|l| l.replace(' ', "") == "steps=0"), "{cfg}");
}

#[test]
fn ablation_tag_reaches_report() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = (dir.path().join("data"), dir.path().join("run"));
    gen(&data, "1");
    let o = small_train(&data, &out, &["--steps", "1", "--ablate", "pool-tuning"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["ablations"], serde_json::json!(["pool-tuning"]));
}

#[test]
fn eval_is_repeatable_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = (dir.path().join("data"), dir.path().join("run"));
    gen(&data, "2");
    assert_eq!(code(&small_train(&data, &out, &[])), 0);
    let ck = out.join("checkpoint.pmkg");
    let metrics = dir.path().join("m.json");
    let a = pmkg(&["eval", "--checkpoint", path(&ck), "--data", path(&data), "--out", path(&metrics)]);
    let b = pmkg(&["eval", "--checkpoint", path(&ck), "--data", path(&data)]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(fs::read(&metrics).unwrap(), a.stdout);
    let m: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let mrr = m["mrr"].as_f64().unwrap();
    assert!(mrr > 0.0 && mrr <= 1.0);

    let valid = pmkg(&["eval", "--checkpoint", path(&ck), "--data", path(&data), "--tasks", path(&data.join("valid_tasks.json"))]);
    assert_eq!(code(&valid), 0, "{}", String::from_utf8_lossy(&valid.stderr));
}

#[test]
fn oversized_support_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = (dir.path().join("data"), dir.path().join("run"));
    gen(&data, "3");
    let o = small_train(&data, &out, &["--k-shot", "50"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ck) = (dir.path().join("data"), dir.path().join("bad.pmkg"));
    gen(&data, "3");
    fs::write(&ck, b"not a checkpoint").unwrap();
    let o = pmkg(&["eval", "--checkpoint", path(&ck), "--data", path(&data)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sif_embeddings_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tokens.tsv"), "alpha\tred green\nbeta\tgreen blue\ngamma\tred blue\ndelta\tunknown\n").unwrap();
    fs::write(d.join("vectors.txt"), "red 1 0 0\ngreen 0 1 0\nblue 0 0 1\n").unwrap();
    fs::write(d.join("freqs.txt"), "red 0.01\ngreen 0.001\nblue 0.1\nunknown 0.5\n").unwrap();
    let out = d.join("sem.txt");
    let o = pmkg(&[
        "embed-sif",
        "--tokens",
        path(&d.join("tokens.tsv")),
        "--vectors",
        path(&d.join("vectors.txt")),
        "--freqs",
        path(&d.join("freqs.txt")),
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.len() == 4));
    assert_eq!(rows[3][0], "delta");
    assert!(rows[3][1..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0));

    fs::write(d.join("freqs.txt"), "red 0.01\n").unwrap();
    let o = pmkg(&[
        "embed-sif",
        "--tokens",
        path(&d.join("tokens.tsv")),
        "--vectors",
        path(&d.join("vectors.txt")),
        "--freqs",
        path(&d.join("freqs.txt")),
        "--out",
        path(&out),
    ]);
    assert_ne!(code(&o), 0);
}

#[test]
fn shipped_presets_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "cfg") {
            let cfg = pmkg::Config::from_file(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            cfg.validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 2);
    let nell = pmkg::Config::from_file(dir.join("nell-one-paper.cfg")).unwrap();
    assert_eq!((nell.dim, nell.batch_size, nell.steps, nell.eval_interval), (Some(100), 1024, 80000, 1000));
    assert_eq!((nell.lambda, nell.num_negatives, nell.pool_size), (0.05, 1024, 64));
}
