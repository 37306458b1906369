use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const DATASET_FILES: [&str; 7] = [
    "dataset.jsonl",
    "attributes.txt",
    "categories.txt",
    "vocab.txt",
    "split.json",
    "raw.jsonl",
    "lexicon.txt",
];

fn semcap(args: &[&str], data_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_semcap"));
    cmd.args(args).env_remove("SRFC_DATA_DIR");
    if let Some(d) = data_dir {
        cmd.env("SRFC_DATA_DIR", d);
    }
    cmd.output().expect("semcap runs")
}

fn ok(args: &[&str]) -> Output {
    let out = semcap(args, None);
    assert!(
        out.status.success(),
        "semcap {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(out: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--items",
        "160",
        "--categories",
        "4",
        "--attributes",
        "12",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn manifest(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A synthetic dataset with a classifier and generated test captions.
struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    classifier: PathBuf,
    hyps: PathBuf,
    refs: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, &[]);
    let clf_dir = dir.path().join("clf");
    ok(&[
        "pretrain-classifier",
        "--data",
        s(&data),
        "--out",
        s(&clf_dir),
        "--epochs",
        "1",
    ]);
    let classifier = clf_dir.join("classifier.ckpt");
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--data",
        s(&data),
        "--classifier",
        s(&classifier),
        "--out",
        s(&run),
        "--width",
        "8",
        "--samples",
        "2",
        "--max-len",
        "10",
        "--max-warmup-epochs",
        "1",
        "--joint-epochs",
        "1",
    ]);
    let (hyps, refs) = (run.join("hyps.jsonl"), run.join("refs.jsonl"));
    ok(&[
        "generate",
        "--data",
        s(&data),
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--out",
        s(&hyps),
        "--refs",
        s(&refs),
    ]);
    Fixture {
        _dir: dir,
        data,
        classifier,
        hyps,
        refs,
    }
}

#[test]
fn synth_with_a_fixed_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    synth(&a, &["--seed", "7"]);
    synth(&b, &["--seed", "7"]);
    synth(&c, &["--seed", "8"]);
    for f in DATASET_FILES {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.join("dataset.jsonl")).unwrap(),
        fs::read(c.join("dataset.jsonl")).unwrap()
    );
}

#[test]
fn manifest_hash_follows_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    synth(&p("a"), &[]);
    synth(&p("b"), &[]);
    synth(&p("c"), &["--noise", "0.25"]);
    let (a, b, c) = (
        manifest(p("a").join("synth.manifest.json")),
        manifest(p("b").join("synth.manifest.json")),
        manifest(p("c").join("synth.manifest.json")),
    );
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_ne!(a["config_hash"], c["config_hash"]);
    assert_eq!(a["command"], "synth");
    assert_eq!(a["seed"], 7);
    assert_eq!(a["version"], format!("v{}", env!("CARGO_PKG_VERSION")));
    let artifacts: Vec<&str> = a["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for f in DATASET_FILES {
        assert!(
            artifacts.iter().any(|x| x.ends_with(f)),
            "{f} missing from {artifacts:?}"
        );
    }
    assert!(a["finished_at"].as_u64() >= a["started_at"].as_u64());
}

#[test]
fn data_dir_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("env-data");
    let out = semcap(
        &[
            "synth",
            "--items",
            "160",
            "--categories",
            "4",
            "--attributes",
            "12",
        ],
        Some(&data),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(data.join("dataset.jsonl").is_file());

    let clf = dir.path().join("clf");
    let out = semcap(
        &["pretrain-classifier", "--out", s(&clf), "--epochs", "1"],
        Some(&data),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(clf.join("classifier.ckpt").is_file());

    let out = semcap(&["pretrain-classifier", "--out", s(&clf)], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SRFC_DATA_DIR"));
}

#[test]
fn eval_of_references_against_themselves_is_perfect() {
    let f = fixture();
    let report = f.refs.with_file_name("self.json");
    ok(&[
        "eval",
        "--hyp",
        s(&f.refs),
        "--ref",
        s(&f.refs),
        "--attributes",
        s(&f.data.join("attributes.txt")),
        "--classifier",
        s(&f.classifier),
        "--out",
        s(&report),
    ]);
    let v = manifest(report);
    assert_eq!(v["bleu4"], 1.0);
    assert_eq!(v["rouge_l"], 1.0);
    assert_eq!(v["map"], 1.0);
    assert!(f.refs.with_file_name("eval.manifest.json").is_file());
}

#[test]
fn eval_prints_json_and_writes_a_plot() {
    let f = fixture();
    let plot = f.hyps.with_file_name("metrics.svg");
    let out = ok(&[
        "eval",
        "--hyp",
        s(&f.hyps),
        "--ref",
        s(&f.refs),
        "--attributes",
        s(&f.data.join("attributes.txt")),
        "--classifier",
        s(&f.classifier),
        "--plot",
        s(&plot),
    ]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    for k in ["bleu4", "rouge_l", "cider", "map", "acc"] {
        let x = v[k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x), "{k} = {x}");
    }
    assert!(fs::read_to_string(plot).unwrap().starts_with("<svg"));
}

#[test]
fn score_emits_one_row_per_pair() {
    let f = fixture();
    let out = ok(&[
        "score",
        "--generated",
        s(&f.refs),
        "--reference",
        s(&f.refs),
        "--attributes",
        s(&f.data.join("attributes.txt")),
        "--classifier",
        s(&f.classifier),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let refs = fs::read_to_string(&f.refs).unwrap();
    assert_eq!(text.lines().count(), refs.lines().count());
    for l in text.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        let (als, sls, r) = (
            v["r_als"].as_f64().unwrap(),
            v["r_sls"].as_f64().unwrap(),
            v["r"].as_f64().unwrap(),
        );
        assert!((r - als - sls).abs() < 1e-12, "{l}");
        assert!((0.0..=1.0).contains(&als) && (0.0..=1.0).contains(&sls));
    }
}

#[test]
fn malformed_input_names_the_stage_and_line() {
    let f = fixture();
    let good = fs::read_to_string(&f.hyps).unwrap();
    let first = good.lines().next().unwrap();
    let bad = f.hyps.with_file_name("bad.jsonl");
    fs::write(&bad, format!("{first}\n{{not json\n")).unwrap();
    let out = semcap(
        &[
            "eval",
            "--hyp",
            s(&bad),
            "--ref",
            s(&f.refs),
            "--attributes",
            s(&f.data.join("attributes.txt")),
            "--classifier",
            s(&f.classifier),
        ],
        None,
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("eval") && err.contains("bad.jsonl:2"), "{err}");

    let raw = f.hyps.with_file_name("raw.jsonl");
    fs::write(&raw, "{\"title\": 3}\n").unwrap();
    let out = semcap(
        &[
            "ingest",
            "--input",
            s(&raw),
            "--lexicon",
            s(&f.data.join("lexicon.txt")),
            "--out",
            s(&f.hyps.with_file_name("ingested")),
        ],
        None,
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("ingest") && err.contains("raw.jsonl:1"),
        "{err}"
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    fs::write(
        &cfg,
        r#"{"corpus": {"n_items": 100}, "splits": [0.8, 0.1, 0.1]}"#,
    )
    .unwrap();
    let out = semcap(
        &[
            "synth",
            "--config",
            s(&cfg),
            "--out",
            s(&dir.path().join("d")),
        ],
        None,
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("synth") && err.contains("splits"), "{err}");
}

#[test]
fn acceptance_configs_drive_the_cli() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance");
    let dir = tempfile::tempdir().unwrap();
    let (data, clf, run) = (
        dir.path().join("data"),
        dir.path().join("clf"),
        dir.path().join("run"),
    );
    ok(&[
        "synth",
        "--config",
        s(&configs.join("synth.json")),
        "--items",
        "200",
        "--out",
        s(&data),
    ]);
    ok(&[
        "pretrain-classifier",
        "--config",
        s(&configs.join("classifier.json")),
        "--data",
        s(&data),
        "--out",
        s(&clf),
        "--epochs",
        "1",
    ]);
    ok(&[
        "train",
        "--config",
        s(&configs.join("train.json")),
        "--data",
        s(&data),
        "--classifier",
        s(&clf.join("classifier.ckpt")),
        "--out",
        s(&run),
        "--width",
        "8",
        "--max-warmup-epochs",
        "1",
        "--joint-epochs",
        "1",
    ]);
    let resolved: Value =
        serde_json::from_str(&fs::read_to_string(run.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["train"]["rl_weight"], 10.0);
    assert_eq!(resolved["train"]["max_warmup_epochs"], 1);
    assert_eq!(resolved["model"]["hidden_dim"], 8);
}
