use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn textmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textmatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_toy(dir: &Path, queries: usize, docs: usize, seed: u64) {
    ok(textmatch(&[
        "--seed", &seed.to_string(), "gen-toy", "--out", p(dir),
        "--queries", &queries.to_string(), "--docs", &docs.to_string(),
    ]));
}

fn write_manifest(dir: &Path, body: Value) -> std::path::PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&body).unwrap()).unwrap();
    path
}

fn toy_dataset() -> Value {
    json!({
        "corpus_left": "data/corpus_left.tsv",
        "corpus_right": "data/corpus_right.tsv",
        "relations_train": "data/relations_train.tsv",
        "relations_valid": "data/relations_valid.tsv",
        "relations_test": "data/relations_test.tsv"
    })
}

fn knrm_manifest(epochs: usize) -> Value {
    json!({
        "model": "knrm",
        "hyper_parameters": {"embedding_dim": 8, "kernel_count": 5, "max_length": 12},
        "train": {"epochs": epochs, "seed": 1},
        "dataset": toy_dataset()
    })
}

#[test]
fn gen_toy_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen_toy(&a, 12, 5, 3);
    gen_toy(&b, 12, 5, 3);
    for name in ["corpus_left.tsv", "corpus_right.tsv", "relations_train.tsv", "relations_valid.tsv", "relations_test.tsv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let tiny = dir.path().join("tiny");
    gen_toy(&tiny, 1, 2, 0);
    let rels = std::fs::read_to_string(tiny.join("relations_train.tsv")).unwrap();
    assert_eq!(rels.lines().count(), 2);
    let out = textmatch(&["gen-toy", "--out", p(&tiny), "--queries", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_evaluate_score() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(&dir.path().join("data"), 10, 6, 8);
    let manifest = write_manifest(dir.path(), knrm_manifest(3));
    let run = dir.path().join("run");
    let out = ok(textmatch(&["train", p(&manifest), "--out", p(&run)]));
    let epochs = stdout_json(&out);
    assert_eq!(epochs.len(), 3);
    assert_eq!(epochs[2]["epoch"], 3);
    let history = std::fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let eval = |extra: &[&str]| {
        let mut args = vec!["evaluate", "--run", p(&run), "--manifest", p(&manifest)];
        args.extend_from_slice(extra);
        textmatch(&args)
    };
    let first = ok(eval(&["--metrics", "ndcg@5,map,mrr,p@3"]));
    let second = ok(eval(&["--metrics", "ndcg@5,map,mrr,p@3"]));
    assert_eq!(first.stdout, second.stdout);
    let values = &stdout_json(&first)[0];
    for key in ["ndcg@5", "map", "mrr", "p@3"] {
        assert!(values[key].as_f64().unwrap() >= 0.0, "{key}");
    }
    let by_dir = ok(textmatch(&[
        "evaluate", "--run", p(&run), "--data", p(&dir.path().join("data")), "--metrics", "ndcg@5,map,mrr,p@3",
    ]));
    assert_eq!(by_dir.stdout, first.stdout);
    let bad = eval(&["--metrics", "ndcg@5,recall"]);
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("recall") && err.contains("ndcg@k"), "{err}");

    let data = std::fs::read_to_string(dir.path().join("data/corpus_right.tsv")).unwrap();
    let doc = data.lines().next().unwrap().split('\t').nth(1).unwrap().to_string();
    let words: Vec<String> = doc
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .collect();
    let left = words[..3].join(" ");
    let right = words[3..8].join(" ");
    let score = |explain: bool| {
        let mut args = vec!["score", "--run", p(&run), "--left", &left, "--right", &right];
        if explain {
            args.push("--explain");
        }
        ok(textmatch(&args))
    };
    let a = score(true);
    assert_eq!(a.stdout, score(true).stdout);
    let explained = &stdout_json(&a)[0];
    let matrix = explained["explanation"]["matrix"].as_array().unwrap();
    assert_eq!(matrix.len(), 3);
    assert!(matrix.iter().all(|r| r.as_array().unwrap().len() == 5));
    let plain = &stdout_json(&score(false))[0];
    assert_eq!(plain["score"], explained["score"]);
    assert!(plain.get("explanation").is_none());

    let empty = textmatch(&["score", "--run", p(&run), "--left", " ", "--right", "x"]);
    assert_eq!(empty.status.code(), Some(2));
    let missing = textmatch(&["score", "--run", p(&dir.path().join("nothing")), "--left", "a", "--right", "b"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("manifest.json"));
}

#[test]
fn dssm_identical_texts_score_one() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(&dir.path().join("data"), 10, 4, 2);
    let manifest = write_manifest(
        dir.path(),
        json!({
            "model": "dssm",
            "hyper_parameters": {"hidden_size": 12, "hidden_layers": 1, "output_size": 6},
            "train": {"epochs": 1},
            "dataset": toy_dataset()
        }),
    );
    let run = dir.path().join("run");
    ok(textmatch(&["train", p(&manifest), "--out", p(&run)]));
    let out = ok(textmatch(&["score", "--run", p(&run), "--left", "Mira tosa", "--right", "Mira tosa"]));
    let score = stdout_json(&out)[0]["score"].as_f64().unwrap();
    assert!((score - 1.0).abs() < 1e-9, "{score}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(&dir.path().join("data"), 4, 4, 1);
    let mut m = knrm_manifest(1);
    m["hyper_parameters"]["kernel_count"] = json!(500);
    let manifest = write_manifest(dir.path(), m);
    let out = textmatch(&["train", p(&manifest), "--out", p(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kernel_count"), "{err}");
    assert!(!dir.path().join("run").exists());

    let manifest = write_manifest(dir.path(), json!({"model": "knrm", "dataset": toy_dataset(), "colour": 1}));
    assert_eq!(textmatch(&["train", p(&manifest), "--out", "x"]).status.code(), Some(2));
    assert_eq!(textmatch(&["train"]).status.code(), Some(2));
    assert_eq!(textmatch(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn tune_writes_trial_table_and_best_run() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(&dir.path().join("data"), 10, 6, 4);
    let mut m = knrm_manifest(1);
    m["search"] = json!({
        "space": {"learning_rate": {"type": "float_log_uniform", "low": 1e-4, "high": 1e-1}},
        "trials": 3,
        "seed": 2
    });
    let manifest = write_manifest(dir.path(), m.clone());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = ok(textmatch(&["tune", p(&manifest), "--out", p(&a)]));
    ok(textmatch(&["tune", p(&manifest), "--out", p(&b)]));
    let table_a = std::fs::read(a.join("tune.json")).unwrap();
    assert_eq!(table_a, std::fs::read(b.join("tune.json")).unwrap());
    let table: Value = serde_json::from_slice(&table_a).unwrap();
    assert_eq!(table["trials"].as_array().unwrap().len(), 3);
    assert_eq!(stdout_json(&out)[0]["best"], table["best"]);
    assert!(a.join("best/weights.bin").exists());

    m["search"] = json!({"space": {"kernel_count": {"type": "categorical", "values": [3]}}, "trials": 1});
    let manifest = write_manifest(dir.path(), m);
    let single = ok(textmatch(&["tune", p(&manifest), "--out", p(&dir.path().join("c"))]));
    let best = &stdout_json(&single)[0];
    assert_eq!(best["best"], 0);
    assert_eq!(best["config"], json!({"kernel_count": 3}));
}

#[test]
fn interrupted_training_leaves_no_weights() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(&dir.path().join("data"), 10, 6, 5);
    let manifest = write_manifest(dir.path(), knrm_manifest(100_000));
    let run = dir.path().join("run");
    let mut child = Command::new(env!("CARGO_BIN_EXE_textmatch"))
        .args(["train", p(&manifest), "--out", p(&run)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    assert!(first.contains("\"epoch\":1"));
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(!run.join("weights.bin").exists());
    assert!(!run.join("manifest.json").exists());
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn serve_answers_and_shuts_down() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port().to_string();
    let store = dir.path().join("store");
    let mut child = Command::new(env!("CARGO_BIN_EXE_textmatch"))
        .args(["serve", "--port", &port, "--store", p(&store)])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("http://127.0.0.1:{port}/api/models");
    let started = Instant::now();
    let body = loop {
        let attempt = std::net::TcpStream::connect(("127.0.0.1", port.parse::<u16>().unwrap()));
        if attempt.is_ok() {
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
            break rt.block_on(async { reqwest::get(&url).await.unwrap().json::<Vec<Value>>().await.unwrap() });
        }
        assert!(started.elapsed() < Duration::from_secs(30), "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(body.len(), 3);

    let busy = textmatch(&["serve", "--port", &port, "--store", p(&store)]);
    assert_eq!(busy.status.code(), Some(1));

    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let started = Instant::now();
    loop {
        if let Some(code) = child.try_wait().unwrap() {
            assert!(code.success(), "{code:?}");
            break;
        }
        assert!(started.elapsed() < Duration::from_secs(20), "server ignored SIGINT");
        std::thread::sleep(Duration::from_millis(50));
    }
}
