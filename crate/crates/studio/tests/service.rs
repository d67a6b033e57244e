mod common;

use std::time::Duration;

use common::{events, form_of, history_lines, toy_form, upload, Server};
use serde_json::{json, Value};
use textmatch_studio::service::ServiceConfig;

fn small_dssm() -> Value {
    json!({
        "hyper_parameters": {"hidden_size": 16, "hidden_layers": 1, "output_size": 8},
        "train": {"epochs": 2, "seed": 3}
    })
}

fn small_knrm(epochs: usize) -> Value {
    json!({
        "hyper_parameters": {"embedding_dim": 8, "kernel_count": 5, "max_length": 12},
        "train": {"epochs": epochs, "seed": 3}
    })
}

async fn create_job(client: &reqwest::Client, server: &Server, body: Value) -> reqwest::Response {
    client.post(server.url("/api/jobs")).json(&body).send().await.unwrap()
}

async fn start_job(client: &reqwest::Client, server: &Server, model: &str, dataset: &str, config: Value) -> String {
    let resp = create_job(
        client,
        server,
        json!({"kind": "train", "model_id": model, "dataset_id": dataset, "config": config}),
    )
    .await;
    assert_eq!(resp.status(), 202);
    let job: Value = resp.json().await.unwrap();
    assert_eq!(job["status"], "queued");
    job["id"].as_str().unwrap().to_string()
}

async fn score(client: &reqwest::Client, server: &Server, job: &str, l: &str, r: &str) -> reqwest::Response {
    client
        .post(server.url(&format!("/api/jobs/{job}/score")))
        .json(&json!({"text_left": l, "text_right": r}))
        .send()
        .await
        .unwrap()
}

#[tokio::test]
async fn model_registry_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(ServiceConfig::new(dir.path())).await;
    let client = reqwest::Client::new();
    let first: Vec<Value> = client.get(server.url("/api/models")).send().await.unwrap().json().await.unwrap();
    let ids: Vec<&str> = first.iter().map(|m| m["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["drmm", "dssm", "knrm"]);
    assert!(first.iter().all(|m| m["family"].is_string() && m["description"].is_string()));
    let again: Vec<Value> = client.get(server.url("/api/models")).send().await.unwrap().json().await.unwrap();
    assert_eq!(first, again);

    let knrm: Value = client.get(server.url("/api/models/knrm")).send().await.unwrap().json().await.unwrap();
    assert_eq!(knrm["family"], "interaction");
    let missing = client.get(server.url("/api/models/bert")).send().await.unwrap();
    assert_eq!(missing.status(), 404);
    let body: Value = missing.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("bert"));
    server.stop().await;
}

#[tokio::test]
async fn dataset_uploads() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::new(dir.path());
    config.upload_limit = 64 * 1024;
    let server = Server::start(config).await;
    let client = reqwest::Client::new();

    let tiny = [
        ("corpus_left", "q1\thow are you\n"),
        ("corpus_right", "d1\tfine thanks\nd2\tthe weather\n"),
        ("relations_train", "1\tq1\td1\n0\tq1\td2\n"),
    ];
    let a = upload(&client, &server, form_of(&tiny)).await;
    assert_eq!(a["row_counts"], json!({"corpus_left": 1, "corpus_right": 2, "relations_train": 2}));
    let b = upload(&client, &server, form_of(&tiny)).await;
    assert_ne!(a["id"], b["id"]);
    let listed: Vec<Value> = client.get(server.url("/api/datasets")).send().await.unwrap().json().await.unwrap();
    assert_eq!(listed.len(), 2);

    let bad = [
        ("corpus_left", "q1\thow are you\n"),
        ("corpus_right", "d1\tfine\n"),
        ("relations_train", "1\tq1\td1\nseven\tq1\td1\n"),
    ];
    let resp = client.post(server.url("/api/datasets")).multipart(form_of(&bad)).send().await.unwrap();
    assert_eq!(resp.status(), 422);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["detail"]["line"], 2);
    assert_eq!(body["detail"]["file"], "relations_train");

    let big = "x".repeat(100 * 1024);
    let huge = [("corpus_left", big.as_str()), ("corpus_right", "d\tx\n"), ("relations_train", "1\tq\td\n")];
    let resp = client.post(server.url("/api/datasets")).multipart(form_of(&huge)).send().await.unwrap();
    assert_eq!(resp.status(), 413);
    let body: Value = resp.json().await.unwrap();
    assert!(body["error"].is_string());
    server.stop().await;
}

#[tokio::test]
async fn job_requests_are_validated_before_enqueue() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(ServiceConfig::new(dir.path())).await;
    let client = reqwest::Client::new();
    let ds = upload(&client, &server, toy_form(4, 4, 1)).await;
    let ds = ds["id"].as_str().unwrap();

    let resp = create_job(&client, &server, json!({"kind": "train", "model_id": "bert", "dataset_id": ds})).await;
    assert_eq!(resp.status(), 404);
    let resp = create_job(&client, &server, json!({"kind": "train", "model_id": "knrm", "dataset_id": "nope"})).await;
    assert_eq!(resp.status(), 404);
    let resp = create_job(
        &client,
        &server,
        json!({"kind": "train", "model_id": "knrm", "dataset_id": ds,
               "config": {"hyper_parameters": {"kernel_cnt": 3}}}),
    )
    .await;
    assert_eq!(resp.status(), 422);
    let body: Value = resp.json().await.unwrap();
    assert!(body["detail"].to_string().contains("kernel_cnt"));
    let resp = create_job(
        &client,
        &server,
        json!({"kind": "train", "model_id": "knrm", "dataset_id": ds, "config": {"train": {"epochs": 0}}}),
    )
    .await;
    assert_eq!(resp.status(), 422);
    let jobs: Vec<Value> = client.get(server.url("/api/jobs")).send().await.unwrap().json().await.unwrap();
    assert!(jobs.is_empty());
    server.stop().await;
}

#[tokio::test]
async fn train_stream_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(ServiceConfig::new(dir.path())).await;
    let client = reqwest::Client::new();
    let ds = upload(&client, &server, toy_form(10, 6, 2)).await;
    let ds = ds["id"].as_str().unwrap();

    let job = start_job(&client, &server, "dssm", ds, small_dssm()).await;
    let (a, b) = tokio::join!(events(&client, &server, &job), events(&client, &server, &job));
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    assert_eq!(a[2], json!({"status": "done"}));
    assert_eq!(a[0]["epoch"], 1);
    assert!(a[1]["loss"].is_f64() && a[1]["metrics"]["ndcg@10"].is_f64());
    assert_eq!(history_lines(&dir.path().join("jobs").join(&job)), a[..2].to_vec());
    let replay = events(&client, &server, &job).await;
    assert_eq!(replay, a);

    let record: Value = client.get(server.url(&format!("/api/jobs/{job}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!(record["status"], "done");
    assert_eq!(record["history"].as_array().unwrap().len(), 2);

    let resp = score(&client, &server, &job, "Bado kelu mira", "Bado kelu mira").await;
    assert_eq!(resp.status(), 200);
    let out: Value = resp.json().await.unwrap();
    assert!((out["score"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(out["explanation"]["family"], "representation");
    assert_eq!(out["explanation"]["left"], out["explanation"]["right"]);
    let again: Value = score(&client, &server, &job, "Bado kelu mira", "Bado kelu mira").await.json().await.unwrap();
    assert_eq!(out, again);

    let resp = score(&client, &server, &job, "  ", "x").await;
    assert_eq!(resp.status(), 422);
    let resp = score(&client, &server, "nosuchjob", "a", "b").await;
    assert_eq!(resp.status(), 404);
    server.stop().await;
}

#[tokio::test]
async fn interaction_explanations_and_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(ServiceConfig::new(dir.path())).await;
    let client = reqwest::Client::new();
    let data = textmatch::toy::generate(10, 6, 4).unwrap();
    let ds = upload(&client, &server, toy_form(10, 6, 4)).await;
    let ds = ds["id"].as_str().unwrap();

    let job = start_job(&client, &server, "knrm", ds, small_knrm(2)).await;
    let early = score(&client, &server, &job, "a b c", "d e f g h").await;
    assert!(early.status() == 409 || early.status() == 200);
    let stream = events(&client, &server, &job).await;
    assert_eq!(stream.len(), 3);

    // words of a training document, so none is dropped by the frequency filter
    let doc = data.files[1].1.lines().next().unwrap().split('\t').nth(1).unwrap();
    let words: Vec<String> = doc
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .collect();
    let left = words[..3].join(" ");
    let right = words[3..8].join(" ");
    let out: Value = score(&client, &server, &job, &left, &right).await.json().await.unwrap();
    assert_eq!(out["explanation"]["family"], "interaction");
    assert_eq!(out["explanation"]["weight_kind"], "kernel_weights");
    let matrix = out["explanation"]["matrix"].as_array().unwrap();
    assert_eq!(matrix.len(), 3);
    assert!(matrix.iter().all(|row| row.as_array().unwrap().len() == 5));
    assert_eq!(out["tokens_left"].as_array().unwrap().len(), 3);
    assert!(out["score"].as_f64().unwrap().is_finite());
    server.stop().await;
}

#[tokio::test]
async fn queued_job_conflicts_and_pool_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(ServiceConfig::new(dir.path())).await;
    let client = reqwest::Client::new();
    let ds = upload(&client, &server, toy_form(10, 6, 5)).await;
    let ds = ds["id"].as_str().unwrap();
    let mut ids = Vec::new();
    for _ in 0..3 {
        ids.push(start_job(&client, &server, "knrm", ds, small_knrm(3)).await);
    }
    let resp = score(&client, &server, &ids[2], "a", "b").await;
    assert_eq!(resp.status(), 409);
    loop {
        let jobs: Vec<Value> = client.get(server.url("/api/jobs")).send().await.unwrap().json().await.unwrap();
        let running = jobs.iter().filter(|j| j["status"] == "running").count();
        assert!(running <= 1, "{running} jobs running with max_jobs 1");
        if jobs.iter().all(|j| j["status"] == "done") {
            break;
        }
        assert!(jobs.iter().all(|j| j["status"] != "failed"));
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    server.stop().await;
}

#[tokio::test]
async fn failed_job_reports_its_message() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(ServiceConfig::new(dir.path())).await;
    let client = reqwest::Client::new();
    let flat = [
        ("corpus_left", "q1\tred apple\n"),
        ("corpus_right", "d1\tgreen apple\nd2\tred car\n"),
        ("relations_train", "1\tq1\td1\n1\tq1\td2\n"),
    ];
    let ds = upload(&client, &server, form_of(&flat)).await;
    let job = start_job(&client, &server, "knrm", ds["id"].as_str().unwrap(), small_knrm(2)).await;
    let stream = events(&client, &server, &job).await;
    assert_eq!(stream.len(), 1);
    assert_eq!(stream[0]["status"], "failed");
    assert!(stream[0]["message"].as_str().unwrap().contains("no trainable pairs"));
    server.stop().await;
}

#[tokio::test]
async fn tune_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(ServiceConfig::new(dir.path())).await;
    let client = reqwest::Client::new();
    let ds = upload(&client, &server, toy_form(10, 6, 6)).await;
    let ds = ds["id"].as_str().unwrap();

    let no_valid = upload(&client, &server, toy_form(4, 4, 6)).await;
    let resp = client
        .post(server.url("/api/tune"))
        .json(&json!({"model_id": "knrm", "dataset_id": no_valid["id"], "space": {}}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 422);

    let resp = client
        .post(server.url("/api/tune"))
        .json(&json!({
            "model_id": "knrm", "dataset_id": ds, "trials": 2, "seed": 1,
            "space": {"kernel_count": {"type": "categorical", "values": [3, 5]}},
            "hyper_parameters": {"embedding_dim": 8, "max_length": 12},
            "train": {"epochs": 1}
        }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 202);
    let job: Value = resp.json().await.unwrap();
    assert_eq!(job["kind"], "tune");
    let id = job["id"].as_str().unwrap();
    let stream = events(&client, &server, id).await;
    assert_eq!(stream.len(), 3);
    assert_eq!(stream[0]["status"], "done");
    assert_eq!(stream[2], json!({"status": "done"}));
    let record: Value = client.get(server.url(&format!("/api/jobs/{id}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!(record["result"]["trials"].as_array().unwrap().len(), 2);
    let resp = score(&client, &server, id, "a b", "c d").await;
    assert_eq!(resp.status(), 200);
    server.stop().await;
}

#[tokio::test]
async fn restart_marks_unfinished_jobs_interrupted() {
    let dir = tempfile::tempdir().unwrap();
    let client = reqwest::Client::new();
    let server = Server::start(ServiceConfig::new(dir.path())).await;
    let ds = upload(&client, &server, toy_form(10, 6, 7)).await;
    let ds = ds["id"].as_str().unwrap().to_string();
    let done = start_job(&client, &server, "knrm", &ds, small_knrm(1)).await;
    events(&client, &server, &done).await;
    let before: Value = score(&client, &server, &done, "a b", "b c").await.json().await.unwrap();
    let pending = start_job(&client, &server, "knrm", &ds, small_knrm(500)).await;
    server.stop().await;

    let server = Server::start(ServiceConfig::new(dir.path())).await;
    let record: Value = client
        .get(server.url(&format!("/api/jobs/{pending}")))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(record["status"], "failed");
    assert_eq!(record["error"], "interrupted");
    let stream = events(&client, &server, &pending).await;
    assert_eq!(stream.last().unwrap(), &json!({"status": "failed", "message": "interrupted"}));
    assert_eq!(stream.len() - 1, history_lines(&dir.path().join("jobs").join(&pending)).len());

    let after: Value = score(&client, &server, &done, "a b", "b c").await.json().await.unwrap();
    assert_eq!(before, after);
    let datasets: Vec<Value> = client.get(server.url("/api/datasets")).send().await.unwrap().json().await.unwrap();
    assert_eq!(datasets.len(), 1);
    server.stop().await;
}
