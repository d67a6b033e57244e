#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use reqwest::multipart::{Form, Part};
use serde_json::Value;
use textmatch::toy;
use textmatch_studio::service::{serve, ServiceConfig};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct Server {
    pub base: String,
    stop: Option<oneshot::Sender<()>>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl Server {
    pub async fn start(config: ServiceConfig) -> Server {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel();
        let handle = tokio::spawn(serve(listener, config, async {
            let _ = rx.await;
        }));
        Server {
            base,
            stop: Some(tx),
            handle,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.handle.await.unwrap().unwrap();
    }
}

/// Multipart form holding every file of a generated toy dataset.
pub fn toy_form(queries: usize, docs: usize, seed: u64) -> Form {
    let data = toy::generate(queries, docs, seed).unwrap();
    let mut form = Form::new();
    for (name, text) in data.files {
        let field = name.trim_end_matches(".tsv").to_string();
        form = form.part(field, Part::text(text).file_name(name));
    }
    form
}

pub fn form_of(files: &[(&str, &str)]) -> Form {
    files.iter().fold(Form::new(), |f, (name, text)| {
        f.part(name.to_string(), Part::text(text.to_string()).file_name(format!("{name}.tsv")))
    })
}

pub async fn upload(client: &reqwest::Client, server: &Server, form: Form) -> Value {
    let resp = client.post(server.url("/api/datasets")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status(), 201, "{:?}", resp.text().await);
    resp.json().await.unwrap()
}

/// Full NDJSON event stream of a job, read until the server closes it.
pub async fn events(client: &reqwest::Client, server: &Server, job: &str) -> Vec<Value> {
    let resp = client
        .get(server.url(&format!("/api/jobs/{job}/events")))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let text = tokio::time::timeout(Duration::from_secs(170), resp.text())
        .await
        .expect("event stream did not finish")
        .unwrap();
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

pub fn history_lines(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("history.jsonl"))
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
