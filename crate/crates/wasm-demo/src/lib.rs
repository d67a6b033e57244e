//! Browser demo: train a small matching model on generated data, then look
//! at how it reads and scores text pairs.
//!
//! Every method returns JSON text so the page needs no bindings beyond
//! `JSON.parse`. The same methods are plain Rust and tested natively.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::path::Path;

use serde_json::{json, Value};
use textmatch::dataset::{read_corpus, read_relations, Split};
use textmatch::experiment::{run_training, Dataset, ExperimentConfig, TrainedRun};
use textmatch::text::Sequence;
use textmatch::{toy, Error, Result};
use wasm_bindgen::prelude::*;

/// A trained run plus the generated data it was trained on.
pub struct Session {
    run: TrainedRun,
    left: BTreeMap<String, String>,
    right: BTreeMap<String, String>,
    valid: Vec<(String, String, u32)>,
}

fn toy_dataset(queries: usize, docs: usize, seed: u64) -> Result<Dataset> {
    let data = toy::generate(queries, docs, seed)?;
    let mut left = BTreeMap::new();
    let mut right = BTreeMap::new();
    let mut splits = BTreeMap::new();
    for (name, text) in &data.files {
        let origin = Path::new(name);
        match *name {
            toy::CORPUS_LEFT => left = read_corpus(text.as_bytes(), origin)?,
            toy::CORPUS_RIGHT => right = read_corpus(text.as_bytes(), origin)?,
            _ => {
                let split = [Split::Train, Split::Valid, Split::Test]
                    .into_iter()
                    .find(|s| toy::relations_file(*s) == *name)
                    .expect("toy data only writes relation files");
                splits.insert(split, read_relations(text.as_bytes(), origin)?);
            }
        }
    }
    Dataset::new(left, right, splits)
}

impl Session {
    /// Generates `queries` x `docs` toy pairs and trains `model` with its
    /// default hyper-parameters.
    pub fn train(model: &str, queries: usize, docs: usize, epochs: usize, seed: u64) -> Result<Self> {
        if !(1..=200).contains(&queries) || !(1..=50).contains(&docs) || !(1..=50).contains(&epochs) {
            return Err(Error::config("demo limits: 1-200 queries, 1-50 docs, 1-50 epochs"));
        }
        let dataset = toy_dataset(queries, docs, seed)?;
        let mut config = ExperimentConfig::new(model);
        config.train.epochs = epochs;
        config.train.seed = seed;
        let hp = config.validate()?;
        let run = run_training(&config, &hp, &dataset, &mut |_| ControlFlow::Continue(()))?;
        let split = if dataset.has_split(Split::Valid) { Split::Valid } else { Split::Train };
        let pack = dataset.pack(split)?;
        let valid = pack
            .relations()
            .iter()
            .map(|r| (r.left.clone(), r.right.clone(), r.label))
            .collect();
        Ok(Session {
            run,
            left: pack.left().clone(),
            right: pack.right().clone(),
            valid,
        })
    }

    pub fn model_id(&self) -> &str {
        self.run.model.id()
    }

    /// Loss and validation metrics per epoch.
    pub fn history(&self) -> Value {
        json!(self.run.history)
    }

    /// Number of held-out pairs available through [`Session::sample`].
    pub fn sample_count(&self) -> usize {
        self.valid.len()
    }

    /// A held-out pair as `{left, right, label}`; wraps around.
    pub fn sample(&self, index: usize) -> Value {
        let (l, r, label) = &self.valid[index % self.valid.len()];
        json!({"left": self.left[l], "right": self.right[r], "label": label})
    }

    /// Score with the model's explanation: the two representation vectors
    /// for DSSM, the similarity matrix and term or kernel weights otherwise.
    pub fn explain(&self, left: &str, right: &str) -> Result<Value> {
        let p = &self.run.pipeline;
        let e = self.run.model.explain(&p.transform(left)?, &p.transform(right)?)?;
        Ok(json!({
            "score": e.score(),
            "explanation": e,
            "tokens_left": p.display_tokens(left)?,
            "tokens_right": p.display_tokens(right)?,
        }))
    }

    /// What the model actually sees for `text`.
    pub fn preprocess(&self, text: &str) -> Result<Value> {
        let p = &self.run.pipeline;
        let tokens = p.display_tokens(text)?;
        let input = match p.transform(text)? {
            Sequence::Indices(ids) => {
                let vocab = p.vocabulary();
                let terms: Vec<Value> = ids
                    .iter()
                    .map(|&i| json!({"id": i, "term": vocab.and_then(|v| v.term(i))}))
                    .collect();
                json!({"kind": "indices", "terms": terms})
            }
            Sequence::TrigramCounts(counts) => {
                let vocab = p.trigram_vocabulary();
                let active: Vec<Value> = counts
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(i, c)| json!({"id": i, "trigram": vocab.and_then(|v| v.term(i)), "count": c}))
                    .collect();
                json!({"kind": "trigram_counts", "dim": counts.len(), "active": active})
            }
            other => json!({"kind": format!("{:?}", other.category()).to_lowercase()}),
        };
        Ok(json!({"tokens": tokens, "input": input}))
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// JavaScript handle around [`Session`].
#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(model: &str, queries: usize, docs: usize, epochs: usize, seed: u32) -> std::result::Result<Demo, JsError> {
        Session::train(model, queries, docs, epochs, u64::from(seed))
            .map(|inner| Demo { inner })
            .map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn model(&self) -> String {
        self.inner.model_id().to_string()
    }

    pub fn history(&self) -> String {
        self.inner.history().to_string()
    }

    #[wasm_bindgen(js_name = sampleCount)]
    pub fn sample_count(&self) -> usize {
        self.inner.sample_count()
    }

    pub fn sample(&self, index: usize) -> String {
        self.inner.sample(index).to_string()
    }

    pub fn explain(&self, left: &str, right: &str) -> std::result::Result<String, JsError> {
        self.inner.explain(left, right).map(|v| v.to_string()).map_err(js)
    }

    pub fn preprocess(&self, text: &str) -> std::result::Result<String, JsError> {
        self.inner.preprocess(text).map(|v| v.to_string()).map_err(js)
    }
}

/// Registered model ids, as JSON.
#[wasm_bindgen]
pub fn models() -> String {
    json!(textmatch::models::registry().iter().map(|m| m.id).collect::<Vec<_>>()).to_string()
}
