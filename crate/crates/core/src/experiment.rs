//! Dataset loading, model-specific preprocessing and end-to-end training
//! runs, shared by the command line and the studio service.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::{
    idf_weights, load_corpus, load_embeddings, load_relations, random_embeddings, DataPack,
    Relation, Split,
};
use crate::error::{Error, Result};
use crate::models::{model_spec, spec, BuildContext, HyperParams, ModelInstance};
use crate::seed::{derive_seed, streams};
use crate::text::{Pipeline, Sequence, Unit};
use crate::toy;
use crate::train::{train, EpochEvent, TrainConfig};

/// Paths of one dataset's files. Only the train relations are required.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub corpus_left: PathBuf,
    pub corpus_right: PathBuf,
    pub relations_train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relations_valid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relations_test: Option<PathBuf>,
}

impl DatasetFiles {
    /// The file layout written by the toy generator; absent optional splits are left out.
    pub fn in_dir(dir: &Path) -> Self {
        let optional = |split| {
            let p = dir.join(toy::relations_file(split));
            p.exists().then_some(p)
        };
        DatasetFiles {
            corpus_left: dir.join(toy::CORPUS_LEFT),
            corpus_right: dir.join(toy::CORPUS_RIGHT),
            relations_train: dir.join(toy::relations_file(Split::Train)),
            relations_valid: optional(Split::Valid),
            relations_test: optional(Split::Test),
        }
    }

    /// Resolves relative paths against `base`.
    pub fn relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus_left);
        fix(&mut self.corpus_right);
        fix(&mut self.relations_train);
        if let Some(p) = self.relations_valid.as_mut() {
            fix(p);
        }
        if let Some(p) = self.relations_test.as_mut() {
            fix(p);
        }
        self
    }
}

/// Raw corpora and relation tables of every available split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    left: BTreeMap<String, String>,
    right: BTreeMap<String, String>,
    splits: BTreeMap<Split, Vec<Relation>>,
}

impl Dataset {
    /// Builds a dataset, checking every split's relations against the corpora.
    pub fn new(
        left: BTreeMap<String, String>,
        right: BTreeMap<String, String>,
        splits: BTreeMap<Split, Vec<Relation>>,
    ) -> Result<Self> {
        if !splits.contains_key(&Split::Train) {
            return Err(Error::data("dataset has no train relations"));
        }
        let ds = Dataset { left, right, splits };
        for split in ds.splits.keys() {
            ds.pack(*split)?;
        }
        Ok(ds)
    }

    pub fn load(files: &DatasetFiles) -> Result<Self> {
        let mut splits = BTreeMap::new();
        splits.insert(Split::Train, load_relations(&files.relations_train)?);
        if let Some(p) = &files.relations_valid {
            splits.insert(Split::Valid, load_relations(p)?);
        }
        if let Some(p) = &files.relations_test {
            splits.insert(Split::Test, load_relations(p)?);
        }
        Dataset::new(load_corpus(&files.corpus_left)?, load_corpus(&files.corpus_right)?, splits)
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.splits.contains_key(&split)
    }

    pub fn pack(&self, split: Split) -> Result<DataPack<String>> {
        let rels = self
            .splits
            .get(&split)
            .ok_or_else(|| Error::data(format!("dataset has no {split:?} split")))?;
        DataPack::new(self.left.clone(), self.right.clone(), rels.clone(), split)
    }

    /// Row counts: corpus sizes and relations per split.
    pub fn row_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::from([
            ("corpus_left".to_string(), self.left.len()),
            ("corpus_right".to_string(), self.right.len()),
        ]);
        for (split, rels) in &self.splits {
            let name = match split {
                Split::Train => "relations_train",
                Split::Valid => "relations_valid",
                Split::Test => "relations_test",
            };
            out.insert(name.to_string(), rels.len());
        }
        out
    }
}

/// Default token budget for index pipelines.
pub const DEFAULT_MAX_LENGTH: usize = 40;

fn text_units() -> Vec<Unit> {
    vec![Unit::Tokenize, Unit::Lowercase, Unit::PuncRemoval]
}

/// The unfitted preprocessing pipeline a model consumes, with `max_length`
/// taken from `hp` when present.
pub fn pipeline_for(model_id: &str, hp: &HyperParams) -> Result<Pipeline> {
    let spec = model_spec(model_id)?;
    let mut units = text_units();
    if spec.id == spec::DSSM {
        units.extend([Unit::WordHashing, Unit::trigram_counts()]);
    } else {
        let len = hp
            .get("max_length")
            .and_then(|v| v.as_i64())
            .map_or(DEFAULT_MAX_LENGTH, |v| v.max(1) as usize);
        units.extend([Unit::frequency_filter(1), Unit::vocabulary(), Unit::fixed_length(len)]);
    }
    Pipeline::new(units)
}

/// The unfitted pipeline for `model_id` with default settings.
pub fn data_transformer_for(model_id: &str) -> Result<Pipeline> {
    pipeline_for(model_id, &HyperParams::new())
}

/// Everything model-specific a training run needs, derived from the data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pipeline: Pipeline,
    pub train: DataPack<Sequence>,
    pub valid: Option<DataPack<Sequence>>,
    pub context: BuildContext,
}

/// Fits the model's pipeline on the train split, processes train/valid and
/// assembles embeddings (loaded from `embeddings`, else seeded random) and idf.
pub fn prepare(
    model_id: &str,
    hp: &HyperParams,
    dataset: &Dataset,
    embeddings: Option<&Path>,
    seed: u64,
) -> Result<Prepared> {
    let spec = model_spec(model_id)?;
    let hp = spec.resolve(hp)?;
    let mut pipeline = pipeline_for(model_id, &hp)?;
    let raw_train = dataset.pack(Split::Train)?;
    pipeline.fit_transform(&raw_train.referenced_texts())?;
    let train = raw_train.process(&pipeline)?;
    let valid = if dataset.has_split(Split::Valid) {
        Some(dataset.pack(Split::Valid)?.process(&pipeline)?)
    } else {
        None
    };
    let mut context = BuildContext::default();
    if spec.id == spec::DSSM {
        context.trigram_dim = pipeline.trigram_vocabulary().map(|v| v.size());
    } else {
        let vocab = pipeline
            .vocabulary()
            .ok_or_else(|| Error::config("pipeline has no vocabulary"))?;
        let dim = crate::models::spec::get_usize(&hp, "embedding_dim")?;
        let emb_seed = derive_seed(seed, streams::EMBEDDINGS);
        context.embeddings = Some(match embeddings {
            Some(p) => load_embeddings(p, vocab, dim, emb_seed)?,
            None => random_embeddings(vocab.size(), dim, emb_seed)?,
        });
        if spec.id == spec::DRMM {
            context.idf = Some(idf_weights(&train)?.to_table(vocab.size()));
        }
    }
    Ok(Prepared {
        pipeline,
        train,
        valid,
        context,
    })
}

/// Model, training and data choices of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    #[serde(default)]
    pub hyper_parameters: Map<String, Value>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Optional word-embedding text file for DRMM/KNRM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(model: &str) -> Self {
        ExperimentConfig {
            model: model.to_string(),
            hyper_parameters: Map::new(),
            train: TrainConfig::default(),
            embeddings: None,
        }
    }

    /// Checks the model id, hyper-parameters and train config without touching data.
    /// `learning_rate` and `optimizer` fall back to the train section when the
    /// hyper-parameters leave them out.
    pub fn validate(&self) -> Result<HyperParams> {
        self.train.validate()?;
        let mut given = self.hyper_parameters.clone();
        given
            .entry("learning_rate")
            .or_insert_with(|| Value::from(self.train.learning_rate));
        given
            .entry("optimizer")
            .or_insert_with(|| serde_json::to_value(self.train.optimizer).expect("enum serializes"));
        model_spec(&self.model)?.resolve_json(&given)
    }
}

/// A trained model together with its fitted pipeline and history.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: ModelInstance,
    pub pipeline: Pipeline,
    pub history: Vec<EpochEvent>,
}

impl TrainedRun {
    /// Scores two raw texts through the run's own pipeline.
    pub fn score_texts(&self, left: &str, right: &str) -> Result<f64> {
        self.model
            .score(&self.pipeline.transform(left)?, &self.pipeline.transform(right)?)
    }
}

/// Prepares data, builds and trains a model as described by `config`.
pub fn run_training(
    config: &ExperimentConfig,
    hp: &HyperParams,
    dataset: &Dataset,
    sink: &mut dyn FnMut(&EpochEvent) -> ControlFlow<()>,
) -> Result<TrainedRun> {
    let seed = config.train.seed;
    let prepared = prepare(&config.model, hp, dataset, config.embeddings.as_deref(), seed)?;
    let mut model = ModelInstance::build(
        &config.model,
        hp,
        &prepared.context,
        derive_seed(seed, streams::MODEL_INIT),
    )?;
    let train_config = config.train.clone().with_model_overrides(&model);
    let history = train(
        &mut model,
        &prepared.train,
        prepared.valid.as_ref(),
        &train_config,
        sink,
    )?;
    Ok(TrainedRun {
        model,
        pipeline: prepared.pipeline,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Category;

    #[test]
    fn transformers() {
        assert_eq!(data_transformer_for("dssm").unwrap().output_category(), Category::TrigramCounts);
        let k = data_transformer_for("knrm").unwrap();
        assert_eq!(k.output_category(), Category::Indices);
        assert!(matches!(k.units().last(), Some(Unit::FixedLength { length: 40, .. })));
        assert!(matches!(data_transformer_for("nosuch"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::new("knrm");
        c.hyper_parameters.insert("nope".into(), Value::from(1));
        assert!(matches!(c.validate(), Err(Error::Schema(_))));
        let mut c = ExperimentConfig::new("knrm");
        c.train.epochs = 0;
        assert!(c.validate().unwrap_err().is_usage());
        let parsed: ExperimentConfig = serde_json::from_str(
            r#"{"model":"dssm","train":{"epochs":2,"loss":{"kind":"hinge","margin":0.5}}}"#,
        )
        .unwrap();
        assert_eq!(parsed.train.epochs, 2);
        assert_eq!(parsed.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn optimizer_settings_come_from_either_section() {
        let mut c = ExperimentConfig::new("drmm");
        c.train.learning_rate = 0.05;
        c.train.optimizer = crate::train::OptimizerKind::Sgd;
        let hp = c.validate().unwrap();
        assert_eq!(hp["learning_rate"].as_f64(), Some(0.05));
        assert_eq!(hp["optimizer"].as_str(), Some("sgd"));

        c.hyper_parameters.insert("learning_rate".into(), Value::from(0.2));
        assert_eq!(c.validate().unwrap()["learning_rate"].as_f64(), Some(0.2));

        c.train.learning_rate = 5e3;
        c.hyper_parameters.clear();
        assert!(matches!(c.validate(), Err(Error::Schema(_))));
    }
}
