//! Seeded random search over model hyper-parameters.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::experiment::{run_training, Dataset, ExperimentConfig, TrainedRun};
use crate::models::{model_spec, HpValue, HyperParams, ModelSpec};
use crate::seed::{derive_seed, streams};
use crate::train::{evaluate, Metric};

pub use crate::experiment::data_transformer_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Categorical { values: Vec<HpValue> },
    IntUniform { low: i64, high: i64 },
    FloatUniform { low: f64, high: f64 },
    FloatLogUniform { low: f64, high: f64 },
}

impl Domain {
    fn check(&self) -> std::result::Result<(), String> {
        match *self {
            Domain::Categorical { ref values } if values.is_empty() => Err("empty categorical list".into()),
            Domain::IntUniform { low, high } if low >= high => Err(format!("low {low} >= high {high}")),
            Domain::FloatUniform { low, high } | Domain::FloatLogUniform { low, high }
                if !(low < high) || !low.is_finite() || !high.is_finite() =>
            {
                Err(format!("need finite low < high, got [{low}, {high})"))
            }
            Domain::FloatLogUniform { low, .. } if low <= 0.0 => Err(format!("log-uniform low {low} must be > 0")),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> HpValue {
        match self {
            Domain::Categorical { values } => values[rng.gen_range(0..values.len())].clone(),
            Domain::IntUniform { low, high } => HpValue::Int(rng.gen_range(*low..=*high)),
            Domain::FloatUniform { low, high } => HpValue::Float(rng.gen_range(*low..*high)),
            Domain::FloatLogUniform { low, high } => {
                let v = rng.gen_range(low.ln()..high.ln()).exp();
                // exp(ln x) can round a hair outside the range
                HpValue::Float(v.clamp(*low, high.next_down()))
            }
        }
    }

    pub fn contains(&self, v: &HpValue) -> bool {
        match self {
            Domain::Categorical { values } => values.contains(v),
            Domain::IntUniform { low, high } => v.as_i64().is_some_and(|x| *low <= x && x <= *high),
            Domain::FloatUniform { low, high } | Domain::FloatLogUniform { low, high } => {
                v.as_f64().is_some_and(|x| *low <= x && x < *high)
            }
        }
    }
}

/// Parameter name → domain, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace(pub BTreeMap<String, Domain>);

impl SearchSpace {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let mut problems = Vec::new();
        for (name, d) in &self.0 {
            if spec.param(name).is_none() {
                problems.push(format!("`{name}` is not a {} hyper-parameter", spec.id));
            }
            if let Err(why) = d.check() {
                problems.push(format!("`{name}`: {why}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Schema(problems))
        }
    }
}

/// One independent draw per parameter, in name order.
pub fn sample<R: Rng>(space: &SearchSpace, rng: &mut R) -> HyperParams {
    space.0.iter().map(|(k, d)| (k.clone(), d.sample(rng))).collect()
}

/// Sampler of trial `index`; depends only on `(seed, index)`.
pub fn trial_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, streams::TUNING), index as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: HyperParams,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Trial table and selection, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub model: String,
    pub metric: String,
    pub trials: Vec<Trial>,
    pub best: usize,
}

impl TuneResult {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }
}

pub struct TuneOutcome {
    pub result: TuneResult,
    pub best_run: TrainedRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub space: SearchSpace,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_metric")]
    pub metric: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_trials() -> usize {
    10
}

fn default_metric() -> String {
    "ndcg@10".into()
}

fn default_workers() -> usize {
    1
}

/// Index of the best done trial: highest metric, ties to the lowest index.
pub fn select_best(trials: &[Trial]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for t in trials {
        if let (TrialStatus::Done, Some(m)) = (t.status, t.metric) {
            if best.map_or(true, |(_, b)| m > b) {
                best = Some((t.index, m));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn run_trial(
    base: &ExperimentConfig,
    sampled: &HyperParams,
    dataset: &Dataset,
    metric: Metric,
    stop: &AtomicBool,
) -> Result<(TrainedRun, f64)> {
    let mut overrides: serde_json::Map<String, Value> = base.hyper_parameters.clone();
    for (k, v) in sampled {
        overrides.insert(k.clone(), serde_json::to_value(v)?);
    }
    let spec = model_spec(&base.model)?;
    let hp = spec.resolve_json(&overrides)?;
    let mut sink = |_: &crate::train::EpochEvent| {
        if stop.load(Ordering::SeqCst) {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    };
    let run = run_training(base, &hp, dataset, &mut sink)?;
    let valid = dataset.pack(crate::dataset::Split::Valid)?;
    let prepared = valid.process(&run.pipeline)?;
    let value = evaluate(&run.model, &prepared, &[metric])?[&metric.to_string()];
    if !value.is_finite() {
        return Err(Error::data(format!("{metric} is not finite")));
    }
    Ok((run, value))
}

/// Random search: trial `i` samples with [`trial_rng`]`(seed, i)`, trains
/// with `base` plus the sample, and is scored on the validation split.
/// Trials run on up to `workers` threads; results never depend on it.
/// A `Break` from `on_trial` cancels the remaining trials.
pub fn tune(
    base: &ExperimentConfig,
    dataset: &Dataset,
    config: &TuneConfig,
    on_trial: &(dyn Fn(&Trial) -> ControlFlow<()> + Sync),
) -> Result<TuneOutcome> {
    let spec = model_spec(&base.model)?;
    config.space.validate(&spec)?;
    let metric: Metric = config.metric.parse()?;
    if config.trials < 1 {
        return Err(Error::config("trials must be >= 1"));
    }
    if !dataset.has_split(crate::dataset::Split::Valid) {
        return Err(Error::config("tuning needs a validation split"));
    }
    base.validate()?;
    let samples: Vec<HyperParams> = (0..config.trials)
        .map(|i| sample(&config.space, &mut trial_rng(config.seed, i)))
        .collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<(Trial, Option<TrainedRun>)>>> =
        Mutex::new((0..config.trials).map(|_| None).collect());
    let workers = config.workers.clamp(1, config.trials);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= config.trials || stop.load(Ordering::SeqCst) {
                    break;
                }
                let (trial, run) = match run_trial(base, &samples[i], dataset, metric, &stop) {
                    Ok((run, value)) => (
                        Trial {
                            index: i,
                            config: samples[i].clone(),
                            status: TrialStatus::Done,
                            metric: Some(value),
                            error: None,
                        },
                        Some(run),
                    ),
                    Err(e) => (
                        Trial {
                            index: i,
                            config: samples[i].clone(),
                            status: TrialStatus::Failed,
                            metric: None,
                            error: Some(e.to_string()),
                        },
                        None,
                    ),
                };
                if stop.load(Ordering::SeqCst) || on_trial(&trial).is_break() {
                    stop.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("trial table lock")[i] = Some((trial, run));
            });
        }
    });
    if stop.into_inner() {
        return Err(Error::Cancelled);
    }
    let mut trials = Vec::with_capacity(config.trials);
    let mut runs = Vec::with_capacity(config.trials);
    for slot in slots.into_inner().expect("trial table lock") {
        let (t, r) = slot.expect("every trial ran");
        trials.push(t);
        runs.push(r);
    }
    let Some(best) = select_best(&trials) else {
        return Err(Error::AllTrialsFailed(
            trials
                .iter()
                .map(|t| format!("trial {}: {}", t.index, t.error.as_deref().unwrap_or("no metric")))
                .collect(),
        ));
    };
    let best_run = runs[best].take().expect("done trial has a run");
    Ok(TuneOutcome {
        result: TuneResult {
            model: base.model.clone(),
            metric: metric.to_string(),
            trials,
            best,
        },
        best_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_categorical() {
        let d = Domain::Categorical {
            values: vec![HpValue::Str("a".into())],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(d.sample(&mut rng), HpValue::Str("a".into()));
        }
    }

    #[test]
    fn log_uniform_in_range() {
        let d = Domain::FloatLogUniform { low: 1e-4, high: 1e-1 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            assert!(d.contains(&d.sample(&mut rng)));
        }
    }

    #[test]
    fn trial_samples_are_reproducible() {
        let space = SearchSpace(BTreeMap::from([
            ("learning_rate".to_string(), Domain::FloatLogUniform { low: 1e-4, high: 1e-1 }),
            ("kernel_count".to_string(), Domain::IntUniform { low: 3, high: 21 }),
        ]));
        let a: Vec<_> = (0..5).map(|i| sample(&space, &mut trial_rng(9, i))).collect();
        let b: Vec<_> = (0..5).rev().map(|i| sample(&space, &mut trial_rng(9, i))).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn space_validation() {
        let spec = model_spec("knrm").unwrap();
        let bad = SearchSpace(BTreeMap::from([
            ("hidden_size".to_string(), Domain::IntUniform { low: 1, high: 3 }),
            ("sigma".to_string(), Domain::FloatLogUniform { low: 0.0, high: 1.0 }),
            ("kernel_count".to_string(), Domain::IntUniform { low: 5, high: 5 }),
        ]));
        match bad.validate(&spec) {
            Err(Error::Schema(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("{other:?}"),
        }
        let json = r#"{"learning_rate":{"type":"categorical","values":[0.001,100.0]}}"#;
        let space: SearchSpace = serde_json::from_str(json).unwrap();
        space.validate(&spec).unwrap();
    }

    #[test]
    fn selection_prefers_lowest_index_on_ties() {
        let t = |index, status, metric| Trial {
            index,
            config: HyperParams::new(),
            status,
            metric,
            error: None,
        };
        let trials = vec![
            t(0, TrialStatus::Failed, None),
            t(1, TrialStatus::Done, Some(0.5)),
            t(2, TrialStatus::Done, Some(0.5)),
            t(3, TrialStatus::Done, Some(0.2)),
        ];
        assert_eq!(select_best(&trials), Some(1));
        assert_eq!(select_best(&trials[..1]), None);
    }
}
