use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::ops::ControlFlow;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use textmatch::automl::{tune, SearchSpace, TuneConfig};
use textmatch::experiment::{run_training, ExperimentConfig, TrainedRun};
use textmatch::models::model_spec;
use textmatch::store::{load_run, save_run, write_atomic, HISTORY_FILE};
use textmatch::train::{Metric, TrainConfig};
use tokio::sync::{mpsc, watch};

use super::datasets::DatasetStore;
use super::error::{ApiError, ApiResult};

const RECORD_FILE: &str = "job.json";
const TUNE_FILE: &str = "tune.json";
/// Sub-directory holding the selected run of a tune job.
const BEST_DIR: &str = "best";
pub const INTERRUPTED: &str = "interrupted";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Tune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }

    /// Allowed moves: queued→running→{done, failed}, plus queued→failed for
    /// jobs interrupted before they started.
    fn can_become(self, next: JobStatus) -> bool {
        use JobStatus::*;
        matches!(
            (self, next),
            (Queued, Running) | (Queued, Failed) | (Running, Done) | (Running, Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub model_id: String,
    pub dataset_id: String,
    pub config: Value,
    pub status: JobStatus,
    /// Epoch events of a train job, trial events of a tune job.
    #[serde(default)]
    pub history: Vec<Value>,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Trial table and best index of a finished tune job.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
}

impl JobRecord {
    /// The last line of an event stream, once the job has finished.
    pub fn terminal_event(&self) -> Option<Value> {
        match self.status {
            JobStatus::Done => Some(json!({"status": "done"})),
            JobStatus::Failed => Some(json!({
                "status": "failed",
                "message": self.error.clone().unwrap_or_default(),
            })),
            _ => None,
        }
    }
}

/// The `config` object of a job request.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    #[serde(default)]
    pub hyper_parameters: Map<String, Value>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub space: Option<SearchSpace>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub metric: Option<String>,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
struct Plan {
    experiment: ExperimentConfig,
    tune: Option<TuneConfig>,
}

struct Entry {
    record: JobRecord,
    plan: Option<Plan>,
    notify: watch::Sender<()>,
    run: Option<Arc<TrainedRun>>,
}

impl Entry {
    fn new(record: JobRecord, plan: Option<Plan>) -> Self {
        Entry {
            record,
            plan,
            notify: watch::Sender::new(()),
            run: None,
        }
    }
}

/// Single synchronized registry of jobs, with one directory per job.
pub struct JobStore {
    root: PathBuf,
    datasets: Arc<DatasetStore>,
    jobs: Mutex<BTreeMap<String, Entry>>,
    queue: mpsc::UnboundedSender<String>,
}

fn read_history(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .map(|s| s.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
        .unwrap_or_default()
}

impl JobStore {
    /// Loads persisted jobs; any that were queued or running are marked failed.
    pub fn open(
        root: PathBuf,
        datasets: Arc<DatasetStore>,
    ) -> std::io::Result<(Arc<Self>, mpsc::UnboundedReceiver<String>)> {
        fs::create_dir_all(&root)?;
        let (queue, rx) = mpsc::unbounded_channel();
        let store = Arc::new(JobStore {
            root,
            datasets,
            jobs: Mutex::new(BTreeMap::new()),
            queue,
        });
        let mut restored = Vec::new();
        for entry in fs::read_dir(&store.root)? {
            let dir = entry?.path();
            let Ok(bytes) = fs::read(dir.join(RECORD_FILE)) else { continue };
            match serde_json::from_slice::<JobRecord>(&bytes) {
                Ok(mut r) => {
                    r.history = read_history(&dir.join(HISTORY_FILE));
                    restored.push(r);
                }
                Err(e) => tracing::warn!("skipping job in {}: {e}", dir.display()),
            }
        }
        for mut r in restored {
            if !r.status.is_terminal() {
                r.status = JobStatus::Failed;
                r.error = Some(INTERRUPTED.into());
                r.finished_at = Some(Utc::now());
                store.persist(&r)?;
            }
            store.jobs.lock().unwrap().insert(r.id.clone(), Entry::new(r, None));
        }
        Ok((store, rx))
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn persist(&self, r: &JobRecord) -> std::io::Result<()> {
        let dir = self.dir(&r.id);
        fs::create_dir_all(&dir)?;
        let mut stored = r.clone();
        stored.history.clear();
        let bytes = serde_json::to_vec_pretty(&stored).map_err(std::io::Error::other)?;
        write_atomic(&dir.join(RECORD_FILE), &bytes).map_err(std::io::Error::other)
    }

    /// Validates a request and enqueues it as a new job.
    pub fn create(
        &self,
        kind: JobKind,
        model_id: &str,
        dataset_id: &str,
        config: Value,
    ) -> ApiResult<JobRecord> {
        let spec = model_spec(model_id)?;
        let dataset = self.datasets.get(dataset_id)?;
        let parsed: JobConfig = serde_json::from_value(config.clone())
            .map_err(|e| ApiError::invalid(format!("invalid job config: {e}")))?;
        let mut experiment = ExperimentConfig::new(spec.id);
        experiment.hyper_parameters = parsed.hyper_parameters;
        experiment.train = parsed.train;
        experiment.validate()?;
        let tune = match kind {
            JobKind::Train => {
                if parsed.space.is_some() || parsed.trials.is_some() {
                    return Err(ApiError::invalid("search settings are only valid for tune jobs"));
                }
                None
            }
            JobKind::Tune => {
                let space = parsed
                    .space
                    .ok_or_else(|| ApiError::invalid("tune jobs need a search `space`"))?;
                space.validate(&spec)?;
                let defaults: TuneConfig = serde_json::from_value(json!({"space": {}}))
                    .map_err(|e| ApiError::internal(e.to_string()))?;
                let tc = TuneConfig {
                    space,
                    trials: parsed.trials.unwrap_or(defaults.trials),
                    seed: parsed.seed.unwrap_or(defaults.seed),
                    metric: parsed.metric.unwrap_or(defaults.metric),
                    workers: parsed.workers.unwrap_or(defaults.workers),
                };
                tc.metric.parse::<Metric>()?;
                if tc.trials < 1 {
                    return Err(ApiError::invalid("trials must be >= 1"));
                }
                if !dataset.files.contains_key("relations_valid") {
                    return Err(ApiError::invalid("tuning needs a dataset with relations_valid"));
                }
                Some(tc)
            }
        };
        let record = JobRecord {
            id: uuid::Uuid::new_v4().simple().to_string(),
            kind,
            model_id: spec.id.to_string(),
            dataset_id: dataset_id.to_string(),
            config,
            status: JobStatus::Queued,
            history: Vec::new(),
            created_at: Utc::now(),
            started_at: None,
            finished_at: None,
            error: None,
            result: None,
        };
        self.persist(&record)?;
        let plan = Plan { experiment, tune };
        self.jobs
            .lock()
            .unwrap()
            .insert(record.id.clone(), Entry::new(record.clone(), Some(plan)));
        self.queue
            .send(record.id.clone())
            .map_err(|_| ApiError::internal("job queue is closed"))?;
        Ok(record)
    }

    pub fn get(&self, id: &str) -> ApiResult<JobRecord> {
        self.jobs
            .lock()
            .unwrap()
            .get(id)
            .map(|e| e.record.clone())
            .ok_or_else(|| ApiError::not_found("job", id))
    }

    pub fn list(&self) -> Vec<JobRecord> {
        let mut v: Vec<_> = self.jobs.lock().unwrap().values().map(|e| e.record.clone()).collect();
        v.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        v
    }

    /// A receiver that fires whenever job `id` gains an event or changes status.
    pub fn subscribe(&self, id: &str) -> ApiResult<watch::Receiver<()>> {
        self.jobs
            .lock()
            .unwrap()
            .get(id)
            .map(|e| e.notify.subscribe())
            .ok_or_else(|| ApiError::not_found("job", id))
    }

    /// Events from index `from` on, and the terminal event if the job has finished.
    pub fn events_since(&self, id: &str, from: usize) -> (Vec<Value>, Option<Value>) {
        let jobs = self.jobs.lock().unwrap();
        match jobs.get(id) {
            Some(e) => (
                e.record.history.get(from..).unwrap_or_default().to_vec(),
                e.record.terminal_event(),
            ),
            None => (Vec::new(), Some(json!({"status": "failed", "message": "job vanished"}))),
        }
    }

    /// Appends an event: first to `history.jsonl`, then to the record, so
    /// streamed events are always already persisted. Breaks once the job has
    /// been interrupted.
    fn push_event(&self, id: &str, event: Value) -> ControlFlow<()> {
        let mut jobs = self.jobs.lock().unwrap();
        let Some(entry) = jobs.get_mut(id) else { return ControlFlow::Break(()) };
        if entry.record.status.is_terminal() {
            return ControlFlow::Break(());
        }
        let line = format!("{event}\n");
        let written = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir(id).join(HISTORY_FILE))
            .and_then(|mut f| f.write_all(line.as_bytes()));
        if let Err(e) = written {
            tracing::error!("job {id}: cannot append history: {e}");
        }
        entry.record.history.push(event);
        entry.notify.send_replace(());
        ControlFlow::Continue(())
    }

    /// Moves job `id` to `next` if the lifecycle allows it.
    fn transition(&self, id: &str, next: JobStatus, edit: impl FnOnce(&mut JobRecord)) -> bool {
        let mut jobs = self.jobs.lock().unwrap();
        let Some(entry) = jobs.get_mut(id) else { return false };
        if !entry.record.status.can_become(next) {
            return false;
        }
        entry.record.status = next;
        match next {
            JobStatus::Running => entry.record.started_at = Some(Utc::now()),
            _ => entry.record.finished_at = Some(Utc::now()),
        }
        edit(&mut entry.record);
        if let Err(e) = self.persist(&entry.record) {
            tracing::error!("job {id}: cannot persist record: {e}");
        }
        entry.notify.send_replace(());
        true
    }

    /// Marks every unfinished job as failed with the message "interrupted".
    pub fn interrupt_all(&self) {
        let ids: Vec<String> = self
            .jobs
            .lock()
            .unwrap()
            .values()
            .filter(|e| !e.record.status.is_terminal())
            .map(|e| e.record.id.clone())
            .collect();
        for id in ids {
            self.transition(&id, JobStatus::Failed, |r| r.error = Some(INTERRUPTED.into()));
        }
    }

    /// Runs job `id` to completion on the calling thread.
    pub fn execute(&self, id: &str) {
        let plan = {
            let jobs = self.jobs.lock().unwrap();
            jobs.get(id).and_then(|e| e.plan.clone())
        };
        let Some(plan) = plan else { return };
        if !self.transition(id, JobStatus::Running, |_| {}) {
            return;
        }
        tracing::info!("job {id} started");
        match self.run_plan(id, &plan) {
            Ok((run, result)) => {
                let run = Arc::new(run);
                let done = self.transition(id, JobStatus::Done, |r| r.result = result);
                if done {
                    if let Some(e) = self.jobs.lock().unwrap().get_mut(id) {
                        e.run = Some(run);
                    }
                }
                tracing::info!("job {id} finished");
            }
            Err(e) => {
                tracing::warn!("job {id} failed: {e}");
                self.transition(id, JobStatus::Failed, |r| r.error = Some(e.to_string()));
            }
        }
    }

    fn run_plan(&self, id: &str, plan: &Plan) -> textmatch::Result<(TrainedRun, Option<Value>)> {
        let record = self.get(id).map_err(|e| textmatch::Error::config(e.error))?;
        let dataset = self
            .datasets
            .load(&record.dataset_id)
            .map_err(|e| textmatch::Error::data(e.error))?;
        let dir = self.dir(id);
        match &plan.tune {
            None => {
                let hp = plan.experiment.validate()?;
                let mut sink = |e: &textmatch::train::EpochEvent| {
                    self.push_event(id, serde_json::to_value(e).unwrap_or(Value::Null))
                };
                let run = run_training(&plan.experiment, &hp, &dataset, &mut sink)?;
                save_run(&dir, &run)?;
                Ok((run, None))
            }
            Some(tc) => {
                let on_trial = |t: &textmatch::automl::Trial| {
                    self.push_event(id, serde_json::to_value(t).unwrap_or(Value::Null))
                };
                let outcome = tune(&plan.experiment, &dataset, tc, &on_trial)?;
                save_run(&dir.join(BEST_DIR), &outcome.best_run)?;
                let result = serde_json::to_value(&outcome.result)?;
                write_atomic(&dir.join(TUNE_FILE), &serde_json::to_vec_pretty(&result)?)?;
                Ok((outcome.best_run, Some(result)))
            }
        }
    }

    /// The trained run of a finished job, loaded from disk on first use.
    pub fn run(&self, id: &str) -> ApiResult<Arc<TrainedRun>> {
        let kind = {
            let jobs = self.jobs.lock().unwrap();
            let e = jobs.get(id).ok_or_else(|| ApiError::not_found("job", id))?;
            if e.record.status != JobStatus::Done {
                return Err(ApiError::new(
                    axum::http::StatusCode::CONFLICT,
                    format!("job `{id}` is {:?}, not done", e.record.status).to_lowercase(),
                ));
            }
            if let Some(run) = &e.run {
                return Ok(run.clone());
            }
            e.record.kind
        };
        let dir = match kind {
            JobKind::Train => self.dir(id),
            JobKind::Tune => self.dir(id).join(BEST_DIR),
        };
        let run = Arc::new(load_run(&dir)?);
        if let Some(e) = self.jobs.lock().unwrap().get_mut(id) {
            e.run = Some(run.clone());
        }
        Ok(run)
    }

    /// Directory of a job's artifacts.
    pub fn artifacts_dir(&self, id: &str) -> PathBuf {
        self.dir(id)
    }
}

/// Runs queued jobs on `workers` concurrent tasks until the queue closes.
pub fn spawn_workers(store: Arc<JobStore>, rx: mpsc::UnboundedReceiver<String>, workers: usize) {
    let rx = Arc::new(tokio::sync::Mutex::new(rx));
    for _ in 0..workers.max(1) {
        let rx = rx.clone();
        let store = store.clone();
        tokio::spawn(async move {
            loop {
                let Some(id) = rx.lock().await.recv().await else { break };
                let store = store.clone();
                if let Err(e) = tokio::task::spawn_blocking(move || store.execute(&id)).await {
                    tracing::error!("job worker panicked: {e}");
                }
            }
        });
    }
}
