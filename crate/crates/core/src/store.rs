//! On-disk run artifacts: `manifest.json`, `weights.bin` and `history.jsonl`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::experiment::TrainedRun;
use crate::models::{HyperParams, ModelInstance, ParamInfo, ParamStore};
use crate::text::Pipeline;
use crate::train::EpochEvent;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const HISTORY_FILE: &str = "history.jsonl";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub model_id: String,
    pub hyper_parameters: HyperParams,
    pub pipeline: Value,
    /// Parameter layout; `weights.bin` holds their values in this order.
    pub parameters: Vec<ParamInfo>,
}

fn artifact(path: &Path, message: impl Into<String>) -> Error {
    Error::Artifact {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn encode_weights(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.scalar_count() * 8);
    for p in params.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_weights(layout: &[ParamInfo], bytes: &[u8], origin: &Path) -> Result<ParamStore> {
    let total: usize = layout.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 8 {
        return Err(artifact(
            origin,
            format!("holds {} bytes but the manifest describes {} values ({} bytes)", bytes.len(), total, total * 8),
        ));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut store = ParamStore::new();
    for info in layout {
        let n = info.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        let t = Tensor::new(info.shape.clone(), data).map_err(|e| artifact(origin, e.to_string()))?;
        store.insert(info.name.clone(), t, info.trainable)?;
    }
    Ok(store)
}

pub fn history_jsonl(history: &[EpochEvent]) -> Result<String> {
    let mut s = String::new();
    for e in history {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    Ok(s)
}

/// Saves a trained run into `dir` (created if needed). The manifest is written last.
pub fn save_run(dir: &Path, run: &TrainedRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = RunManifest {
        format: FORMAT_VERSION,
        model_id: run.model.id().to_string(),
        hyper_parameters: run.model.hyper_parameters().clone(),
        pipeline: run.pipeline.to_json()?,
        parameters: run.model.params().layout(),
    };
    write_atomic(&dir.join(WEIGHTS_FILE), &encode_weights(run.model.params()))?;
    write_atomic(&dir.join(HISTORY_FILE), history_jsonl(&run.history)?.as_bytes())?;
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| artifact(path, e.to_string()))
}

pub fn load_history(path: &Path) -> Result<Vec<EpochEvent>> {
    let text = String::from_utf8(read(path)?).map_err(|e| artifact(path, e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| artifact(path, e.to_string())))
        .collect()
}

/// Loads a run saved by [`save_run`].
pub fn load_run(dir: &Path) -> Result<TrainedRun> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: RunManifest = serde_json::from_slice(&read(&manifest_path)?)
        .map_err(|e| artifact(&manifest_path, e.to_string()))?;
    if manifest.format != FORMAT_VERSION {
        return Err(artifact(&manifest_path, format!("unsupported format {}", manifest.format)));
    }
    let weights_path = dir.join(WEIGHTS_FILE);
    let params = decode_weights(&manifest.parameters, &read(&weights_path)?, &weights_path)?;
    let model = ModelInstance::from_parts(&manifest.model_id, &manifest.hyper_parameters, params)
        .map_err(|e| artifact(&manifest_path, e.to_string()))?;
    let pipeline = Pipeline::from_json(&manifest.pipeline)
        .map_err(|e| artifact(&manifest_path, e.to_string()))?;
    let history_path = dir.join(HISTORY_FILE);
    let history = if history_path.exists() {
        load_history(&history_path)?
    } else {
        Vec::new()
    };
    Ok(TrainedRun {
        model,
        pipeline,
        history,
    })
}

/// Paths of the three artifacts inside `dir`.
pub fn artifact_paths(dir: &Path) -> [PathBuf; 3] {
    [dir.join(MANIFEST_FILE), dir.join(WEIGHTS_FILE), dir.join(HISTORY_FILE)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Vec<ParamInfo> {
        vec![
            ParamInfo {
                name: "a".into(),
                shape: vec![2, 2],
                trainable: true,
            },
            ParamInfo {
                name: "b".into(),
                shape: vec![1, 1],
                trainable: false,
            },
        ]
    }

    #[test]
    fn weights_round_trip() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::new(vec![2, 2], vec![1.5, -0.0, f64::MIN_POSITIVE, 3.0]).unwrap(), true)
            .unwrap();
        s.insert("b", Tensor::scalar(7.25), false).unwrap();
        let bytes = encode_weights(&s);
        assert_eq!(bytes.len(), 40);
        assert_eq!(&bytes[..8], &1.5f64.to_le_bytes());
        let back = decode_weights(&layout(), &bytes, Path::new("w.bin")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn length_mismatch_names_file() {
        let err = decode_weights(&layout(), &[0u8; 39], Path::new("weights.bin")).unwrap_err();
        assert!(err.to_string().contains("weights.bin"), "{err}");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
