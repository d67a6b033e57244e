use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::Relation;
use crate::error::{Error, Result};

fn ingest(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `id<TAB>text` lines. `origin` is only used in error messages.
pub fn read_corpus<R: Read>(reader: R, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| ingest(origin, line_no, "expected `id<TAB>text`"))?;
        if id.is_empty() {
            return Err(ingest(origin, line_no, "empty id"));
        }
        if out.insert(id.to_string(), text.to_string()).is_some() {
            return Err(ingest(origin, line_no, format!("duplicate id `{id}`")));
        }
    }
    Ok(out)
}

/// Opens `path`, naming it in the error.
pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    read_corpus(open(path)?, path)
}

/// Reads `label<TAB>left-id<TAB>right-id` lines; at least one is required.
pub fn read_relations<R: Read>(reader: R, origin: &Path) -> Result<Vec<Relation>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [label, left, right] = fields[..] else {
            return Err(ingest(origin, line_no, "expected `label<TAB>left<TAB>right`"));
        };
        let label: u32 = label.parse().map_err(|_| {
            ingest(origin, line_no, format!("label `{label}` is not a non-negative integer"))
        })?;
        if left.is_empty() || right.is_empty() {
            return Err(ingest(origin, line_no, "empty id"));
        }
        out.push(Relation::new(left, right, label));
    }
    if out.is_empty() {
        return Err(ingest(origin, 0, "no relations (a pack needs at least one)"));
    }
    Ok(out)
}

pub fn load_relations(path: impl AsRef<Path>) -> Result<Vec<Relation>> {
    let path = path.as_ref();
    read_relations(open(path)?, path)
}
