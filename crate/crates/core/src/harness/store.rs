//! Append-only results store: one JSON file per record, published by
//! atomic rename so concurrent writers never leave partial files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::datamodel::ResultRecord;
use crate::error::{Error, Result};

pub const EXT: &str = "json";

/// Writes `record` into `dir` under a fresh name and returns the path.
pub fn append(dir: &Path, record: &ResultRecord) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::Builder::new().prefix(".pending-").tempfile_in(dir)?;
    tmp.write_all(&serde_json::to_vec_pretty(record)?)?;
    tmp.as_file().sync_all()?;
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    let stem = format!(
        "{nanos:024}-{}-{}-{}",
        std::process::id(),
        &record.config_hash[..record.config_hash.len().min(12)],
        record.seed
    );
    let mut k = 0usize;
    loop {
        let path = dir.join(format!("{stem}-{k}.{EXT}"));
        match tmp.persist_noclobber(&path) {
            Ok(_) => return Ok(path),
            Err(e) if e.error.kind() == std::io::ErrorKind::AlreadyExists => {
                tmp = e.file;
                k += 1;
            }
            Err(e) => return Err(e.error.into()),
        }
    }
}

/// Reads every record in `dir`, ordered by file name (i.e. write order).
pub fn load_all(dir: &Path) -> Result<Vec<ResultRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::ingest(dir, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == EXT)
                && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read(p).map_err(|e| Error::ingest(p, e.to_string()))?;
            let r: ResultRecord = serde_json::from_slice(&text).map_err(|e| Error::ingest(p, e.to_string()))?;
            r.validate()?;
            Ok(r)
        })
        .collect()
}
