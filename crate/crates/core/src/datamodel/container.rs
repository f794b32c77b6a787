//! On-disk containers: `manifest.json` plus a raw little-endian `f32` matrix.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClassId, FeatureSet, SemanticProvenance, SemanticTable, VisualProvenance};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const DATA_FILE: &str = "data.f32";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Provenance {
    Features(VisualProvenance),
    Semantics(SemanticProvenance),
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dataset_id: String,
    n: usize,
    d: usize,
    provenance: Provenance,
    labels: Vec<ClassId>,
    data_file: String,
    checksum: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn encode(x: &Array2<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(x.len() * 4);
    for v in x.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn write(dir: &Path, manifest_without_sum: Manifest, x: &Array2<f32>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let bytes = encode(x);
    let manifest = Manifest {
        checksum: sha256_hex(&bytes),
        ..manifest_without_sum
    };
    fs::write(dir.join(DATA_FILE), &bytes)?;
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn read(dir: &Path) -> Result<(Manifest, Array2<f32>)> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read(&mpath).map_err(|e| Error::ingest(&mpath, e.to_string()))?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| Error::ingest(&mpath, e.to_string()))?;
    if manifest.version != VERSION {
        return Err(Error::ingest(&mpath, format!("unsupported container version {}", manifest.version)));
    }
    let dpath = dir.join(&manifest.data_file);
    let bytes = fs::read(&dpath).map_err(|e| Error::ingest(&dpath, e.to_string()))?;
    if sha256_hex(&bytes) != manifest.checksum {
        return Err(Error::ingest(&dpath, "checksum mismatch"));
    }
    if bytes.len() != manifest.n * manifest.d * 4 {
        return Err(Error::ingest(
            &dpath,
            format!("expected {}x{} floats, found {} bytes", manifest.n, manifest.d, bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let x = Array2::from_shape_vec((manifest.n, manifest.d), values).map_err(|e| Error::ingest(&dpath, e.to_string()))?;
    Ok((manifest, x))
}

pub fn write_features(dir: &Path, fs_: &FeatureSet) -> Result<()> {
    let manifest = Manifest {
        version: VERSION,
        dataset_id: fs_.dataset_id.clone(),
        n: fs_.len(),
        d: fs_.dim(),
        provenance: Provenance::Features(fs_.provenance),
        labels: fs_.y.clone(),
        data_file: DATA_FILE.into(),
        checksum: String::new(),
    };
    write(dir, manifest, &fs_.x)
}

pub fn read_features(dir: &Path) -> Result<FeatureSet> {
    let (m, x) = read(dir)?;
    let Provenance::Features(p) = m.provenance else {
        return Err(Error::ingest(dir, "container holds semantics, not features"));
    };
    if m.labels.len() != m.n {
        return Err(Error::ingest(dir, "label count differs from row count"));
    }
    FeatureSet::new(x, m.labels, p, m.dataset_id)
}

pub fn write_semantics(dir: &Path, table: &SemanticTable) -> Result<()> {
    let manifest = Manifest {
        version: VERSION,
        dataset_id: table.dataset_id.clone(),
        n: table.num_classes(),
        d: table.dim(),
        provenance: Provenance::Semantics(table.provenance),
        labels: (1..=table.num_classes() as ClassId).collect(),
        data_file: DATA_FILE.into(),
        checksum: String::new(),
    };
    write(dir, manifest, &table.a)
}

pub fn read_semantics(dir: &Path) -> Result<SemanticTable> {
    let (m, a) = read(dir)?;
    let Provenance::Semantics(p) = m.provenance else {
        return Err(Error::ingest(dir, "container holds features, not semantics"));
    };
    let expected: Vec<ClassId> = (1..=m.n as ClassId).collect();
    if m.labels != expected {
        return Err(Error::ingest(dir, "semantic rows must be labelled 1..=C in order"));
    }
    SemanticTable::new(a, p, m.dataset_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeatureSet::new(array![[1.5f32, -2.0], [0.25, 3.0]], vec![1, 2], VisualProvenance::Naive, "toy").unwrap();
        write_features(dir.path(), &f).unwrap();
        assert_eq!(read_features(dir.path()).unwrap(), f);
    }

    #[test]
    fn semantics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = SemanticTable::new(array![[1.0f32, 0.0], [0.0, 1.0]], SemanticProvenance::Gru, "toy").unwrap();
        write_semantics(dir.path(), &t).unwrap();
        assert_eq!(read_semantics(dir.path()).unwrap(), t);
    }

    #[test]
    fn corrupted_payload_is_an_ingest_error() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeatureSet::new(array![[1.0f32]], vec![1], VisualProvenance::Naive, "toy").unwrap();
        write_features(dir.path(), &f).unwrap();
        fs::write(dir.path().join(DATA_FILE), [0u8, 0, 0, 0]).unwrap();
        assert!(matches!(read_features(dir.path()), Err(Error::Ingest { .. })));
    }
}
