//! Loading real datasets: community split archives (a feature file and a
//! split file in MAT v5 format) and pre-built on-disk containers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::mat5::{self, MatArray};
use super::Dataset;
use crate::autograd::Mat;
use crate::datamodel::container::{read_features, read_semantics};
use crate::datamodel::{
    BasePartition, ClassId, DatasetMeta, FeatureSet, SemanticProvenance, SemanticTable, VisualProvenance,
};
use crate::error::{Error, Result};

pub const FEATURES: &str = "features";
pub const LABELS: &str = "labels";
pub const ATTRIBUTES: &str = "att";
pub const TRAINVAL: &str = "trainval_loc";
pub const TEST_SEEN: &str = "test_seen_loc";
pub const TEST_UNSEEN: &str = "test_unseen_loc";

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn field<'a>(arrays: &'a BTreeMap<String, MatArray>, path: &Path, name: &str) -> Result<&'a MatArray> {
    arrays
        .get(name)
        .ok_or_else(|| Error::ingest(path, format!("missing matrix `{name}`")))
}

/// Converts a 1-based MATLAB index vector to 0-based indices below `n`.
fn locations(arr: &MatArray, path: &Path, name: &str, n: usize) -> Result<Vec<usize>> {
    arr.to_vec()
        .into_iter()
        .map(|v| {
            if v.fract() != 0.0 || v < 1.0 || v > n as f64 {
                Err(Error::ingest(path, format!("`{name}` entry {v} out of range 1..={n}")))
            } else {
                Ok(v as usize - 1)
            }
        })
        .collect()
}

fn dataset_name(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "archive".into())
}

/// Loads a community split archive. Seen classes are those labelling the
/// trainval and test-seen locations, unseen those of the test-unseen ones;
/// labels are remapped to dense ids with seen classes first, each group in
/// ascending original order. Samples outside every location are dropped.
pub fn ingest_community_splits(features_path: &Path, splits_path: &Path) -> Result<Dataset> {
    let fa = mat5::read(features_path)?;
    let sa = mat5::read(splits_path)?;
    let raw_labels = field(&fa, features_path, LABELS)?.to_vec();
    let n = raw_labels.len();
    let mut x = field(&fa, features_path, FEATURES)?.to_mat()?;
    if x.nrows() != n {
        if x.ncols() == n {
            x = x.t().to_owned();
        } else {
            return Err(Error::ingest(
                features_path,
                format!("`{FEATURES}` is {}x{} but there are {n} labels", x.nrows(), x.ncols()),
            ));
        }
    }
    let raw: Vec<u32> = raw_labels
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
                Err(Error::ingest(features_path, format!("`{LABELS}` holds non-positive-integer {v}")))
            } else {
                Ok(v as u32)
            }
        })
        .collect::<Result<_>>()?;

    let trainval = locations(field(&sa, splits_path, TRAINVAL)?, splits_path, TRAINVAL, n)?;
    let test_seen = locations(field(&sa, splits_path, TEST_SEEN)?, splits_path, TEST_SEEN, n)?;
    let test_unseen = locations(field(&sa, splits_path, TEST_UNSEEN)?, splits_path, TEST_UNSEEN, n)?;

    let seen_raw: BTreeSet<u32> = trainval.iter().chain(&test_seen).map(|&i| raw[i]).collect();
    let unseen_raw: BTreeSet<u32> = test_unseen.iter().map(|&i| raw[i]).collect();
    if let Some(c) = seen_raw.intersection(&unseen_raw).next() {
        return Err(Error::ingest(splits_path, format!("class {c} is both seen and unseen")));
    }
    let mut remap: BTreeMap<u32, ClassId> = BTreeMap::new();
    for (k, &c) in seen_raw.iter().chain(&unseen_raw).enumerate() {
        remap.insert(c, k as ClassId + 1);
    }

    let n_raw = *raw.iter().max().unwrap_or(&0) as usize;
    let att = field(&sa, splits_path, ATTRIBUTES)?.to_mat()?;
    let att = if att.ncols() == n_raw && att.nrows() != n_raw {
        att.t().to_owned()
    } else if att.nrows() >= n_raw {
        att
    } else {
        return Err(Error::ingest(
            splits_path,
            format!("`{ATTRIBUTES}` is {}x{} but labels reach {n_raw}", att.nrows(), att.ncols()),
        ));
    };
    let order: Vec<usize> = seen_raw.iter().chain(&unseen_raw).map(|&c| c as usize - 1).collect();
    let a: Mat = att.select(ndarray::Axis(0), &order);

    // Keep only located samples, renumbered in trainval, test-seen, test-unseen order.
    let mut kept = Vec::new();
    let mut new_index = vec![usize::MAX; n];
    for &i in trainval.iter().chain(&test_seen).chain(&test_unseen) {
        if new_index[i] == usize::MAX {
            new_index[i] = kept.len();
            kept.push(i);
        }
    }
    let renum = |v: &[usize]| v.iter().map(|&i| new_index[i]).collect::<Vec<_>>();
    let base = BasePartition {
        train_seen: renum(&trainval),
        test_seen: renum(&test_seen),
        test_unseen: renum(&test_unseen),
    };
    let id = dataset_name(features_path);
    let y: Vec<ClassId> = kept.iter().map(|&i| remap[&raw[i]]).collect();
    let features = FeatureSet::from_f64(&x.select(ndarray::Axis(0), &kept), y, VisualProvenance::Original, id.clone())?;
    let semantics = SemanticTable::from_f64(&a, SemanticProvenance::Original, id.clone())?;
    let meta = DatasetMeta::from_labels(id, seen_raw.len(), unseen_raw.len(), a.ncols(), &features.y)?;
    let mut checksums = BTreeMap::new();
    checksums.insert(features_path.display().to_string(), sha256_file(features_path)?);
    checksums.insert(splits_path.display().to_string(), sha256_file(splits_path)?);
    let ds = Dataset {
        features,
        semantics,
        meta,
        base,
        checksums,
    };
    ds.validate()?;
    Ok(ds)
}

/// Loads a dataset from feature and semantic containers plus a JSON base
/// partition. Labels must already be dense with seen classes `1..=p`.
pub fn ingest_containers(features: &Path, semantics: &Path, partition: &Path, p: usize) -> Result<Dataset> {
    let fs_ = read_features(features)?;
    let table = read_semantics(semantics)?;
    let text = fs::read(partition).map_err(|e| Error::ingest(partition, e.to_string()))?;
    let base: BasePartition = serde_json::from_slice(&text).map_err(|e| Error::ingest(partition, e.to_string()))?;
    let c = table.num_classes();
    if p == 0 || p >= c {
        return Err(Error::ingest(semantics, format!("p = {p} leaves no unseen classes among {c}")));
    }
    let meta = DatasetMeta::from_labels(fs_.dataset_id.clone(), p, c - p, table.dim(), &fs_.y)?;
    let n = fs_.len();
    if let Some(i) = base.train_seen.iter().chain(&base.test_seen).chain(&base.test_unseen).find(|&&i| i >= n) {
        return Err(Error::ingest(partition, format!("index {i} out of range for {n} samples")));
    }
    let ds = Dataset {
        features: fs_,
        semantics: table,
        meta,
        base,
        checksums: BTreeMap::new(),
    };
    ds.validate()?;
    Ok(ds)
}
