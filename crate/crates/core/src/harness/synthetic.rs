//! Desk-scale stand-in datasets with predictive descriptions.

use ndarray::Axis;
use rand::seq::SliceRandom;

use super::Dataset;
use crate::autograd::Mat;
use crate::datamodel::{
    BasePartition, ClassId, DatasetMeta, FeatureSet, SemanticProvenance, SemanticTable, SyntheticDatasetSpec,
    VisualProvenance,
};
use crate::error::Result;
use crate::rng::{child_rng, normal_matrix};

pub const DATASET_ID: &str = "synthetic";

/// Share of each seen class kept for training; the rest is seen test data.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Rank of the prototype subspace, so unseen descriptions are combinations
/// of directions the seen classes already cover.
pub fn prototype_rank(spec: &SyntheticDatasetSpec) -> usize {
    (spec.p / 2).clamp(1, spec.d_a)
}

/// Class prototypes `a_c = B·u_c/√r` and features `x = M·a_c + noise·ε`.
/// Rows are class-major; classes `1..=p` are seen, the rest unseen.
pub fn make_synthetic_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let c = spec.p + spec.q;
    let r = prototype_rank(spec);
    let basis = normal_matrix(&mut child_rng(spec.seed, "basis"), spec.d_a, r, 1.0);
    let codes = normal_matrix(&mut child_rng(spec.seed, "codes"), c, r, 1.0);
    let protos: Mat = codes.dot(&basis.t()) / (r as f64).sqrt();
    let map = normal_matrix(&mut child_rng(spec.seed, "map"), spec.d_a, spec.d_x, 1.0 / (spec.d_a as f64).sqrt());

    let n = c * spec.samples_per_class;
    let labels: Vec<ClassId> = (1..=c as ClassId)
        .flat_map(|k| std::iter::repeat(k).take(spec.samples_per_class))
        .collect();
    let idx: Vec<usize> = labels.iter().map(|&k| k as usize - 1).collect();
    let clean = protos.select(Axis(0), &idx).dot(&map);
    let noise = normal_matrix(&mut child_rng(spec.seed, "noise"), n, spec.d_x, spec.noise);
    let x = clean + noise;

    let mut base = BasePartition {
        train_seen: Vec::new(),
        test_seen: Vec::new(),
        test_unseen: Vec::new(),
    };
    let n_train = ((spec.samples_per_class as f64 * TRAIN_FRACTION).round() as usize).clamp(1, spec.samples_per_class - 1);
    for k in 0..c {
        let rows: Vec<usize> = (k * spec.samples_per_class..(k + 1) * spec.samples_per_class).collect();
        if k < spec.p {
            let mut order = rows;
            order.shuffle(&mut child_rng(spec.seed, &format!("split/{}", k + 1)));
            let (tr, te) = order.split_at(n_train);
            base.train_seen.extend(tr);
            base.test_seen.extend(te);
        } else {
            base.test_unseen.extend(rows);
        }
    }
    base.train_seen.sort_unstable();
    base.test_seen.sort_unstable();

    let meta = DatasetMeta::from_labels(DATASET_ID, spec.p, spec.q, spec.d_a, &labels)?;
    let features = FeatureSet::from_f64(&x, labels, VisualProvenance::Synthetic, DATASET_ID)?;
    let semantics = SemanticTable::from_f64(&protos, SemanticProvenance::Attributes, DATASET_ID)?;
    Ok(Dataset {
        features,
        semantics,
        meta,
        base,
        checksums: Default::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise: f64) -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            p: 8,
            q: 4,
            d_x: 32,
            d_a: 16,
            samples_per_class: 50,
            noise,
            seed: 7,
        }
    }

    #[test]
    fn counts_and_partition() {
        let d = make_synthetic_dataset(&spec(0.3)).unwrap();
        assert_eq!(d.features.len(), 600);
        assert_eq!(d.base.train_seen.len(), 320);
        assert_eq!(d.base.test_seen.len(), 80);
        assert_eq!(d.base.test_unseen.len(), 200);
        assert_eq!(d.semantics.num_classes(), 12);
    }

    #[test]
    fn noiseless_classes_are_constant() {
        let d = make_synthetic_dataset(&spec(0.0)).unwrap();
        let x = &d.features.x;
        for k in 0..12 {
            let first = x.row(k * 50);
            for i in 1..50 {
                assert_eq!(x.row(k * 50 + i), first);
            }
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = make_synthetic_dataset(&spec(0.3)).unwrap();
        let b = make_synthetic_dataset(&spec(0.3)).unwrap();
        assert_eq!(a.features.x, b.features.x);
        assert_eq!(a.base, b.base);
    }
}
