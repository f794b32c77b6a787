//! Published statistics of the five standard benchmarks and index layouts
//! that realize their canonical partitions.

use std::collections::BTreeMap;

use crate::datamodel::{BasePartition, ClassId, DatasetMeta};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchmarkStats {
    pub id: &'static str,
    pub d_a: usize,
    pub p: usize,
    pub q: usize,
    /// Sample counts as listed in the dataset statistics.
    pub n_total: usize,
    pub n_seen: usize,
    pub n_unseen: usize,
    /// Seen-class training and test counts of the generalized split.
    pub gzsl_train_seen: usize,
    pub gzsl_test_seen: usize,
    /// Unseen test count of every split.
    pub test_unseen: usize,
}

pub const BENCHMARKS: [BenchmarkStats; 5] = [
    BenchmarkStats {
        id: "FLO",
        d_a: 1024,
        p: 82,
        q: 20,
        n_total: 8189,
        n_seen: 7034,
        n_unseen: 1155,
        gzsl_train_seen: 5631,
        gzsl_test_seen: 1403,
        test_unseen: 1155,
    },
    BenchmarkStats {
        id: "CUB",
        d_a: 312,
        p: 150,
        q: 50,
        n_total: 11788,
        n_seen: 8821,
        n_unseen: 2967,
        gzsl_train_seen: 7057,
        gzsl_test_seen: 1764,
        test_unseen: 2967,
    },
    BenchmarkStats {
        id: "SUN",
        d_a: 102,
        p: 645,
        q: 72,
        n_total: 14340,
        n_seen: 12900,
        n_unseen: 1440,
        gzsl_train_seen: 10320,
        gzsl_test_seen: 2580,
        test_unseen: 1440,
    },
    BenchmarkStats {
        id: "AWA2",
        d_a: 85,
        p: 40,
        q: 10,
        n_total: 37322,
        n_seen: 29409,
        n_unseen: 7913,
        gzsl_train_seen: 23527,
        gzsl_test_seen: 5882,
        test_unseen: 7913,
    },
    BenchmarkStats {
        id: "AWA",
        d_a: 85,
        p: 40,
        q: 10,
        n_total: 30475,
        n_seen: 25517,
        n_unseen: 4958,
        gzsl_train_seen: 19832,
        gzsl_test_seen: 4958,
        test_unseen: 5685,
    },
];

pub fn stats(id: &str) -> Result<&'static BenchmarkStats> {
    BENCHMARKS
        .iter()
        .find(|b| b.id.eq_ignore_ascii_case(id))
        .ok_or_else(|| Error::Invalid(format!("unknown benchmark '{id}'")))
}

/// A label vector and base partition with the benchmark's split counts.
#[derive(Clone, Debug)]
pub struct Layout {
    pub meta: DatasetMeta,
    pub labels: Vec<ClassId>,
    pub base: BasePartition,
}

fn spread(total: usize, parts: usize) -> impl Iterator<Item = usize> {
    let (each, extra) = (total / parts, total % parts);
    (0..parts).map(move |i| each + usize::from(i < extra))
}

/// Builds a layout from the generalized split counts, spreading each count
/// as evenly as possible over the classes (earlier classes take the remainder).
///
/// The seen total is `gzsl_train_seen + gzsl_test_seen`, which for AWA
/// differs from the listed seen count; see the dataset notes.
pub fn layout(b: &BenchmarkStats) -> Result<Layout> {
    let mut labels = Vec::new();
    let mut base = BasePartition {
        train_seen: Vec::new(),
        test_seen: Vec::new(),
        test_unseen: Vec::new(),
    };
    let train: Vec<usize> = spread(b.gzsl_train_seen, b.p).collect();
    let test: Vec<usize> = spread(b.gzsl_test_seen, b.p).collect();
    for c in 0..b.p {
        let class = (c + 1) as ClassId;
        for _ in 0..train[c] {
            base.train_seen.push(labels.len());
            labels.push(class);
        }
        for _ in 0..test[c] {
            base.test_seen.push(labels.len());
            labels.push(class);
        }
    }
    for (c, n) in spread(b.test_unseen, b.q).enumerate() {
        let class = (b.p + c + 1) as ClassId;
        for _ in 0..n {
            base.test_unseen.push(labels.len());
            labels.push(class);
        }
    }
    let mut counts: BTreeMap<ClassId, usize> = BTreeMap::new();
    for &y in &labels {
        *counts.entry(y).or_default() += 1;
    }
    let n_seen = base.train_seen.len() + base.test_seen.len();
    let meta = DatasetMeta::new(b.id, b.p, b.q, b.d_a, n_seen, base.test_unseen.len(), counts)?;
    Ok(Layout { meta, labels, base })
}
