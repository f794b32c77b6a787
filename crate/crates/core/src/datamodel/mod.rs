//! Domain types shared by every other module.
//!
//! Labels are dense: seen classes are `1..=p`, unseen classes are `p+1..=p+q`.

pub mod container;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Mat;
use crate::error::{Error, Result};

pub type ClassId = u32;

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                let lower = s.to_ascii_lowercase();
                $(if lower == $text.to_ascii_lowercase() {
                    return Ok($name::$variant);
                })+
                Err(Error::Invalid(format!(concat!("unknown ", stringify!($name), " '{}'"), s)))
            }
        }
    };
}

named_enum!(
    /// The six any-shot learning paradigms.
    Task {
        Zsl => "ZSL",
        Gzsl => "GZSL",
        Ufsl => "UFSL",
        Gufsl => "GUFSL",
        Sfsl => "SFSL",
        Gsfsl => "GSFSL",
    }
);

impl Task {
    /// Evaluated over seen and unseen classes together.
    pub fn is_generalized(self) -> bool {
        matches!(self, Task::Gzsl | Task::Gufsl | Task::Gsfsl)
    }

    pub fn is_few_shot(self) -> bool {
        !matches!(self, Task::Zsl | Task::Gzsl)
    }

    /// N labelled samples per unseen class join training.
    pub fn has_unseen_shots(self) -> bool {
        matches!(self, Task::Ufsl | Task::Gufsl)
    }

    /// Training is restricted to N samples per seen class.
    pub fn has_seen_shots(self) -> bool {
        matches!(self, Task::Sfsl | Task::Gsfsl)
    }

    /// The zero-shot counterpart whose hyperparameters this task reuses.
    pub fn base(self) -> Task {
        if self.is_generalized() {
            Task::Gzsl
        } else {
            Task::Zsl
        }
    }
}

named_enum!(VisualProvenance {
    Original => "original",
    Naive => "naive",
    Finetuned => "finetuned",
    Regularized => "regularized",
    Synthetic => "synthetic",
});

named_enum!(SemanticProvenance {
    Original => "original",
    Naive => "naive",
    Gru => "gru",
    ImbGru => "imb_gru",
    Attributes => "attributes",
});

named_enum!(
    /// The ten embedding-aware generative models.
    ModelKind {
        FClsWgan => "f-CLSWGAN",
        LisGan => "LisGAN",
        LsrGan => "LsrGAN",
        Cvae => "CVAE",
        CadaVae => "CADA-VAE",
        VaeCFlow => "VAE-cFlow",
        FVaeganD2 => "f-VAEGAN-D2",
        TfVaegan => "tf-VAEGAN",
        Free => "FREE",
        GcmCf => "GCM-CF",
    }
);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dataset_id: String,
    pub p: usize,
    pub q: usize,
    pub d_a: usize,
    pub n_total: usize,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub per_class_counts: BTreeMap<ClassId, usize>,
}

impl DatasetMeta {
    pub fn new(
        dataset_id: impl Into<String>,
        p: usize,
        q: usize,
        d_a: usize,
        n_seen: usize,
        n_unseen: usize,
        per_class_counts: BTreeMap<ClassId, usize>,
    ) -> Result<Self> {
        let meta = Self {
            dataset_id: dataset_id.into(),
            p,
            q,
            d_a,
            n_total: n_seen + n_unseen,
            n_seen,
            n_unseen,
            per_class_counts,
        };
        meta.validate()?;
        Ok(meta)
    }

    /// Builds metadata from a dense label vector.
    pub fn from_labels(dataset_id: impl Into<String>, p: usize, q: usize, d_a: usize, labels: &[ClassId]) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for &y in labels {
            *counts.entry(y).or_insert(0) += 1;
        }
        let n_seen = labels.iter().filter(|&&y| (y as usize) <= p).count();
        Self::new(dataset_id, p, q, d_a, n_seen, labels.len() - n_seen, counts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::Invalid("p and q must both be positive".into()));
        }
        if self.n_seen + self.n_unseen != self.n_total {
            return Err(Error::Invalid(format!(
                "n_seen {} + n_unseen {} != n_total {}",
                self.n_seen, self.n_unseen, self.n_total
            )));
        }
        if !self.per_class_counts.is_empty() {
            let c = self.num_classes() as ClassId;
            if let Some(bad) = self.per_class_counts.keys().find(|&&k| k == 0 || k > c) {
                return Err(Error::Invalid(format!("class {bad} outside 1..={c}")));
            }
            let seen: usize = self
                .per_class_counts
                .iter()
                .filter(|(k, _)| self.is_seen(**k))
                .map(|(_, v)| v)
                .sum();
            let total: usize = self.per_class_counts.values().sum();
            if seen != self.n_seen || total != self.n_total {
                return Err(Error::Invalid(format!(
                    "per-class counts sum to {seen} seen / {total} total, expected {} / {}",
                    self.n_seen, self.n_total
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.p + self.q
    }

    pub fn is_seen(&self, c: ClassId) -> bool {
        c >= 1 && (c as usize) <= self.p
    }

    pub fn is_unseen(&self, c: ClassId) -> bool {
        (c as usize) > self.p && (c as usize) <= self.p + self.q
    }

    pub fn seen_classes(&self) -> Vec<ClassId> {
        (1..=self.p as ClassId).collect()
    }

    pub fn unseen_classes(&self) -> Vec<ClassId> {
        (self.p as ClassId + 1..=(self.p + self.q) as ClassId).collect()
    }

    pub fn all_classes(&self) -> Vec<ClassId> {
        (1..=(self.p + self.q) as ClassId).collect()
    }
}

/// Visual feature matrix with one label per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub x: Array2<f32>,
    pub y: Vec<ClassId>,
    pub provenance: VisualProvenance,
    pub dataset_id: String,
}

impl FeatureSet {
    pub fn new(x: Array2<f32>, y: Vec<ClassId>, provenance: VisualProvenance, dataset_id: impl Into<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} feature rows but {} labels", x.nrows(), y.len())));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite feature at flat index {pos}")));
        }
        if y.contains(&0) {
            return Err(Error::Invalid("label 0 is not a valid class id".into()));
        }
        Ok(Self {
            x,
            y,
            provenance,
            dataset_id: dataset_id.into(),
        })
    }

    pub fn from_f64(x: &Mat, y: Vec<ClassId>, provenance: VisualProvenance, dataset_id: impl Into<String>) -> Result<Self> {
        Self::new(x.mapv(|v| v as f32), y, provenance, dataset_id)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Checks every label against the dataset's class set.
    pub fn check_labels(&self, meta: &DatasetMeta) -> Result<()> {
        match self.y.iter().find(|&&y| !meta.is_seen(y) && !meta.is_unseen(y)) {
            Some(bad) => Err(Error::Invalid(format!("label {bad} not in dataset {}", meta.dataset_id))),
            None => Ok(()),
        }
    }

    pub fn to_f64(&self) -> Mat {
        self.x.mapv(f64::from)
    }

    /// Rows at `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> FeatureSet {
        FeatureSet {
            x: self.x.select(ndarray::Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            provenance: self.provenance,
            dataset_id: self.dataset_id.clone(),
        }
    }
}

/// Per-class semantic description vectors; row `c-1` describes class `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticTable {
    pub a: Array2<f32>,
    pub provenance: SemanticProvenance,
    pub dataset_id: String,
}

impl SemanticTable {
    pub fn new(a: Array2<f32>, provenance: SemanticProvenance, dataset_id: impl Into<String>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::DegenerateInput("empty semantic table".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite semantic entry".into()));
        }
        let mut rows = BTreeSet::new();
        for (i, row) in a.rows().into_iter().enumerate() {
            let key: Vec<u32> = row.iter().map(|v| v.to_bits()).collect();
            if !rows.insert(key) {
                return Err(Error::DegenerateInput(format!("class {} duplicates an earlier row", i + 1)));
            }
        }
        Ok(Self {
            a,
            provenance,
            dataset_id: dataset_id.into(),
        })
    }

    pub fn from_f64(a: &Mat, provenance: SemanticProvenance, dataset_id: impl Into<String>) -> Result<Self> {
        Self::new(a.mapv(|v| v as f32), provenance, dataset_id)
    }

    pub fn num_classes(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn covers(&self, meta: &DatasetMeta) -> Result<()> {
        if self.num_classes() != meta.num_classes() {
            return Err(Error::Invalid(format!(
                "semantic table has {} rows, dataset has {} classes",
                self.num_classes(),
                meta.num_classes()
            )));
        }
        Ok(())
    }

    pub fn row(&self, c: ClassId) -> Result<ArrayView1<'_, f32>> {
        if c == 0 || c as usize > self.num_classes() {
            return Err(Error::MissingDescription(c));
        }
        Ok(self.a.row(c as usize - 1))
    }

    /// Descriptions of `classes`, one row each, as `f64`.
    pub fn rows_f64(&self, classes: &[ClassId]) -> Result<Mat> {
        let mut out = Mat::zeros((classes.len(), self.dim()));
        for (i, &c) in classes.iter().enumerate() {
            let r = self.row(c)?;
            out.row_mut(i).assign(&r.mapv(f64::from));
        }
        Ok(out)
    }
}

/// Index-level realization of one task over a [`FeatureSet`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub task: Task,
    pub shots: Option<usize>,
    pub seed: u64,
    pub train_seen: Vec<usize>,
    pub train_unseen: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
}

impl SplitSpec {
    pub fn train_indices(&self) -> Vec<usize> {
        self.train_seen.iter().chain(&self.train_unseen).copied().collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.test_seen.iter().chain(&self.test_unseen).copied().collect()
    }
}

/// Canonical seen/unseen and train/test-seen assignment of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasePartition {
    pub train_seen: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
}

impl BasePartition {
    /// Seen training pool of the zero-shot setting (train + test seen).
    pub fn trainval(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.train_seen.iter().chain(&self.test_seen).copied().collect();
        v.sort_unstable();
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Default for Window {
    fn default() -> Self {
        Self { start: 0.0, end: 0.0 }
    }
}

impl Window {
    /// Linear ramp: 0 before `start`, 1 from `end` on.
    pub fn ramp(&self, epoch: f64) -> f64 {
        if self.end <= self.start {
            return if epoch >= self.start { 1.0 } else { 0.0 };
        }
        ((epoch - self.start) / (self.end - self.start)).clamp(0.0, 1.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            start: self.start * factor,
            end: self.end * factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub xi: f64,
    pub lambda_gp: f64,
    /// Semantic-relation tube half-width.
    pub sr_margin: f64,
    pub samc_margin: f64,
    pub eta: f64,
    pub k_souls: usize,
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub hidden: usize,
    pub syn_per_class: usize,
    pub lr: f64,
    pub lr_critic: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub critic_iters: usize,
    pub ema_decay: f64,
    /// Sampling variance multiplier at synthesis time.
    pub temperature: f64,
    pub flow_blocks: usize,
    pub warmup_delta: Window,
    pub warmup_gamma: Window,
    pub cf_pool_cap: usize,
    /// Seen/unseen gate margin on faithful-distance gaps.
    pub gate_margin: f64,
    pub gate_threshold: Option<f64>,
    pub reference_classifier_epochs: usize,
    /// Use unlabeled unseen test features during training.
    pub transductive: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            beta: 0.01,
            delta: 1.0,
            gamma: 1.0,
            xi: 1.0,
            lambda_gp: 10.0,
            sr_margin: 0.15,
            samc_margin: 1.0,
            eta: 0.5,
            k_souls: 3,
            latent_dim: 64,
            noise_dim: 312,
            hidden: 4096,
            syn_per_class: 300,
            lr: 1e-4,
            lr_critic: 1e-4,
            epochs: 30,
            batch_size: 64,
            critic_iters: 5,
            ema_decay: 0.9,
            temperature: 1.0,
            flow_blocks: 4,
            warmup_delta: Window { start: 6.0, end: 22.0 },
            warmup_gamma: Window { start: 21.0, end: 75.0 },
            cf_pool_cap: 32,
            gate_margin: 0.0,
            gate_threshold: None,
            reference_classifier_epochs: 20,
            transductive: false,
        }
    }
}

/// Warmup windows shrink with the shorter toy schedule (60 of 100 epochs).
const TOY_WARMUP_SCALE: f64 = 0.6;

impl HyperParams {
    /// Desk-scale preset.
    pub fn toy() -> Self {
        let base = Self {
            hidden: 16,
            latent_dim: 8,
            noise_dim: 8,
            syn_per_class: 30,
            lr: 3e-3,
            lr_critic: 3e-3,
            epochs: 60,
            batch_size: 32,
            ..Self::default()
        };
        let d = Self::default();
        Self {
            warmup_delta: d.warmup_delta.scaled(TOY_WARMUP_SCALE),
            warmup_gamma: d.warmup_gamma.scaled(TOY_WARMUP_SCALE),
            ..base
        }
    }

    /// Toy preset with the loss weights adjusted to `kind`'s objective: the
    /// shared β weighs a classifier loss in the GAN kinds but reconstruction
    /// in the VAE kinds.
    pub fn toy_for(kind: ModelKind) -> Self {
        let mut h = Self::toy();
        match kind {
            ModelKind::FClsWgan | ModelKind::LisGan | ModelKind::LsrGan => {}
            ModelKind::VaeCFlow => {}
            _ => h.beta = 1.0,
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("beta", self.beta),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("xi", self.xi),
            ("lambda_gp", self.lambda_gp),
            ("samc_margin", self.samc_margin),
        ];
        for (name, w) in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative weight, got {w}")));
            }
        }
        if !(self.sr_margin > 0.0) {
            return Err(Error::Config("sr_margin must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config("eta must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must lie in [0, 1)".into()));
        }
        let counts = [
            ("k_souls", self.k_souls),
            ("syn_per_class", self.syn_per_class),
            ("latent_dim", self.latent_dim),
            ("noise_dim", self.noise_dim),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("critic_iters", self.critic_iters),
            ("flow_blocks", self.flow_blocks),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.lr > 0.0) || !(self.lr_critic > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// One experiment's metrics. Percentages are in 0..=100, times in hours.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub model: ModelKind,
    pub task: Task,
    pub shots: Option<usize>,
    pub provenance_x: VisualProvenance,
    pub provenance_a: SemanticProvenance,
    pub z: Option<f64>,
    pub zt: Option<f64>,
    pub u: Option<f64>,
    pub s: Option<f64>,
    pub h: Option<f64>,
    pub ht: Option<f64>,
    pub per_class_acc: BTreeMap<ClassId, f64>,
    pub config_hash: String,
    pub seed: u64,
}

impl ResultRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("Z", self.z), ("U", self.u), ("S", self.s), ("H", self.h)] {
            if let Some(v) = v {
                if !(0.0..=100.0).contains(&v) {
                    return Err(Error::Invalid(format!("{name}={v} outside [0, 100]")));
                }
            }
        }
        if let (Some(u), Some(s), Some(h)) = (self.u, self.s, self.h) {
            if (u == 0.0 || s == 0.0) && h != 0.0 {
                return Err(Error::Invalid("H must be 0 when U or S is 0".into()));
            }
            if h > (u + s) / 2.0 + 1e-9 {
                return Err(Error::Invalid(format!("H={h} exceeds the arithmetic mean of U and S")));
            }
        }
        for (c, acc) in &self.per_class_acc {
            if !(0.0..=1.0).contains(acc) {
                return Err(Error::Invalid(format!("class {c} accuracy {acc} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    pub p: usize,
    pub q: usize,
    pub d_x: usize,
    pub d_a: usize,
    pub samples_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.d_x == 0 || self.d_a == 0 {
            return Err(Error::Config("synthetic dataset dimensions must be positive".into()));
        }
        if self.samples_per_class < 2 {
            return Err(Error::Config("need at least 2 samples per class".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Where an experiment reads its features, descriptions and base partition from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticDatasetSpec),
    /// Community archive pair: a feature file and a split file.
    Archive { features: PathBuf, splits: PathBuf },
    /// Feature and semantic containers plus a base-partition JSON file.
    Containers {
        features: PathBuf,
        semantics: PathBuf,
        partition: PathBuf,
        p: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSchedule {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub svm_c: f64,
}

impl Default for ClassifierSchedule {
    fn default() -> Self {
        Self {
            epochs: 25,
            lr: 1e-3,
            batch_size: 64,
            svm_c: 1.0,
        }
    }
}

impl ClassifierSchedule {
    /// Desk-scale preset: fewer rows, so more and larger steps.
    pub fn toy() -> Self {
        Self {
            epochs: 50,
            lr: 1e-2,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_id: String,
    pub model: ModelKind,
    pub task: Task,
    #[serde(default)]
    pub shots: Option<usize>,
    pub visual_provenance: VisualProvenance,
    pub semantic_provenance: SemanticProvenance,
    #[serde(default)]
    pub hyper: HyperParams,
    #[serde(default)]
    pub schedule: ClassifierSchedule,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub data: DataSource,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.task.is_few_shot(), self.shots) {
            (true, None) => return Err(Error::Config(format!("{} requires shots", self.task))),
            (false, Some(_)) => return Err(Error::Config(format!("{} takes no shots", self.task))),
            (true, Some(0)) => return Err(Error::Config("shots must be at least 1".into())),
            _ => {}
        }
        self.hyper.validate()?;
        if self.schedule.epochs == 0 || self.schedule.batch_size == 0 || !(self.schedule.lr > 0.0) {
            return Err(Error::Config("classifier schedule needs positive epochs, batch size and lr".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Stable hex digest of a configuration.
///
/// The digest is taken over the JSON value tree, whose object keys are
/// sorted, so field order in a config file does not matter.
pub fn fingerprint(config: &ExperimentConfig) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    let canonical = serde_json::to_string(&value).expect("value serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            dataset_id: "toy".into(),
            model: ModelKind::FClsWgan,
            task: Task::Gzsl,
            shots: None,
            visual_provenance: VisualProvenance::Synthetic,
            semantic_provenance: SemanticProvenance::Attributes,
            hyper: HyperParams::toy(),
            schedule: ClassifierSchedule::default(),
            seed,
            output: None,
            data: DataSource::Synthetic(SyntheticDatasetSpec {
                p: 8,
                q: 4,
                d_x: 32,
                d_a: 16,
                samples_per_class: 50,
                noise: 0.3,
                seed,
            }),
        }
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        assert_eq!(fingerprint(&cfg(1)), fingerprint(&cfg(1)));
        assert_ne!(fingerprint(&cfg(1)), fingerprint(&cfg(2)));
        let mut c = cfg(1);
        c.hyper.beta = 0.02;
        assert_ne!(fingerprint(&cfg(1)), fingerprint(&c));
    }

    #[test]
    fn fingerprint_survives_file_round_trip() {
        let c = cfg(9);
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(fingerprint(&back), fingerprint(&c));
    }

    #[test]
    fn task_names_parse_case_insensitively() {
        assert_eq!("gzsl".parse::<Task>().unwrap(), Task::Gzsl);
        assert_eq!("tf-vaegan".parse::<ModelKind>().unwrap(), ModelKind::TfVaegan);
        assert!("XSL".parse::<Task>().is_err());
    }

    #[test]
    fn meta_rejects_inconsistent_counts() {
        assert!(DatasetMeta::new("d", 0, 2, 3, 1, 1, BTreeMap::new()).is_err());
        let counts: BTreeMap<ClassId, usize> = [(1, 3), (2, 2)].into_iter().collect();
        assert!(DatasetMeta::new("d", 1, 1, 3, 3, 2, counts.clone()).is_ok());
        assert!(DatasetMeta::new("d", 1, 1, 3, 2, 3, counts).is_err());
    }

    #[test]
    fn feature_set_rejects_nan_and_length_mismatch() {
        assert!(FeatureSet::new(array![[1.0f32, f32::NAN]], vec![1], VisualProvenance::Naive, "d").is_err());
        assert!(FeatureSet::new(array![[1.0f32, 2.0]], vec![1, 2], VisualProvenance::Naive, "d").is_err());
    }

    #[test]
    fn semantic_table_rejects_duplicate_rows() {
        let a = array![[1.0f32, 0.0], [1.0, 0.0]];
        assert!(matches!(
            SemanticTable::new(a, SemanticProvenance::Original, "d"),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn result_record_checks_harmonic_bounds() {
        let mut r = ResultRecord {
            dataset: "d".into(),
            model: ModelKind::Cvae,
            task: Task::Gzsl,
            shots: None,
            provenance_x: VisualProvenance::Original,
            provenance_a: SemanticProvenance::Original,
            z: None,
            zt: None,
            u: Some(0.0),
            s: Some(50.0),
            h: Some(0.0),
            ht: Some(0.0),
            per_class_acc: BTreeMap::new(),
            config_hash: String::new(),
            seed: 0,
        };
        assert!(r.validate().is_ok());
        r.h = Some(10.0);
        assert!(r.validate().is_err());
    }

    #[test]
    fn warmup_window_ramps_linearly() {
        let w = Window { start: 6.0, end: 22.0 };
        assert_eq!(w.ramp(0.0), 0.0);
        assert_eq!(w.ramp(14.0), 0.5);
        assert_eq!(w.ramp(30.0), 1.0);
    }
}
