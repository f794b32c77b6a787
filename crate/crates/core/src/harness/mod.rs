//! Experiment orchestration: data loading, the train → synthesize →
//! classify → evaluate pipeline, persistence and reporting.

pub mod ingest;
pub mod mat5;
pub mod report;
pub mod store;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use log::info;

use crate::autograd::Mat;
use crate::classify::{
    classifier_for, compose_training_set, real_view, score, train_cascade, train_classifier, fit_softmax_with,
    ClassifierBundle, ClassifierKind, Composition, Piece, Predictor, Scoped, Scores,
};
use crate::datamodel::{
    fingerprint, BasePartition, ClassId, DataSource, DatasetMeta, ExperimentConfig, FeatureSet, ModelKind,
    ResultRecord, SemanticTable, SplitSpec,
};
use crate::error::{Error, Result};
use crate::generators::vaegan::{calibrate_gate_margin, counterfactual_seen_unseen_gate, GateRule};
use crate::generators::{synthesize_features, train, Dims, ModelState, Synthesized, TrainSet};
use crate::metrics::per_class_accuracy;
use crate::rng::derive_seed;
use crate::splits::{build_split, validate_split};

pub use synthetic::make_synthetic_dataset;

/// Environment variable overriding the results directory.
pub const RESULTS_ENV: &str = "GASL_RESULTS_DIR";

/// Features, descriptions, metadata and canonical partition of one dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: FeatureSet,
    pub semantics: SemanticTable,
    pub meta: DatasetMeta,
    pub base: BasePartition,
    /// Source file name to sha256, for ingested data.
    pub checksums: BTreeMap<String, String>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.features.check_labels(&self.meta)?;
        self.semantics.covers(&self.meta)?;
        let n = self.features.len();
        for &i in self.base.train_seen.iter().chain(&self.base.test_seen).chain(&self.base.test_unseen) {
            if i >= n {
                return Err(Error::Invalid(format!("partition index {i} out of range for {n} samples")));
            }
        }
        Ok(())
    }
}

/// Loads the dataset named by a config's data source.
pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic(spec) => make_synthetic_dataset(spec),
        DataSource::Archive { features, splits } => ingest::ingest_community_splits(features, splits),
        DataSource::Containers {
            features,
            semantics,
            partition,
            p,
        } => ingest::ingest_containers(features, semantics, partition, *p),
    }
}

/// Where results go: the environment override, else the config's output.
pub fn results_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    std::env::var_os(RESULTS_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.output.clone())
}

/// Runs one experiment and appends its record to the results store when a
/// results directory is configured. Errors carry the config fingerprint.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<ResultRecord> {
    let fp = fingerprint(cfg);
    let wrap = |e: Error| Error::Experiment {
        fingerprint: fp.clone(),
        source: Box::new(e),
    };
    let record = execute(cfg, data, &fp).map_err(wrap)?;
    if let Some(dir) = results_dir(cfg) {
        store::append(&dir, &record).map_err(wrap)?;
    }
    Ok(record)
}

/// Asserts that no test index reaches a training call.
fn protocol_guard(split: &SplitSpec, data: &Dataset) -> Result<()> {
    let report = validate_split(split, &data.features.y, &data.meta, Some(&data.base));
    if !report.all_passed() {
        let failed: Vec<String> = report.failed().iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
        return Err(Error::ProtocolViolation(failed.join("; ")));
    }
    let test: BTreeSet<usize> = split.test_indices().into_iter().collect();
    if let Some(i) = split.train_indices().iter().find(|i| test.contains(i)) {
        return Err(Error::ProtocolViolation(format!("test index {i} is in the training set")));
    }
    Ok(())
}

struct Eval<'a> {
    cfg: &'a ExperimentConfig,
    x: Mat,
    y: Vec<ClassId>,
    seen: Vec<ClassId>,
    unseen: Vec<ClassId>,
    start: Instant,
    /// Scores and elapsed hours per evaluation.
    history: Vec<(Scores, f64, Vec<ClassId>)>,
}

impl Eval<'_> {
    fn record(&mut self, preds: Vec<ClassId>) -> Result<()> {
        let s = score(self.cfg.task, &preds, &self.y, &self.seen, &self.unseen)?;
        let hours = self.start.elapsed().as_secs_f64() / 3600.0;
        self.history.push((s, hours, preds));
        Ok(())
    }

    /// Index of the evaluation with the best Z (conventional) or H (generalized),
    /// earliest on ties.
    fn best(&self) -> Result<usize> {
        let key = |s: &Scores| s.h.or(s.z).unwrap_or(0.0);
        let mut best: Option<usize> = None;
        for (i, (s, _, _)) in self.history.iter().enumerate() {
            if best.map_or(true, |b| key(s) > key(&self.history[b].0)) {
                best = Some(i);
            }
        }
        best.ok_or_else(|| Error::Eval("classifier produced no evaluation".into()))
    }
}

fn execute(cfg: &ExperimentConfig, data: &Dataset, fp: &str) -> Result<ResultRecord> {
    cfg.validate()?;
    data.validate()?;
    let seed = cfg.seed;
    let labels = &data.features.y;
    let split = build_split(&data.meta, labels, &data.base, cfg.task, cfg.shots, derive_seed(seed, "split"))?;
    protocol_guard(&split, data)?;

    let seen = data.meta.seen_classes();
    let unseen = data.meta.unseen_classes();
    let all = data.meta.all_classes();
    let x_all = data.features.to_f64();
    let train_idx = split.train_indices();
    let test_idx = split.test_indices();
    let x_train = x_all.select(ndarray::Axis(0), &train_idx);
    let y_train: Vec<ClassId> = train_idx.iter().map(|&i| labels[i]).collect();
    let semantics = data.semantics.rows_f64(&all)?;
    let trainset = TrainSet::new(x_train, y_train, semantics, &all)?;
    let dims = Dims {
        d_x: data.features.dim(),
        d_a: data.semantics.dim(),
        n_classes: all.len(),
    };

    let start = Instant::now();
    let mut state = ModelState::new(cfg.model, dims, cfg.hyper.clone(), derive_seed(seed, "model"))?;
    let log = train(&mut state, &trainset, derive_seed(seed, "train"))?;
    info!(
        "{} trained, final loss {:.4}",
        cfg.model,
        log.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );

    let n_syn = cfg.hyper.syn_per_class;
    let syn_u = synthesize_features(&state, &data.semantics, &unseen, n_syn, derive_seed(seed, "synth/unseen"))?;
    let syn_s = if cfg.task.is_generalized() && cfg.model == ModelKind::Cvae {
        Some(synthesize_features(&state, &data.semantics, &seen, n_syn, derive_seed(seed, "synth/seen"))?)
    } else {
        None
    };
    let real_seen = data.features.subset(&split.train_seen);
    let real_unseen = data.features.subset(&split.train_unseen);
    let lat_s = state.sampled_latents(&real_seen.to_f64(), derive_seed(seed, "latents/seen"))?;
    let lat_u = state.sampled_latents(&real_unseen.to_f64(), derive_seed(seed, "latents/unseen"))?;
    fn piece(s: &Synthesized) -> Piece<'_> {
        Piece {
            features: &s.features,
            latents: s.latents.as_ref(),
        }
    }
    let parts = Composition {
        real_seen: (!real_seen.is_empty()).then_some(Piece {
            features: &real_seen,
            latents: lat_s.as_ref(),
        }),
        real_unseen: (!real_unseen.is_empty()).then_some(Piece {
            features: &real_unseen,
            latents: lat_u.as_ref(),
        }),
        synthetic_seen: syn_s.as_ref().map(piece),
        synthetic_unseen: piece(&syn_u),
    };
    let (x_cls, y_cls) = compose_training_set(cfg.model, cfg.task, parts)?;
    let scope: Vec<ClassId> = if cfg.task.is_generalized() { all.clone() } else { unseen.clone() };

    let x_test_raw = x_all.select(ndarray::Axis(0), &test_idx);
    let mut eval = Eval {
        cfg,
        x: real_view(&state, &x_test_raw)?,
        y: test_idx.iter().map(|&i| labels[i]).collect(),
        seen: seen.clone(),
        unseen: unseen.clone(),
        start,
        history: Vec::new(),
    };
    let cseed = derive_seed(seed, "classifier");
    let kind = classifier_for(cfg.model);
    if cfg.model == ModelKind::GcmCf && cfg.task.is_generalized() {
        let rule = match cfg.hyper.gate_threshold {
            Some(t) => GateRule::Threshold(t),
            None => {
                let seen_a = data.semantics.rows_f64(&seen)?;
                let unseen_a = data.semantics.rows_f64(&unseen)?;
                let m = calibrate_gate_margin(&state, &real_seen.to_f64(), &syn_u.features.to_f64(), &seen_a, &unseen_a)?;
                GateRule::Relative {
                    unseen: unseen_a,
                    margin: m + cfg.hyper.gate_margin,
                }
            }
        };
        let seen_a = data.semantics.rows_f64(&seen)?;
        let route = counterfactual_seen_unseen_gate(&state, &x_test_raw, &seen_a, &rule)?;
        let pick = |scope: &[ClassId]| {
            let set: BTreeSet<ClassId> = scope.iter().copied().collect();
            let idx: Vec<usize> = (0..y_cls.len()).filter(|&i| set.contains(&y_cls[i])).collect();
            (x_cls.select(ndarray::Axis(0), &idx), idx.iter().map(|&i| y_cls[i]).collect::<Vec<_>>())
        };
        let (xs, ys) = pick(&seen);
        let seen_branch = train_classifier(ClassifierKind::Softmax, &xs, &ys, &seen, &cfg.schedule, derive_seed(cseed, "seen"))?;
        let seen_preds = seen_branch.predict(&eval.x);
        let (xu, yu) = pick(&unseen);
        let targets = targets_in(&yu, &unseen)?;
        let test_x = eval.x.clone();
        fit_softmax_with(&xu, &targets, unseen.len(), &cfg.schedule, derive_seed(cseed, "unseen"), |_, m| {
            let up: Vec<ClassId> = m.argmax(&test_x).into_iter().map(|j| unseen[j]).collect();
            let preds = route.iter().enumerate().map(|(i, &s)| if s { seen_preds[i] } else { up[i] }).collect();
            eval.record(preds)
        })?;
    } else {
        match kind {
            ClassifierKind::Softmax => {
                let targets = targets_in(&y_cls, &scope)?;
                let test_x = eval.x.clone();
                fit_softmax_with(&x_cls, &targets, scope.len(), &cfg.schedule, cseed, |_, m| {
                    let b = ClassifierBundle {
                        kind,
                        predictor: Predictor::Flat(Scoped {
                            scope: scope.clone(),
                            model: m.clone(),
                        }),
                    };
                    eval.record(b.predict(&test_x))
                })?;
            }
            ClassifierKind::Svm => {
                let b = train_classifier(kind, &x_cls, &y_cls, &scope, &cfg.schedule, cseed)?;
                let preds = b.predict(&eval.x);
                eval.record(preds)?;
            }
            ClassifierKind::Cascade => {
                let b = if cfg.task.is_generalized() {
                    train_cascade(&x_cls, &y_cls, &seen, &unseen, &cfg.schedule, cseed)?
                } else {
                    train_classifier(ClassifierKind::Softmax, &x_cls, &y_cls, &scope, &cfg.schedule, cseed)?
                };
                let preds = b.predict(&eval.x);
                eval.record(preds)?;
            }
        }
    }
    let total_hours = start.elapsed().as_secs_f64() / 3600.0;
    let best = eval.best()?;
    let (scores, hours, preds) = &eval.history[best];
    let per_class_acc = per_class_accuracy(preds, &eval.y, &scope)?;
    let generalized = cfg.task.is_generalized();
    let record = ResultRecord {
        dataset: cfg.dataset_id.clone(),
        model: cfg.model,
        task: cfg.task,
        shots: cfg.shots,
        provenance_x: cfg.visual_provenance,
        provenance_a: cfg.semantic_provenance,
        z: scores.z,
        zt: (!generalized).then_some(total_hours),
        u: scores.u,
        s: scores.s,
        h: scores.h,
        ht: generalized.then_some(*hours),
        per_class_acc,
        config_hash: fp.to_string(),
        seed,
    };
    record.validate()?;
    Ok(record)
}

fn targets_in(y: &[ClassId], scope: &[ClassId]) -> Result<Vec<usize>> {
    let index: BTreeMap<ClassId, usize> = scope.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    y.iter()
        .map(|c| {
            index
                .get(c)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("label {c} outside the classifier scope")))
        })
        .collect()
}
