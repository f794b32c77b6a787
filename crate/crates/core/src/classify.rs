//! Final-stage classifiers, training-set composition and split scoring.

use std::collections::{BTreeMap, HashSet};

use ndarray::{Axis, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::datamodel::{ClassId, ClassifierSchedule, FeatureSet, ModelKind, Task, VisualProvenance};
use crate::error::{Error, Result};
use crate::generators::{LatentBatch, ModelState};
use crate::metrics::{harmonic_mean, per_class_top1};
use crate::nn::{Adam, ParamSet};
use crate::rng::child_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[serde(rename = "softmax_1layer")]
    Softmax,
    Svm,
    Cascade,
}

/// The classifier each model family is evaluated with.
pub fn classifier_for(kind: ModelKind) -> ClassifierKind {
    match kind {
        ModelKind::Cvae => ClassifierKind::Svm,
        ModelKind::LisGan => ClassifierKind::Cascade,
        _ => ClassifierKind::Softmax,
    }
}

/// Affine scorer `x·W + b`; column `j` scores output `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Mat,
    pub b: Mat,
}

impl LinearModel {
    pub fn scores(&self, x: &Mat) -> Mat {
        x.dot(&self.w) + &self.b
    }

    /// Row-wise argmax, lowest index on ties.
    pub fn argmax(&self, x: &Mat) -> Vec<usize> {
        argmax_rows(&self.scores(x))
    }
}

pub fn argmax_rows(s: &Mat) -> Vec<usize> {
    s.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn softmax_rows(s: &mut Mat) {
    for mut r in s.rows_mut() {
        let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - m).exp());
        let z = r.sum();
        r /= z;
    }
}

fn distinct_rows(x: &Mat) -> usize {
    let set: HashSet<Vec<u64>> = x.rows().into_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    set.len()
}

/// Cross-entropy linear classifier fitted with full-batch Adam.
///
/// An epoch is `⌈distinct rows / batch_size⌉` steps, so replicating the
/// whole training set leaves the trajectory unchanged.
pub fn fit_softmax(x: &Mat, targets: &[usize], n_out: usize, sched: &ClassifierSchedule, seed: u64) -> Result<LinearModel> {
    fit_softmax_with(x, targets, n_out, sched, seed, |_, _| Ok(()))
}

pub fn fit_softmax_with(
    x: &Mat,
    targets: &[usize],
    n_out: usize,
    sched: &ClassifierSchedule,
    _seed: u64,
    mut on_epoch: impl FnMut(usize, &LinearModel) -> Result<()>,
) -> Result<LinearModel> {
    if x.nrows() == 0 || x.nrows() != targets.len() {
        return Err(Error::Invalid(format!("{} rows for {} targets", x.nrows(), targets.len())));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= n_out) {
        return Err(Error::Invalid(format!("target {t} outside {n_out} outputs")));
    }
    let n = x.nrows() as f64;
    let mut onehot = Mat::zeros((x.nrows(), n_out));
    for (i, &t) in targets.iter().enumerate() {
        onehot[[i, t]] = 1.0;
    }
    let mut ps = ParamSet::new();
    let w = ps.add("w", Mat::zeros((x.ncols(), n_out)));
    let b = ps.add("b", Mat::zeros((1, n_out)));
    let mut opt = Adam::new(sched.lr);
    let steps = distinct_rows(x).div_ceil(sched.batch_size.max(1)).max(1);
    let xt = x.t();
    for epoch in 0..sched.epochs {
        for _ in 0..steps {
            let mut p = x.dot(ps.get(w)) + ps.get(b);
            softmax_rows(&mut p);
            let gmat = (p - &onehot) / n;
            let gw = xt.dot(&gmat);
            let gb = gmat.sum_axis(Axis(0)).insert_axis(Axis(0));
            opt.step_direct(&mut ps, &[(w, gw), (b, gb)]);
        }
        let model = LinearModel {
            w: ps.get(w).clone(),
            b: ps.get(b).clone(),
        };
        on_epoch(epoch, &model)?;
    }
    if !ps.all_finite() {
        return Err(Error::Numerical("softmax weights became non-finite".into()));
    }
    Ok(LinearModel {
        w: ps.get(w).clone(),
        b: ps.get(b).clone(),
    })
}

const SVM_PASSES: usize = 1000;
const SVM_TOL: f64 = 1e-6;

/// One-vs-rest linear SVM minimizing `½‖w‖² + C·mean hinge` per output by
/// dual coordinate descent. The bias is the weight of a constant feature.
pub fn fit_svm(x: &Mat, targets: &[usize], n_out: usize, c: f64, seed: u64) -> Result<LinearModel> {
    if x.nrows() != targets.len() || x.nrows() == 0 {
        return Err(Error::Invalid(format!("{} rows for {} targets", x.nrows(), targets.len())));
    }
    let present: HashSet<usize> = targets.iter().copied().collect();
    if present.len() < 2 {
        return Err(Error::DegenerateInput("SVM needs at least two classes".into()));
    }
    if !(c > 0.0) {
        return Err(Error::Config("SVM regularization must be positive".into()));
    }
    let (n, d) = x.dim();
    // Intercept feature at the typical row scale so the bias is not starved by the penalty.
    let bias_feat = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1.0);
    // Hinge losses are averaged, so C is per dataset rather than per sample.
    let c = c / n as f64;
    let qii: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r) + bias_feat * bias_feat).collect();
    let mut w = Mat::zeros((d, n_out));
    let mut b = Mat::zeros((1, n_out));
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..n_out {
        if !present.contains(&k) {
            b[[0, k]] = -1.0;
            continue;
        }
        let yk: Vec<f64> = targets.iter().map(|&t| if t == k { 1.0 } else { -1.0 }).collect();
        let mut alpha = vec![0.0; n];
        let mut wk = ndarray::Array1::<f64>::zeros(d);
        let mut bk = 0.0;
        let mut rng = child_rng(seed, &format!("svm/{k}"));
        for _ in 0..SVM_PASSES {
            order.shuffle(&mut rng);
            let mut max_step: f64 = 0.0;
            for &i in &order {
                let xi = x.row(i);
                let grad = yk[i] * (xi.dot(&wk) + bk * bias_feat) - 1.0;
                let pg = if alpha[i] == 0.0 {
                    grad.min(0.0)
                } else if alpha[i] == c {
                    grad.max(0.0)
                } else {
                    grad
                };
                if pg.abs() > 1e-12 {
                    let old = alpha[i];
                    alpha[i] = (old - grad / qii[i]).clamp(0.0, c);
                    let delta = (alpha[i] - old) * yk[i];
                    wk.scaled_add(delta, &xi);
                    bk += delta * bias_feat;
                    max_step = max_step.max((alpha[i] - old).abs());
                }
            }
            if max_step < SVM_TOL * c {
                break;
            }
        }
        w.column_mut(k).assign(&wk);
        b[[0, k]] = bk * bias_feat;
    }
    Ok(LinearModel { w, b })
}

/// Class-id scoped linear classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scoped {
    pub scope: Vec<ClassId>,
    pub model: LinearModel,
}

impl Scoped {
    pub fn predict(&self, x: &Mat) -> Vec<ClassId> {
        self.model.argmax(x).into_iter().map(|j| self.scope[j]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    Flat(Scoped),
    /// Coarse classifier over seen then unseen classes whose pooled class
    /// probabilities pick the branch, followed by a per-branch classifier.
    Cascade {
        router: Scoped,
        seen: Scoped,
        unseen: Scoped,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBundle {
    pub kind: ClassifierKind,
    pub predictor: Predictor,
}

impl ClassifierBundle {
    pub fn scope(&self) -> Vec<ClassId> {
        match &self.predictor {
            Predictor::Flat(s) => s.scope.clone(),
            Predictor::Cascade { seen, unseen, .. } => seen.scope.iter().chain(&unseen.scope).copied().collect(),
        }
    }

    pub fn predict(&self, x: &Mat) -> Vec<ClassId> {
        match &self.predictor {
            Predictor::Flat(s) => s.predict(x),
            Predictor::Cascade { router, seen, unseen } => {
                let to_seen = route_to_seen(&router.model.scores(x), seen.scope.len());
                let ps = seen.predict(x);
                let pu = unseen.predict(x);
                to_seen.iter().enumerate().map(|(i, &s)| if s { ps[i] } else { pu[i] }).collect()
            }
        }
    }
}

/// Binary softmax over the log-sum-exp of the first `n_seen` scores and of
/// the rest; ties go to the seen branch.
pub fn route_to_seen(scores: &Mat, n_seen: usize) -> Vec<bool> {
    let lse = |v: ndarray::ArrayView1<f64>| {
        let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        m + v.mapv(|t| (t - m).exp()).sum().ln()
    };
    scores
        .rows()
        .into_iter()
        .map(|r| lse(r.slice(ndarray::s![..n_seen])) >= lse(r.slice(ndarray::s![n_seen..])))
        .collect()
}

/// Routes each row to one of two classifiers by `to_first`.
pub fn predict_routed(x: &Mat, to_first: &[bool], first: &ClassifierBundle, second: &ClassifierBundle) -> Vec<ClassId> {
    let a = first.predict(x);
    let b = second.predict(x);
    to_first.iter().enumerate().map(|(i, &f)| if f { a[i] } else { b[i] }).collect()
}

fn scope_targets(y: &[ClassId], scope: &[ClassId]) -> Result<Vec<usize>> {
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

fn fit_scoped(kind: ClassifierKind, x: &Mat, y: &[ClassId], scope: &[ClassId], sched: &ClassifierSchedule, seed: u64) -> Result<Scoped> {
    let t = scope_targets(y, scope)?;
    let model = match kind {
        ClassifierKind::Svm => fit_svm(x, &t, scope.len(), sched.svm_c, seed)?,
        _ => fit_softmax(x, &t, scope.len(), sched, seed)?,
    };
    Ok(Scoped {
        scope: scope.to_vec(),
        model,
    })
}

/// Trains a flat classifier over `scope`. Cascades need the seen/unseen
/// split; use [`train_cascade`].
pub fn train_classifier(
    kind: ClassifierKind,
    x: &Mat,
    y: &[ClassId],
    scope: &[ClassId],
    sched: &ClassifierSchedule,
    seed: u64,
) -> Result<ClassifierBundle> {
    if kind == ClassifierKind::Cascade {
        return Err(Error::Config("cascade classifiers need a seen/unseen split".into()));
    }
    Ok(ClassifierBundle {
        kind,
        predictor: Predictor::Flat(fit_scoped(kind, x, y, scope, sched, seed)?),
    })
}

pub fn train_cascade(
    x: &Mat,
    y: &[ClassId],
    seen: &[ClassId],
    unseen: &[ClassId],
    sched: &ClassifierSchedule,
    seed: u64,
) -> Result<ClassifierBundle> {
    let all: Vec<ClassId> = seen.iter().chain(unseen).copied().collect();
    let router = fit_scoped(
        ClassifierKind::Softmax,
        x,
        y,
        &all,
        sched,
        crate::rng::derive_seed(seed, "router"),
    )?;
    let branch = |scope: &[ClassId], name: &str| -> Result<Scoped> {
        let set: HashSet<ClassId> = scope.iter().copied().collect();
        let idx: Vec<usize> = (0..y.len()).filter(|&i| set.contains(&y[i])).collect();
        if idx.is_empty() {
            return Err(Error::Invalid(format!("no training rows for the {name} branch")));
        }
        let yb: Vec<ClassId> = idx.iter().map(|&i| y[i]).collect();
        fit_scoped(
            ClassifierKind::Softmax,
            &x.select(Axis(0), &idx),
            &yb,
            scope,
            sched,
            crate::rng::derive_seed(seed, name),
        )
    };
    Ok(ClassifierBundle {
        kind: ClassifierKind::Cascade,
        predictor: Predictor::Cascade {
            router,
            seen: branch(seen, "seen")?,
            unseen: branch(unseen, "unseen")?,
        },
    })
}

/// A block of training rows with its optional auxiliary latent features.
#[derive(Clone, Copy, Debug)]
pub struct Piece<'a> {
    pub features: &'a FeatureSet,
    pub latents: Option<&'a LatentBatch>,
}

/// Classifier-side representation of a block of rows for `kind`.
pub fn view(kind: ModelKind, piece: Piece) -> Result<Mat> {
    let x = piece.features.to_f64();
    let need = || Error::Config(format!("{kind} classifier input needs latent features"));
    match kind {
        ModelKind::CadaVae => Ok(piece.latents.ok_or_else(need)?.h.clone()),
        ModelKind::TfVaegan | ModelKind::Free | ModelKind::GcmCf => {
            let h = &piece.latents.ok_or_else(need)?.h;
            if h.nrows() != x.nrows() {
                return Err(Error::Shape(format!("{} latent rows for {} features", h.nrows(), x.nrows())));
            }
            ndarray::concatenate(Axis(1), &[x.view(), h.view()]).map_err(|e| Error::Shape(e.to_string()))
        }
        _ => Ok(x),
    }
}

/// Representation of real features (e.g. test rows) for `state`'s classifier.
pub fn real_view(state: &ModelState, x: &Mat) -> Result<Mat> {
    let lat = state.real_latents(x)?;
    let fs = FeatureSet::from_f64(x, vec![1; x.nrows()], VisualProvenance::Original, String::new())?;
    view(
        state.kind,
        Piece {
            features: &fs,
            latents: lat.as_ref(),
        },
    )
}

/// Inputs to [`compose_training_set`].
#[derive(Clone, Copy, Debug)]
pub struct Composition<'a> {
    pub real_seen: Option<Piece<'a>>,
    pub real_unseen: Option<Piece<'a>>,
    pub synthetic_seen: Option<Piece<'a>>,
    pub synthetic_unseen: Piece<'a>,
}

/// Classifier training rows for `kind` on `task`.
pub fn compose_training_set(kind: ModelKind, task: Task, parts: Composition) -> Result<(Mat, Vec<ClassId>)> {
    let mut blocks: Vec<Piece> = Vec::new();
    if task.is_generalized() {
        if kind == ModelKind::Cvae {
            blocks.push(
                parts
                    .synthetic_seen
                    .ok_or_else(|| Error::Config("CVAE needs synthetic seen features for generalized tasks".into()))?,
            );
        } else {
            blocks.push(
                parts
                    .real_seen
                    .ok_or_else(|| Error::Config("generalized tasks need real seen features".into()))?,
            );
        }
    }
    blocks.push(parts.synthetic_unseen);
    if task.has_unseen_shots() {
        blocks.push(
            parts
                .real_unseen
                .ok_or_else(|| Error::Config(format!("{task} needs the real few-shot unseen features")))?,
        );
    }
    let mut mats = Vec::new();
    let mut y = Vec::new();
    for b in blocks {
        mats.push(view(kind, b)?);
        y.extend_from_slice(&b.features.y);
    }
    let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((x, y))
}

/// Accuracies of one evaluation, percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub z: Option<f64>,
    pub u: Option<f64>,
    pub s: Option<f64>,
    pub h: Option<f64>,
}

/// Scores predictions on the test split of `task`: Z over the unseen scope
/// for conventional tasks, U, S and H for generalized ones.
pub fn score(task: Task, preds: &[ClassId], labels: &[ClassId], seen: &[ClassId], unseen: &[ClassId]) -> Result<Scores> {
    if task.is_generalized() {
        let seen_set: HashSet<ClassId> = seen.iter().copied().collect();
        if !labels.iter().any(|c| seen_set.contains(c)) {
            return Err(Error::Eval("generalized evaluation without seen test samples".into()));
        }
        let u = per_class_top1(preds, labels, unseen)?;
        let s = per_class_top1(preds, labels, seen)?;
        Ok(Scores {
            z: None,
            u: Some(u),
            s: Some(s),
            h: Some(harmonic_mean(u, s)),
        })
    } else {
        Ok(Scores {
            z: Some(per_class_top1(preds, labels, unseen)?),
            u: None,
            s: None,
            h: None,
        })
    }
}

/// Largest absolute entry-wise difference of two score matrices.
pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    Zip::from(a).and(b).fold(0.0f64, |m, x, y| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn separable() -> (Mat, Vec<ClassId>) {
        (
            array![[2.0, 0.1], [1.5, -0.2], [1.8, 0.3], [-2.0, 0.0], [-1.4, 0.4], [-1.7, -0.3]],
            vec![1, 1, 1, 2, 2, 2],
        )
    }

    fn sched() -> ClassifierSchedule {
        ClassifierSchedule {
            epochs: 50,
            lr: 0.05,
            ..ClassifierSchedule::default()
        }
    }

    #[test]
    fn every_kind_separates_a_separable_toy() {
        let (x, y) = separable();
        for kind in [ClassifierKind::Softmax, ClassifierKind::Svm] {
            let b = train_classifier(kind, &x, &y, &[1, 2], &sched(), 0).unwrap();
            assert_eq!(b.predict(&x), y, "{kind:?}");
        }
        let b = train_cascade(&x, &y, &[1], &[2], &sched(), 0).unwrap();
        assert_eq!(b.predict(&x), y);
    }

    #[test]
    fn replicated_data_gives_the_same_softmax() {
        let (x, y) = separable();
        let t = scope_targets(&y, &[1, 2]).unwrap();
        let a = fit_softmax(&x, &t, 2, &sched(), 0).unwrap();
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let t2: Vec<usize> = t.iter().chain(&t).copied().collect();
        let b = fit_softmax(&x2, &t2, 2, &sched(), 0).unwrap();
        assert!(max_abs_diff(&a.scores(&x), &b.scores(&x)) < 1e-9);
        assert_eq!(a.argmax(&x), b.argmax(&x));
    }

    #[test]
    fn single_class_svm_is_degenerate() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(fit_svm(&x, &[0, 0], 2, 1.0, 0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn generalized_scoring_needs_seen_samples() {
        let err = score(Task::Gzsl, &[3], &[3], &[1], &[3]).unwrap_err();
        assert!(matches!(err, Error::Eval(_)));
        let s = score(Task::Gzsl, &[1, 3, 3], &[1, 3, 1], &[1], &[3]).unwrap();
        assert_eq!(s.u, Some(100.0));
        assert_eq!(s.s, Some(50.0));
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        assert_eq!(argmax_rows(&array![[1.0, 1.0, 0.5]]), vec![0]);
    }
}
