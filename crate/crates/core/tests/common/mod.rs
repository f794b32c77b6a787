//! Shared fixtures and checks for the integration and acceptance targets.
#![allow(dead_code)]

pub mod tables;

use std::time::Instant;

use gasl_core::autograd::{Graph, Mat};
use gasl_core::datamodel::{
    ClassId, ClassifierSchedule, DataSource, ExperimentConfig, HyperParams, ModelKind, ResultRecord,
    SemanticProvenance, SyntheticDatasetSpec, Task, VisualProvenance,
};
use gasl_core::embeddings::semantic::{joint_objective, tokenize, TextEncoderConfig, TextEncoderState, CoreKind};
use gasl_core::embeddings::visual::{finetune_objective, ImageSet, Preprocess, ToyBackbone, VisualFinetuneConfig};
use gasl_core::generators::flow::CouplingFlow;
use gasl_core::generators::{
    self, gan, has_critic, vae, vaegan, Batch, Dims, ModelState, Objective, TrainSet,
};
use gasl_core::datamodel::SemanticTable;
use gasl_core::harness::{make_synthetic_dataset, run_experiment, Dataset};
use gasl_core::nn::{ParamId, ParamSet};
use gasl_core::rng::{child_rng, normal_matrix};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

/// Small enough for dense finite differences.
pub fn tiny_spec() -> SyntheticDatasetSpec {
    SyntheticDatasetSpec {
        p: 4,
        q: 2,
        d_x: 6,
        d_a: 4,
        samples_per_class: 12,
        noise: 0.3,
        seed: 2,
    }
}

pub fn tiny_hyper(kind: ModelKind) -> HyperParams {
    HyperParams {
        hidden: 5,
        latent_dim: 3,
        noise_dim: 3,
        k_souls: 2,
        syn_per_class: 4,
        batch_size: 8,
        epochs: 1,
        flow_blocks: 2,
        cf_pool_cap: 2,
        reference_classifier_epochs: 3,
        ..HyperParams::toy_for(kind)
    }
}

/// Seen-class training rows of a dataset, with descriptions for all classes.
pub fn seen_trainset(data: &Dataset) -> TrainSet {
    let all = data.meta.all_classes();
    let x = data.features.to_f64().select(ndarray::Axis(0), &data.base.train_seen);
    let y: Vec<ClassId> = data.base.train_seen.iter().map(|&i| data.features.y[i]).collect();
    let sem = data.semantics.rows_f64(&all).unwrap();
    TrainSet::new(x, y, sem, &all).unwrap()
}

/// A state trained for one epoch so every auxiliary quantity is populated.
pub fn prepared_state(kind: ModelKind, ts: &TrainSet, seed: u64) -> ModelState {
    let n_classes = ts.ctx.with_data.len() + ts.ctx.without_data.len();
    let dims = Dims {
        d_x: ts.x.ncols(),
        d_a: ts.ctx.semantics.ncols(),
        n_classes,
    };
    let mut st = ModelState::new(kind, dims, tiny_hyper(kind), seed).unwrap();
    generators::train(&mut st, ts, seed).unwrap();
    st
}

pub fn random_batch<'a>(ts: &'a TrainSet, n: usize, epoch: usize, rng: &mut impl Rng) -> Batch<'a> {
    let mut idx: Vec<usize> = (0..ts.y.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n);
    Batch {
        x: ts.x.select(ndarray::Axis(0), &idx),
        y: idx.iter().map(|&i| ts.y[i]).collect(),
        epoch,
        ctx: &ts.ctx,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

type Base = fn(&ModelState, &Batch, u64) -> f64;

fn total(o: gasl_core::error::Result<Objective>) -> f64 {
    o.unwrap().value()
}

fn wgan(st: &ModelState, b: &Batch, s: u64) -> f64 {
    total(gan::wgan_objective(st, b, s))
}

fn fclswgan(st: &ModelState, b: &Batch, s: u64) -> f64 {
    total(gan::fclswgan_objective(&st.project(ModelKind::FClsWgan).unwrap(), b, s))
}

fn two_vaes(st: &ModelState, b: &Batch, s: u64) -> f64 {
    total(vae::vae_x_objective(st, b, s)) + total(vae::vae_a_objective(st, b, s))
}

fn plain_vaegan(st: &ModelState, b: &Batch, s: u64) -> f64 {
    total(vaegan::fvaegand2_objective(&st.project(ModelKind::FVaeganD2).unwrap(), b, s))
}

/// Composite kinds, how to zero their novel weights, and their base objective.
pub fn lattice_edges() -> Vec<(ModelKind, fn(&mut HyperParams), Base, &'static str)> {
    vec![
        (ModelKind::FClsWgan, |h| h.beta = 0.0, wgan as Base, "WGAN"),
        (
            ModelKind::LisGan,
            |h| {
                h.delta = 0.0;
                h.gamma = 0.0
            },
            fclswgan,
            "f-CLSWGAN",
        ),
        (
            ModelKind::LsrGan,
            |h| {
                h.delta = 0.0;
                h.gamma = 0.0
            },
            fclswgan,
            "f-CLSWGAN",
        ),
        (
            ModelKind::CadaVae,
            |h| {
                h.delta = 0.0;
                h.gamma = 0.0
            },
            two_vaes,
            "two VAEs",
        ),
        (ModelKind::TfVaegan, |h| h.gamma = 0.0, plain_vaegan, "VAEGAN"),
        (
            ModelKind::Free,
            |h| {
                h.gamma = 0.0;
                h.xi = 0.0
            },
            plain_vaegan,
            "VAEGAN",
        ),
        (ModelKind::GcmCf, |h| h.gamma = 0.0, plain_vaegan, "VAEGAN"),
    ]
}

/// Largest relative gap between each zeroed composite and its base over
/// `batches` random batches.
pub fn lattice_gaps(batches: usize) -> Vec<(ModelKind, &'static str, f64)> {
    let data = make_synthetic_dataset(&tiny_spec()).unwrap();
    let ts = seen_trainset(&data);
    lattice_edges()
        .into_iter()
        .map(|(kind, zero, base, name)| {
            let mut st = prepared_state(kind, &ts, 5);
            zero(&mut st.hyper);
            let mut rng = child_rng(11, &format!("lattice/{kind}"));
            let mut worst: f64 = 0.0;
            for k in 0..batches {
                let b = random_batch(&ts, 8, rng.gen_range(0..200), &mut rng);
                let seed = 1000 + k as u64;
                let composite = total(generators::generator_objective(&st, &b, seed));
                worst = worst.max(rel(composite, base(&st, &b, seed)));
            }
            (kind, name, worst)
        })
        .collect()
}

/// Result of comparing analytic and central-difference derivatives.
#[derive(Debug, Default, Clone)]
pub struct GradCheck {
    pub label: String,
    pub compared: usize,
    /// Entries skipped because two step sizes disagree (a kink is near).
    pub near_kink: usize,
    pub worst: f64,
}

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-4;

fn fd_rel(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Up to `per` spread-out flat indices of a matrix with `len` entries.
fn probe(len: usize, per: usize) -> Vec<usize> {
    if len <= per {
        (0..len).collect()
    } else {
        (0..per).map(|k| k * len / per + (len / per) / 2).collect()
    }
}

/// Compares the tape gradient of a scalar with central differences of
/// `value` on a few entries of each parameter in `ids`. `analytic` returns the tape,
/// the parameter binding and the scalar's variable.
fn check_params(
    label: String,
    ps: &ParamSet,
    ids: &[ParamId],
    per: usize,
    analytic: impl Fn(&ParamSet) -> (Graph, gasl_core::nn::Bound, gasl_core::autograd::Var),
    value: impl Fn(&ParamSet) -> f64,
) -> GradCheck {
    let (g, bound, v) = analytic(ps);
    let grads = g.backward(v);
    let mut out = GradCheck {
        label,
        ..Default::default()
    };
    for &id in ids {
        let m = ps.get(id);
        let ga = grads.get(bound.var(id)).cloned().unwrap_or_else(|| Mat::zeros(m.dim()));
        for flat in probe(m.len(), per) {
            let (r, c) = (flat / m.ncols(), flat % m.ncols());
            let fd = |h: f64| {
                let mut p = ps.clone();
                p.get_mut(id)[[r, c]] += h;
                let up = value(&p);
                let mut q = ps.clone();
                q.get_mut(id)[[r, c]] -= h;
                (up - value(&q)) / (2.0 * h)
            };
            let n1 = fd(FD_STEP);
            let n2 = fd(2.0 * FD_STEP);
            if fd_rel(n1, n2) > 1e-5 {
                out.near_kink += 1;
                continue;
            }
            out.compared += 1;
            out.worst = out.worst.max(fd_rel(ga[[r, c]], n1));
        }
    }
    out
}

fn with_params(st: &ModelState, ps: &ParamSet) -> ModelState {
    let mut s = st.clone();
    s.params = ps.clone();
    s
}

/// Gradient checks for every weighted term of every objective.
pub fn gradient_suite() -> Vec<GradCheck> {
    let data = make_synthetic_dataset(&tiny_spec()).unwrap();
    let ts = seen_trainset(&data);
    let mut out = Vec::new();
    for &kind in ModelKind::ALL {
        let st = prepared_state(kind, &ts, 3);
        let mut rng = child_rng(4, &format!("grad/{kind}"));
        // Late epoch so warm-up weights are active.
        let batch = random_batch(&ts, 6, 1000, &mut rng);
        type Obj = fn(&ModelState, &Batch, u64) -> gasl_core::error::Result<Objective>;
        let mut objectives: Vec<(&str, Obj)> = vec![("generator", generators::generator_objective)];
        if has_critic(kind) {
            objectives.push(("critic", gan::critic_objective));
        }
        if kind == ModelKind::GcmCf {
            objectives.push(("decoder", |st, b, _| vaegan::decoder_cycle_objective(st, b)));
        }
        for (side, obj) in objectives {
            // The critic step sees generated features as data.
            let ids: Vec<ParamId> = if side == "critic" { st.critic_ids() } else { st.params.ids().collect() };
            let names: Vec<String> = obj(&st, &batch, 7).unwrap().terms.iter().map(|t| t.name.clone()).collect();
            for name in names {
                let n2 = name.clone();
                out.push(check_params(
                    format!("{kind} {side} {name}"),
                    &st.params,
                    &ids,
                    3,
                    |ps| {
                        let o = obj(&with_params(&st, ps), &batch, 7).unwrap();
                        let v = o.terms.iter().find(|t| t.name == n2).unwrap().var;
                        (o.graph, o.bound, v)
                    },
                    |ps| obj(&with_params(&st, ps), &batch, 7).unwrap().term(&name).unwrap(),
                ));
            }
        }
    }
    out.extend(embedding_gradients());
    out
}

fn embedding_gradients() -> Vec<GradCheck> {
    let mut out = Vec::new();

    // Visual finetuning: cross-entropy and the semantic regularizer.
    let mut bb = ToyBackbone::new(Preprocess { resize: 8, crop: 8 }, 1, 6, 1).unwrap();
    let mut rng = child_rng(9, "grad/visual");
    let images = ImageSet {
        x: normal_matrix(&mut rng, 6, 3, 1.0),
        y: vec![1, 2, 3, 1, 2, 3],
        files: Vec::new(),
    };
    let table = SemanticTable::from_f64(&normal_matrix(&mut rng, 3, 4, 1.0), SemanticProvenance::Attributes, "g").unwrap();
    let cfg = VisualFinetuneConfig::default();
    let seen = [1, 2, 3];
    // Materialize head and projector, then freeze the parameter layout.
    finetune_objective(&mut bb, &images, &seen, Some(&table), &cfg).unwrap();
    let base = bb.clone();
    for term in ["ce", "se"] {
        let eval = |ps: &ParamSet| {
            let mut b = base.clone();
            *gasl_core::embeddings::visual::Backbone::params_mut(&mut b) = ps.clone();
            let s = finetune_objective(&mut b, &images, &seen, Some(&table), &cfg).unwrap();
            let v = if term == "ce" { s.ce } else { s.se.unwrap() };
            (s.graph, s.bound, v)
        };
        out.push(check_params(
            format!("visual finetune {term}"),
            gasl_core::embeddings::visual::Backbone::params(&base),
            &gasl_core::embeddings::visual::Backbone::params(&base).ids().collect::<Vec<_>>(),
            3,
            eval,
            |ps| {
                let (g, _, v) = eval(ps);
                g.item(v)
            },
        ));
    }

    // Text encoder: both embedding directions, for both recurrent cores.
    for core in [CoreKind::GruLike, CoreKind::LstmLike] {
        let tcfg = TextEncoderConfig {
            core,
            hidden: 4,
            embed_dim: 3,
            max_len: 8,
            seed: 2,
            ..Default::default()
        };
        let enc = TextEncoderState::new(&tcfg, 5).unwrap();
        let x = normal_matrix(&mut child_rng(3, "grad/text"), 4, 5, 1.0);
        let texts: Vec<Vec<usize>> = ["red", "blue sky", "re", "green"].iter().map(|t| tokenize(t, 8)).collect();
        let labels = [1, 2, 1, 3];
        for (name, pick) in [("visual-anchored", 0), ("text-anchored", 1)] {
            let eval = |ps: &ParamSet| {
                let mut e = enc.clone();
                e.params = ps.clone();
                let s = joint_objective(&e, &x, &texts, &labels, 0.5).unwrap();
                let v = if pick == 0 { s.visual_anchored } else { s.text_anchored };
                (s.graph, s.bound, v)
            };
            out.push(check_params(
                format!("text encoder {core:?} {name}"),
                &enc.params,
                &enc.params.ids().collect::<Vec<_>>(),
                2,
                eval,
                |ps| {
                    let (g, _, v) = eval(ps);
                    g.item(v)
                },
            ));
        }
    }
    out
}

/// `(max |x − inverse(forward(x))|, max relative log-det gap)` for a flow
/// with random weights on `d` coordinates.
pub fn flow_errors(d: usize, seed: u64) -> (f64, f64) {
    let mut ps = ParamSet::new();
    let mut rng = child_rng(seed, &format!("flow/{d}"));
    let flow = CouplingFlow::new(&mut ps, "flow", d, 3, 8, 4, &mut rng).unwrap();
    for id in ps.ids().collect::<Vec<_>>() {
        let (r, c) = ps.get(id).dim();
        *ps.get_mut(id) = normal_matrix(&mut rng, r, c, 0.4);
    }
    let x = normal_matrix(&mut rng, 5, d, 1.0);
    let a = normal_matrix(&mut rng, 5, 3, 1.0);
    let (h, logdet) = flow.eval_forward(&ps, &x, &a);
    let back = flow.eval_inverse(&ps, &h, &a).unwrap();
    let inv_err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..x.nrows() {
        let xi = x.row(i).to_owned().insert_axis(ndarray::Axis(0));
        let ai = a.row(i).to_owned().insert_axis(ndarray::Axis(0));
        let mut jac = DMatrix::<f64>::zeros(d, d);
        for k in 0..d {
            let mut up = xi.clone();
            up[[0, k]] += eps;
            let mut dn = xi.clone();
            dn[[0, k]] -= eps;
            let (hu, _) = flow.eval_forward(&ps, &up, &ai);
            let (hd, _) = flow.eval_forward(&ps, &dn, &ai);
            for j in 0..d {
                jac[(j, k)] = (hu[[0, j]] - hd[[0, j]]) / (2.0 * eps);
            }
        }
        let dense = jac.determinant().abs().ln();
        let analytic = logdet[[i, 0]];
        worst = worst.max((analytic - dense).abs() / dense.abs().max(1.0));
    }
    (inv_err, worst)
}

/// The desk-scale benchmark dataset.
pub fn smoke_spec() -> SyntheticDatasetSpec {
    SyntheticDatasetSpec {
        p: 8,
        q: 4,
        d_x: 32,
        d_a: 16,
        samples_per_class: 50,
        noise: 0.5,
        seed: 0,
    }
}

pub fn smoke_config(model: ModelKind, task: Task, spec: &SyntheticDatasetSpec) -> ExperimentConfig {
    ExperimentConfig {
        dataset_id: "synthetic".into(),
        model,
        task,
        shots: None,
        visual_provenance: VisualProvenance::Synthetic,
        semantic_provenance: SemanticProvenance::Attributes,
        hyper: HyperParams::toy_for(model),
        schedule: ClassifierSchedule::toy(),
        seed: 1,
        output: None,
        data: DataSource::Synthetic(spec.clone()),
    }
}

/// ZSL and GZSL records of every model, and the elapsed seconds.
pub fn smoke_benchmark() -> (Vec<(ModelKind, ResultRecord, ResultRecord)>, f64) {
    let spec = smoke_spec();
    let data = make_synthetic_dataset(&spec).unwrap();
    let start = Instant::now();
    let rows = ModelKind::ALL
        .iter()
        .map(|&m| {
            let z = run_experiment(&smoke_config(m, Task::Zsl, &spec), &data).unwrap();
            let h = run_experiment(&smoke_config(m, Task::Gzsl, &spec), &data).unwrap();
            (m, z, h)
        })
        .collect();
    (rows, start.elapsed().as_secs_f64())
}

/// Serialized headline metrics of a record.
pub fn metric_bytes(r: &ResultRecord) -> String {
    serde_json::to_string(&(r.z, r.u, r.s, r.h, &r.per_class_acc)).unwrap()
}
