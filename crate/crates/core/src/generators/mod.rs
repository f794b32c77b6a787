//! The ten generative objectives, their training loop and feature synthesis.

pub mod checkpoint;
pub mod flow;
pub mod gan;
pub mod primitives;
pub mod vae;
pub mod vaegan;

use std::collections::BTreeMap;

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::datamodel::{ClassId, FeatureSet, HyperParams, ModelKind, SemanticTable, VisualProvenance};
use crate::error::{Error, Result};
use crate::nn::{Adam, Bound, Linear, Mlp, ParamId, ParamSet};
use crate::rng::{child_rng, derive_seed, normal_matrix};

use self::flow::CouplingFlow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_x: usize,
    pub d_a: usize,
    /// Number of class ids (`p + q`); class `c` owns output column `c-1`.
    pub n_classes: usize,
}

/// Networks of one model; only those its kind needs are present.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Components {
    /// `G([z, a]) → x`.
    pub gen: Option<Mlp>,
    /// `D([x, a]) → score`.
    pub critic: Option<Mlp>,
    /// `E([x, a]) → [mu, logvar]`.
    pub enc: Option<Mlp>,
    pub enc_x: Option<Mlp>,
    pub enc_a: Option<Mlp>,
    pub dec_x: Option<Mlp>,
    pub dec_a: Option<Mlp>,
    pub flow: Option<CouplingFlow>,
    pub hcls: Option<Linear>,
    /// `Dec(x) → a`.
    pub dec: Option<Mlp>,
    /// Dec hidden layer → generator hidden layer.
    pub feedback: Option<Linear>,
    /// Dec hidden layer → centre-loss embedding.
    pub mu_head: Option<Linear>,
    pub centers: Option<ParamId>,
    /// Frozen reference classifier for the classification loss.
    pub cls_head: Option<Linear>,
}

/// Non-gradient state maintained by training.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Aux {
    pub cls_ready: bool,
    pub souls: BTreeMap<ClassId, Mat>,
    pub real_means: BTreeMap<ClassId, Vec<f64>>,
    pub ema_means: BTreeMap<ClassId, Vec<f64>>,
    pub gate_margin: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelState {
    pub kind: ModelKind,
    pub dims: Dims,
    pub hyper: HyperParams,
    pub params: ParamSet,
    pub nets: Components,
    pub aux: Aux,
    pub seed: u64,
    pub epoch: usize,
}

pub fn is_gan(kind: ModelKind) -> bool {
    matches!(kind, ModelKind::FClsWgan | ModelKind::LisGan | ModelKind::LsrGan)
}

pub fn is_vaegan(kind: ModelKind) -> bool {
    matches!(
        kind,
        ModelKind::FVaeganD2 | ModelKind::TfVaegan | ModelKind::Free | ModelKind::GcmCf
    )
}

pub fn has_critic(kind: ModelKind) -> bool {
    is_gan(kind) || is_vaegan(kind)
}

impl ModelState {
    /// Fresh state. Each network draws its initial weights from a stream named
    /// after the network, so kinds sharing a network start from equal weights.
    pub fn new(kind: ModelKind, dims: Dims, hyper: HyperParams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if dims.d_x == 0 || dims.d_a == 0 || dims.n_classes == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut ps = ParamSet::new();
        let mut nets = Components::default();
        let h = hyper.hidden;
        let l = hyper.latent_dim;
        let (d_x, d_a) = (dims.d_x, dims.d_a);
        let mlp = |ps: &mut ParamSet, name: &str, i: usize, o: usize| {
            Mlp::new(ps, name, i, h, o, &mut child_rng(seed, &format!("init/{name}")))
        };

        if is_gan(kind) {
            nets.gen = Some(mlp(&mut ps, "G", hyper.noise_dim + d_a, d_x));
            nets.critic = Some(mlp(&mut ps, "D", d_x + d_a, 1));
            nets.cls_head = Some(Linear::new(&mut ps, "cls", d_x, dims.n_classes, &mut child_rng(seed, "init/cls")));
        }
        if kind == ModelKind::Cvae || is_vaegan(kind) {
            nets.enc = Some(mlp(&mut ps, "E", d_x + d_a, 2 * l));
            nets.gen = Some(mlp(&mut ps, "G", l + d_a, d_x));
        }
        if is_vaegan(kind) {
            nets.critic = Some(mlp(&mut ps, "D", d_x + d_a, 1));
        }
        if matches!(kind, ModelKind::TfVaegan | ModelKind::Free | ModelKind::GcmCf) {
            nets.dec = Some(mlp(&mut ps, "Dec", d_x, d_a));
        }
        match kind {
            ModelKind::CadaVae => {
                nets.enc_x = Some(mlp(&mut ps, "Ex", d_x, 2 * l));
                nets.enc_a = Some(mlp(&mut ps, "Ea", d_a, 2 * l));
                nets.dec_x = Some(mlp(&mut ps, "Gx", l, d_x));
                nets.dec_a = Some(mlp(&mut ps, "Ga", l, d_a));
            }
            ModelKind::VaeCFlow => {
                nets.enc_a = Some(mlp(&mut ps, "Ea", d_a, 2 * d_x));
                nets.dec_a = Some(mlp(&mut ps, "Ga", d_x, d_a));
                nets.flow = Some(CouplingFlow::new(
                    &mut ps,
                    "flow",
                    d_x,
                    d_a,
                    h,
                    hyper.flow_blocks,
                    &mut child_rng(seed, "init/flow"),
                )?);
                nets.hcls = Some(Linear::new(&mut ps, "hcls", d_x, dims.n_classes, &mut child_rng(seed, "init/hcls")));
            }
            ModelKind::TfVaegan => {
                nets.feedback = Some(Linear::new(&mut ps, "fb", h, h, &mut child_rng(seed, "init/fb")));
            }
            ModelKind::Free => {
                nets.mu_head = Some(Linear::new(&mut ps, "mu", h, l, &mut child_rng(seed, "init/mu")));
                nets.centers = Some(ps.add("centers", Mat::zeros((dims.n_classes, l))));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            dims,
            hyper,
            params: ps,
            nets,
            aux: Aux::default(),
            seed,
            epoch: 0,
        })
    }

    /// A state of another kind that shares every same-named parameter and the
    /// auxiliary state of this one.
    pub fn project(&self, kind: ModelKind) -> Result<Self> {
        let mut out = Self::new(kind, self.dims, self.hyper.clone(), self.seed)?;
        let named = self.params.to_named();
        for id in out.params.ids().collect::<Vec<_>>() {
            if let Some(v) = named.get(out.params.name(id)) {
                *out.params.get_mut(id) = v.clone();
            }
        }
        out.aux = self.aux.clone();
        out.epoch = self.epoch;
        Ok(out)
    }

    pub(crate) fn net<'a, T>(&self, slot: &'a Option<T>, what: &str) -> Result<&'a T> {
        slot.as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no {what}", self.kind)))
    }

    /// Noise dimension fed to the generator.
    pub fn z_dim(&self) -> usize {
        if is_gan(self.kind) {
            self.hyper.noise_dim
        } else {
            self.hyper.latent_dim
        }
    }

    pub fn critic_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("D.")
    }

    /// Parameters updated by the generator-side step.
    pub fn generator_ids(&self) -> Vec<ParamId> {
        self.params
            .ids()
            .filter(|&id| {
                let n = self.params.name(id);
                !n.starts_with("D.") && !n.starts_with("cls.") && !(self.kind == ModelKind::GcmCf && n.starts_with("Dec."))
            })
            .collect()
    }
}

/// Class descriptions and class roles shared by every batch of one training run.
#[derive(Clone, Debug)]
pub struct TrainContext {
    /// One description row per class id, row `c-1` for class `c`.
    pub semantics: Mat,
    /// Classes with real training samples.
    pub with_data: Vec<ClassId>,
    /// Classes without real training samples.
    pub without_data: Vec<ClassId>,
}

impl TrainContext {
    pub fn rows(&self, classes: &[ClassId]) -> Mat {
        let idx: Vec<usize> = classes.iter().map(|&c| c as usize - 1).collect();
        self.semantics.select(ndarray::Axis(0), &idx)
    }
}

#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub x: Mat,
    pub y: Vec<ClassId>,
    pub epoch: usize,
    pub ctx: &'a TrainContext,
}

impl Batch<'_> {
    pub fn a(&self) -> Mat {
        self.ctx.rows(&self.y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub(crate) fn class_index(&self) -> Vec<usize> {
        self.y.iter().map(|&c| c as usize - 1).collect()
    }

    /// Row indices of each class present in the batch, by class id.
    pub(crate) fn groups(&self) -> BTreeMap<ClassId, Vec<usize>> {
        let mut out: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, &c) in self.y.iter().enumerate() {
            out.entry(c).or_default().push(i);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Term {
    pub name: String,
    pub weight: f64,
    pub var: Var,
}

/// A loss evaluated on the tape, ready for differentiation.
pub struct Objective {
    pub graph: Graph,
    pub bound: Bound,
    pub terms: Vec<Term>,
    /// Unweighted sub-quantities reported alongside the terms.
    pub parts: Vec<(String, Var)>,
    pub total: Var,
    /// Per-class means of generated features in this batch.
    pub class_means: BTreeMap<ClassId, Vec<f64>>,
}

impl Objective {
    pub(crate) fn assemble(mut graph: Graph, bound: Bound, terms: Vec<Term>, parts: Vec<(String, Var)>) -> Self {
        let mut total: Option<Var> = None;
        for t in &terms {
            let w = graph.scale(t.var, t.weight);
            total = Some(match total {
                None => w,
                Some(acc) => graph.add(acc, w),
            });
        }
        let total = total.unwrap_or_else(|| graph.scalar(0.0));
        Self {
            graph,
            bound,
            terms,
            parts,
            total,
            class_means: BTreeMap::new(),
        }
    }

    pub fn value(&self) -> f64 {
        self.graph.item(self.total)
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms
            .iter()
            .find(|t| t.name == name)
            .map(|t| self.graph.item(t.var))
            .or_else(|| self.parts.iter().find(|p| p.0 == name).map(|p| self.graph.item(p.1)))
    }

    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            terms: self
                .terms
                .iter()
                .map(|t| (t.name.clone(), (t.weight, self.graph.item(t.var))))
                .collect(),
            parts: self
                .parts
                .iter()
                .map(|(n, v)| (n.clone(), self.graph.item(*v)))
                .collect(),
            total: self.value(),
        }
    }
}

/// Named loss values: `terms` maps a name to `(weight, value)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: BTreeMap<String, (f64, f64)>,
    pub parts: BTreeMap<String, f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn composed(&self) -> f64 {
        self.terms.values().map(|(w, v)| w * v).sum()
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.terms.get(name).map(|t| t.1).or_else(|| self.parts.get(name).copied())
    }
}

/// Generator-side objective of the state's kind.
pub fn generator_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    match st.kind {
        ModelKind::FClsWgan => gan::fclswgan_objective(st, batch, seed),
        ModelKind::LisGan => gan::lisgan_objective(st, batch, seed),
        ModelKind::LsrGan => gan::lsrgan_objective(st, batch, seed),
        ModelKind::Cvae => vae::cvae_objective(st, batch, seed),
        ModelKind::CadaVae => vae::cadavae_objective(st, batch, seed),
        ModelKind::VaeCFlow => vae::vaecflow_objective(st, batch, seed),
        ModelKind::FVaeganD2 => vaegan::fvaegand2_objective(st, batch, seed),
        ModelKind::TfVaegan => vaegan::tfvaegan_objective(st, batch, seed),
        ModelKind::Free => vaegan::free_objective(st, batch, seed),
        ModelKind::GcmCf => vaegan::gcmcf_objective(st, batch, seed),
    }
}

/// Real and generated training samples for one model.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub x: Mat,
    pub y: Vec<ClassId>,
    pub ctx: TrainContext,
}

impl TrainSet {
    pub fn new(x: Mat, y: Vec<ClassId>, semantics: Mat, all_classes: &[ClassId]) -> Result<Self> {
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(Error::Shape(format!("{} rows vs {} labels", x.nrows(), y.len())));
        }
        let mut with: Vec<ClassId> = y.clone();
        with.sort_unstable();
        with.dedup();
        let without = all_classes.iter().copied().filter(|c| with.binary_search(c).is_err()).collect();
        Ok(Self {
            x,
            y,
            ctx: TrainContext {
                semantics,
                with_data: with,
                without_data: without,
            },
        })
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean generator-side loss per epoch.
    pub epoch_loss: Vec<f64>,
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} loss became {v}")))
    }
}

/// Trains the state in place on `data`.
pub fn train(st: &mut ModelState, data: &TrainSet, seed: u64) -> Result<TrainLog> {
    if st.hyper.transductive {
        return Err(Error::Unsupported("transductive training".into()));
    }
    prepare(st, data, derive_seed(seed, "prepare"))?;
    let gan_like = has_critic(st.kind);
    let (b1, b2) = if gan_like { (0.5, 0.999) } else { (0.9, 0.999) };
    let mut g_opt = Adam::with_betas(st.hyper.lr, b1, b2);
    let mut d_opt = Adam::with_betas(st.hyper.lr_critic, b1, b2);
    let mut dec_opt = Adam::with_betas(st.hyper.lr, b1, b2);
    let g_ids = st.generator_ids();
    let d_ids = st.critic_ids();
    let dec_ids = st.params.ids_with_prefix("Dec.");
    let n = data.y.len();
    let bs = st.hyper.batch_size.min(n);
    let mut log = TrainLog::default();

    for epoch in 0..st.hyper.epochs {
        st.epoch = epoch;
        let eseed = derive_seed(seed, &format!("epoch/{epoch}"));
        if st.kind == ModelKind::LisGan {
            st.aux.souls = gan::soul_samples(&data.x, &data.y, st.hyper.k_souls, derive_seed(eseed, "souls"))?;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut child_rng(eseed, "order"));
        let mut sum = 0.0;
        let mut steps = 0usize;
        for (bi, chunk) in order.chunks(bs).enumerate() {
            let batch = Batch {
                x: data.x.select(ndarray::Axis(0), chunk),
                y: chunk.iter().map(|&i| data.y[i]).collect(),
                epoch,
                ctx: &data.ctx,
            };
            let bseed = derive_seed(eseed, &format!("batch/{bi}"));
            if gan_like {
                for k in 0..st.hyper.critic_iters {
                    let obj = gan::critic_objective(st, &batch, derive_seed(bseed, &format!("critic/{k}")))?;
                    check_finite(obj.value(), "critic")?;
                    let grads = obj.graph.backward(obj.total);
                    d_opt.step(&mut st.params, &obj.bound, &grads, &d_ids);
                }
            }
            let obj = generator_objective(st, &batch, derive_seed(bseed, "gen"))?;
            let v = obj.value();
            check_finite(v, "generator")?;
            let grads = obj.graph.backward(obj.total);
            g_opt.step(&mut st.params, &obj.bound, &grads, &g_ids);
            if st.kind == ModelKind::LsrGan {
                let decay = st.hyper.ema_decay;
                for (c, m) in &obj.class_means {
                    let e = st.aux.ema_means.entry(*c).or_insert_with(|| m.clone());
                    for (ev, mv) in e.iter_mut().zip(m) {
                        *ev = decay * *ev + (1.0 - decay) * mv;
                    }
                }
            }
            if st.kind == ModelKind::GcmCf {
                let obj = vaegan::decoder_cycle_objective(st, &batch)?;
                let grads = obj.graph.backward(obj.total);
                dec_opt.step(&mut st.params, &obj.bound, &grads, &dec_ids);
            }
            sum += v;
            steps += 1;
        }
        let mean = sum / steps.max(1) as f64;
        debug!("{} epoch {epoch}: loss {mean:.4}", st.kind);
        log.epoch_loss.push(mean);
    }
    st.epoch = st.hyper.epochs;
    if !st.params.all_finite() {
        return Err(Error::Numerical("parameters became non-finite".into()));
    }
    Ok(log)
}

/// Kind-specific preparation before the first epoch.
fn prepare(st: &mut ModelState, data: &TrainSet, seed: u64) -> Result<()> {
    match st.kind {
        ModelKind::FClsWgan | ModelKind::LisGan | ModelKind::LsrGan => {
            gan::pretrain_reference_classifier(st, data, derive_seed(seed, "cls"))?;
        }
        _ => {}
    }
    if st.kind == ModelKind::LsrGan {
        st.aux.real_means = class_means(&data.x, &data.y);
    }
    Ok(())
}

pub fn class_means(x: &Mat, y: &[ClassId]) -> BTreeMap<ClassId, Vec<f64>> {
    let mut sums: BTreeMap<ClassId, (Vec<f64>, usize)> = BTreeMap::new();
    for (row, &c) in x.rows().into_iter().zip(y) {
        let e = sums.entry(c).or_insert_with(|| (vec![0.0; x.ncols()], 0));
        for (s, v) in e.0.iter_mut().zip(row) {
            *s += v;
        }
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    EncoderMean,
    EncoderSample,
    Feedback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentBatch {
    pub h: Mat,
    pub source: LatentSource,
}

#[derive(Clone, Debug)]
pub struct Synthesized {
    pub features: FeatureSet,
    pub latents: Option<LatentBatch>,
}

/// Rows of noise for synthesis, class-major, drawn from `(seed, "z")`.
pub fn synthesis_noise(seed: u64, rows: usize, dim: usize) -> Mat {
    normal_matrix(&mut child_rng(seed, "z"), rows, dim, 1.0)
}

/// Generates `n_per_class` features for every class in `classes`, class-major.
pub fn synthesize_features(
    st: &ModelState,
    table: &SemanticTable,
    classes: &[ClassId],
    n_per_class: usize,
    seed: u64,
) -> Result<Synthesized> {
    if n_per_class == 0 {
        return Err(Error::Invalid("n_per_class must be at least 1".into()));
    }
    let y: Vec<ClassId> = classes
        .iter()
        .flat_map(|&c| std::iter::repeat(c).take(n_per_class))
        .collect();
    let a = table.rows_f64(&y)?;
    if a.ncols() != st.dims.d_a {
        return Err(Error::Shape(format!(
            "descriptions have {} dims, model expects {}",
            a.ncols(),
            st.dims.d_a
        )));
    }
    let n = y.len();
    let (x, latents) = match st.kind {
        ModelKind::CadaVae => vae::cada_synthesize(st, &a, seed)?,
        ModelKind::VaeCFlow => (vae::cflow_synthesize(st, &a, seed)?, None),
        ModelKind::TfVaegan => vaegan::tf_synthesize(st, &a, seed)?,
        _ => {
            let z = synthesis_noise(seed, n, st.z_dim());
            let gen = st.net(&st.nets.gen, "generator")?;
            let input = ndarray::concatenate(ndarray::Axis(1), &[z.view(), a.view()])
                .map_err(|e| Error::Shape(e.to_string()))?;
            let x = gen.eval(&st.params, &input);
            let lat = st.real_latents(&x)?;
            (x, lat)
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("synthesized features are not finite".into()));
    }
    let features = FeatureSet::from_f64(&x, y, VisualProvenance::Synthetic, table.dataset_id.clone())?;
    Ok(Synthesized { features, latents })
}

impl ModelState {
    /// Like [`Self::real_latents`] but drawn from the encoder posterior where
    /// the model has one, for classifier training rows.
    pub fn sampled_latents(&self, x: &Mat, seed: u64) -> Result<Option<LatentBatch>> {
        if self.kind != ModelKind::CadaVae {
            return self.real_latents(x);
        }
        let enc = self.net(&self.nets.enc_x, "x encoder")?;
        let out = enc.eval(&self.params, x);
        let l = self.hyper.latent_dim;
        let mu = out.slice(ndarray::s![.., ..l]);
        let lv = out.slice(ndarray::s![.., l..]);
        let e = synthesis_noise(seed, x.nrows(), l);
        Ok(Some(LatentBatch {
            h: &mu + &(lv.mapv(|v| (0.5 * v).exp()) * &e),
            source: LatentSource::EncoderSample,
        }))
    }

    /// Auxiliary classifier-side features of `x` for kinds that use them.
    pub fn real_latents(&self, x: &Mat) -> Result<Option<LatentBatch>> {
        Ok(match self.kind {
            ModelKind::CadaVae => {
                let enc = self.net(&self.nets.enc_x, "x encoder")?;
                let out = enc.eval(&self.params, x);
                let l = self.hyper.latent_dim;
                Some(LatentBatch {
                    h: out.slice(ndarray::s![.., ..l]).to_owned(),
                    source: LatentSource::EncoderMean,
                })
            }
            ModelKind::TfVaegan | ModelKind::GcmCf => {
                let dec = self.net(&self.nets.dec, "decoder")?;
                Some(LatentBatch {
                    h: dec.eval_hidden(&self.params, x),
                    source: LatentSource::Feedback,
                })
            }
            ModelKind::Free => {
                let dec = self.net(&self.nets.dec, "decoder")?;
                let hidden = dec.eval_hidden(&self.params, x);
                let a_hat = dec.l2.eval(&self.params, &hidden);
                let h = ndarray::concatenate(ndarray::Axis(1), &[hidden.view(), a_hat.view()])
                    .map_err(|e| Error::Shape(e.to_string()))?;
                Some(LatentBatch {
                    h,
                    source: LatentSource::Feedback,
                })
            }
            _ => None,
        })
    }
}
