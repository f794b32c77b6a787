//! Visual features from an image backbone: naive extraction, cross-entropy
//! finetuning and semantically regularized finetuning.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::DynamicImage;
use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::datamodel::{ClassId, FeatureSet, SemanticTable, VisualProvenance};
use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamId, ParamSet, Sgd, LEAK};
use crate::rng::{child_rng, derive_seed, normal_matrix};

/// Output width of the standard backbone.
pub const DEFAULT_DIM: usize = 2048;
/// Mean-pooling grid applied by the toy backbone after cropping.
pub const TOY_GRID: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocess {
    /// Shorter side after resizing.
    pub resize: u32,
    /// Side of the center crop.
    pub crop: u32,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self { resize: 256, crop: 224 }
    }
}

impl Preprocess {
    /// Resize so the shorter side is `resize`, then center-crop to `crop`².
    pub fn apply(&self, img: &DynamicImage) -> image::RgbImage {
        let (w, h) = (img.width().max(1), img.height().max(1));
        let s = self.resize.max(self.crop) as f64 / w.min(h) as f64;
        let (nw, nh) = (
            ((w as f64 * s).round() as u32).max(self.crop),
            ((h as f64 * s).round() as u32).max(self.crop),
        );
        let rgb = img.to_rgb8();
        let resized = image::imageops::resize(&rgb, nw, nh, FilterType::Triangle);
        let (x0, y0) = ((nw - self.crop) / 2, (nh - self.crop) / 2);
        image::imageops::crop_imm(&resized, x0, y0, self.crop, self.crop).to_image()
    }
}

/// A differentiable image encoder with a trainable classifier head.
pub trait Backbone {
    fn preprocess(&self) -> Preprocess;
    /// Non-trainable input pipeline: one row per image.
    fn prepare(&self, img: &DynamicImage) -> Vec<f64>;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Encoder parameters updated by finetuning.
    fn encoder_ids(&self) -> Vec<ParamId>;
    /// Pooled features of prepared rows.
    fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Var;
    /// Installs (or replaces) a head over `n` classes.
    fn reset_head(&mut self, n: usize, seed: u64) -> Linear;
    fn head(&self) -> Option<Linear>;

    /// Evaluation-mode features; rows are independent of each other.
    fn features(&self, prepared: &Mat) -> Mat {
        let mut g = Graph::new();
        let p = self.params().bind_frozen(&mut g);
        let x = g.constant(prepared.clone());
        let f = self.encode(&mut g, &p, x);
        g.value(f).clone()
    }
}

/// Seeded random-projection backbone: mean-pools the crop on a coarse grid,
/// then applies one leaky-rectified linear layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyBackbone {
    pub pre: Preprocess,
    pub grid: u32,
    params: ParamSet,
    enc: Linear,
    head: Option<Linear>,
}

impl ToyBackbone {
    pub fn new(pre: Preprocess, grid: u32, out_dim: usize, seed: u64) -> Result<Self> {
        if grid == 0 || grid > pre.crop || out_dim == 0 {
            return Err(Error::Config(format!("bad toy backbone grid {grid} / width {out_dim}")));
        }
        let mut params = ParamSet::new();
        let d_in = (grid * grid * 3) as usize;
        let enc = Linear::new(&mut params, "backbone", d_in, out_dim, &mut child_rng(seed, "init/backbone"));
        Ok(Self {
            pre,
            grid,
            params,
            enc,
            head: None,
        })
    }

    /// Default preprocessing and a 2048-wide output.
    pub fn standard(seed: u64) -> Self {
        Self::new(Preprocess::default(), TOY_GRID, DEFAULT_DIM, seed).expect("valid defaults")
    }
}

impl Backbone for ToyBackbone {
    fn preprocess(&self) -> Preprocess {
        self.pre
    }

    fn prepare(&self, img: &DynamicImage) -> Vec<f64> {
        let crop = self.pre.apply(img);
        let g = self.grid as usize;
        let side = self.pre.crop as usize;
        let mut sums = vec![0.0; g * g * 3];
        let mut counts = vec![0usize; g * g];
        for (x, y, px) in crop.enumerate_pixels() {
            let cell = (y as usize * g / side) * g + x as usize * g / side;
            counts[cell] += 1;
            for ch in 0..3 {
                sums[cell * 3 + ch] += px[ch] as f64 / 255.0;
            }
        }
        sums.iter()
            .enumerate()
            .map(|(i, s)| s / counts[i / 3].max(1) as f64 - 0.5)
            .collect()
    }

    fn input_dim(&self) -> usize {
        self.enc.fan_in
    }

    fn output_dim(&self) -> usize {
        self.enc.fan_out
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn encoder_ids(&self) -> Vec<ParamId> {
        vec![self.enc.w, self.enc.b]
    }

    fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.enc.forward(g, p, x);
        g.leaky_relu(h, LEAK)
    }

    fn head(&self) -> Option<Linear> {
        self.head
    }

    fn reset_head(&mut self, n: usize, seed: u64) -> Linear {
        let head = match self.head {
            Some(h) if h.fan_out == n => {
                let mut rng = child_rng(seed, "init/head");
                *self.params.get_mut(h.w) = normal_matrix(&mut rng, h.fan_in, n, (2.0 / (h.fan_in + n) as f64).sqrt());
                *self.params.get_mut(h.b) = Mat::zeros((1, n));
                h
            }
            _ => Linear::new(&mut self.params, &format!("head{n}"), self.enc.fan_out, n, &mut child_rng(seed, "init/head")),
        };
        self.head = Some(head);
        head
    }
}

/// Images grouped by class, in prepared form.
#[derive(Clone, Debug)]
pub struct ImageSet {
    pub x: Mat,
    pub y: Vec<ClassId>,
    pub files: Vec<PathBuf>,
}

/// Reads `<class_id>/<file>` images and prepares them for `backbone`.
/// Classes and files are visited in sorted order.
pub fn load_images(dir: &Path, backbone: &dyn Backbone) -> Result<ImageSet> {
    let mut classes: Vec<(ClassId, PathBuf)> = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::ingest(dir, e.to_string()))? {
        let p = e?.path();
        if p.is_dir() {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let c: ClassId = name
                .parse()
                .map_err(|_| Error::ingest(&p, "class directory name is not a class id"))?;
            classes.push((c, p));
        }
    }
    classes.sort();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut files = Vec::new();
    for (c, cdir) in classes {
        let mut paths: Vec<PathBuf> = fs::read_dir(&cdir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        for p in paths {
            let img = image::open(&p).map_err(|e| Error::ingest(&p, e.to_string()))?;
            rows.push(backbone.prepare(&img));
            y.push(c);
            files.push(p);
        }
    }
    if rows.is_empty() {
        return Err(Error::ingest(dir, "no images found"));
    }
    let d = backbone.input_dim();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let x = Mat::from_shape_vec((y.len(), d), flat).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(ImageSet { x, y, files })
}

/// Features of every image under the given provenance.
pub fn extract(backbone: &dyn Backbone, images: &ImageSet, provenance: VisualProvenance, dataset_id: &str) -> Result<FeatureSet> {
    FeatureSet::from_f64(&backbone.features(&images.x), images.y.clone(), provenance, dataset_id)
}

/// Features of the untouched backbone.
pub fn extract_naive(backbone: &dyn Backbone, images: &ImageSet, dataset_id: &str) -> Result<FeatureSet> {
    extract(backbone, images, VisualProvenance::Naive, dataset_id)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualFinetuneConfig {
    pub alpha_se: f64,
    pub delta_se: f64,
    pub lambda_se: f64,
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub decay_period: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Use the regularizer with the sign as printed (alignment penalized).
    pub printed_sign: bool,
    pub seed: u64,
}

impl Default for VisualFinetuneConfig {
    fn default() -> Self {
        Self {
            alpha_se: 0.01,
            delta_se: 1.0,
            lambda_se: 0.9,
            lr: 0.01,
            momentum: 0.9,
            decay: 0.1,
            decay_period: 7,
            epochs: 10,
            batch_size: 32,
            printed_sign: false,
            seed: 0,
        }
    }
}

impl VisualFinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_se > 0.0 && self.lambda_se < 1.0) {
            return Err(Error::Config(format!("lambda_se must lie in (0, 1), got {}", self.lambda_se)));
        }
        if self.alpha_se < 0.0 || self.delta_se < 0.0 {
            return Err(Error::Config("alpha_se and delta_se must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.decay_period == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch size, decay period and learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Step decay: `lr · decay^⌊epoch / period⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi((epoch / self.decay_period) as i32)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput("cosine of a zero vector".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of {} and {} dims", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// `max(0, Δ − λ·C(x, a⁺) + (1−λ)·C(x, a⁻))`.
pub fn semantic_regularizer(x: &[f64], a_pos: &[f64], a_neg: &[f64], delta: f64, lambda: f64) -> Result<f64> {
    let cp = cosine(x, a_pos)?;
    let cn = cosine(x, a_neg)?;
    Ok((delta - lambda * cp + (1.0 - lambda) * cn).max(0.0))
}

/// The regularizer as printed: `max(0, Δ + λ·C(x, a⁺) − (1−λ)·C(x, a⁻))`.
pub fn semantic_regularizer_printed(x: &[f64], a_pos: &[f64], a_neg: &[f64], delta: f64, lambda: f64) -> Result<f64> {
    let cp = cosine(x, a_pos)?;
    let cn = cosine(x, a_neg)?;
    Ok((delta + lambda * cp - (1.0 - lambda) * cn).max(0.0))
}

/// Batch mean of the regularizer on graph values.
pub fn semantic_regularizer_graph(
    g: &mut Graph,
    x: Var,
    a_pos: Var,
    a_neg: Var,
    delta: f64,
    lambda: f64,
    printed: bool,
) -> Var {
    let cp = g.row_cosine(x, a_pos);
    let cn = g.row_cosine(x, a_neg);
    let sign = if printed { -1.0 } else { 1.0 };
    let pos = g.scale(cp, -sign * lambda);
    let neg = g.scale(cn, sign * (1.0 - lambda));
    let s = g.add(pos, neg);
    let s = g.offset(s, delta);
    let h = g.relu(s);
    g.mean(h)
}

/// Seen-class targets; any other label is zero-shot leakage.
fn seen_targets(y: &[ClassId], seen: &[ClassId]) -> Result<Vec<usize>> {
    let index: BTreeMap<ClassId, usize> = seen.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    y.iter()
        .map(|c| {
            index
                .get(c)
                .copied()
                .ok_or_else(|| Error::ProtocolViolation(format!("class {c} is not a seen class")))
        })
        .collect()
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FinetuneLog {
    pub epoch_loss: Vec<f64>,
}

/// Description-side inputs of the regularized objective.
struct Regularizer<'a> {
    table: &'a SemanticTable,
    proj: Linear,
}

/// One minibatch of the finetuning objective: `CE + α·SE`.
pub struct FinetuneStep {
    pub graph: Graph,
    pub bound: Bound,
    pub ce: Var,
    pub se: Option<Var>,
    pub total: Var,
}

fn objective(
    backbone: &dyn Backbone,
    head: Linear,
    reg: Option<&Regularizer>,
    x: &Mat,
    targets: &[usize],
    seen: &[ClassId],
    cfg: &VisualFinetuneConfig,
    rng: &mut impl Rng,
) -> Result<FinetuneStep> {
    let mut g = Graph::new();
    let p = backbone.params().bind(&mut g);
    let xv = g.constant(x.clone());
    let f = backbone.encode(&mut g, &p, xv);
    let logits = head.forward(&mut g, &p, f);
    let ce = g.cross_entropy(logits, targets);
    let (se, total) = match reg {
        Some(r) => {
            let pos: Vec<ClassId> = targets.iter().map(|&t| seen[t]).collect();
            let neg: Vec<ClassId> = targets
                .iter()
                .map(|&t| {
                    let k = rng.gen_range(0..seen.len() - 1);
                    seen[if k >= t { k + 1 } else { k }]
                })
                .collect();
            let ap = g.constant(r.table.rows_f64(&pos)?);
            let an = g.constant(r.table.rows_f64(&neg)?);
            let z = r.proj.forward(&mut g, &p, f);
            let se = semantic_regularizer_graph(&mut g, z, ap, an, cfg.delta_se, cfg.lambda_se, cfg.printed_sign);
            let w = g.scale(se, cfg.alpha_se);
            let total = g.add(ce, w);
            (Some(se), total)
        }
        None => (None, ce),
    };
    Ok(FinetuneStep {
        graph: g,
        bound: p,
        ce,
        se,
        total,
    })
}

fn run_finetune<B: Backbone>(
    backbone: &mut B,
    images: &ImageSet,
    seen: &[ClassId],
    table: Option<&SemanticTable>,
    cfg: &VisualFinetuneConfig,
) -> Result<FinetuneLog> {
    cfg.validate()?;
    let targets = seen_targets(&images.y, seen)?;
    let head = backbone.reset_head(seen.len(), cfg.seed);
    let reg = match table {
        Some(t) => {
            if seen.len() < 2 {
                return Err(Error::DegenerateInput("the regularizer needs a second seen class".into()));
            }
            t.rows_f64(seen)?;
            let name = format!("semproj{}", t.dim());
            let d = backbone.output_dim();
            let proj = Linear::new(
                backbone.params_mut(),
                &name,
                d,
                t.dim(),
                &mut child_rng(cfg.seed, "init/semproj"),
            );
            Some(Regularizer { table: t, proj })
        }
        None => None,
    };
    let mut ids = backbone.encoder_ids();
    ids.extend([head.w, head.b]);
    if let Some(r) = &reg {
        ids.extend([r.proj.w, r.proj.b]);
    }
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut order: Vec<usize> = (0..images.y.len()).collect();
    let mut log = FinetuneLog::default();
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr_at(epoch);
        let eseed = derive_seed(cfg.seed, &format!("epoch/{epoch}"));
        order.shuffle(&mut child_rng(eseed, "order"));
        let mut neg_rng = child_rng(eseed, "negatives");
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = images.x.select(ndarray::Axis(0), chunk);
            let tb: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let step = objective(&*backbone, head, reg.as_ref(), &xb, &tb, seen, cfg, &mut neg_rng)?;
            let value = step.graph.item(step.total);
            if !value.is_finite() {
                return Err(Error::Numerical(format!("finetuning loss diverged at epoch {epoch}")));
            }
            let grads = step.graph.backward(step.total);
            opt.step(backbone.params_mut(), &step.bound, &grads, &ids);
            sum += value * chunk.len() as f64;
            count += chunk.len();
        }
        log.epoch_loss.push(sum / count as f64);
        info!("finetune epoch {epoch}: loss {:.4}", sum / count as f64);
    }
    Ok(log)
}

/// Cross-entropy finetuning on seen-class training images only.
pub fn finetune_ce<B: Backbone>(backbone: &mut B, images: &ImageSet, seen: &[ClassId], cfg: &VisualFinetuneConfig) -> Result<FinetuneLog> {
    run_finetune(backbone, images, seen, None, cfg)
}

/// Finetuning with the semantic alignment regularizer added to the
/// cross-entropy. Cosines compare a learned linear projection of the
/// features with the class descriptions.
pub fn finetune_regularized<B: Backbone>(
    backbone: &mut B,
    images: &ImageSet,
    seen: &[ClassId],
    table: &SemanticTable,
    cfg: &VisualFinetuneConfig,
) -> Result<FinetuneLog> {
    run_finetune(backbone, images, seen, Some(table), cfg)
}

/// Builds the minibatch objective without training, for inspection.
pub fn finetune_objective<B: Backbone>(
    backbone: &mut B,
    images: &ImageSet,
    seen: &[ClassId],
    table: Option<&SemanticTable>,
    cfg: &VisualFinetuneConfig,
) -> Result<FinetuneStep> {
    let targets = seen_targets(&images.y, seen)?;
    let head = backbone.head().filter(|h| h.fan_out == seen.len());
    let head = match head {
        Some(h) => h,
        None => backbone.reset_head(seen.len(), cfg.seed),
    };
    let reg = match table {
        Some(t) => {
            let name = format!("semproj{}", t.dim());
            let existing = backbone.params().ids_with_prefix(&format!("{name}."));
            let d = backbone.output_dim();
            let proj = if existing.len() == 2 {
                Linear {
                    w: existing[0],
                    b: existing[1],
                    fan_in: d,
                    fan_out: t.dim(),
                }
            } else {
                Linear::new(
                    backbone.params_mut(),
                    &name,
                    d,
                    t.dim(),
                    &mut child_rng(cfg.seed, "init/semproj"),
                )
            };
            Some(Regularizer { table: t, proj })
        }
        None => None,
    };
    let mut rng = child_rng(cfg.seed, "negatives");
    objective(&*backbone, head, reg.as_ref(), &images.x, &targets, seen, cfg, &mut rng)
}
