//! Character-level text encoders trained with joint visual-semantic
//! embedding losses, and the class descriptions they produce.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::datamodel::{ClassId, FeatureSet, SemanticProvenance, SemanticTable};
use crate::error::{Error, Result};
use crate::nn::{Adam, Bound, Linear, ParamId, ParamSet};
use crate::rng::{child_rng, derive_seed, normal_matrix};

/// First printable ASCII character; index 0 of the vocabulary is padding.
const FIRST: u8 = b' ';
const LAST: u8 = b'~';
pub const VOCAB: usize = (LAST - FIRST) as usize + 2;
pub const DEFAULT_HIDDEN: usize = 1024;
pub const DEFAULT_MAX_LEN: usize = 256;

/// Texts per class.
pub type Corpus = BTreeMap<ClassId, Vec<String>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreKind {
    LstmLike,
    GruLike,
}

/// Vocabulary indices of `text`, truncated to `max_len`. Characters outside
/// printable ASCII map to the space character.
pub fn tokenize(text: &str, max_len: usize) -> Vec<usize> {
    text.bytes()
        .take(max_len)
        .map(|b| {
            if (FIRST..=LAST).contains(&b) {
                (b - FIRST) as usize + 1
            } else {
                1
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub core: CoreKind,
    pub hidden: usize,
    pub embed_dim: usize,
    pub max_len: usize,
    /// Weight of the description-anchored direction.
    pub alpha: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub classes_per_batch: usize,
    pub per_class: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            core: CoreKind::GruLike,
            hidden: DEFAULT_HIDDEN,
            embed_dim: 64,
            max_len: DEFAULT_MAX_LEN,
            alpha: 0.5,
            epochs: 10,
            steps_per_epoch: 20,
            classes_per_batch: 8,
            per_class: 2,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.max_len == 0 || self.per_class == 0 || self.classes_per_batch == 0 {
            return Err(Error::Config("encoder sizes and batch shape must be positive".into()));
        }
        Ok(())
    }

    /// Provenance of the descriptions this configuration produces.
    pub fn provenance(&self) -> SemanticProvenance {
        match self.core {
            CoreKind::LstmLike => SemanticProvenance::Naive,
            CoreKind::GruLike if self.alpha == 0.5 => SemanticProvenance::Gru,
            CoreKind::GruLike => SemanticProvenance::ImbGru,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

impl Gate {
    fn new(ps: &mut ParamSet, name: &str, e: usize, h: usize, rng: &mut impl Rng) -> Self {
        let sw = (1.0 / e as f64).sqrt();
        let su = (1.0 / h as f64).sqrt();
        Self {
            w: ps.add(format!("{name}.w"), normal_matrix(rng, e, h, sw)),
            u: ps.add(format!("{name}.u"), normal_matrix(rng, h, h, su)),
            b: ps.add(format!("{name}.b"), Mat::zeros((1, h))),
        }
    }

    fn pre(&self, g: &mut Graph, p: &Bound, x: Var, h: Var) -> Var {
        let a = g.matmul(x, p.var(self.w));
        let b = g.matmul(h, p.var(self.u));
        let s = g.add(a, b);
        g.add(s, p.var(self.b))
    }
}

/// Text encoder parameters plus the paired visual projector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TextEncoderState {
    pub core: CoreKind,
    pub hidden: usize,
    pub max_len: usize,
    pub params: ParamSet,
    embed: ParamId,
    gates: Vec<Gate>,
    pub visual: Linear,
}

impl TextEncoderState {
    pub fn new(cfg: &TextEncoderConfig, d_x: usize) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = child_rng(cfg.seed, "init/text");
        let embed = ps.add("char_embed", normal_matrix(&mut rng, VOCAB, cfg.embed_dim, 0.1));
        let names: &[&str] = match cfg.core {
            CoreKind::GruLike => &["update", "reset", "cand"],
            CoreKind::LstmLike => &["input", "forget", "output", "cell"],
        };
        let gates = names
            .iter()
            .map(|n| Gate::new(&mut ps, n, cfg.embed_dim, cfg.hidden, &mut rng))
            .collect();
        let visual = Linear::new(&mut ps, "visual", d_x, cfg.hidden, &mut child_rng(cfg.seed, "init/visual"));
        Ok(Self {
            core: cfg.core,
            hidden: cfg.hidden,
            max_len: cfg.max_len,
            params: ps,
            embed,
            gates,
            visual,
        })
    }

    /// Time-averaged hidden states of each token sequence: B×hidden.
    pub fn encode(&self, g: &mut Graph, p: &Bound, seqs: &[Vec<usize>]) -> Result<Var> {
        if let Some(i) = seqs.iter().position(Vec::is_empty) {
            return Err(Error::Invalid(format!("text {i} is empty")));
        }
        let b = seqs.len();
        let t_max = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut h = g.constant(Mat::zeros((b, self.hidden)));
        let mut c = g.constant(Mat::zeros((b, self.hidden)));
        let mut acc: Option<Var> = None;
        for t in 0..t_max {
            let onehot = Mat::from_shape_fn((b, VOCAB), |(i, v)| {
                if seqs[i].get(t) == Some(&v) {
                    1.0
                } else {
                    0.0
                }
            });
            let oh = g.constant(onehot);
            let x = g.matmul(oh, p.var(self.embed));
            let h_new = match self.core {
                CoreKind::GruLike => {
                    let zp = self.gates[0].pre(g, p, x, h);
                    let z = g.sigmoid(zp);
                    let rp = self.gates[1].pre(g, p, x, h);
                    let r = g.sigmoid(rp);
                    let rh = g.mul(r, h);
                    let np = self.gates[2].pre(g, p, x, rh);
                    let n = g.tanh(np);
                    let d = g.sub(n, h);
                    let zd = g.mul(z, d);
                    g.add(h, zd)
                }
                CoreKind::LstmLike => {
                    let ip = self.gates[0].pre(g, p, x, h);
                    let i = g.sigmoid(ip);
                    let fp = self.gates[1].pre(g, p, x, h);
                    let f = g.sigmoid(fp);
                    let op = self.gates[2].pre(g, p, x, h);
                    let o = g.sigmoid(op);
                    let cp = self.gates[3].pre(g, p, x, h);
                    let cand = g.tanh(cp);
                    let fc = g.mul(f, c);
                    let ic = g.mul(i, cand);
                    c = g.add(fc, ic);
                    let tc = g.tanh(c);
                    g.mul(o, tc)
                }
            };
            // Finished sequences keep their state and stop contributing.
            let live = Mat::from_shape_fn((b, 1), |(i, _)| if t < seqs[i].len() { 1.0 } else { 0.0 });
            let live_v = g.constant(live.clone());
            let dead_v = g.constant(live.mapv(|v| 1.0 - v));
            let keep_new = g.mul(h_new, live_v);
            let keep_old = g.mul(h, dead_v);
            h = g.add(keep_new, keep_old);
            let w = g.constant(Mat::from_shape_fn((b, 1), |(i, _)| live[[i, 0]] / seqs[i].len() as f64));
            let contrib = g.mul(h, w);
            acc = Some(match acc {
                Some(a) => g.add(a, contrib),
                None => contrib,
            });
        }
        acc.ok_or_else(|| Error::Invalid("no texts to encode".into()))
    }

    /// Evaluation-mode encoding of one text.
    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let v = self.encode(&mut g, &p, &[tokenize(text, self.max_len)])?;
        Ok(g.value(v).iter().copied().collect())
    }

    fn trainable(&self) -> Vec<ParamId> {
        self.params.ids().collect()
    }
}

/// One hinge direction of the structured joint embedding loss. For each
/// anchor, rivals are the classes present in `pool`; class scores are the
/// mean cosine with that class's pool rows, and the margin is 1 on rivals
/// and 0 on the true class. Returns the batch mean of the per-anchor max.
pub fn sje_direction_graph(g: &mut Graph, anchors: Var, anchor_labels: &[ClassId], pool: Var, pool_labels: &[ClassId]) -> Result<Var> {
    let classes: Vec<ClassId> = pool_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.is_empty() {
        return Err(Error::DegenerateInput("empty pool".into()));
    }
    let col: BTreeMap<ClassId, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let truth: Vec<usize> = anchor_labels
        .iter()
        .map(|c| {
            col.get(c)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("anchor class {c} missing from the pool")))
        })
        .collect::<Result<_>>()?;
    let k = classes.len();
    let mut counts = vec![0.0; k];
    for c in pool_labels {
        counts[col[c]] += 1.0;
    }
    let avg = Mat::from_shape_fn((pool_labels.len(), k), |(i, j)| {
        if col[&pool_labels[i]] == j {
            1.0 / counts[j]
        } else {
            0.0
        }
    });
    let sims = g.cosine_matrix(anchors, pool);
    let avg_v = g.constant(avg);
    let class_sims = g.matmul(sims, avg_v);
    let own = g.pick(class_sims, &truth);
    let margin = Mat::from_shape_fn((truth.len(), k), |(i, j)| if truth[i] == j { 0.0 } else { 1.0 });
    let margin_v = g.constant(margin);
    let s = g.add(class_sims, margin_v);
    let s = g.sub(s, own);
    let s = g.relu(s);
    let worst = g.row_max(s);
    Ok(g.mean(worst))
}

/// Value of [`sje_direction_graph`] on plain matrices.
pub fn sje_direction_loss(anchors: &Mat, anchor_labels: &[ClassId], pool: &Mat, pool_labels: &[ClassId]) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(anchors.clone());
    let p = g.constant(pool.clone());
    let v = sje_direction_graph(&mut g, a, anchor_labels, p, pool_labels)?;
    Ok(g.item(v))
}

/// Per-batch losses of the two directions and their weighted total.
pub struct JointStep {
    pub graph: Graph,
    pub bound: Bound,
    pub visual_anchored: Var,
    pub text_anchored: Var,
    pub total: Var,
}

/// `(1−α)·L_x + α·L_a` on one class-balanced batch.
pub fn joint_objective(enc: &TextEncoderState, x: &Mat, texts: &[Vec<usize>], labels: &[ClassId], alpha: f64) -> Result<JointStep> {
    let mut g = Graph::new();
    let p = enc.params.bind(&mut g);
    let xv = g.constant(x.clone());
    let xe = enc.visual.forward(&mut g, &p, xv);
    let ae = enc.encode(&mut g, &p, texts)?;
    let lx = sje_direction_graph(&mut g, xe, labels, ae, labels)?;
    let la = sje_direction_graph(&mut g, ae, labels, xe, labels)?;
    let wx = g.scale(lx, 1.0 - alpha);
    let wa = g.scale(la, alpha);
    let total = g.add(wx, wa);
    Ok(JointStep {
        graph: g,
        bound: p,
        visual_anchored: lx,
        text_anchored: la,
        total,
    })
}

/// Trains on the seen classes of `visual` only; every one of them needs text.
pub fn train_text_encoder(corpus: &Corpus, visual: &FeatureSet, cfg: &TextEncoderConfig) -> Result<(TextEncoderState, Vec<f64>)> {
    cfg.validate()?;
    let x = visual.to_f64();
    let mut rows: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &c) in visual.y.iter().enumerate() {
        rows.entry(c).or_default().push(i);
    }
    let mut tokens: BTreeMap<ClassId, Vec<Vec<usize>>> = BTreeMap::new();
    for &c in rows.keys() {
        let texts = corpus.get(&c).filter(|t| !t.is_empty()).ok_or(Error::MissingDescription(c))?;
        let toks: Vec<Vec<usize>> = texts.iter().map(|t| tokenize(t, cfg.max_len)).collect();
        if toks.iter().any(Vec::is_empty) {
            return Err(Error::MissingDescription(c));
        }
        tokens.insert(c, toks);
    }
    let classes: Vec<ClassId> = rows.keys().copied().collect();
    let mut enc = TextEncoderState::new(cfg, visual.dim())?;
    let ids = enc.trainable();
    let mut opt = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = child_rng(derive_seed(cfg.seed, &format!("epoch/{epoch}")), "batches");
        let mut sum = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let mut picked = classes.clone();
            picked.shuffle(&mut rng);
            picked.truncate(cfg.classes_per_batch);
            picked.sort_unstable();
            let mut xi = Vec::new();
            let mut ts = Vec::new();
            let mut ls = Vec::new();
            for &c in &picked {
                for _ in 0..cfg.per_class {
                    xi.push(*rows[&c].choose(&mut rng).unwrap());
                    ts.push(tokens[&c].choose(&mut rng).unwrap().clone());
                    ls.push(c);
                }
            }
            let step = joint_objective(&enc, &x.select(ndarray::Axis(0), &xi), &ts, &ls, cfg.alpha)?;
            let v = step.graph.item(step.total);
            if !v.is_finite() {
                return Err(Error::Numerical(format!("text encoder loss diverged at epoch {epoch}")));
            }
            let grads = step.graph.backward(step.total);
            opt.step(&mut enc.params, &step.bound, &grads, &ids);
            sum += v;
        }
        let mean = sum / cfg.steps_per_epoch.max(1) as f64;
        info!("text encoder epoch {epoch}: loss {mean:.4}");
        history.push(mean);
    }
    Ok((enc, history))
}

/// One row per class `1..=C`: the mean encoding of the class's texts.
/// Identical texts are encoded once and weighted by multiplicity, so the
/// row ignores text order and uniform duplication exactly.
pub fn class_embeddings(enc: &TextEncoderState, corpus: &Corpus, provenance: SemanticProvenance, dataset_id: &str) -> Result<SemanticTable> {
    let n_classes = corpus.keys().next_back().copied().unwrap_or(0) as usize;
    if n_classes == 0 {
        return Err(Error::Invalid("empty corpus".into()));
    }
    let mut out = Mat::zeros((n_classes, enc.hidden));
    for c in 1..=n_classes as ClassId {
        let texts = corpus.get(&c).filter(|t| !t.is_empty()).ok_or(Error::MissingDescription(c))?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in texts {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        let total = texts.len();
        let mut row = out.row_mut(c as usize - 1);
        for (t, n) in counts {
            if tokenize(t, enc.max_len).is_empty() {
                return Err(Error::MissingDescription(c));
            }
            let w = n as f64 / total as f64;
            for (r, v) in row.iter_mut().zip(enc.embed_text(t)?) {
                *r += w * v;
            }
        }
    }
    SemanticTable::from_f64(&out, provenance, dataset_id)
}

/// Reads `<class_id>/<k>.txt` files.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for e in fs::read_dir(dir).map_err(|e| Error::ingest(dir, e.to_string()))? {
        let p = e?.path();
        if !p.is_dir() {
            continue;
        }
        let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let c: ClassId = name
            .parse()
            .map_err(|_| Error::ingest(&p, "class directory name is not a class id"))?;
        let mut files: Vec<_> = fs::read_dir(&p)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| f.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        let mut texts = Vec::new();
        for f in files {
            texts.push(fs::read_to_string(&f).map_err(|e| Error::ingest(&f, e.to_string()))?);
        }
        corpus.insert(c, texts);
    }
    Ok(corpus)
}

/// Seeded class-correlated strings: each class draws words mostly from its
/// own small lexicon and occasionally from a shared one.
pub fn toy_corpus(n_classes: usize, texts_per_class: usize, words_per_text: usize, seed: u64) -> Corpus {
    let mut rng = child_rng(seed, "lexicon");
    let letters: Vec<char> = ('a'..='z').collect();
    let word = |rng: &mut rand_chacha::ChaCha8Rng| -> String { (0..4).map(|_| *letters.choose(rng).unwrap()).collect() };
    let shared: Vec<String> = (0..8).map(|_| word(&mut rng)).collect();
    let mut corpus = Corpus::new();
    for c in 1..=n_classes as ClassId {
        let own: Vec<String> = (0..4).map(|_| word(&mut rng)).collect();
        let mut trng = child_rng(seed, &format!("texts/{c}"));
        let texts = (0..texts_per_class)
            .map(|_| {
                (0..words_per_text)
                    .map(|_| {
                        if trng.gen_bool(0.75) {
                            own.choose(&mut trng).unwrap().clone()
                        } else {
                            shared.choose(&mut trng).unwrap().clone()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        corpus.insert(c, texts);
    }
    corpus
}
