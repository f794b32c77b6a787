//! WGAN family: the critic objective, f-CLSWGAN, LisGAN and LsrGAN.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::primitives::{averaging_matrix, gradient_penalty, MlpCritic, Critic};
use super::{has_critic, Batch, ModelState, Objective, Term, TrainSet};
use crate::autograd::{Graph, Mat, Var};
use crate::classify::fit_softmax;
use crate::datamodel::{ClassId, ClassifierSchedule};
use crate::error::{Error, Result};
use crate::nn::Bound;
use crate::rng::{child_rng, normal_matrix, uniform_matrix};

pub(crate) fn term(name: &str, weight: f64, var: Var) -> Term {
    Term {
        name: name.to_string(),
        weight,
        var,
    }
}

pub(crate) fn critic_of(st: &ModelState) -> Result<MlpCritic> {
    Ok(MlpCritic {
        net: *st.net(&st.nets.critic, "critic")?,
        d_x: st.dims.d_x,
    })
}

/// Training-time generator noise for a batch of `n` rows.
pub(crate) fn batch_noise(st: &ModelState, seed: u64, n: usize) -> Mat {
    normal_matrix(&mut child_rng(seed, "z"), n, st.z_dim(), 1.0)
}

/// `G([z, a])`.
pub(crate) fn generate(g: &mut Graph, st: &ModelState, p: &Bound, z: &Mat, a: Var) -> Result<Var> {
    let gen = st.net(&st.nets.gen, "generator")?;
    let zv = g.constant(z.clone());
    let input = g.concat_cols(&[zv, a]);
    Ok(gen.forward(g, p, input))
}

/// Generator side of the Wasserstein loss, `−E[D(x̃, a)]`.
pub(crate) fn wgan_term(g: &mut Graph, st: &ModelState, p: &Bound, fake: Var, a: Var) -> Result<Var> {
    let critic = critic_of(st)?;
    let s = critic.score(g, p, fake, a);
    let m = g.mean(s);
    Ok(g.neg(m))
}

/// Cross-entropy of the frozen reference classifier on generated features.
pub(crate) fn cls_term(g: &mut Graph, st: &ModelState, p: &Bound, fake: Var, batch: &Batch) -> Result<Var> {
    let head = st.net(&st.nets.cls_head, "reference classifier")?;
    if !st.aux.cls_ready {
        return Err(Error::Config("reference classifier has not been trained".into()));
    }
    let logits = head.forward(g, p, fake);
    Ok(g.cross_entropy(logits, &batch.class_index()))
}

/// Critic loss `E[D(x̃)] − E[D(x)] + λ·GP`, minimized over the critic.
pub fn critic_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    if !has_critic(st.kind) {
        return Err(Error::Config(format!("{} has no critic", st.kind)));
    }
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let x = g.constant(batch.x.clone());
    let a = g.constant(batch.a());
    let z = batch_noise(st, seed, batch.len());
    let fake = generate(&mut g, st, &p, &z, a)?;
    let fake = g.detach(fake);
    let critic = critic_of(st)?;
    let d_real = critic.score(&mut g, &p, x, a);
    let d_real = g.mean(d_real);
    let d_fake = critic.score(&mut g, &p, fake, a);
    let d_fake = g.mean(d_fake);
    let gap = g.sub(d_fake, d_real);
    let alpha = uniform_matrix(&mut child_rng(seed, "gp"), batch.len(), 1);
    let gp = gradient_penalty(&mut g, &critic, &p, x, fake, a, &alpha, 1.0)?;
    let terms = vec![term("gap", 1.0, gap), term("gp", st.hyper.lambda_gp, gp)];
    Ok(Objective::assemble(g, p, terms, Vec::new()))
}

/// Generator-side Wasserstein loss alone.
pub fn wgan_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let a = g.constant(batch.a());
    let z = batch_noise(st, seed, batch.len());
    let fake = generate(&mut g, st, &p, &z, a)?;
    let w = wgan_term(&mut g, st, &p, fake, a)?;
    Ok(Objective::assemble(g, p, vec![term("wgan", 1.0, w)], Vec::new()))
}

struct GanCore {
    g: Graph,
    p: Bound,
    a: Var,
    fake: Var,
    terms: Vec<Term>,
}

fn fclswgan_core(st: &ModelState, batch: &Batch, seed: u64) -> Result<GanCore> {
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let a = g.constant(batch.a());
    let z = batch_noise(st, seed, batch.len());
    let fake = generate(&mut g, st, &p, &z, a)?;
    let w = wgan_term(&mut g, st, &p, fake, a)?;
    let c = cls_term(&mut g, st, &p, fake, batch)?;
    Ok(GanCore {
        g,
        p,
        a,
        fake,
        terms: vec![term("wgan", 1.0, w), term("cls", st.hyper.beta, c)],
    })
}

/// `wgan + β·cls`.
pub fn fclswgan_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let core = fclswgan_core(st, batch, seed)?;
    Ok(Objective::assemble(core.g, core.p, core.terms, Vec::new()))
}

/// Index of the row of `centers` nearest to `v`, lowest index on ties.
fn nearest(centers: &Mat, v: ndarray::ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.rows().into_iter().enumerate() {
        let d: f64 = c.iter().zip(v.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// `wgan + β·cls + δ·r1 + γ·r2`.
pub fn lisgan_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let mut core = fclswgan_core(st, batch, seed)?;
    let g = &mut core.g;
    let fv = g.value(core.fake).clone();
    let mut targets = Mat::zeros(fv.dim());
    let mut assign = Vec::with_capacity(batch.len());
    for (i, &c) in batch.y.iter().enumerate() {
        let souls = st
            .aux
            .souls
            .get(&c)
            .ok_or_else(|| Error::Config(format!("no soul samples for class {c}")))?;
        let (k, _) = nearest(souls, fv.row(i));
        targets.row_mut(i).assign(&souls.row(k));
        assign.push(k);
    }
    let t = g.constant(targets);
    let diff = g.sub(core.fake, t);
    let d = g.row_sq_norms(diff);
    let r1 = g.mean(d);

    let mut groups = Vec::new();
    let mut class_targets = Vec::new();
    for (c, rows) in batch.groups() {
        let souls = &st.aux.souls[&c];
        let mut best: Option<(f64, Vec<usize>, usize)> = None;
        for k in 0..souls.nrows() {
            let members: Vec<usize> = rows.iter().copied().filter(|&r| assign[r] == k).collect();
            if members.is_empty() {
                continue;
            }
            let mean: ndarray::Array1<f64> = members.iter().fold(ndarray::Array1::zeros(fv.ncols()), |acc, &r| acc + fv.row(r))
                / members.len() as f64;
            let dist: f64 = mean.iter().zip(souls.row(k)).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().map_or(true, |b| dist < b.0) {
                best = Some((dist, members, k));
            }
        }
        if let Some((_, members, k)) = best {
            groups.push(members);
            class_targets.push(souls.row(k).to_owned());
        }
    }
    let m = g.constant(averaging_matrix(&groups, batch.len()));
    let means = g.matmul(m, core.fake);
    let mut tgt = Mat::zeros((groups.len(), fv.ncols()));
    for (i, r) in class_targets.iter().enumerate() {
        tgt.row_mut(i).assign(r);
    }
    let tv = g.constant(tgt);
    let diff = g.sub(means, tv);
    let d = g.row_sq_norms(diff);
    let r2 = g.mean(d);
    core.terms.push(term("r1", st.hyper.delta, r1));
    core.terms.push(term("r2", st.hyper.gamma, r2));
    Ok(Objective::assemble(core.g, core.p, core.terms, Vec::new()))
}

/// Per-class `k`-means centroids of the rows of `x`.
pub fn soul_samples(x: &Mat, y: &[ClassId], k: usize, seed: u64) -> Result<BTreeMap<ClassId, Mat>> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    by_class
        .into_iter()
        .map(|(c, rows)| {
            let sub = x.select(ndarray::Axis(0), &rows);
            let cents = kmeans(&sub, k, crate::rng::derive_seed(seed, &format!("class/{c}")))
                .map_err(|e| match e {
                    Error::Cluster(m) => Error::Cluster(format!("class {c}: {m}")),
                    other => other,
                })?;
            Ok((c, cents))
        })
        .collect()
}

pub const KMEANS_ITERS: usize = 20;

/// Lloyd's algorithm from a seeded farthest-point start. Empty clusters keep
/// their previous centroid.
pub fn kmeans(rows: &Mat, k: usize, seed: u64) -> Result<Mat> {
    let n = rows.nrows();
    if k == 0 {
        return Err(Error::Cluster("K must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Cluster(format!("K={k} exceeds the {n} available samples")));
    }
    let mut distinct: Vec<usize> = Vec::new();
    for i in 0..n {
        if !distinct.iter().any(|&j| rows.row(j) == rows.row(i)) {
            distinct.push(i);
        }
    }
    if distinct.len() < k {
        return Err(Error::Cluster(format!("K={k} exceeds the {} distinct samples", distinct.len())));
    }
    distinct.shuffle(&mut child_rng(seed, "init"));
    let mut cents = Mat::zeros((k, rows.ncols()));
    cents.row_mut(0).assign(&rows.row(distinct[0]));
    for j in 1..k {
        let sub = cents.slice(ndarray::s![..j, ..]).to_owned();
        let mut far = (distinct[0], -1.0);
        for &i in &distinct {
            let (_, d) = nearest(&sub, rows.row(i));
            if d > far.1 {
                far = (i, d);
            }
        }
        cents.row_mut(j).assign(&rows.row(far.0));
    }
    for _ in 0..KMEANS_ITERS {
        let mut sums = Mat::zeros(cents.dim());
        let mut counts = vec![0usize; k];
        for r in rows.rows() {
            let (j, _) = nearest(&cents, r);
            let mut s = sums.row_mut(j);
            s += &r;
            counts[j] += 1;
        }
        let mut next = cents.clone();
        for j in 0..k {
            if counts[j] > 0 {
                next.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            }
        }
        if next == cents {
            break;
        }
        cents = next;
    }
    Ok(cents)
}

/// Two-sided squared hinge keeping `vis` inside `sem ± eps`, summed per row then averaged over rows.
fn sr_hinge(g: &mut Graph, vis: Var, sem: &Mat, eps: f64) -> Var {
    let upper = g.constant(sem.mapv(|v| v + eps));
    let lower = g.constant(sem.mapv(|v| v - eps));
    let over = g.sub(vis, upper);
    let over = g.relu(over);
    let over = g.square(over);
    let under = g.sub(lower, vis);
    let under = g.relu(under);
    let under = g.square(under);
    let s = g.add(over, under);
    let per = g.sum_cols(s);
    g.mean(per)
}

/// Pairwise cosine similarities of description rows.
fn semantic_cosines(rows: &Mat, refs: &Mat) -> Result<Mat> {
    super::primitives::cosine_matrix(rows, refs)
}

/// Mixes batch means with the running estimate: `d·ema + (1−d)·batch`,
/// or the batch mean alone for a class without an estimate yet.
fn mixed_means(g: &mut Graph, st: &ModelState, classes: &[ClassId], batch_means: Var) -> Var {
    let d = st.hyper.ema_decay;
    let dim = g.shape(batch_means).1;
    let mut w = Mat::zeros((classes.len(), 1));
    let mut off = Mat::zeros((classes.len(), dim));
    for (i, c) in classes.iter().enumerate() {
        match st.aux.ema_means.get(c) {
            Some(e) => {
                w[[i, 0]] = 1.0 - d;
                for (j, v) in e.iter().enumerate() {
                    off[[i, j]] = d * v;
                }
            }
            None => w[[i, 0]] = 1.0,
        }
    }
    let wv = g.constant(w);
    let ov = g.constant(off);
    let scaled = g.mul(batch_means, wv);
    g.add(scaled, ov)
}

/// `wgan + β·cls + δ·sr1 + γ·sr2`.
pub fn lsrgan_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let mut core = fclswgan_core(st, batch, seed)?;
    let eps = st.hyper.sr_margin;
    let ref_classes: Vec<ClassId> = st.aux.real_means.keys().copied().collect();
    if ref_classes.is_empty() {
        return Err(Error::Config("real class means have not been computed".into()));
    }
    let dim = st.dims.d_x;
    let mut real = Mat::zeros((ref_classes.len(), dim));
    for (i, c) in ref_classes.iter().enumerate() {
        for (j, v) in st.aux.real_means[c].iter().enumerate() {
            real[[i, j]] = *v;
        }
    }
    let ref_a = batch.ctx.rows(&ref_classes);
    let mut class_means = BTreeMap::new();

    let g = &mut core.g;
    let realv = g.constant(real);
    let groups = batch.groups();
    let seen: Vec<ClassId> = groups.keys().copied().collect();
    let rows: Vec<Vec<usize>> = groups.values().cloned().collect();
    let m = g.constant(averaging_matrix(&rows, batch.len()));
    let bm = g.matmul(m, core.fake);
    for (i, c) in seen.iter().enumerate() {
        class_means.insert(*c, g.value(bm).row(i).to_vec());
    }
    let mixed = mixed_means(g, st, &seen, bm);
    let vis = g.cosine_matrix(mixed, realv);
    let sem = semantic_cosines(&batch.ctx.rows(&seen), &ref_a)?;
    let sr1 = sr_hinge(g, vis, &sem, eps);

    let unseen = &batch.ctx.without_data;
    let sr2 = if unseen.is_empty() {
        g.scalar(0.0)
    } else {
        let per = (batch.len() / ref_classes.len()).max(2);
        let ys: Vec<ClassId> = unseen.iter().flat_map(|&c| std::iter::repeat(c).take(per)).collect();
        let au = g.constant(batch.ctx.rows(&ys));
        let z = normal_matrix(&mut child_rng(seed, "unseen_z"), ys.len(), st.z_dim(), 1.0);
        let fake_u = generate(g, st, &core.p, &z, au)?;
        let groups: Vec<Vec<usize>> = (0..unseen.len()).map(|k| (k * per..(k + 1) * per).collect()).collect();
        let m = g.constant(averaging_matrix(&groups, ys.len()));
        let um = g.matmul(m, fake_u);
        for (i, c) in unseen.iter().enumerate() {
            class_means.insert(*c, g.value(um).row(i).to_vec());
        }
        let mixed = mixed_means(g, st, unseen, um);
        let vis = g.cosine_matrix(mixed, realv);
        let sem = semantic_cosines(&batch.ctx.rows(unseen), &ref_a)?;
        sr_hinge(g, vis, &sem, eps)
    };
    let _ = core.a;
    core.terms.push(term("sr1", st.hyper.delta, sr1));
    core.terms.push(term("sr2", st.hyper.gamma, sr2));
    let mut obj = Objective::assemble(core.g, core.p, core.terms, Vec::new());
    obj.class_means = class_means;
    Ok(obj)
}

/// Fits the frozen classifier head used by the classification loss.
pub fn pretrain_reference_classifier(st: &mut ModelState, data: &TrainSet, seed: u64) -> Result<()> {
    let head = *st.net(&st.nets.cls_head, "reference classifier")?;
    let targets: Vec<usize> = data.y.iter().map(|&c| c as usize - 1).collect();
    let sched = ClassifierSchedule {
        epochs: st.hyper.reference_classifier_epochs,
        ..ClassifierSchedule::default()
    };
    let model = fit_softmax(&data.x, &targets, st.dims.n_classes, &sched, seed)?;
    *st.params.get_mut(head.w) = model.w;
    *st.params.get_mut(head.b) = model.b;
    st.aux.cls_ready = true;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{HyperParams, ModelKind};
    use crate::generators::{Dims, TrainContext};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn kmeans_separates_two_groups() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        for seed in 0..8 {
            let mut c = kmeans(&x, 2, seed).unwrap().outer_iter().map(|r| (r[0], r[1])).collect::<Vec<_>>();
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(c, vec![(0.0, 0.5), (10.0, 0.5)]);
        }
    }

    #[test]
    fn single_cluster_is_the_class_mean() {
        let x = array![[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let s = soul_samples(&x, &[1, 1, 1], 1, 3).unwrap();
        assert_abs_diff_eq!(s[&1][[0, 0]], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[&1][[0, 1]], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn one_cluster_per_sample_recovers_the_samples() {
        let x = array![[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let c = kmeans(&x, 3, 9).unwrap();
        let mut rows: Vec<Vec<f64>> = c.outer_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]]);
    }

    #[test]
    fn duplicated_data_gives_the_same_centroids() {
        let x = array![[0.0, 0.0], [0.2, 1.0], [9.0, 0.0], [10.0, 1.5], [4.0, 4.0]];
        let dup = ndarray::concatenate(ndarray::Axis(0), &[x.view(), x.view()]).unwrap();
        let a = kmeans(&x, 2, 1).unwrap();
        let b = kmeans(&dup, 2, 1).unwrap();
        assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(kmeans(&x, 3, 0), Err(Error::Cluster(_))));
        let same = array![[1.0], [1.0], [1.0]];
        assert!(matches!(kmeans(&same, 2, 0), Err(Error::Cluster(_))));
    }

    #[test]
    fn hinge_is_zero_inside_the_tube_and_quadratic_outside() {
        let mut g = Graph::new();
        let v = g.constant(array![[0.9]]);
        let h = sr_hinge(&mut g, v, &array![[0.5]], 0.1);
        assert_abs_diff_eq!(g.item(h), 0.09, epsilon = 1e-12);
        let v = g.constant(array![[0.55, 0.3]]);
        let h = sr_hinge(&mut g, v, &array![[0.5, 0.3]], 0.1);
        assert_eq!(g.item(h), 0.0);
    }

    #[test]
    fn missing_reference_classifier_is_a_config_error() {
        let dims = Dims { d_x: 4, d_a: 3, n_classes: 2 };
        let st = ModelState::new(ModelKind::FClsWgan, dims, HyperParams::toy(), 0).unwrap();
        let ctx = TrainContext {
            semantics: array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            with_data: vec![1],
            without_data: vec![2],
        };
        let batch = Batch { x: Mat::ones((2, 4)), y: vec![1, 1], epoch: 0, ctx: &ctx };
        assert!(matches!(fclswgan_objective(&st, &batch, 0), Err(Error::Config(_))));
    }
}
