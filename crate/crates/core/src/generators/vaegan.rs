//! VAEGAN family: f-VAEGAN-D2, tf-VAEGAN, FREE and GCM-CF, plus the
//! counterfactual seen/unseen gate.

use rand::seq::SliceRandom;

use super::gan::{batch_noise, generate, term, wgan_term};
use super::primitives::abs_recon;
use super::vae::{cvae_parts, gaussian_head};
use super::{Batch, LatentBatch, ModelState, Objective, Term};
use crate::autograd::{Graph, Mat, Var};
use crate::datamodel::ClassId;
use crate::error::{Error, Result};
use crate::nn::Bound;
use crate::rng::child_rng;

struct Core {
    g: Graph,
    p: Bound,
    x: Var,
    a: Var,
    z: Mat,
    fake: Var,
    terms: Vec<Term>,
    parts: Vec<(String, Var)>,
}

fn vaegan_core(st: &ModelState, batch: &Batch, seed: u64) -> Result<Core> {
    if st.hyper.transductive {
        return Err(Error::Unsupported("transductive training".into()));
    }
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let x = g.constant(batch.x.clone());
    let a = g.constant(batch.a());
    let (kl, rec, _) = cvae_parts(&mut g, st, &p, x, a, seed)?;
    let kl1 = g.scale(kl, 1.0);
    let recb = g.scale(rec, st.hyper.beta);
    let cvae = g.add(kl1, recb);
    let z = batch_noise(st, seed, batch.len());
    let fake = generate(&mut g, st, &p, &z, a)?;
    let w = wgan_term(&mut g, st, &p, fake, a)?;
    Ok(Core {
        g,
        p,
        x,
        a,
        z,
        fake,
        terms: vec![term("wgan", 1.0, w), term("cvae", st.hyper.delta, cvae)],
        parts: vec![("kl".into(), kl), ("rec".into(), rec)],
    })
}

/// `wgan + δ·cvae`, the generator sharing its weights with the VAE decoder.
pub fn fvaegand2_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let c = vaegan_core(st, batch, seed)?;
    Ok(Objective::assemble(c.g, c.p, c.terms, c.parts))
}

/// Second generator pass whose hidden layer is shifted by the feedback of
/// the semantic decoder's hidden layer on the first-pass output.
fn feedback_pass(g: &mut Graph, st: &ModelState, p: &Bound, z: &Mat, a: Var, first: Var) -> Result<Var> {
    let gen = st.net(&st.nets.gen, "generator")?;
    let dec = st.net(&st.nets.dec, "decoder")?;
    let fb = st.net(&st.nets.feedback, "feedback module")?;
    let hd = dec.hidden(g, p, first);
    let shift = fb.forward(g, p, hd);
    let zv = g.constant(z.clone());
    let input = g.concat_cols(&[zv, a]);
    let gh = gen.hidden(g, p, input);
    let gh = g.add(gh, shift);
    Ok(gen.l2.forward(g, p, gh))
}

/// `|Dec(x) − a|` summed per row and averaged, for real then generated features.
fn cycle(g: &mut Graph, st: &ModelState, p: &Bound, x: Var, fake: Var, a: Var) -> Result<Var> {
    let dec = st.net(&st.nets.dec, "decoder")?;
    let real = dec.forward(g, p, x);
    let r = abs_recon(g, real, a);
    let syn = dec.forward(g, p, fake);
    let s = abs_recon(g, syn, a);
    Ok(g.add(r, s))
}

/// `vaegan + γ·cyc`; the cycle's generated term uses the feedback pass.
pub fn tfvaegan_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let mut c = vaegan_core(st, batch, seed)?;
    let fb = feedback_pass(&mut c.g, st, &c.p, &c.z, c.a, c.fake)?;
    let cyc = cycle(&mut c.g, st, &c.p, c.x, fb, c.a)?;
    c.terms.push(term("cyc", st.hyper.gamma, cyc));
    Ok(Objective::assemble(c.g, c.p, c.terms, c.parts))
}

pub(crate) fn tf_synthesize(st: &ModelState, a: &Mat, seed: u64) -> Result<(Mat, Option<LatentBatch>)> {
    let mut g = Graph::new();
    let p = st.params.bind_frozen(&mut g);
    let av = g.constant(a.clone());
    let z = super::synthesis_noise(seed, a.nrows(), st.z_dim());
    let first = generate(&mut g, st, &p, &z, av)?;
    let x = feedback_pass(&mut g, st, &p, &z, av, first)?;
    let x = g.value(x).clone();
    let lat = st.real_latents(&x)?;
    Ok((x, lat))
}

/// `max(0, Δ + η‖μ − c_y‖² − (1−η)‖μ − c_y′‖²)` for single rows.
pub fn samc_loss(mu: &[f64], c_pos: &[f64], c_neg: &[f64], eta: f64, margin: f64) -> f64 {
    let d = |c: &[f64]| mu.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    (margin + eta * d(c_pos) - (1.0 - eta) * d(c_neg)).max(0.0)
}

/// `vaegan + γ·cyc + ξ·samc`.
pub fn free_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let mut c = vaegan_core(st, batch, seed)?;
    let cyc = cycle(&mut c.g, st, &c.p, c.x, c.fake, c.a)?;
    let dec = st.net(&st.nets.dec, "decoder")?;
    let head = st.net(&st.nets.mu_head, "centre embedding")?;
    let centers_id = *st.net(&st.nets.centers, "class centres")?;
    let g = &mut c.g;
    let hd = dec.hidden(g, &c.p, c.x);
    let mu = head.forward(g, &c.p, hd);
    let centers = c.p.var(centers_id);
    let cv = g.value(centers).clone();
    let muv = g.value(mu).clone();
    let pos: Vec<usize> = batch.class_index();
    let mut neg = Vec::with_capacity(batch.len());
    let mut has_neg = Mat::zeros((batch.len(), 1));
    for (i, &y) in batch.y.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &k in &batch.ctx.with_data {
            if k == y {
                continue;
            }
            let ki = k as usize - 1;
            let d: f64 = muv.row(i).iter().zip(cv.row(ki)).map(|(a, b)| (a - b).powi(2)).sum();
            if best.map_or(true, |b| d < b.1) {
                best = Some((ki, d));
            }
        }
        match best {
            Some((ki, _)) => {
                neg.push(ki);
                has_neg[[i, 0]] = 1.0;
            }
            None => neg.push(pos[i]),
        }
    }
    let cp = g.gather_rows(centers, &pos);
    let cn = g.gather_rows(centers, &neg);
    let dp = g.sub(mu, cp);
    let dp = g.row_sq_norms(dp);
    let dn = g.sub(mu, cn);
    let dn = g.row_sq_norms(dn);
    let mask = g.constant(has_neg);
    let dn = g.mul(dn, mask);
    let eta = st.hyper.eta;
    let dp = g.scale(dp, eta);
    let dn = g.scale(dn, 1.0 - eta);
    let v = g.sub(dp, dn);
    let v = g.offset(v, st.hyper.samc_margin);
    let v = g.relu(v);
    let samc = g.mean(v);
    c.terms.push(term("cyc", st.hyper.gamma, cyc));
    c.terms.push(term("samc", st.hyper.xi, samc));
    Ok(Objective::assemble(c.g, c.p, c.terms, c.parts))
}

/// Encoder mean of `E([x, a])`.
fn encoder_mean(g: &mut Graph, st: &ModelState, p: &Bound, x: Var, a: Var) -> Result<Var> {
    let enc = st.net(&st.nets.enc, "encoder")?;
    let input = g.concat_cols(&[x, a]);
    let out = enc.forward(g, p, input);
    Ok(gaussian_head(g, out).0)
}

fn decode(g: &mut Graph, st: &ModelState, p: &Bound, h: Var, a: Var) -> Result<Var> {
    let gen = st.net(&st.nets.gen, "generator")?;
    let input = g.concat_cols(&[h, a]);
    Ok(gen.forward(g, p, input))
}

/// `−log softmax` of negative Euclidean distances with the faithful
/// reconstruction in the numerator, averaged over anchors.
pub fn contrastive_term(g: &mut Graph, x: Var, faithful: Var, counterfactuals: Var, per_anchor: usize) -> Var {
    let df = g.sub(x, faithful);
    let df = g.row_sq_norms(df);
    let df = g.sqrt(df);
    let mut cols = vec![g.neg(df)];
    let n = g.shape(x).0;
    if per_anchor > 0 {
        let rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(per_anchor)).collect();
        let xr = g.gather_rows(x, &rep);
        let dc = g.sub(xr, counterfactuals);
        let dc = g.row_sq_norms(dc);
        let dc = g.sqrt(dc);
        let dc = g.neg(dc);
        for k in 0..per_anchor {
            let idx: Vec<usize> = (0..n).map(|i| i * per_anchor + k).collect();
            cols.push(g.gather_rows(dc, &idx));
        }
    }
    let logits = g.concat_cols(&cols);
    let ls = g.log_softmax(logits);
    let first = g.pick(ls, &vec![0; n]);
    let m = g.mean(first);
    g.neg(m)
}

/// `vaegan + γ·contrastive` over counterfactuals `G(μ_E(x, a_y), a_y′)`.
pub fn gcmcf_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let mut c = vaegan_core(st, batch, seed)?;
    let pool_size = st.hyper.cf_pool_cap.min(batch.ctx.with_data.len().saturating_sub(1));
    let mut cf_classes: Vec<ClassId> = Vec::with_capacity(batch.len() * pool_size);
    for (i, &y) in batch.y.iter().enumerate() {
        let mut others: Vec<ClassId> = batch.ctx.with_data.iter().copied().filter(|&k| k != y).collect();
        if others.len() > pool_size {
            others.shuffle(&mut child_rng(seed, &format!("cf/{i}")));
            others.truncate(pool_size);
        }
        cf_classes.extend(others);
    }
    let g = &mut c.g;
    let mu = encoder_mean(g, st, &c.p, c.x, c.a)?;
    let faithful = decode(g, st, &c.p, mu, c.a)?;
    let cf = if pool_size > 0 {
        let rep: Vec<usize> = (0..batch.len()).flat_map(|i| std::iter::repeat(i).take(pool_size)).collect();
        let mu_r = g.gather_rows(mu, &rep);
        let a_cf = g.constant(batch.ctx.rows(&cf_classes));
        decode(g, st, &c.p, mu_r, a_cf)?
    } else {
        faithful
    };
    let con = contrastive_term(g, c.x, faithful, cf, pool_size);
    c.terms.push(term("contrastive", st.hyper.gamma, con));
    Ok(Objective::assemble(c.g, c.p, c.terms, c.parts))
}

/// Auxiliary step fitting the semantic decoder to real features.
pub fn decoder_cycle_objective(st: &ModelState, batch: &Batch) -> Result<Objective> {
    let dec = st.net(&st.nets.dec, "decoder")?;
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let x = g.constant(batch.x.clone());
    let a = g.constant(batch.a());
    let out = dec.forward(&mut g, &p, x);
    let l = abs_recon(&mut g, out, a);
    Ok(Objective::assemble(g, p, vec![term("dec", 1.0, l)], Vec::new()))
}

/// Per-row minimum over description rows of `‖x − G(μ_E(x, a), a)‖`.
pub fn faithful_distances(st: &ModelState, x: &Mat, descriptions: &Mat) -> Result<Vec<f64>> {
    if descriptions.nrows() == 0 {
        return Err(Error::Invalid("no descriptions to reconstruct from".into()));
    }
    let mut best = vec![f64::INFINITY; x.nrows()];
    let mut g = Graph::new();
    let p = st.params.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    for row in descriptions.rows() {
        let a = row.broadcast((x.nrows(), row.len())).unwrap().to_owned();
        let av = g.constant(a);
        let mu = encoder_mean(&mut g, st, &p, xv, av)?;
        let rec = decode(&mut g, st, &p, mu, av)?;
        for (i, (xr, rr)) in x.rows().into_iter().zip(g.value(rec).rows()).enumerate() {
            let d = xr.iter().zip(rr).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            if d < best[i] {
                best[i] = d;
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateRule {
    /// Seen iff the best seen faithful distance is at most the threshold.
    Threshold(f64),
    /// Seen iff `seen distance − unseen distance ≤ margin`.
    Relative { unseen: Mat, margin: f64 },
}

/// Routes each row of `x` to the seen (`true`) or unseen branch.
pub fn counterfactual_seen_unseen_gate(st: &ModelState, x: &Mat, seen: &Mat, rule: &GateRule) -> Result<Vec<bool>> {
    let ds = faithful_distances(st, x, seen)?;
    Ok(match rule {
        GateRule::Threshold(t) => ds.iter().map(|d| d <= t).collect(),
        GateRule::Relative { unseen, margin } => {
            let du = faithful_distances(st, x, unseen)?;
            ds.iter().zip(&du).map(|(s, u)| s - u <= *margin).collect()
        }
    })
}

/// Margin maximizing balanced routing accuracy on labelled seen and unseen
/// rows; ties go to the smallest margin.
pub fn calibrate_gate_margin(st: &ModelState, seen_x: &Mat, unseen_x: &Mat, seen: &Mat, unseen: &Mat) -> Result<f64> {
    let gaps = |x: &Mat| -> Result<Vec<f64>> {
        let s = faithful_distances(st, x, seen)?;
        let u = faithful_distances(st, x, unseen)?;
        let mut v: Vec<f64> = s.iter().zip(&u).map(|(a, b)| a - b).collect();
        v.sort_by(f64::total_cmp);
        Ok(v)
    };
    let gs = gaps(seen_x)?;
    let gu = gaps(unseen_x)?;
    if gs.is_empty() || gu.is_empty() {
        return Err(Error::Invalid("gate calibration needs seen and unseen rows".into()));
    }
    let mut cands: Vec<f64> = gs.iter().chain(&gu).copied().collect();
    cands.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for m in cands {
        let s_ok = gs.partition_point(|&v| v <= m) as f64 / gs.len() as f64;
        let u_ok = (gu.len() - gu.partition_point(|&v| v <= m)) as f64 / gu.len() as f64;
        let acc = s_ok + u_ok;
        if acc > best.0 {
            best = (acc, m);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn contrastive(x: Mat, f: Mat, cf: Mat, per: usize) -> f64 {
        let mut g = Graph::new();
        let (xv, fv, cv) = (g.constant(x), g.constant(f), g.constant(cf));
        let v = contrastive_term(&mut g, xv, fv, cv, per);
        g.item(v)
    }

    #[test]
    fn empty_pool_with_exact_reconstruction_is_zero() {
        let x = array![[1.0, 2.0]];
        assert_eq!(contrastive(x.clone(), x.clone(), x, 0), 0.0);
    }

    #[test]
    fn equidistant_counterfactual_gives_ln2() {
        let x = array![[0.0, 0.0]];
        let v = contrastive(x, array![[1.0, 0.0]], array![[0.0, -1.0]], 1);
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn far_counterfactuals_vanish() {
        let x = array![[0.0, 0.0]];
        let v = contrastive(x.clone(), x, array![[100.0, 0.0], [0.0, 100.0]], 2);
        assert!(v < 1e-30);
    }

    #[test]
    fn samc_examples() {
        let c = [0.0, 0.0];
        let far = [10f64.sqrt(), 0.0];
        assert_eq!(samc_loss(&c, &c, &far, 0.5, 0.1), 0.0);
        assert_abs_diff_eq!(samc_loss(&c, &c, &c, 0.5, 0.1), 0.1);
    }
}
