//! Variational family: CVAE, CADA-VAE and VAE-cFlow.

use super::flow::gaussian_log_density;
use super::gan::term;
use super::primitives::{abs_recon, kl_diag_gaussian_graph, reparameterize, sq_recon, wasserstein2_diag_graph};
use super::{Batch, LatentBatch, LatentSource, ModelState, Objective};
use crate::autograd::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Mlp};
use crate::rng::{child_rng, normal_matrix};

/// Splits an encoder output into `(mu, logvar)` halves.
pub(crate) fn gaussian_head(g: &mut Graph, out: Var) -> (Var, Var) {
    let w = g.shape(out).1 / 2;
    (g.slice_cols(out, 0, w), g.slice_cols(out, w, 2 * w))
}

fn eps(seed: u64, name: &str, n: usize, d: usize) -> Mat {
    normal_matrix(&mut child_rng(seed, name), n, d, 1.0)
}

/// `(kl, rec, x̂)` of the conditional VAE on `(x, a)` with encoder noise from `(seed, "eps")`.
pub(crate) fn cvae_parts(g: &mut Graph, st: &ModelState, p: &Bound, x: Var, a: Var, seed: u64) -> Result<(Var, Var, Var)> {
    let enc = st.net(&st.nets.enc, "encoder")?;
    let gen = st.net(&st.nets.gen, "generator")?;
    let input = g.concat_cols(&[x, a]);
    let out = enc.forward(g, p, input);
    let (mu, lv) = gaussian_head(g, out);
    let e = eps(seed, "eps", g.shape(x).0, st.hyper.latent_dim);
    let h = reparameterize(g, mu, lv, &e);
    let kl = kl_diag_gaussian_graph(g, mu, lv);
    let gin = g.concat_cols(&[h, a]);
    let x_hat = gen.forward(g, p, gin);
    let rec = sq_recon(g, x_hat, x);
    Ok((kl, rec, x_hat))
}

/// `kl + β·rec`.
pub fn cvae_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let x = g.constant(batch.x.clone());
    let a = g.constant(batch.a());
    let (kl, rec, _) = cvae_parts(&mut g, st, &p, x, a, seed)?;
    let terms = vec![term("kl", 1.0, kl), term("rec", st.hyper.beta, rec)];
    Ok(Objective::assemble(g, p, terms, Vec::new()))
}

struct ModalVae {
    mu: Var,
    lv: Var,
    h: Var,
    loss: Var,
}

/// One modality's VAE: `kl + β·rec` with `enc`, `dec` and noise stream `name`.
fn modal_vae(g: &mut Graph, st: &ModelState, p: &Bound, enc: &Mlp, dec: &Mlp, v: Var, seed: u64, name: &str) -> ModalVae {
    let out = enc.forward(g, p, v);
    let (mu, lv) = gaussian_head(g, out);
    let e = eps(seed, name, g.shape(v).0, st.hyper.latent_dim);
    let h = reparameterize(g, mu, lv, &e);
    let kl = kl_diag_gaussian_graph(g, mu, lv);
    let v_hat = dec.forward(g, p, h);
    let rec = sq_recon(g, v_hat, v);
    let rec = g.scale(rec, st.hyper.beta);
    let loss = g.add(kl, rec);
    ModalVae { mu, lv, h, loss }
}

struct CadaNets<'a> {
    ex: &'a Mlp,
    ea: &'a Mlp,
    gx: &'a Mlp,
    ga: &'a Mlp,
}

fn cada_nets(st: &ModelState) -> Result<CadaNets<'_>> {
    Ok(CadaNets {
        ex: st.net(&st.nets.enc_x, "x encoder")?,
        ea: st.net(&st.nets.enc_a, "a encoder")?,
        gx: st.net(&st.nets.dec_x, "x decoder")?,
        ga: st.net(&st.nets.dec_a, "a decoder")?,
    })
}

/// The feature-side VAE of CADA-VAE on its own.
pub fn vae_x_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let n = cada_nets(st)?;
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let x = g.constant(batch.x.clone());
    let v = modal_vae(&mut g, st, &p, n.ex, n.gx, x, seed, "eps_x");
    Ok(Objective::assemble(g, p, vec![term("xvae", 1.0, v.loss)], Vec::new()))
}

/// The description-side VAE of CADA-VAE on its own.
pub fn vae_a_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let n = cada_nets(st)?;
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let a = g.constant(batch.a());
    let v = modal_vae(&mut g, st, &p, n.ea, n.ga, a, seed, "eps_a");
    Ok(Objective::assemble(g, p, vec![term("avae", 1.0, v.loss)], Vec::new()))
}

/// Warm-up factors `(δ(t), γ(t))` at `epoch`.
pub fn cada_warmup(st: &ModelState, epoch: usize) -> (f64, f64) {
    let e = epoch as f64;
    (
        st.hyper.delta * st.hyper.warmup_delta.ramp(e),
        st.hyper.gamma * st.hyper.warmup_gamma.ramp(e),
    )
}

/// `xvae + avae + δ(t)·ca + γ(t)·da`.
pub fn cadavae_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let n = cada_nets(st)?;
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let x = g.constant(batch.x.clone());
    let a = g.constant(batch.a());
    let vx = modal_vae(&mut g, st, &p, n.ex, n.gx, x, seed, "eps_x");
    let va = modal_vae(&mut g, st, &p, n.ea, n.ga, a, seed, "eps_a");
    let x_from_a = n.gx.forward(&mut g, &p, va.h);
    let a_from_x = n.ga.forward(&mut g, &p, vx.h);
    let c1 = abs_recon(&mut g, x_from_a, x);
    let c2 = abs_recon(&mut g, a_from_x, a);
    let ca = g.add(c1, c2);
    let da = wasserstein2_diag_graph(&mut g, va.mu, va.lv, vx.mu, vx.lv);
    let (wd, wg) = cada_warmup(st, batch.epoch);
    let terms = vec![
        term("xvae", 1.0, vx.loss),
        term("avae", 1.0, va.loss),
        term("ca", wd, ca),
        term("da", wg, da),
    ];
    Ok(Objective::assemble(g, p, terms, Vec::new()))
}

/// Latent samples drawn from the description encoder, decoded to features.
pub(crate) fn cada_synthesize(st: &ModelState, a: &Mat, seed: u64) -> Result<(Mat, Option<LatentBatch>)> {
    let n = cada_nets(st)?;
    let out = n.ea.eval(&st.params, a);
    let l = st.hyper.latent_dim;
    let mu = out.slice(ndarray::s![.., ..l]);
    let lv = out.slice(ndarray::s![.., l..]);
    let e = super::synthesis_noise(seed, a.nrows(), l);
    let h = &mu + &(lv.mapv(|v| (0.5 * v).exp()) * &e);
    let x = n.gx.eval(&st.params, &h);
    Ok((
        x,
        Some(LatentBatch {
            h,
            source: LatentSource::EncoderSample,
        }),
    ))
}

/// `flow_nll + δ·vae_flow + γ·hcls`.
pub fn vaecflow_objective(st: &ModelState, batch: &Batch, seed: u64) -> Result<Objective> {
    let flow = st.net(&st.nets.flow, "flow")?;
    let ea = st.net(&st.nets.enc_a, "a encoder")?;
    let ga = st.net(&st.nets.dec_a, "a decoder")?;
    let hcls = st.net(&st.nets.hcls, "latent classifier")?;
    let mut g = Graph::new();
    let p = st.params.bind(&mut g);
    let x = g.constant(batch.x.clone());
    let a = g.constant(batch.a());
    let out = ea.forward(&mut g, &p, a);
    let (mu, lv) = gaussian_head(&mut g, out);
    let (h, logdet) = flow.forward(&mut g, &p, x, a);
    let lp = gaussian_log_density(&mut g, h, mu, lv);
    let ll = g.add(lp, logdet);
    let m = g.mean(ll);
    let nll = g.neg(m);

    let a_hat = ga.forward(&mut g, &p, h);
    let rec = sq_recon(&mut g, a_hat, a);
    let var = g.exp(lv);
    let reg = g.sub(var, lv);
    let reg = g.offset(reg, -1.0);
    let reg = g.sum_cols(reg);
    let reg = g.mean(reg);
    let vae = g.add(rec, reg);

    let e = eps(seed, "eps", batch.len(), st.dims.d_x);
    let hs = reparameterize(&mut g, mu, lv, &e);
    let logits = hcls.forward(&mut g, &p, hs);
    let ce = g.cross_entropy(logits, &batch.class_index());
    let terms = vec![
        term("flow_nll", 1.0, nll),
        term("vae_flow", st.hyper.delta, vae),
        term("hcls", st.hyper.gamma, ce),
    ];
    Ok(Objective::assemble(g, p, terms, Vec::new()))
}

/// Base-space samples `N(mu(a), τ·σ²(a))` mapped back through the flow.
pub(crate) fn cflow_synthesize(st: &ModelState, a: &Mat, seed: u64) -> Result<Mat> {
    let flow = st.net(&st.nets.flow, "flow")?;
    let ea = st.net(&st.nets.enc_a, "a encoder")?;
    let out = ea.eval(&st.params, a);
    let d = st.dims.d_x;
    let mu = out.slice(ndarray::s![.., ..d]);
    let lv = out.slice(ndarray::s![.., d..]);
    let e = super::synthesis_noise(seed, a.nrows(), d);
    let tau = st.hyper.temperature.sqrt();
    let h = &mu + &(lv.mapv(|v| tau * (0.5 * v).exp()) * &e);
    let x = flow.eval_inverse(&st.params, &h, a)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("flow inverse produced non-finite features".into()));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{HyperParams, ModelKind};
    use crate::generators::{Dims, TrainContext};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn ctx() -> TrainContext {
        TrainContext {
            semantics: array![[1.0, 0.0, 0.5], [0.0, 1.0, -0.5], [0.3, 0.3, 0.3]],
            with_data: vec![1, 2],
            without_data: vec![3],
        }
    }

    fn state(kind: ModelKind) -> ModelState {
        ModelState::new(kind, Dims { d_x: 4, d_a: 3, n_classes: 3 }, HyperParams::toy(), 2).unwrap()
    }

    #[test]
    fn warmup_before_start_leaves_two_vaes() {
        let st = state(ModelKind::CadaVae);
        let c = ctx();
        let b = Batch { x: array![[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.0, 2.0]], y: vec![1, 2], epoch: 0, ctx: &c };
        let o = cadavae_objective(&st, &b, 4).unwrap();
        let xv = vae_x_objective(&st, &b, 4).unwrap().value();
        let av = vae_a_objective(&st, &b, 4).unwrap().value();
        assert_abs_diff_eq!(o.value(), xv + av, epsilon = 1e-12);
    }

    #[test]
    fn identity_flow_at_origin_gives_gaussian_constant() {
        let mut st = state(ModelKind::VaeCFlow);
        for id in st.params.ids_with_prefix("Ea.") {
            st.params.get_mut(id).fill(0.0);
        }
        let c = ctx();
        let b = Batch { x: Mat::zeros((2, 4)), y: vec![1, 2], epoch: 0, ctx: &c };
        let o = vaecflow_objective(&st, &b, 0).unwrap();
        assert_abs_diff_eq!(
            o.term("flow_nll").unwrap(),
            2.0 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn unit_offset_reconstruction_costs_half_per_dim() {
        let mut g = Graph::new();
        let x = g.constant(Mat::zeros((3, 5)));
        let xh = g.constant(Mat::ones((3, 5)));
        let r = sq_recon(&mut g, xh, x);
        assert_abs_diff_eq!(g.item(r), 2.5, epsilon = 1e-12);
    }
}
