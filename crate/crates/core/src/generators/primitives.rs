//! Loss building blocks shared by the generative objectives.

use ndarray::Array1;

use crate::autograd::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Mlp, LEAK};

/// A conditional critic `D(x, a)` whose input gradient can be written on the tape.
pub trait Critic {
    /// Scores, one row per sample (`n×1`).
    fn score(&self, g: &mut Graph, p: &Bound, x: Var, a: Var) -> Var;
    /// `∂D/∂x` per row (`n×d_x`), itself differentiable w.r.t. the critic's parameters.
    fn input_grad(&self, g: &mut Graph, p: &Bound, x: Var, a: Var) -> Var;
}

/// Two-layer perceptron critic over `[x, a]`.
#[derive(Clone, Copy, Debug)]
pub struct MlpCritic {
    pub net: Mlp,
    pub d_x: usize,
}

impl Critic for MlpCritic {
    fn score(&self, g: &mut Graph, p: &Bound, x: Var, a: Var) -> Var {
        let input = g.concat_cols(&[x, a]);
        self.net.forward(g, p, input)
    }

    fn input_grad(&self, g: &mut Graph, p: &Bound, x: Var, a: Var) -> Var {
        // D = w2ᵀ φ(W1 [x; a] + b1) + b2, so ∂D/∂x = (φ'(·) ⊙ w2ᵀ) W1ₓᵀ.
        // The rectifier slopes are piecewise constant and enter as data.
        let input = g.concat_cols(&[x, a]);
        let pre = self.net.l1.forward(g, p, input);
        let slope = g.value(pre).mapv(|v| if v > 0.0 { 1.0 } else { LEAK });
        let slope = g.constant(slope);
        let w2 = p.var(self.net.l2.w);
        let w2t = g.transpose(w2);
        let gated = g.mul(slope, w2t);
        let w1t = g.transpose(p.var(self.net.l1.w));
        let w1x_t = g.slice_cols(w1t, 0, self.d_x);
        g.matmul(gated, w1x_t)
    }
}

/// `λ·E[(‖∇ D(x̂, a)‖₂ − 1)²]` at `x̂ = α·x_real + (1−α)·x_fake`, one α per row.
pub fn gradient_penalty<C: Critic>(
    g: &mut Graph,
    critic: &C,
    p: &Bound,
    x_real: Var,
    x_fake: Var,
    a: Var,
    alpha: &Mat,
    lambda: f64,
) -> Result<Var> {
    let (rs, fs) = (g.shape(x_real), g.shape(x_fake));
    if rs != fs {
        return Err(Error::Shape(format!("real batch {rs:?} vs fake batch {fs:?}")));
    }
    if alpha.dim() != (rs.0, 1) {
        return Err(Error::Shape(format!("interpolation weights {:?} for {} rows", alpha.dim(), rs.0)));
    }
    if g.shape(a).0 != rs.0 {
        return Err(Error::Shape("conditioning rows differ from batch rows".into()));
    }
    let al = g.constant(alpha.clone());
    let one_minus = g.constant(alpha.mapv(|v| 1.0 - v));
    let xr = g.mul(x_real, al);
    let xf = g.mul(x_fake, one_minus);
    let x_hat = g.add(xr, xf);
    let grad = critic.input_grad(g, p, x_hat, a);
    let sq = g.row_sq_norms(grad);
    let norm = g.sqrt(sq);
    let dev = g.offset(norm, -1.0);
    let dev2 = g.square(dev);
    let m = g.mean(dev2);
    Ok(g.scale(m, lambda))
}

/// `0.5·Σ(exp(logvar) + mu² − 1 − logvar)` over every entry.
pub fn kl_diag_gaussian(mu: &Mat, logvar: &Mat) -> f64 {
    0.5 * ndarray::Zip::from(mu)
        .and(logvar)
        .fold(0.0, |acc, &m, &lv| acc + lv.exp() + m * m - 1.0 - lv)
}

/// Per-row divergence to the standard normal, averaged over rows.
pub fn kl_diag_gaussian_graph(g: &mut Graph, mu: Var, logvar: Var) -> Var {
    let e = g.exp(logvar);
    let m2 = g.square(mu);
    let s = g.add(e, m2);
    let s = g.sub(s, logvar);
    let s = g.offset(s, -1.0);
    let per_row = g.sum_cols(s);
    let m = g.mean(per_row);
    g.scale(m, 0.5)
}

/// `(‖μ1−μ2‖² + ‖σ1^½−σ2^½‖²)^½` between diagonal Gaussians with variances `var`.
pub fn wasserstein2_diag(mu1: &Array1<f64>, var1: &Array1<f64>, mu2: &Array1<f64>, var2: &Array1<f64>) -> Result<f64> {
    if mu1.len() != mu2.len() || var1.len() != mu1.len() || var2.len() != mu1.len() {
        return Err(Error::Shape("Gaussian parameters differ in dimension".into()));
    }
    if var1.iter().chain(var2.iter()).any(|&v| v < 0.0) {
        return Err(Error::Domain("negative variance".into()));
    }
    let dm: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    let ds: f64 = var1.iter().zip(var2).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    Ok((dm + ds).sqrt())
}

/// Row-wise distance between Gaussians given as `(mu, logvar)`, averaged over rows.
pub fn wasserstein2_diag_graph(g: &mut Graph, mu1: Var, lv1: Var, mu2: Var, lv2: Var) -> Var {
    let dm = g.sub(mu1, mu2);
    let dm2 = g.row_sq_norms(dm);
    let s1 = g.scale(lv1, 0.5);
    let s1 = g.exp(s1);
    let s2 = g.scale(lv2, 0.5);
    let s2 = g.exp(s2);
    let ds = g.sub(s1, s2);
    let ds2 = g.row_sq_norms(ds);
    let tot = g.add(dm2, ds2);
    let d = g.sqrt(tot);
    g.mean(d)
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateInput("cosine of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Pairwise cosine similarity of the rows of `a` and `b`.
pub fn cosine_matrix(a: &Mat, b: &Mat) -> Result<Mat> {
    let mut out = Mat::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            out[[i, j]] = cosine_similarity(ra.as_slice().unwrap_or(&ra.to_vec()), rb.as_slice().unwrap_or(&rb.to_vec()))?;
        }
    }
    Ok(out)
}

/// Mean of `0.5·Σ(x̂ − x)²` over rows: unit-variance Gaussian likelihood without constants.
pub fn sq_recon(g: &mut Graph, x_hat: Var, x: Var) -> Var {
    let d = g.sub(x_hat, x);
    let s = g.row_sq_norms(d);
    let m = g.mean(s);
    g.scale(m, 0.5)
}

/// Mean of `Σ|x̂ − x|` over rows.
pub fn abs_recon(g: &mut Graph, x_hat: Var, x: Var) -> Var {
    let d = g.sub(x_hat, x);
    let a = g.abs(d);
    let s = g.sum_cols(a);
    g.mean(s)
}

/// `mu + exp(logvar/2)·eps`.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, eps: &Mat) -> Var {
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let e = g.constant(eps.clone());
    let noise = g.mul(std, e);
    g.add(mu, noise)
}

/// Averaging matrix whose row `k` takes the mean of the rows listed in `groups[k]`.
pub fn averaging_matrix(groups: &[Vec<usize>], n: usize) -> Mat {
    let mut m = Mat::zeros((groups.len(), n));
    for (k, rows) in groups.iter().enumerate() {
        let w = 1.0 / rows.len().max(1) as f64;
        for &r in rows {
            m[[k, r]] += w;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;
    use crate::rng::rng_from;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    /// `D(x) = ⟨w, x⟩` with a fixed `w`.
    struct LinearCritic(Mat);

    impl Critic for LinearCritic {
        fn score(&self, g: &mut Graph, _: &Bound, x: Var, _: Var) -> Var {
            let w = g.constant(self.0.clone());
            g.matmul(x, w)
        }

        fn input_grad(&self, g: &mut Graph, _: &Bound, x: Var, _: Var) -> Var {
            let n = g.shape(x).0;
            let rows = self.0.t().broadcast((n, self.0.nrows())).unwrap().to_owned();
            g.constant(rows)
        }
    }

    fn gp_value(c: &impl Critic, lambda: f64) -> f64 {
        let mut g = Graph::new();
        let ps = ParamSet::new();
        let b = ps.bind(&mut g);
        let xr = g.constant(array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]]);
        let xf = g.constant(array![[0.0, 1.0], [2.0, 2.0], [-1.0, 1.0]]);
        let a = g.constant(Array2::zeros((3, 1)));
        let alpha = array![[0.3], [0.9], [0.1]];
        let v = gradient_penalty(&mut g, c, &b, xr, xf, a, &alpha, lambda).unwrap();
        g.item(v)
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_penalty() {
        let w = array![[0.6], [0.8]];
        assert_abs_diff_eq!(gp_value(&LinearCritic(w), 10.0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn doubled_first_coordinate_gives_lambda() {
        let w = array![[2.0], [0.0]];
        assert_abs_diff_eq!(gp_value(&LinearCritic(w), 10.0), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_critic_gives_lambda() {
        let w = array![[0.0], [0.0]];
        assert_abs_diff_eq!(gp_value(&LinearCritic(w), 7.5), 7.5, epsilon = 1e-12);
    }

    #[test]
    fn mlp_critic_input_gradient_matches_finite_differences() {
        let mut rng = rng_from(4);
        let mut ps = ParamSet::new();
        let net = Mlp::new(&mut ps, "D", 3 + 2, 6, 1, &mut rng);
        let critic = MlpCritic { net, d_x: 3 };
        let x = array![[0.3, -0.7, 1.1], [0.2, 0.4, -0.5]];
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let mut g = Graph::new();
        let b = ps.bind(&mut g);
        let xv = g.constant(x.clone());
        let av = g.constant(a.clone());
        let grad = critic.input_grad(&mut g, &b, xv, av);
        let analytic = g.value(grad).clone();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let eval = |m: &Mat| {
                    let input = ndarray::concatenate(ndarray::Axis(1), &[m.view(), a.view()]).unwrap();
                    net.eval(&ps, &input)[[i, 0]]
                };
                let fd = (eval(&xp) - eval(&xm)) / (2.0 * h);
                assert_abs_diff_eq!(analytic[[i, j]], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn gradient_penalty_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let ps = ParamSet::new();
        let b = ps.bind(&mut g);
        let xr = g.constant(Array2::zeros((2, 2)));
        let xf = g.constant(Array2::zeros((3, 2)));
        let a = g.constant(Array2::zeros((2, 1)));
        let c = LinearCritic(array![[1.0], [0.0]]);
        let err = gradient_penalty(&mut g, &c, &b, xr, xf, a, &array![[0.5], [0.5]], 1.0).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_diag_gaussian(&array![[0.0]], &array![[0.0]]), 0.0);
        assert_abs_diff_eq!(kl_diag_gaussian(&array![[1.0]], &array![[0.0]]), 0.5);
        assert_abs_diff_eq!(
            kl_diag_gaussian(&array![[0.0]], &array![[1.0]]),
            0.5 * (std::f64::consts::E - 2.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn wasserstein_examples() {
        let z = Array1::zeros(3);
        let v = Array1::from(vec![0.5, 1.0, 2.0]);
        assert_eq!(wasserstein2_diag(&z, &v, &z, &v).unwrap(), 0.0);
        let m = Array1::from(vec![3.0, 0.0, 0.0]);
        assert_abs_diff_eq!(wasserstein2_diag(&m, &v, &z, &v).unwrap(), 3.0);
        let bad = Array1::from(vec![-1.0, 0.0, 0.0]);
        assert!(matches!(wasserstein2_diag(&z, &bad, &z, &v), Err(Error::Domain(_))));
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine_similarity(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), -1.0, epsilon = 1e-12);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn graph_kl_matches_closed_form() {
        let mu = array![[0.3, -1.0], [0.0, 0.5]];
        let lv = array![[0.1, -0.2], [0.7, 0.0]];
        let mut g = Graph::new();
        let m = g.constant(mu.clone());
        let l = g.constant(lv.clone());
        let k = kl_diag_gaussian_graph(&mut g, m, l);
        assert_abs_diff_eq!(g.item(k), kl_diag_gaussian(&mu, &lv) / 2.0, epsilon = 1e-12);
    }

    fn gaussian() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (prop::collection::vec(-3.0f64..3.0, 3), prop::collection::vec(0.0f64..4.0, 3))
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(mu in prop::collection::vec(-3.0f64..3.0, 4), lv in prop::collection::vec(-3.0f64..3.0, 4)) {
            let m = Array2::from_shape_vec((1, 4), mu).unwrap();
            let l = Array2::from_shape_vec((1, 4), lv).unwrap();
            prop_assert!(kl_diag_gaussian(&m, &l) >= -1e-12);
        }

        #[test]
        fn wasserstein_is_a_metric(a in gaussian(), b in gaussian(), c in gaussian()) {
            let w = |x: &(Vec<f64>, Vec<f64>), y: &(Vec<f64>, Vec<f64>)| {
                wasserstein2_diag(
                    &Array1::from(x.0.clone()), &Array1::from(x.1.clone()),
                    &Array1::from(y.0.clone()), &Array1::from(y.1.clone()),
                ).unwrap()
            };
            prop_assert!((w(&a, &b) - w(&b, &a)).abs() < 1e-12);
            prop_assert!(w(&a, &a).abs() < 1e-12);
            prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
        }
    }
}
