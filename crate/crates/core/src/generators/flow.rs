//! Conditional affine coupling flow.
//!
//! Block `k` keeps one half of the coordinates fixed and maps the other half
//! through `y = x·exp(s) + t`, where `[s_raw, t] = NN([x_fixed, a])` and
//! `s = tanh(s_raw)`. Blocks alternate which half is transformed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Mlp, ParamSet};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct Block {
    net: Mlp,
    /// Transform the upper half (`true`) or the lower half.
    upper: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingFlow {
    blocks: Vec<Block>,
    dim: usize,
    split: usize,
}

impl CouplingFlow {
    /// A flow over `dim ≥ 2` coordinates conditioned on `cond_dim` values.
    /// Output layers start at zero, so a fresh flow is the identity.
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        dim: usize,
        cond_dim: usize,
        hidden: usize,
        n_blocks: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("coupling flow needs at least 2 dimensions".into()));
        }
        let split = dim / 2;
        let mut blocks = Vec::with_capacity(n_blocks);
        for k in 0..n_blocks {
            let upper = k % 2 == 0;
            let (fixed, moved) = if upper { (split, dim - split) } else { (dim - split, split) };
            let net = Mlp::new(ps, &format!("{name}.{k}"), fixed + cond_dim, hidden, 2 * moved, rng);
            ps.get_mut(net.l2.w).fill(0.0);
            blocks.push(Block { net, upper });
        }
        Ok(Self { blocks, dim, split })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn ranges(&self, b: &Block) -> ((usize, usize), (usize, usize)) {
        if b.upper {
            ((0, self.split), (self.split, self.dim))
        } else {
            ((self.split, self.dim), (0, self.split))
        }
    }

    fn scale_shift(&self, g: &mut Graph, p: &Bound, b: &Block, fixed: Var, a: Var) -> (Var, Var) {
        let input = g.concat_cols(&[fixed, a]);
        let out = b.net.forward(g, p, input);
        let m = b.net.output_dim() / 2;
        let s_raw = g.slice_cols(out, 0, m);
        let s = g.tanh(s_raw);
        let t = g.slice_cols(out, m, 2 * m);
        (s, t)
    }

    fn assemble(&self, g: &mut Graph, b: &Block, fixed: Var, moved: Var) -> Var {
        if b.upper {
            g.concat_cols(&[fixed, moved])
        } else {
            g.concat_cols(&[moved, fixed])
        }
    }

    /// Maps `x` to the base space; returns `(h, log|det ∂h/∂x|)` with one log-det per row.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, a: Var) -> (Var, Var) {
        let n = g.shape(x).0;
        let mut h = x;
        let mut logdet = g.constant(Mat::zeros((n, 1)));
        for b in &self.blocks {
            let ((f0, f1), (m0, m1)) = self.ranges(b);
            let fixed = g.slice_cols(h, f0, f1);
            let moved = g.slice_cols(h, m0, m1);
            let (s, t) = self.scale_shift(g, p, b, fixed, a);
            let es = g.exp(s);
            let scaled = g.mul(moved, es);
            let y = g.add(scaled, t);
            let ld = g.sum_cols(s);
            logdet = g.add(logdet, ld);
            h = self.assemble(g, b, fixed, y);
        }
        (h, logdet)
    }

    /// Maps base-space points back to feature space.
    pub fn inverse(&self, g: &mut Graph, p: &Bound, h: Var, a: Var) -> Result<Var> {
        let mut x = h;
        for b in self.blocks.iter().rev() {
            let ((f0, f1), (m0, m1)) = self.ranges(b);
            let fixed = g.slice_cols(x, f0, f1);
            let moved = g.slice_cols(x, m0, m1);
            let (s, t) = self.scale_shift(g, p, b, fixed, a);
            if g.value(s).iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("coupling scale is not finite".into()));
            }
            let neg = g.neg(s);
            let inv = g.exp(neg);
            if g.value(inv).iter().any(|v| *v == 0.0 || !v.is_finite()) {
                return Err(Error::Numerical("coupling block is not invertible".into()));
            }
            let centered = g.sub(moved, t);
            let orig = g.mul(centered, inv);
            x = self.assemble(g, b, fixed, orig);
        }
        Ok(x)
    }

    /// Graph-free forward pass.
    pub fn eval_forward(&self, ps: &ParamSet, x: &Mat, a: &Mat) -> (Mat, Mat) {
        let mut g = Graph::new();
        let p = ps.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let av = g.constant(a.clone());
        let (h, ld) = self.forward(&mut g, &p, xv, av);
        (g.value(h).clone(), g.value(ld).clone())
    }

    /// Graph-free inverse pass.
    pub fn eval_inverse(&self, ps: &ParamSet, h: &Mat, a: &Mat) -> Result<Mat> {
        let mut g = Graph::new();
        let p = ps.bind_frozen(&mut g);
        let hv = g.constant(h.clone());
        let av = g.constant(a.clone());
        let x = self.inverse(&mut g, &p, hv, av)?;
        Ok(g.value(x).clone())
    }
}

/// Row-wise `log N(h; mu, diag(exp(logvar)))`.
pub fn gaussian_log_density(g: &mut Graph, h: Var, mu: Var, logvar: Var) -> Var {
    let d = g.shape(h).1 as f64;
    let diff = g.sub(h, mu);
    let d2 = g.square(diff);
    let nlv = g.neg(logvar);
    let prec = g.exp(nlv);
    let maha = g.mul(d2, prec);
    let maha = g.sum_cols(maha);
    let lv_sum = g.sum_cols(logvar);
    let tot = g.add(maha, lv_sum);
    let half = g.scale(tot, -0.5);
    g.offset(half, -0.5 * d * (2.0 * std::f64::consts::PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, rng_from};
    use approx::assert_abs_diff_eq;

    fn randomized(dim: usize, seed: u64) -> (ParamSet, CouplingFlow) {
        let mut rng = rng_from(seed);
        let mut ps = ParamSet::new();
        let flow = CouplingFlow::new(&mut ps, "flow", dim, 2, 8, 4, &mut rng).unwrap();
        for id in ps.ids().collect::<Vec<_>>() {
            let shape = ps.get(id).dim();
            *ps.get_mut(id) = normal_matrix(&mut rng, shape.0, shape.1, 0.5);
        }
        (ps, flow)
    }

    #[test]
    fn fresh_flow_is_identity() {
        let mut rng = rng_from(1);
        let mut ps = ParamSet::new();
        let flow = CouplingFlow::new(&mut ps, "flow", 4, 2, 8, 3, &mut rng).unwrap();
        let x = normal_matrix(&mut rng, 5, 4, 1.0);
        let a = normal_matrix(&mut rng, 5, 2, 1.0);
        let (h, ld) = flow.eval_forward(&ps, &x, &a);
        assert_eq!(h, x);
        assert!(ld.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inverse_undoes_forward() {
        for dim in [2, 3, 5] {
            let (ps, flow) = randomized(dim, dim as u64);
            let mut rng = rng_from(10);
            let x = normal_matrix(&mut rng, 7, dim, 1.5);
            let a = normal_matrix(&mut rng, 7, 2, 1.0);
            let (h, _) = flow.eval_forward(&ps, &x, &a);
            let back = flow.eval_inverse(&ps, &h, &a).unwrap();
            assert!((&back - &x).iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn standard_normal_density_at_origin() {
        let mut g = Graph::new();
        let h = g.constant(Mat::zeros((1, 3)));
        let mu = g.constant(Mat::zeros((1, 3)));
        let lv = g.constant(Mat::zeros((1, 3)));
        let lp = gaussian_log_density(&mut g, h, mu, lv);
        assert_abs_diff_eq!(-g.item(lp), 1.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
    }

    #[test]
    fn one_dimensional_flow_is_rejected() {
        let mut ps = ParamSet::new();
        assert!(CouplingFlow::new(&mut ps, "f", 1, 1, 4, 2, &mut rng_from(0)).is_err());
    }
}
