//! Parameters, layers and optimizers on top of the autograd tape.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Gradients, Mat, Var};
use crate::rng::normal_matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named collection of trainable matrices.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids whose names start with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids().filter(|id| self.names[id.0].starts_with(prefix)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Registers every parameter as a tracked leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|m| g.param(m.clone())).collect(),
        }
    }

    /// Registers every parameter as a constant of `g`.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|m| g.constant(m.clone())).collect(),
        }
    }

    pub fn to_named(&self) -> BTreeMap<String, Mat> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }
}

/// Graph handles of a [`ParamSet`] for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Mat {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    normal_matrix(rng, fan_in, fan_out, std)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = ps.add(format!("{name}.w"), xavier(rng, fan_in, fan_out));
        let b = ps.add(format!("{name}.b"), Array2::zeros((1, fan_out)));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = g.matmul(x, p.var(self.w));
        g.add(h, p.var(self.b))
    }

    /// Forward pass without a graph.
    pub fn eval(&self, ps: &ParamSet, x: &Mat) -> Mat {
        x.dot(ps.get(self.w)) + ps.get(self.b)
    }
}

pub const LEAK: f64 = 0.2;

/// Two-layer perceptron with a leaky-rectifier hidden layer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            l1: Linear::new(ps, &format!("{name}.l1"), fan_in, hidden, rng),
            l2: Linear::new(ps, &format!("{name}.l2"), hidden, fan_out, rng),
        }
    }

    pub fn hidden(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.l1.forward(g, p, x);
        g.leaky_relu(h, LEAK)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.hidden(g, p, x);
        self.l2.forward(g, p, h)
    }

    /// Returns `(hidden activation, output)`.
    pub fn forward_with_hidden(&self, g: &mut Graph, p: &Bound, x: Var) -> (Var, Var) {
        let h = self.hidden(g, p, x);
        let out = self.l2.forward(g, p, h);
        (h, out)
    }

    pub fn eval_hidden(&self, ps: &ParamSet, x: &Mat) -> Mat {
        self.l1.eval(ps, x).mapv(|v| if v > 0.0 { v } else { LEAK * v })
    }

    pub fn eval(&self, ps: &ParamSet, x: &Mat) -> Mat {
        let h = self.eval_hidden(ps, x);
        self.l2.eval(ps, &h)
    }

    pub fn output_dim(&self) -> usize {
        self.l2.fan_out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<usize, Mat>,
    v: BTreeMap<usize, Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update to every id in `ids` that received a gradient.
    pub fn step(&mut self, ps: &mut ParamSet, bound: &Bound, grads: &Gradients, ids: &[ParamId]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for &id in ids {
            let Some(g) = grads.get(bound.var(id)) else {
                continue;
            };
            self.apply(ps, id, g, bc1, bc2);
        }
    }

    /// Applies one update from explicit gradients keyed by parameter id.
    pub fn step_direct(&mut self, ps: &mut ParamSet, grads: &[(ParamId, Mat)]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads {
            self.apply(ps, *id, g, bc1, bc2);
        }
    }

    fn apply(&mut self, ps: &mut ParamSet, id: ParamId, g: &Mat, bc1: f64, bc2: f64) {
        let shape = g.raw_dim();
        let m = self.m.entry(id.0).or_insert_with(|| Mat::zeros(shape.clone()));
        let v = self.v.entry(id.0).or_insert_with(|| Mat::zeros(shape));
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let p = ps.get_mut(id);
        ndarray::Zip::from(p)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
    }
}

/// Stochastic gradient descent with classical momentum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<usize, Mat>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, ps: &mut ParamSet, bound: &Bound, grads: &Gradients, ids: &[ParamId]) {
        for &id in ids {
            let Some(g) = grads.get(bound.var(id)) else {
                continue;
            };
            let vel = self
                .velocity
                .entry(id.0)
                .or_insert_with(|| Mat::zeros(g.raw_dim()));
            *vel *= self.momentum;
            *vel += g;
            let p = ps.get_mut(id);
            p.scaled_add(-self.lr, vel);
        }
    }
}
