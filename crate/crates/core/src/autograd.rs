//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! then walks the record in reverse. Nodes are created in topological order,
//! so no explicit sort is needed. Binary element-wise operations broadcast
//! along any axis of length one (rows, columns or both).

use ndarray::{Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Unary {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Abs,
    Square,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("cannot broadcast {a:?} with {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

fn shape_of(m: &Mat) -> (usize, usize) {
    (m.nrows(), m.ncols())
}

fn zip_broadcast(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    let shape = broadcast_shape(shape_of(a), shape_of(b));
    let av = a.broadcast(shape).expect("broadcast lhs");
    let bv = b.broadcast(shape).expect("broadcast rhs");
    let mut out = Mat::zeros(shape);
    Zip::from(&mut out)
        .and(&av)
        .and(&bv)
        .for_each(|o, &x, &y| *o = f(x, y));
    out
}

/// Sums `g` down to `shape`, undoing a broadcast.
fn reduce_to(g: Mat, shape: (usize, usize)) -> Mat {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Unary(a, _)
            | Op::Sum(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Transpose(a)
            | Op::SliceCols(a, _)
            | Op::Gather(a, _)
            | Op::LogSoftmax(a)
            | Op::Pick(a, _) => self.nodes[a.0].needs_grad,
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Mat) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as data: no gradient flows into it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Mat::from_elem((1, 1), value))
    }

    /// Copies the current value of `v` into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape_of(self.value(v))
    }

    /// Value of a 1×1 node.
    pub fn item(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1, "item() on a non-scalar node");
        m[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = zip_broadcast(self.value(a), self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = zip_broadcast(self.value(a), self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = zip_broadcast(self.value(a), self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = zip_broadcast(self.value(a), self.value(b), |x, y| x / y);
        self.push(value, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::Offset(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let x = self.value(a);
        let value = match kind {
            Unary::LeakyRelu(slope) => x.mapv(|v| if v > 0.0 { v } else { slope * v }),
            Unary::Tanh => x.mapv(f64::tanh),
            Unary::Sigmoid => x.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            Unary::Exp => x.mapv(f64::exp),
            Unary::Log => x.mapv(f64::ln),
            Unary::Sqrt => x.mapv(f64::sqrt),
            Unary::Abs => x.mapv(f64::abs),
            Unary::Square => x.mapv(|v| v * v),
        };
        self.push(value, Op::Unary(a, kind))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::LeakyRelu(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column-wise sum over rows: r×c → 1×c.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumRows(a))
    }

    /// Row-wise sum over columns: r×c → r×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(a))
    }

    /// Mean over rows: r×c → 1×c.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).nrows().max(1) as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self
            .value(a)
            .slice(ndarray::s![.., start..end])
            .to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    /// Rows of `a` in the order given by `rows`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        self.push(value, Op::Gather(a, rows.to_vec()))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(value, Op::LogSoftmax(a))
    }

    /// `out[i] = a[i, cols[i]]`, an r×1 node.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), cols.len(), "pick: one column index per row");
        let value = Mat::from_shape_fn((cols.len(), 1), |(i, _)| x[[i, cols[i]]]);
        self.push(value, Op::Pick(a, cols.to_vec()))
    }

    /// Row-wise maximum, r×1; the gradient flows to the first maximal entry.
    pub fn row_max(&mut self, a: Var) -> Var {
        let cols: Vec<usize> = self
            .value(a)
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect();
        self.pick(a, &cols)
    }

    /// Mean cross-entropy of row-wise logits against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lsm = self.log_softmax(logits);
        let picked = self.pick(lsm, targets);
        let m = self.mean(picked);
        self.neg(m)
    }

    /// Squared Euclidean norm of every row: r×c → r×1.
    pub fn row_sq_norms(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        self.sum_cols(sq)
    }

    /// Row-wise cosine similarity between equally shaped matrices: r×1.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Var {
        let ab = self.mul(a, b);
        let dot = self.sum_cols(ab);
        let na = self.row_sq_norms(a);
        let nb = self.row_sq_norms(b);
        let prod = self.mul(na, nb);
        let denom = self.sqrt(prod);
        self.div(dot, denom)
    }

    /// Pairwise cosine similarity matrix: (r1×c, r2×c) → r1×r2.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Var {
        let na = self.row_sq_norms(a);
        let na = self.sqrt(na);
        let nb = self.row_sq_norms(b);
        let nb = self.sqrt(nb);
        let an = self.div(a, na);
        let bn = self.div(b, nb);
        let bt = self.transpose(bn);
        self.matmul(an, bt)
    }

    /// Gradient of the scalar `output` with respect to every tracked node.
    pub fn backward(&self, output: Var) -> Gradients {
        let n = output.0 + 1;
        let mut grads: Vec<Option<Mat>> = vec![None; n];
        grads[output.0] = Some(Mat::ones(self.shape(output)));

        let acc = |grads: &mut Vec<Option<Mat>>, v: Var, g: Mat| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        };

        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(&mut grads, *a, g.dot(&bv.t()));
                    acc(&mut grads, *b, av.t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), self.shape(*a)));
                    acc(&mut grads, *b, reduce_to(g, self.shape(*b)));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, reduce_to(g.clone(), self.shape(*a)));
                    acc(&mut grads, *b, reduce_to(-g, self.shape(*b)));
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = zip_broadcast(&g, bv, |x, y| x * y);
                    let gb = zip_broadcast(&g, av, |x, y| x * y);
                    acc(&mut grads, *a, reduce_to(ga, self.shape(*a)));
                    acc(&mut grads, *b, reduce_to(gb, self.shape(*b)));
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = zip_broadcast(&g, bv, |x, y| x / y);
                    // d(a/b)/db = -(a/b)/b
                    let gb = {
                        let t = zip_broadcast(&g, &node.value, |x, y| -x * y);
                        zip_broadcast(&t, bv, |x, y| x / y)
                    };
                    acc(&mut grads, *a, reduce_to(ga, self.shape(*a)));
                    acc(&mut grads, *b, reduce_to(gb, self.shape(*b)));
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Offset(a) => acc(&mut grads, *a, g),
                Op::Unary(a, kind) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut out = g;
                    match kind {
                        Unary::LeakyRelu(slope) => {
                            Zip::from(&mut out).and(x).for_each(|o, &xv| {
                                if xv <= 0.0 {
                                    *o *= slope
                                }
                            });
                        }
                        Unary::Tanh => Zip::from(&mut out).and(y).for_each(|o, &yv| *o *= 1.0 - yv * yv),
                        Unary::Sigmoid => Zip::from(&mut out).and(y).for_each(|o, &yv| *o *= yv * (1.0 - yv)),
                        Unary::Exp => Zip::from(&mut out).and(y).for_each(|o, &yv| *o *= yv),
                        Unary::Log => Zip::from(&mut out).and(x).for_each(|o, &xv| *o /= xv),
                        Unary::Sqrt => Zip::from(&mut out).and(y).for_each(|o, &yv| {
                            *o = if yv > 0.0 { *o * 0.5 / yv } else { 0.0 }
                        }),
                        Unary::Abs => Zip::from(&mut out).and(x).for_each(|o, &xv| {
                            *o *= if xv > 0.0 {
                                1.0
                            } else if xv < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }),
                        Unary::Square => Zip::from(&mut out).and(x).for_each(|o, &xv| *o *= 2.0 * xv),
                    }
                    acc(&mut grads, *a, out);
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    acc(&mut grads, *a, Mat::from_elem(self.shape(*a), s));
                }
                Op::SumRows(a) => {
                    let shape = self.shape(*a);
                    let full = g.broadcast(shape).expect("sum_rows grad").to_owned();
                    acc(&mut grads, *a, full);
                }
                Op::SumCols(a) => {
                    let shape = self.shape(*a);
                    let full = g.broadcast(shape).expect("sum_cols grad").to_owned();
                    acc(&mut grads, *a, full);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        let piece = g.slice(ndarray::s![.., start..start + w]).to_owned();
                        acc(&mut grads, *p, piece);
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        let piece = g.slice(ndarray::s![start..start + h, ..]).to_owned();
                        acc(&mut grads, *p, piece);
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut full = Mat::zeros(self.shape(*a));
                    let w = g.ncols();
                    full.slice_mut(ndarray::s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::Gather(a, rows) => {
                    let mut full = Mat::zeros(self.shape(*a));
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = full.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(&mut grads, *a, full);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let soft = y.mapv(f64::exp);
                    let out = &g - &(&soft * &gsum);
                    acc(&mut grads, *a, out);
                }
                Op::Pick(a, cols) => {
                    let mut full = Mat::zeros(self.shape(*a));
                    for (i, &c) in cols.iter().enumerate() {
                        full[[i, c]] += g[[i, 0]];
                    }
                    acc(&mut grads, *a, full);
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Mat) -> f64, x: &Mat) -> Mat {
        let h = 1e-6;
        let mut out = Mat::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            out[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        out
    }

    fn check(build: impl Fn(&mut Graph, Var) -> Var, x: Mat) {
        let mut g = Graph::new();
        let v = g.param(x.clone());
        let out = build(&mut g, v);
        let grads = g.backward(out);
        let analytic = grads.get(v).unwrap().clone();
        let numeric = numeric_grad(
            |m| {
                let mut g = Graph::new();
                let v = g.param(m.clone());
                let out = build(&mut g, v);
                g.item(out)
            },
            &x,
        );
        let err = (&analytic - &numeric).mapv(f64::abs).sum();
        assert!(err < 1e-6, "analytic {analytic:?} numeric {numeric:?}");
    }

    #[test]
    fn broadcast_add_and_mul_grads() {
        check(
            |g, v| {
                let row = g.constant(array![[1.0, -2.0, 0.5]]);
                let col = g.constant(array![[2.0], [3.0]]);
                let a = g.add(v, row);
                let b = g.mul(a, col);
                let c = g.square(b);
                g.sum(c)
            },
            array![[0.3, 0.1, -0.2], [1.0, 0.7, 0.4]],
        );
        check(
            |g, v| {
                let base = g.constant(array![[1.0, 2.0], [3.0, 4.0]]);
                let s = g.sum_rows(v);
                let p = g.mul(base, s);
                g.sum(p)
            },
            array![[0.5, -0.5], [1.5, 2.0]],
        );
    }

    #[test]
    fn matmul_softmax_and_division_grads() {
        check(
            |g, v| {
                let w = g.constant(array![[0.2, -0.4, 1.0], [0.3, 0.8, -0.6]]);
                let logits = g.matmul(v, w);
                g.cross_entropy(logits, &[2, 0])
            },
            array![[0.5, -1.0], [1.5, 0.25]],
        );
        check(
            |g, v| {
                let other = g.constant(array![[1.0, 2.0, -1.0], [0.5, -0.5, 3.0]]);
                let c = g.cosine_matrix(v, other);
                let c = g.square(c);
                g.sum(c)
            },
            array![[0.3, -0.2, 0.9], [1.2, 0.4, -0.7]],
        );
    }

    #[test]
    fn structural_ops_grads() {
        check(
            |g, v| {
                let t = g.transpose(v);
                let a = g.slice_cols(t, 0, 1);
                let b = g.gather_rows(v, &[1, 1, 0]);
                let bc = g.sum_cols(b);
                let joined = g.concat_cols(&[a, v]);
                let r = g.concat_rows(&[joined, joined]);
                let e = g.tanh(r);
                let s1 = g.sum(e);
                let s2 = g.sum(bc);
                let s2 = g.exp(s2);
                let l = g.ln(s2);
                g.add(s1, l)
            },
            array![[0.3, -0.2], [0.1, 0.6]],
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(array![[1.0, 2.0]]);
        let p = g.param(array![[3.0, 4.0]]);
        let m = g.mul(c, p);
        let s = g.sum(m);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let mut g = Graph::new();
        let p = g.param(array![[0.0, 4.0]]);
        let r = g.sqrt(p);
        let s = g.sum(r);
        let grads = g.backward(s);
        assert_eq!(grads.get(p).unwrap(), &array![[0.0, 0.25]]);
    }

    #[test]
    fn row_max_routes_gradient_to_first_maximum() {
        let mut g = Graph::new();
        let p = g.param(array![[1.0, 3.0, 3.0], [-2.0, -5.0, -1.0]]);
        let m = g.row_max(p);
        assert_eq!(g.value(m), &array![[3.0], [-1.0]]);
        let s = g.sum(m);
        let grads = g.backward(s);
        assert_eq!(grads.get(p).unwrap(), &array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }
}
