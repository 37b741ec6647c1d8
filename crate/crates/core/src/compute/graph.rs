//! Tape-based reverse-mode differentiation over vector-valued nodes.
//!
//! A [`Graph`] is rebuilt for every utterance: each call appends a node whose
//! value is computed eagerly, so the recorded tape follows the shape of the
//! input tree. Activations are always vectors; matrices only appear as
//! parameters and are referenced by [`ParamId`] instead of being copied onto
//! the tape.
//!
//! ```
//! use chive::compute::{Graph, ParameterStore, Tensor};
//!
//! let mut store = ParameterStore::new();
//! let w = store.register("demo.w", Tensor::from_vec(1, 2, vec![2.0, -1.0])).unwrap();
//!
//! let mut g = Graph::new(&store);
//! let x = g.input(vec![3.0, 4.0]);
//! let y = g.matvec(w, x, 0);
//! let loss = g.sum_squares(y);
//! assert_eq!(g.scalar(loss), 4.0);
//!
//! let mut grads = store.zero_grads();
//! let back = g.backward(loss, &mut grads);
//! // d/dw (w.x)^2 = 2 (w.x) x
//! assert_eq!(grads.get(w).data(), &[12.0, 16.0]);
//! assert_eq!(back.wrt(x), &[8.0, -4.0]);
//! ```

use super::params::{Gradients, ParamId, ParameterStore};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatVec { w: ParamId, x: Var, col: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    ExpM1(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    SumSquares(Var),
    SquaredDistance(Var, Var),
    LstmCell { pre: Var, c: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
}

/// Gradients of the loss with respect to every node on the tape.
pub struct NodeGrads {
    grads: Vec<Vec<f64>>,
}

impl NodeGrads {
    /// Gradient with respect to `v`; empty when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn params(&self) -> &'p ParameterStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.dim(v), 1);
        self.nodes[v.0].value[0]
    }

    /// First node (in tape order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<Var> {
        self.nodes
            .iter()
            .position(|n| n.value.iter().any(|x| !x.is_finite()))
            .map(Var)
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    /// Places a parameter on the tape as a flat vector (row-major for matrices).
    pub fn param(&mut self, p: ParamId) -> Var {
        let value = self.params.get(p).data().to_vec();
        self.push(value, Op::Param(p))
    }

    /// `W[:, col..col + len(x)] * x`.
    pub fn matvec(&mut self, w: ParamId, x: Var, col: usize) -> Var {
        let wt = self.params.get(w);
        let xv = &self.nodes[x.0].value;
        let (rows, cols) = wt.shape();
        assert!(
            col + xv.len() <= cols,
            "matvec on {}: column range {}..{} exceeds {} columns",
            self.params.name(w),
            col,
            col + xv.len(),
            cols
        );
        let data = wt.data();
        let mut out = vec![0.0; rows];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &data[r * cols + col..r * cols + col + xv.len()];
            *o = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        self.push(out, Op::MatVec { w, x, col })
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "elementwise op on unequal lengths");
        av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let mut v = self.nodes[xs[0].0].value.clone();
        for x in &xs[1..] {
            let xv = &self.nodes[x.0].value;
            assert_eq!(v.len(), xv.len(), "add_n on unequal lengths");
            v.iter_mut().zip(xv).for_each(|(a, b)| *a += b);
        }
        self.push(v, Op::AddN(xs.to_vec()))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.nodes[x.0].value.iter().map(|a| a * factor).collect();
        self.push(v, Op::Scale(x, factor))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.iter().map(|a| a.tanh()).collect();
        self.push(v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.iter().map(|a| sigmoid(*a)).collect();
        self.push(v, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.iter().map(|a| a.exp()).collect();
        self.push(v, Op::Exp(x))
    }

    /// `exp(x) - 1` without cancellation near zero.
    pub fn exp_m1(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.iter().map(|a| a.exp_m1()).collect();
        self.push(v, Op::ExpM1(x))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let mut v = Vec::new();
        for x in xs {
            v.extend_from_slice(&self.nodes[x.0].value);
        }
        self.push(v, Op::Concat(xs.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    /// Scalar sum of the components of `x`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().map(|a| a * a).sum();
        self.push(vec![s], Op::SumSquares(x))
    }

    /// Scalar `sum_i (a_i - b_i)^2`.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Var {
        let s = self.binary(a, b, |x, y| (x - y) * (x - y)).iter().sum();
        self.push(vec![s], Op::SquaredDistance(a, b))
    }

    /// Fused LSTM pointwise update.
    ///
    /// `pre` holds the gate pre-activations in `[input, forget, cell, output]`
    /// order, each of width `h`; `c` is the previous cell state. The result is
    /// the `2h` vector `[c'; h']`.
    pub fn lstm_cell(&mut self, pre: Var, c: Var) -> Var {
        let pv = &self.nodes[pre.0].value;
        let cv = &self.nodes[c.0].value;
        let h = cv.len();
        assert_eq!(pv.len(), 4 * h, "lstm pre-activation must be 4x state width");
        let mut out = vec![0.0; 2 * h];
        for k in 0..h {
            let i = sigmoid(pv[k]);
            let f = sigmoid(pv[h + k]);
            let g = pv[2 * h + k].tanh();
            let o = sigmoid(pv[3 * h + k]);
            let c_new = f * cv[k] + i * g;
            out[k] = c_new;
            out[h + k] = o * c_new.tanh();
        }
        self.push(out, Op::LstmCell { pre, c })
    }

    /// Reverse sweep from the scalar `loss`. Parameter gradients are added to
    /// `param_grads`; per-node gradients are returned.
    pub fn backward(&self, loss: Var, param_grads: &mut Gradients) -> NodeGrads {
        assert_eq!(self.dim(loss), 1, "backward requires a scalar loss");
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        grads[loss.0] = vec![1.0];

        fn acc(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
            let g = &mut grads[v.0];
            if g.is_empty() {
                g.resize(len, 0.0);
            }
            g
        }

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let gy = std::mem::take(&mut grads[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    let pg = param_grads.get_mut(*p);
                    pg.data_mut().iter_mut().zip(&gy).for_each(|(a, b)| *a += b);
                }
                Op::MatVec { w, x, col } => {
                    let wt = self.params.get(*w);
                    let cols = wt.cols();
                    let wd = wt.data();
                    let xv = &self.nodes[x.0].value;
                    let n = xv.len();
                    {
                        let gx = acc(&mut grads, *x, n);
                        for (r, gr) in gy.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            let row = &wd[r * cols + col..r * cols + col + n];
                            gx.iter_mut().zip(row).for_each(|(a, b)| *a += gr * b);
                        }
                    }
                    let gw = param_grads.get_mut(*w).data_mut();
                    for (r, gr) in gy.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        let row = &mut gw[r * cols + col..r * cols + col + n];
                        row.iter_mut().zip(xv).for_each(|(a, b)| *a += gr * b);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let g = acc(&mut grads, v, gy.len());
                        g.iter_mut().zip(&gy).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Sub(a, b) => {
                    let g = acc(&mut grads, *a, gy.len());
                    g.iter_mut().zip(&gy).for_each(|(x, y)| *x += y);
                    let g = acc(&mut grads, *b, gy.len());
                    g.iter_mut().zip(&gy).for_each(|(x, y)| *x -= y);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let g = acc(&mut grads, *a, gy.len());
                    for k in 0..gy.len() {
                        g[k] += gy[k] * bv[k];
                    }
                    let g = acc(&mut grads, *b, gy.len());
                    for k in 0..gy.len() {
                        g[k] += gy[k] * av[k];
                    }
                }
                Op::AddN(xs) => {
                    for v in xs {
                        let g = acc(&mut grads, *v, gy.len());
                        g.iter_mut().zip(&gy).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Scale(x, factor) => {
                    let g = acc(&mut grads, *x, gy.len());
                    g.iter_mut().zip(&gy).for_each(|(a, b)| *a += factor * b);
                }
                Op::Tanh(x) => {
                    let g = acc(&mut grads, *x, gy.len());
                    for k in 0..gy.len() {
                        let t = node.value[k];
                        g[k] += gy[k] * (1.0 - t * t);
                    }
                }
                Op::Sigmoid(x) => {
                    let g = acc(&mut grads, *x, gy.len());
                    for k in 0..gy.len() {
                        let s = node.value[k];
                        g[k] += gy[k] * s * (1.0 - s);
                    }
                }
                Op::Exp(x) => {
                    let g = acc(&mut grads, *x, gy.len());
                    for k in 0..gy.len() {
                        g[k] += gy[k] * node.value[k];
                    }
                }
                Op::ExpM1(x) => {
                    let g = acc(&mut grads, *x, gy.len());
                    for k in 0..gy.len() {
                        g[k] += gy[k] * (node.value[k] + 1.0);
                    }
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for v in xs {
                        let n = self.nodes[v.0].value.len();
                        let g = acc(&mut grads, *v, n);
                        g.iter_mut()
                            .zip(&gy[offset..offset + n])
                            .for_each(|(a, b)| *a += b);
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.nodes[x.0].value.len();
                    let g = acc(&mut grads, *x, n);
                    g[*start..*start + gy.len()]
                        .iter_mut()
                        .zip(&gy)
                        .for_each(|(a, b)| *a += b);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    let g = acc(&mut grads, *x, n);
                    g.iter_mut().for_each(|a| *a += gy[0]);
                }
                Op::SumSquares(x) => {
                    let xv = &self.nodes[x.0].value;
                    let g = acc(&mut grads, *x, xv.len());
                    g.iter_mut().zip(xv).for_each(|(a, b)| *a += 2.0 * gy[0] * b);
                }
                Op::SquaredDistance(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let diff: Vec<f64> = av.iter().zip(bv).map(|(x, y)| 2.0 * gy[0] * (x - y)).collect();
                    let g = acc(&mut grads, *a, diff.len());
                    g.iter_mut().zip(&diff).for_each(|(x, d)| *x += d);
                    let g = acc(&mut grads, *b, diff.len());
                    g.iter_mut().zip(&diff).for_each(|(x, d)| *x -= d);
                }
                Op::LstmCell { pre, c } => {
                    let pv = &self.nodes[pre.0].value;
                    let cv = &self.nodes[c.0].value;
                    let h = cv.len();
                    let mut gpre = vec![0.0; 4 * h];
                    let mut gc = vec![0.0; h];
                    for k in 0..h {
                        let i = sigmoid(pv[k]);
                        let f = sigmoid(pv[h + k]);
                        let gt = pv[2 * h + k].tanh();
                        let o = sigmoid(pv[3 * h + k]);
                        let tc = node.value[k].tanh();
                        let dh = gy[h + k];
                        let dc = gy[k] + dh * o * (1.0 - tc * tc);
                        gpre[k] = dc * gt * i * (1.0 - i);
                        gpre[h + k] = dc * cv[k] * f * (1.0 - f);
                        gpre[2 * h + k] = dc * i * (1.0 - gt * gt);
                        gpre[3 * h + k] = dh * tc * o * (1.0 - o);
                        gc[k] = dc * f;
                    }
                    let g = acc(&mut grads, *pre, 4 * h);
                    g.iter_mut().zip(&gpre).for_each(|(a, b)| *a += b);
                    let g = acc(&mut grads, *c, h);
                    g.iter_mut().zip(&gc).for_each(|(a, b)| *a += b);
                }
            }
            grads[idx] = gy;
        }
        grads.resize(self.nodes.len(), Vec::new());
        NodeGrads { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::Tensor;

    fn numeric_input_grad(
        x0: &[f64],
        f: impl Fn(&mut Graph, Var) -> Var,
        store: &ParameterStore,
    ) -> Vec<f64> {
        let eps = 1e-6;
        (0..x0.len())
            .map(|k| {
                let mut xp = x0.to_vec();
                xp[k] += eps;
                let mut xm = x0.to_vec();
                xm[k] -= eps;
                let mut g = Graph::new(store);
                let v = g.input(xp);
                let lp = f(&mut g, v);
                let lp = g.scalar(lp);
                let mut g = Graph::new(store);
                let v = g.input(xm);
                let lm = f(&mut g, v);
                let lm = g.scalar(lm);
                (lp - lm) / (2.0 * eps)
            })
            .collect()
    }

    fn check(x0: Vec<f64>, f: impl Fn(&mut Graph, Var) -> Var) {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(x0.clone());
        let loss = f(&mut g, x);
        let mut pg = store.zero_grads();
        let back = g.backward(loss, &mut pg);
        let analytic = back.wrt(x).to_vec();
        let numeric = numeric_input_grad(&x0, &f, &store);
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
            assert!(rel < 1e-6, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn concat_length_is_sum_of_parts() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(vec![1.0, 2.0]);
        let b = g.input(vec![3.0]);
        let c = g.concat(&[a, b]);
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn identity_affine_returns_input() {
        let mut store = ParameterStore::new();
        let mut eye = Tensor::zeros(3, 3);
        for k in 0..3 {
            eye.data_mut()[k * 3 + k] = 1.0;
        }
        let w = store.register("t.w", eye).unwrap();
        let b = store.register("t.b", Tensor::vector(vec![0.0; 3])).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(vec![0.5, -2.0, 7.0]);
        let wx = g.matvec(w, x, 0);
        let bias = g.param(b);
        let y = g.add(wx, bias);
        assert_eq!(g.value(y), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(vec![3.0, -1.0, 0.25, 8.0]);
        let s = g.sum(x);
        let back = g.backward(s, &mut store.zero_grads());
        assert_eq!(back.wrt(x), &[1.0; 4]);
    }

    #[test]
    fn elementwise_gradients_match_central_differences() {
        let x0 = vec![0.3, -1.2, 0.7, 2.1];
        check(x0.clone(), |g, x| {
            let t = g.tanh(x);
            g.sum(t)
        });
        check(x0.clone(), |g, x| {
            let t = g.sigmoid(x);
            g.sum_squares(t)
        });
        check(x0.clone(), |g, x| {
            let t = g.exp(x);
            g.sum(t)
        });
        check(x0.clone(), |g, x| {
            let t = g.exp_m1(x);
            g.sum_squares(t)
        });
        check(x0.clone(), |g, x| {
            let y = g.scale(x, -1.5);
            let z = g.mul(x, y);
            let s = g.slice(z, 1, 2);
            g.sum_squares(s)
        });
        check(x0.clone(), |g, x| {
            let c = g.input(vec![1.0, 2.0, 3.0, 4.0]);
            let a = g.add_n(&[x, c, x]);
            let d = g.sub(a, c);
            g.squared_distance(d, c)
        });
        check(x0, |g, x| {
            let cat = g.concat(&[x, x]);
            let t = g.tanh(cat);
            g.sum_squares(t)
        });
    }

    #[test]
    fn lstm_cell_gradient_matches_central_differences() {
        let pre0: Vec<f64> = (0..8).map(|k| 0.37 * k as f64 - 1.1).collect();
        let c0 = vec![0.4, -0.9];
        check(pre0, |g, pre| {
            let c = g.input(vec![0.4, -0.9]);
            let out = g.lstm_cell(pre, c);
            let w = g.input(vec![0.3, -0.2, 0.9, 1.4]);
            let y = g.mul(out, w);
            g.sum(y)
        });
        check(c0, |g, c| {
            let pre = g.input((0..8).map(|k| 0.2 * k as f64 - 0.6).collect());
            let out = g.lstm_cell(pre, c);
            g.sum_squares(out)
        });
    }

    #[test]
    fn matvec_respects_column_offset() {
        let mut store = ParameterStore::new();
        let w = store
            .register("t.w", Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
            .unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(vec![1.0, -1.0]);
        let y = g.matvec(w, x, 1);
        assert_eq!(g.value(y), &[-1.0, -1.0]);
        let s = g.sum(y);
        let mut grads = store.zero_grads();
        g.backward(s, &mut grads);
        assert_eq!(grads.get(w).data(), &[0.0, 1.0, -1.0, 0.0, 1.0, -1.0]);
    }
}
