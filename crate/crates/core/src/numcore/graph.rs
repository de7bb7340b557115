//! Reverse-mode gradient tape over small dense vectors.
//!
//! Every value on the tape is a flat `Vec<f64>`; scalars are length-1 vectors.
//! Parameters are read straight out of a borrowed [`ParameterStore`], and
//! [`Graph::backward`] returns gradient blocks aligned with that store.
//!
//! Ops never return `Result`. A dimension mismatch or a non-finite value is
//! recorded on the graph and reported by [`Graph::status`], so model code can
//! be written as straight-line arithmetic.

use super::params::{Gradients, ParamId, ParameterStore};
use crate::error::{AcgError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Row { param: ParamId, row: usize },
    /// `W[:, col..col + len(x)] · x`
    MatVec { param: ParamId, col: usize, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    Ln(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Dot(Var, Var),
    Stack(Vec<Var>),
    Sum(Vec<Var>),
    SumElems(Var),
    SumAt { x: Var, indices: Vec<usize> },
    Gather { x: Var, indices: Vec<usize> },
    Softmax(Var),
    Normalize(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::Row { .. } => "row",
            Op::MatVec { .. } => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::OneMinus(_) => "one_minus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Square(_) => "square",
            Op::Ln(_) => "ln",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Dot(..) => "dot",
            Op::Stack(_) => "stack",
            Op::Sum(_) => "sum",
            Op::SumElems(_) => "sum_elems",
            Op::SumAt { .. } => "sum_at",
            Op::Gather { .. } => "gather",
            Op::Softmax(_) => "softmax",
            Op::Normalize(_) => "normalize",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// A gradient tape bound to one parameter store.
#[derive(Debug)]
pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    param_cache: Vec<Option<Var>>,
    fault: Option<Fault>,
}

#[derive(Debug, Clone)]
enum Fault {
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },
    NonFinite(String),
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(1024),
            param_cache: vec![None; store.len()],
            fault: None,
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First recorded failure, if any op misbehaved.
    pub fn status(&self) -> Result<()> {
        match &self.fault {
            None => Ok(()),
            Some(Fault::Dimension {
                context,
                expected,
                actual,
            }) => Err(AcgError::dim(context.clone(), *expected, *actual)),
            Some(Fault::NonFinite(op)) => Err(AcgError::NonFinite(op.clone())),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn fail_dim(&mut self, context: &str, expected: usize, actual: usize) {
        if self.fault.is_none() {
            self.fault = Some(Fault::Dimension {
                context: context.to_string(),
                expected,
                actual,
            });
        }
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        if self.fault.is_none() && value.iter().any(|v| !v.is_finite()) {
            self.fault = Some(Fault::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.push(vec![value], Op::Constant)
    }

    /// Whole parameter as a flat vector; cached per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_cache[id.0] {
            return v;
        }
        let value = self.store.value(id).data().to_vec();
        let v = self.push(value, Op::Param(id));
        self.param_cache[id.0] = Some(v);
        v
    }

    /// One row of a matrix parameter (embedding lookup).
    pub fn row(&mut self, id: ParamId, row: usize) -> Var {
        let t = self.store.value(id);
        if row >= t.rows() {
            self.fail_dim("embedding row", t.rows(), row);
            let c = t.cols();
            return self.push(vec![0.0; c], Op::Constant);
        }
        let value = t.row(row).to_vec();
        self.push(value, Op::Row { param: id, row })
    }

    /// `W[:, col..col + len(x)] · x` for a matrix parameter `W`.
    pub fn matvec_block(&mut self, id: ParamId, col: usize, x: Var) -> Var {
        let w = self.store.value(id);
        let (rows, cols) = (w.rows(), w.cols());
        let xl = self.nodes[x.0].value.len();
        if col + xl > cols {
            self.fail_dim("matvec columns", cols - col.min(cols), xl);
            return self.push(vec![0.0; rows], Op::Constant);
        }
        let xv = &self.nodes[x.0].value;
        let wd = w.data();
        let mut out = vec![0.0; rows];
        for (r, o) in out.iter_mut().enumerate() {
            let wr = &wd[r * cols + col..r * cols + col + xl];
            *o = wr.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        self.push(out, Op::MatVec { param: id, col, x })
    }

    pub fn matvec(&mut self, id: ParamId, x: Var) -> Var {
        self.matvec_block(id, 0, x)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Option<Vec<f64>> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.len() != bv.len() {
            let (e, g) = (av.len(), bv.len());
            self.fail_dim(name, e, g);
            return None;
        }
        Some(av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        match self.binary(a, b, "add", |x, y| x + y) {
            Some(v) => self.push(v, Op::Add(a, b)),
            None => self.constant(vec![0.0; self.dim(a)]),
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        match self.binary(a, b, "sub", |x, y| x - y) {
            Some(v) => self.push(v, Op::Sub(a, b)),
            None => self.constant(vec![0.0; self.dim(a)]),
        }
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        match self.binary(a, b, "mul", |x, y| x * y) {
            Some(v) => self.push(v, Op::Mul(a, b)),
            None => self.constant(vec![0.0; self.dim(a)]),
        }
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x * s).collect();
        self.push(v, Op::Scale(a, s))
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| 1.0 - x).collect();
        self.push(v, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|&x| super::logistic(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x * x).collect();
        self.push(v, Op::Square(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        self.push(v, Op::Ln(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::new();
        for p in parts {
            v.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xl = self.dim(x);
        if start + len > xl {
            self.fail_dim("slice", xl, start + len);
            return self.constant(vec![0.0; len]);
        }
        let v = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        match self.binary(a, b, "dot", |x, y| x * y) {
            Some(v) => self.push(vec![v.iter().sum()], Op::Dot(a, b)),
            None => self.scalar_constant(0.0),
        }
    }

    /// Collects scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let v = scalars.iter().map(|s| self.nodes[s.0].value[0]).collect();
        self.push(v, Op::Stack(scalars.to_vec()))
    }

    /// Elementwise sum of equal-length vectors.
    pub fn sum(&mut self, items: &[Var]) -> Var {
        let n = self.dim(items[0]);
        let mut v = vec![0.0; n];
        for it in items {
            let iv = &self.nodes[it.0].value;
            if iv.len() != n {
                let l = iv.len();
                self.fail_dim("sum", n, l);
                return self.constant(vec![0.0; n]);
            }
            for (o, x) in v.iter_mut().zip(iv) {
                *o += x;
            }
        }
        self.push(v, Op::Sum(items.to_vec()))
    }

    pub fn sum_elems(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::SumElems(x))
    }

    /// Scalar sum of selected elements.
    pub fn sum_at(&mut self, x: Var, indices: &[usize]) -> Var {
        let xv = &self.nodes[x.0].value;
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            let l = xv.len();
            self.fail_dim("sum_at index", l, bad);
            return self.scalar_constant(0.0);
        }
        let s = indices.iter().map(|&i| xv[i]).sum();
        self.push(vec![s], Op::SumAt { x, indices: indices.to_vec() })
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        self.sum_at(x, &[index])
    }

    /// `out[i] = x[indices[i]]`
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Var {
        let xv = &self.nodes[x.0].value;
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            let l = xv.len();
            self.fail_dim("gather index", l, bad);
            return self.constant(vec![0.0; indices.len()]);
        }
        let v = indices.iter().map(|&i| xv[i]).collect();
        self.push(v, Op::Gather { x, indices: indices.to_vec() })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = super::softmax_unchecked(&self.nodes[x.0].value);
        self.push(v, Op::Softmax(x))
    }

    /// `x / sum(x)`.
    pub fn normalize(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let s: f64 = xv.iter().sum();
        let v = xv.iter().map(|a| a / s).collect();
        self.push(v, Op::Normalize(x))
    }

    /// `Σ_i weights[i] · items[i]`
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let wl = self.dim(weights);
        if wl != items.len() {
            self.fail_dim("weighted_sum", items.len(), wl);
            let d = items.first().map(|i| self.dim(*i)).unwrap_or(0);
            return self.constant(vec![0.0; d]);
        }
        let d = self.dim(items[0]);
        let mut v = vec![0.0; d];
        for (k, it) in items.iter().enumerate() {
            let w = self.nodes[weights.0].value[k];
            for (o, x) in v.iter_mut().zip(&self.nodes[it.0].value) {
                *o += w * x;
            }
        }
        self.push(
            v,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    /// Gradient of the scalar `output` (scaled by `seed`) with respect to every
    /// parameter of the store.
    pub fn backward(&self, output: Var, seed: f64) -> Result<Gradients> {
        self.status()?;
        let mut pgrads = Gradients::zeros_like(self.store);
        self.backward_into(output, seed, &mut pgrads);
        Ok(pgrads)
    }

    /// Accumulates `seed · d output / d params` into `pgrads`.
    pub fn backward_into(&self, output: Var, seed: f64, pgrads: &mut Gradients) {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![seed; self.nodes[output.0].value.len()]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; n])
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (p, gi) in pgrads.get_mut(*id).iter_mut().zip(&g) {
                        *p += gi;
                    }
                }
                Op::Row { param, row } => {
                    let cols = g.len();
                    let block = &mut pgrads.get_mut(*param)[row * cols..(row + 1) * cols];
                    for (p, gi) in block.iter_mut().zip(&g) {
                        *p += gi;
                    }
                }
                Op::MatVec { param, col, x } => {
                    let w = self.store.value(*param);
                    let cols = w.cols();
                    let xv = &self.nodes[x.0].value;
                    let xl = xv.len();
                    let wd = w.data();
                    {
                        let pg = pgrads.get_mut(*param);
                        for (r, gr) in g.iter().enumerate() {
                            if *gr == 0.0 {
                                continue;
                            }
                            let block = &mut pg[r * cols + col..r * cols + col + xl];
                            for (p, xc) in block.iter_mut().zip(xv) {
                                *p += gr * xc;
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, xl);
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        let wr = &wd[r * cols + col..r * cols + col + xl];
                        for (o, wv) in gx.iter_mut().zip(wr) {
                            *o += gr * wv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut grads, *b, g.len()), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc(&mut grads, *b, g.len()), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
                Op::Scale(a, s) => add_into(acc(&mut grads, *a, g.len()), &g, *s),
                Op::OneMinus(a) => add_into(acc(&mut grads, *a, g.len()), &g, -1.0),
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
                Op::Square(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += 2.0 * g[k] * av[k];
                    }
                }
                Op::Ln(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] / av[k];
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        add_into(acc(&mut grads, *p, n), &g[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.nodes[x.0].value.len();
                    let gx = acc(&mut grads, *x, n);
                    add_into(&mut gx[*start..start + g.len()], &g, 1.0);
                }
                Op::Dot(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    add_into(acc(&mut grads, *a, av.len()), bv, g[0]);
                    add_into(acc(&mut grads, *b, bv.len()), av, g[0]);
                }
                Op::Stack(items) => {
                    for (k, s) in items.iter().enumerate() {
                        acc(&mut grads, *s, 1)[0] += g[k];
                    }
                }
                Op::Sum(items) => {
                    for it in items {
                        add_into(acc(&mut grads, *it, g.len()), &g, 1.0);
                    }
                }
                Op::SumElems(x) => {
                    let n = self.nodes[x.0].value.len();
                    acc(&mut grads, *x, n).iter_mut().for_each(|v| *v += g[0]);
                }
                Op::SumAt { x, indices } => {
                    let n = self.nodes[x.0].value.len();
                    let gx = acc(&mut grads, *x, n);
                    for &k in indices {
                        gx[k] += g[0];
                    }
                }
                Op::Gather { x, indices } => {
                    let n = self.nodes[x.0].value.len();
                    let gx = acc(&mut grads, *x, n);
                    for (k, &src) in indices.iter().enumerate() {
                        gx[src] += g[k];
                    }
                }
                Op::Softmax(x) => {
                    let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        gx[k] += y[k] * (g[k] - gy);
                    }
                }
                Op::Normalize(x) => {
                    let s: f64 = self.nodes[x.0].value.iter().sum();
                    let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut grads, *x, g.len());
                    for k in 0..g.len() {
                        gx[k] += (g[k] - gy) / s;
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = &self.nodes[weights.0].value;
                    let mut gw = vec![0.0; items.len()];
                    for (k, it) in items.iter().enumerate() {
                        let iv = &self.nodes[it.0].value;
                        gw[k] = g.iter().zip(iv).map(|(a, b)| a * b).sum();
                        add_into(acc(&mut grads, *it, g.len()), &g, wv[k]);
                    }
                    add_into(acc(&mut grads, *weights, gw.len()), &gw, 1.0);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}
