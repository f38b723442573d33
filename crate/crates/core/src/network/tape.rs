//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Values are recorded on a [`Tape`] in evaluation order; [`Tape::backward`]
//! walks it in reverse. Leaves may borrow their storage (parameters, graph
//! adjacency) so recording a forward pass never copies the weights.

use std::borrow::Cow;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a . b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a + b` with `b` a single row broadcast over `a`.
    AddRow(Var, Var),
    /// `a * g` with `g` a single row broadcast over `a`.
    MulRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    /// Row-wise standardisation; keeps `1 / std` per row.
    Normalize(Var, Vec<f64>),
    /// Row-wise softmax, entries outside `mask` forced to zero.
    Softmax(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    /// Scalar loss with a precomputed local gradient w.r.t. its input.
    Loss(Var, Array2<f64>),
    /// Weighted sum of scalar (1 x 1) terms.
    Combine(Vec<(Var, f64)>),
}

struct Node<'a> {
    value: Cow<'a, Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Array2<f64>>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Differentiable leaf borrowing its storage.
    pub fn param(&mut self, value: &'a Array2<f64>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Non-differentiable leaf borrowing its storage.
    pub fn constant_ref(&mut self, value: &'a Array2<f64>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Differentiable leaf owning its storage (used by gradient checks on inputs).
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.derived(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.derived(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.derived(v, Op::Add(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.derived(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.derived(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.derived(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.derived(v, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.derived(v, Op::Relu(a), &[a])
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        self.derived(out, Op::Normalize(a, inv_std), &[a])
    }

    /// Row softmax. `mask[i][j] == false` excludes entry `j` from row `i`;
    /// rows with no admissible entry become all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Arc<Array2<bool>>>) -> Var {
        let x = self.value(a);
        let mut out = Array2::zeros(x.raw_dim());
        for (i, (row, mut dst)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let allowed = |j: usize| mask.is_none_or(|m| m[[i, j]]);
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| allowed(*j))
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for (j, (&v, d)) in row.iter().zip(dst.iter_mut()).enumerate() {
                if allowed(j) {
                    *d = (v - max).exp();
                    total += *d;
                }
            }
            dst.mapv_inplace(|d| d / total);
        }
        self.derived(out, Op::Softmax(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.derived(v, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.derived(v, Op::SliceRows(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.derived(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Records a scalar loss `value` whose gradient w.r.t. `input` is `local_grad`.
    pub fn loss(&mut self, input: Var, value: f64, local_grad: Array2<f64>) -> Var {
        debug_assert_eq!(local_grad.raw_dim(), self.value(input).raw_dim());
        self.derived(Array2::from_elem((1, 1), value), Op::Loss(input, local_grad), &[input])
    }

    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        let total: f64 = terms.iter().map(|(v, w)| w * self.scalar(*v)).sum();
        let inputs: Vec<Var> = terms.iter().map(|(v, _)| *v).collect();
        self.derived(Array2::from_elem((1, 1), total), Op::Combine(terms.to_vec()), &inputs)
    }

    /// Gradients of the scalar `output` w.r.t. every recorded node.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones(self.value(output).raw_dim()));

        fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let needs = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if needs(b) {
                        accumulate(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, *a, g.dot(self.value(*b)));
                    }
                    if needs(b) {
                        accumulate(&mut grads, *b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if needs(b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if needs(row) {
                        accumulate(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::MulRow(a, row) => {
                    if needs(row) {
                        let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *row, gr);
                    }
                    if needs(a) {
                        accumulate(&mut grads, *a, &g * self.value(*row));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, *a, &g * self.value(*b));
                    }
                    if needs(b) {
                        accumulate(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Normalize(a, inv_std) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(g.raw_dim());
                    let n = g.ncols() as f64;
                    for (((gr, yr), mut out), inv) in
                        g.rows().into_iter().zip(y.rows()).zip(ga.rows_mut()).zip(inv_std)
                    {
                        let sum_g = gr.sum();
                        let sum_gy = gr.dot(&yr);
                        Zip::from(&mut out).and(&gr).and(&yr).for_each(|o, &gi, &yi| {
                            *o = inv / n * (n * gi - sum_g - yi * sum_gy);
                        });
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = &g * &**y;
                    for (mut row, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yr).for_each(|r, &yi| *r -= yi * dot);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let width = self.value(*p).ncols();
                        if needs(p) {
                            accumulate(&mut grads, *p, g.slice(s![.., offset..offset + width]).to_owned());
                        }
                        offset += width;
                    }
                }
                Op::Loss(a, local) => accumulate(&mut grads, *a, local * g[[0, 0]]),
                Op::Combine(terms) => {
                    for (v, w) in terms {
                        if needs(v) {
                            accumulate(&mut grads, *v, &g * *w);
                        }
                    }
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}
