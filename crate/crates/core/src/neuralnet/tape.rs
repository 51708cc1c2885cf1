//! Reverse-mode differentiation over dense 2-D matrices.
//!
//! Operations are appended to a [`GradientTape`] as they are evaluated. Each
//! node keeps its value and the op that produced it; [`GradientTape::backward`]
//! walks the nodes in reverse and accumulates adjoints. Nodes created with
//! [`GradientTape::constant`] never receive gradients, and no work is spent on
//! subgraphs that only depend on constants.
//!
//! Shape violations inside the tape are programmer errors and panic; the
//! network and model layers validate shapes at their public boundaries.

use ndarray::{s, Array2, Axis, Zip};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// a · bᵀ
    MatMulT(NodeId, NodeId),
    /// a + row vector b broadcast over rows
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Square(NodeId),
    Ln(NodeId),
    Exp(NodeId),
    LeakyRelu(NodeId, f64),
    Elu(NodeId),
    Softplus(NodeId),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    SumAll(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph.
#[derive(Clone, Debug, Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`GradientTape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `id`; exact zeros when `id` did not influence
    /// the loss.
    pub fn get(&self, id: NodeId) -> Array2<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[id.0]),
        }
    }

    /// Append the gradient of `id` to `out` in row-major order.
    pub fn extend_flat(&self, id: NodeId, out: &mut Vec<f64>) {
        match &self.grads[id.0] {
            Some(g) => out.extend(g.iter().copied()),
            None => {
                let (r, c) = self.shapes[id.0];
                out.extend(std::iter::repeat_n(0.0, r * c));
            }
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A differentiable leaf (a parameter).
    pub fn variable(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient (data, noise).
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let value = self.nodes[a.0].value.mapv(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    /// `a · bᵀ`; with `b` a weight matrix (out × in) this is a dense layer.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.ncols(), vb.ncols(), "matmul_t: inner dimensions differ");
        let value = va.dot(&vb.t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    /// Add a 1 × c row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
        assert_eq!(vr.nrows(), 1, "add_row: bias must be a single row");
        assert_eq!(va.ncols(), vr.ncols(), "add_row: width mismatch");
        let value = va + vr;
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "add");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "sub");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "mul");
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "div");
        let value = &self.nodes[a.0].value / &self.nodes[b.0].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Div(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.unary(a, Op::LeakyRelu(a, slope), |x| leaky_relu(x, slope))
    }

    pub fn elu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Elu(a), elu)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// Columns `start..start + width` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        assert!(start + width <= va.ncols(), "slice_cols out of range");
        let value = va.slice(s![.., start..start + width]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Rows `start..start + count` of `a`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, count: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        assert!(start + count <= va.nrows(), "slice_rows out of range");
        let value = va.slice(s![start..start + count, ..]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Sum of all entries as a 1 × 1 node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total = self.nodes[a.0].value.sum();
        let rg = self.rg(a);
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(a), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> crate::Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(crate::error::invalid(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, g.dot(vb));
                    }
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, g.t().dot(va));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, summed);
                    }
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, -&g);
                    }
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, &g * vb);
                    }
                    if self.rg(*b) {
                        self.acc(&mut grads, *b, &g * va);
                    }
                }
                Op::Div(a, b) => {
                    let vb = &self.nodes[b.0].value;
                    if self.rg(*a) {
                        self.acc(&mut grads, *a, &g / vb);
                    }
                    if self.rg(*b) {
                        // d(a/b)/db = -(a/b)/b
                        let mut d = -&g * &node.value;
                        d /= vb;
                        self.acc(&mut grads, *b, d);
                    }
                }
                Op::Scale(a, c) => self.acc(&mut grads, *a, g * *c),
                Op::AddScalar(a) => self.acc(&mut grads, *a, g),
                Op::Square(a) => {
                    let va = &self.nodes[a.0].value;
                    let mut d = g;
                    Zip::from(&mut d).and(va).for_each(|d, &x| *d *= 2.0 * x);
                    self.acc(&mut grads, *a, d);
                }
                Op::Ln(a) => {
                    let va = &self.nodes[a.0].value;
                    self.acc(&mut grads, *a, g / va);
                }
                Op::Exp(a) => self.acc(&mut grads, *a, g * &node.value),
                Op::LeakyRelu(a, slope) => {
                    let va = &self.nodes[a.0].value;
                    let mut d = g;
                    Zip::from(&mut d).and(va).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= slope;
                        }
                    });
                    self.acc(&mut grads, *a, d);
                }
                Op::Elu(a) => {
                    let va = &self.nodes[a.0].value;
                    let mut d = g;
                    Zip::from(&mut d).and(va).for_each(|d, &x| {
                        if x < 0.0 {
                            *d *= x.exp();
                        }
                    });
                    self.acc(&mut grads, *a, d);
                }
                Op::Softplus(a) => {
                    let va = &self.nodes[a.0].value;
                    let mut d = g;
                    Zip::from(&mut d).and(va).for_each(|d, &x| *d *= sigmoid(x));
                    self.acc(&mut grads, *a, d);
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    let w = g.ncols();
                    d.slice_mut(s![.., *start..*start + w]).assign(&g);
                    self.acc(&mut grads, *a, d);
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(self.shape(*a));
                    let r = g.nrows();
                    d.slice_mut(s![*start..*start + r, ..]).assign(&g);
                    self.acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        if self.rg(*p) {
                            let d = g.slice(s![.., offset..offset + w]).to_owned();
                            self.acc(&mut grads, *p, d);
                        }
                        offset += w;
                    }
                }
                Op::SumAll(a) => {
                    let d = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    self.acc(&mut grads, *a, d);
                }
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }

    fn acc(&self, grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
        match &mut grads[id.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar(v: f64) -> Array2<f64> {
        Array2::from_elem((1, 1), v)
    }

    #[test]
    fn linear_derivative() {
        let mut t = GradientTape::new();
        let w = t.variable(scalar(0.7));
        let x = t.constant(scalar(3.0));
        let y = t.mul(w, x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(w)[[0, 0]], 3.0);
    }

    #[test]
    fn squared_residual_derivative() {
        // (w x - y)^2 at w=1, x=2, y=1 -> 2 (wx - y) x = 4
        let mut t = GradientTape::new();
        let w = t.variable(scalar(1.0));
        let x = t.constant(scalar(2.0));
        let y = t.constant(scalar(1.0));
        let wx = t.mul(w, x);
        let r = t.sub(wx, y);
        let l = t.square(r);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w)[[0, 0]], 4.0);
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut t = GradientTape::new();
        let w = t.variable(scalar(2.0));
        let unused = t.variable(array![[1.0, 2.0]]);
        let l = t.square(w);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(unused), array![[0.0, 0.0]]);
        assert_eq!(g.get(w)[[0, 0]], 4.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = GradientTape::new();
        let w = t.variable(array![[1.0, 2.0]]);
        assert!(t.backward(w).is_err());
    }

    #[test]
    fn elementwise_primitive_values() {
        assert_eq!(leaky_relu(-1.0, 0.01), -0.01);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((elu(-1.0) - ((-1f64).exp() - 1.0)).abs() < 1e-15);
        assert!(softplus(-800.0) >= 0.0 && softplus(800.0) == 800.0);
    }

    #[test]
    fn slice_concat_roundtrip_gradients() {
        let mut t = GradientTape::new();
        let a = t.variable(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let left = t.slice_cols(a, 0, 1);
        let right = t.slice_cols(a, 1, 2);
        let top = t.slice_rows(right, 0, 1);
        let c = t.concat_cols(&[left, left]);
        let sq = t.square(c);
        let s1 = t.sum_all(sq);
        let s2 = t.sum_all(top);
        let l = t.add(s1, s2);
        let g = t.backward(l).unwrap().get(a);
        // d/d left: 2 * 2 * left ; top row of right contributes 1
        assert_eq!(g, array![[4.0, 1.0, 1.0], [16.0, 0.0, 0.0]]);
    }
}
