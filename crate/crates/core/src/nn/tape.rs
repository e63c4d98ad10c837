//! Dynamic reverse-mode tape over dense tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass (define-by-run): each
//! operation records a node holding its inputs, its value, and enough to
//! replay the chain rule. [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients for every reachable node that requires them.
//! Gradients never flow into constants.

use crate::error::{Error, Result};

use super::tensor::{
    matmul, matmul_nt_accumulate, matmul_tn_accumulate, matvec, matvec_t_accumulate, Tensor,
};

/// Handle to a tape node. Only valid for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// An operation with externally supplied forward value and analytic
/// backward, for things the primitive set cannot express (e.g. a linear
/// solve against precomputed systems).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    /// Gradients with respect to each input, given the inputs, the recorded
    /// output, and the upstream gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, upstream: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    /// inputs: [scalar, tensor]
    Scale,
    ScaleConst(f64),
    /// `a x + b` elementwise with constant a, b.
    AffineConst(f64, f64),
    MatMul,
    Elu,
    Sigmoid,
    Tanh,
    Softplus,
    Sin,
    Cos,
    Sqrt,
    Recip,
    Slice {
        start: usize,
    },
    Reshape,
    Concat,
    Sum,
    FrobNorm,
    Custom(Box<dyn CustomOp>),
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor) -> Var {
        let needs_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (gradients accumulate here).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, vec![], value)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, vec![], value)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::Shape(format!(
                "{what}: shapes {sa:?} and {sb:?} differ"
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Add, vec![a.0, b.0], t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Sub, vec![a.0, b.0], t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Mul, vec![a.0, b.0], t))
    }

    /// Scalar tensor times tensor.
    pub fn scale(&mut self, s: Var, x: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::Shape(format!(
                "scale: first argument must be scalar, got shape {:?}",
                self.value(s).shape()
            )));
        }
        let sv = self.value(s).data()[0];
        let data = self.value(x).data().iter().map(|v| sv * v).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(Op::Scale, vec![s.0, x.0], t))
    }

    pub fn scale_const(&mut self, c: f64, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| c * v).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(Op::ScaleConst(c), vec![x.0], t)
    }

    /// Elementwise `a x + b` with constants.
    pub fn affine_const(&mut self, a: f64, b: f64, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| a * v + b).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(Op::AffineConst(a, b), vec![x.0], t)
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]` or matrix-vector
    /// `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => {
                let mut out = vec![0.0; m * n];
                matmul(self.value(a).data(), self.value(b).data(), *m, *k, *n, &mut out);
                let t = Tensor::new(vec![*m, *n], out)?;
                Ok(self.push(Op::MatMul, vec![a.0, b.0], t))
            }
            ([m, k], [k2]) if k == k2 => {
                let mut out = vec![0.0; *m];
                matvec(self.value(a).data(), self.value(b).data(), *m, *k, &mut out);
                let t = Tensor::new(vec![*m], out)?;
                Ok(self.push(Op::MatMul, vec![a.0, b.0], t))
            }
            _ => Err(Error::Shape(format!(
                "matmul: incompatible shapes {sa:?} x {sb:?}"
            ))),
        }
    }

    fn unary<F: Fn(f64) -> f64>(&mut self, op: Op, x: Var, f: F) -> Var {
        let data = self.value(x).data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(op, vec![x.0], t)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(Op::Elu, x, |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Op::Sigmoid, x, stable_sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Op::Tanh, x, f64::tanh)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Op::Softplus, x, |v| v.max(0.0) + (-v.abs()).exp().ln_1p())
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(Op::Sin, x, f64::sin)
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(Op::Cos, x, f64::cos)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(Op::Sqrt, x, f64::sqrt)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(Op::Recip, x, f64::recip)
    }

    /// Contiguous slice of the flattened tensor; result is 1-D.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let total = self.value(x).len();
        if start + len > total {
            return Err(Error::Shape(format!(
                "slice {start}..{} out of bounds for {total} elements",
                start + len
            )));
        }
        let data = self.value(x).data()[start..start + len].to_vec();
        Ok(self.push(Op::Slice { start }, vec![x.0], Tensor::vector(data)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = Tensor::new(shape, self.value(x).data().to_vec())?;
        Ok(self.push(Op::Reshape, vec![x.0], t))
    }

    /// Concatenates flattened tensors into a 1-D result.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Usage("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for v in xs {
            data.extend_from_slice(self.value(*v).data());
        }
        let inputs = xs.iter().map(|v| v.0).collect();
        Ok(self.push(Op::Concat, inputs, Tensor::vector(data)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum, vec![x.0], Tensor::scalar(s))
    }

    /// Frobenius norm (L2 over all elements) as a scalar.
    pub fn frobenius_norm(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Op::FrobNorm, vec![x.0], Tensor::scalar(s.sqrt()))
    }

    /// Dot product of equal-shaped tensors (composite of mul + sum).
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    /// Records a custom operation with an externally computed value.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], value: Tensor) -> Var {
        let ids = inputs.iter().map(|v| v.0).collect();
        self.push(Op::Custom(op), ids, value)
    }

    /// Reverse pass from a scalar root. Returns gradients for every node
    /// that requires them and is reachable from the root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::Usage("backward on unknown node".into()))?;
        if root_node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        let mut seed = Tensor::zeros_like(&root_node.value);
        seed.data_mut()[0] = 1.0;
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(up) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &up, &mut grads);
            grads[i] = Some(up);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let input_needs = |j: usize| self.nodes[node.inputs[j]].needs_grad;
        // Accumulate `delta` into input j's gradient.
        let acc = |grads: &mut [Option<Tensor>], j: usize, delta: &[f64]| {
            let idx = node.inputs[j];
            let shape = self.nodes[idx].value.shape().to_vec();
            let t = grads[idx].get_or_insert_with(|| Tensor::zeros(shape));
            for (g, d) in t.data_mut().iter_mut().zip(delta) {
                *g += d;
            }
        };

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add => {
                if input_needs(0) {
                    acc(grads, 0, up.data());
                }
                if input_needs(1) {
                    acc(grads, 1, up.data());
                }
            }
            Op::Sub => {
                if input_needs(0) {
                    acc(grads, 0, up.data());
                }
                if input_needs(1) {
                    let neg: Vec<f64> = up.data().iter().map(|v| -v).collect();
                    acc(grads, 1, &neg);
                }
            }
            Op::Mul => {
                let a = &self.nodes[node.inputs[0]].value;
                let b = &self.nodes[node.inputs[1]].value;
                if input_needs(0) {
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(u, y)| u * y)
                        .collect();
                    acc(grads, 0, &d);
                }
                if input_needs(1) {
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(a.data())
                        .map(|(u, x)| u * x)
                        .collect();
                    acc(grads, 1, &d);
                }
            }
            Op::Scale => {
                let s = self.nodes[node.inputs[0]].value.data()[0];
                let x = &self.nodes[node.inputs[1]].value;
                if input_needs(0) {
                    let d: f64 = up
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(u, v)| u * v)
                        .sum();
                    acc(grads, 0, &[d]);
                }
                if input_needs(1) {
                    let d: Vec<f64> = up.data().iter().map(|u| s * u).collect();
                    acc(grads, 1, &d);
                }
            }
            Op::ScaleConst(c) => {
                if input_needs(0) {
                    let d: Vec<f64> = up.data().iter().map(|u| c * u).collect();
                    acc(grads, 0, &d);
                }
            }
            Op::AffineConst(a, _) => {
                if input_needs(0) {
                    let d: Vec<f64> = up.data().iter().map(|u| a * u).collect();
                    acc(grads, 0, &d);
                }
            }
            Op::MatMul => {
                let a = &self.nodes[node.inputs[0]].value;
                let b = &self.nodes[node.inputs[1]].value;
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = if b.shape().len() == 2 { b.shape()[1] } else { 1 };
                if input_needs(0) {
                    let idx = node.inputs[0];
                    let t = grads[idx].get_or_insert_with(|| Tensor::zeros(a.shape().to_vec()));
                    // up (m x n) . B^T (n x k) -> (m x k)
                    matmul_nt_accumulate(up.data(), b.data(), m, n, k, t.data_mut());
                }
                if input_needs(1) {
                    let idx = node.inputs[1];
                    let t = grads[idx].get_or_insert_with(|| Tensor::zeros(b.shape().to_vec()));
                    if n == 1 {
                        matvec_t_accumulate(a.data(), up.data(), m, k, t.data_mut());
                    } else {
                        matmul_tn_accumulate(a.data(), up.data(), m, k, n, t.data_mut());
                    }
                }
            }
            Op::Elu => {
                if input_needs(0) {
                    let x = &self.nodes[node.inputs[0]].value;
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(x.data().iter().zip(node.value.data()))
                        .map(|(u, (xi, yi))| if *xi > 0.0 { *u } else { u * (yi + 1.0) })
                        .collect();
                    acc(grads, 0, &d);
                }
            }
            Op::Sigmoid => {
                if input_needs(0) {
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(u, y)| u * y * (1.0 - y))
                        .collect();
                    acc(grads, 0, &d);
                }
            }
            Op::Tanh => {
                if input_needs(0) {
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(u, y)| u * (1.0 - y * y))
                        .collect();
                    acc(grads, 0, &d);
                }
            }
            Op::Softplus => {
                if input_needs(0) {
                    let x = &self.nodes[node.inputs[0]].value;
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(u, xi)| u * stable_sigmoid(*xi))
                        .collect();
                    acc(grads, 0, &d);
                }
            }
            Op::Sin => {
                if input_needs(0) {
                    let x = &self.nodes[node.inputs[0]].value;
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(u, xi)| u * xi.cos())
                        .collect();
                    acc(grads, 0, &d);
                }
            }
            Op::Cos => {
                if input_needs(0) {
                    let x = &self.nodes[node.inputs[0]].value;
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(u, xi)| -u * xi.sin())
                        .collect();
                    acc(grads, 0, &d);
                }
            }
            Op::Sqrt => {
                if input_needs(0) {
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(u, y)| u * 0.5 / y)
                        .collect();
                    acc(grads, 0, &d);
                }
            }
            Op::Recip => {
                if input_needs(0) {
                    let d: Vec<f64> = up
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(u, y)| -u * y * y)
                        .collect();
                    acc(grads, 0, &d);
                }
            }
            Op::Slice { start } => {
                if input_needs(0) {
                    let idx = node.inputs[0];
                    let shape = self.nodes[idx].value.shape().to_vec();
                    let t = grads[idx].get_or_insert_with(|| Tensor::zeros(shape));
                    for (off, u) in up.data().iter().enumerate() {
                        t.data_mut()[start + off] += u;
                    }
                }
            }
            Op::Reshape => {
                if input_needs(0) {
                    acc(grads, 0, up.data());
                }
            }
            Op::Concat => {
                let mut offset = 0;
                for j in 0..node.inputs.len() {
                    let len = self.nodes[node.inputs[j]].value.len();
                    if input_needs(j) {
                        acc(grads, j, &up.data()[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Sum => {
                if input_needs(0) {
                    let u = up.data()[0];
                    let len = self.nodes[node.inputs[0]].value.len();
                    acc(grads, 0, &vec![u; len]);
                }
            }
            Op::FrobNorm => {
                if input_needs(0) {
                    let x = &self.nodes[node.inputs[0]].value;
                    let y = node.value.data()[0];
                    let u = up.data()[0];
                    let d: Vec<f64> = if y == 0.0 {
                        vec![0.0; x.len()]
                    } else {
                        x.data().iter().map(|v| u * v / y).collect()
                    };
                    acc(grads, 0, &d);
                }
            }
            Op::Custom(op) => {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
                let deltas = op.backward(&inputs, &node.value, up);
                assert_eq!(
                    deltas.len(),
                    node.inputs.len(),
                    "custom op {} returned {} gradients for {} inputs",
                    op.name(),
                    deltas.len(),
                    node.inputs.len()
                );
                for (j, delta) in deltas.into_iter().enumerate() {
                    if input_needs(j) {
                        acc(grads, j, delta.data());
                    }
                }
            }
        }
    }
}
