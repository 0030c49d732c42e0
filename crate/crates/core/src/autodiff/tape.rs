use std::rc::Rc;

use ndarray::{Array2, Axis, Zip};
use thiserror::Error;

/// Negative-side slope used when `leaky_relu` is applied by name.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("unsupported operation `{0}`")]
    UnsupportedOp(String),

    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op} produced a non-finite value at node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("backward has already run on this tape")]
    AlreadyBackpropagated,

    #[error("backward needs a 1x1 output, node {node} is {rows}x{cols}")]
    NotScalar {
        node: usize,
        rows: usize,
        cols: usize,
    },

    #[error("node {0} does not belong to this tape")]
    UnknownNode(usize),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fixed linear map plus offset between flattened (row-major) matrices:
/// `out[k] = constant[k] + Σ coef · input[idx]` over the terms of output `k`.
///
/// Covers slicing, gathering, group sums and broadcasts, and the per-sample
/// linear maps that depend on the preference profile.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMap {
    input_shape: (usize, usize),
    output_shape: (usize, usize),
    offsets: Vec<usize>,
    terms: Vec<(usize, f64)>,
    constant: Vec<f64>,
}

impl SparseMap {
    pub fn builder(input_shape: (usize, usize), output_shape: (usize, usize)) -> SparseMapBuilder {
        let len = output_shape.0 * output_shape.1;
        let mut offsets = Vec::with_capacity(len + 1);
        offsets.push(0);
        SparseMapBuilder {
            map: SparseMap {
                input_shape,
                output_shape,
                offsets,
                terms: Vec::new(),
                constant: Vec::with_capacity(len),
            },
        }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.output_shape
    }

    fn apply(&self, x: &[f64]) -> Array2<f64> {
        let mut out = Vec::with_capacity(self.constant.len());
        for (k, &c) in self.constant.iter().enumerate() {
            let mut acc = c;
            for &(idx, coef) in &self.terms[self.offsets[k]..self.offsets[k + 1]] {
                acc += coef * x[idx];
            }
            out.push(acc);
        }
        Array2::from_shape_vec(self.output_shape, out).expect("builder checked the length")
    }

    fn pull_back(&self, g: &[f64], gx: &mut [f64]) {
        for (k, &gk) in g.iter().enumerate() {
            if gk == 0.0 {
                continue;
            }
            for &(idx, coef) in &self.terms[self.offsets[k]..self.offsets[k + 1]] {
                gx[idx] += coef * gk;
            }
        }
    }
}

pub struct SparseMapBuilder {
    map: SparseMap,
}

impl SparseMapBuilder {
    /// Appends the next output entry in row-major order.
    pub fn push(&mut self, constant: f64, terms: impl IntoIterator<Item = (usize, f64)>) {
        let in_len = self.map.input_shape.0 * self.map.input_shape.1;
        for (idx, coef) in terms {
            assert!(idx < in_len, "sparse map term {idx} outside input of length {in_len}");
            self.map.terms.push((idx, coef));
        }
        self.map.offsets.push(self.map.terms.len());
        self.map.constant.push(constant);
    }

    pub fn build(self) -> SparseMap {
        let len = self.map.output_shape.0 * self.map.output_shape.1;
        assert_eq!(
            self.map.constant.len(),
            len,
            "sparse map needs exactly one entry per output element"
        );
        self.map
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `x · wᵀ`
    MatMulT(Var, Var),
    /// Adds a `1 × k` row to every row.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    MulConst(Var, Rc<Array2<f64>>),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Relu(Var),
    SumAll(Var),
    Affine(Var, Rc<SparseMap>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMulT(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Min(..) => "min",
            Op::MulConst(..) => "mul_const",
            Op::Scale(..) => "scale",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Softplus(..) => "softplus",
            Op::Relu(..) => "relu",
            Op::SumAll(..) => "sum",
            Op::Affine(..) => "affine",
        }
    }
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Overflow-safe `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `1 / (1 + e⁻ˣ)`, the derivative of [`softplus`].
pub fn logistic(x: f64) -> f64 {
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

/// Append-only record of a forward computation over `f64` matrices.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backpropagated: bool,
}

/// Gradients of a scalar output with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the output does not depend on it.
    pub fn get(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn check(&self, v: Var) -> Result<&Array2<f64>, TapeError> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(TapeError::UnknownNode(v.0))
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Result<Var, TapeError> {
        let node = self.nodes.len();
        if value.iter().any(|x| !x.is_finite()) {
            return Err(TapeError::NonFinite {
                op: op.name(),
                node,
            });
        }
        self.nodes.push(Node { op, value });
        Ok(Var(node))
    }

    /// A parameter or constant input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Result<Var, TapeError> {
        self.push(Op::Leaf, value)
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var, TapeError> {
        let (a, b) = (self.check(x)?, self.check(w)?);
        if a.ncols() != b.ncols() {
            return Err(TapeError::Shape {
                op: "matmul",
                left: shape(a),
                right: shape(b),
            });
        }
        let out = a.dot(&b.t());
        self.push(Op::MatMulT(x, w), out)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TapeError> {
        let (a, b) = (self.check(x)?, self.check(bias)?);
        if b.nrows() != 1 || b.ncols() != a.ncols() {
            return Err(TapeError::Shape {
                op: "add_bias",
                left: shape(a),
                right: shape(b),
            });
        }
        let out = a + b;
        self.push(Op::AddBias(x, bias), out)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TapeError> {
        let (x, y) = (self.check(a)?, self.check(b)?);
        if x.dim() != y.dim() {
            return Err(TapeError::Shape {
                op,
                left: shape(x),
                right: shape(y),
            });
        }
        Ok(())
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, TapeError> {
        self.same_shape(op.name(), a, b)?;
        let out = Zip::from(&self.nodes[a.0].value)
            .and(&self.nodes[b.0].value)
            .map_collect(|&x, &y| f(x, y));
        self.push(op, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.binary(a, b, Op::Min(a, b), |x, y| if x <= y { x } else { y })
    }

    /// Elementwise product with a constant matrix (no gradient to the constant).
    pub fn mul_const(&mut self, x: Var, c: Rc<Array2<f64>>) -> Result<Var, TapeError> {
        let a = self.check(x)?;
        if a.dim() != c.dim() {
            return Err(TapeError::Shape {
                op: "mul_const",
                left: shape(a),
                right: c.dim(),
            });
        }
        let out = a * &*c;
        self.push(Op::MulConst(x, c), out)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var, TapeError> {
        let out = self.check(x)? * k;
        self.push(Op::Scale(x, k), out)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TapeError> {
        let out = self.check(x)?.mapv(|v| leaky_relu(v, slope));
        self.push(Op::LeakyRelu(x, slope), out)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, TapeError> {
        let out = self.check(x)?.mapv(softplus);
        self.push(Op::Softplus(x), out)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TapeError> {
        let out = self.check(x)?.mapv(|v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, TapeError> {
        let total = self.check(x)?.iter().fold(0.0, |acc, v| acc + v);
        self.push(Op::SumAll(x), Array2::from_elem((1, 1), total))
    }

    pub fn affine(&mut self, x: Var, map: Rc<SparseMap>) -> Result<Var, TapeError> {
        let a = self.check(x)?;
        if a.dim() != map.input_shape {
            return Err(TapeError::Shape {
                op: "affine",
                left: shape(a),
                right: map.input_shape,
            });
        }
        let out = match a.as_slice() {
            Some(s) => map.apply(s),
            None => map.apply(&a.iter().copied().collect::<Vec<_>>()),
        };
        self.push(Op::Affine(x, map), out)
    }

    /// Records an operation by name. Parameterized operations use their
    /// defaults (`leaky_relu` slope 0.01); anything outside the supported
    /// set is rejected.
    pub fn apply(&mut self, op: &str, inputs: &[Var]) -> Result<Var, TapeError> {
        let want = |expected: usize, name: &'static str| {
            if inputs.len() == expected {
                Ok(())
            } else {
                Err(TapeError::Arity {
                    op: name,
                    expected,
                    got: inputs.len(),
                })
            }
        };
        match op {
            "matmul" => want(2, "matmul").and_then(|_| self.matmul_t(inputs[0], inputs[1])),
            "add_bias" => want(2, "add_bias").and_then(|_| self.add_bias(inputs[0], inputs[1])),
            "add" => want(2, "add").and_then(|_| self.add(inputs[0], inputs[1])),
            "sub" => want(2, "sub").and_then(|_| self.sub(inputs[0], inputs[1])),
            "mul" => want(2, "mul").and_then(|_| self.mul(inputs[0], inputs[1])),
            "div" => want(2, "div").and_then(|_| self.div(inputs[0], inputs[1])),
            "min" => want(2, "min").and_then(|_| self.min(inputs[0], inputs[1])),
            "leaky_relu" => want(1, "leaky_relu")
                .and_then(|_| self.leaky_relu(inputs[0], DEFAULT_LEAKY_SLOPE)),
            "softplus" => want(1, "softplus").and_then(|_| self.softplus(inputs[0])),
            "relu" => want(1, "relu").and_then(|_| self.relu(inputs[0])),
            "sum" => want(1, "sum").and_then(|_| self.sum_all(inputs[0])),
            other => Err(TapeError::UnsupportedOp(other.to_string())),
        }
    }

    /// Reverse pass from a scalar node. A tape supports one backward pass.
    pub fn backward(&mut self, output: Var) -> Result<Gradients, TapeError> {
        if self.backpropagated {
            return Err(TapeError::AlreadyBackpropagated);
        }
        let out = self.check(output)?;
        if out.dim() != (1, 1) {
            return Err(TapeError::NotScalar {
                node: output.0,
                rows: out.nrows(),
                cols: out.ncols(),
            });
        }
        self.backpropagated = true;

        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::ones((1, 1)));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMulT(x, w) => {
                    accumulate(&mut grads[x.0], g.dot(val(*w)));
                    accumulate(&mut grads[w.0], g.t().dot(val(*x)));
                }
                Op::AddBias(x, b) => {
                    accumulate(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads[x.0], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], -&g);
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads[a.0], &g * val(*b));
                    accumulate(&mut grads[b.0], &g * val(*a));
                }
                Op::Div(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let ga = Zip::from(&g).and(y).map_collect(|&g, &y| g / y);
                    let gb = Zip::from(&g)
                        .and(x)
                        .and(y)
                        .map_collect(|&g, &x, &y| -g * x / (y * y));
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Min(a, b) => {
                    let (x, y) = (val(*a), val(*b));
                    let ga = Zip::from(&g)
                        .and(x)
                        .and(y)
                        .map_collect(|&g, &x, &y| if x <= y { g } else { 0.0 });
                    let gb = Zip::from(&g)
                        .and(x)
                        .and(y)
                        .map_collect(|&g, &x, &y| if x <= y { 0.0 } else { g });
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MulConst(x, c) => accumulate(&mut grads[x.0], &g * &**c),
                Op::Scale(x, k) => accumulate(&mut grads[x.0], g * *k),
                Op::LeakyRelu(x, slope) => {
                    let gx = Zip::from(&g)
                        .and(val(*x))
                        .map_collect(|&g, &x| if x > 0.0 { g } else { slope * g });
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Softplus(x) => {
                    let gx = Zip::from(&g)
                        .and(val(*x))
                        .map_collect(|&g, &x| g * logistic(x));
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Relu(x) => {
                    let gx = Zip::from(&g)
                        .and(val(*x))
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads[x.0], gx);
                }
                Op::SumAll(x) => {
                    let dim = val(*x).dim();
                    accumulate(&mut grads[x.0], Array2::from_elem(dim, g[[0, 0]]));
                }
                Op::Affine(x, map) => {
                    let mut gx = vec![0.0; map.input_shape.0 * map.input_shape.1];
                    let g = g.as_standard_layout();
                    map.pull_back(g.as_slice().expect("standard layout"), &mut gx);
                    let gx = Array2::from_shape_vec(map.input_shape, gx).expect("input shape");
                    accumulate(&mut grads[x.0], gx);
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.dim()).collect();
        Ok(Gradients { grads, shapes })
    }
}
