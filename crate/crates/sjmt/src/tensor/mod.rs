//! Dense f64 tensors and a tape-based reverse-mode differentiation engine.
//!
//! The tape is rebuilt on every forward pass: leaves are copied in with
//! [`Tape::leaf`], operations append nodes, and [`Tape::backward`] sweeps the
//! recorded nodes in reverse, accumulating gradients additively. Input node
//! ids are always strictly smaller than output ids, so a single reverse pass
//! visits every node exactly once.

pub mod gradcheck;

use crate::error::{Error, Result};

/// Dense n-dimensional value array in row-major order with an optional
/// gradient slot. Tensors not attached to a tape are plain immutable data
/// and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Contract(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Contract(format!(
                "tensor dimensions must be positive, got {:?}",
                shape
            )));
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(vec![1], vec![v]).unwrap()
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(vec![n], values).unwrap()
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient slot, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::Contract(format!(
                "gradient length {} does not match tensor of {} elements",
                delta.len(),
                self.values.len()
            )));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.values.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += *d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Numerically stable logistic function (no overflow for any finite input).
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

thread_local! {
    static SIGMOID_BACKWARD_FAULT: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Test-harness hook: corrupts the sigmoid backward rule on this thread so
/// mutation tests can confirm the gradient checker catches a broken rule.
#[doc(hidden)]
pub fn _set_sigmoid_backward_fault(enabled: bool) {
    SIGMOID_BACKWARD_FAULT.with(|f| f.set(enabled));
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    MulRow { a: Var, row: Var },
    Relu { a: Var },
    Sigmoid { a: Var },
    Softplus { a: Var },
    Log { a: Var },
    Scale { a: Var, c: f64 },
    RsqrtShift { a: Var },
    SumAll { a: Var },
    MeanRows { a: Var },
    LogSumExpRows { a: Var },
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    op: Op,
}

/// Recorded computation graph for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copies a tensor's values onto the tape as a leaf node.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.values.clone(), Op::Leaf)
    }

    pub fn leaf_values(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].values.len(), 1, "scalar_value on non-scalar");
        self.nodes[v.0].values[0]
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Var {
        debug_assert!(
            values.iter().all(|v| !v.is_nan()),
            "NaN in {:?} output",
            op
        );
        let numel = values.len();
        self.nodes.push(Node {
            shape,
            values,
            grad: vec![0.0; numel],
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.nodes[v.0].shape;
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.clone(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    /// Matrix product of `[m×k]` by `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if k != kb {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let crow = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &bv[p * n..(p + 1) * n];
                for (c, &bv) in crow.iter_mut().zip(brow) {
                    *c += aip * bv;
                }
            }
        }
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b }))
    }

    fn elementwise_shapes(&self, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        Ok(sa.clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.elementwise_shapes(a, b, "add")?;
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(shape, out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.elementwise_shapes(a, b, "sub")?;
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(shape, out, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.elementwise_shapes(a, b, "mul")?;
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(shape, out, Op::Mul { a, b }))
    }

    /// Adds a length-`c` row vector to every row of an `[r×c]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "add_row")?;
        if self.nodes[row.0].shape != [c] {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[row.0].shape.clone(),
            });
        }
        let av = &self.nodes[a.0].values;
        let rv = &self.nodes[row.0].values;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(av[i * c + j] + rv[j]);
            }
        }
        Ok(self.push(vec![r, c], out, Op::AddRow { a, row }))
    }

    /// Multiplies every row of an `[r×c]` matrix elementwise by a length-`c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "mul_row")?;
        if self.nodes[row.0].shape != [c] {
            return Err(Error::Shape {
                op: "mul_row",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[row.0].shape.clone(),
            });
        }
        let av = &self.nodes[a.0].values;
        let rv = &self.nodes[row.0].values;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(av[i * c + j] * rv[j]);
            }
        }
        Ok(self.push(vec![r, c], out, Op::MulRow { a, row }))
    }

    /// ReLU with subgradient 0 at exactly 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.max(0.0)).collect();
        self.push(shape, out, Op::Relu { a })
    }

    /// Elementwise logistic function, stable branch form.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| sigmoid_scalar(x)).collect();
        self.push(shape, out, Op::Sigmoid { a })
    }

    /// Elementwise `ln(1 + e^x)`, stable branch form.
    pub fn softplus(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| softplus_scalar(x))
            .collect();
        self.push(shape, out, Op::Softplus { a })
    }

    /// Elementwise natural log; inputs must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.nodes[a.0].values.iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                msg: format!("log of non-positive value {bad}"),
            });
        }
        let shape = self.nodes[a.0].shape.clone();
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x.ln()).collect();
        Ok(self.push(shape, out, Op::Log { a }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|&x| x * c).collect();
        self.push(shape, out, Op::Scale { a, c })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Elementwise `1 / sqrt(x + eps)`.
    pub fn rsqrt_shift(&mut self, a: Var, eps: f64) -> Result<Var> {
        if let Some(&bad) = self.nodes[a.0].values.iter().find(|v| **v + eps <= 0.0) {
            return Err(Error::Domain {
                op: "rsqrt_shift",
                msg: format!("rsqrt of non-positive value {bad} + {eps}"),
            });
        }
        let shape = self.nodes[a.0].shape.clone();
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| 1.0 / (x + eps).sqrt())
            .collect();
        Ok(self.push(shape, out, Op::RsqrtShift { a }))
    }

    /// Sums every element into a scalar. Reduction order is fixed
    /// (left-to-right over the flat buffer) for determinism.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut s = 0.0;
        for &v in &self.nodes[a.0].values {
            s += v;
        }
        self.push(vec![1], vec![s], Op::SumAll { a })
    }

    /// Column means of an `[r×c]` matrix, yielding a length-`c` vector.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "mean_rows")?;
        let av = &self.nodes[a.0].values;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += av[i * c + j];
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(self.push(vec![c], out, Op::MeanRows { a }))
    }

    /// Row-wise `ln Σ_j e^{x_ij}` of an `[r×c]` matrix, via max subtraction.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "log_sum_exp_rows")?;
        let av = &self.nodes[a.0].values;
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            let row = &av[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            out.push(m + s.ln());
        }
        Ok(self.push(vec![r], out, Op::LogSumExpRows { a }))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Reverse sweep from a single-element root. Gradients accumulate
    /// additively into every node reachable from the root; leaves keep
    /// theirs until [`Tape::zero_grads`] or a fresh tape.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        self.nodes[root.0].grad[0] += 1.0;

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            match node.op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = {
                        let s = &before[a.0].shape;
                        (s[0], s[1])
                    };
                    let n = node.shape[1];
                    let g = &node.grad;
                    let av = &before[a.0].values;
                    let bv = &before[b.0].values;
                    // Accumulate into temporaries first; `a` and `b` may be
                    // the same node.
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    // dA[i,p] += Σ_j g[i,j]·B[p,j]
                    for i2 in 0..m {
                        let grow = &g[i2 * n..(i2 + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            da[i2 * k + p] += dot;
                        }
                    }
                    // dB[p,j] += Σ_i A[i,p]·g[i,j]
                    for i2 in 0..m {
                        let grow = &g[i2 * n..(i2 + 1) * n];
                        for p in 0..k {
                            let aip = av[i2 * k + p];
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for (d, &gv) in dbrow.iter_mut().zip(grow) {
                                *d += aip * gv;
                            }
                        }
                    }
                    for (d, v) in before[a.0].grad.iter_mut().zip(&da) {
                        *d += *v;
                    }
                    for (d, v) in before[b.0].grad.iter_mut().zip(&db) {
                        *d += *v;
                    }
                }
                Op::Add { a, b } => {
                    for (j, &g) in node.grad.iter().enumerate() {
                        before[a.0].grad[j] += g;
                    }
                    for (j, &g) in node.grad.iter().enumerate() {
                        before[b.0].grad[j] += g;
                    }
                }
                Op::Sub { a, b } => {
                    for (j, &g) in node.grad.iter().enumerate() {
                        before[a.0].grad[j] += g;
                    }
                    for (j, &g) in node.grad.iter().enumerate() {
                        before[b.0].grad[j] -= g;
                    }
                }
                Op::Mul { a, b } => {
                    if a == b {
                        for (j, &g) in node.grad.iter().enumerate() {
                            let x = before[a.0].values[j];
                            before[a.0].grad[j] += 2.0 * g * x;
                        }
                    } else {
                        for (j, &g) in node.grad.iter().enumerate() {
                            let bj = before[b.0].values[j];
                            before[a.0].grad[j] += g * bj;
                        }
                        for (j, &g) in node.grad.iter().enumerate() {
                            let aj = before[a.0].values[j];
                            before[b.0].grad[j] += g * aj;
                        }
                    }
                }
                Op::AddRow { a, row } => {
                    let c = node.shape[1];
                    for (j, &g) in node.grad.iter().enumerate() {
                        before[a.0].grad[j] += g;
                    }
                    for (j, &g) in node.grad.iter().enumerate() {
                        before[row.0].grad[j % c] += g;
                    }
                }
                Op::MulRow { a, row } => {
                    let c = node.shape[1];
                    for (j, &g) in node.grad.iter().enumerate() {
                        let rv = before[row.0].values[j % c];
                        before[a.0].grad[j] += g * rv;
                    }
                    for (j, &g) in node.grad.iter().enumerate() {
                        let av = before[a.0].values[j];
                        before[row.0].grad[j % c] += g * av;
                    }
                }
                Op::Relu { a } => {
                    for (j, &g) in node.grad.iter().enumerate() {
                        if before[a.0].values[j] > 0.0 {
                            before[a.0].grad[j] += g;
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    let fault = SIGMOID_BACKWARD_FAULT.with(|f| f.get());
                    let scale = if fault { 1.01 } else { 1.0 };
                    for (j, &g) in node.grad.iter().enumerate() {
                        let y = node.values[j];
                        before[a.0].grad[j] += g * y * (1.0 - y) * scale;
                    }
                }
                Op::Softplus { a } => {
                    for (j, &g) in node.grad.iter().enumerate() {
                        let x = before[a.0].values[j];
                        before[a.0].grad[j] += g * sigmoid_scalar(x);
                    }
                }
                Op::Log { a } => {
                    for (j, &g) in node.grad.iter().enumerate() {
                        let x = before[a.0].values[j];
                        before[a.0].grad[j] += g / x;
                    }
                }
                Op::Scale { a, c } => {
                    for (j, &g) in node.grad.iter().enumerate() {
                        before[a.0].grad[j] += g * c;
                    }
                }
                Op::RsqrtShift { a } => {
                    for (j, &g) in node.grad.iter().enumerate() {
                        let y = node.values[j];
                        before[a.0].grad[j] += g * (-0.5) * y * y * y;
                    }
                }
                Op::SumAll { a } => {
                    let g = node.grad[0];
                    for d in before[a.0].grad.iter_mut() {
                        *d += g;
                    }
                }
                Op::MeanRows { a } => {
                    let r = before[a.0].shape[0];
                    let c = node.shape[0];
                    let inv = 1.0 / r as f64;
                    for i2 in 0..r {
                        for j in 0..c {
                            before[a.0].grad[i2 * c + j] += node.grad[j] * inv;
                        }
                    }
                }
                Op::LogSumExpRows { a } => {
                    let c = before[a.0].shape[1];
                    let r = node.shape[0];
                    for i2 in 0..r {
                        let g = node.grad[i2];
                        let lse = node.values[i2];
                        for j in 0..c {
                            let x = before[a.0].values[i2 * c + j];
                            before[a.0].grad[i2 * c + j] += g * (x - lse).exp();
                        }
                    }
                }
            }
        }

        debug_assert!(
            self.nodes
                .iter()
                .all(|n| n.grad.iter().all(|g| !g.is_nan())),
            "NaN in gradients after backward"
        );
        Ok(())
    }
}
