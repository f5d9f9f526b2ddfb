//! Recorded computation graph with reverse-mode gradient accumulation.
//!
//! A [`Tape`] lives for one forward/backward pass: leaves are pushed in,
//! each op records its operands, and [`Tape::backward`] walks the record in
//! reverse accumulating exact analytic gradients. Gradient buffers persist
//! on the tape, so a second backward call adds on top of the first.

use super::kernels;
use super::tensor::{Parameter, Tensor};
use super::DiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy)]
pub enum Axis {
    /// Collapse rows; result is `1 x cols`.
    Rows,
    /// Collapse columns; result is `rows x 1`.
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Broadcast a `1 x n` row over every row of an `m x n` operand.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MeanAxis(Var, Axis),
    SumAxis(Var, Axis),
    Mean(Var),
    Mse(Var, Var),
    Reshape(Var),
    /// Within each consecutive block of `n` rows, every row becomes the sum
    /// of the other rows of its block (complete-graph neighbor sum).
    NeighborSumBlocks(Var, usize),
    /// Mean of each consecutive block of `n` rows.
    BlockMeanRows(Var, usize),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
}

/// One forward/backward recording.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; no gradient is tracked through it.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.clone(), false)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.clone(), true)
    }

    /// Differentiable leaf holding a parameter's current value.
    pub fn param(&mut self, p: &Parameter) -> Var {
        self.leaf(&p.value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated at `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::from_vec(node.value.rows(), node.value.cols(), g.clone())
                .expect("gradient buffer is shape-matched")
        })
    }

    /// Adds `d(loss)/d(param)` onto the parameter's persistent grad buffer.
    pub fn accumulate_into(&self, v: Var, p: &mut Parameter) {
        if let Some(g) = &self.nodes[v.0].grad {
            debug_assert_eq!(p.grad.len(), g.len());
            for (dst, src) in p.grad.data_mut().iter_mut().zip(g) {
                *dst += src;
            }
        }
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> DiffError {
        DiffError::ShapeMismatch {
            op,
            lhs: self.value(a).shape(),
            rhs: self.value(b).shape(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, ka) = self.value(a).shape();
        let (kb, n) = self.value(b).shape();
        if ka != kb {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = Tensor::zeros(m, n);
        kernels::matmul_nn(
            self.value(a).data(),
            self.value(b).data(),
            m,
            ka,
            n,
            out.data_mut(),
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), out, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("add", a, b));
        }
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += bv;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), out, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("sub", a, b));
        }
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= bv;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), out, needs))
    }

    /// `a + row` with `row` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (_, n) = self.value(a).shape();
        if self.value(row).shape() != (1, n) {
            return Err(self.shape_err("add_row", a, row));
        }
        let mut out = self.value(a).clone();
        let row_data = self.value(row).data().to_vec();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&row_data) {
                *o += bv;
            }
        }
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(Op::AddRow(a, row), out, needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o *= c;
        }
        let needs = self.needs(a);
        self.push(Op::Scale(a, c), out, needs)
    }

    fn map_unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o = f(*o);
        }
        let needs = self.needs(a);
        self.push(op, out, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map_unary(a, Op::LeakyRelu(a, slope), move |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Tanh(a), f64::tanh)
    }

    /// `ln(1 + e^x)` in the overflow-safe form `max(x, 0) + ln(1 + e^{-|x|})`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.map_unary(a, Op::Softplus(a), |x| x.max(0.0) + (-x.abs()).exp().ln_1p())
    }

    /// Softmax along each row, computed with the max-shift trick.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let needs = self.needs(a);
        self.push(Op::SoftmaxRows(a), out, needs)
    }

    /// Stacks operands vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let cols = self.value(*parts.first().ok_or(DiffError::EmptyConcat)?).cols();
        let mut rows = 0;
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
            rows += self.value(p).rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out, needs))
    }

    /// Concatenates operands left-to-right within each row; all must share
    /// a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = self.value(*parts.first().ok_or(DiffError::EmptyConcat)?).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
            cols += self.value(p).cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let c = self.value(p).cols();
            for r in 0..rows {
                let src = self.value(p).row(r).to_vec();
                out.row_mut(r)[offset..offset + c].copy_from_slice(&src);
            }
            offset += c;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out, needs))
    }

    pub fn mean_axis(&mut self, a: Var, axis: Axis) -> Var {
        let (m, n) = self.value(a).shape();
        let out = match axis {
            Axis::Rows => {
                let mut acc = vec![0.0; n];
                for r in 0..m {
                    for (o, &v) in acc.iter_mut().zip(self.value(a).row(r)) {
                        *o += v;
                    }
                }
                for o in &mut acc {
                    *o /= m as f64;
                }
                Tensor::from_vec(1, n, acc).expect("mean shape")
            }
            Axis::Cols => {
                let mut acc = vec![0.0; m];
                for (r, o) in acc.iter_mut().enumerate() {
                    *o = self.value(a).row(r).iter().sum::<f64>() / n as f64;
                }
                Tensor::from_vec(m, 1, acc).expect("mean shape")
            }
        };
        let needs = self.needs(a);
        self.push(Op::MeanAxis(a, axis), out, needs)
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let (m, n) = self.value(a).shape();
        let out = match axis {
            Axis::Rows => {
                let mut acc = vec![0.0; n];
                for r in 0..m {
                    for (o, &v) in acc.iter_mut().zip(self.value(a).row(r)) {
                        *o += v;
                    }
                }
                Tensor::from_vec(1, n, acc).expect("sum shape")
            }
            Axis::Cols => {
                let mut acc = vec![0.0; m];
                for (r, o) in acc.iter_mut().enumerate() {
                    *o = self.value(a).row(r).iter().sum::<f64>();
                }
                Tensor::from_vec(m, 1, acc).expect("sum shape")
            }
        };
        let needs = self.needs(a);
        self.push(Op::SumAxis(a, axis), out, needs)
    }

    /// Mean over all elements; result is scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        let out = Tensor::scalar(total / self.value(a).len() as f64);
        let needs = self.needs(a);
        self.push(Op::Mean(a), out, needs)
    }

    /// Mean squared error between shape-matched operands; result is scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("mse", a, b));
        }
        let n = self.value(a).len() as f64;
        let sum: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(sum / n), needs))
    }

    /// Row-major reinterpretation; gradient passes through unchanged.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape(a), out, needs))
    }

    /// For input rows grouped into consecutive blocks of `block` rows, each
    /// output row is the sum of the other rows in its block. This is the
    /// neighbor aggregation of a complete graph without self-loops, applied
    /// to a whole batch of stacked graphs at once.
    pub fn neighbor_sum_blocks(&mut self, a: Var, block: usize) -> Result<Var, DiffError> {
        let m = self.value(a).rows();
        if block == 0 || m % block != 0 {
            return Err(DiffError::BadBlock { rows: m, block });
        }
        let out = neighbor_sum_blocks_value(self.value(a), block);
        let needs = self.needs(a);
        Ok(self.push(Op::NeighborSumBlocks(a, block), out, needs))
    }

    /// Mean of each consecutive block of `block` rows; output has
    /// `rows / block` rows.
    pub fn block_mean_rows(&mut self, a: Var, block: usize) -> Result<Var, DiffError> {
        let (m, n) = self.value(a).shape();
        if block == 0 || m % block != 0 {
            return Err(DiffError::BadBlock { rows: m, block });
        }
        let groups = m / block;
        let mut out = Tensor::zeros(groups, n);
        for g in 0..groups {
            let mut acc = vec![0.0; n];
            for r in g * block..(g + 1) * block {
                for (o, &v) in acc.iter_mut().zip(self.value(a).row(r)) {
                    *o += v;
                }
            }
            for (o, v) in out.row_mut(g).iter_mut().zip(acc) {
                *o = v / block as f64;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Op::BlockMeanRows(a, block), out, needs))
    }

    fn grad_buf(&mut self, v: Var) -> &mut Vec<f64> {
        let len = self.nodes[v.0].value.len();
        self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; len])
    }

    fn add_grad(&mut self, v: Var, delta: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let buf = self.grad_buf(v);
        debug_assert_eq!(buf.len(), delta.len());
        for (dst, src) in buf.iter_mut().zip(delta) {
            *dst += src;
        }
    }

    /// Accumulates `d(loss)/d(node)` for every node the scalar `loss`
    /// depends on. Nodes not on a path from a differentiable leaf to the
    /// loss keep their gradient untouched.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if self.value(loss).shape() != (1, 1) {
            return Err(DiffError::NonScalarLoss {
                shape: self.value(loss).shape(),
            });
        }
        // Seed, then walk the record backwards: every node's operands were
        // pushed before it, so one reverse sweep sees each edge once.
        let mut upstream: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        upstream[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(d) = upstream[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.add_grad(Var(idx), &d);
            let op = self.nodes[idx].op.clone();
            self.propagate(&op, Var(idx), &d, &mut upstream)?;
        }
        for node in &self.nodes {
            if let Some(g) = &node.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(DiffError::NonFiniteGradient);
                }
            }
        }
        Ok(())
    }

    fn send(&self, target: Var, delta: Vec<f64>, upstream: &mut [Option<Vec<f64>>]) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut upstream[target.0] {
            Some(buf) => {
                for (dst, src) in buf.iter_mut().zip(delta) {
                    *dst += src;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(
        &mut self,
        op: &Op,
        out: Var,
        d: &[f64],
        upstream: &mut [Option<Vec<f64>>],
    ) -> Result<(), DiffError> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).shape();
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_nt(d, self.value(*b).data(), m, n, k, &mut da);
                    self.send(*a, da, upstream);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_tn(self.value(*a).data(), d, k, m, n, &mut db);
                    self.send(*b, db, upstream);
                }
            }
            Op::Add(a, b) => {
                self.send(*a, d.to_vec(), upstream);
                self.send(*b, d.to_vec(), upstream);
            }
            Op::Sub(a, b) => {
                self.send(*a, d.to_vec(), upstream);
                self.send(*b, d.iter().map(|v| -v).collect(), upstream);
            }
            Op::AddRow(a, row) => {
                self.send(*a, d.to_vec(), upstream);
                if self.needs(*row) {
                    let n = self.value(*row).cols();
                    let mut dr = vec![0.0; n];
                    for chunk in d.chunks(n) {
                        for (o, &v) in dr.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    self.send(*row, dr, upstream);
                }
            }
            Op::Scale(a, c) => {
                self.send(*a, d.iter().map(|v| v * c).collect(), upstream);
            }
            Op::Relu(a) => {
                let da = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.send(*a, da, upstream);
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let da = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(&x, &g)| if x > 0.0 { g } else { s * g })
                    .collect();
                self.send(*a, da, upstream);
            }
            Op::Tanh(a) => {
                let da = self
                    .value(out)
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(&y, &g)| g * (1.0 - y * y))
                    .collect();
                self.send(*a, da, upstream);
            }
            Op::Softplus(a) => {
                let da = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(d)
                    .map(|(&x, &g)| g / (1.0 + (-x).exp()))
                    .collect();
                self.send(*a, da, upstream);
            }
            Op::SoftmaxRows(a) => {
                let y = self.value(out);
                let n = y.cols();
                let mut da = vec![0.0; d.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let dr = &d[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(dr).map(|(&yv, &gv)| yv * gv).sum();
                    for ((o, &yv), &gv) in da[r * n..(r + 1) * n].iter_mut().zip(yr).zip(dr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.send(*a, da, upstream);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.needs(p) {
                        self.send(p, d[offset..offset + len].to_vec(), upstream);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = self.value(out).rows();
                let total = self.value(out).cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = vec![0.0; rows * c];
                        for r in 0..rows {
                            dp[r * c..(r + 1) * c]
                                .copy_from_slice(&d[r * total + offset..r * total + offset + c]);
                        }
                        self.send(p, dp, upstream);
                    }
                    offset += c;
                }
            }
            Op::MeanAxis(a, axis) => {
                let (m, n) = self.value(*a).shape();
                let mut da = vec![0.0; m * n];
                match axis {
                    Axis::Rows => {
                        for r in 0..m {
                            for (o, &g) in da[r * n..(r + 1) * n].iter_mut().zip(d) {
                                *o = g / m as f64;
                            }
                        }
                    }
                    Axis::Cols => {
                        for r in 0..m {
                            for o in da[r * n..(r + 1) * n].iter_mut() {
                                *o = d[r] / n as f64;
                            }
                        }
                    }
                }
                self.send(*a, da, upstream);
            }
            Op::SumAxis(a, axis) => {
                let (m, n) = self.value(*a).shape();
                let mut da = vec![0.0; m * n];
                match axis {
                    Axis::Rows => {
                        for r in 0..m {
                            da[r * n..(r + 1) * n].copy_from_slice(d);
                        }
                    }
                    Axis::Cols => {
                        for r in 0..m {
                            for o in da[r * n..(r + 1) * n].iter_mut() {
                                *o = d[r];
                            }
                        }
                    }
                }
                self.send(*a, da, upstream);
            }
            Op::Mean(a) => {
                let scale = d[0] / self.value(*a).len() as f64;
                let da = vec![scale; self.value(*a).len()];
                self.send(*a, da, upstream);
            }
            Op::Mse(a, b) => {
                let n = self.value(*a).len() as f64;
                let scale = 2.0 * d[0] / n;
                let diffs: Vec<f64> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(&x, &y)| scale * (x - y))
                    .collect();
                if self.needs(*a) {
                    self.send(*a, diffs.clone(), upstream);
                }
                if self.needs(*b) {
                    self.send(*b, diffs.iter().map(|v| -v).collect(), upstream);
                }
            }
            Op::Reshape(a) => {
                self.send(*a, d.to_vec(), upstream);
            }
            Op::NeighborSumBlocks(a, block) => {
                // The operator is symmetric: its transpose is itself.
                let t = Tensor::from_vec(self.value(*a).rows(), self.value(*a).cols(), d.to_vec())?;
                let da = neighbor_sum_blocks_value(&t, *block);
                self.send(*a, da.into_data(), upstream);
            }
            Op::BlockMeanRows(a, block) => {
                let (m, n) = self.value(*a).shape();
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    let g = r / block;
                    for (o, &v) in da[r * n..(r + 1) * n].iter_mut().zip(&d[g * n..(g + 1) * n]) {
                        *o = v / *block as f64;
                    }
                }
                self.send(*a, da, upstream);
            }
        }
        Ok(())
    }
}

fn neighbor_sum_blocks_value(x: &Tensor, block: usize) -> Tensor {
    let (m, n) = x.shape();
    let groups = m / block;
    let mut out = Tensor::zeros(m, n);
    for g in 0..groups {
        let mut total = vec![0.0; n];
        for r in g * block..(g + 1) * block {
            for (o, &v) in total.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        for r in g * block..(g + 1) * block {
            let src = x.row(r).to_vec();
            for ((o, &t), s) in out.row_mut(r).iter_mut().zip(&total).zip(src) {
                *o = t - s;
            }
        }
    }
    out
}
