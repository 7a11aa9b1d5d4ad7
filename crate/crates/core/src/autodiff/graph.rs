use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Generic op selector for [`Graph::forward_op`].
#[derive(Debug, Clone)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    SoftmaxLastAxis,
    Gather(Vec<usize>),
    Concat(usize),
    MeanReduce,
    SumReduce,
    Log,
    Transpose,
    Scale(f64),
    Clamp(f64, f64),
}

#[derive(Debug, Clone)]
enum Rule {
    Leaf { tracked: bool },
    MatMul,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    SoftmaxLastAxis,
    Gather { indices: Vec<usize> },
    Concat { axis: usize },
    MeanReduce,
    SumReduce,
    Log,
    Transpose,
    Scale { factor: f64 },
    Clamp { lo: f64, hi: f64 },
}

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    rule: Rule,
    /// Persistent accumulator; zero until `backward` touches it.
    grad: Option<Tensor>,
}

/// Define-by-run computation graph. Nodes are appended in topological
/// order, so the reverse pass is a single reverse scan of the tape.
///
/// Accumulation contract: `backward` adds into each node's gradient
/// accumulator; calling it twice without [`Graph::zero_grads`] yields
/// exactly twice the gradient.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tracked leaf: participates in gradient accumulation.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, vec![], Rule::Leaf { tracked: true })
    }

    /// Untracked input: treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(value, vec![], Rule::Leaf { tracked: false })
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated at `id`; zeros if backward never reached it.
    pub fn grad(&self, id: NodeId) -> Tensor {
        let node = &self.nodes[id.0];
        node.grad.clone().unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push_unchecked(&mut self, value: Tensor, parents: Vec<NodeId>, rule: Rule) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, parents, rule, grad: None });
        id
    }

    fn push(&mut self, op: &'static str, value: Tensor, parents: Vec<NodeId>, rule: Rule) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        Ok(self.push_unchecked(value, parents, rule))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape { op, detail: format!("{:?} vs {:?}", sa, sb) });
        }
        Ok(())
    }

    // ── Forward ops ─────────────────────────────────────────────────

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.value(a).dims2("matmul")?;
        let (kb, n) = self.value(b).dims2("matmul")?;
        if ka != kb {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("inner dims differ: {:?} x {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let out = matmul_raw(self.value(a).values(), self.value(b).values(), m, ka, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, vec![a, b], Rule::MatMul)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let vals: Vec<f64> =
            self.value(a).values().iter().zip(self.value(b).values()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), vals)?;
        self.push("add", value, vec![a, b], Rule::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let vals: Vec<f64> =
            self.value(a).values().iter().zip(self.value(b).values()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), vals)?;
        self.push("sub", value, vec![a, b], Rule::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let vals: Vec<f64> =
            self.value(a).values().iter().zip(self.value(b).values()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), vals)?;
        self.push("mul", value, vec![a, b], Rule::Mul)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let vals: Vec<f64> = self.value(x).values().iter().map(|v| sigmoid_raw(*v)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        self.push("sigmoid", value, vec![x], Rule::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let vals: Vec<f64> = self.value(x).values().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        self.push("tanh", value, vec![x], Rule::Tanh)
    }

    /// Softmax over the last axis, max-subtracted for overflow safety.
    pub fn softmax_last(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.shape().is_empty() {
            return Err(Error::Shape { op: "softmax", detail: "rank 0 input".into() });
        }
        let cols = *t.shape().last().unwrap();
        if cols == 0 {
            return Err(Error::Shape { op: "softmax", detail: "zero-length last axis".into() });
        }
        let mut vals = t.values().to_vec();
        for row in vals.chunks_mut(cols) {
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
        let value = Tensor::new(t.shape().to_vec(), vals)?;
        self.push("softmax", value, vec![x], Rule::SoftmaxLastAxis)
    }

    /// Row gather from a rank-2 matrix: output `[indices.len(), cols]`.
    pub fn gather(&mut self, matrix: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.value(matrix).dims2("gather")?;
        let mut vals = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::Shape { op: "gather", detail: format!("row {} out of {} rows", i, rows) });
            }
            vals.extend_from_slice(&self.value(matrix).values()[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::new(vec![indices.len(), cols], vals)?;
        self.push("gather", value, vec![matrix], Rule::Gather { indices: indices.to_vec() })
    }

    /// Concatenate rank-2 tensors along `axis` (0 or 1).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape { op: "concat", detail: "no inputs".into() });
        }
        if axis > 1 {
            return Err(Error::Shape { op: "concat", detail: format!("axis {} unsupported", axis) });
        }
        let (r0, c0) = self.value(parts[0]).dims2("concat")?;
        let (mut rows, mut cols) = (r0, c0);
        for &p in &parts[1..] {
            let (r, c) = self.value(p).dims2("concat")?;
            if axis == 0 {
                if c != c0 {
                    return Err(Error::Shape { op: "concat", detail: format!("column mismatch {} vs {}", c, c0) });
                }
                rows += r;
            } else {
                if r != r0 {
                    return Err(Error::Shape { op: "concat", detail: format!("row mismatch {} vs {}", r, r0) });
                }
                cols += c;
            }
        }
        let mut vals = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                vals.extend_from_slice(self.value(p).values());
            }
        } else {
            for r in 0..rows {
                for &p in parts {
                    let (_, c) = self.value(p).dims2("concat")?;
                    vals.extend_from_slice(&self.value(p).values()[r * c..(r + 1) * c]);
                }
            }
        }
        let value = Tensor::new(vec![rows, cols], vals)?;
        self.push("concat", value, parts.to_vec(), Rule::Concat { axis })
    }

    /// Mean over all elements; result is a scalar.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::Shape { op: "mean", detail: "empty tensor".into() });
        }
        let mean = t.values().iter().sum::<f64>() / t.numel() as f64;
        self.push("mean", Tensor::scalar(mean), vec![x], Rule::MeanReduce)
    }

    /// Sum over all elements; result is a scalar.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let sum = self.value(x).values().iter().sum::<f64>();
        self.push("sum", Tensor::scalar(sum), vec![x], Rule::SumReduce)
    }

    /// Natural log. Non-positive inputs produce a NonFinite error.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let vals: Vec<f64> = self.value(x).values().iter().map(|v| v.ln()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        self.push("log", value, vec![x], Rule::Log)
    }

    /// Rank-2 transpose.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(x).dims2("transpose")?;
        let src = self.value(x).values();
        let mut vals = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                vals[c * rows + r] = src[r * cols + c];
            }
        }
        let value = Tensor::new(vec![cols, rows], vals)?;
        self.push("transpose", value, vec![x], Rule::Transpose)
    }

    /// Multiply by a compile-time constant factor.
    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let vals: Vec<f64> = self.value(x).values().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        self.push("scale", value, vec![x], Rule::Scale { factor })
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes only inside the band.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let vals: Vec<f64> = self.value(x).values().iter().map(|v| v.clamp(lo, hi)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        self.push("clamp", value, vec![x], Rule::Clamp { lo, hi })
    }

    /// Uniform dispatch over op kinds; used by verification sweeps.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let arity = |want: usize| -> Result<()> {
            if inputs.len() != want {
                return Err(Error::Shape {
                    op: "forward_op",
                    detail: format!("{:?} wants {} inputs, got {}", kind, want, inputs.len()),
                });
            }
            Ok(())
        };
        match &kind {
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            OpKind::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            OpKind::SoftmaxLastAxis => {
                arity(1)?;
                self.softmax_last(inputs[0])
            }
            OpKind::Gather(indices) => {
                arity(1)?;
                let idx = indices.clone();
                self.gather(inputs[0], &idx)
            }
            OpKind::Concat(axis) => self.concat(inputs, *axis),
            OpKind::MeanReduce => {
                arity(1)?;
                self.mean_all(inputs[0])
            }
            OpKind::SumReduce => {
                arity(1)?;
                self.sum_all(inputs[0])
            }
            OpKind::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            OpKind::Transpose => {
                arity(1)?;
                self.transpose(inputs[0])
            }
            OpKind::Scale(f) => {
                arity(1)?;
                self.scale(inputs[0], *f)
            }
            OpKind::Clamp(lo, hi) => {
                arity(1)?;
                self.clamp(inputs[0], *lo, *hi)
            }
        }
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar root. Adds ∂root/∂node into every
    /// node's persistent accumulator.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::NonScalarRoot { shape: self.value(root).shape().to_vec() });
        }
        // Fresh propagation buffers per call; accumulators only receive
        // this pass's totals at the end.
        let mut local: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Tensor::zeros(self.value(root).shape());
        seed.values_mut()[0] = 1.0;
        local[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let Some(out_grad) = local[i].take() else { continue };
            self.propagate(i, &out_grad, &mut local)?;
            let node = &mut self.nodes[i];
            if matches!(node.rule, Rule::Leaf { tracked: false }) {
                continue;
            }
            match &mut node.grad {
                Some(acc) => {
                    for (a, g) in acc.values_mut().iter_mut().zip(out_grad.values()) {
                        *a += g;
                    }
                }
                None => node.grad = Some(out_grad),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, out_grad: &Tensor, local: &mut [Option<Tensor>]) -> Result<()> {
        let add_into = |local: &mut [Option<Tensor>], target: NodeId, shape: &[usize], contrib: &[f64]| {
            let slot = &mut local[target.0];
            match slot {
                Some(t) => {
                    for (a, c) in t.values_mut().iter_mut().zip(contrib) {
                        *a += c;
                    }
                }
                None => {
                    let mut t = Tensor::zeros(shape);
                    t.values_mut().copy_from_slice(contrib);
                    *slot = Some(t);
                }
            }
        };
        let node = &self.nodes[i];
        let parents = &node.parents;
        match &node.rule {
            Rule::Leaf { .. } => {}
            Rule::MatMul => {
                let a = self.value(parents[0]);
                let b = self.value(parents[1]);
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                // dA = dC · Bᵀ
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for c in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += out_grad.values()[r * n + j] * b.values()[c * n + j];
                        }
                        da[r * k + c] = s;
                    }
                }
                add_into(local, parents[0], a.shape(), &da);
                // dB = Aᵀ · dC
                let mut db = vec![0.0; k * n];
                for r in 0..k {
                    for c in 0..n {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += a.values()[j * k + r] * out_grad.values()[j * n + c];
                        }
                        db[r * n + c] = s;
                    }
                }
                add_into(local, parents[1], b.shape(), &db);
            }
            Rule::Add => {
                add_into(local, parents[0], out_grad.shape(), out_grad.values());
                add_into(local, parents[1], out_grad.shape(), out_grad.values());
            }
            Rule::Sub => {
                add_into(local, parents[0], out_grad.shape(), out_grad.values());
                let neg: Vec<f64> = out_grad.values().iter().map(|v| -v).collect();
                add_into(local, parents[1], out_grad.shape(), &neg);
            }
            Rule::Mul => {
                let a = self.value(parents[0]);
                let b = self.value(parents[1]);
                let da: Vec<f64> = out_grad.values().iter().zip(b.values()).map(|(g, y)| g * y).collect();
                add_into(local, parents[0], a.shape(), &da);
                let db: Vec<f64> = out_grad.values().iter().zip(a.values()).map(|(g, x)| g * x).collect();
                add_into(local, parents[1], b.shape(), &db);
            }
            Rule::Sigmoid => {
                let y = &node.value;
                let dx: Vec<f64> =
                    out_grad.values().iter().zip(y.values()).map(|(g, s)| g * s * (1.0 - s)).collect();
                add_into(local, parents[0], y.shape(), &dx);
            }
            Rule::Tanh => {
                let y = &node.value;
                let dx: Vec<f64> =
                    out_grad.values().iter().zip(y.values()).map(|(g, t)| g * (1.0 - t * t)).collect();
                add_into(local, parents[0], y.shape(), &dx);
            }
            Rule::SoftmaxLastAxis => {
                let y = &node.value;
                let cols = *y.shape().last().unwrap();
                let mut dx = vec![0.0; y.numel()];
                for (row, (yrow, grow)) in y.values().chunks(cols).zip(out_grad.values().chunks(cols)).enumerate() {
                    let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        dx[row * cols + c] = yrow[c] * (grow[c] - dot);
                    }
                }
                add_into(local, parents[0], y.shape(), &dx);
            }
            Rule::Gather { indices } => {
                let src = self.value(parents[0]);
                let cols = src.shape()[1];
                // Scatter-add: only gathered rows receive gradient.
                let mut dm = vec![0.0; src.numel()];
                for (pos, &row) in indices.iter().enumerate() {
                    for c in 0..cols {
                        dm[row * cols + c] += out_grad.values()[pos * cols + c];
                    }
                }
                add_into(local, parents[0], src.shape(), &dm);
            }
            Rule::Concat { axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parents {
                        let part = self.value(p);
                        let n = part.numel();
                        add_into(local, p, part.shape(), &out_grad.values()[offset..offset + n]);
                        offset += n;
                    }
                } else {
                    let rows = node.value.shape()[0];
                    let total_cols = node.value.shape()[1];
                    let mut col_offset = 0;
                    for &p in parents {
                        let part = self.value(p);
                        let c = part.shape()[1];
                        let mut dp = vec![0.0; part.numel()];
                        for r in 0..rows {
                            dp[r * c..(r + 1) * c].copy_from_slice(
                                &out_grad.values()[r * total_cols + col_offset..r * total_cols + col_offset + c],
                            );
                        }
                        add_into(local, p, part.shape(), &dp);
                        col_offset += c;
                    }
                }
            }
            Rule::MeanReduce => {
                let src = self.value(parents[0]);
                let g = out_grad.values()[0] / src.numel() as f64;
                let dx = vec![g; src.numel()];
                add_into(local, parents[0], src.shape(), &dx);
            }
            Rule::SumReduce => {
                let src = self.value(parents[0]);
                let dx = vec![out_grad.values()[0]; src.numel()];
                add_into(local, parents[0], src.shape(), &dx);
            }
            Rule::Log => {
                let src = self.value(parents[0]);
                let dx: Vec<f64> = out_grad.values().iter().zip(src.values()).map(|(g, x)| g / x).collect();
                add_into(local, parents[0], src.shape(), &dx);
            }
            Rule::Transpose => {
                let src = self.value(parents[0]);
                let (rows, cols) = (src.shape()[0], src.shape()[1]);
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dx[r * cols + c] = out_grad.values()[c * rows + r];
                    }
                }
                add_into(local, parents[0], src.shape(), &dx);
            }
            Rule::Scale { factor } => {
                let dx: Vec<f64> = out_grad.values().iter().map(|g| g * factor).collect();
                add_into(local, parents[0], out_grad.shape(), &dx);
            }
            Rule::Clamp { lo, hi } => {
                let src = self.value(parents[0]);
                let dx: Vec<f64> = out_grad
                    .values()
                    .iter()
                    .zip(src.values())
                    .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                    .collect();
                add_into(local, parents[0], src.shape(), &dx);
            }
        }
        Ok(())
    }
}

fn sigmoid_raw(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        for p in 0..k {
            let av = a[r * k + p];
            if av == 0.0 {
                continue;
            }
            for c in 0..n {
                out[r * n + c] += av * b[p * n + c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(g: &mut Graph, v: f64) -> NodeId {
        g.leaf(Tensor::scalar(v))
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(out).values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 0.0);
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn softmax_symmetry() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1.0, 1.0, 1.0]));
        let y = g.softmax_last(x).unwrap();
        for v in g.value(y).values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_overflow_safe() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1000.0, 1000.0]));
        let y = g.softmax_last(x).unwrap();
        assert!((g.value(y).values()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn backward_sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 0.0);
        let y = g.sigmoid(x).unwrap();
        g.backward(y).unwrap();
        assert!((g.grad(x).item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_product_rule() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::row(vec![3.0, 4.0]));
        let prod = g.mul(a, b).unwrap();
        let root = g.sum_all(prod).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(a).values(), &[3.0, 4.0]);
        assert_eq!(g.grad(b).values(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(a), Err(Error::NonScalarRoot { .. })));
    }

    #[test]
    fn backward_twice_doubles_gradient() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 3.0);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        let once = g.grad(x).item();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 2.0 * once);
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 1.0);
        let orphan = g.leaf(Tensor::row(vec![5.0, 6.0]));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(orphan).values(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_reports_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        let err = g.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add"), "{msg}");
        assert!(msg.contains("[1, 2]") && msg.contains("[1, 3]"), "{msg}");
    }

    #[test]
    fn log_of_zero_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![0.0]));
        assert!(matches!(g.log(x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn gather_scatters_gradient_into_rows() {
        let mut g = Graph::new();
        let m = g.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let picked = g.gather(m, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(picked).values(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let root = g.sum_all(picked).unwrap();
        g.backward(root).unwrap();
        // Row 2 gathered twice, row 0 once, row 1 never.
        assert_eq!(g.grad(m).values(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_axis0_roundtrip_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::row(vec![3.0, 4.0]));
        let cat = g.concat(&[a, b], 0).unwrap();
        assert_eq!(g.value(cat).shape(), &[2, 2]);
        let doubled = g.scale(cat, 2.0).unwrap();
        let root = g.sum_all(doubled).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(a).values(), &[2.0, 2.0]);
        assert_eq!(g.grad(b).values(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_do_not_track_but_pass_gradient_through() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 2.0);
        let c = g.constant(Tensor::scalar(10.0));
        let y = g.mul(x, c).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 10.0);
    }
}
