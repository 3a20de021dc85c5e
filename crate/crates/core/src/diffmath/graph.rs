use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// Elementwise maximum; on ties the gradient goes to the first operand.
    Max,
    Relu,
    Sigmoid,
    /// Standard fuzzy negation `1 - t`.
    NegationComplement,
}

impl ElementwiseOp {
    pub fn arity(self) -> usize {
        match self {
            Self::Add | Self::Sub | Self::Mul | Self::Max => 2,
            Self::Relu | Self::Sigmoid | Self::NegationComplement => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Min,
    Max,
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(ElementwiseOp, Var, Var),
    Unary(ElementwiseOp, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Reduce {
        input: Var,
        op: ReduceOp,
        axis: usize,
        /// Winning position along `axis` for each output element (min/max only).
        winners: Vec<usize>,
    },
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    EmbeddingBag {
        table: Var,
        bags: Vec<Vec<usize>>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so every node's
/// inputs precede it and `backward` simply walks the tape in reverse.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn strides_for_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
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

    fn push(&mut self, op: Op, mut value: Tensor, requires_grad: bool) -> Var {
        value.set_requires_grad(requires_grad);
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Trainable leaf: gradients will be collected for it.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.clone(), true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .map_err(|_| Error::dim(op, format!("expected 2-D operand, got {:?}", self.shape(v))))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bpj) in row.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, rg))
    }

    /// Applies `op` to `args` (one operand for unary ops, two for binary ones).
    pub fn elementwise(&mut self, op: ElementwiseOp, args: &[Var]) -> Result<Var> {
        if args.len() != op.arity() {
            return Err(Error::Contract(format!(
                "{op:?} takes {} operand(s), got {}",
                op.arity(),
                args.len()
            )));
        }
        if let [a, b] = *args {
            if self.shape(a) != self.shape(b) {
                return Err(Error::dim(
                    "elementwise",
                    format!("{op:?} on {:?} and {:?}", self.shape(a), self.shape(b)),
                ));
            }
            let av = self.value(a).values();
            let bv = self.value(b).values();
            let out: Vec<f64> = match op {
                ElementwiseOp::Add => av.iter().zip(bv).map(|(x, y)| x + y).collect(),
                ElementwiseOp::Sub => av.iter().zip(bv).map(|(x, y)| x - y).collect(),
                ElementwiseOp::Mul => av.iter().zip(bv).map(|(x, y)| x * y).collect(),
                ElementwiseOp::Max => av.iter().zip(bv).map(|(x, y)| x.max(*y)).collect(),
                _ => unreachable!(),
            };
            let t = Tensor::new(self.shape(a).to_vec(), out)?;
            let rg = self.rg(a) || self.rg(b);
            Ok(self.push(Op::Binary(op, a, b), t, rg))
        } else {
            let a = args[0];
            let f: fn(f64) -> f64 = match op {
                ElementwiseOp::Relu => |t| t.max(0.0),
                ElementwiseOp::Sigmoid => sigmoid,
                ElementwiseOp::NegationComplement => |t| 1.0 - t,
                _ => unreachable!(),
            };
            let out = self.value(a).values().iter().map(|&t| f(t)).collect();
            let t = Tensor::new(self.shape(a).to_vec(), out)?;
            let rg = self.rg(a);
            Ok(self.push(Op::Unary(op, a), t, rg))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, &[a, b])
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Max, &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.elementwise(ElementwiseOp::Relu, &[a]).expect("unary op")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.elementwise(ElementwiseOp::Sigmoid, &[a]).expect("unary op")
    }

    pub fn complement(&mut self, a: Var) -> Var {
        self.elementwise(ElementwiseOp::NegationComplement, &[a])
            .expect("unary op")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).values().iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out).unwrap();
        let rg = self.rg(a);
        self.push(Op::Scale(a, factor), t, rg)
    }

    /// `a[m×n] + bias[1×n]`, broadcasting the bias over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        let bshape = self.shape(bias);
        if bshape != [1, n] && bshape != [n] {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + {:?}", self.shape(a), bshape),
            ));
        }
        let bv = self.value(bias).values();
        let mut out = self.value(a).values().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bv[j];
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Op::AddRow(a, bias), Tensor::new(vec![m, n], out)?, rg))
    }

    /// `a[m×n] * col[m×1]`, scaling each row by its column entry.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mul_col")?;
        if self.shape(col) != [m, 1] {
            return Err(Error::dim(
                "mul_col",
                format!("{:?} * {:?}", self.shape(a), self.shape(col)),
            ));
        }
        let cv = self.value(col).values();
        let out = self
            .value(a)
            .values()
            .iter()
            .enumerate()
            .map(|(idx, v)| v * cv[idx / n])
            .collect();
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(Op::MulCol(a, col), Tensor::new(vec![m, n], out)?, rg))
    }

    /// Reduces along `axis`, keeping it as an extent-1 dimension.
    pub fn reduce(&mut self, op: ReduceOp, t: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(t).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(
                "reduce",
                format!("axis {axis} invalid for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = strides_for_axis(&shape, axis);
        let v = self.value(t).values();
        let mut out = Vec::with_capacity(outer * inner);
        let mut winners = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| v[(o * len + a) * inner + i];
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let s: f64 = (0..len).map(at).sum();
                        out.push(if op == ReduceOp::Mean { s / len as f64 } else { s });
                    }
                    ReduceOp::Min | ReduceOp::Max => {
                        let mut best = 0;
                        for a in 1..len {
                            let better = if op == ReduceOp::Min {
                                at(a) < at(best)
                            } else {
                                at(a) > at(best)
                            };
                            if better {
                                best = a;
                            }
                        }
                        winners.push(best);
                        out.push(at(best));
                    }
                }
            }
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        let rg = self.rg(t);
        Ok(self.push(
            Op::Reduce {
                input: t,
                op,
                axis,
                winners,
            },
            Tensor::new(oshape, out)?,
            rg,
        ))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&mut self, t: Var) -> Var {
        let n = self.value(t).numel();
        let flat = self.reshape(t, vec![n]).expect("same numel");
        self.reduce(ReduceOp::Sum, flat, 0).expect("axis 0")
    }

    /// Positions chosen by a min/max reduction node.
    pub fn winners(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::Reduce { winners, op, .. } if matches!(op, ReduceOp::Min | ReduceOp::Max) => {
                Some(winners)
            }
            _ => None,
        }
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let (m, k) = self.dims2(logits, "softmax")?;
        let v = self.value(logits).values();
        let mut out = vec![0.0; m * k];
        for i in 0..m {
            softmax_row(&v[i * k..(i + 1) * k], &mut out[i * k..(i + 1) * k]);
        }
        let rg = self.rg(logits);
        Ok(self.push(Op::Softmax(logits), Tensor::new(vec![m, k], out)?, rg))
    }

    /// Mean over rows of `-log softmax(logits_i)[target_i]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, k) = self.dims2(logits, "softmax_cross_entropy")?;
        if targets.len() != n {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{n} rows but {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Index(format!("target {bad} outside [0, {k})")));
        }
        let v = self.value(logits).values();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &v[i * k..(i + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            softmax_row(row, &mut probs[i * k..(i + 1) * k]);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::scalar(loss / n as f64),
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "no operands"))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(Error::dim(
                    "concat_cols",
                    format!("row count {pm} differs from {m}"),
                ));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).values()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::new(vec![m, total], out)?,
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows", "no operands"))?;
        let (_, n) = self.dims2(first, "concat_rows")?;
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_rows")?;
            if pn != n {
                return Err(Error::dim(
                    "concat_rows",
                    format!("column count {pn} differs from {n}"),
                ));
            }
            m += pm;
            out.extend_from_slice(self.value(p).values());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::new(vec![m, n], out)?,
            rg,
        ))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, t: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(t, "slice_cols")?;
        if len == 0 || start + len > n {
            return Err(Error::dim(
                "slice_cols",
                format!("columns {start}..{} of {:?}", start + len, self.shape(t)),
            ));
        }
        let v = self.value(t).values();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&v[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(t);
        Ok(self.push(
            Op::SliceCols { input: t, start },
            Tensor::new(vec![m, len], out)?,
            rg,
        ))
    }

    pub fn reshape(&mut self, t: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(t).clone().reshape(shape)?;
        let rg = self.rg(t);
        Ok(self.push(Op::Reshape(t), out, rg))
    }

    pub fn transpose(&mut self, t: Var) -> Result<Var> {
        let (m, n) = self.dims2(t, "transpose")?;
        let v = self.value(t).values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let rg = self.rg(t);
        Ok(self.push(Op::Transpose(t), Tensor::new(vec![n, m], out)?, rg))
    }

    /// Mean of the `table` rows selected by each bag; output `[bags × width]`.
    pub fn embedding_bag(&mut self, table: Var, bags: &[Vec<usize>]) -> Result<Var> {
        let (rows, d) = self.dims2(table, "embedding_bag")?;
        if bags.is_empty() {
            return Err(Error::dim("embedding_bag", "no bags"));
        }
        let tv = self.value(table).values();
        let mut out = vec![0.0; bags.len() * d];
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                return Err(Error::Encode(format!("bag {b} is empty")));
            }
            let acc = &mut out[b * d..(b + 1) * d];
            for &id in bag {
                if id >= rows {
                    return Err(Error::Index(format!("row {id} outside table of {rows}")));
                }
                for (o, x) in acc.iter_mut().zip(&tv[id * d..(id + 1) * d]) {
                    *o += x;
                }
            }
            let inv = 1.0 / bag.len() as f64;
            acc.iter_mut().for_each(|o| *o *= inv);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Op::EmbeddingBag {
                table,
                bags: bags.to_vec(),
            },
            Tensor::new(vec![bags.len(), d], out)?,
            rg,
        ))
    }

    /// Reverse pass from a single-element `loss`. Clears gradients from any
    /// previous pass, then accumulates into every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            if node.value.requires_grad() {
                node.value.grad_mut_or_zero().fill(0.0);
            } else {
                node.value.clear_grad();
            }
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].value.grad_mut_or_zero()[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            if !node.value.requires_grad() {
                continue;
            }
            let gout = node.value.grad().expect("initialized above");
            if gout.iter().all(|&g| g == 0.0) {
                continue;
            }
            propagate(&node.op, &node.value, gout, before);
        }
        Ok(())
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, x) in out.iter_mut().zip(row) {
        *o = (x - mx).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Adds `delta` into the gradient buffer of `target` if it requires one.
fn accumulate(nodes: &mut [Node], target: Var, delta: impl FnOnce(&mut [f64], &[f64])) {
    let node = &mut nodes[target.0];
    if !node.value.requires_grad() {
        return;
    }
    let (values, grad) = node.value.values_and_grad_mut();
    delta(grad, values);
}

fn propagate(op: &Op, out: &Tensor, gout: &[f64], nodes: &mut [Node]) {
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = nodes[a.0].value.dims2().unwrap();
            let (_, n) = nodes[b.0].value.dims2().unwrap();
            let bv = nodes[b.0].value.values().to_vec();
            let av = nodes[a.0].value.values().to_vec();
            accumulate(nodes, *a, |ga, _| {
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += gout[i * n + j] * bv[p * n + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
            });
            accumulate(nodes, *b, |gb, _| {
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += aip * gout[i * n + j];
                        }
                    }
                }
            });
        }
        Op::Binary(kind, a, b) => {
            let av = nodes[a.0].value.values().to_vec();
            let bv = nodes[b.0].value.values().to_vec();
            match kind {
                ElementwiseOp::Add => {
                    accumulate(nodes, *a, |g, _| add_into(g, gout));
                    accumulate(nodes, *b, |g, _| add_into(g, gout));
                }
                ElementwiseOp::Sub => {
                    accumulate(nodes, *a, |g, _| add_into(g, gout));
                    accumulate(nodes, *b, |g, _| {
                        g.iter_mut().zip(gout).for_each(|(x, d)| *x -= d)
                    });
                }
                ElementwiseOp::Mul => {
                    accumulate(nodes, *a, |g, _| {
                        for i in 0..g.len() {
                            g[i] += gout[i] * bv[i];
                        }
                    });
                    accumulate(nodes, *b, |g, _| {
                        for i in 0..g.len() {
                            g[i] += gout[i] * av[i];
                        }
                    });
                }
                ElementwiseOp::Max => {
                    accumulate(nodes, *a, |g, _| {
                        for i in 0..g.len() {
                            if av[i] >= bv[i] {
                                g[i] += gout[i];
                            }
                        }
                    });
                    accumulate(nodes, *b, |g, _| {
                        for i in 0..g.len() {
                            if av[i] < bv[i] {
                                g[i] += gout[i];
                            }
                        }
                    });
                }
                _ => unreachable!("unary op recorded as binary"),
            }
        }
        Op::Unary(kind, a) => {
            let y = out.values();
            accumulate(nodes, *a, |g, x| match kind {
                ElementwiseOp::Relu => {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            g[i] += gout[i];
                        }
                    }
                }
                ElementwiseOp::Sigmoid => {
                    for i in 0..g.len() {
                        g[i] += gout[i] * y[i] * (1.0 - y[i]);
                    }
                }
                ElementwiseOp::NegationComplement => {
                    g.iter_mut().zip(gout).for_each(|(x, d)| *x -= d)
                }
                _ => unreachable!("binary op recorded as unary"),
            });
        }
        Op::Scale(a, f) => {
            accumulate(nodes, *a, |g, _| {
                g.iter_mut().zip(gout).for_each(|(x, d)| *x += d * f)
            });
        }
        Op::AddRow(a, bias) => {
            let n = gout.len() / out.shape()[0];
            accumulate(nodes, *a, |g, _| add_into(g, gout));
            accumulate(nodes, *bias, |g, _| {
                for (idx, d) in gout.iter().enumerate() {
                    g[idx % n] += d;
                }
            });
        }
        Op::MulCol(a, col) => {
            let n = out.shape()[1];
            let av = nodes[a.0].value.values().to_vec();
            let cv = nodes[col.0].value.values().to_vec();
            accumulate(nodes, *a, |g, _| {
                for (idx, d) in gout.iter().enumerate() {
                    g[idx] += d * cv[idx / n];
                }
            });
            accumulate(nodes, *col, |g, _| {
                for (idx, d) in gout.iter().enumerate() {
                    g[idx / n] += d * av[idx];
                }
            });
        }
        Op::Reduce {
            input,
            op,
            axis,
            winners,
        } => {
            let shape = nodes[input.0].value.shape().to_vec();
            let (outer, len, inner) = strides_for_axis(&shape, *axis);
            accumulate(nodes, *input, |g, _| {
                for o in 0..outer {
                    for i in 0..inner {
                        let oi = o * inner + i;
                        let d = gout[oi];
                        match op {
                            ReduceOp::Sum => {
                                for a in 0..len {
                                    g[(o * len + a) * inner + i] += d;
                                }
                            }
                            ReduceOp::Mean => {
                                for a in 0..len {
                                    g[(o * len + a) * inner + i] += d / len as f64;
                                }
                            }
                            ReduceOp::Min | ReduceOp::Max => {
                                g[(o * len + winners[oi]) * inner + i] += d;
                            }
                        }
                    }
                }
            });
        }
        Op::Softmax(logits) => {
            let k = out.shape()[1];
            let y = out.values();
            accumulate(nodes, *logits, |g, _| {
                for (r, (yr, gr)) in y.chunks(k).zip(gout.chunks(k)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        g[r * k + j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::SoftmaxCrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let n = targets.len();
            let k = probs.len() / n;
            let scale = gout[0] / n as f64;
            accumulate(nodes, *logits, |g, _| {
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        g[i * k + j] += scale * (probs[i * k + j] - onehot);
                    }
                }
            });
        }
        Op::ConcatCols(parts) => {
            let total = out.shape()[1];
            let m = out.shape()[0];
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p.0].value.shape()[1];
                accumulate(nodes, p, |g, _| {
                    for i in 0..m {
                        for j in 0..w {
                            g[i * w + j] += gout[i * total + offset + j];
                        }
                    }
                });
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p.0].value.numel();
                accumulate(nodes, p, |g, _| add_into(g, &gout[offset..offset + len]));
                offset += len;
            }
        }
        Op::SliceCols { input, start } => {
            let (m, len) = (out.shape()[0], out.shape()[1]);
            let n = nodes[input.0].value.shape()[1];
            accumulate(nodes, *input, |g, _| {
                for i in 0..m {
                    for j in 0..len {
                        g[i * n + start + j] += gout[i * len + j];
                    }
                }
            });
        }
        Op::Reshape(a) => accumulate(nodes, *a, |g, _| add_into(g, gout)),
        Op::Transpose(a) => {
            let (n, m) = (out.shape()[0], out.shape()[1]);
            accumulate(nodes, *a, |g, _| {
                for i in 0..m {
                    for j in 0..n {
                        g[i * n + j] += gout[j * m + i];
                    }
                }
            });
        }
        Op::EmbeddingBag { table, bags } => {
            let d = out.shape()[1];
            accumulate(nodes, *table, |g, _| {
                for (b, bag) in bags.iter().enumerate() {
                    let inv = 1.0 / bag.len() as f64;
                    for &id in bag {
                        for j in 0..d {
                            g[id * d + j] += gout[b * d + j] * inv;
                        }
                    }
                }
            });
        }
    }
}

fn add_into(g: &mut [f64], d: &[f64]) {
    g.iter_mut().zip(d).for_each(|(x, y)| *x += y);
}
