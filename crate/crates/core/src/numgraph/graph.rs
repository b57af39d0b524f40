use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    ExpandCols(Var),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    Detach,
    StraightThrough(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order because
/// every op only refers to nodes that already exist. `backward` walks that
/// order in reverse.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn is_scalar(shape: &[usize]) -> bool {
    numel(shape) == 1
}

fn rows_cols(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Copies `t` in as a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Copies `t` in as a leaf that always tracks gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::shape("constant", &shape, &[data.len()]));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn full(&mut self, shape: Vec<usize>, value: f64) -> Var {
        let n = numel(&shape);
        self.push(shape, vec![value; n], Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (n, k, m) = match (sa, sb) {
            ([n, k], [k2, m]) if k == k2 => (*n, *k, *m),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let aik = av[i * k + p];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[p * m..(p + 1) * m];
                for (o, bj) in row.iter_mut().zip(brow) {
                    *o += aik * bj;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![n, m], out, Op::Matmul(a, b), rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (av, bv) = (self.value(a), self.value(b));
        let (shape, out): (Vec<usize>, Vec<f64>) = if sa == sb {
            (sa, av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect())
        } else if is_scalar(&sb) {
            let y = bv[0];
            (sa, av.iter().map(|x| f(*x, y)).collect())
        } else if is_scalar(&sa) {
            let x = av[0];
            (sb, bv.iter().map(|y| f(x, *y)).collect())
        } else {
            return Err(Error::shape(name, &sa, &sb));
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, op, rg))
    }

    /// Element-wise sum; either operand may be a single-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `x[i, j] + bias[j]` for `x: [n, m]`, `bias: [m]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let m = match (sx, sb) {
            ([_, m], [mb]) if m == mb => *m,
            _ => return Err(Error::shape("add_bias", sx, sb)),
        };
        let bv = self.value(bias);
        let out = self.value(x).iter().enumerate().map(|(i, v)| v + bv[i % m]).collect();
        let shape = sx.to_vec();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(shape, out, Op::AddBias(x, bias), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Shift(a))
    }

    /// `1 - a`, element-wise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `max(0, a)`; same op as [`Graph::relu`].
    pub fn hinge(&mut self, a: Var) -> Var {
        self.relu(a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// `|a - b|`, element-wise.
    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        Ok(self.abs(d))
    }

    fn row_op(&mut self, name: &'static str, a: Var, log: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (rows, cols) = rows_cols(&shape).ok_or_else(|| Error::shape(name, &shape, &[]))?;
        let av = self.value(a);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &av[r * cols..(r + 1) * cols];
            let dst = &mut out[r * cols..(r + 1) * cols];
            if log {
                log_softmax_into(row, dst);
            } else {
                softmax_into(row, dst);
            }
        }
        let rg = self.rg(&[a]);
        let op = if log { Op::LogSoftmaxRows(a) } else { Op::SoftmaxRows(a) };
        Ok(self.push(shape, out, op, rg))
    }

    /// Row-wise softmax of a `[n, m]` (or `[m]`) tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.row_op("softmax", a, false)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.row_op("log_softmax", a, true)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![m], Op::Mean(a), rg)
    }

    /// Sums each row of `[n, m]`, giving `[n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let (n, m) = match shape {
            [n, m] => (*n, *m),
            _ => return Err(Error::shape("sum_rows", shape, &[])),
        };
        let av = self.value(a);
        let out = (0..n).map(|i| av[i * m..(i + 1) * m].iter().sum()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n], out, Op::SumRows(a), rg))
    }

    /// Repeats a `[n]` column `cols` times, giving `[n, cols]`.
    pub fn expand_cols(&mut self, v: Var, cols: usize) -> Result<Var> {
        let shape = self.shape(v);
        let n = match shape {
            [n] => *n,
            [n, 1] => *n,
            _ => return Err(Error::shape("expand_cols", shape, &[cols])),
        };
        let vv = self.value(v);
        let mut out = Vec::with_capacity(n * cols);
        for x in vv {
            out.extend(std::iter::repeat_n(*x, cols));
        }
        let rg = self.rg(&[v]);
        Ok(self.push(vec![n, cols], out, Op::ExpandCols(v), rg))
    }

    /// Column-wise concatenation of `[n, a_i]` tensors. `[n]` inputs count as one column.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        let n = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            match self.shape(*p) {
                [r] if *r == n => widths.push(1),
                [r, c] if *r == n => widths.push(*c),
                s => return Err(Error::shape("concat_cols", self.shape(*first), s)),
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p)[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![n, total], out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Picks `x[i, index[i]]` from each row, giving `[n]`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let (n, m) = match shape {
            [n, m] if *n == index.len() => (*n, *m),
            _ => return Err(Error::shape("gather", shape, &[index.len()])),
        };
        if let Some(bad) = index.iter().find(|&&j| j >= m) {
            return Err(Error::invalid(format!("gather index {bad} out of range for width {m}")));
        }
        let xv = self.value(x);
        let out = (0..n).map(|i| xv[i * m + index[i]]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n], out, Op::Gather(x, index.to_vec()), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != numel(self.shape(a)) {
            return Err(Error::shape("reshape", self.shape(a), &shape));
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, value, Op::Reshape(a), rg))
    }

    /// Same value, no gradient path back to `a`.
    pub fn detach(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let value = self.value(a).to_vec();
        self.push(shape, value, Op::Detach, false)
    }

    /// Forward: `[a >= 0.5]`. Backward: identity, so the gradient is the one of `a`.
    pub fn straight_through(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x >= 0.5 { 1.0 } else { 0.0 }, Op::StraightThrough(a))
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    /// Adds the gradient held by leaf `v` into `target`.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => target.accumulate_grad(g),
            None => Ok(()),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Reverse-mode sweep from a single-element `root`.
    ///
    /// Adjoints are computed fresh for this call and then added to the grads of
    /// every tracked leaf, so calling `backward` twice accumulates twice.
    /// Tracked leaves that `root` does not reach receive a zero gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !is_scalar(self.shape(root)) {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.requires_grad(root) {
            return Err(Error::invalid("backward root does not depend on any tracked leaf"));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(up) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let g = self.nodes[idx].grad.get_or_insert_with(|| vec![0.0; up.len()]);
                for (a, b) in g.iter_mut().zip(&up) {
                    *a += b;
                }
                continue;
            }
            for (input, delta) in self.local_grads(idx, &up) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&delta) {
                            *a += d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        for node in &mut self.nodes {
            if node.requires_grad && matches!(node.op, Op::Leaf) && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for upstream adjoint `up`.
    fn local_grads(&self, idx: usize, up: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let shp = |v: Var| &self.nodes[v.0].shape;
        match &node.op {
            Op::Leaf | Op::Detach => Vec::new(),
            Op::Matmul(a, b) => {
                let (n, k) = (shp(*a)[0], shp(*a)[1]);
                let m = shp(*b)[1];
                let (av, bv) = (val(*a), val(*b));
                let mut da = vec![0.0; n * k];
                let mut db = vec![0.0; k * m];
                for i in 0..n {
                    let urow = &up[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &bv[p * m..(p + 1) * m];
                        da[i * k + p] = urow.iter().zip(brow).map(|(u, b)| u * b).sum();
                        let aik = av[i * k + p];
                        if aik != 0.0 {
                            let dbrow = &mut db[p * m..(p + 1) * m];
                            for (d, u) in dbrow.iter_mut().zip(urow) {
                                *d += aik * u;
                            }
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, reduce_to(shp(*a), up.to_vec())), (*b, reduce_to(shp(*b), up.to_vec()))],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(shp(*a), up.to_vec())),
                (*b, reduce_to(shp(*b), up.iter().map(|u| -u).collect())),
            ],
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da = up.iter().enumerate().map(|(i, u)| u * bcast(bv, i)).collect();
                let db = up.iter().enumerate().map(|(i, u)| u * bcast(av, i)).collect();
                vec![(*a, reduce_to(shp(*a), da)), (*b, reduce_to(shp(*b), db))]
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da = up.iter().enumerate().map(|(i, u)| u / bcast(bv, i)).collect();
                let db = up
                    .iter()
                    .enumerate()
                    .map(|(i, u)| {
                        let d = bcast(bv, i);
                        -u * bcast(av, i) / (d * d)
                    })
                    .collect();
                vec![(*a, reduce_to(shp(*a), da)), (*b, reduce_to(shp(*b), db))]
            }
            Op::AddBias(x, b) => {
                let m = shp(*b)[0];
                let mut db = vec![0.0; m];
                for (i, u) in up.iter().enumerate() {
                    db[i % m] += u;
                }
                vec![(*x, up.to_vec()), (*b, db)]
            }
            Op::Scale(a, c) => vec![(*a, up.iter().map(|u| u * c).collect())],
            Op::Shift(a) | Op::Reshape(a) | Op::StraightThrough(a) => vec![(*a, up.to_vec())],
            Op::Tanh(a) => vec![(*a, zip_map(up, y, |u, t| u * (1.0 - t * t)))],
            Op::Sigmoid(a) => vec![(*a, zip_map(up, y, |u, s| u * s * (1.0 - s)))],
            Op::Exp(a) => vec![(*a, zip_map(up, y, |u, e| u * e))],
            Op::Relu(a) => vec![(*a, zip_map(up, val(*a), |u, x| if x > 0.0 { u } else { 0.0 }))],
            Op::Log(a) => vec![(*a, zip_map(up, val(*a), |u, x| u / x))],
            Op::Abs(a) => vec![(*a, zip_map(up, val(*a), |u, x| u * sign(x)))],
            Op::SoftmaxRows(a) => {
                let (rows, cols) = rows_cols(shp(*a)).expect("checked in forward");
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let s = r * cols..(r + 1) * cols;
                    let dot: f64 = up[s.clone()].iter().zip(&y[s.clone()]).map(|(u, p)| u * p).sum();
                    for j in s {
                        dx[j] = y[j] * (up[j] - dot);
                    }
                }
                vec![(*a, dx)]
            }
            Op::LogSoftmaxRows(a) => {
                let (rows, cols) = rows_cols(shp(*a)).expect("checked in forward");
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let s = r * cols..(r + 1) * cols;
                    let total: f64 = up[s.clone()].iter().sum();
                    for j in s {
                        dx[j] = up[j] - y[j].exp() * total;
                    }
                }
                vec![(*a, dx)]
            }
            Op::Sum(a) => vec![(*a, vec![up[0]; val(*a).len()])],
            Op::Mean(a) => {
                let n = val(*a).len();
                vec![(*a, vec![up[0] / n as f64; n])]
            }
            Op::SumRows(a) => {
                let m = shp(*a)[1];
                let dx = up.iter().flat_map(|u| std::iter::repeat_n(*u, m)).collect();
                vec![(*a, dx)]
            }
            Op::ExpandCols(v) => {
                let cols = node.shape[1];
                let dv = up.chunks(cols).map(|c| c.iter().sum()).collect();
                vec![(*v, dv)]
            }
            Op::ConcatCols(parts) => {
                let n = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                let mut grads = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = if shp(*p).len() == 1 { 1 } else { shp(*p)[1] };
                    let mut d = Vec::with_capacity(n * w);
                    for i in 0..n {
                        d.extend_from_slice(&up[i * total + offset..i * total + offset + w]);
                    }
                    grads.push((*p, d));
                    offset += w;
                }
                grads
            }
            Op::Gather(x, index) => {
                let m = shp(*x)[1];
                let mut dx = vec![0.0; val(*x).len()];
                for (i, (u, j)) in up.iter().zip(index).enumerate() {
                    dx[i * m + j] += u;
                }
                vec![(*x, dx)]
            }
        }
    }
}

fn bcast(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

/// Sums a full-size adjoint down to a broadcast scalar operand when needed.
fn reduce_to(shape: &[usize], g: Vec<f64>) -> Vec<f64> {
    if numel(shape) == 1 && g.len() != 1 {
        vec![g.iter().sum()]
    } else {
        g
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax of one row.
pub fn softmax_into(row: &[f64], dst: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, x) in dst.iter_mut().zip(row) {
        *d = (x - max).exp();
        total += *d;
    }
    dst.iter_mut().for_each(|d| *d /= total);
}

fn log_softmax_into(row: &[f64], dst: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    for (d, x) in dst.iter_mut().zip(row) {
        *d = x - lse;
    }
}
