use super::{gemm, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
    AddScalar {
        x: Var,
    },
    AddRow {
        x: Var,
        v: Var,
        cols: usize,
    },
    Sigmoid {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Log {
        x: Var,
    },
    SoftmaxRows {
        x: Var,
        cols: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cols: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    ConcatCols {
        parts: Vec<(Var, usize)>,
        rows: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
        cols: usize,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
        cols: usize,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed after their inputs, so index order is a topological
/// order and the backward sweep is a single reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
}

/// Gradients of one scalar with respect to every node that needs them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `tensor`'s gradient buffer.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) {
        if let Some(g) = self.get(v) {
            tensor.accumulate_grad(g);
        }
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let numel: usize = shape.iter().product();
    (if cols == 0 { 0 } else { numel / cols }, cols)
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a non-scalar node");
        val[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is valid")
    }

    /// Records a copy of `t`; it participates in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), Op::Leaf, false))
    }

    /// Binds a parameter; repeated binds of the same id reuse one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.bound.get(id.0) {
            return *v;
        }
        let t = store.get(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param, true);
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        self.bound[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[]));
        }
        let (rows, cols) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = v[i * cols + j];
            }
        }
        let ng = self.needs(x);
        Ok(self.push(vec![cols, rows], out, Op::Transpose { x, rows, cols }, ng))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), out, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale { x, s })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    /// Natural log; inputs must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|&&v| v <= 0.0) {
            return Err(Error::Contract(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(x, f64::ln, Op::Log { x }))
    }

    /// Adds a `[cols]` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (_, cols) = rows_cols(self.shape(x));
        if self.value(v).len() != cols {
            return Err(Error::shape("add_row", self.shape(x), self.shape(v)));
        }
        let bias = self.value(v);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &a)| a + bias[i % cols])
            .collect();
        let ng = self.needs(x) || self.needs(v);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddRow { x, v, cols }, ng))
    }

    /// `x·w + b` with `x: [rows × in]`, `w: [in × out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Row-wise softmax over the last axis, with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = rows_cols(self.shape(x));
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), out, Op::SoftmaxRows { x, cols }, ng)
    }

    /// Per-row normalization over the last axis followed by `gain`/`bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(Error::shape("layernorm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            cols,
            xhat,
            rstd,
        };
        Ok(self.push(self.shape(x).to_vec(), out, op, ng))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let rows = rows_cols(self.shape(first)).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = rows_cols(self.shape(p));
            if r != rows {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push((p, c));
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for &(p, c) in &widths {
            let v = self.value(p);
            for r in 0..rows {
                out[r * total + off..r * total + off + c].copy_from_slice(&v[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, total], out, Op::ConcatCols { parts: widths, rows }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if start + len > cols {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v[r * cols + start..r * cols + start + len]);
        }
        let ng = self.needs(x);
        Ok(self.push(vec![rows, len], out, Op::SliceCols { x, start, len, cols }, ng))
    }

    /// Stacks rank-2 tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = rows_cols(self.shape(first)).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = rows_cols(self.shape(p));
            if c != cols {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            out.extend_from_slice(self.value(p));
            rows += r;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows { parts: parts.to_vec() }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), &shape));
        }
        let out = self.value(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(shape, out, Op::Reshape { x }, ng))
    }

    /// Row gather: `out[r] = x[idx[r]]`; rows may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather_rows", self.shape(x), &[bad]));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&v[i * cols..(i + 1) * cols]);
        }
        let ng = self.needs(x);
        Ok(self.push(
            vec![idx.len(), cols],
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
                cols,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.needs(x);
        self.push(vec![1], vec![s], Op::Sum { x }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.needs(x);
        self.push(vec![1], vec![s], Op::Mean { x }, ng)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward, then adds every bound parameter's gradient into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (idx, v) in self.bound.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.get(*v) {
                    store.get_mut(ParamId(idx)).accumulate_grad(g);
                }
            }
        }
        Ok(grads)
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Gradient buffer for an input, or None when it does not need one.
        fn buf<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
            if !nodes[v.0].needs_grad {
                return None;
            }
            let len = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
        }
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, m, k, n } => {
                if let Some(ga) = buf(nodes, grads, a) {
                    // dA = G·Bᵀ
                    gemm(m, n, k, g, false, &nodes[b.0].value, true, 1.0, ga);
                }
                if let Some(gb) = buf(nodes, grads, b) {
                    // dB = Aᵀ·G
                    gemm(k, m, n, &nodes[a.0].value, true, g, false, 1.0, gb);
                }
            }
            &Op::Transpose { x, rows, cols } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    for i in 0..rows {
                        for j in 0..cols {
                            gx[i * cols + j] += g[j * rows + i];
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                if let Some(ga) = buf(nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = buf(nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            &Op::Sub { a, b } => {
                if let Some(ga) = buf(nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = buf(nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            &Op::Mul { a, b } => {
                if let Some(ga) = buf(nodes, grads, a) {
                    let bv = &nodes[b.0].value;
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if let Some(gb) = buf(nodes, grads, b) {
                    let av = &nodes[a.0].value;
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            &Op::Scale { x, s } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += s * b);
                }
            }
            &Op::AddScalar { x } | &Op::Reshape { x } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            &Op::AddRow { x, v, cols } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                if let Some(gv) = buf(nodes, grads, v) {
                    for (i, &gi) in g.iter().enumerate() {
                        gv[i % cols] += gi;
                    }
                }
            }
            &Op::Sigmoid { x } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    for (i, &y) in node.value.iter().enumerate() {
                        gx[i] += g[i] * y * (1.0 - y);
                    }
                }
            }
            &Op::Relu { x } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    let xv = &nodes[x.0].value;
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            &Op::Log { x } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    let xv = &nodes[x.0].value;
                    for i in 0..g.len() {
                        gx[i] += g[i] / xv[i];
                    }
                }
            }
            &Op::SoftmaxRows { x, cols } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    let y = &node.value;
                    for (yr, (gr, gxr)) in y
                        .chunks_exact(cols)
                        .zip(g.chunks_exact(cols).zip(gx.chunks_exact_mut(cols)))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            gxr[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cols,
                xhat,
                rstd,
            } => {
                let cols = *cols;
                let gv = &nodes[gain.0].value;
                if let Some(gg) = buf(nodes, grads, *gain) {
                    for (i, &gi) in g.iter().enumerate() {
                        gg[i % cols] += gi * xhat[i];
                    }
                }
                if let Some(gb) = buf(nodes, grads, *bias) {
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % cols] += gi;
                    }
                }
                if let Some(gx) = buf(nodes, grads, *x) {
                    let inv = 1.0 / cols as f64;
                    for (r, &rs) in rstd.iter().enumerate() {
                        let base = r * cols;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let d = g[base + c] * gv[c];
                            mean_d += d;
                            mean_dx += d * xhat[base + c];
                        }
                        mean_d *= inv;
                        mean_dx *= inv;
                        for c in 0..cols {
                            let d = g[base + c] * gv[c];
                            gx[base + c] += rs * (d - mean_d - xhat[base + c] * mean_dx);
                        }
                    }
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut off = 0;
                for &(p, c) in parts {
                    if let Some(gp) = buf(nodes, grads, p) {
                        for r in 0..*rows {
                            for j in 0..c {
                                gp[r * c + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            &Op::SliceCols { x, start, len, cols } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    for (r, gr) in g.chunks_exact(len).enumerate() {
                        for j in 0..len {
                            gx[r * cols + start + j] += gr[j];
                        }
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = buf(nodes, grads, p) {
                        gp.iter_mut().zip(&g[off..off + len]).for_each(|(a, b)| *a += b);
                    }
                    off += len;
                }
            }
            Op::GatherRows { x, idx, cols } => {
                let cols = *cols;
                if let Some(gx) = buf(nodes, grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..cols {
                            gx[i * cols + j] += g[r * cols + j];
                        }
                    }
                }
            }
            &Op::Sum { x } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            &Op::Mean { x } => {
                if let Some(gx) = buf(nodes, grads, x) {
                    let s = g[0] / gx.len().max(1) as f64;
                    gx.iter_mut().for_each(|a| *a += s);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
