use crate::error::{ComputeError, Result};
use crate::kernels::{self, ConvGeometry};
use crate::params::{ParamId, ParameterSet};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operator identifiers with their attributes.
///
/// Shapes follow NHWC for images. "Last axis" operators treat every leading
/// axis as a row index.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// Inputs: x `[N,H,W,C]`, weight `[KH,KW,C,O]`, bias `[O]`.
    Conv2d { stride: usize, padding: usize },
    /// Inputs: x `[N,I]`, weight `[I,O]`, bias `[O]`.
    Dense,
    Relu,
    LeakyRelu { slope: f64 },
    Softmax,
    LogSoftmax,
    Sparsemax,
    /// Shannon entropy (nats) of each last-axis probability row.
    Entropy,
    /// Per-row `logsumexp(z) − z[target]`.
    CrossEntropyWithLogits { targets: Vec<usize> },
    Add,
    Sub,
    Mul,
    Minimum,
    /// Concatenation along the last axis.
    Concat,
    Sum,
    Mean,
    Clip { min: f64, max: f64 },
    Log,
    Exp,
    Square,
    Scale { factor: f64 },
    /// Inputs: weights `[N,C]`, values `[N,C,A]`; output `[N,A]`.
    WeightedSum,
    Reshape { shape: Vec<usize> },
    /// Row selection along the first axis.
    IndexSelect { indices: Vec<usize> },
    /// One element per last-axis row.
    Gather { indices: Vec<usize> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Dense => "dense",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu { .. } => "leaky_relu",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Sparsemax => "sparsemax",
            OpKind::Entropy => "entropy",
            OpKind::CrossEntropyWithLogits { .. } => "cross_entropy_with_logits",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Minimum => "minimum",
            OpKind::Concat => "concat",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Clip { .. } => "clip",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
            OpKind::Square => "square",
            OpKind::Scale { .. } => "scale",
            OpKind::WeightedSum => "weighted_sum",
            OpKind::Reshape { .. } => "reshape",
            OpKind::IndexSelect { .. } => "index_select",
            OpKind::Gather { .. } => "gather",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Conv2d { .. } | OpKind::Dense => Some(3),
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Minimum | OpKind::WeightedSum => {
                Some(2)
            }
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

enum Saved {
    Nothing,
    Cols(Vec<f64>, ConvGeometry),
}

enum Origin {
    Constant,
    Variable,
    Param,
    Op(OpKind),
}

struct Node {
    value: Tensor,
    origin: Origin,
    inputs: Vec<usize>,
    requires_grad: bool,
    saved: Saved,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Tape of applied operators. Values are computed eagerly when an operator
/// is applied; [`Graph::backward`] walks the tape once in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<(ParamId, usize)>,
}

fn rows_of(t: &Tensor) -> (usize, usize) {
    let cols = t.last_dim();
    if cols == 0 {
        (0, 0)
    } else {
        (t.len() / cols, cols)
    }
}

fn leading_shape(t: &Tensor) -> Vec<usize> {
    let s = t.shape();
    if s.is_empty() {
        Vec::new()
    } else {
        s[..s.len() - 1].to_vec()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ComputeError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("shape preserved")
}

fn add_into(acc: &mut Option<Tensor>, delta: Tensor) {
    match acc {
        Some(t) => {
            for (a, d) in t.data_mut().iter_mut().zip(delta.data()) {
                *a += d;
            }
        }
        None => *acc = Some(delta),
    }
}

fn column_sums(g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in g.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
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

    fn push_leaf(&mut self, value: Tensor, origin: Origin, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            inputs: Vec::new(),
            requires_grad,
            saved: Saved::Nothing,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, Origin::Constant, false)
    }

    /// Free leaf that receives a gradient (used for input sensitivities).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, Origin::Variable, true)
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        if let Some(&(_, node)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return Var(node);
        }
        let v = self.push_leaf(params.value(id).clone(), Origin::Param, true);
        self.param_nodes.push((id, v.0));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Applies an operator, recording it for the reverse pass.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(ComputeError::InvalidInput {
                    op: kind.name(),
                    msg: format!("expected {n} inputs, got {}", inputs.len()),
                });
            }
        } else if inputs.is_empty() {
            return Err(ComputeError::Empty { op: kind.name() });
        }
        let (value, saved) = {
            let ins: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            forward(&kind, &ins)?
        };
        if !value.is_finite() {
            return Err(ComputeError::NonFinite { op: kind.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            origin: Origin::Op(kind),
            inputs: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
            saved,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        self.apply(OpKind::Conv2d { stride, padding }, &[x, w, b])
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Dense, &[x, w, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.apply(OpKind::LeakyRelu { slope }, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Softmax, &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::LogSoftmax, &[x])
    }

    pub fn sparsemax(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sparsemax, &[x])
    }

    pub fn entropy(&mut self, p: Var) -> Result<Var> {
        self.apply(OpKind::Entropy, &[p])
    }

    pub fn cross_entropy_with_logits(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::CrossEntropyWithLogits { targets }, &[logits])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Minimum, &[a, b])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Mean, &[x])
    }

    pub fn clip(&mut self, x: Var, min: f64, max: f64) -> Result<Var> {
        self.apply(OpKind::Clip { min, max }, &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Square, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.apply(OpKind::Scale { factor }, &[x])
    }

    pub fn weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        self.apply(OpKind::WeightedSum, &[weights, values])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::Reshape { shape }, &[x])
    }

    pub fn index_select(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::IndexSelect { indices }, &[x])
    }

    pub fn gather(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::Gather { indices }, &[x])
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(ComputeError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(root.value.shape().to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Origin::Op(kind) = &node.origin else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let wants: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| self.nodes[i].requires_grad)
                .collect();
            let deltas = backward_op(kind, &ins, &node.value, &node.saved, &g, &wants)?;
            for ((&input, delta), want) in node.inputs.iter().zip(deltas).zip(&wants) {
                if let (Some(d), true) = (delta, want) {
                    add_into(&mut grads[input], d);
                }
            }
            // Keep leaf gradients, drop interior ones once consumed.
            grads[idx] = None;
        }
        Ok(Gradients(grads))
    }

    /// Fills every parameter's gradient slot with ∂loss/∂param. Parameters
    /// absent from this graph get a zero gradient.
    pub fn gradients(&self, loss: Var, params: &mut ParameterSet) -> Result<()> {
        let grads = self.backward(loss)?;
        params.zero_grads();
        for &(id, node) in &self.param_nodes {
            if let Some(g) = grads.get(Var(node)) {
                params.grad_mut(id).data_mut().copy_from_slice(g.data());
            }
        }
        Ok(())
    }
}

fn forward(kind: &OpKind, ins: &[&Tensor]) -> Result<(Tensor, Saved)> {
    let op = kind.name();
    let plain = |t: Tensor| Ok((t, Saved::Nothing));
    match kind {
        OpKind::Conv2d { stride, padding } => {
            let (x, w, b) = (ins[0], ins[1], ins[2]);
            if x.rank() != 4 || w.rank() != 4 || b.rank() != 1 {
                return Err(ComputeError::InvalidInput {
                    op,
                    msg: format!(
                        "expected x rank 4, weight rank 4, bias rank 1; got {:?}, {:?}, {:?}",
                        x.shape(),
                        w.shape(),
                        b.shape()
                    ),
                });
            }
            let (xs, ws) = (x.shape(), w.shape());
            if xs[3] != ws[2] || b.shape()[0] != ws[3] {
                return Err(ComputeError::ShapeMismatch {
                    op,
                    left: xs.to_vec(),
                    right: ws.to_vec(),
                });
            }
            let fits_h = kernels::conv_out_len(xs[1], ws[0], *stride, *padding);
            let fits_w = kernels::conv_out_len(xs[2], ws[1], *stride, *padding);
            if fits_h.is_none() || fits_w.is_none() {
                return Err(ComputeError::ShapeMismatch {
                    op,
                    left: xs.to_vec(),
                    right: ws.to_vec(),
                });
            }
            let geo = ConvGeometry {
                batch: xs[0],
                in_h: xs[1],
                in_w: xs[2],
                in_c: xs[3],
                k_h: ws[0],
                k_w: ws[1],
                out_c: ws[3],
                stride: *stride,
                padding: *padding,
            };
            let cols = kernels::im2col(x.data(), &geo);
            let rows = geo.rows();
            let mut out = vec![0.0; rows * geo.out_c];
            for row in out.chunks_exact_mut(geo.out_c) {
                row.copy_from_slice(b.data());
            }
            kernels::gemm(rows, geo.patch_len(), geo.out_c, &cols, false, w.data(), false, &mut out, true);
            let t = Tensor::new(vec![geo.batch, geo.out_h(), geo.out_w(), geo.out_c], out)?;
            Ok((t, Saved::Cols(cols, geo)))
        }
        OpKind::Dense => {
            let (x, w, b) = (ins[0], ins[1], ins[2]);
            if x.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
                return Err(ComputeError::InvalidInput {
                    op,
                    msg: format!(
                        "expected x rank 2, weight rank 2, bias rank 1; got {:?}, {:?}, {:?}",
                        x.shape(),
                        w.shape(),
                        b.shape()
                    ),
                });
            }
            let (n, i) = (x.shape()[0], x.shape()[1]);
            let o = w.shape()[1];
            if w.shape()[0] != i || b.shape()[0] != o {
                return Err(ComputeError::ShapeMismatch {
                    op,
                    left: x.shape().to_vec(),
                    right: w.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; n * o];
            for row in out.chunks_exact_mut(o) {
                row.copy_from_slice(b.data());
            }
            kernels::gemm(n, i, o, x.data(), false, w.data(), false, &mut out, true);
            plain(Tensor::new(vec![n, o], out)?)
        }
        OpKind::Relu => plain(map(ins[0], |v| v.max(0.0))),
        OpKind::LeakyRelu { slope } => {
            let s = *slope;
            plain(map(ins[0], |v| if v > 0.0 { v } else { s * v }))
        }
        OpKind::Softmax | OpKind::LogSoftmax | OpKind::Sparsemax => {
            let x = ins[0];
            let (_, cols) = rows_of(x);
            if x.is_empty() || cols == 0 {
                return Err(ComputeError::Empty { op });
            }
            let mut out = vec![0.0; x.len()];
            for (zr, or) in x.data().chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
                match kind {
                    OpKind::Softmax => kernels::softmax_row(zr, or),
                    OpKind::Sparsemax => kernels::sparsemax_row(zr, or),
                    _ => {
                        let lse = kernels::log_sum_exp(zr);
                        for (o, z) in or.iter_mut().zip(zr) {
                            *o = z - lse;
                        }
                    }
                }
            }
            plain(Tensor::new(x.shape().to_vec(), out)?)
        }
        OpKind::Entropy => {
            let p = ins[0];
            let (_, cols) = rows_of(p);
            if p.is_empty() {
                return Err(ComputeError::Empty { op });
            }
            let out = p
                .data()
                .chunks_exact(cols)
                .map(|r| -r.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
                .collect();
            plain(Tensor::new(leading_shape(p), out)?)
        }
        OpKind::CrossEntropyWithLogits { targets } => {
            let z = ins[0];
            let (rows, cols) = rows_of(z);
            if z.is_empty() {
                return Err(ComputeError::Empty { op });
            }
            if targets.len() != rows {
                return Err(ComputeError::ShapeMismatch {
                    op,
                    left: z.shape().to_vec(),
                    right: vec![targets.len()],
                });
            }
            let mut out = Vec::with_capacity(rows);
            for (zr, &t) in z.data().chunks_exact(cols).zip(targets) {
                if t >= cols {
                    return Err(ComputeError::InvalidInput {
                        op,
                        msg: format!("target {t} out of range for {cols} classes"),
                    });
                }
                out.push(kernels::log_sum_exp(zr) - zr[t]);
            }
            plain(Tensor::new(leading_shape(z), out)?)
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Minimum => {
            let (a, b) = (ins[0], ins[1]);
            same_shape(op, a, b)?;
            let t = match kind {
                OpKind::Add => zip_map(a, b, |x, y| x + y),
                OpKind::Sub => zip_map(a, b, |x, y| x - y),
                OpKind::Mul => zip_map(a, b, |x, y| x * y),
                _ => zip_map(a, b, |x, y| if y < x { y } else { x }),
            };
            plain(t)
        }
        OpKind::Concat => {
            let lead = leading_shape(ins[0]);
            for t in &ins[1..] {
                if leading_shape(t) != lead || t.rank() == 0 {
                    return Err(ComputeError::ShapeMismatch {
                        op,
                        left: ins[0].shape().to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
            }
            let rows: usize = lead.iter().product();
            let widths: Vec<usize> = ins.iter().map(|t| t.last_dim()).collect();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (t, &w) in ins.iter().zip(&widths) {
                    out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead;
            shape.push(total);
            plain(Tensor::new(shape, out)?)
        }
        OpKind::Sum => plain(Tensor::scalar(ins[0].sum())),
        OpKind::Mean => {
            if ins[0].is_empty() {
                return Err(ComputeError::Empty { op });
            }
            plain(Tensor::scalar(ins[0].sum() / ins[0].len() as f64))
        }
        OpKind::Clip { min, max } => {
            let (lo, hi) = (*min, *max);
            plain(map(ins[0], |v| v.clamp(lo, hi)))
        }
        OpKind::Log => plain(map(ins[0], f64::ln)),
        OpKind::Exp => plain(map(ins[0], f64::exp)),
        OpKind::Square => plain(map(ins[0], |v| v * v)),
        OpKind::Scale { factor } => {
            let f = *factor;
            plain(map(ins[0], |v| v * f))
        }
        OpKind::WeightedSum => {
            let (w, v) = (ins[0], ins[1]);
            if w.rank() != 2 || v.rank() != 3 || w.shape()[..] != v.shape()[..2] {
                return Err(ComputeError::ShapeMismatch {
                    op,
                    left: w.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            let (n, c, a) = (v.shape()[0], v.shape()[1], v.shape()[2]);
            let mut out = vec![0.0; n * a];
            for i in 0..n {
                let orow = &mut out[i * a..(i + 1) * a];
                for j in 0..c {
                    let wij = w.data()[i * c + j];
                    let vrow = &v.data()[(i * c + j) * a..(i * c + j + 1) * a];
                    for (o, x) in orow.iter_mut().zip(vrow) {
                        *o += wij * x;
                    }
                }
            }
            plain(Tensor::new(vec![n, a], out)?)
        }
        OpKind::Reshape { shape } => {
            let n: usize = shape.iter().product();
            if n != ins[0].len() {
                return Err(ComputeError::ShapeMismatch {
                    op,
                    left: ins[0].shape().to_vec(),
                    right: shape.clone(),
                });
            }
            plain(Tensor::new(shape.clone(), ins[0].data().to_vec())?)
        }
        OpKind::IndexSelect { indices } => {
            let x = ins[0];
            if x.rank() == 0 {
                return Err(ComputeError::InvalidInput {
                    op,
                    msg: "cannot select rows of a scalar".into(),
                });
            }
            let m = x.shape()[0];
            let stride = if m == 0 { 0 } else { x.len() / m };
            let mut out = Vec::with_capacity(indices.len() * stride);
            for &i in indices {
                if i >= m {
                    return Err(ComputeError::InvalidInput {
                        op,
                        msg: format!("row {i} out of range for {m} rows"),
                    });
                }
                out.extend_from_slice(&x.data()[i * stride..(i + 1) * stride]);
            }
            let mut shape = x.shape().to_vec();
            shape[0] = indices.len();
            plain(Tensor::new(shape, out)?)
        }
        OpKind::Gather { indices } => {
            let x = ins[0];
            let (rows, cols) = rows_of(x);
            if indices.len() != rows {
                return Err(ComputeError::ShapeMismatch {
                    op,
                    left: x.shape().to_vec(),
                    right: vec![indices.len()],
                });
            }
            let mut out = Vec::with_capacity(rows);
            for (r, &i) in indices.iter().enumerate() {
                if i >= cols {
                    return Err(ComputeError::InvalidInput {
                        op,
                        msg: format!("index {i} out of range for {cols} columns"),
                    });
                }
                out.push(x.data()[r * cols + i]);
            }
            plain(Tensor::new(leading_shape(x), out)?)
        }
    }
}

fn backward_op(
    kind: &OpKind,
    ins: &[&Tensor],
    out: &Tensor,
    saved: &Saved,
    g: &Tensor,
    wants: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let one = |t: Tensor| Ok(vec![Some(t)]);
    match kind {
        OpKind::Conv2d { .. } => {
            let Saved::Cols(cols, geo) = saved else {
                unreachable!("conv2d always saves its patch matrix")
            };
            let (w, b) = (ins[1], ins[2]);
            let rows = geo.rows();
            let plen = geo.patch_len();
            let oc = geo.out_c;
            let dx = if wants[0] {
                let mut dcols = vec![0.0; rows * plen];
                kernels::gemm(rows, oc, plen, g.data(), false, w.data(), true, &mut dcols, false);
                Some(Tensor::new(ins[0].shape().to_vec(), kernels::col2im(&dcols, geo))?)
            } else {
                None
            };
            let dw = if wants[1] {
                let mut dw = vec![0.0; plen * oc];
                kernels::gemm(plen, rows, oc, cols, true, g.data(), false, &mut dw, false);
                Some(Tensor::new(w.shape().to_vec(), dw)?)
            } else {
                None
            };
            let db = if wants[2] {
                Some(Tensor::new(b.shape().to_vec(), column_sums(g.data(), oc))?)
            } else {
                None
            };
            Ok(vec![dx, dw, db])
        }
        OpKind::Dense => {
            let (x, w, b) = (ins[0], ins[1], ins[2]);
            let (n, i) = (x.shape()[0], x.shape()[1]);
            let o = w.shape()[1];
            let dx = if wants[0] {
                let mut dx = vec![0.0; n * i];
                kernels::gemm(n, o, i, g.data(), false, w.data(), true, &mut dx, false);
                Some(Tensor::new(vec![n, i], dx)?)
            } else {
                None
            };
            let dw = if wants[1] {
                let mut dw = vec![0.0; i * o];
                kernels::gemm(i, n, o, x.data(), true, g.data(), false, &mut dw, false);
                Some(Tensor::new(vec![i, o], dw)?)
            } else {
                None
            };
            let db = if wants[2] {
                Some(Tensor::new(b.shape().to_vec(), column_sums(g.data(), o))?)
            } else {
                None
            };
            Ok(vec![dx, dw, db])
        }
        OpKind::Relu => one(zip_map(ins[0], g, |x, gv| if x > 0.0 { gv } else { 0.0 })),
        OpKind::LeakyRelu { slope } => {
            let s = *slope;
            one(zip_map(ins[0], g, |x, gv| if x > 0.0 { gv } else { s * gv }))
        }
        OpKind::Softmax => {
            let cols = out.last_dim();
            let mut dz = vec![0.0; out.len()];
            for ((p, gr), d) in out
                .data()
                .chunks_exact(cols)
                .zip(g.data().chunks_exact(cols))
                .zip(dz.chunks_exact_mut(cols))
            {
                let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((di, pi), gi) in d.iter_mut().zip(p).zip(gr) {
                    *di = pi * (gi - dot);
                }
            }
            one(Tensor::new(out.shape().to_vec(), dz)?)
        }
        OpKind::LogSoftmax => {
            let cols = out.last_dim();
            let mut dz = vec![0.0; out.len()];
            for ((ls, gr), d) in out
                .data()
                .chunks_exact(cols)
                .zip(g.data().chunks_exact(cols))
                .zip(dz.chunks_exact_mut(cols))
            {
                let gsum: f64 = gr.iter().sum();
                for ((di, l), gi) in d.iter_mut().zip(ls).zip(gr) {
                    *di = gi - l.exp() * gsum;
                }
            }
            one(Tensor::new(out.shape().to_vec(), dz)?)
        }
        OpKind::Sparsemax => {
            let cols = out.last_dim();
            let mut dz = vec![0.0; out.len()];
            for ((p, gr), d) in out
                .data()
                .chunks_exact(cols)
                .zip(g.data().chunks_exact(cols))
                .zip(dz.chunks_exact_mut(cols))
            {
                kernels::sparsemax_row_backward(p, gr, d);
            }
            one(Tensor::new(out.shape().to_vec(), dz)?)
        }
        OpKind::Entropy => {
            let p = ins[0];
            let cols = p.last_dim();
            let mut dp = vec![0.0; p.len()];
            for ((pr, &gv), d) in p.data().chunks_exact(cols).zip(g.data()).zip(dp.chunks_exact_mut(cols)) {
                for (di, &pi) in d.iter_mut().zip(pr) {
                    *di = if pi > 0.0 { -gv * (pi.ln() + 1.0) } else { 0.0 };
                }
            }
            one(Tensor::new(p.shape().to_vec(), dp)?)
        }
        OpKind::CrossEntropyWithLogits { targets } => {
            let z = ins[0];
            let cols = z.last_dim();
            let mut dz = vec![0.0; z.len()];
            for (((zr, &t), &gv), d) in z
                .data()
                .chunks_exact(cols)
                .zip(targets)
                .zip(g.data())
                .zip(dz.chunks_exact_mut(cols))
            {
                kernels::softmax_row(zr, d);
                d[t] -= 1.0;
                for di in d.iter_mut() {
                    *di *= gv;
                }
            }
            one(Tensor::new(z.shape().to_vec(), dz)?)
        }
        OpKind::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
        OpKind::Sub => Ok(vec![Some(g.clone()), Some(map(g, |v| -v))]),
        OpKind::Mul => Ok(vec![
            Some(zip_map(g, ins[1], |gv, b| gv * b)),
            Some(zip_map(g, ins[0], |gv, a| gv * a)),
        ]),
        OpKind::Minimum => {
            let (a, b) = (ins[0], ins[1]);
            let mut da = vec![0.0; a.len()];
            let mut db = vec![0.0; b.len()];
            for (i, ((&x, &y), &gv)) in a.data().iter().zip(b.data()).zip(g.data()).enumerate() {
                if y < x {
                    db[i] = gv;
                } else {
                    da[i] = gv;
                }
            }
            Ok(vec![
                Some(Tensor::new(a.shape().to_vec(), da)?),
                Some(Tensor::new(b.shape().to_vec(), db)?),
            ])
        }
        OpKind::Concat => {
            let widths: Vec<usize> = ins.iter().map(|t| t.last_dim()).collect();
            let total: usize = widths.iter().sum();
            let rows = if total == 0 { 0 } else { g.len() / total };
            let mut parts: Vec<Vec<f64>> = ins.iter().map(|t| Vec::with_capacity(t.len())).collect();
            for r in 0..rows {
                let mut off = r * total;
                for (p, &w) in parts.iter_mut().zip(&widths) {
                    p.extend_from_slice(&g.data()[off..off + w]);
                    off += w;
                }
            }
            parts
                .into_iter()
                .zip(ins)
                .map(|(p, t)| Tensor::new(t.shape().to_vec(), p).map(Some))
                .collect()
        }
        OpKind::Sum => one(Tensor::full(ins[0].shape(), g.item())),
        OpKind::Mean => one(Tensor::full(ins[0].shape(), g.item() / ins[0].len() as f64)),
        OpKind::Clip { min, max } => {
            let (lo, hi) = (*min, *max);
            one(zip_map(ins[0], g, |x, gv| if x >= lo && x <= hi { gv } else { 0.0 }))
        }
        OpKind::Log => one(zip_map(ins[0], g, |x, gv| gv / x)),
        OpKind::Exp => one(zip_map(out, g, |y, gv| gv * y)),
        OpKind::Square => one(zip_map(ins[0], g, |x, gv| 2.0 * x * gv)),
        OpKind::Scale { factor } => {
            let f = *factor;
            one(map(g, |gv| gv * f))
        }
        OpKind::WeightedSum => {
            let (w, v) = (ins[0], ins[1]);
            let (n, c, a) = (v.shape()[0], v.shape()[1], v.shape()[2]);
            let mut dw = vec![0.0; n * c];
            let mut dv = vec![0.0; n * c * a];
            for i in 0..n {
                let grow = &g.data()[i * a..(i + 1) * a];
                for j in 0..c {
                    let k = i * c + j;
                    let vrow = &v.data()[k * a..(k + 1) * a];
                    dw[k] = vrow.iter().zip(grow).map(|(x, y)| x * y).sum();
                    let wij = w.data()[k];
                    for (d, gv) in dv[k * a..(k + 1) * a].iter_mut().zip(grow) {
                        *d = wij * gv;
                    }
                }
            }
            Ok(vec![
                Some(Tensor::new(w.shape().to_vec(), dw)?),
                Some(Tensor::new(v.shape().to_vec(), dv)?),
            ])
        }
        OpKind::Reshape { .. } => one(Tensor::new(ins[0].shape().to_vec(), g.data().to_vec())?),
        OpKind::IndexSelect { indices } => {
            let x = ins[0];
            let m = x.shape()[0];
            let stride = if m == 0 { 0 } else { x.len() / m };
            let mut dx = vec![0.0; x.len()];
            for (r, &i) in indices.iter().enumerate() {
                for (d, gv) in dx[i * stride..(i + 1) * stride]
                    .iter_mut()
                    .zip(&g.data()[r * stride..(r + 1) * stride])
                {
                    *d += gv;
                }
            }
            one(Tensor::new(x.shape().to_vec(), dx)?)
        }
        OpKind::Gather { indices } => {
            let x = ins[0];
            let cols = x.last_dim();
            let mut dx = vec![0.0; x.len()];
            for (r, (&i, &gv)) in indices.iter().zip(g.data()).enumerate() {
                dx[r * cols + i] = gv;
            }
            one(Tensor::new(x.shape().to_vec(), dx)?)
        }
    }
}
