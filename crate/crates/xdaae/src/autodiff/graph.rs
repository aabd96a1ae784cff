//! Recorded-operation reverse-mode differentiation.
//!
//! A `Graph` is a Wengert list: every op appends one node holding its output
//! values, so construction order is already a topological order. `backward`
//! sweeps the list once in reverse, accumulating gradients into the inputs.

use super::conv;
use super::linalg;
use crate::error::{Error, Result};
use std::fmt::{Debug, Display};

/// Element type of graph tensors. Training runs at `f32`; the finite-difference
/// checker instantiates the same ops at `f64`.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Handle to a node in a `Graph`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorRef(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<F: Scalar> {
    Constant,
    Param,
    Detach,
    Add,
    Sub,
    Mul,
    Affine { mul: F },
    Relu,
    Tanh,
    Sigmoid,
    SoftmaxRows,
    LogClipped { eps: F },
    ConcatRows { top_rows: usize },
    SliceRows { from: usize },
    ConcatCols { left_cols: usize },
    Reshape,
    BiasChannel,
    Dense,
    Conv2d { stride: usize, padding: usize },
    ConvTranspose2d { stride: usize, padding: usize },
    BatchNormTrain { mean: Vec<F>, inv_std: Vec<F> },
    BatchNormEval { eps: F },
    SumAll,
    MeanAll,
    CrossEntropy { eps: F },
}

struct Node<F: Scalar> {
    op: Op<F>,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    values: Vec<F>,
    grad: Option<Vec<F>>,
    needs_grad: bool,
}

/// Per-channel batch statistics captured by a train-mode batch norm node.
#[derive(Debug, Clone)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    params: Vec<usize>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, t: TensorRef) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn values(&self, t: TensorRef) -> &[F] {
        &self.nodes[t.0].values
    }

    pub fn grad(&self, t: TensorRef) -> Option<&[F]> {
        self.nodes[t.0].grad.as_deref()
    }

    /// Value of a scalar (single-element) node.
    pub fn scalar(&self, t: TensorRef) -> F {
        debug_assert_eq!(self.nodes[t.0].values.len(), 1);
        self.nodes[t.0].values[0]
    }

    fn push(
        &mut self,
        op: Op<F>,
        inputs: Vec<usize>,
        shape: Vec<usize>,
        values: Vec<F>,
        needs_grad: bool,
    ) -> TensorRef {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node { op, inputs, shape, values, grad: None, needs_grad });
        TensorRef(self.nodes.len() - 1)
    }

    fn needs(&self, t: TensorRef) -> bool {
        self.nodes[t.0].needs_grad
    }

    // ----- leaves -----

    pub fn constant(&mut self, shape: &[usize], values: Vec<F>) -> Result<TensorRef> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape(
                "constant",
                format!("shape {:?} wants {} values, got {}", shape, shape.iter().product::<usize>(), values.len()),
            ));
        }
        Ok(self.push(Op::Constant, vec![], shape.to_vec(), values, false))
    }

    pub fn scalar_const(&mut self, v: F) -> TensorRef {
        self.push(Op::Constant, vec![], vec![1], vec![v], false)
    }

    /// Leaf that participates in `backward` and is listed in the parameter
    /// registry (unreached parameters get zero gradients).
    pub fn param(&mut self, shape: &[usize], values: Vec<F>) -> Result<TensorRef> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape(
                "param",
                format!("shape {:?} wants {} values, got {}", shape, shape.iter().product::<usize>(), values.len()),
            ));
        }
        let t = self.push(Op::Param, vec![], shape.to_vec(), values, true);
        self.params.push(t.0);
        Ok(t)
    }

    // ----- elementwise -----

    fn binary_same_shape(&mut self, op: Op<F>, name: &'static str, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let values: Vec<F> = match op {
            Op::Add => self.nodes[a.0].values.iter().zip(&self.nodes[b.0].values).map(|(x, y)| *x + *y).collect(),
            Op::Sub => self.nodes[a.0].values.iter().zip(&self.nodes[b.0].values).map(|(x, y)| *x - *y).collect(),
            Op::Mul => self.nodes[a.0].values.iter().zip(&self.nodes[b.0].values).map(|(x, y)| *x * *y).collect(),
            _ => unreachable!(),
        };
        let ng = self.needs(a) || self.needs(b);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(op, vec![a.0, b.0], shape, values, ng))
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_same_shape(Op::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_same_shape(Op::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.binary_same_shape(Op::Mul, "mul", a, b)
    }

    /// y = mul * x + add, elementwise with scalar constants.
    pub fn affine(&mut self, x: TensorRef, mul: F, add: F) -> TensorRef {
        let values: Vec<F> = self.nodes[x.0].values.iter().map(|v| mul * *v + add).collect();
        let ng = self.needs(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Affine { mul }, vec![x.0], shape, values, ng)
    }

    pub fn scale(&mut self, x: TensorRef, c: F) -> TensorRef {
        self.affine(x, c, F::zero())
    }

    pub fn neg(&mut self, x: TensorRef) -> TensorRef {
        self.affine(x, -F::one(), F::zero())
    }

    /// y = 1 - x
    pub fn one_minus(&mut self, x: TensorRef) -> TensorRef {
        self.affine(x, -F::one(), F::one())
    }

    /// Value copy that blocks gradient flow.
    pub fn detach(&mut self, x: TensorRef) -> TensorRef {
        let values = self.nodes[x.0].values.clone();
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Detach, vec![x.0], shape, values, false)
    }

    pub fn relu(&mut self, x: TensorRef) -> TensorRef {
        let values: Vec<F> = self.nodes[x.0].values.iter().map(|v| if *v > F::zero() { *v } else { F::zero() }).collect();
        let ng = self.needs(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Relu, vec![x.0], shape, values, ng)
    }

    pub fn tanh(&mut self, x: TensorRef) -> TensorRef {
        let values: Vec<F> = self.nodes[x.0].values.iter().map(|v| v.tanh()).collect();
        let ng = self.needs(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Tanh, vec![x.0], shape, values, ng)
    }

    pub fn sigmoid(&mut self, x: TensorRef) -> TensorRef {
        let one = F::one();
        let values: Vec<F> = self.nodes[x.0].values.iter().map(|v| one / (one + (-*v).exp())).collect();
        let ng = self.needs(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::Sigmoid, vec![x.0], shape, values, ng)
    }

    /// Row-wise softmax on a 2-D (n, k) tensor.
    pub fn softmax_rows(&mut self, x: TensorRef) -> Result<TensorRef> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 2 {
            return Err(Error::shape("softmax", format!("want 2-D (rows, classes), got {:?}", shape)));
        }
        let (n, k) = (shape[0], shape[1]);
        let xv = &self.nodes[x.0].values;
        let mut values = vec![F::zero(); n * k];
        for r in 0..n {
            let row = &xv[r * k..(r + 1) * k];
            let mut mx = row[0];
            for v in row {
                if *v > mx {
                    mx = *v;
                }
            }
            let mut sum = F::zero();
            for (o, v) in values[r * k..(r + 1) * k].iter_mut().zip(row) {
                *o = (*v - mx).exp();
                sum += *o;
            }
            for o in &mut values[r * k..(r + 1) * k] {
                *o = *o / sum;
            }
        }
        let ng = self.needs(x);
        Ok(self.push(Op::SoftmaxRows, vec![x.0], shape, values, ng))
    }

    /// ln(clamp(x, eps, 1)). All log arguments in the losses go through this.
    pub fn log_clipped(&mut self, x: TensorRef, eps: F) -> TensorRef {
        let one = F::one();
        let values: Vec<F> = self.nodes[x.0].values.iter().map(|v| v.max(eps).min(one).ln()).collect();
        let ng = self.needs(x);
        let shape = self.nodes[x.0].shape.clone();
        self.push(Op::LogClipped { eps }, vec![x.0], shape, values, ng)
    }

    /// Concatenate along the leading (batch) axis; trailing dims must match.
    pub fn concat_rows(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != sb.len() || sa.is_empty() || sa[1..] != sb[1..] {
            return Err(Error::shape("concat_rows", format!("{:?} vs {:?}", sa, sb)));
        }
        let mut values = self.nodes[a.0].values.clone();
        values.extend_from_slice(&self.nodes[b.0].values);
        let mut shape = sa.clone();
        shape[0] = sa[0] + sb[0];
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatRows { top_rows: sa[0] }, vec![a.0, b.0], shape, values, ng))
    }

    /// Leading-axis slice `[from, to)`.
    pub fn slice_rows(&mut self, x: TensorRef, from: usize, to: usize) -> Result<TensorRef> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.is_empty() || from >= to || to > sx[0] {
            return Err(Error::shape("slice_rows", format!("range {from}..{to} of {:?}", sx)));
        }
        let row: usize = sx[1..].iter().product();
        let values = self.nodes[x.0].values[from * row..to * row].to_vec();
        let mut shape = sx;
        shape[0] = to - from;
        let ng = self.needs(x);
        Ok(self.push(Op::SliceRows { from }, vec![x.0], shape, values, ng))
    }

    /// Concatenate two 2-D tensors along columns: (n, p) ++ (n, q) -> (n, p+q).
    pub fn concat_cols(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shape("concat_cols", format!("{:?} vs {:?}", sa, sb)));
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let mut values = vec![F::zero(); n * (p + q)];
        for r in 0..n {
            values[r * (p + q)..r * (p + q) + p].copy_from_slice(&self.nodes[a.0].values[r * p..(r + 1) * p]);
            values[r * (p + q) + p..(r + 1) * (p + q)].copy_from_slice(&self.nodes[b.0].values[r * q..(r + 1) * q]);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols { left_cols: p }, vec![a.0, b.0], vec![n, p + q], values, ng))
    }

    pub fn reshape(&mut self, x: TensorRef, shape: &[usize]) -> Result<TensorRef> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].values.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} ({} values) to {:?} ({} values)", self.nodes[x.0].shape, self.nodes[x.0].values.len(), shape, numel),
            ));
        }
        let values = self.nodes[x.0].values.clone();
        let ng = self.needs(x);
        Ok(self.push(Op::Reshape, vec![x.0], shape.to_vec(), values, ng))
    }

    /// y[n,c,h,w] = x[n,c,h,w] + b[c]
    pub fn bias_channel(&mut self, x: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let sx = self.nodes[x.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sx.len() != 4 || sb != vec![sx[1]] {
            return Err(Error::shape("bias_channel", format!("input {:?}, bias {:?}", sx, sb)));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let hw = h * w;
        let mut values = self.nodes[x.0].values.clone();
        for ni in 0..n {
            for ci in 0..c {
                let bias = self.nodes[b.0].values[ci];
                for v in &mut values[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                    *v += bias;
                }
            }
        }
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(Op::BiasChannel, vec![x.0, b.0], sx, values, ng))
    }

    // ----- dense / conv / norm -----

    /// y (n, o) = x (n, i) * w (i, o) + b (o)
    pub fn dense(&mut self, x: TensorRef, w: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let sx = self.nodes[x.0].shape.clone();
        let sw = self.nodes[w.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] || sb != vec![sw[1]] {
            return Err(Error::shape(
                "dense",
                format!("input {:?}, weight {:?}, bias {:?}", sx, sw, sb),
            ));
        }
        let (n, i, o) = (sx[0], sx[1], sw[1]);
        let mut values = linalg::matmul_nn(&self.nodes[x.0].values, &self.nodes[w.0].values, n, i, o);
        for r in 0..n {
            for (ov, bv) in values[r * o..(r + 1) * o].iter_mut().zip(&self.nodes[b.0].values) {
                *ov += *bv;
            }
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Dense, vec![x.0, w.0, b.0], vec![n, o], values, ng))
    }

    /// Strided 2-D convolution. x is NCHW, kernel is (out, in, kh, kw).
    pub fn conv2d(&mut self, x: TensorRef, kernel: TensorRef, stride: usize, padding: usize) -> Result<TensorRef> {
        let sx = self.nodes[x.0].shape.clone();
        let sk = self.nodes[kernel.0].shape.clone();
        let geom = conv::ConvGeom::for_conv(&sx, &sk, stride, padding)?;
        let values = conv::conv2d_forward(&self.nodes[x.0].values, &self.nodes[kernel.0].values, &geom);
        let ng = self.needs(x) || self.needs(kernel);
        Ok(self.push(Op::Conv2d { stride, padding }, vec![x.0, kernel.0], geom.out_shape(), values, ng))
    }

    /// Transposed 2-D convolution (adjoint of `conv2d` in its input). x is
    /// NCHW, kernel is (in, out, kh, kw).
    pub fn conv_transpose2d(&mut self, x: TensorRef, kernel: TensorRef, stride: usize, padding: usize) -> Result<TensorRef> {
        let sx = self.nodes[x.0].shape.clone();
        let sk = self.nodes[kernel.0].shape.clone();
        let geom = conv::TConvGeom::for_tconv(&sx, &sk, stride, padding)?;
        let values = conv::tconv2d_forward(&self.nodes[x.0].values, &self.nodes[kernel.0].values, &geom);
        let ng = self.needs(x) || self.needs(kernel);
        Ok(self.push(Op::ConvTranspose2d { stride, padding }, vec![x.0, kernel.0], geom.out_shape(), values, ng))
    }

    /// Train-mode batch norm over NCHW input, normalizing per channel with
    /// batch statistics. Returns the output node plus the statistics so the
    /// caller can maintain running estimates.
    pub fn batchnorm_train(
        &mut self,
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        eps: F,
    ) -> Result<(TensorRef, BatchStats<F>)> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 4 {
            return Err(Error::shape("batchnorm", format!("want NCHW input, got {:?}", sx)));
        }
        let c = sx[1];
        if self.nodes[gamma.0].shape != vec![c] || self.nodes[beta.0].shape != vec![c] {
            return Err(Error::shape(
                "batchnorm",
                format!("gamma/beta must be [{}], got {:?}/{:?}", c, self.nodes[gamma.0].shape, self.nodes[beta.0].shape),
            ));
        }
        if sx[0] < 2 {
            return Err(Error::arg("batchnorm", "train mode needs batch size >= 2 (variance undefined)"));
        }
        let (values, mean, var, inv_std) = conv::batchnorm_train_forward(
            &self.nodes[x.0].values,
            &self.nodes[gamma.0].values,
            &self.nodes[beta.0].values,
            &sx,
            eps,
        );
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let stats = BatchStats { mean: mean.clone(), var };
        let t = self.push(
            Op::BatchNormTrain { mean, inv_std },
            vec![x.0, gamma.0, beta.0],
            sx,
            values,
            ng,
        );
        Ok((t, stats))
    }

    /// Eval-mode batch norm using fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        mean: TensorRef,
        var: TensorRef,
        eps: F,
    ) -> Result<TensorRef> {
        let sx = self.nodes[x.0].shape.clone();
        if sx.len() != 4 {
            return Err(Error::shape("batchnorm", format!("want NCHW input, got {:?}", sx)));
        }
        let c = sx[1];
        for (name, t) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
            if self.nodes[t.0].shape != vec![c] {
                return Err(Error::shape(
                    "batchnorm",
                    format!("{} must be [{}], got {:?}", name, c, self.nodes[t.0].shape),
                ));
            }
        }
        let values = conv::batchnorm_eval_forward(
            &self.nodes[x.0].values,
            &self.nodes[gamma.0].values,
            &self.nodes[beta.0].values,
            &self.nodes[mean.0].values,
            &self.nodes[var.0].values,
            &sx,
            eps,
        );
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(Op::BatchNormEval { eps }, vec![x.0, gamma.0, beta.0, mean.0, var.0], sx, values, ng))
    }

    // ----- reductions / losses -----

    // Scalar reductions accumulate in f64 so reported losses stay close to a
    // term-by-term recomputation even at f32.
    pub fn sum_all(&mut self, x: TensorRef) -> TensorRef {
        let mut s = 0.0f64;
        for v in &self.nodes[x.0].values {
            s += v.as_f64();
        }
        let ng = self.needs(x);
        self.push(Op::SumAll, vec![x.0], vec![1], vec![F::from_f64(s)], ng)
    }

    pub fn mean_all(&mut self, x: TensorRef) -> Result<TensorRef> {
        let n = self.nodes[x.0].values.len();
        if n == 0 {
            return Err(Error::arg("mean", "empty tensor"));
        }
        let mut s = 0.0f64;
        for v in &self.nodes[x.0].values {
            s += v.as_f64();
        }
        let ng = self.needs(x);
        Ok(self.push(Op::MeanAll, vec![x.0], vec![1], vec![F::from_f64(s / n as f64)], ng))
    }

    /// Mean over the batch of -sum(target * ln(clamp(pred, eps, 1))).
    /// `pred` rows must already be probabilities (sum to 1 within 1e-4).
    pub fn cross_entropy(&mut self, pred: TensorRef, target: TensorRef, eps: F) -> Result<TensorRef> {
        let sp = self.nodes[pred.0].shape.clone();
        let st = self.nodes[target.0].shape.clone();
        if sp.len() != 2 || sp != st {
            return Err(Error::shape("cross_entropy", format!("pred {:?} vs target {:?}", sp, st)));
        }
        let (n, k) = (sp[0], sp[1]);
        if n == 0 {
            return Err(Error::arg("cross_entropy", "empty batch"));
        }
        let tol = F::from_f64(1e-4);
        for r in 0..n {
            let mut s = F::zero();
            for v in &self.nodes[pred.0].values[r * k..(r + 1) * k] {
                s += *v;
            }
            if (s - F::one()).abs() > tol {
                return Err(Error::arg(
                    "cross_entropy",
                    format!("pred row {} sums to {}, not a probability vector", r, s.as_f64()),
                ));
            }
        }
        let one = F::one();
        let mut total = 0.0f64;
        for (p, t) in self.nodes[pred.0].values.iter().zip(&self.nodes[target.0].values) {
            total += (-*t * p.max(eps).min(one).ln()).as_f64();
        }
        let value = F::from_f64(total / n as f64);
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Op::CrossEntropy { eps }, vec![pred.0, target.0], vec![1], vec![value], ng))
    }

    /// Mean squared error between two same-shaped tensors, built from
    /// primitive ops so the double-use accumulation path is exercised.
    pub fn mse(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    // ----- backward -----

    fn accum(&mut self, node: usize, g: &[F]) {
        if !self.nodes[node].needs_grad {
            return;
        }
        let slot = self.nodes[node].grad.get_or_insert_with(|| vec![F::zero(); g.len()]);
        debug_assert_eq!(slot.len(), g.len());
        for (s, v) in slot.iter_mut().zip(g) {
            *s += *v;
        }
    }

    /// Reverse sweep from a scalar loss. Every reachable node that needs a
    /// gradient gets one; registered parameters that were never reached get a
    /// zero gradient of their shape.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::arg(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let g = match &self.nodes[i].grad {
                Some(g) if self.nodes[i].needs_grad => g.clone(),
                _ => continue,
            };
            let op = self.nodes[i].op.clone();
            let inputs = self.nodes[i].inputs.clone();
            match op {
                Op::Constant | Op::Param | Op::Detach => {}
                Op::Add => {
                    self.accum(inputs[0], &g);
                    self.accum(inputs[1], &g);
                }
                Op::Sub => {
                    self.accum(inputs[0], &g);
                    let neg: Vec<F> = g.iter().map(|v| -*v).collect();
                    self.accum(inputs[1], &neg);
                }
                Op::Mul => {
                    if self.nodes[inputs[0]].needs_grad {
                        let da: Vec<F> = g.iter().zip(&self.nodes[inputs[1]].values).map(|(gv, bv)| *gv * *bv).collect();
                        self.accum(inputs[0], &da);
                    }
                    if self.nodes[inputs[1]].needs_grad {
                        let db: Vec<F> = g.iter().zip(&self.nodes[inputs[0]].values).map(|(gv, av)| *gv * *av).collect();
                        self.accum(inputs[1], &db);
                    }
                }
                Op::Affine { mul, .. } => {
                    let dx: Vec<F> = g.iter().map(|v| *v * mul).collect();
                    self.accum(inputs[0], &dx);
                }
                Op::Relu => {
                    let dx: Vec<F> = g
                        .iter()
                        .zip(&self.nodes[inputs[0]].values)
                        .map(|(gv, xv)| if *xv > F::zero() { *gv } else { F::zero() })
                        .collect();
                    self.accum(inputs[0], &dx);
                }
                Op::Tanh => {
                    let dx: Vec<F> = g
                        .iter()
                        .zip(&self.nodes[i].values)
                        .map(|(gv, yv)| *gv * (F::one() - *yv * *yv))
                        .collect();
                    self.accum(inputs[0], &dx);
                }
                Op::Sigmoid => {
                    let dx: Vec<F> = g
                        .iter()
                        .zip(&self.nodes[i].values)
                        .map(|(gv, yv)| *gv * *yv * (F::one() - *yv))
                        .collect();
                    self.accum(inputs[0], &dx);
                }
                Op::SoftmaxRows => {
                    let shape = &self.nodes[i].shape;
                    let (n, k) = (shape[0], shape[1]);
                    let y = &self.nodes[i].values;
                    let mut dx = vec![F::zero(); n * k];
                    for r in 0..n {
                        let yr = &y[r * k..(r + 1) * k];
                        let gr = &g[r * k..(r + 1) * k];
                        let dotgy = linalg::dot(gr, yr);
                        for j in 0..k {
                            dx[r * k + j] = yr[j] * (gr[j] - dotgy);
                        }
                    }
                    self.accum(inputs[0], &dx);
                }
                Op::LogClipped { eps } => {
                    let dx: Vec<F> = g
                        .iter()
                        .zip(&self.nodes[inputs[0]].values)
                        .map(|(gv, xv)| {
                            if *xv > eps && *xv <= F::one() {
                                *gv / *xv
                            } else {
                                F::zero()
                            }
                        })
                        .collect();
                    self.accum(inputs[0], &dx);
                }
                Op::ConcatRows { top_rows } => {
                    let row: usize = self.nodes[i].shape[1..].iter().product();
                    let split = top_rows * row;
                    if self.nodes[inputs[0]].needs_grad {
                        self.accum(inputs[0], &g[..split]);
                    }
                    if self.nodes[inputs[1]].needs_grad {
                        self.accum(inputs[1], &g[split..]);
                    }
                }
                Op::SliceRows { from } => {
                    let row: usize = self.nodes[i].shape[1..].iter().product();
                    let src_len = self.nodes[inputs[0]].values.len();
                    let mut dx = vec![F::zero(); src_len];
                    dx[from * row..from * row + g.len()].copy_from_slice(&g);
                    self.accum(inputs[0], &dx);
                }
                Op::ConcatCols { left_cols } => {
                    let n = self.nodes[i].shape[0];
                    let total = self.nodes[i].shape[1];
                    let q = total - left_cols;
                    if self.nodes[inputs[0]].needs_grad {
                        let mut da = vec![F::zero(); n * left_cols];
                        for r in 0..n {
                            da[r * left_cols..(r + 1) * left_cols]
                                .copy_from_slice(&g[r * total..r * total + left_cols]);
                        }
                        self.accum(inputs[0], &da);
                    }
                    if self.nodes[inputs[1]].needs_grad {
                        let mut db = vec![F::zero(); n * q];
                        for r in 0..n {
                            db[r * q..(r + 1) * q].copy_from_slice(&g[r * total + left_cols..(r + 1) * total]);
                        }
                        self.accum(inputs[1], &db);
                    }
                }
                Op::Reshape => {
                    self.accum(inputs[0], &g);
                }
                Op::BiasChannel => {
                    let shape = self.nodes[i].shape.clone();
                    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                    let hw = h * w;
                    self.accum(inputs[0], &g);
                    if self.nodes[inputs[1]].needs_grad {
                        let mut db = vec![F::zero(); c];
                        for ni in 0..n {
                            for ci in 0..c {
                                for v in &g[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                                    db[ci] += *v;
                                }
                            }
                        }
                        self.accum(inputs[1], &db);
                    }
                }
                Op::Dense => {
                    let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                    let n = self.nodes[x].shape[0];
                    let icols = self.nodes[x].shape[1];
                    let o = self.nodes[w].shape[1];
                    if self.nodes[x].needs_grad {
                        let dx = linalg::matmul_nt(&g, &self.nodes[w].values, n, o, icols);
                        self.accum(x, &dx);
                    }
                    if self.nodes[w].needs_grad {
                        let dw = linalg::matmul_tn(&self.nodes[x].values, &g, n, icols, o);
                        self.accum(w, &dw);
                    }
                    if self.nodes[b].needs_grad {
                        let mut db = vec![F::zero(); o];
                        for r in 0..n {
                            for (d, gv) in db.iter_mut().zip(&g[r * o..(r + 1) * o]) {
                                *d += *gv;
                            }
                        }
                        self.accum(b, &db);
                    }
                }
                Op::Conv2d { stride, padding } => {
                    let (x, k) = (inputs[0], inputs[1]);
                    let geom = conv::ConvGeom::for_conv(&self.nodes[x].shape, &self.nodes[k].shape, stride, padding)
                        .expect("validated at forward");
                    if self.nodes[x].needs_grad {
                        let dx = conv::conv2d_backward_input(&g, &self.nodes[k].values, &geom);
                        self.accum(x, &dx);
                    }
                    if self.nodes[k].needs_grad {
                        let dk = conv::conv2d_backward_kernel(&g, &self.nodes[x].values, &geom);
                        self.accum(k, &dk);
                    }
                }
                Op::ConvTranspose2d { stride, padding } => {
                    let (x, k) = (inputs[0], inputs[1]);
                    let geom = conv::TConvGeom::for_tconv(&self.nodes[x].shape, &self.nodes[k].shape, stride, padding)
                        .expect("validated at forward");
                    if self.nodes[x].needs_grad {
                        let dx = conv::tconv2d_backward_input(&g, &self.nodes[k].values, &geom);
                        self.accum(x, &dx);
                    }
                    if self.nodes[k].needs_grad {
                        let dk = conv::tconv2d_backward_kernel(&g, &self.nodes[x].values, &geom);
                        self.accum(k, &dk);
                    }
                }
                Op::BatchNormTrain { mean, inv_std, .. } => {
                    let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
                    let shape = self.nodes[i].shape.clone();
                    let (dx, dgamma, dbeta) = conv::batchnorm_train_backward(
                        &g,
                        &self.nodes[x].values,
                        &self.nodes[gamma].values,
                        &mean,
                        &inv_std,
                        &shape,
                    );
                    if self.nodes[x].needs_grad {
                        self.accum(x, &dx);
                    }
                    if self.nodes[gamma].needs_grad {
                        self.accum(gamma, &dgamma);
                    }
                    if self.nodes[beta].needs_grad {
                        self.accum(beta, &dbeta);
                    }
                }
                Op::BatchNormEval { eps } => {
                    let (x, gamma, beta, mean, var) = (inputs[0], inputs[1], inputs[2], inputs[3], inputs[4]);
                    let shape = self.nodes[i].shape.clone();
                    let (dx, dgamma, dbeta) = conv::batchnorm_eval_backward(
                        &g,
                        &self.nodes[x].values,
                        &self.nodes[gamma].values,
                        &self.nodes[mean].values,
                        &self.nodes[var].values,
                        &shape,
                        eps,
                    );
                    if self.nodes[x].needs_grad {
                        self.accum(x, &dx);
                    }
                    if self.nodes[gamma].needs_grad {
                        self.accum(gamma, &dgamma);
                    }
                    if self.nodes[beta].needs_grad {
                        self.accum(beta, &dbeta);
                    }
                }
                Op::SumAll => {
                    let n = self.nodes[inputs[0]].values.len();
                    let dx = vec![g[0]; n];
                    self.accum(inputs[0], &dx);
                }
                Op::MeanAll => {
                    let n = self.nodes[inputs[0]].values.len();
                    let dv = g[0] / F::from_f64(n as f64);
                    let dx = vec![dv; n];
                    self.accum(inputs[0], &dx);
                }
                Op::CrossEntropy { eps } => {
                    let (pred, target) = (inputs[0], inputs[1]);
                    let n = self.nodes[pred].shape[0];
                    let inv_n = F::one() / F::from_f64(n as f64);
                    let one = F::one();
                    if self.nodes[pred].needs_grad {
                        let dp: Vec<F> = self.nodes[pred]
                            .values
                            .iter()
                            .zip(&self.nodes[target].values)
                            .map(|(p, t)| {
                                if *p > eps && *p <= one {
                                    -g[0] * *t / *p * inv_n
                                } else {
                                    F::zero()
                                }
                            })
                            .collect();
                        self.accum(pred, &dp);
                    }
                    if self.nodes[target].needs_grad {
                        let dt: Vec<F> = self.nodes[pred]
                            .values
                            .iter()
                            .map(|p| -g[0] * p.max(eps).min(one).ln() * inv_n)
                            .collect();
                        self.accum(target, &dt);
                    }
                }
            }
        }

        // Registered parameters the loss never reached still report a (zero)
        // gradient so optimizers can treat the group uniformly.
        for &p in &self.params.clone() {
            if self.nodes[p].grad.is_none() {
                let n = self.nodes[p].values.len();
                self.nodes[p].grad = Some(vec![F::zero(); n]);
            }
        }
        Ok(())
    }
}
