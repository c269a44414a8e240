//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is the tape: every op appends a node holding its output value
//! and the handles of its inputs, so recording order is already a
//! topological order. [`Graph::backward`] walks the nodes in exact reverse
//! order and accumulates gradients, which makes repeated uses of one leaf sum
//! their contributions.

pub mod gradcheck;
pub mod kernels;
pub mod resample;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};
use kernels::{col2im, im2col, matmul, ConvGeom};
pub use resample::{Interp, Resampler, Scale};

/// Element type of a tensor: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;

    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        // SAFETY: callers pass buffers sized for the given dims and strides
        // (checked by debug assertions in `kernels::matmul`).
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }
}

impl Scalar for f64 {
    fn lit(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        // SAFETY: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                rsc,
                csc,
            )
        }
    }
}

/// A dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        dims4(&self.shape)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dims4(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Shape(format!("expected an N x C x H x W tensor, got shape {shape:?}"))),
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Deconv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Prelu { x: Var, a: Var },
    Tanh { x: Var },
    GlobalAvgPool { x: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    SoftmaxRows { x: Var },
    KlRows { p: Var, q: Var, eps: f64 },
    Concat { xs: Vec<Var> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Offset { x: Var },
    MeanSq { x: Var },
    Sum { x: Var },
    WeightedBands { x: Var, w: Var },
    RepeatChannels { x: Var },
    Resample { x: Var, op: Arc<Resampler> },
    Reshape { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// The tape. Build one per forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    checked: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
            checked: false,
        }
    }

    /// A graph that rejects non-finite leaves and losses.
    pub fn checked() -> Self {
        Graph {
            checked: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if self.checked && !t.is_finite() {
            return Err(Error::NonFinite(format!("graph input of shape {:?}", t.shape)));
        }
        Ok(self.push(t, Op::Leaf, requires_grad))
    }

    pub fn param(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.leaf(t, false)
    }

    /// Copies `x` into a new constant leaf; no gradient flows back through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::Leaf, false)
    }

    /// Cross-correlation with zero padding. `w` is `(Cout, Cin, kh, kw)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = dims4(self.shape(x))?;
        let (cout, wcin, kh, kw) = dims4(self.shape(w))?;
        if cin != wcin {
            return Err(Error::Shape(format!("conv2d channel mismatch: input has {cin}, kernel expects {wcin}")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        self.check_bias(b, cout)?;
        let g = ConvGeom::new(cin, h, wd, kh, kw, stride, pad)
            .ok_or_else(|| Error::Shape(format!("conv2d kernel {kh}x{kw} larger than padded input {h}x{wd}")))?;
        let (p, k) = (g.col_cols(), g.col_rows());
        let mut out = vec![T::zero(); n * cout * p];
        let mut cols = vec![T::zero(); k * p];
        let xv = &self.nodes[x.0].value.data;
        let wv = &self.nodes[w.0].value.data;
        for s in 0..n {
            im2col(&xv[s * cin * h * wd..(s + 1) * cin * h * wd], &g, &mut cols);
            matmul(cout, k, p, wv, false, &cols, false, &mut out[s * cout * p..(s + 1) * cout * p], T::zero());
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, &self.nodes[b.0].value.data, n, cout, p);
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        let t = Tensor::new(vec![n, cout, g.out_h, g.out_w], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same
    /// kernel, stride and padding. `w` is `(Cin, Cout, kh, kw)`; the output
    /// size is `(H-1)*stride - 2*pad + kh + output_padding` with
    /// `output_padding = stride - 1`, so `k=3, stride=2, pad=1` doubles H and W.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = dims4(self.shape(x))?;
        let (wcin, cout, kh, kw) = dims4(self.shape(w))?;
        if cin != wcin {
            return Err(Error::Shape(format!("deconv2d channel mismatch: input has {cin}, kernel expects {wcin}")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("deconv2d stride must be positive".into()));
        }
        self.check_bias(b, cout)?;
        let g = deconv_geom(cout, h, wd, kh, kw, stride, pad)?;
        let (p, k) = (h * wd, g.col_rows());
        let plane = g.height * g.width;
        let mut out = vec![T::zero(); n * cout * plane];
        let mut cols = vec![T::zero(); k * p];
        let xv = &self.nodes[x.0].value.data;
        let wv = &self.nodes[w.0].value.data;
        for s in 0..n {
            matmul(k, cin, p, wv, true, &xv[s * cin * p..(s + 1) * cin * p], false, &mut cols, T::zero());
            col2im(&cols, &g, &mut out[s * cout * plane..(s + 1) * cout * plane]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, &self.nodes[b.0].value.data, n, cout, plane);
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        let t = Tensor::new(vec![n, cout, g.height, g.width], out)?;
        Ok(self.push(t, Op::Deconv2d { x, w, b, stride, pad }, rg))
    }

    fn check_bias(&self, b: Option<Var>, cout: usize) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).numel() != cout {
                return Err(Error::Shape(format!("bias has {} entries, expected {cout}", self.value(b).numel())));
            }
        }
        Ok(())
    }

    /// Parametric ReLU with one learnable slope `a` (a one-element tensor).
    pub fn prelu(&mut self, x: Var, a: Var) -> Result<Var> {
        if self.value(a).numel() != 1 {
            return Err(Error::Shape("prelu slope must have exactly one element".into()));
        }
        let slope = self.value(a).item();
        let xv = self.value(x);
        let data = xv.data.iter().map(|&v| if v > T::zero() { v } else { slope * v }).collect();
        let t = Tensor::new(xv.shape.clone(), data)?;
        let rg = self.rg(&[x, a]);
        Ok(self.push(t, Op::Prelu { x, a }, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let t = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|v| v.tanh()).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(t, Op::Tanh { x }, rg)
    }

    /// Mean over H and W: `(N, C, H, W) -> (N, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x))?;
        let hw = h * w;
        let inv = T::lit(1.0 / hw as f64);
        let data = self.value(x).data.chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let t = Tensor::new(vec![n, c, 1, 1], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::GlobalAvgPool { x }, rg))
    }

    /// `y = x W^T + b` with `x: (N, F)`, `W: (O, F)`, `b: (O)`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, f) = dims2(self.shape(x))?;
        let (o, wf) = dims2(self.shape(w))?;
        if f != wf {
            return Err(Error::Shape(format!("fully_connected: input has {f} features, weight expects {wf}")));
        }
        self.check_bias(b, o)?;
        let mut out = vec![T::zero(); n * o];
        matmul(n, f, o, &self.value(x).data, false, &self.value(w).data, true, &mut out, T::zero());
        if let Some(b) = b {
            let bv = &self.value(b).data;
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bv).for_each(|(y, &bb)| *y += bb);
            }
        }
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        let t = Tensor::new(vec![n, o], out)?;
        Ok(self.push(t, Op::Linear { x, w, b }, rg))
    }

    /// Softmax along the last axis of an `(N, K)` tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, k) = dims2(self.shape(x))?;
        let mut data = self.value(x).data.clone();
        for row in data.chunks_mut(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            let inv = T::one() / s;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SoftmaxRows { x }, rg))
    }

    /// Softmax of a flat vector.
    pub fn softmax_vec(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let row = self.reshape(x, &[1, n])?;
        let s = self.softmax_rows(row)?;
        self.reshape(s, &[n])
    }

    /// Mean over rows of `sum_i p_i ln((p_i + eps) / (q_i + eps))`.
    pub fn kl_div_rows(&mut self, p: Var, q: Var, eps: f64) -> Result<Var> {
        if self.shape(p) != self.shape(q) {
            return Err(Error::Shape(format!(
                "kl_div length mismatch: {:?} vs {:?}",
                self.shape(p),
                self.shape(q)
            )));
        }
        let (n, _) = dims2(self.shape(p))?;
        let e = T::lit(eps);
        let total: T = self
            .value(p)
            .data
            .iter()
            .zip(&self.value(q).data)
            .map(|(&pi, &qi)| pi * ((pi + e) / (qi + e)).ln())
            .sum();
        let t = Tensor::scalar(total / T::lit(n as f64));
        let rg = self.rg(&[p, q]);
        Ok(self.push(t, Op::KlRows { p, q, eps }, rg))
    }

    /// KL divergence between two flat probability vectors.
    pub fn kl_div(&mut self, p: Var, q: Var, eps: f64) -> Result<Var> {
        if self.shape(p) != self.shape(q) {
            return Err(Error::Shape(format!(
                "kl_div length mismatch: {:?} vs {:?}",
                self.shape(p),
                self.shape(q)
            )));
        }
        let n = self.value(p).numel();
        let pr = self.reshape(p, &[1, n])?;
        let qr = self.reshape(q, &[1, n])?;
        self.kl_div_rows(pr, qr, eps)
    }

    /// Concatenates `(N, C_i, H, W)` tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let (n, _, h, w) = dims4(self.shape(first))?;
        let mut ctot = 0;
        for &x in xs {
            let (xn, xc, xh, xw) = dims4(self.shape(x))?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(Error::Shape(format!("concat mismatch: {:?} vs {:?}", self.shape(first), self.shape(x))));
            }
            ctot += xc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * ctot * hw);
        for s in 0..n {
            for &x in xs {
                let c = self.shape(x)[1];
                data.extend_from_slice(&self.value(x).data[s * c * hw..(s + 1) * c * hw]);
            }
        }
        let t = Tensor::new(vec![n, ctot, h, w], data)?;
        let rg = self.rg(xs);
        Ok(self.push(t, Op::Concat { xs: xs.to_vec() }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("{name}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Var {
        let cv = T::lit(c);
        let xv = self.value(x);
        let t = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|&v| v * cv).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let cv = T::lit(c);
        let xv = self.value(x);
        let t = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|&v| v + cv).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(t, Op::Offset { x }, rg)
    }

    /// Mean of squared elements, as a scalar.
    pub fn mean_sq(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s: T = xv.data.iter().map(|&v| v * v).sum();
        let t = Tensor::scalar(s / T::lit(xv.numel() as f64));
        let rg = self.rg(&[x]);
        self.push(t, Op::MeanSq { x }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data.iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Per-sample weighted band sum: `(N, C, H, W) x (N, C) -> (N, 1, H, W)`.
    pub fn weighted_band_sum(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, c, h, wd) = dims4(self.shape(x))?;
        if self.shape(w) != [n, c] {
            return Err(Error::Shape(format!("band weights {:?} do not match {:?}", self.shape(w), [n, c])));
        }
        let hw = h * wd;
        let mut out = vec![T::zero(); n * hw];
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        for s in 0..n {
            let dst = &mut out[s * hw..(s + 1) * hw];
            for ch in 0..c {
                let wt = wv[s * c + ch];
                let src = &xv[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                dst.iter_mut().zip(src).for_each(|(d, &v)| *d += wt * v);
            }
        }
        let t = Tensor::new(vec![n, 1, h, wd], out)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(t, Op::WeightedBands { x, w }, rg))
    }

    /// Copies a single-channel tensor `copies` times along the channel axis.
    pub fn repeat_channels(&mut self, x: Var, copies: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x))?;
        if c != 1 {
            return Err(Error::Shape(format!("repeat_channels expects one channel, got {c}")));
        }
        let hw = h * w;
        let xv = &self.value(x).data;
        let mut data = Vec::with_capacity(n * copies * hw);
        for s in 0..n {
            for _ in 0..copies {
                data.extend_from_slice(&xv[s * hw..(s + 1) * hw]);
            }
        }
        let t = Tensor::new(vec![n, copies, h, w], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::RepeatChannels { x }, rg))
    }

    /// Resamples every plane with a fixed linear operator.
    pub fn resample(&mut self, x: Var, op: Arc<Resampler>) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x))?;
        if (op.rows.n_in, op.cols.n_in) != (h, w) {
            return Err(Error::Shape(format!(
                "resampler built for {}x{}, input is {h}x{w}",
                op.rows.n_in, op.cols.n_in
            )));
        }
        let (oh, ow) = op.out_dims();
        let mut out = vec![T::zero(); n * c * oh * ow];
        let xv = &self.value(x).data;
        for p in 0..n * c {
            op.apply_plane(&xv[p * h * w..(p + 1) * h * w], &mut out[p * oh * ow..(p + 1) * oh * ow]);
        }
        let t = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Resample { x, op }, rg))
    }

    /// Resamples by an integer factor; downsampling requires divisible dims.
    pub fn resample_by(&mut self, x: Var, scale: Scale, interp: Interp) -> Result<Var> {
        let (_, _, h, w) = dims4(self.shape(x))?;
        let op = Resampler::for_scale(h, w, scale, interp)
            .ok_or_else(|| Error::Dimensions(format!("cannot resample {h}x{w} by {scale:?}")))?;
        self.resample(x, Arc::new(op))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(x).data.clone())?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Reverse pass from a scalar `loss`. Each graph supports one backward.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<T>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got {:?}", self.shape(loss))));
        }
        if self.checked && !self.value(loss).is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(dy);
                continue;
            }
            self.backward_node(i, &dy, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let g = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
        f(g);
    }

    fn backward_node(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (n, cin, h, wd) = dims4(self.shape(*x)).unwrap();
                let (cout, _, kh, kw) = dims4(self.shape(*w)).unwrap();
                let g = ConvGeom::new(cin, h, wd, kh, kw, *stride, *pad).unwrap();
                let (p, k) = (g.col_cols(), g.col_rows());
                let xv = &self.value(*x).data;
                let wv = &self.value(*w).data;
                let need_w = self.requires_grad(*w);
                let need_x = self.requires_grad(*x);
                let mut cols = vec![T::zero(); k * p];
                for s in 0..n {
                    let dys = &dy[s * cout * p..(s + 1) * cout * p];
                    if need_w {
                        im2col(&xv[s * cin * h * wd..(s + 1) * cin * h * wd], &g, &mut cols);
                        self.acc(grads, *w, |gw| matmul(cout, p, k, dys, false, &cols, true, gw, T::one()));
                    }
                    if need_x {
                        matmul(k, cout, p, wv, true, dys, false, &mut cols, T::zero());
                        self.acc(grads, *x, |gx| col2im(&cols, &g, &mut gx[s * cin * h * wd..(s + 1) * cin * h * wd]));
                    }
                }
                if let Some(b) = b {
                    self.acc(grads, *b, |gb| channel_bias_grad(dy, gb, n, cout, p));
                }
            }
            Op::Deconv2d { x, w, b, stride, pad } => {
                let (n, cin, h, wd) = dims4(self.shape(*x)).unwrap();
                let (_, cout, kh, kw) = dims4(self.shape(*w)).unwrap();
                let g = deconv_geom(cout, h, wd, kh, kw, *stride, *pad).unwrap();
                let (p, k) = (h * wd, g.col_rows());
                let plane = g.height * g.width;
                let xv = &self.value(*x).data;
                let wv = &self.value(*w).data;
                let mut cols = vec![T::zero(); k * p];
                for s in 0..n {
                    im2col(&dy[s * cout * plane..(s + 1) * cout * plane], &g, &mut cols);
                    self.acc(grads, *x, |gx| {
                        matmul(cin, k, p, wv, false, &cols, false, &mut gx[s * cin * p..(s + 1) * cin * p], T::one())
                    });
                    self.acc(grads, *w, |gw| {
                        matmul(cin, p, k, &xv[s * cin * p..(s + 1) * cin * p], false, &cols, true, gw, T::one())
                    });
                }
                if let Some(b) = b {
                    self.acc(grads, *b, |gb| channel_bias_grad(dy, gb, n, cout, plane));
                }
            }
            Op::Prelu { x, a } => {
                let xv = &self.value(*x).data;
                let slope = self.value(*a).item();
                self.acc(grads, *x, |gx| {
                    for ((g, &v), &d) in gx.iter_mut().zip(xv).zip(dy) {
                        *g += if v > T::zero() { d } else { slope * d };
                    }
                });
                self.acc(grads, *a, |ga| {
                    ga[0] += xv
                        .iter()
                        .zip(dy)
                        .filter(|&(&v, _)| v <= T::zero())
                        .map(|(&v, &d)| v * d)
                        .sum::<T>();
                });
            }
            Op::Tanh { x } => {
                self.acc(grads, *x, |gx| {
                    for ((g, &yv), &d) in gx.iter_mut().zip(&y.data).zip(dy) {
                        *g += d * (T::one() - yv * yv);
                    }
                });
            }
            Op::GlobalAvgPool { x } => {
                let (_, _, h, w) = dims4(self.shape(*x)).unwrap();
                let hw = h * w;
                let inv = T::lit(1.0 / hw as f64);
                self.acc(grads, *x, |gx| {
                    for (plane, &d) in gx.chunks_mut(hw).zip(dy) {
                        plane.iter_mut().for_each(|g| *g += d * inv);
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (n, f) = dims2(self.shape(*x)).unwrap();
                let o = self.shape(*w)[0];
                self.acc(grads, *x, |gx| matmul(n, o, f, dy, false, &self.value(*w).data, false, gx, T::one()));
                self.acc(grads, *w, |gw| matmul(o, n, f, dy, true, &self.value(*x).data, false, gw, T::one()));
                if let Some(b) = b {
                    self.acc(grads, *b, |gb| {
                        for row in dy.chunks(o) {
                            gb.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
                        }
                    });
                }
            }
            Op::SoftmaxRows { x } => {
                let k = y.shape[1];
                self.acc(grads, *x, |gx| {
                    for ((gr, yr), dr) in gx.chunks_mut(k).zip(y.data.chunks(k)).zip(dy.chunks(k)) {
                        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                        for ((g, &yv), &d) in gr.iter_mut().zip(yr).zip(dr) {
                            *g += yv * (d - dot);
                        }
                    }
                });
            }
            Op::KlRows { p, q, eps } => {
                let n = self.shape(*p)[0];
                let scale = dy[0] / T::lit(n as f64);
                let e = T::lit(*eps);
                let pv = &self.value(*p).data;
                let qv = &self.value(*q).data;
                self.acc(grads, *p, |gp| {
                    for ((g, &pi), &qi) in gp.iter_mut().zip(pv).zip(qv) {
                        *g += scale * (((pi + e) / (qi + e)).ln() + pi / (pi + e));
                    }
                });
                self.acc(grads, *q, |gq| {
                    for ((g, &pi), &qi) in gq.iter_mut().zip(pv).zip(qv) {
                        *g -= scale * pi / (qi + e);
                    }
                });
            }
            Op::Concat { xs } => {
                let (n, ctot, h, w) = dims4(&y.shape).unwrap();
                let hw = h * w;
                let mut off = 0;
                for &x in xs {
                    let c = self.shape(x)[1];
                    self.acc(grads, x, |gx| {
                        for s in 0..n {
                            let src = &dy[(s * ctot + off) * hw..(s * ctot + off + c) * hw];
                            gx[s * c * hw..(s + 1) * c * hw].iter_mut().zip(src).for_each(|(g, &d)| *g += d);
                        }
                    });
                    off += c;
                }
            }
            Op::Add { a, b } => {
                self.acc(grads, *a, |g| add_into(g, dy));
                self.acc(grads, *b, |g| add_into(g, dy));
            }
            Op::Sub { a, b } => {
                self.acc(grads, *a, |g| add_into(g, dy));
                self.acc(grads, *b, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g -= d));
            }
            Op::Mul { a, b } => {
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                self.acc(grads, *a, |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * o;
                    }
                });
                self.acc(grads, *b, |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * o;
                    }
                });
            }
            Op::Scale { x, c } => {
                let cv = T::lit(*c);
                self.acc(grads, *x, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d * cv));
            }
            Op::Offset { x } | Op::Reshape { x } => {
                self.acc(grads, *x, |g| add_into(g, dy));
            }
            Op::MeanSq { x } => {
                let xv = &self.value(*x).data;
                let k = dy[0] * T::lit(2.0 / xv.len() as f64);
                self.acc(grads, *x, |g| g.iter_mut().zip(xv).for_each(|(g, &v)| *g += k * v));
            }
            Op::Sum { x } => {
                let d = dy[0];
                self.acc(grads, *x, |g| g.iter_mut().for_each(|g| *g += d));
            }
            Op::WeightedBands { x, w } => {
                let (n, c, h, wd) = dims4(self.shape(*x)).unwrap();
                let hw = h * wd;
                let xv = &self.value(*x).data;
                let wv = &self.value(*w).data;
                self.acc(grads, *x, |gx| {
                    for s in 0..n {
                        let d = &dy[s * hw..(s + 1) * hw];
                        for ch in 0..c {
                            let wt = wv[s * c + ch];
                            let dst = &mut gx[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                            dst.iter_mut().zip(d).for_each(|(g, &dv)| *g += wt * dv);
                        }
                    }
                });
                self.acc(grads, *w, |gw| {
                    for s in 0..n {
                        let d = &dy[s * hw..(s + 1) * hw];
                        for ch in 0..c {
                            let src = &xv[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                            gw[s * c + ch] += src.iter().zip(d).map(|(&a, &b)| a * b).sum::<T>();
                        }
                    }
                });
            }
            Op::RepeatChannels { x } => {
                let (n, c, h, w) = dims4(&y.shape).unwrap();
                let hw = h * w;
                self.acc(grads, *x, |gx| {
                    for s in 0..n {
                        let dst = &mut gx[s * hw..(s + 1) * hw];
                        for ch in 0..c {
                            let src = &dy[(s * c + ch) * hw..(s * c + ch + 1) * hw];
                            dst.iter_mut().zip(src).for_each(|(g, &d)| *g += d);
                        }
                    }
                });
            }
            Op::Resample { x, op } => {
                let (n, c, h, w) = dims4(self.shape(*x)).unwrap();
                let (oh, ow) = op.out_dims();
                self.acc(grads, *x, |gx| {
                    for p in 0..n * c {
                        op.apply_plane_transpose(&dy[p * oh * ow..(p + 1) * oh * ow], &mut gx[p * h * w..(p + 1) * h * w]);
                    }
                });
            }
        }
    }
}

fn dims2(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n, k] => Ok((n, k)),
        _ => Err(Error::Shape(format!("expected a 2-D tensor, got shape {shape:?}"))),
    }
}

fn deconv_geom(cout: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<ConvGeom> {
    let out_pad = stride - 1;
    let oh = ((h - 1) * stride + kh + out_pad).checked_sub(2 * pad);
    let ow = ((w - 1) * stride + kw + out_pad).checked_sub(2 * pad);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::Shape("deconv2d padding exceeds the output size".into()));
    };
    let g = ConvGeom::new(cout, oh, ow, kh, kw, stride, pad)
        .filter(|g| g.out_h == h && g.out_w == w)
        .ok_or_else(|| Error::Shape(format!("deconv2d geometry {kh}x{kw}/s{stride}/p{pad} is not invertible for {h}x{w}")))?;
    Ok(g)
}

fn add_channel_bias<T: Scalar>(out: &mut [T], b: &[T], n: usize, c: usize, plane: usize) {
    for s in 0..n {
        for ch in 0..c {
            let bv = b[ch];
            out[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn channel_bias_grad<T: Scalar>(dy: &[T], gb: &mut [T], n: usize, c: usize, plane: usize) {
    for s in 0..n {
        for ch in 0..c {
            gb[ch] += dy[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter().copied().sum::<T>();
        }
    }
}

fn add_into<T: Scalar>(g: &mut [T], d: &[T]) {
    g.iter_mut().zip(d).for_each(|(g, &d)| *g += d);
}
