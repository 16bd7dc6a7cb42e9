use rand::{Rng, RngCore};

use super::conv::{col2im, im2col, ConvGeom};
use super::{Mode, ParamId, ParamKind, ParamStore, Scalar, Shape, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Running statistics a batchnorm layer reads in inference and updates in training.
pub struct BatchNormStats<'a, T> {
    pub running_mean: &'a mut Tensor<T>,
    pub running_var: &'a mut Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

enum Op<T> {
    Constant,
    Param(u64, ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNormTrain {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormInfer {
        x: Var,
        gain: Var,
        shift: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Concat(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    L1 {
        a: Var,
        b: Var,
    },
    BceWithLogits {
        logits: Var,
        targets: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of recorded operations. Build it by calling the operator methods, then
/// call [`Graph::backward`] on a scalar result.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    kinks: Option<Vec<bool>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kinks: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records which side of every non-differentiable point each piecewise op
    /// evaluates on. Gradient checks use it to spot finite-difference steps that
    /// cross a kink.
    pub fn track_kinks(&mut self) {
        self.kinks = Some(Vec::new());
    }

    pub fn kink_signature(&self) -> Option<&[bool]> {
        self.kinks.as_deref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Constant => false,
            Op::Param(..) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that receives no gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let t = Tensor::from_vec(t.shape(), t.into_data()).expect("same length");
        self.push(t, Op::Constant, &[])
    }

    /// A parameter from `store`. Trainable entries receive gradients on backward;
    /// buffers are recorded as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        let value = Tensor::from_vec(t.shape(), t.data().to_vec()).expect("same length");
        match store.kind(id) {
            ParamKind::Trainable => self.push(value, Op::Param(store.tag(), id), &[]),
            ParamKind::Buffer => self.push(value, Op::Constant, &[]),
        }
    }

    /// A parameter read as a constant, for evaluating a frozen network.
    pub fn frozen_param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        let value = Tensor::from_vec(t.shape(), t.data().to_vec()).expect("same length");
        self.push(value, Op::Constant, &[])
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, Op::Constant, &[])
    }

    fn bias_check(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            let s = self.shape(b);
            if s != Shape::new(1, channels, 1, 1) {
                return Err(Error::shape(op, &s.0, &[1, channels, 1, 1]));
            }
        }
        Ok(())
    }

    fn add_bias(&self, out: &mut [T], b: Option<Var>, oc: usize, plane: usize) {
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
                let bv = bias[i % oc];
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }

    /// Cross-correlation with an `OC × IC × k × k` kernel and optional `1 × OC × 1 × 1` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.c() != xs.c() || ws.h() != ws.w() || stride == 0 {
            return Err(Error::shape("conv2d", &xs.0, &ws.0));
        }
        let (oc, k) = (ws.n(), ws.h());
        self.bias_check("conv2d", b, oc)?;
        let geom = ConvGeom::conv(xs.c(), xs.h(), xs.w(), k, stride, pad)
            .ok_or_else(|| Error::shape("conv2d", &xs.0, &ws.0))?;
        let out_shape = Shape::new(xs.n(), oc, geom.ho, geom.wo);
        let mut out = vec![T::zero(); out_shape.len()];
        let mut cols = vec![T::zero(); geom.rows() * geom.cols()];
        let (xv, wv) = (self.value(x), self.value(w));
        let ncols = geom.cols();
        for (n, dst) in out.chunks_exact_mut(out_shape.sample_len()).enumerate() {
            im2col(xv.sample(n), &geom, &mut cols);
            T::gemm(
                oc,
                geom.rows(),
                ncols,
                T::one(),
                wv.data(),
                (geom.rows() as isize, 1),
                &cols,
                (ncols as isize, 1),
                T::zero(),
                dst,
                (ncols as isize, 1),
            );
        }
        self.add_bias(&mut out, b, oc, ncols);
        let value = Tensor::from_vec(out_shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Transposed convolution with an `IC × OC × k × k` kernel: the adjoint of
    /// [`conv2d`](Self::conv2d) with the same kernel, stride and padding.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.n() != xs.c() || ws.h() != ws.w() || stride == 0 {
            return Err(Error::shape("conv_transpose2d", &xs.0, &ws.0));
        }
        let (ic, oc, k) = (ws.n(), ws.c(), ws.h());
        self.bias_check("conv_transpose2d", b, oc)?;
        let geom = ConvGeom::transposed(oc, xs.h(), xs.w(), k, stride, pad)
            .ok_or_else(|| Error::shape("conv_transpose2d", &xs.0, &ws.0))?;
        let out_shape = Shape::new(xs.n(), oc, geom.h, geom.w);
        let mut out = vec![T::zero(); out_shape.len()];
        let mut cols = vec![T::zero(); geom.rows() * geom.cols()];
        let (xv, wv) = (self.value(x), self.value(w));
        let ncols = geom.cols();
        for (n, dst) in out.chunks_exact_mut(out_shape.sample_len()).enumerate() {
            T::gemm(
                geom.rows(),
                ic,
                ncols,
                T::one(),
                wv.data(),
                (1, geom.rows() as isize),
                xv.sample(n),
                (ncols as isize, 1),
                T::zero(),
                &mut cols,
                (ncols as isize, 1),
            );
            col2im(&cols, &geom, dst);
        }
        self.add_bias(&mut out, b, oc, out_shape.plane());
        let value = Tensor::from_vec(out_shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, &inputs))
    }

    /// Per-channel batch normalization. Train mode normalizes with batch statistics
    /// and updates the running ones; infer mode uses the running statistics.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        stats: BatchNormStats<'_, T>,
        mode: Mode,
    ) -> Result<Var> {
        let s = self.shape(x);
        let (c, plane) = (s.c(), s.plane());
        for v in [gain, shift] {
            if self.shape(v) != Shape::new(1, c, 1, 1) {
                return Err(Error::shape("batchnorm2d", &s.0, &self.shape(v).0));
            }
        }
        if stats.running_mean.len() != c || stats.running_var.len() != c {
            return Err(Error::shape("batchnorm2d", &s.0, &stats.running_mean.shape().0));
        }
        let eps = T::lit(stats.eps);
        let m = s.n() * plane;
        let xv = self.value(x).data();
        let (g, sh) = (self.value(gain).data(), self.value(shift).data());
        let mut out = vec![T::zero(); s.len()];
        let channel_iter = |ch: usize| {
            (0..s.n()).flat_map(move |n| {
                let base = (n * c + ch) * plane;
                base..base + plane
            })
        };
        match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::DegenerateBatch(m));
                }
                let mut xhat = vec![T::zero(); s.len()];
                let mut inv_std = vec![T::zero(); c];
                let mf = T::from_usize(m).unwrap();
                let mom = T::lit(stats.momentum);
                for ch in 0..c {
                    let mean = channel_iter(ch).map(|i| xv[i]).sum::<T>() / mf;
                    let var = channel_iter(ch).map(|i| (xv[i] - mean).powi(2)).sum::<T>() / mf;
                    let is = (var + eps).sqrt().recip();
                    inv_std[ch] = is;
                    for i in channel_iter(ch) {
                        xhat[i] = (xv[i] - mean) * is;
                        out[i] = g[ch] * xhat[i] + sh[ch];
                    }
                    let unbiased = var * mf / (mf - T::one());
                    let rm = &mut stats.running_mean.data_mut()[ch];
                    *rm = (T::one() - mom) * *rm + mom * mean;
                    let rv = &mut stats.running_var.data_mut()[ch];
                    *rv = (T::one() - mom) * *rv + mom * unbiased;
                }
                let value = Tensor::from_vec(s, out)?;
                Ok(self.push(
                    value,
                    Op::BatchNormTrain {
                        x,
                        gain,
                        shift,
                        xhat,
                        inv_std,
                    },
                    &[x, gain, shift],
                ))
            }
            Mode::Infer => {
                let mean = stats.running_mean.data().to_vec();
                let inv_std: Vec<T> = stats
                    .running_var
                    .data()
                    .iter()
                    .map(|&v| (v.max(T::zero()) + eps).sqrt().recip())
                    .collect();
                for ch in 0..c {
                    for i in channel_iter(ch) {
                        out[i] = g[ch] * (xv[i] - mean[ch]) * inv_std[ch] + sh[ch];
                    }
                }
                let value = Tensor::from_vec(s, out)?;
                Ok(self.push(
                    value,
                    Op::BatchNormInfer {
                        x,
                        gain,
                        shift,
                        mean,
                        inv_std,
                    },
                    &[x, gain, shift],
                ))
            }
        }
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = {
            let t = self.value(x);
            Tensor::from_vec(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
        };
        self.push(value, op, &[x])
    }

    fn record_kinks(&mut self, v: Var) {
        if let Some(k) = &mut self.kinks {
            k.extend(self.nodes[v.0].value.data().iter().map(|&x| x > T::zero()));
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.record_kinks(x);
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.record_kinks(x);
        let s = T::lit(slope);
        self.unary(x, move |v| if v > T::zero() { v } else { v * s }, Op::LeakyRelu(x, s))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Inverted dropout: in train mode each element is zeroed with probability `p`
    /// and survivors are scaled by `1/(1-p)`. Identity in infer mode or when `p = 0`.
    pub fn dropout<R: RngCore + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("dropout rate must be in [0, 1), got {p}")));
        }
        if mode == Mode::Infer || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let value = {
            let t = self.value(x);
            let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Tensor::from_vec(t.shape(), data)?
        };
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    /// Channel concatenation, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w() {
            return Err(Error::shape("concat_channels", &sa.0, &sb.0));
        }
        let shape = Shape::new(sa.n(), sa.c() + sb.c(), sa.h(), sa.w());
        let mut data = Vec::with_capacity(shape.len());
        let (av, bv) = (self.value(a), self.value(b));
        for n in 0..sa.n() {
            data.extend_from_slice(av.sample(n));
            data.extend_from_slice(bv.sample(n));
        }
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push(value, Op::Concat(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, &sa.0, &sb.0));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let value = {
            let (av, bv) = (self.value(a), self.value(b));
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_vec(av.shape(), data).expect("same shape")
        };
        self.push(value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.binary(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.binary(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let k = T::lit(k);
        self.unary(x, move |v| v * k, Op::Scale(x, k))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// `mean |a - b|`.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_loss", a, b)?;
        let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let n = T::from_usize(av.len().max(1)).unwrap();
        let total = av.iter().zip(bv).map(|(&x, &y)| (x - y).abs()).sum::<T>() / n;
        if let Some(k) = &mut self.kinks {
            k.extend(av.iter().zip(bv).map(|(&x, &y)| x > y));
        }
        Ok(self.push(Tensor::scalar(total), Op::L1 { a, b }, &[a, b]))
    }

    /// `mean [softplus(l) - t·l]`, the numerically stable binary cross-entropy on logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        self.same_shape("bce_with_logits", logits, targets)?;
        let (lv, tv) = (self.value(logits).data(), self.value(targets).data());
        let n = T::from_usize(lv.len().max(1)).unwrap();
        let total = lv
            .iter()
            .zip(tv)
            .map(|(&l, &t)| softplus(l) - t * l)
            .sum::<T>()
            / n;
        Ok(self.push(Tensor::scalar(total), Op::BceWithLogits { logits, targets }, &[logits, targets]))
    }

    /// Reverse pass from the scalar `loss`. Gradients of trainable parameters that
    /// belong to `store` are added to its gradient buffers, so repeated calls
    /// accumulate. Parameters of other stores are left untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidParameter(format!(
                "backward needs a scalar, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>], store: &mut ParamStore<T>) {
        match &node.op {
            Op::Constant => {}
            Op::Param(tag, id) => {
                if *tag == store.tag() {
                    add_into(store.get_mut(*id).grad_mut(), g);
                }
            }
            Op::Conv2d { x, w, b, geom } => self.conv2d_backward(*x, *w, *b, geom, g, grads),
            Op::ConvTranspose2d { x, w, b, geom } => self.conv_t_backward(*x, *w, *b, geom, g, grads),
            Op::BatchNormTrain {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let s = self.shape(*x);
                let (c, plane) = (s.c(), s.plane());
                let m = T::from_usize(s.n() * plane).unwrap();
                let gv = self.value(*gain).data();
                let mut dgain = vec![T::zero(); c];
                let mut dshift = vec![T::zero(); c];
                for n in 0..s.n() {
                    for ch in 0..c {
                        let base = (n * c + ch) * plane;
                        for i in base..base + plane {
                            dgain[ch] = dgain[ch] + g[i] * xhat[i];
                            dshift[ch] = dshift[ch] + g[i];
                        }
                    }
                }
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for n in 0..s.n() {
                        for ch in 0..c {
                            let base = (n * c + ch) * plane;
                            let k = gv[ch] * inv_std[ch] / m;
                            for i in base..base + plane {
                                let term = m * g[i] - dshift[ch] - xhat[i] * dgain[ch];
                                dx[i] = dx[i] + k * term;
                            }
                        }
                    }
                }
                accumulate(self.grad_slot(grads, *gain), &dgain);
                accumulate(self.grad_slot(grads, *shift), &dshift);
            }
            Op::BatchNormInfer {
                x,
                gain,
                shift,
                mean,
                inv_std,
            } => {
                let s = self.shape(*x);
                let (c, plane) = (s.c(), s.plane());
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let mut dgain = vec![T::zero(); c];
                let mut dshift = vec![T::zero(); c];
                let mut dx = self.grad_slot(grads, *x).map(std::mem::take);
                for n in 0..s.n() {
                    for ch in 0..c {
                        let base = (n * c + ch) * plane;
                        for i in base..base + plane {
                            dgain[ch] = dgain[ch] + g[i] * (xv[i] - mean[ch]) * inv_std[ch];
                            dshift[ch] = dshift[ch] + g[i];
                            if let Some(dx) = &mut dx {
                                dx[i] = dx[i] + g[i] * gv[ch] * inv_std[ch];
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                accumulate(self.grad_slot(grads, *gain), &dgain);
                accumulate(self.grad_slot(grads, *shift), &dshift);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d = *d + gi;
                        }
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d = *d + if v > T::zero() { gi } else { gi * *slope };
                    }
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                        *d = *d + gi * (T::one() - yi * yi);
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                        *d = *d + gi * yi * (T::one() - yi);
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for ((d, &gi), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d = *d + gi * m;
                    }
                }
            }
            Op::Concat(a, b) => {
                let s = node.value.shape();
                let (la, lb) = (self.shape(*a).sample_len(), self.shape(*b).sample_len());
                if let Some(da) = self.grad_slot(grads, *a) {
                    for n in 0..s.n() {
                        let src = &g[n * (la + lb)..n * (la + lb) + la];
                        add_into(&mut da[n * la..(n + 1) * la], src);
                    }
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    for n in 0..s.n() {
                        let src = &g[n * (la + lb) + la..(n + 1) * (la + lb)];
                        add_into(&mut db[n * lb..(n + 1) * lb], src);
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(self.grad_slot(grads, *a), g);
                accumulate(self.grad_slot(grads, *b), g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.grad_slot(grads, *a) {
                    for ((d, &gi), &v) in da.iter_mut().zip(g).zip(bv) {
                        *d = *d + gi * v;
                    }
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    for ((d, &gi), &v) in db.iter_mut().zip(g).zip(av) {
                        *d = *d + gi * v;
                    }
                }
            }
            Op::Scale(x, k) => {
                if let Some(dx) = self.grad_slot(grads, *x) {
                    for (d, &gi) in dx.iter_mut().zip(g) {
                        *d = *d + gi * *k;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.grad_slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::L1 { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let k = g[0] / T::from_usize(av.len().max(1)).unwrap();
                let sign = |x: T, y: T| {
                    if x > y {
                        T::one()
                    } else if x < y {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                if let Some(da) = self.grad_slot(grads, *a) {
                    for (d, (&x, &y)) in da.iter_mut().zip(av.iter().zip(bv)) {
                        *d = *d + k * sign(x, y);
                    }
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    for (d, (&x, &y)) in db.iter_mut().zip(av.iter().zip(bv)) {
                        *d = *d - k * sign(x, y);
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let (lv, tv) = (self.value(*logits).data(), self.value(*targets).data());
                let k = g[0] / T::from_usize(lv.len().max(1)).unwrap();
                if let Some(dl) = self.grad_slot(grads, *logits) {
                    for (d, (&l, &t)) in dl.iter_mut().zip(lv.iter().zip(tv)) {
                        *d = *d + k * (sigmoid(l) - t);
                    }
                }
                if let Some(dt) = self.grad_slot(grads, *targets) {
                    for (d, &l) in dt.iter_mut().zip(lv) {
                        *d = *d - k * l;
                    }
                }
            }
        }
    }

    fn conv2d_backward(&self, x: Var, w: Var, b: Option<Var>, geom: &ConvGeom, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let xs = self.shape(x);
        let oc = self.shape(w).n();
        let (rows, ncols) = (geom.rows(), geom.cols());
        let out_len = oc * ncols;
        let (xv, wv) = (self.value(x), self.value(w));
        let mut cols = vec![T::zero(); rows * ncols];
        if let Some(dw) = self.grad_slot(grads, w) {
            for n in 0..xs.n() {
                im2col(xv.sample(n), geom, &mut cols);
                T::gemm(
                    oc,
                    ncols,
                    rows,
                    T::one(),
                    &g[n * out_len..(n + 1) * out_len],
                    (ncols as isize, 1),
                    &cols,
                    (1, ncols as isize),
                    T::one(),
                    dw,
                    (rows as isize, 1),
                );
            }
        }
        if let Some(dx) = self.grad_slot(grads, x) {
            let sl = xs.sample_len();
            for n in 0..xs.n() {
                T::gemm(
                    rows,
                    oc,
                    ncols,
                    T::one(),
                    wv.data(),
                    (1, rows as isize),
                    &g[n * out_len..(n + 1) * out_len],
                    (ncols as isize, 1),
                    T::zero(),
                    &mut cols,
                    (ncols as isize, 1),
                );
                col2im(&cols, geom, &mut dx[n * sl..(n + 1) * sl]);
            }
        }
        if let Some(b) = b {
            if let Some(db) = self.grad_slot(grads, b) {
                bias_grad(db, g, oc, ncols);
            }
        }
    }

    fn conv_t_backward(&self, x: Var, w: Var, b: Option<Var>, geom: &ConvGeom, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let xs = self.shape(x);
        let ic = xs.c();
        let (rows, ncols) = (geom.rows(), geom.cols());
        let out_len = geom.c * geom.h * geom.w;
        let in_len = xs.sample_len();
        let (xv, wv) = (self.value(x), self.value(w));
        let n_batch = xs.n();
        let need_w = self.nodes[w.0].needs_grad;
        let need_x = self.nodes[x.0].needs_grad;
        if need_w || need_x {
            let mut dcols = vec![T::zero(); rows * ncols];
            for n in 0..n_batch {
                im2col(&g[n * out_len..(n + 1) * out_len], geom, &mut dcols);
                if let Some(dx) = self.grad_slot(grads, x) {
                    T::gemm(
                        ic,
                        rows,
                        ncols,
                        T::one(),
                        wv.data(),
                        (rows as isize, 1),
                        &dcols,
                        (ncols as isize, 1),
                        T::one(),
                        &mut dx[n * in_len..(n + 1) * in_len],
                        (ncols as isize, 1),
                    );
                }
                if let Some(dw) = self.grad_slot(grads, w) {
                    T::gemm(
                        ic,
                        ncols,
                        rows,
                        T::one(),
                        xv.sample(n),
                        (ncols as isize, 1),
                        &dcols,
                        (1, ncols as isize),
                        T::one(),
                        dw,
                        (rows as isize, 1),
                    );
                }
            }
        }
        if let Some(b) = b {
            if let Some(db) = self.grad_slot(grads, b) {
                bias_grad(db, g, geom.c, geom.h * geom.w);
            }
        }
    }
}

fn accumulate<T: Scalar>(dst: Option<&mut Vec<T>>, src: &[T]) {
    if let Some(dst) = dst {
        add_into(dst, src);
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
}

fn bias_grad<T: Scalar>(db: &mut [T], g: &[T], channels: usize, plane: usize) {
    for (i, chunk) in g.chunks_exact(plane).enumerate() {
        let ch = i % channels;
        db[ch] = db[ch] + chunk.iter().copied().sum::<T>();
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        (T::one() + (-v).exp()).recip()
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^v)` without overflow.
#[inline]
pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
