//! A deliberately small NCHW tensor engine.
//!
//! Only the operators the generator and discriminator use are supported, each
//! with a hand-derived reverse-mode rule. Operations are recorded on a
//! [`Graph`] tape; [`Graph::backward`] walks it in reverse and accumulates
//! parameter gradients into a [`ParamStore`]. Everything is generic over
//! [`Scalar`] so that training runs in `f32` while gradient checks run in `f64`.

mod conv;
mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{grad_check, random_inputs, GradCheck, GradCheckReport};
pub use graph::{BatchNormStats, Graph, Var};
pub use params::{ParamId, ParamKind, ParamStore};

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Element type of a tensor: `f32` for training, `f64` for gradient checking.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    const NAME: &'static str;

    /// `c = alpha·a·b + beta·c` on strided row/column-major views.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

fn check_gemm_extent(rows: usize, cols: usize, strides: (isize, isize), len: usize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * strides.0 + (cols - 1) as isize * strides.1;
    assert!(strides.0 >= 0 && strides.1 >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (isize, isize),
            ) {
                check_gemm_extent(m, k, (rsa, csa), a.len());
                check_gemm_extent(k, n, (rsb, csb), b.len());
                check_gemm_extent(m, n, (rsc, csc), c.len());
                // SAFETY: every operand's extent was bounds-checked above and `c` is a
                // unique borrow, so the kernel reads and writes only owned memory.
                unsafe {
                    $gemm(
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
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

/// `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const SCALAR: Shape = Shape([1, 1, 1, 1]);

    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample, `C·H·W`.
    pub fn sample_len(&self) -> usize {
        self.c() * self.h() * self.w()
    }

    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n}, {c}, {h}, {w})")
    }
}

/// Whether stochastic and batch-statistics layers behave as in training or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Dense NCHW array with an optional gradient buffer of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape("tensor", &shape.0, &[data.len()]));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Self {
            shape,
            data: vec![v; shape.len()],
            grad: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::full(Shape::SCALAR, v)
    }

    /// Samples `N(0, std²)` entries.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        Self {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Vec<T> {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// The scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {}", self.shape);
        self.data[0]
    }

    /// One sample `[C, H, W]` as a flat slice.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.shape.sample_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let conv = |v: &T| U::from_f64(v.to_f64().expect("finite")).expect("representable");
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(conv).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(conv).collect()),
        }
    }

    /// Copies channels `[from, to)` of every sample.
    pub fn slice_channels(&self, from: usize, to: usize) -> Tensor<T> {
        let s = self.shape;
        assert!(from <= to && to <= s.c());
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n() * (to - from) * plane);
        for n in 0..s.n() {
            let base = n * s.sample_len();
            data.extend_from_slice(&self.data[base + from * plane..base + to * plane]);
        }
        Tensor {
            shape: Shape::new(s.n(), to - from, s.h(), s.w()),
            data,
            grad: None,
        }
    }

    /// Stacks tensors that agree on `(C, H, W)` along the batch axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::InvalidParameter("stack of nothing".into()))?;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape.0[1..] != first.shape.0[1..] {
                return Err(Error::shape("stack", &first.shape.0, &p.shape.0));
            }
            n += p.shape.n();
            data.extend_from_slice(&p.data);
        }
        let s = first.shape;
        Tensor::from_vec(Shape::new(n, s.c(), s.h(), s.w()), data)
    }
}
