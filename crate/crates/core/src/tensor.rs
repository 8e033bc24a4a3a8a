//! Dense row-major tensors with optional gradient tracking.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer. Operations in
//! [`crate::ops`] produce new tensors and, when any input tracks gradients,
//! record the backward rule needed by [`Tensor::backward`]. The only mutable
//! state is the gradient accumulator of leaf tensors.

use std::fmt;
use std::iter::Sum;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::autograd::GradFn;
use crate::error::{Error, Result};

/// Scalar element type. Training runs in `f32`; gradient checks use `f64`.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + Sum
    + 'static
{
    /// `c = alpha * a·b + beta * c` with arbitrary row/column strides.
    ///
    /// # Safety
    /// The pointers must address matrices of the given dimensions and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// Whether large stride-1 convolutions may take the Winograd path, which
    /// trades about 1e-5 relative rounding error for a 4-6x cut in multiplies.
    const FAST_CONV: bool;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Float for f32 {
    const FAST_CONV: bool = true;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Float for f64 {
    const FAST_CONV: bool = false;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct Node<F: Float> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<F>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Mutex<Option<Vec<F>>>,
    pub(crate) grad_fn: Option<GradFn<F>>,
}

#[derive(Clone)]
pub struct Tensor<F: Float = f32> {
    pub(crate) node: Arc<Node<F>>,
}

impl<F: Float> Tensor<F> {
    fn build(shape: Vec<usize>, data: Vec<F>, requires_grad: bool, grad_fn: Option<GradFn<F>>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(Self::build(t.node.shape.clone(), t.into_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: F) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<F>, grad_fn: Option<GradFn<F>>) -> Self {
        let tracks = grad_fn.is_some();
        Self::build(shape, data, tracks, grad_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn rank(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.node.data
    }

    /// Copy of the data, or the buffer itself when this is the only handle.
    pub fn into_vec(self) -> Vec<F> {
        match Arc::try_unwrap(self.node) {
            Ok(node) => node.data,
            Err(node) => node.data.clone(),
        }
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<F>> {
        self.grad_lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.grad_lock() = None;
    }

    pub(crate) fn grad_lock(&self) -> MutexGuard<'_, Option<Vec<F>>> {
        self.node.grad.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.node.shape.clone(), self.node.data.clone(), false, None)
    }

    /// Leaf copy of this tensor that tracks gradients.
    pub fn detached_param(&self) -> Self {
        Self::build(self.node.shape.clone(), self.node.data.clone(), true, None)
    }

    /// Elementwise conversion into another precision (detached).
    pub fn cast<G: Float>(&self) -> Tensor<G> {
        let data = self.data().iter().map(|v| G::from_f64_lossy(v.to_f64_lossy())).collect();
        Tensor::build(self.node.shape.clone(), data, false, None)
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape().to_vec(),
                right: vec![0; rank],
            });
        }
        Ok(())
    }
}

impl<F: Float> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data().iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_len() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(!t.requires_grad());
    }

    #[test]
    fn cast_round_trips_f32_values() {
        let t = Tensor::<f32>::from_vec(&[3], vec![0.1, -2.5, 7.0]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t.data(), back.data());
    }
}
