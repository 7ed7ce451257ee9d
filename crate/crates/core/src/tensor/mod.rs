//! Dense f64 tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap, clonable handle. Operations on tensors that
//! require gradients append an entry to the thread-local tape (see [`tape`]);
//! [`Tensor::backward`] replays that tape in reverse and accumulates
//! gradients into every participating tensor that requires them.
//!
//! Feature maps in this crate use a channels-last layout
//! `[batch, time, nodes, channels]`, so graph mixing, channel mixing and
//! per-channel normalization all reduce to row-major matrix products.

mod conv;
mod linalg;
mod norm;
mod ops;
pub mod checkpoint;
pub mod optim;
pub mod tape;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use conv::conv_out_len;
pub use norm::BatchNormState;
pub use tape::{backward, grad_enabled, no_grad};

/// The generator threaded through initialization and dropout.
pub type Rng64 = ChaCha8Rng;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    grad: Mutex<Option<Vec<f64>>>,
    requires_grad: bool,
}

/// Handle to a dense row-major tensor.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field("values", &preview)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(data.len(), numel_of(&shape));
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
            }),
        }
    }

    /// Constant tensor. Fails if `data.len()` differs from the shape's volume
    /// or any dimension is zero.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(&data, shape)?;
        Ok(Tensor::build(data, shape.to_vec(), false))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(&data, shape)?;
        Ok(Tensor::build(data, shape.to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(vec![0.0; numel_of(shape)], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::build(vec![value; numel_of(shape)], shape.to_vec(), false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(vec![value], vec![1], false)
    }

    /// Uniform samples in `[low, high)`.
    pub fn uniform(shape: &[usize], low: f64, high: f64, rng: &mut Rng64) -> Tensor {
        let data = (0..numel_of(shape)).map(|_| rng.gen_range(low..high)).collect();
        Tensor::build(data, shape.to_vec(), false)
    }

    /// Same values and shape, flagged as a trainable leaf when `requires_grad`.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Tensor {
        Tensor::build(self.to_vec(), self.inner.shape.clone(), requires_grad)
    }

    /// Copy that does not participate in differentiation.
    pub fn detach(&self) -> Tensor {
        self.with_requires_grad(false)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.inner.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let data = self.data();
        assert_eq!(data.len(), 1, "item() on a tensor of shape {:?}", self.shape());
        data[0]
    }

    /// Overwrites the values in place. Used by optimizers and for
    /// running statistics; never recorded on the tape.
    pub fn set_data(&self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::dim(
                "set_data",
                format!("{} values for shape {:?}", values.len(), self.shape()),
            ));
        }
        *self.inner.data.write().expect("tensor data lock poisoned") = values;
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        let mut guard = self.inner.data.write().expect("tensor data lock poisoned");
        f(&mut guard);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn set_grad(&self, grad: Option<Vec<f64>>) {
        *self.inner.grad.lock().expect("grad lock poisoned") = grad;
    }

    pub fn zero_grad(&self) {
        self.set_grad(None);
    }

    pub(crate) fn accumulate_grad(&self, g: Vec<f64>) {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    pub(crate) fn with_grad_mut<R>(&self, f: impl FnOnce(Option<&mut Vec<f64>>) -> R) -> R {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        f(slot.as_mut())
    }

    /// Result tensor of an operation: requires grad (and is recorded) when
    /// any input does and recording is enabled.
    pub(crate) fn from_op<F>(data: Vec<f64>, shape: Vec<usize>, inputs: &[&Tensor], backward: F) -> Tensor
    where
        F: FnOnce(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        let record = tape::grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let out = Tensor::build(data, shape, record);
        if record {
            tape::push(out.clone(), inputs.iter().map(|t| (*t).clone()).collect(), Box::new(backward));
        }
        out
    }

    /// Runs reverse-mode differentiation from this scalar.
    pub fn backward(&self) -> Result<()> {
        tape::backward(self)
    }
}

fn check_shape(data: &[f64], shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::dim("tensor", format!("shape {shape:?} has an empty axis")));
    }
    if data.len() != numel_of(shape) {
        return Err(Error::dim(
            "tensor",
            format!("{} values for shape {:?}", data.len(), shape),
        ));
    }
    Ok(())
}
