//! Thread-local computation tape.
//!
//! Each recorded entry keeps handles to its inputs and output plus a
//! backward closure owning whatever intermediates it saved. Backward
//! replays entries strictly in reverse execution order.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

pub(crate) type BackwardFn = Box<dyn FnOnce(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Entry {
    output: Tensor,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

#[derive(Default)]
struct Tape {
    entries: Vec<Entry>,
}

thread_local! {
    static TAPE: RefCell<Tape> = RefCell::new(Tape::default());
    static ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub(crate) fn push(output: Tensor, inputs: Vec<Tensor>, backward: BackwardFn) {
    TAPE.with(|t| {
        t.borrow_mut().entries.push(Entry {
            output,
            inputs,
            backward,
        })
    });
}

/// Whether operations are currently recorded on this thread.
pub fn grad_enabled() -> bool {
    ENABLED.with(|e| e.get())
}

/// Runs `f` with recording disabled; restores the previous mode afterwards.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            ENABLED.with(|e| e.set(self.0));
        }
    }
    let _restore = Restore(ENABLED.with(|e| e.replace(false)));
    f()
}

/// Number of operations currently recorded on this thread.
pub fn len() -> usize {
    TAPE.with(|t| t.borrow().entries.len())
}

/// Drops every recorded entry and the intermediates it holds.
pub fn clear() {
    let entries = TAPE.with(|t| std::mem::take(&mut t.borrow_mut().entries));
    drop(entries);
}

/// Output ids of the recorded entries, in execution order.
pub fn recorded_ids() -> Vec<u64> {
    TAPE.with(|t| t.borrow().entries.iter().map(|e| e.output.id()).collect())
}

/// Consumes the tape, accumulating d(root)/d(x) into every participating
/// tensor that requires gradients.
pub fn backward(root: &Tensor) -> Result<()> {
    if root.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward root must be a scalar, got shape {:?}",
            root.shape()
        )));
    }
    let entries = TAPE.with(|t| std::mem::take(&mut t.borrow_mut().entries));
    if !root.requires_grad() {
        return Ok(());
    }

    let mut pending: HashMap<u64, (Tensor, Vec<f64>)> = HashMap::new();
    pending.insert(root.id(), (root.clone(), vec![1.0]));

    for entry in entries.into_iter().rev() {
        let Entry {
            output,
            inputs,
            backward,
        } = entry;
        let Some((_, grad_out)) = pending.remove(&output.id()) else {
            continue;
        };
        let input_grads = backward(&grad_out);
        output.accumulate_grad(grad_out);
        for (input, grad) in inputs.into_iter().zip(input_grads) {
            let Some(grad) = grad else { continue };
            if !input.requires_grad() {
                continue;
            }
            debug_assert_eq!(grad.len(), input.numel());
            match pending.get_mut(&input.id()) {
                Some((_, acc)) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                None => {
                    pending.insert(input.id(), (input, grad));
                }
            }
        }
    }

    // Whatever remains belongs to leaves (parameters and user inputs).
    for (_, (tensor, grad)) in pending {
        tensor.accumulate_grad(grad);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_scalar_root() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Contract(_))));
        clear();
    }

    #[test]
    fn no_grad_suppresses_recording() {
        clear();
        let x = Tensor::param(vec![1.0], &[1]).unwrap();
        let y = no_grad(|| x.scale(3.0));
        assert!(!y.requires_grad());
        assert_eq!(len(), 0);
        assert!(grad_enabled());
    }

    #[test]
    fn tape_is_consumed_and_grad_accumulates() {
        clear();
        let x = Tensor::param(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap().sum_all();
        assert_eq!(len(), 2);
        y.backward().unwrap();
        assert_eq!(len(), 0);
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        // A second pass accumulates rather than overwrites.
        let y = x.mul(&x).unwrap().sum_all();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn entries_are_recorded_in_execution_order() {
        clear();
        let x = Tensor::param(vec![1.0, -1.0], &[2]).unwrap();
        let a = x.relu();
        let b = a.scale(2.0);
        let c = b.sum_all();
        assert_eq!(recorded_ids(), vec![a.id(), b.id(), c.id()]);
        clear();
        assert_eq!(len(), 0);
    }

    #[test]
    fn intermediates_receive_gradients() {
        clear();
        let x = Tensor::param(vec![2.0], &[1]).unwrap();
        let y = x.scale(3.0);
        let z = y.mul(&y).unwrap().sum_all();
        z.backward().unwrap();
        assert_eq!(y.grad().unwrap(), vec![12.0]);
        assert_eq!(x.grad().unwrap(), vec![36.0]);
    }
}
