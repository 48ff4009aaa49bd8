use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

// Receives the output gradient, accumulates into the captured inputs.
type BackwardFn<T> = Box<dyn Fn(&[T])>;

struct Record<T> {
    output: Tensor<T>,
    backward: BackwardFn<T>,
}

/// Records primitive applications during a forward pass so the backward
/// sweep can replay them in reverse.
///
/// A tape is confined to one thread and normally lives for a single
/// training step: build the loss under it, call [`Tape::backward`], read
/// the parameter gradients, drop it.
pub struct Tape<T> {
    records: RefCell<Vec<Record<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            records: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn record(&self, output: &Tensor<T>, backward: impl Fn(&[T]) + 'static) {
        self.records.borrow_mut().push(Record {
            output: output.clone(),
            backward: Box::new(backward),
        });
    }

    /// Propagates gradients from a scalar loss back to every recorded input.
    ///
    /// Each record is visited exactly once, in reverse recording order;
    /// gradients accumulate additively, so leaves used several times (or
    /// several backward calls on one tape) sum their contributions.
    /// An empty tape is a no-op.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        loss.accumulate_grad(&[T::one()]);
        let records = self.records.borrow();
        for rec in records.iter().rev() {
            // Take the gradient so each interior node is consumed exactly
            // once per sweep; outputs never reached by the loss are skipped.
            if let Some(g) = rec.output.take_grad() {
                (rec.backward)(&g);
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
