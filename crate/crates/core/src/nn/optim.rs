use super::{Gradients, NnError};
use crate::Scalar;

/// RMSProp: `v = rho v + (1 - rho) g^2`, `p -= lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    pub learning_rate: T,
    pub decay: T,
    pub eps: T,
    square_avg: Vec<Vec<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(learning_rate: T, decay: T, eps: T, shapes: &[usize]) -> Self {
        Self { learning_rate, decay, eps, square_avg: shapes.iter().map(|&n| vec![T::zero(); n]).collect() }
    }

    /// Learning rate 0.001, decay 0.99, eps 1e-8.
    pub fn with_defaults(shapes: &[usize]) -> Self {
        Self::new(T::from_f64_lossy(1e-3), T::from_f64_lossy(0.99), T::from_f64_lossy(1e-8), shapes)
    }

    pub fn accumulators(&self) -> &[Vec<T>] {
        &self.square_avg
    }

    pub fn accumulators_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.square_avg
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &Gradients<T>) -> Result<(), NnError> {
        let shapes_ok = params.len() == grads.tensors.len()
            && params.len() == self.square_avg.len()
            && params
                .iter()
                .zip(&grads.tensors)
                .zip(&self.square_avg)
                .all(|((p, g), v)| p.len() == g.len() && p.len() == v.len());
        if !shapes_ok {
            return Err(NnError::ShapeMismatch {
                what: "optimizer step",
                expected: format!("{} tensors matching the accumulators", self.square_avg.len()),
                got: format!("{} parameter tensors, {} gradient tensors", params.len(), grads.tensors.len()),
            });
        }
        let keep = T::one() - self.decay;
        for ((p, g), v) in params.into_iter().zip(&grads.tensors).zip(&mut self.square_avg) {
            for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.decay * *vi + keep * gi * gi;
                *pi -= self.learning_rate * gi / (vi.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
