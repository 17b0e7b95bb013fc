use crate::Scalar;

/// Huber loss with unit threshold: `d^2 / 2` inside `[-1, 1]`, `|d| - 1/2` outside.
pub fn huber_loss<T: Scalar>(delta: T) -> T {
    let half = T::from_f64_lossy(0.5);
    if delta.abs() <= T::one() {
        half * delta * delta
    } else {
        delta.abs() - half
    }
}

/// Derivative of [`huber_loss`]: the error clipped to `[-1, 1]`.
pub fn huber_grad<T: Scalar>(delta: T) -> T {
    delta.max(-T::one()).min(T::one())
}

/// Mean Huber loss over a batch of errors.
pub fn mean_huber<T: Scalar>(deltas: &[T]) -> T {
    if deltas.is_empty() {
        return T::zero();
    }
    deltas.iter().map(|&d| huber_loss(d)).sum::<T>() / T::from_usize(deltas.len()).expect("batch size")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_branches() {
        assert_eq!(huber_loss(0.0f64), 0.0);
        assert_eq!(huber_loss(0.5f64), 0.125);
        assert_eq!(huber_loss(-0.5f32), 0.125);
        assert_eq!(huber_loss(1.0f64), 0.5);
        assert_eq!(huber_loss(3.0f64), 2.5);
        assert_eq!(huber_loss(-3.0f32), 2.5);
    }

    #[test]
    fn gradient_is_clipped_error() {
        assert_eq!(huber_grad(0.25f64), 0.25);
        assert_eq!(huber_grad(-7.0f64), -1.0);
        assert_eq!(huber_grad(2.0f32), 1.0);
        assert_eq!(mean_huber(&[0.5f64, 3.0]), 1.3125);
    }
}
