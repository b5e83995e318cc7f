use ndarray::Array2;

use crate::num::Scalar;

pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Mean binary cross-entropy on raw logits, with the gradient w.r.t. the
/// logits. Uses the overflow-safe formulation
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
pub fn bce_with_logits<F: Scalar>(logits: &Array2<F>, targets: &[F]) -> (F, Array2<F>) {
    let n = targets.len();
    assert_eq!(logits.dim(), (n, 1));
    let inv_n = F::from_f64(1.0 / n as f64);
    let mut loss = F::zero();
    let mut grad = Array2::zeros((n, 1));
    for i in 0..n {
        let z = logits[[i, 0]];
        let y = targets[i];
        let zmax = if z > F::zero() { z } else { F::zero() };
        loss += zmax - z * y + (F::one() + (-z.abs()).exp()).ln();
        grad[[i, 0]] = (sigmoid(z) - y) * inv_n;
    }
    (loss * inv_n, grad)
}
