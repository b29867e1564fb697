use std::collections::BTreeMap;

use super::tape::{Gradients, Matrix, Param, ParamId};
use super::TensorError;

/// Bias-corrected Adam with per-parameter moment accumulators.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Matrix, Matrix)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that appears in `grads`.
    ///
    /// Parameters without a gradient entry are left untouched. Gradients are
    /// validated before any parameter is modified.
    pub fn step(&mut self, params: &mut [&mut Param], grads: &Gradients) -> Result<(), TensorError> {
        for p in params.iter() {
            if let Some(g) = grads.get(p.id()) {
                if g.dim() != p.value.dim() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam",
                        lhs: p.value.dim(),
                        rhs: g.dim(),
                    });
                }
                if !g.iter().all(|x| x.is_finite()) {
                    return Err(TensorError::NonFiniteGradient(p.id()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = self.lr / bc1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for p in params.iter_mut() {
            let Some(g) = grads.get(p.id()) else { continue };
            let (m, v) = self
                .moments
                .entry(p.id())
                .or_insert_with(|| (Matrix::zeros(g.dim()), Matrix::zeros(g.dim())));
            ndarray::Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= step_size * *m / ((*v / bc2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tape;
    use ndarray::array;

    fn grads_for(p: &Param, g: Matrix) -> Gradients {
        // loss = sum(p * g) has gradient g
        let mut t = Tape::new();
        let x = t.param(p);
        let c = t.constant(g);
        let y = t.mul(x, c);
        let l = t.sum(y);
        t.backward(l).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::new(array![[1.0, -2.0]]);
        let g = grads_for(&p, Matrix::ones((1, 2)));
        let mut adam = Adam::new(1e-3);
        adam.step(&mut [&mut p], &g).unwrap();
        assert!((p.value[[0, 0]] - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((p.value[[0, 1]] - (-2.0 - 1e-3)).abs() < 1e-10);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Param::new(array![[0.5, 0.25]]);
        let before = p.value.clone();
        let g = grads_for(&p, Matrix::zeros((1, 2)));
        let mut adam = Adam::new(1e-2);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &g).unwrap();
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn two_constant_steps_move_twice_lr() {
        // hand recursion: m_t / (1 - b1^t) = g and v_t / (1 - b2^t) = g^2, so
        // each bias-corrected step is lr * g / (|g| + eps)
        let lr = 1e-3;
        let g_val = 0.7;
        let expected = 2.0 * lr * g_val / (g_val + 1e-8);
        let mut p = Param::new(array![[0.0]]);
        let g = grads_for(&p, array![[g_val]]);
        let mut adam = Adam::new(lr);
        adam.step(&mut [&mut p], &g).unwrap();
        adam.step(&mut [&mut p], &g).unwrap();
        assert!((-p.value[[0, 0]] - expected).abs() < 1e-12);
        assert!((-p.value[[0, 0]] - 2.0 * lr).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = Param::new(array![[1.0]]);
        let g = Gradients::from_params([(p.id(), array![[f64::NAN]])]);
        let mut adam = Adam::new(1e-3);
        assert!(matches!(
            adam.step(&mut [&mut p], &g),
            Err(TensorError::NonFiniteGradient(_))
        ));
        assert_eq!(p.value[[0, 0]], 1.0);
        assert_eq!(adam.steps(), 0);
    }
}
