//! Adaptive-moment optimizer with named parameter slots.

use std::collections::BTreeMap;

use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Adam with optional L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub first_moment: BTreeMap<String, Matrix<T>>,
    pub second_moment: BTreeMap<String, Matrix<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// One update of every `(name, param)` with the gradient at the same position.
    pub fn update(&mut self, params: Vec<(String, &mut Matrix<T>)>, grads: &[Matrix<T>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let t = self.step as i32;
        let c1 = one - T::of(self.beta1.powi(t));
        let c2 = one - T::of(self.beta2.powi(t));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.eps);
        let wd = T::of(self.weight_decay);
        for ((name, p), g) in params.into_iter().zip(grads) {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch for {name}");
            let (r, c) = p.shape();
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(r, c));
            let v = self
                .second_moment
                .entry(name)
                .or_insert_with(|| Matrix::zeros(r, c));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let grad = gv + wd * *pv;
                *mv = b1 * *mv + (one - b1) * grad;
                *vv = b2 * *vv + (one - b2) * grad * grad;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
