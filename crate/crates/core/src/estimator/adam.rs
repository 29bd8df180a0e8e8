use num_traits::Float;

use super::params::Params;
use crate::error::{Error, Result};

/// Moment estimates for Adam, one accumulator per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Float> AdamState<T> {
    pub fn new(shape_of: &Params<T>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let mut m = shape_of.clone();
        m.fill_zero();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: f64) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(Error::InvalidValue("gradient shapes do not match parameters".into()));
        }
        self.t += 1;
        let c = |x: f64| T::from(x).expect("float");
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let (one_b1, one_b2) = (c(1.0 - self.beta1), c(1.0 - self.beta2));
        let corr1 = c(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = c(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (c(lr), c(self.epsilon));
        for ((w, &g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::params::Tensor;

    fn scalar(v: f64) -> Params<f64> {
        Params {
            tensors: vec![Tensor {
                name: "w".into(),
                shape: vec![1],
                data: vec![v],
            }],
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1 -> update = -lr / (1 + eps)
        let mut w = scalar(0.5);
        let mut st = AdamState::new(&w, 0.9, 0.999, 1e-8);
        st.step(&mut w, &scalar(1.0), 0.001).unwrap();
        let expected = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((w.tensors[0].data[0] - expected).abs() < 1e-12);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut w = scalar(0.25);
        let mut st = AdamState::new(&w, 0.9, 0.999, 1e-8);
        for _ in 0..5 {
            st.step(&mut w, &scalar(0.0), 0.001).unwrap();
        }
        assert_eq!(w.tensors[0].data[0], 0.25);
    }

    #[test]
    fn equal_gradients_equal_updates() {
        let mk = |a: f64, b: f64| Params {
            tensors: vec![Tensor {
                name: "w".into(),
                shape: vec![2],
                data: vec![a, b],
            }],
        };
        let mut w = mk(1.0, 1.0);
        let mut st = AdamState::new(&w, 0.9, 0.999, 1e-8);
        for g in [0.3, -0.7, 2.0] {
            st.step(&mut w, &mk(g, g), 0.01).unwrap();
        }
        assert_eq!(w.tensors[0].data[0], w.tensors[0].data[1]);
    }

    #[test]
    fn hand_computed_second_step() {
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.001f64, 1e-8f64);
        let (g1, g2) = (1.0f64, -2.0f64);
        let m1 = (1.0 - b1) * g1;
        let v1 = (1.0 - b2) * g1 * g1;
        let w1 = 0.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g2;
        let v2 = b2 * v1 + (1.0 - b2) * g2 * g2;
        let w2 = w1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);

        let mut w = scalar(0.0);
        let mut st = AdamState::new(&w, b1, b2, eps);
        st.step(&mut w, &scalar(g1), lr).unwrap();
        st.step(&mut w, &scalar(g2), lr).unwrap();
        assert!((w.tensors[0].data[0] - w2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut w = scalar(0.0);
        let mut st = AdamState::new(&w, 0.9, 0.999, 1e-8);
        let bad = Params { tensors: vec![] };
        assert!(st.step(&mut w, &bad, 0.1).is_err());
    }
}
