use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-parameter Adam moment state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// A named trainable tensor with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub adam: AdamState,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let len = value.data().len();
        Param {
            name: name.into(),
            value,
            adam: AdamState::new(len),
        }
    }
}

/// Bias-corrected Adam update over a parameter list. Each parameter must
/// carry a gradient from a completed backward pass; gradients are zeroed
/// after the update and each state's step counter advances by one.
pub fn adam_step(params: &mut [Param], lr: f64) -> Result<()> {
    for p in params.iter() {
        if p.value.grad().is_none() {
            return Err(Error::Config(format!(
                "adam_step: parameter '{}' has no gradient",
                p.name
            )));
        }
    }
    for p in params.iter_mut() {
        let st = &mut p.adam;
        st.t += 1;
        let (b1, b2, eps) = (st.beta1, st.beta2, st.eps);
        let inv_bc1 = 1.0 / (1.0 - b1.powi(st.t as i32));
        let inv_bc2 = 1.0 / (1.0 - b2.powi(st.t as i32));
        let (data, grad) = p.value.data_and_grad_mut();
        let grad = grad.expect("checked above");
        for (((w, &g), m), v) in data
            .iter_mut()
            .zip(grad)
            .zip(st.m.iter_mut())
            .zip(st.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m * inv_bc1;
            let v_hat = *v * inv_bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.value.clear_grad();
    }
    Ok(())
}

/// Glorot-uniform initialization: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::new(rows, cols, data).expect("length matches by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adam_first_step_matches_hand_formula() {
        // scalar param, grad 1.0, lr 0.01: m_hat = v_hat = 1 after bias
        // correction, so delta = -lr / (1 + eps) ~ -0.01
        let mut p = Param::new("w", Tensor::scalar(2.0));
        p.value.set_grad(vec![1.0]).unwrap();
        adam_step(std::slice::from_mut(&mut p), 0.01).unwrap();
        let delta = p.value.get(0, 0) - 2.0;
        assert!((delta + 0.01).abs() < 1e-9, "delta {delta}");
        assert_eq!(p.adam.step_count(), 1);
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut p = Param::new("w", Tensor::new(1, 2, vec![0.5, -0.5]).unwrap());
        p.value.set_grad(vec![0.0, 0.0]).unwrap();
        adam_step(std::slice::from_mut(&mut p), 0.1).unwrap();
        assert_eq!(p.value.data(), &[0.5, -0.5]);
    }

    #[test]
    fn adam_missing_grad_is_usage_error() {
        let mut p = Param::new("w", Tensor::scalar(1.0));
        assert!(adam_step(std::slice::from_mut(&mut p), 0.1).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // 100 steps on f(w) = w^2 from w = 1 at lr 0.1 drives |w| below 0.1
        let mut p = Param::new("w", Tensor::scalar(1.0));
        for _ in 0..100 {
            let w = p.value.get(0, 0);
            p.value.set_grad(vec![2.0 * w]).unwrap();
            adam_step(std::slice::from_mut(&mut p), 0.1).unwrap();
        }
        assert!(p.value.get(0, 0).abs() < 0.1);
    }

    #[test]
    fn glorot_within_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = glorot_uniform(10, 20, &mut rng);
        let limit = (6.0 / 30.0f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < limit));
    }
}
