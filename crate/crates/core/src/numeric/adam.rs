use crate::error::{Error, Result};
use crate::numeric::{Grads, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments, one pair per parameter slot.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros: Vec<_> = params.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update over every slot, in slot order.
///
/// Gradients are validated before anything is mutated, so an error leaves
/// `params` and `state` untouched.
pub fn adam_step<F: Real>(params: &mut ParamStore<F>, grads: &Grads<F>, state: &mut AdamState<F>) -> Result<()> {
    if grads.tensors.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape("gradient / optimizer state do not match parameter slots".into()));
    }
    for (slot, g) in grads.tensors.iter().enumerate() {
        if g.shape() != params.get(slot).shape() {
            return Err(Error::Shape(format!("gradient shape mismatch in slot `{}`", params.name(slot))));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { slot: params.name(slot).to_string() });
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = F::lit(c.beta1);
    let b2 = F::lit(c.beta2);
    let one = F::one();
    let bc1 = F::lit(1.0 - c.beta1.powi(t));
    let bc2 = F::lit(1.0 - c.beta2.powi(t));
    let lr = F::lit(c.lr);
    let eps = F::lit(c.eps);
    for (slot, g) in grads.tensors.iter().enumerate() {
        let p = params.get_mut(slot).data_mut();
        let m = state.m[slot].data_mut();
        let v = state.v[slot].data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::row_vector(vec![v, -v])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op_on_params() {
        let mut p = store(0.3);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = store(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let g = Grads { tensors: vec![Tensor::row_vector(vec![1.0, 1.0])] };
        adam_step(&mut p, &g, &mut st).unwrap();
        // m_hat = v_hat = 1 after bias correction.
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((p.get(0).data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = store(0.5);
            let mut st = AdamState::new(&p, AdamConfig { lr: 1e-2, ..Default::default() });
            for k in 0..5 {
                let g = Grads { tensors: vec![Tensor::row_vector(vec![0.1 * k as f64, -0.3])] };
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_slot() {
        let mut p = store(1.0);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let g = Grads { tensors: vec![Tensor::row_vector(vec![f64::NAN, 0.0])] };
        match adam_step(&mut p, &g, &mut st) {
            Err(Error::NonFiniteGradient { slot }) => assert_eq!(slot, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }
}
