//! RMS-style optimizer for the policy network.

use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_RHO: f32 = 0.99;
pub const DEFAULT_EPS: f32 = 1e-8;

/// Per-parameter running mean of squared gradients plus hyperparameters.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub lr: f32,
    pub weight_decay: f32,
    pub rho: f32,
    pub eps: f32,
    pub step_count: u64,
    v: Vec<Tensor>,
}

impl OptimState {
    pub fn new(params: &[Tensor], lr: f32, weight_decay: f32, rho: f32, eps: f32) -> Self {
        OptimState {
            lr,
            weight_decay,
            rho,
            eps,
            step_count: 0,
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// v <- rho*v + (1-rho)*g^2 ; p <- p - lr*(g + wd*p)/(sqrt(v)+eps).
    pub fn rmsprop_step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.v.len() || grads.len() != self.v.len() {
            return Err(Error::shape(
                "rmsprop_step",
                format!(
                    "{} params, {} grads, {} state slots",
                    params.len(),
                    grads.len(),
                    self.v.len()
                ),
            ));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.v) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::shape(
                    "rmsprop_step",
                    format!(
                        "param {:?}, grad {:?}, state {:?}",
                        p.shape(),
                        g.shape(),
                        v.shape()
                    ),
                ));
            }
            let (lr, wd, rho, eps) = (self.lr, self.weight_decay, self.rho, self.eps);
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = rho * *vv + (1.0 - rho) * gv * gv;
                *pv -= lr * (gv + wd * *pv) / (vv.sqrt() + eps);
            }
            p.ensure_finite("rmsprop_step")?;
        }
        self.step_count += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut params = vec![Tensor::new(&[2], vec![1.5, -0.5]).unwrap()];
        let grads = vec![Tensor::zeros(&[2])];
        let mut st = OptimState::new(&params, 1e-4, 0.0, DEFAULT_RHO, DEFAULT_EPS);
        st.rmsprop_step(&mut params, &grads).unwrap();
        assert_eq!(params[0].data(), &[1.5, -0.5]);
    }

    #[test]
    fn hand_substituted_single_step() {
        // p=1, g=1, v0=0, rho=0.99, lr=1e-4, wd=0 -> v=0.01, p ~= 0.999.
        let mut params = vec![Tensor::new(&[1], vec![1.0]).unwrap()];
        let grads = vec![Tensor::new(&[1], vec![1.0]).unwrap()];
        let mut st = OptimState::new(&params, 1e-4, 0.0, 0.99, 1e-8);
        st.rmsprop_step(&mut params, &grads).unwrap();
        let expected = 1.0 - 1e-4 * (1.0 / (0.01f32.sqrt() + 1e-8));
        assert!((params[0].data()[0] - expected).abs() < 1e-7);
        assert!((params[0].data()[0] - 0.999).abs() < 1e-5);
    }

    #[test]
    fn identical_steps_are_deterministic() {
        let run = || {
            let mut params = vec![Tensor::new(&[3], vec![0.3, -0.2, 0.9]).unwrap()];
            let grads = vec![Tensor::new(&[3], vec![0.1, 0.4, -0.6]).unwrap()];
            let mut st = OptimState::new(&params, 1e-4, 1e-3, DEFAULT_RHO, DEFAULT_EPS);
            for _ in 0..5 {
                st.rmsprop_step(&mut params, &grads).unwrap();
            }
            params[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
