use ndarray::ArrayD;

use crate::autodiff::Params;
use crate::error::{Error, Result};

/// Per-parameter running averages for the AdaDelta update rule.
///
/// Defaults: rho = 0.95, epsilon = 1e-6.
#[derive(Debug, Clone)]
pub struct AdaDeltaState {
    accum_grad_sq: Vec<ArrayD<f64>>,
    accum_update_sq: Vec<ArrayD<f64>>,
    pub rho: f64,
    pub epsilon: f64,
}

impl AdaDeltaState {
    pub fn new(params: &Params) -> Self {
        Self::with_constants(params, 0.95, 1e-6)
    }

    pub fn with_constants(params: &Params, rho: f64, epsilon: f64) -> Self {
        assert!(rho > 0.0 && rho < 1.0, "rho must be in (0,1)");
        assert!(epsilon > 0.0, "epsilon must be positive");
        let zeros: Vec<ArrayD<f64>> = params
            .values()
            .iter()
            .map(|v| ArrayD::zeros(v.raw_dim()))
            .collect();
        AdaDeltaState {
            accum_grad_sq: zeros.clone(),
            accum_update_sq: zeros,
            rho,
            epsilon,
        }
    }

    /// One AdaDelta step, scaled by `lr`:
    ///
    /// ```text
    /// accum_g  = rho*accum_g + (1-rho)*g^2
    /// delta    = -lr * sqrt((accum_u + eps)/(accum_g + eps)) * g
    /// accum_u  = rho*accum_u + (1-rho)*delta^2
    /// theta   += delta
    /// ```
    pub fn step(&mut self, params: &mut Params, grads: &[ArrayD<f64>], lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::invalid_argument("learning rate must be positive"));
        }
        if grads.len() != params.len() {
            return Err(Error::invalid_argument(format!(
                "gradient count {} does not match parameter count {}",
                grads.len(),
                params.len()
            )));
        }
        let (rho, eps) = (self.rho, self.epsilon);
        for (i, (theta, g)) in params.values_mut().iter_mut().zip(grads).enumerate() {
            if theta.raw_dim() != g.raw_dim() {
                return Err(Error::invalid_argument(format!(
                    "gradient shape mismatch at tensor {i}"
                )));
            }
            let ag = &mut self.accum_grad_sq[i];
            let au = &mut self.accum_update_sq[i];
            ndarray::Zip::from(theta)
                .and(g)
                .and(ag)
                .and(au)
                .for_each(|t, &gv, agv, auv| {
                    *agv = rho * *agv + (1.0 - rho) * gv * gv;
                    let delta = -lr * ((*auv + eps) / (*agv + eps)).sqrt() * gv;
                    *auv = rho * *auv + (1.0 - rho) * delta * delta;
                    *t += delta;
                });
        }
        Ok(())
    }
}
