use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::net::{NetworkGrads, NetworkParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.8e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return param_err(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return param_err("Adam betas must lie in [0, 1)");
        }
        if !(self.eps >= 0.0) {
            return param_err("Adam epsilon must be nonnegative");
        }
        Ok(())
    }
}

/// First and second moment estimates, one entry per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

fn update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Bias-corrected Adam step on a flat parameter vector; `t` counts from 1.
pub fn adam_step_flat(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return param_err("Adam step counter starts at 1");
    }
    if params.len() != grads.len() || params.len() != moments.len() {
        return dim_err(format!(
            "Adam shapes disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            moments.len()
        ));
    }
    update(params, grads, &mut moments.m, &mut moments.v, t, cfg);
    Ok(())
}

/// Adam step applied tensor by tensor to network parameters.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkGrads,
    moments: &mut AdamMoments,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if t == 0 {
        return param_err("Adam step counter starts at 1");
    }
    let grad_count: usize = grads.tensors().map(<[f64]>::len).sum();
    if params.param_count() != grad_count || grad_count != moments.len() {
        return dim_err(format!(
            "Adam shapes disagree: {} params, {grad_count} grads, {} moments",
            params.param_count(),
            moments.len()
        ));
    }
    let mut offset = 0;
    for (p, g) in params.tensors_mut().zip(grads.tensors()) {
        if p.len() != g.len() {
            return dim_err("gradient tensor does not match parameter tensor");
        }
        let end = offset + p.len();
        update(p, g, &mut moments.m[offset..end], &mut moments.v[offset..end], t, cfg);
        offset = end;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_network, Head};

    #[test]
    fn zero_gradient_from_rest_is_a_fixed_point() {
        let mut p = init_network(1, &[4], 30.0, Head::TanhAbs).unwrap();
        let before = p.clone();
        let mut g = crate::net::NetworkGrads {
            net: p.net.zeros_like(),
            twin: None,
        };
        let mut mom = AdamMoments::zeros(p.param_count());
        adam_step(&mut p, &g, &mut mom, 1, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        // a non-trivial gradient then a zero one: moments decay geometrically
        g.net.layers[0].bias[0] = 2.0;
        adam_step(&mut p, &g, &mut mom, 2, &AdamConfig::default()).unwrap();
        let (m0, v0) = (mom.m[8], mom.v[8]);
        assert!(m0 != 0.0);
        let zero = crate::net::NetworkGrads {
            net: p.net.zeros_like(),
            twin: None,
        };
        adam_step(&mut p, &zero, &mut mom, 3, &AdamConfig::default()).unwrap();
        assert_eq!(mom.m[8], 0.9 * m0);
        assert_eq!(mom.v[8], 0.999 * v0);
    }

    #[test]
    fn first_step_is_learning_rate() {
        let cfg = AdamConfig::default();
        let mut x = [0.0];
        let mut mom = AdamMoments::zeros(1);
        adam_step_flat(&mut x, &[1.0], &mut mom, 1, &cfg).unwrap();
        assert!((x[0] + cfg.learning_rate / (1.0 + cfg.eps)).abs() < 1e-20);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let g = 0.37;
        // hand-unrolled scalar Adam
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.5f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        let mut p = [1.5];
        let mut mom = AdamMoments::zeros(1);
        adam_step_flat(&mut p, &[g], &mut mom, 1, &cfg).unwrap();
        adam_step_flat(&mut p, &[g], &mut mom, 2, &cfg).unwrap();
        assert!((p[0] - x).abs() <= 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut mom = AdamMoments::zeros(2);
        assert!(adam_step_flat(&mut [0.0], &[1.0], &mut mom, 1, &AdamConfig::default()).is_err());
        let mut mom = AdamMoments::zeros(1);
        assert!(adam_step_flat(&mut [0.0], &[1.0], &mut mom, 0, &AdamConfig::default()).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        }
        .validate()
        .is_err());
        assert!(AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        }
        .validate()
        .is_err());
    }
}
