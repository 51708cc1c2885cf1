//! Adam with a polynomial learning-rate decay.

use crate::error::shape;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub base_rate: f64,
    pub end_rate: f64,
    pub decay_steps: u64,
    pub power: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_rate: 1e-3,
            end_rate: 1e-4,
            decay_steps: 10_000,
            power: 2.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
        }
    }
}

/// `end + (base − end)·(1 − min(step, decay)/decay)^power`
pub fn lr_schedule(step: u64, config: &AdamConfig) -> f64 {
    if config.decay_steps == 0 {
        return config.end_rate;
    }
    let frac = step.min(config.decay_steps) as f64 / config.decay_steps as f64;
    config.end_rate + (config.base_rate - config.end_rate) * (1.0 - frac).powf(config.power)
}

/// One bias-corrected Adam update. The rate is taken from the schedule at the
/// state's current step, which is then incremented.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(shape(format!(
            "adam: {} params, {} grads, {} moments",
            n,
            grads.len(),
            state.first_moment.len()
        )));
    }
    let c = state.config;
    let rate = lr_schedule(state.step, &c);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        let m = c.beta1 * state.first_moment[i] + (1.0 - c.beta1) * g;
        let v = c.beta2 * state.second_moment[i] + (1.0 - c.beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] -= rate * m_hat / (v_hat.sqrt() + c.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let c = AdamConfig::default();
        assert_eq!(lr_schedule(0, &c), 0.001);
        assert!((lr_schedule(10_000, &c) - 0.0001).abs() < 1e-18);
        assert!((lr_schedule(50_000, &c) - 0.0001).abs() < 1e-18);
        assert!((lr_schedule(5_000, &c) - 0.000325).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_non_increasing() {
        let c = AdamConfig::default();
        let mut prev = f64::INFINITY;
        for s in (0..12_000).step_by(7) {
            let r = lr_schedule(s, &c);
            assert!(r <= prev && r > 0.0);
            prev = r;
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2, AdamConfig::default());
        st.first_moment = vec![0.5, 0.5];
        adam_step(&mut p, &[0.0, 0.0], &mut st).unwrap();
        // moments decay; params move only through the decayed first moment
        assert_eq!(st.first_moment, vec![0.45, 0.45]);
        let mut q = vec![1.0, -2.0];
        let mut fresh = AdamState::new(2, AdamConfig::default());
        adam_step(&mut q, &[0.0, 0.0], &mut fresh).unwrap();
        assert_eq!(q, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_rate_against_sign() {
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2, AdamConfig::default());
        adam_step(&mut p, &[3.0, -0.02], &mut st).unwrap();
        // m̂/(√v̂+ε) = g/(|g|+ε)
        assert!((p[0] + 0.001 * 3.0 / (3.0 + 1e-8)).abs() < 1e-18);
        assert!((p[1] - 0.001 * 0.02 / (0.02 + 1e-8)).abs() < 1e-18);
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(3, AdamConfig::default());
        assert!(adam_step(&mut p, &[1.0], &mut st).is_err());
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut p = vec![0.3, -0.1, 2.0];
            let mut st = AdamState::new(3, AdamConfig::default());
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + 0.01 * k as f64).collect();
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
