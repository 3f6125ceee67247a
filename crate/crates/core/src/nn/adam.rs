use serde::{Deserialize, Serialize};

use super::{Param, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Self {
        Adam {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn for_model<M: Parameterized + ?Sized>(config: AdamConfig, model: &M) -> Self {
        let named = model.named_params();
        let params: Vec<&Param> = named.iter().map(|(_, p)| *p).collect();
        Adam::new(config, &params)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.first[i], &self.second[i])
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            assert_eq!(p.len(), m.len(), "parameter shape changed");
            for i in 0..p.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.value[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            p.zero_grad();
        }
    }

    pub fn step_model<M: Parameterized + ?Sized>(&mut self, model: &mut M) {
        self.step(&mut model.params_mut());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Param::zeros(&[2]);
        p.value = vec![1.0, -1.0];
        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        p.grad = vec![1.0, 1.0];
        opt.step(&mut [&mut p]);
        let after_first = p.value.clone();
        let (m1, v1) = (opt.moments(0).0.to_vec(), opt.moments(0).1.to_vec());
        opt.step(&mut [&mut p]);
        // m decays so the update is not zero, but moments must shrink
        let (m2, v2) = opt.moments(0);
        assert!(m2[0] < m1[0] && v2[0] < v1[0]);

        let mut q = Param::zeros(&[3]);
        q.value = vec![0.5, 0.25, -2.0];
        let mut fresh = Adam::new(AdamConfig::default(), &[&q]);
        fresh.step(&mut [&mut q]);
        assert_eq!(q.value, vec![0.5, 0.25, -2.0]);
        assert_ne!(after_first, vec![1.0, -1.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::zeros(&[1]);
        p.value[0] = 0.3;
        p.grad[0] = 1.0;
        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        opt.step(&mut [&mut p]);
        // m_hat = 1, v_hat = 1 -> delta = -0.01 / (1 + 1e-8)
        assert!((p.value[0] - (0.3 - 0.01 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(p.grad[0], 0.0);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn minimizes_square() {
        let mut p = Param::zeros(&[1]);
        p.value[0] = 1.0;
        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        for _ in 0..200 {
            p.grad[0] = 2.0 * p.value[0];
            opt.step(&mut [&mut p]);
        }
        assert!(p.value[0].abs() < 0.05, "theta = {}", p.value[0]);
    }
}
