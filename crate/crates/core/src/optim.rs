//! Adaptive moment estimation.

use crate::nn::{Grads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for a flat list of buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Adam { config, step: 0, m, v }
    }

    pub fn for_store(config: AdamConfig, store: &ParamStore) -> Self {
        Self::new(config, store.tensors().iter().map(|t| t.len()))
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step with bias-corrected moments. Buffers for which `skip`
    /// returns true are left untouched.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut [f64]>,
        grads: impl IntoIterator<Item = &'a [f64]>,
        skip: impl Fn(usize) -> bool,
    ) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - c.beta1.powi(t);
        let correction2 = 1.0 - c.beta2.powi(t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if skip(i) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..p.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let m_hat = m[k] / correction1;
                let v_hat = v[k] / correction2;
                p[k] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }

    /// Steps every trainable array of `store`.
    pub fn step_store(&mut self, store: &mut ParamStore, grads: &Grads) {
        let frozen: Vec<bool> = store.tensors().iter().map(|t| !t.trainable).collect();
        let params = store.tensors_mut().iter_mut().map(|t| t.values.as_mut_slice());
        self.update(params, grads.iter(), |i| frozen[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_rate() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let mut adam = Adam::new(AdamConfig::with_rate(0.1), [1]);
        let mut p = vec![1.0];
        adam.update([p.as_mut_slice()], [[4.0].as_slice()], |_| false);
        let expected = 1.0 - 0.1 * 4.0 / (4.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn matches_reference_on_scalar_quadratic() {
        // Minimize (p - 3)^2 from p = 0, comparing against a transcription of the
        // textbook update run side by side.
        let cfg = AdamConfig::with_rate(0.05);
        let mut adam = Adam::new(cfg, [1]);
        let mut p = vec![0.0];
        let (mut rp, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let g = 2.0 * (p[0] - 3.0);
            adam.update([p.as_mut_slice()], [[g].as_slice()], |_| false);
            let rg = 2.0 * (rp - 3.0);
            m = 0.9 * m + 0.1 * rg;
            v = 0.999 * v + 0.001 * rg * rg;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            rp -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - rp).abs() < 1e-12);
        }
        assert!((p[0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn skipped_buffers_do_not_move() {
        let mut adam = Adam::new(AdamConfig::default(), [1, 1]);
        let mut a = vec![1.0];
        let mut b = vec![1.0];
        adam.update([a.as_mut_slice(), b.as_mut_slice()], [[1.0].as_slice(), [1.0].as_slice()], |i| i == 0);
        assert_eq!(a[0], 1.0);
        assert!(b[0] < 1.0);
    }
}
