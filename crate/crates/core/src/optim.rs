//! Adam optimizer over flat parameter slices.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone, Default)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One bias-corrected Adam update at global step `t` (1-based).
    pub fn update(&mut self, cfg: &AdamConfig, t: u64, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        adam_step(cfg, t, params, grads, &mut self.m, &mut self.v);
    }
}

/// Adam update of `params` with moment buffers `m` and `v` of the same length.
pub fn adam_step(cfg: &AdamConfig, t: u64, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
    adam_step_corrected(cfg, BiasCorrection::at(cfg, t), params, grads, m, v);
}

/// The `1 - beta^t` factors of one step, shared by every block updated in it.
#[derive(Debug, Clone, Copy)]
pub struct BiasCorrection {
    bc1: f64,
    bc2: f64,
}

impl BiasCorrection {
    pub fn at(cfg: &AdamConfig, t: u64) -> Self {
        BiasCorrection {
            bc1: 1.0 - cfg.beta1.powf(t as f64),
            bc2: 1.0 - cfg.beta2.powf(t as f64),
        }
    }
}

pub fn adam_step_corrected(
    cfg: &AdamConfig,
    bc: BiasCorrection,
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    debug_assert_eq!(params.len(), grads.len());
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc.bc1;
        let v_hat = *v / bc.bc2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let cfg = AdamConfig::with_learning_rate(0.1);
        let mut p = vec![1.0, -2.0, 0.5];
        let mut m = Moments::zeros(3);
        m.update(&cfg, 1, &mut p, &[4.0, -0.5, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] + 1.9).abs() < 1e-8);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = AdamConfig::with_learning_rate(0.05);
        let mut p = vec![3.0];
        let mut m = Moments::zeros(1);
        for t in 1..=2000 {
            let g = [2.0 * (p[0] - 1.0)];
            m.update(&cfg, t, &mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
