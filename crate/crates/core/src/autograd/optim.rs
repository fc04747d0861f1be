use super::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            config,
            step: 0,
            m: params.tensors().iter().map(zeros).collect(),
            v: params.tensors().iter().map(zeros).collect(),
        }
    }

    /// Restores a saved state; shapes must mirror the store.
    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        Self { config, step, m, v }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(1.5);
        let mut adam = Adam::new(AdamConfig::new(0.1), &s);
        adam.step(&mut s, &[Tensor::scalar(0.0)]);
        assert_eq!(s.tensors()[0].data(), &[1.5]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [-3.0, 0.02, 50.0] {
            let mut s = scalar_store(0.0);
            let mut adam = Adam::new(AdamConfig::new(0.01), &s);
            adam.step(&mut s, &[Tensor::scalar(g)]);
            let moved = s.tensors()[0].data()[0];
            assert!((moved + 0.01 * f64::signum(g)).abs() < 1e-8, "g={g} moved={moved}");
        }
    }

    #[test]
    fn two_steps_on_quadratic_match_hand_recurrence() {
        // f(x) = x², g = 2x, starting at x = 1 with lr = 0.1.
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let mut x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }

        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::new(lr), &s);
        for _ in 0..2 {
            let g = 2.0 * s.tensors()[0].data()[0];
            adam.step(&mut s, &[Tensor::scalar(g)]);
        }
        assert_eq!(s.tensors()[0].data()[0], x);
        // Step 1 moves by exactly lr (up to eps); step 2 then uses g = 1.8.
        assert!((x - 0.8).abs() < 0.01);
    }
}
