/// Adaptive-moment optimiser over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Bias-corrected update of `param` (index `i`) given its gradient.
    /// Call [`Adam::begin_step`] once before each sweep over the parameters.
    #[inline]
    pub fn update(&mut self, i: usize, param: &mut f64, grad: f64) {
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad * grad;
        let t = self.step as i32;
        let m_hat = self.m[i] / (1.0 - self.beta1.powi(t));
        let v_hat = self.v[i] / (1.0 - self.beta2.powi(t));
        *param -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }
}
