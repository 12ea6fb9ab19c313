use super::ModelParameters;

/// Adaptive moment estimation with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamW {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ModelParameters, grads: &ModelParameters) {
        if self.first.is_empty() {
            let n = params.num_values();
            self.first = vec![0.0; n];
            self.second = vec![0.0; n];
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let grads = grads.tensors();
        let mut offset = 0;
        for (theta, g) in params.tensors_mut().into_iter().zip(grads) {
            let m = &mut self.first[offset..offset + theta.len()];
            let v = &mut self.second[offset..offset + theta.len()];
            for i in 0..theta.len() {
                let gi = g.data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                theta[i] -= self.learning_rate * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * theta[i]);
            }
            offset += theta.len();
        }
    }
}
