use super::layers::Param;

/// Adam with optional decoupled weight decay (AdamW when `weight_decay > 0`).
///
/// Moment buffers are matched to parameters by position, so callers must pass
/// parameters in the same order on every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u64,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn adamw(weight_decay: f32) -> Self {
        Self {
            weight_decay,
            ..Self::new()
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over `(param, learning rate)` pairs.
    pub fn step(&mut self, params: Vec<(&mut Param, f32)>) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(p, _)| (vec![0.0; p.value.data.len()], vec![0.0; p.value.data.len()]))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter set changed between steps");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, lr), (m, v)) in params.into_iter().zip(self.moments.iter_mut()) {
            let decay = 1.0 - lr * self.weight_decay;
            for i in 0..p.value.data.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let w = &mut p.value.data[i];
                if self.weight_decay > 0.0 {
                    *w *= decay;
                }
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}
