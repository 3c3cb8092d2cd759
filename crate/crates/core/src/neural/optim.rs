use super::layers::Param;

/// Per-epoch learning rates `lr[0..epochs]` for epochs `1..=epochs`:
/// `lr_n = lr_{n-1} / (1 + decay * n)` with `decay = initial / epochs`.
pub fn lr_schedule(initial: f64, epochs: usize) -> Vec<f64> {
    let decay = if epochs == 0 { 0.0 } else { initial / epochs as f64 };
    lr_schedule_with_decay(initial, epochs, decay)
}

pub fn lr_schedule_with_decay(initial: f64, epochs: usize, decay: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(epochs);
    let mut lr = initial;
    for n in 1..=epochs {
        lr /= 1.0 + decay * n as f64;
        out.push(lr);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one bias-corrected update to `params` (always passed in the
    /// same order).
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.value[i] -= lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_goldens() {
        let lr = lr_schedule(0.01, 150);
        assert_eq!(lr.len(), 150);
        let decay: f64 = 0.01 / 150.0;
        assert!((decay - 6.6667e-5).abs() < 1e-9);
        assert!((lr[0] - 0.01 / (1.0 + decay)).abs() < 1e-15);
        assert!((lr[0] - 0.009_999_333_377_77).abs() < 1e-12);
        // second epoch compounds on the first
        assert!((lr[1] - lr[0] / (1.0 + 2.0 * decay)).abs() < 1e-15);
    }

    #[test]
    fn zero_decay_is_constant() {
        assert!(lr_schedule_with_decay(0.01, 5, 0.0).iter().all(|v| *v == 0.01));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // with bias correction the first step is lr * sign(g)
        let mut p = Param {
            value: vec![1.0, -2.0],
            grad: vec![0.5, -3.0],
            regularized: false,
        };
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step(&mut [&mut p], 0.1);
        assert!((p.value[0] - 0.9).abs() < 1e-7);
        assert!((p.value[1] + 1.9).abs() < 1e-7);
    }
}
