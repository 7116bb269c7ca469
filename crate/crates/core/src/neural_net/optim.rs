use super::layers::Param;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of completed steps.
    pub t: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            t: 0,
        }
    }
}

impl Adam {
    /// One bias-corrected update of every parameter with its current gradient.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let Param { value, grad, m, v } = &mut **p;
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Constant `lr0` through epoch `hold`, then decayed by `factor` once every
/// `every` epochs. Epochs are 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub hold: u32,
    pub factor: f64,
    pub every: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            hold: 70,
            factor: 0.9,
            every: 10,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: u32) -> f64 {
        if epoch <= self.hold {
            return self.lr0;
        }
        let k = (epoch - self.hold).div_ceil(self.every.max(1));
        self.lr0 * self.factor.powi(k as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(1), 1e-3);
        assert_eq!(s.lr(70), 1e-3);
        assert!((s.lr(71) - 9e-4).abs() < 1e-12);
        assert!((s.lr(75) - 9e-4).abs() < 1e-12);
        assert!((s.lr(80) - 9e-4).abs() < 1e-12);
        assert!((s.lr(81) - 8.1e-4).abs() < 1e-12);
        assert!((s.lr(95) - 1e-3 * 0.9f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_non_increasing() {
        let s = LrSchedule::default();
        for e in 1..300 {
            assert!(s.lr(e + 1) <= s.lr(e));
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = Param::new(vec![1.0, -2.0]);
        p.grad = vec![0.5, -3.0];
        let mut adam = Adam::default();
        adam.step(&mut [&mut p], 0.01);
        assert!((p.value[0] - 0.99).abs() < 1e-6);
        assert!((p.value[1] + 1.99).abs() < 1e-6);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut p = Param::new(vec![1.0]);
        let mut adam = Adam::default();
        for _ in 0..200 {
            p.grad = vec![2.0 * p.value[0]];
            adam.step(&mut [&mut p], 0.1);
        }
        assert!(p.value[0].abs() < 0.05, "{}", p.value[0]);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Param::new(vec![0.25, -4.0]);
        let mut adam = Adam::default();
        for _ in 0..3 {
            adam.step(&mut [&mut p], 0.1);
        }
        assert_eq!(p.value, vec![0.25, -4.0]);
    }
}
