use super::{Element, ParamSet, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Adam with decoupled weight decay.
///
/// Each step first shrinks every parameter by `lr * weight_decay * theta`, then
/// applies the bias-corrected Adam update computed from the gradient alone.
#[derive(Debug, Clone)]
pub struct AdamW<T = f32> {
    config: AdamWConfig,
    step_count: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self, i: usize) -> &[T] {
        &self.first_moment[i]
    }

    pub fn second_moment(&self, i: usize) -> &[T] {
        &self.second_moment[i]
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(TensorError::Usage(format!(
                "optimizer tracks {} parameters, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.tensor.numel() != self.first_moment[i].len() {
                return Err(TensorError::Usage(format!("moment shape mismatch for {}", p.name)));
            }
            if p.tensor.grad().is_none() {
                return Err(TensorError::Usage(format!("missing gradient for {}", p.name)));
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bias1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bias2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - c.beta1), T::from_f64_lossy(1.0 - c.beta2));
        let decay = T::one() - T::from_f64_lossy(lr * c.weight_decay);
        let (lr, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(c.eps));

        for ((p, m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let grad = p.tensor.grad().expect("checked above").to_vec();
            for (((theta, g), m), v) in p.tensor.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *theta = *theta * decay;
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
