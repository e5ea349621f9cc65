use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let lens: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        Adam {
            config,
            step: 0,
            m: lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i] = None` means parameter `i` received no
    /// gradient and is treated as zero.
    pub fn step(&mut self, mut params: Vec<&mut Tensor>, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        // lr·m̂/(√v̂ + ε) with the bias corrections folded into constants
        let step_size = lr / bc1;
        let inv_sqrt_bc2 = 1.0 / bc2.sqrt();
        for (i, p) in params.iter_mut().enumerate() {
            if p.len() != self.m[i].len() {
                return Err(Error::Shape(format!("parameter {i} changed size")));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = p.data_mut();
            match &grads[i] {
                Some(g) => {
                    if g.len() != data.len() {
                        return Err(Error::Shape(format!("gradient {i} has wrong length")));
                    }
                    for (((x, m), v), &g) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *x -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
                    }
                }
                None => {
                    for ((x, m), v) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m *= beta1;
                        *v *= beta2;
                        *x -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::matrix(1, 3, vec![1.0, -2.0, 3.5]).unwrap()];
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(params.iter_mut().collect(), &[Some(vec![0.0; 3])]).unwrap();
        adam.step(params.iter_mut().collect(), &[None]).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.steps_taken(), 2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g).
        let mut params = vec![Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap()];
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(params.iter_mut().collect(), &[Some(vec![4.0, -0.01])]).unwrap();
        let d = params[0].data();
        assert!((d[0] + 1e-3).abs() < 1e-9);
        assert!((d[1] - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = vec![Tensor::scalar(5.0)];
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
            &params,
        );
        for _ in 0..500 {
            let x = params[0].item();
            adam.step(params.iter_mut().collect(), &[Some(vec![2.0 * (x - 1.5)])]).unwrap();
        }
        assert!((params[0].item() - 1.5).abs() < 1e-2);
    }
}
