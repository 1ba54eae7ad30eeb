use crate::model::{TensorMut, TensorRef};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam over a fixed, ordered list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_tensors(params: &[TensorMut<'_, f32>]) -> Self {
        Self::new(&params.iter().map(|p| p.2.len()).collect::<Vec<_>>())
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. A learning rate of exactly zero leaves the parameters
    /// untouched bit for bit.
    pub fn step(&mut self, params: &mut [TensorMut<'_, f32>], grads: &[TensorRef<'_, f32>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed");
        assert_eq!(grads.len(), self.m.len(), "gradient list does not match parameters");
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.0, g.0, "parameter/gradient order mismatch");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.2.len() {
                let gj = g.2[j] as f64;
                let mj = BETA1 * m[j] as f64 + (1.0 - BETA1) * gj;
                let vj = BETA2 * v[j] as f64 + (1.0 - BETA2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                if lr != 0.0 {
                    let upd = lr * (mj / bc1) / ((vj / bc2).sqrt() + ADAM_EPS);
                    p.2[j] = (p.2[j] as f64 - upd) as f32;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut w = vec![1.0f32, -2.0, 0.5];
        let g = vec![0.3f32, -4.0, 0.0];
        let mut opt = Adam::new(&[3]);
        {
            let mut params = vec![("w".to_string(), vec![3], &mut w[..])];
            let grads = vec![("w".to_string(), vec![3], &g[..])];
            opt.step(&mut params, &grads, 0.01);
        }
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] + 1.99).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn zero_lr_is_bitwise_identity() {
        let mut w = vec![0.1f32, 0.2];
        let before = w.clone();
        let g = vec![1.0f32, -1.0];
        let mut opt = Adam::new(&[2]);
        for _ in 0..3 {
            let mut params = vec![("w".to_string(), vec![2], &mut w[..])];
            opt.step(&mut params, &[("w".to_string(), vec![2], &g[..])], 0.0);
        }
        assert_eq!(w, before);
    }
}
