use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::real::{cast_vec, gemm, Mat, Real};

/// `y = x·Wᵀ + b` with `W` stored `out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub din: usize,
    pub dout: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(din: usize, dout: usize) -> Self {
        Self {
            din,
            dout,
            w: vec![T::ZERO; din * dout],
            b: vec![T::ZERO; dout],
        }
    }

    /// Weights `N(0, gain²/din)`, zero bias.
    pub fn random(din: usize, dout: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, gain / (din as f64).sqrt()).expect("finite std");
        Self {
            din,
            dout,
            w: (0..din * dout).map(|_| T::from_f64(normal.sample(rng))).collect(),
            b: vec![T::ZERO; dout],
        }
    }

    pub fn cast<U: Real>(&self) -> Linear<U> {
        Linear {
            din: self.din,
            dout: self.dout,
            w: cast_vec(&self.w),
            b: cast_vec(&self.b),
        }
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let mut y = Vec::with_capacity(n * self.dout);
        for _ in 0..n {
            y.extend_from_slice(&self.b);
        }
        gemm(
            T::ONE,
            Mat::rm(x, n, self.din),
            Mat::rm(&self.w, self.dout, self.din).t(),
            T::ONE,
            &mut y,
            self.dout,
        );
        y
    }

    /// `dx = dy·W`.
    pub fn backward_input(&self, dy: &[T], n: usize) -> Vec<T> {
        let mut dx = vec![T::ZERO; n * self.din];
        gemm(
            T::ONE,
            Mat::rm(dy, n, self.dout),
            Mat::rm(&self.w, self.dout, self.din),
            T::ZERO,
            &mut dx,
            self.din,
        );
        dx
    }

    /// Accumulates `dW += dyᵀ·x` and `db += Σ dy` into `grad`.
    pub fn accumulate_grad(&self, x: &[T], dy: &[T], n: usize, grad: &mut Linear<T>) {
        gemm(
            T::ONE,
            Mat::rm(dy, n, self.dout).t(),
            Mat::rm(x, n, self.din),
            T::ONE,
            &mut grad.w,
            self.din,
        );
        for row in dy.chunks_exact(self.dout) {
            for (g, &d) in grad.b.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub dim: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Normalized activations and inverse standard deviations of one LayerNorm call.
#[derive(Clone, Debug)]
pub(crate) struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            gamma: vec![T::ONE; dim],
            beta: vec![T::ZERO; dim],
        }
    }

    pub fn cast<U: Real>(&self) -> LayerNorm<U> {
        LayerNorm {
            dim: self.dim,
            gamma: cast_vec(&self.gamma),
            beta: cast_vec(&self.beta),
        }
    }

    pub(crate) fn forward(&self, x: &[T]) -> (Vec<T>, LnCache<T>) {
        let d = self.dim;
        let n = x.len() / d;
        let inv_d = T::from_f64(1.0 / d as f64);
        let eps = T::from_f64(LN_EPS);
        let mut y = vec![T::ZERO; x.len()];
        let mut xhat = vec![T::ZERO; x.len()];
        let mut rstd = vec![T::ZERO; n];
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::ONE / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * self.gamma[j] + self.beta[j];
            }
        }
        (y, LnCache { xhat, rstd })
    }

    pub(crate) fn backward(&self, cache: &LnCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let inv_d = T::from_f64(1.0 / d as f64);
        let mut dx = vec![T::ZERO; dy.len()];
        for (r, &rs) in cache.rstd.iter().enumerate() {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let g = &dy[r * d..(r + 1) * d];
            let mut sum_g = T::ZERO;
            let mut sum_gx = T::ZERO;
            for j in 0..d {
                let gh = g[j] * self.gamma[j];
                sum_g += gh;
                sum_gx += gh * xh[j];
            }
            let (mg, mgx) = (sum_g * inv_d, sum_gx * inv_d);
            for j in 0..d {
                dx[r * d + j] = rs * (g[j] * self.gamma[j] - mg - xh[j] * mgx);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

/// tanh approximation of GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (c * (x + k * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * c * (T::ONE + T::from_f64(3.0) * k * x * x)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// In-place row softmax.
pub(crate) fn softmax_rows<T: Real>(x: &mut [T], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::ONE / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Low-rank adapter for one `out×in` projection: `ΔW = s·B·A`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraPair<T> {
    pub rank: usize,
    pub din: usize,
    pub dout: usize,
    /// `rank×in`
    pub a: Vec<T>,
    /// `out×rank`
    pub b: Vec<T>,
}

impl<T: Real> LoraPair<T> {
    pub fn zeros(rank: usize, din: usize, dout: usize) -> Self {
        Self {
            rank,
            din,
            dout,
            a: vec![T::ZERO; rank * din],
            b: vec![T::ZERO; dout * rank],
        }
    }

    /// `A ~ N(0, 1/in)`, `B = 0`.
    pub fn fresh(rank: usize, din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (din as f64).sqrt()).expect("finite std");
        Self {
            rank,
            din,
            dout,
            a: (0..rank * din).map(|_| T::from_f64(normal.sample(rng))).collect(),
            b: vec![T::ZERO; dout * rank],
        }
    }

    pub fn cast<U: Real>(&self) -> LoraPair<U> {
        LoraPair {
            rank: self.rank,
            din: self.din,
            dout: self.dout,
            a: cast_vec(&self.a),
            b: cast_vec(&self.b),
        }
    }

    /// Adds `s·(x·Aᵀ)·Bᵀ` to `y`; returns `u = x·Aᵀ`.
    pub(crate) fn forward_add(&self, x: &[T], n: usize, scale: T, y: &mut [T]) -> Vec<T> {
        let mut u = vec![T::ZERO; n * self.rank];
        gemm(
            T::ONE,
            Mat::rm(x, n, self.din),
            Mat::rm(&self.a, self.rank, self.din).t(),
            T::ZERO,
            &mut u,
            self.rank,
        );
        gemm(
            scale,
            Mat::rm(&u, n, self.rank),
            Mat::rm(&self.b, self.dout, self.rank).t(),
            T::ONE,
            y,
            self.dout,
        );
        u
    }

    /// Accumulates parameter gradients into `grad` and adds the input
    /// gradient to `dx`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        x: &[T],
        u: &[T],
        dy: &[T],
        n: usize,
        scale: T,
        grad: &mut LoraPair<T>,
        dx: &mut [T],
    ) {
        gemm(
            scale,
            Mat::rm(dy, n, self.dout).t(),
            Mat::rm(u, n, self.rank),
            T::ONE,
            &mut grad.b,
            self.rank,
        );
        let mut du = vec![T::ZERO; n * self.rank];
        gemm(
            scale,
            Mat::rm(dy, n, self.dout),
            Mat::rm(&self.b, self.dout, self.rank),
            T::ZERO,
            &mut du,
            self.rank,
        );
        gemm(
            T::ONE,
            Mat::rm(&du, n, self.rank).t(),
            Mat::rm(x, n, self.din),
            T::ONE,
            &mut grad.a,
            self.din,
        );
        gemm(
            T::ONE,
            Mat::rm(&du, n, self.rank),
            Mat::rm(&self.a, self.rank, self.din),
            T::ONE,
            dx,
            self.din,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn numeric<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative() {
        for x in [-3.0, -1.0, -0.2, 0.0, 0.4, 2.5] {
            let num = numeric(gelu::<f64>, x);
            assert!((num - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(3.0f64) + sigmoid(-3.0) - 1.0).abs() < 1e-15);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = vec![1.0f64, 2.0, 3.0, 1000.0, 1000.0, -5.0];
        softmax_rows(&mut x, 3);
        assert!((x[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((x[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::<f64>::random(5, 3, 1.0, &mut rng);
        lin.b = vec![0.1, -0.2, 0.3];
        let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
        let r: Vec<f64> = (0..6).map(|i| (i as f64 * 0.91).cos()).collect();
        let loss = |l: &Linear<f64>, x: &[f64]| -> f64 {
            l.forward(x, 2).iter().zip(&r).map(|(y, r)| y * r).sum()
        };
        let mut grad = Linear::zeros(5, 3);
        lin.accumulate_grad(&x, &r, 2, &mut grad);
        let dx = lin.backward_input(&r, 2);
        let h = 1e-6;
        for i in 0..lin.w.len() {
            let mut p = lin.clone();
            p.w[i] += h;
            let mut m = lin.clone();
            m.w[i] -= h;
            let num = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((num - grad.w[i]).abs() < 1e-8);
        }
        for i in 0..3 {
            assert!((grad.b[i] - (r[i] + r[3 + i])).abs() < 1e-12);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let num = (loss(&lin, &xp) - loss(&lin, &xm)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn layernorm_backward_matches_finite_differences() {
        let mut ln = LayerNorm::<f64>::new(6);
        ln.gamma = vec![1.0, 0.5, -0.3, 2.0, 1.1, 0.9];
        ln.beta = vec![0.1; 6];
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).sin() * 2.0).collect();
        let r: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos()).collect();
        let loss = |x: &[f64]| -> f64 { ln.forward(x).0.iter().zip(&r).map(|(a, b)| a * b).sum() };
        let (_, cache) = ln.forward(&x);
        let dx = ln.backward(&cache, &r);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let num = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-7, "{num} vs {}", dx[i]);
        }
    }

    #[test]
    fn lora_zero_b_adds_nothing_and_scale_algebra_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pair = LoraPair::<f64>::fresh(2, 4, 3, &mut rng);
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 3.0).collect();
        let mut y = vec![0.5; 6];
        pair.forward_add(&x, 2, 0.125, &mut y);
        assert!(y.iter().all(|&v| v == 0.5));

        let mut p1 = pair.clone();
        p1.b = (0..6).map(|i| i as f64 * 0.1).collect();
        let mut p2 = p1.clone();
        p2.b.iter_mut().for_each(|v| *v *= 2.0);
        let mut y1 = vec![0.0; 6];
        let mut y2 = vec![0.0; 6];
        p1.forward_add(&x, 2, 0.25, &mut y1);
        p2.forward_add(&x, 2, 0.125, &mut y2);
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
