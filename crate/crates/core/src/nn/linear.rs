use rand::Rng;

use super::{col_sum_into, join, matmul, Op, Params, Real, Tensor};

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LinearCache<T> {
    input: Vec<T>,
    rows: usize,
}

impl<T: Real> Linear<T> {
    /// PyTorch-style uniform init with bound `1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[fan_in, fan_out], bound, rng),
            bias: Tensor::uniform(&[fan_out], bound, rng),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let (i, o) = (self.fan_in(), self.fan_out());
        let rows = x.len() / i;
        let mut y: Vec<T> = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.data);
        }
        matmul(rows, i, o, x, Op::N, &self.weight.data, Op::N, T::one(), &mut y);
        y
    }

    pub fn forward(&self, x: Vec<T>) -> (Vec<T>, LinearCache<T>) {
        let rows = x.len() / self.fan_in();
        let y = self.apply(&x);
        (y, LinearCache { input: x, rows })
    }

    pub fn backward(&self, cache: &LinearCache<T>, dy: &[T], grads: &mut Self) -> Vec<T> {
        let (i, o, rows) = (self.fan_in(), self.fan_out(), cache.rows);
        matmul(i, rows, o, &cache.input, Op::T, dy, Op::N, T::one(), &mut grads.weight.data);
        col_sum_into(dy, o, &mut grads.bias.data);
        let mut dx = vec![T::zero(); rows * i];
        matmul(rows, o, i, dy, Op::N, &self.weight.data, Op::T, T::zero(), &mut dx);
        dx
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::{dot, rel_err};
    use crate::seed;
    use rand::Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seed::rng(1, &[]);
        let lin: Linear<f64> = Linear::new(5, 3, &mut rng);
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = lin.forward(x.clone());
        let mut grads = Linear::zeros(5, 3);
        let dx = lin.backward(&cache, &g, &mut grads);
        let h = 1e-6;
        for idx in [0, 7, 19] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (dot(&lin.apply(&xp), &g) - dot(&lin.apply(&xm), &g)) / (2.0 * h);
            assert!(rel_err(dx[idx], fd) < 1e-7);
        }
        for idx in [0, 8, 14] {
            let mut p = lin.clone();
            p.weight.data[idx] += h;
            let mut m = lin.clone();
            m.weight.data[idx] -= h;
            let fd = (dot(&p.apply(&x), &g) - dot(&m.apply(&x), &g)) / (2.0 * h);
            assert!(rel_err(grads.weight.data[idx], fd) < 1e-7);
        }
        let bsum: f64 = g.chunks(3).map(|r| r[1]).sum();
        assert!((grads.bias.data[1] - bsum).abs() < 1e-12);
    }
}
