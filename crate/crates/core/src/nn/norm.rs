use super::{join, Params, Real, Tensor};

const EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Normalizes each row over its `dim` features (per-position layer norm).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Normalizes each feature column over all rows, i.e. per channel across the
/// whole time-frequency plane, with a per-channel affine.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

macro_rules! affine_params {
    ($ty:ident) => {
        impl<T: Real> $ty<T> {
            pub fn new(dim: usize) -> Self {
                Self {
                    gamma: Tensor::filled(&[dim], T::one()),
                    beta: Tensor::zeros(&[dim]),
                }
            }

            pub fn zeros(dim: usize) -> Self {
                Self {
                    gamma: Tensor::zeros(&[dim]),
                    beta: Tensor::zeros(&[dim]),
                }
            }

            pub fn dim(&self) -> usize {
                self.gamma.len()
            }
        }

        impl<T: Real> Params<T> for $ty<T> {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
                f(join(prefix, "gamma"), &self.gamma);
                f(join(prefix, "beta"), &self.beta);
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
                f(join(prefix, "gamma"), &mut self.gamma);
                f(join(prefix, "beta"), &mut self.beta);
            }
        }
    };
}

affine_params!(LayerNorm);
affine_params!(ChannelNorm);

impl<T: Real> LayerNorm<T> {
    pub fn forward(&self, x: &[T]) -> (Vec<T>, NormCache<T>) {
        let c = self.dim();
        let rows = x.len() / c;
        let n = T::of(c as f64);
        let eps = T::of(EPS);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut y = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                y[r * c + j] = h * self.gamma.data[j] + self.beta.data[j];
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &NormCache<T>, dy: &[T], grads: &mut Self) -> Vec<T> {
        let c = self.dim();
        let rows = dy.len() / c;
        let n = T::of(c as f64);
        let mut dx = vec![T::zero(); dy.len()];
        let mut g = vec![T::zero(); c];
        for r in 0..rows {
            let (dyr, xh) = (&dy[r * c..(r + 1) * c], &cache.xhat[r * c..(r + 1) * c]);
            let mut mean_g = T::zero();
            let mut mean_gx = T::zero();
            for j in 0..c {
                grads.gamma.data[j] += dyr[j] * xh[j];
                grads.beta.data[j] += dyr[j];
                g[j] = dyr[j] * self.gamma.data[j];
                mean_g += g[j];
                mean_gx += g[j] * xh[j];
            }
            mean_g /= n;
            mean_gx /= n;
            let inv = cache.inv_std[r];
            for j in 0..c {
                dx[r * c + j] = inv * (g[j] - mean_g - xh[j] * mean_gx);
            }
        }
        dx
    }
}

impl<T: Real> ChannelNorm<T> {
    pub fn forward(&self, x: &[T]) -> (Vec<T>, NormCache<T>) {
        let c = self.dim();
        let rows = x.len() / c;
        let n = T::of(rows as f64);
        let eps = T::of(EPS);
        let mut mean = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for j in 0..c {
                mean[j] += row[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for j in 0..c {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v / n + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        for (r, row) in x.chunks_exact(c).enumerate() {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                y[r * c + j] = h * self.gamma.data[j] + self.beta.data[j];
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &NormCache<T>, dy: &[T], grads: &mut Self) -> Vec<T> {
        let c = self.dim();
        let rows = dy.len() / c;
        let n = T::of(rows as f64);
        let mut mean_g = vec![T::zero(); c];
        let mut mean_gx = vec![T::zero(); c];
        for (dyr, xh) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for j in 0..c {
                grads.gamma.data[j] += dyr[j] * xh[j];
                grads.beta.data[j] += dyr[j];
                let g = dyr[j] * self.gamma.data[j];
                mean_g[j] += g;
                mean_gx[j] += g * xh[j];
            }
        }
        for j in 0..c {
            mean_g[j] /= n;
            mean_gx[j] /= n;
        }
        let mut dx = vec![T::zero(); dy.len()];
        for (r, (dyr, xh)) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)).enumerate() {
            for j in 0..c {
                let g = dyr[j] * self.gamma.data[j];
                dx[r * c + j] = cache.inv_std[j] * (g - mean_g[j] - xh[j] * mean_gx[j]);
            }
        }
        dx
    }
}
