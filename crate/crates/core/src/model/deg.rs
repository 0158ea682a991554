use rand::Rng;

use crate::nn::{join, Linear, LinearCache, Params, Real, Tensor};

/// Distance embedding generator: scalar distance -> `tanh(L1) -> tanh(L2) -> L3`.
/// The last layer is linear, so embeddings are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEmbedder<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
    pub l3: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct DegCache<T> {
    c1: LinearCache<T>,
    c2: LinearCache<T>,
    c3: LinearCache<T>,
    a1: Vec<T>,
    a2: Vec<T>,
}

impl<T: Real> DistanceEmbedder<T> {
    pub fn new<R: Rng + ?Sized>(sizes: [usize; 3], rng: &mut R) -> Self {
        Self {
            l1: Linear::new(1, sizes[0], rng),
            l2: Linear::new(sizes[0], sizes[1], rng),
            l3: Linear::new(sizes[1], sizes[2], rng),
        }
    }

    pub fn zeros(sizes: [usize; 3]) -> Self {
        Self {
            l1: Linear::zeros(1, sizes[0]),
            l2: Linear::zeros(sizes[0], sizes[1]),
            l3: Linear::zeros(sizes[1], sizes[2]),
        }
    }

    pub fn forward(&self, distance: T) -> (Vec<T>, DegCache<T>) {
        let (z1, c1) = self.l1.forward(vec![distance]);
        let a1: Vec<T> = z1.iter().map(|v| v.tanh()).collect();
        let (z2, c2) = self.l2.forward(a1.clone());
        let a2: Vec<T> = z2.iter().map(|v| v.tanh()).collect();
        let (out, c3) = self.l3.forward(a2.clone());
        (out, DegCache { c1, c2, c3, a1, a2 })
    }

    /// Hidden activations, for inspection.
    pub fn hidden(&self, distance: T) -> (Vec<T>, Vec<T>) {
        let (_, c) = self.forward(distance);
        (c.a1, c.a2)
    }

    /// Returns the gradient with respect to the input distance.
    pub fn backward(&self, cache: &DegCache<T>, d_out: &[T], grads: &mut Self) -> T {
        let da2 = self.l3.backward(&cache.c3, d_out, &mut grads.l3);
        let dz2: Vec<T> = da2
            .iter()
            .zip(&cache.a2)
            .map(|(&g, &a)| g * (T::one() - a * a))
            .collect();
        let da1 = self.l2.backward(&cache.c2, &dz2, &mut grads.l2);
        let dz1: Vec<T> = da1
            .iter()
            .zip(&cache.a1)
            .map(|(&g, &a)| g * (T::one() - a * a))
            .collect();
        self.l1.backward(&cache.c1, &dz1, &mut grads.l1)[0]
    }
}

impl<T: Real> Params<T> for DistanceEmbedder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
        self.l3.visit(&join(prefix, "l3"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.l1.visit_mut(&join(prefix, "l1"), f);
        self.l2.visit_mut(&join(prefix, "l2"), f);
        self.l3.visit_mut(&join(prefix, "l3"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    /// Largest singular value by power iteration on W^T W.
    fn spectral_norm(w: &Tensor<f64>) -> f64 {
        let (r, c) = (w.shape[0], w.shape[1]);
        let mut v = vec![1.0; c];
        for _ in 0..200 {
            let u: Vec<f64> = (0..r).map(|i| (0..c).map(|j| w.data[i * c + j] * v[j]).sum()).collect();
            let nv: Vec<f64> = (0..c).map(|j| (0..r).map(|i| w.data[i * c + j] * u[i]).sum()).collect();
            let n = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = nv.iter().map(|x| x / n).collect();
        }
        let u: Vec<f64> = (0..r).map(|i| (0..c).map(|j| w.data[i * c + j] * v[j]).sum()).collect();
        u.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_parameters_give_zero_embedding() {
        let deg = DistanceEmbedder::<f64>::zeros([32, 64, 64]);
        for d in [0.3, 1.0, 7.5] {
            assert!(deg.forward(d).0.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn hidden_layers_are_bounded_output_is_not() {
        let mut deg = DistanceEmbedder::<f64>::new([32, 64, 64], &mut seed::rng(1, &[]));
        deg.l3.weight.data.iter_mut().for_each(|w| *w *= 20.0);
        let mut exceeded = false;
        for d in [0.5, 2.0, 5.0, 10.0] {
            let (a1, a2) = deg.hidden(d);
            assert!(a1.iter().chain(&a2).all(|v| v.abs() < 1.0));
            exceeded |= deg.forward(d).0.iter().any(|v| v.abs() > 1.0);
        }
        assert!(exceeded);
    }

    #[test]
    fn lipschitz_continuity() {
        let deg = DistanceEmbedder::<f64>::new([32, 64, 64], &mut seed::rng(2, &[]));
        let l = spectral_norm(&deg.l1.weight) * spectral_norm(&deg.l2.weight) * spectral_norm(&deg.l3.weight);
        let (a, _) = deg.forward(1.0);
        let (b, _) = deg.forward(1.000001);
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff > 0.0 && diff <= l * 1e-6 * (1.0 + 1e-9), "{diff} vs {}", l * 1e-6);
    }

    #[test]
    fn distance_gradient_matches_fd() {
        let deg = DistanceEmbedder::<f64>::new([8, 8, 4], &mut seed::rng(3, &[]));
        let g = [0.3, -1.0, 0.5, 2.0];
        let (_, cache) = deg.forward(1.7);
        let dd = deg.backward(&cache, &g, &mut DistanceEmbedder::zeros([8, 8, 4]));
        let f = |d: f64| deg.forward(d).0.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        let fd = (f(1.7 + 1e-6) - f(1.7 - 1e-6)) / 2e-6;
        assert!((dd - fd).abs() < 1e-7 * fd.abs().max(1.0));
    }
}
