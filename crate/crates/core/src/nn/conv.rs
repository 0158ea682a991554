use rand::Rng;

use super::{col_sum_into, join, matmul, Op, Params, Real, Tensor};

const K: usize = 3;

/// 3x3 convolution over a `rows x cols` grid with zero padding and stride 1,
/// channels-last layout (`[rows][cols][channels]`). The kernel is stored as
/// `[kr][kc][in][out]`, i.e. a `(9*in) x out` matrix for im2col.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Conv2dCache<T> {
    patches: Vec<T>,
    rows: usize,
    cols: usize,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((c_in * K * K) as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[K, K, c_in, c_out], bound, rng),
            bias: Tensor::uniform(&[c_out], bound, rng),
        }
    }

    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[K, K, c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape[3]
    }

    fn im2col(&self, x: &[T], rows: usize, cols: usize) -> Vec<T> {
        let ci = self.c_in();
        let width = K * K * ci;
        let mut patches = vec![T::zero(); rows * cols * width];
        for r in 0..rows {
            for c in 0..cols {
                let dst = &mut patches[(r * cols + c) * width..(r * cols + c + 1) * width];
                for kr in 0..K {
                    let rr = r as isize + kr as isize - 1;
                    if rr < 0 || rr >= rows as isize {
                        continue;
                    }
                    for kc in 0..K {
                        let cc = c as isize + kc as isize - 1;
                        if cc < 0 || cc >= cols as isize {
                            continue;
                        }
                        let src = (rr as usize * cols + cc as usize) * ci;
                        let off = (kr * K + kc) * ci;
                        dst[off..off + ci].copy_from_slice(&x[src..src + ci]);
                    }
                }
            }
        }
        patches
    }

    pub fn forward(&self, x: &[T], rows: usize, cols: usize) -> (Vec<T>, Conv2dCache<T>) {
        assert_eq!(x.len(), rows * cols * self.c_in(), "conv input shape");
        let co = self.c_out();
        let width = K * K * self.c_in();
        let patches = self.im2col(x, rows, cols);
        let n = rows * cols;
        let mut y = Vec::with_capacity(n * co);
        for _ in 0..n {
            y.extend_from_slice(&self.bias.data);
        }
        matmul(n, width, co, &patches, Op::N, &self.weight.data, Op::N, T::one(), &mut y);
        (y, Conv2dCache { patches, rows, cols })
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &self,
        cache: &Conv2dCache<T>,
        dy: &[T],
        grads: &mut Self,
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        let (ci, co) = (self.c_in(), self.c_out());
        let width = K * K * ci;
        let (rows, cols) = (cache.rows, cache.cols);
        let n = rows * cols;
        matmul(width, n, co, &cache.patches, Op::T, dy, Op::N, T::one(), &mut grads.weight.data);
        col_sum_into(dy, co, &mut grads.bias.data);
        if !need_input_grad {
            return None;
        }
        let mut dpatches = vec![T::zero(); n * width];
        matmul(n, co, width, dy, Op::N, &self.weight.data, Op::T, T::zero(), &mut dpatches);
        let mut dx = vec![T::zero(); n * ci];
        for r in 0..rows {
            for c in 0..cols {
                let src = &dpatches[(r * cols + c) * width..(r * cols + c + 1) * width];
                for kr in 0..K {
                    let rr = r as isize + kr as isize - 1;
                    if rr < 0 || rr >= rows as isize {
                        continue;
                    }
                    for kc in 0..K {
                        let cc = c as isize + kc as isize - 1;
                        if cc < 0 || cc >= cols as isize {
                            continue;
                        }
                        let dst = (rr as usize * cols + cc as usize) * ci;
                        let off = (kr * K + kc) * ci;
                        for j in 0..ci {
                            dx[dst + j] += src[off + j];
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

impl<T: Real> Params<T> for Conv2d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
