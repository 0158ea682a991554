use rand::Rng;

use super::{act::sigmoid, add_assign, col_sum_into, join, matmul, Op, Params, Real, Tensor};

/// Single-direction LSTM over a batch of equal-length sequences.
///
/// Input is time-major `[steps][batch][input]`; gate order is `i, f, g, o`.
/// `w_ih` is `input x 4H`, `w_hh` is `H x 4H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    input: Vec<T>,
    /// Activated gates, `[steps][batch][4H]`.
    gates: Vec<T>,
    cells: Vec<T>,
    hidden: Vec<T>,
    steps: usize,
    batch: usize,
    reverse: bool,
}

impl<T: Real> Lstm<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Tensor::uniform(&[input, 4 * hidden], bound, rng),
            w_hh: Tensor::uniform(&[hidden, 4 * hidden], bound, rng),
            bias: Tensor::uniform(&[4 * hidden], bound, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[input, 4 * hidden]),
            w_hh: Tensor::zeros(&[hidden, 4 * hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape[0]
    }

    /// Runs the recurrence; `reverse` scans from the last step to the first.
    /// Output hidden states are returned in original step order.
    pub fn forward(&self, x: Vec<T>, steps: usize, batch: usize, reverse: bool) -> (Vec<T>, LstmCache<T>) {
        let (din, h) = (self.input_dim(), self.hidden_dim());
        let g4 = 4 * h;
        assert_eq!(x.len(), steps * batch * din, "lstm input shape");
        let rows = steps * batch;
        let mut gates = Vec::with_capacity(rows * g4);
        for _ in 0..rows {
            gates.extend_from_slice(&self.bias.data);
        }
        matmul(rows, din, g4, &x, Op::N, &self.w_ih.data, Op::N, T::one(), &mut gates);
        let mut cells = vec![T::zero(); rows * h];
        let mut hidden = vec![T::zero(); rows * h];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        let mut prev: Option<usize> = None;
        for &t in &order {
            let gs = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            if let Some(p) = prev {
                let hp = &hidden[p * batch * h..(p + 1) * batch * h];
                matmul(batch, h, g4, hp, Op::N, &self.w_hh.data, Op::N, T::one(), gs);
            }
            for b in 0..batch {
                let g = &mut gs[b * g4..(b + 1) * g4];
                let (ifo, rest) = g.split_at_mut(2 * h);
                let (cand, out_gate) = rest.split_at_mut(h);
                ifo.iter_mut().chain(out_gate.iter_mut()).for_each(|v| *v = sigmoid(*v));
                cand.iter_mut().for_each(|v| *v = v.tanh_act());
                let base = (t * batch + b) * h;
                for j in 0..h {
                    let c_prev = match prev {
                        Some(p) => cells[(p * batch + b) * h + j],
                        None => T::zero(),
                    };
                    let c = g[h + j] * c_prev + g[j] * g[2 * h + j];
                    cells[base + j] = c;
                    hidden[base + j] = g[3 * h + j] * c.tanh_act();
                }
            }
            prev = Some(t);
        }
        let out = hidden.clone();
        (
            out,
            LstmCache {
                input: x,
                gates,
                cells,
                hidden,
                steps,
                batch,
                reverse,
            },
        )
    }

    pub fn backward(&self, cache: &LstmCache<T>, dh_out: &[T], grads: &mut Self) -> Vec<T> {
        let (din, h) = (self.input_dim(), self.hidden_dim());
        let g4 = 4 * h;
        let (steps, batch) = (cache.steps, cache.batch);
        let rows = steps * batch;
        let mut dpre = vec![T::zero(); rows * g4];
        let mut dh_next = vec![T::zero(); batch * h];
        let mut dc_next = vec![T::zero(); batch * h];
        // processing order reversed
        let order: Vec<usize> = if cache.reverse {
            (0..steps).collect()
        } else {
            (0..steps).rev().collect()
        };
        let prev_of = |t: usize| -> Option<usize> {
            if cache.reverse {
                (t + 1 < steps).then_some(t + 1)
            } else {
                t.checked_sub(1)
            }
        };
        for &t in &order {
            let prev = prev_of(t);
            for b in 0..batch {
                let g = &cache.gates[(t * batch + b) * g4..(t * batch + b + 1) * g4];
                let dp = &mut dpre[(t * batch + b) * g4..(t * batch + b + 1) * g4];
                let base = (t * batch + b) * h;
                for j in 0..h {
                    let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let c = cache.cells[base + j];
                    let tc = c.tanh_act();
                    let dh = dh_out[base + j] + dh_next[b * h + j];
                    let d_o = dh * tc;
                    let dc = dc_next[b * h + j] + dh * o * (T::one() - tc * tc);
                    let c_prev = match prev {
                        Some(p) => cache.cells[(p * batch + b) * h + j],
                        None => T::zero(),
                    };
                    dp[j] = dc * gg * i * (T::one() - i);
                    dp[h + j] = dc * c_prev * f * (T::one() - f);
                    dp[2 * h + j] = dc * i * (T::one() - gg * gg);
                    dp[3 * h + j] = d_o * o * (T::one() - o);
                    dc_next[b * h + j] = dc * f;
                }
            }
            if prev.is_some() {
                let dp = &dpre[t * batch * g4..(t + 1) * batch * g4];
                matmul(batch, g4, h, dp, Op::N, &self.w_hh.data, Op::T, T::zero(), &mut dh_next);
            }
        }
        // dW_hh = sum_t h_prev(t)^T dpre(t), with h_prev shifted one step
        if steps > 1 {
            let span = (steps - 1) * batch;
            let (hp, dp) = if cache.reverse {
                (&cache.hidden[batch * h..], &dpre[..span * g4])
            } else {
                (&cache.hidden[..span * h], &dpre[batch * g4..])
            };
            matmul(h, span, g4, hp, Op::T, dp, Op::N, T::one(), &mut grads.w_hh.data);
        }
        matmul(din, rows, g4, &cache.input, Op::T, &dpre, Op::N, T::one(), &mut grads.w_ih.data);
        col_sum_into(&dpre, g4, &mut grads.bias.data);
        let mut dx = vec![T::zero(); rows * din];
        matmul(rows, g4, din, &dpre, Op::N, &self.w_ih.data, Op::T, T::zero(), &mut dx);
        dx
    }
}

impl<T: Real> Params<T> for Lstm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "w_ih"), &self.w_ih);
        f(join(prefix, "w_hh"), &self.w_hh);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "w_ih"), &mut self.w_ih);
        f(join(prefix, "w_hh"), &mut self.w_hh);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Bidirectional LSTM; output is `[steps][batch][2H]` (forward then backward).
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm<T> {
    pub fwd: Lstm<T>,
    pub bwd: Lstm<T>,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<T> {
    fwd: LstmCache<T>,
    bwd: LstmCache<T>,
}

impl<T: Real> BiLstm<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let fwd = Lstm::new(input, hidden, rng);
        let bwd = Lstm::new(input, hidden, rng);
        Self { fwd, bwd }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            fwd: Lstm::zeros(input, hidden),
            bwd: Lstm::zeros(input, hidden),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim()
    }

    pub fn forward(&self, x: Vec<T>, steps: usize, batch: usize) -> (Vec<T>, BiLstmCache<T>) {
        let h = self.hidden_dim();
        let (hf, cf) = self.fwd.forward(x.clone(), steps, batch, false);
        let (hb, cb) = self.bwd.forward(x, steps, batch, true);
        let mut out = Vec::with_capacity(steps * batch * 2 * h);
        for (a, b) in hf.chunks_exact(h).zip(hb.chunks_exact(h)) {
            out.extend_from_slice(a);
            out.extend_from_slice(b);
        }
        (out, BiLstmCache { fwd: cf, bwd: cb })
    }

    pub fn backward(&self, cache: &BiLstmCache<T>, dout: &[T], grads: &mut Self) -> Vec<T> {
        let h = self.hidden_dim();
        let rows = dout.len() / (2 * h);
        let mut df = Vec::with_capacity(rows * h);
        let mut db = Vec::with_capacity(rows * h);
        for r in dout.chunks_exact(2 * h) {
            df.extend_from_slice(&r[..h]);
            db.extend_from_slice(&r[h..]);
        }
        let mut dx = self.fwd.backward(&cache.fwd, &df, &mut grads.fwd);
        add_assign(&mut dx, &self.bwd.backward(&cache.bwd, &db, &mut grads.bwd));
        dx
    }
}

impl<T: Real> Params<T> for BiLstm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.fwd.visit_mut(&join(prefix, "fwd"), f);
        self.bwd.visit_mut(&join(prefix, "bwd"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::{dot, rel_err};
    use crate::seed;
    use rand::Rng;

    /// Scalar single-sequence reference recurrence.
    fn reference(l: &Lstm<f64>, x: &[f64], steps: usize, reverse: bool) -> Vec<f64> {
        let (din, h) = (l.input_dim(), l.hidden_dim());
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut out = vec![0.0; steps * h];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let mut pre = l.bias.data.clone();
            for k in 0..4 * h {
                for i in 0..din {
                    pre[k] += x[t * din + i] * l.w_ih.data[i * 4 * h + k];
                }
                for j in 0..h {
                    pre[k] += hs[j] * l.w_hh.data[j * 4 * h + k];
                }
            }
            for j in 0..h {
                let (i, f, g, o) = (sig(pre[j]), sig(pre[h + j]), pre[2 * h + j].tanh(), sig(pre[3 * h + j]));
                cs[j] = f * cs[j] + i * g;
                hs[j] = o * cs[j].tanh();
            }
            out[t * h..(t + 1) * h].copy_from_slice(&hs);
        }
        out
    }

    #[test]
    fn batched_matches_reference_per_sequence() {
        let mut rng = seed::rng(2, &[]);
        let l: Lstm<f64> = Lstm::new(3, 4, &mut rng);
        let (steps, batch) = (5, 2);
        let x: Vec<f64> = (0..steps * batch * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for reverse in [false, true] {
            let (out, _) = l.forward(x.clone(), steps, batch, reverse);
            for b in 0..batch {
                let seq: Vec<f64> = (0..steps)
                    .flat_map(|t| x[(t * batch + b) * 3..(t * batch + b + 1) * 3].to_vec())
                    .collect();
                let want = reference(&l, &seq, steps, reverse);
                for t in 0..steps {
                    for j in 0..4 {
                        assert!((out[(t * batch + b) * 4 + j] - want[t * 4 + j]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        let mut rng = seed::rng(3, &[]);
        let l: BiLstm<f64> = BiLstm::new(3, 4, &mut rng);
        let (steps, batch) = (6, 3);
        let x: Vec<f64> = (0..steps * batch * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..steps * batch * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = l.forward(x.clone(), steps, batch);
        let mut grads = BiLstm::zeros(3, 4);
        let dx = l.backward(&cache, &g, &mut grads);
        let obj = |m: &BiLstm<f64>, x: &[f64]| dot(&m.forward(x.to_vec(), steps, batch).0, &g);
        let h = 1e-6;
        for idx in [0, 13, 29, 53] {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[idx] += h;
            m[idx] -= h;
            let fd = (obj(&l, &p) - obj(&l, &m)) / (2.0 * h);
            assert!(rel_err(dx[idx], fd) < 1e-6, "dx[{idx}] {} vs {fd}", dx[idx]);
        }
        let analytic = grads.flatten();
        let base = l.flatten();
        for idx in (0..base.len()).step_by(17) {
            let (mut p, mut m) = (l.clone(), l.clone());
            let mut fp = base.clone();
            fp[idx] += h;
            p.load_flat(&fp);
            let mut fm = base.clone();
            fm[idx] -= h;
            m.load_flat(&fm);
            let fd = (obj(&p, &x) - obj(&m, &x)) / (2.0 * h);
            assert!(
                rel_err(analytic[idx], fd) < 1e-6 || (analytic[idx] - fd).abs() < 1e-9,
                "param {idx}: {} vs {fd}",
                analytic[idx]
            );
        }
    }
}
