use rand::Rng;

use super::deg::{DegCache, DistanceEmbedder};
use super::tf::{swap_outer, TfTensor};
use crate::error::{Error, Result};
use crate::nn::{
    gelu, gelu_grad, join, BiLstm, BiLstmCache, LayerNorm, Linear, LinearCache, NormCache, Params,
    Real, Tensor,
};

/// Axis the recurrent layer scans; the other axis is folded into the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanAxis {
    /// Per-subband scan over frames, shared across frequency bins.
    Time,
    /// Per-frame scan over frequency bins, shared across frames.
    Freq,
}

/// LN -> BiLSTM -> Linear(2H -> D) -> GELU, added back onto the input.
/// With a distance token, the token is appended at the end of the scanned
/// axis and dropped again before the projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModule<T> {
    pub norm: LayerNorm<T>,
    pub rnn: BiLstm<T>,
    pub proj: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct FusionCache<T> {
    axis: ScanAxis,
    steps: usize,
    batch: usize,
    with_token: bool,
    norm: NormCache<T>,
    rnn: BiLstmCache<T>,
    proj: LinearCache<T>,
    pre_act: Vec<T>,
}

impl<T: Real> FusionModule<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            norm: LayerNorm::new(dim),
            rnn: BiLstm::new(dim, hidden, rng),
            proj: Linear::new(2 * hidden, dim, rng),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            norm: LayerNorm::zeros(dim),
            rnn: BiLstm::zeros(dim, hidden),
            proj: Linear::zeros(2 * hidden, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.norm.dim()
    }

    /// `token`, when present, has length `dim` and is replicated over the batch axis.
    pub fn forward(
        &self,
        h: &TfTensor<T>,
        token: Option<&[T]>,
        axis: ScanAxis,
    ) -> Result<(TfTensor<T>, FusionCache<T>)> {
        let d = self.dim();
        if h.channels != d {
            return Err(Error::Shape(format!("fusion expects {d} channels, got {}", h.channels)));
        }
        if let Some(tok) = token {
            if tok.len() != d {
                return Err(Error::Shape(format!("distance embedding has {} dims, expected {d}", tok.len())));
            }
        }
        let (steps, batch) = match axis {
            ScanAxis::Time => (h.frames, h.bins),
            ScanAxis::Freq => (h.bins, h.frames),
        };
        let mut seq = match axis {
            ScanAxis::Time => h.data.clone(),
            ScanAxis::Freq => swap_outer(&h.data, h.frames, h.bins, d),
        };
        if let Some(tok) = token {
            for _ in 0..batch {
                seq.extend_from_slice(tok);
            }
        }
        let total = steps + usize::from(token.is_some());
        let (z, norm) = self.norm.forward(&seq);
        drop(seq);
        let (mut o, rnn) = self.rnn.forward(z, total, batch);
        o.truncate(steps * batch * 2 * self.rnn.hidden_dim());
        let (pre_act, proj) = self.proj.forward(o);
        let act: Vec<T> = pre_act.iter().map(|&v| gelu(v)).collect();
        let act = match axis {
            ScanAxis::Time => act,
            ScanAxis::Freq => swap_outer(&act, h.bins, h.frames, d),
        };
        let data = h.data.iter().zip(&act).map(|(&a, &b)| a + b).collect();
        let cache = FusionCache {
            axis,
            steps,
            batch,
            with_token: token.is_some(),
            norm,
            rnn,
            proj,
            pre_act,
        };
        Ok((TfTensor::new(h.frames, h.bins, d, data), cache))
    }

    /// Returns the input gradient and, if a token was used, its gradient.
    pub fn backward(&self, cache: &FusionCache<T>, d_out: &[T], grads: &mut Self) -> (Vec<T>, Option<Vec<T>>) {
        let d = self.dim();
        let (steps, batch) = (cache.steps, cache.batch);
        let d_seq = match cache.axis {
            ScanAxis::Time => d_out.to_vec(),
            ScanAxis::Freq => swap_outer(d_out, batch, steps, d),
        };
        let d_pre: Vec<T> = d_seq
            .iter()
            .zip(&cache.pre_act)
            .map(|(&g, &x)| g * gelu_grad(x))
            .collect();
        let mut d_o = self.proj.backward(&cache.proj, &d_pre, &mut grads.proj);
        if cache.with_token {
            d_o.resize(d_o.len() + batch * 2 * self.rnn.hidden_dim(), T::zero());
        }
        let total = steps + usize::from(cache.with_token);
        let d_z = self.rnn.backward(&cache.rnn, &d_o, &mut grads.rnn);
        debug_assert_eq!(d_z.len(), total * batch * d);
        let d_in = self.norm.backward(&cache.norm, &d_z, &mut grads.norm);
        let body = steps * batch * d;
        let d_token = cache.with_token.then(|| {
            let mut g = vec![T::zero(); d];
            for row in d_in[body..].chunks_exact(d) {
                crate::nn::add_assign(&mut g, row);
            }
            g
        });
        let d_body = match cache.axis {
            ScanAxis::Time => d_in[..body].to_vec(),
            ScanAxis::Freq => swap_outer(&d_in[..body], steps, batch, d),
        };
        let d_h = d_out.iter().zip(&d_body).map(|(&a, &b)| a + b).collect();
        (d_h, d_token)
    }
}

impl<T: Real> Params<T> for FusionModule<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.norm.visit(&join(prefix, "norm"), f);
        self.rnn.visit(&join(prefix, "rnn"), f);
        self.proj.visit(&join(prefix, "proj"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.rnn.visit_mut(&join(prefix, "rnn"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
    }
}

/// Subband fusion followed by frame fusion. Distance-query blocks carry one
/// embedder per fusion module; temporal-spectral blocks carry none.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub subband: FusionModule<T>,
    pub frame: FusionModule<T>,
    pub embedders: Option<[DistanceEmbedder<T>; 2]>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    subband: FusionCache<T>,
    frame: FusionCache<T>,
    embedders: Option<[DegCache<T>; 2]>,
}

impl<T: Real> Block<T> {
    pub fn distance_query<R: Rng + ?Sized>(dim: usize, hidden: usize, deg: [usize; 3], rng: &mut R) -> Self {
        let subband = FusionModule::new(dim, hidden, rng);
        let frame = FusionModule::new(dim, hidden, rng);
        let embedders = [DistanceEmbedder::new(deg, rng), DistanceEmbedder::new(deg, rng)];
        Self {
            subband,
            frame,
            embedders: Some(embedders),
        }
    }

    pub fn temporal_spectral<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            subband: FusionModule::new(dim, hidden, rng),
            frame: FusionModule::new(dim, hidden, rng),
            embedders: None,
        }
    }

    /// Same structure with every parameter zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let (d, h) = (self.subband.dim(), self.subband.rnn.hidden_dim());
        let sizes = |e: &DistanceEmbedder<T>| [e.l1.fan_out(), e.l2.fan_out(), e.l3.fan_out()];
        Self {
            subband: FusionModule::zeros(d, h),
            frame: FusionModule::zeros(d, h),
            embedders: self
                .embedders
                .as_ref()
                .map(|[a, b]| [DistanceEmbedder::zeros(sizes(a)), DistanceEmbedder::zeros(sizes(b))]),
        }
    }

    pub fn is_conditioned(&self) -> bool {
        self.embedders.is_some()
    }

    /// Runs the block. Conditioned blocks require `d_q`; unconditioned blocks ignore it.
    pub fn forward(&self, h: &TfTensor<T>, d_q: Option<T>) -> Result<(TfTensor<T>, BlockCache<T>)> {
        let (tokens, deg_caches) = match (&self.embedders, d_q) {
            (Some([es, ef]), Some(d)) => {
                let (ts, cs) = es.forward(d);
                let (tf, cf) = ef.forward(d);
                (Some((ts, tf)), Some([cs, cf]))
            }
            (Some(_), None) => return Err(Error::invalid("distance-query block needs a query distance")),
            (None, _) => (None, None),
        };
        let (h1, c1) = self
            .subband
            .forward(h, tokens.as_ref().map(|t| t.0.as_slice()), ScanAxis::Time)?;
        let (h2, c2) = self
            .frame
            .forward(&h1, tokens.as_ref().map(|t| t.1.as_slice()), ScanAxis::Freq)?;
        Ok((
            h2,
            BlockCache {
                subband: c1,
                frame: c2,
                embedders: deg_caches,
            },
        ))
    }

    /// Same fusion path with the distance tokens omitted.
    pub fn forward_untokened(&self, h: &TfTensor<T>) -> Result<TfTensor<T>> {
        let (h1, _) = self.subband.forward(h, None, ScanAxis::Time)?;
        Ok(self.frame.forward(&h1, None, ScanAxis::Freq)?.0)
    }

    /// Returns the input gradient and the gradient with respect to `d_q`.
    pub fn backward(&self, cache: &BlockCache<T>, d_out: &[T], grads: &mut Self) -> (Vec<T>, T) {
        let (d_h1, tok_f) = self.frame.backward(&cache.frame, d_out, &mut grads.frame);
        let (d_h, tok_s) = self.subband.backward(&cache.subband, &d_h1, &mut grads.subband);
        let mut d_dq = T::zero();
        if let (Some([es, ef]), Some([cs, cf]), Some([gs, gf])) =
            (&self.embedders, &cache.embedders, grads.embedders.as_mut())
        {
            d_dq += es.backward(cs, &tok_s.expect("subband token gradient"), gs);
            d_dq += ef.backward(cf, &tok_f.expect("frame token gradient"), gf);
        }
        (d_h, d_dq)
    }
}

impl<T: Real> Params<T> for Block<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.subband.visit(&join(prefix, "subband"), f);
        self.frame.visit(&join(prefix, "frame"), f);
        if let Some([es, ef]) = &self.embedders {
            es.visit(&join(prefix, "subband_deg"), f);
            ef.visit(&join(prefix, "frame_deg"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.subband.visit_mut(&join(prefix, "subband"), f);
        self.frame.visit_mut(&join(prefix, "frame"), f);
        if let Some([es, ef]) = &mut self.embedders {
            es.visit_mut(&join(prefix, "subband_deg"), f);
            ef.visit_mut(&join(prefix, "frame_deg"), f);
        }
    }
}
