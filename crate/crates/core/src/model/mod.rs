//! Distance-conditioned extraction network.
//!
//! Pipeline: STFT -> RI stack -> 3x3 conv + channel norm -> distance-query
//! blocks -> temporal-spectral blocks -> 3x3 conv + sigmoid mask -> masked
//! STFT -> ISTFT. The mask is real and scales both RI parts of the mixture.

mod checkpoint;
mod deg;
mod fusion;
mod tf;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use deg::{DegCache, DistanceEmbedder};
pub use fusion::{Block, BlockCache, FusionCache, FusionModule, ScanAxis};
pub use tf::TfTensor;

use std::fmt;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{ComplexSpec, Stft, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::nn::{join, sigmoid, ChannelNorm, Conv2d, Conv2dCache, NormCache, Params, Real, Tensor};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Hidden size per LSTM direction.
    pub hidden_dim: usize,
    pub n_dq_blocks: usize,
    pub n_ts_blocks: usize,
    pub deg_layer_sizes: [usize; 3],
    pub stft: StftConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            n_dq_blocks: 4,
            n_ts_blocks: 4,
            deg_layer_sizes: [32, 64, 64],
            stft: StftConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.deg_layer_sizes.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.deg_layer_sizes[2] != self.embed_dim {
            return Err(Error::Config(format!(
                "distance embedding width {} must equal embed_dim {}",
                self.deg_layer_sizes[2], self.embed_dim
            )));
        }
        self.stft.validate()
    }
}

fn check_distance(d_q: f64) -> Result<()> {
    if d_q.is_finite() && d_q > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("query distance must be positive and finite, got {d_q}")))
    }
}

#[derive(Clone)]
pub struct TseModel<T> {
    pub config: ModelConfig,
    pub encoder: Conv2d<T>,
    pub encoder_norm: ChannelNorm<T>,
    pub dq_blocks: Vec<Block<T>>,
    pub ts_blocks: Vec<Block<T>>,
    pub decoder: Conv2d<T>,
    stft: Stft,
}

impl<T> fmt::Debug for TseModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TseModel").field("config", &self.config).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    encoder: Conv2dCache<T>,
    encoder_norm: NormCache<T>,
    blocks: Vec<BlockCache<T>>,
    decoder: Conv2dCache<T>,
}

/// Result of a training-mode forward pass; holds what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Extraction<T> {
    pub mixture_spec: ComplexSpec,
    /// `frames x bins`, each in (0, 1).
    pub mask: Vec<T>,
    pub output: Waveform,
    cache: ForwardCache<T>,
}

impl<T: Real> TseModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, &[seed::tag("model-init")]);
        let (d, h) = (config.embed_dim, config.hidden_dim);
        let encoder = Conv2d::new(2, d, &mut rng);
        let dq_blocks = (0..config.n_dq_blocks)
            .map(|_| Block::distance_query(d, h, config.deg_layer_sizes, &mut rng))
            .collect();
        let ts_blocks = (0..config.n_ts_blocks)
            .map(|_| Block::temporal_spectral(d, h, &mut rng))
            .collect();
        let decoder = Conv2d::new(d, 1, &mut rng);
        Ok(Self {
            config,
            encoder,
            encoder_norm: ChannelNorm::new(d),
            dq_blocks,
            ts_blocks,
            decoder,
            stft: Stft::new(config.stft)?,
        })
    }

    /// Structurally identical model with all parameters zero, for gradient accumulation.
    pub fn gradient_buffer(&self) -> Self {
        let d = self.config.embed_dim;
        Self {
            config: self.config,
            encoder: Conv2d::zeros(2, d),
            encoder_norm: ChannelNorm::zeros(d),
            dq_blocks: self.dq_blocks.iter().map(Block::zeros_like).collect(),
            ts_blocks: self.ts_blocks.iter().map(Block::zeros_like).collect(),
            decoder: Conv2d::zeros(d, 1),
            stft: self.stft.clone(),
        }
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn analyze(&self, y: &Waveform) -> Result<ComplexSpec> {
        if y.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input waveform contains non-finite samples"));
        }
        if y.len() < self.config.stft.frame_len {
            return Err(Error::invalid(format!(
                "input has {} samples, need at least one frame ({})",
                y.len(),
                self.config.stft.frame_len
            )));
        }
        self.stft.forward(y)
    }

    fn encode_spec(&self, spec: &ComplexSpec) -> (TfTensor<T>, Conv2dCache<T>, NormCache<T>) {
        let ri: Vec<T> = spec
            .values
            .iter()
            .flat_map(|c| [T::of(c.re), T::of(c.im)])
            .collect();
        let (z, conv) = self.encoder.forward(&ri, spec.frames, spec.bins);
        let (h, norm) = self.encoder_norm.forward(&z);
        let d = self.config.embed_dim;
        (TfTensor::new(spec.frames, spec.bins, d, h), conv, norm)
    }

    /// Waveform -> `D x T x F` embedding.
    pub fn encode(&self, y: &Waveform) -> Result<TfTensor<T>> {
        Ok(self.encode_spec(&self.analyze(y)?).0)
    }

    pub fn embed_distance(&self, block: usize, d_q: f64) -> Result<[Vec<T>; 2]> {
        check_distance(d_q)?;
        let embedders = self
            .dq_blocks
            .get(block)
            .and_then(|b| b.embedders.as_ref())
            .ok_or_else(|| Error::invalid(format!("no distance-query block {block}")))?;
        Ok([embedders[0].forward(T::of(d_q)).0, embedders[1].forward(T::of(d_q)).0])
    }

    fn decode_with_cache(&self, h: &TfTensor<T>) -> Result<(Vec<T>, Conv2dCache<T>)> {
        if h.channels != self.config.embed_dim {
            return Err(Error::shape(format!(
                "decoder expects {} channels, got {}",
                self.config.embed_dim, h.channels
            )));
        }
        let (logits, cache) = self.decoder.forward(&h.data, h.frames, h.bins);
        Ok((logits.into_iter().map(sigmoid).collect(), cache))
    }

    /// Embedding -> `T x F` mask in (0, 1).
    pub fn decode_mask(&self, h: &TfTensor<T>) -> Result<Vec<T>> {
        Ok(self.decode_with_cache(h)?.0)
    }

    fn run(&self, spec: &ComplexSpec, d_q: f64, keep: bool) -> Result<(Vec<T>, Option<ForwardCache<T>>)> {
        check_distance(d_q)?;
        let d = T::of(d_q);
        let (mut h, encoder, encoder_norm) = self.encode_spec(spec);
        let mut blocks = Vec::new();
        for block in self.dq_blocks.iter().chain(&self.ts_blocks) {
            let (next, cache) = block.forward(&h, Some(d))?;
            h = next;
            if keep {
                blocks.push(cache);
            }
        }
        let (mask, decoder) = self.decode_with_cache(&h)?;
        let cache = keep.then_some(ForwardCache {
            encoder,
            encoder_norm,
            blocks,
            decoder,
        });
        Ok((mask, cache))
    }

    /// Mixture spectrogram and estimated mask.
    pub fn mask(&self, y: &Waveform, d_q: f64) -> Result<(ComplexSpec, Vec<T>)> {
        let spec = self.analyze(y)?;
        let (mask, _) = self.run(&spec, d_q, false)?;
        Ok((spec, mask))
    }

    /// Inference: extract the speech of the speaker(s) within `d_q` meters.
    pub fn forward(&self, y: &Waveform, d_q: f64) -> Result<Waveform> {
        let (spec, mask) = self.mask(y, d_q)?;
        self.stft.inverse(&apply_mask(&spec, &mask), y.len())
    }

    /// Forward pass that keeps activations for [`TseModel::backward`].
    pub fn forward_train(&self, y: &Waveform, d_q: f64) -> Result<Extraction<T>> {
        let spec = self.analyze(y)?;
        let (mask, cache) = self.run(&spec, d_q, true)?;
        let output = self.stft.inverse(&apply_mask(&spec, &mask), y.len())?;
        Ok(Extraction {
            mixture_spec: spec,
            mask,
            output,
            cache: cache.expect("cache kept"),
        })
    }

    /// Accumulates parameter gradients of a scalar objective into `grads`
    /// given its gradient with respect to the output waveform. Returns the
    /// gradient with respect to the query distance.
    pub fn backward(&self, ex: &Extraction<T>, d_output: &[f64], grads: &mut Self) -> Result<f64> {
        let spec = &ex.mixture_spec;
        let (d_re, d_im) = self.stft.inverse_adjoint(d_output, spec.frames)?;
        let d_logits: Vec<T> = spec
            .values
            .iter()
            .zip(d_re.iter().zip(&d_im))
            .zip(&ex.mask)
            .map(|((y, (gr, gi)), &m)| T::of(gr * y.re + gi * y.im) * m * (T::one() - m))
            .collect();
        let cache = &ex.cache;
        let mut d_h = self
            .decoder
            .backward(&cache.decoder, &d_logits, &mut grads.decoder, true)
            .expect("input gradient requested");
        let mut d_dq = T::zero();
        let n_dq = self.dq_blocks.len();
        let blocks: Vec<(&Block<T>, &mut Block<T>)> = self
            .dq_blocks
            .iter()
            .chain(&self.ts_blocks)
            .zip(grads.dq_blocks.iter_mut().chain(grads.ts_blocks.iter_mut()))
            .collect();
        debug_assert_eq!(blocks.len(), cache.blocks.len());
        for (i, (block, g)) in blocks.into_iter().enumerate().rev() {
            let (next, dd) = block.backward(&cache.blocks[i], &d_h, g);
            d_h = next;
            if i < n_dq {
                d_dq += dd;
            }
        }
        let d_z = self.encoder_norm.backward(&cache.encoder_norm, &d_h, &mut grads.encoder_norm);
        self.encoder.backward(&cache.encoder, &d_z, &mut grads.encoder, false);
        Ok(d_dq.f64())
    }
}

impl<T: Real> Params<T> for TseModel<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.encoder.visit(&join(prefix, "encoder.conv"), f);
        self.encoder_norm.visit(&join(prefix, "encoder.norm"), f);
        for (i, b) in self.dq_blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("dq.{i}")), f);
        }
        for (i, b) in self.ts_blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("ts.{i}")), f);
        }
        self.decoder.visit(&join(prefix, "decoder.conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.encoder.visit_mut(&join(prefix, "encoder.conv"), f);
        self.encoder_norm.visit_mut(&join(prefix, "encoder.norm"), f);
        for (i, b) in self.dq_blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("dq.{i}")), f);
        }
        for (i, b) in self.ts_blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("ts.{i}")), f);
        }
        self.decoder.visit_mut(&join(prefix, "decoder.conv"), f);
    }
}

/// Scale both RI parts of every bin by the mask.
pub fn apply_mask<T: Real>(spec: &ComplexSpec, mask: &[T]) -> ComplexSpec {
    assert_eq!(mask.len(), spec.values.len(), "mask shape");
    ComplexSpec {
        values: spec
            .values
            .iter()
            .zip(mask)
            .map(|(v, &m)| Complex64::new(v.re * m.f64(), v.im * m.f64()))
            .collect(),
        ..spec.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::istft;
    use rand::Rng as _;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            hidden_dim: 3,
            n_dq_blocks: 1,
            n_ts_blocks: 1,
            deg_layer_sizes: [4, 4, 4],
            stft: StftConfig {
                frame_len: 64,
                hop_len: 32,
                fft_size: 64,
                ..StftConfig::default()
            },
        }
    }

    fn noise(n: usize, s: u64) -> Waveform {
        let mut rng = seed::rng(s, &[]);
        Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000).unwrap()
    }

    #[test]
    fn default_parameter_count_near_reported_size() {
        let m = TseModel::<f32>::new(ModelConfig::default(), 0).unwrap();
        let n = m.param_count();
        assert_eq!(n, 1_243_521);
        assert!((n as f64 - 1.25e6).abs() / 1.25e6 < 0.1);
    }

    #[test]
    fn encoder_shapes_follow_frame_count() {
        let cfg = ModelConfig {
            n_dq_blocks: 0,
            n_ts_blocks: 0,
            ..ModelConfig::default()
        };
        let m = TseModel::<f32>::new(cfg, 0).unwrap();
        assert_eq!(m.encode(&noise(16_000, 1)).unwrap().shape(), (64, 63, 257));
        assert_eq!(m.encode(&noise(32_000, 1)).unwrap().shape(), (64, 126, 257));
        assert!(m.encode(&noise(100, 1)).is_err());
        let z = Waveform::zeros(16_000, 16_000);
        assert_eq!(m.encode(&z).unwrap(), m.encode(&z).unwrap());
    }

    #[test]
    fn decoder_range_and_neutral_point() {
        let mut m = TseModel::<f64>::new(tiny(), 2).unwrap();
        let h = TfTensor::new(5, 33, 4, (0..5 * 33 * 4).map(|i| (i as f64 * 0.37).sin() * 30.0).collect());
        let mask = m.decode_mask(&h).unwrap();
        assert_eq!(mask.len(), 5 * 33);
        assert!(mask.iter().all(|&v| v > 0.0 && v < 1.0));
        m.decoder.bias.fill(0.0);
        let zero = m.decode_mask(&TfTensor::zeros(5, 33, 4)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forced_unit_mask_reconstructs_input() {
        let m = TseModel::<f64>::new(tiny(), 3).unwrap();
        let y = noise(4_000, 4);
        let spec = m.analyze(&y).unwrap();
        let ones = vec![1.0f64; spec.values.len()];
        let out = istft(&apply_mask(&spec, &ones), y.len()).unwrap();
        let err: f64 = out.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(10.0 * (err / y.energy()).log10() < -60.0);
    }

    #[test]
    fn forward_is_deterministic_contractive_and_length_preserving() {
        let m = TseModel::<f64>::new(tiny(), 5).unwrap();
        let y = noise(3_001, 6);
        let a = m.forward(&y, 1.5).unwrap();
        assert_eq!(a.len(), y.len());
        assert_eq!(a, m.forward(&y, 1.5).unwrap());
        let (spec, mask) = m.mask(&y, 1.5).unwrap();
        let masked = apply_mask(&spec, &mask);
        for (o, i) in masked.values.iter().zip(&spec.values) {
            assert!(o.norm() <= i.norm());
        }
        let full = istft(&spec, y.len()).unwrap();
        assert!(a.energy().sqrt() <= full.energy().sqrt() * (1.0 + 1e-6));
        assert!(m.forward(&y, 0.0).is_err());
        assert!(m.forward(&y, f64::NAN).is_err());
    }

    /// Gradients of `<w, forward(y, d_q)>` against central differences.
    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut cfg = tiny();
        cfg.stft = StftConfig::default();
        cfg.embed_dim = 3;
        cfg.hidden_dim = 2;
        cfg.deg_layer_sizes = [3, 3, 3];
        let m = TseModel::<f64>::new(cfg, 7).unwrap();
        let y = noise(1_024, 8);
        let w = noise(1_024, 9).samples;
        let objective = |m: &TseModel<f64>, d: f64| {
            m.forward(&y, d).unwrap().samples.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let d_q = 2.0;
        let ex = m.forward_train(&y, d_q).unwrap();
        let mut grads = m.gradient_buffer();
        let d_dq = m.backward(&ex, &w, &mut grads).unwrap();
        let eps = 1e-6;
        let fd = (objective(&m, d_q + eps) - objective(&m, d_q - eps)) / (2.0 * eps);
        assert!((d_dq - fd).abs() <= 1e-4 * fd.abs().max(1e-4), "{d_dq} vs {fd}");

        let flat = m.flatten();
        let g = grads.flatten();
        let mut probe = m.clone();
        for i in (0..flat.len()).step_by(11) {
            let mut p = flat.clone();
            p[i] += eps;
            probe.load_flat(&p);
            let up = objective(&probe, d_q);
            p[i] -= 2.0 * eps;
            probe.load_flat(&p);
            let down = objective(&probe, d_q);
            let fd = (up - down) / (2.0 * eps);
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-4), "param {i}: {} vs {fd}", g[i]);
        }
    }
}
