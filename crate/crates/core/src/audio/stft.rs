use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Envelope values below this are treated as uncovered samples in the ISTFT.
const ENVELOPE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Periodic square-root Hann, used for both analysis and synthesis.
    SqrtHann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..len)
                .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).sqrt())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop_len: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl Default for StftConfig {
    /// 32 ms frames with a 16 ms shift at 16 kHz.
    fn default() -> Self {
        Self {
            frame_len: (SAMPLE_RATE as usize) * 32 / 1000,
            hop_len: (SAMPLE_RATE as usize) * 16 / 1000,
            fft_size: 512,
            window: Window::SqrtHann,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Centered padding adds `frame_len / 2` on both ends, so the frame count
    /// is `1 + floor(n / hop)` for even frame lengths.
    pub fn frames_for(&self, n: usize) -> usize {
        let pad = self.frame_len / 2;
        1 + (n + 2 * pad - self.frame_len) / self.hop_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_len == 0 || self.hop_len > self.frame_len || self.frame_len > self.fft_size {
            return Err(Error::invalid(format!(
                "need 0 < hop ({}) <= frame ({}) <= fft ({})",
                self.hop_len, self.frame_len, self.fft_size
            )));
        }
        if self.frame_len % 2 != 0 {
            return Err(Error::invalid("frame length must be even"));
        }
        // Overlap-added squared window must be constant.
        let w = self.window.coefficients(self.frame_len);
        let sums: Vec<f64> = (0..self.hop_len)
            .map(|n| w.iter().skip(n).step_by(self.hop_len).map(|x| x * x).sum())
            .collect();
        let (lo, hi) = sums
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if hi - lo > 1e-9 * hi.max(1.0) {
            return Err(Error::invalid(format!(
                "window fails the COLA condition at hop {} (envelope {lo:.6}..{hi:.6})",
                self.hop_len
            )));
        }
        Ok(())
    }
}

/// Complex spectrogram, row-major `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpec {
    pub values: Vec<Complex64>,
    pub frames: usize,
    pub bins: usize,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl ComplexSpec {
    pub fn zeros(frames: usize, config: StftConfig) -> Self {
        let bins = config.bins();
        Self {
            values: vec![Complex64::new(0.0, 0.0); frames * bins],
            frames,
            bins,
            config,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        self.values[t * self.bins + f]
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Reusable STFT processor with planned FFTs.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window.coefficients(config.frame_len),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    fn pad(&self) -> usize {
        self.config.frame_len / 2
    }

    pub fn forward(&self, w: &Waveform) -> Result<ComplexSpec> {
        self.forward_samples(&w.samples, w.sample_rate)
    }

    pub fn forward_samples(&self, x: &[f64], sample_rate: u32) -> Result<ComplexSpec> {
        if x.is_empty() {
            return Err(Error::invalid("cannot transform an empty waveform"));
        }
        let c = &self.config;
        let n = x.len();
        let pad = self.pad() as isize;
        let frames = c.frames_for(n);
        let bins = c.bins();
        let mut values = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); c.fft_size];
        for t in 0..frames {
            let start = (t * c.hop_len) as isize - pad;
            for (m, slot) in buf.iter_mut().enumerate() {
                *slot = if m < c.frame_len {
                    Complex64::new(x[reflect(start + m as isize, n)] * self.window[m], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.forward.process(&mut buf);
            values.extend_from_slice(&buf[..bins]);
        }
        Ok(ComplexSpec {
            values,
            frames,
            bins,
            config: *c,
            sample_rate,
        })
    }

    fn check_frames(&self, s: &ComplexSpec, out_len: usize) -> Result<()> {
        if s.bins != self.config.bins() || s.values.len() != s.frames * s.bins {
            return Err(Error::shape(format!(
                "spectrogram {}x{} does not match config with {} bins",
                s.frames,
                s.bins,
                self.config.bins()
            )));
        }
        let expected = self.config.frames_for(out_len) as i64;
        if out_len == 0 || (expected - s.frames as i64).abs() > 1 {
            return Err(Error::invalid(format!(
                "output length {out_len} implies {expected} frames, spectrogram has {}",
                s.frames
            )));
        }
        Ok(())
    }

    /// Squared-window overlap-add envelope over the padded signal.
    fn envelope(&self, frames: usize, padded_len: usize) -> Vec<f64> {
        let c = &self.config;
        let mut env = vec![0.0; padded_len];
        for t in 0..frames {
            let start = t * c.hop_len;
            for m in 0..c.frame_len {
                if let Some(e) = env.get_mut(start + m) {
                    *e += self.window[m] * self.window[m];
                }
            }
        }
        env
    }

    pub fn inverse(&self, s: &ComplexSpec, out_len: usize) -> Result<Waveform> {
        self.check_frames(s, out_len)?;
        let c = &self.config;
        let pad = self.pad();
        let padded_len = out_len + 2 * pad;
        let mut acc = vec![0.0; padded_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); c.fft_size];
        let scale = 1.0 / c.fft_size as f64;
        for t in 0..s.frames {
            let row = &s.values[t * s.bins..(t + 1) * s.bins];
            buf[..s.bins].copy_from_slice(row);
            // Hermitian completion; imaginary parts of DC and Nyquist are dropped.
            buf[0].im = 0.0;
            buf[c.fft_size / 2].im = 0.0;
            for k in 1..c.fft_size / 2 {
                buf[c.fft_size - k] = row[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * c.hop_len;
            for m in 0..c.frame_len {
                if let Some(a) = acc.get_mut(start + m) {
                    *a += buf[m].re * scale * self.window[m];
                }
            }
        }
        let env = self.envelope(s.frames, padded_len);
        let samples = (0..out_len)
            .map(|i| {
                let e = env[i + pad];
                if e > ENVELOPE_FLOOR {
                    acc[i + pad] / e
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Waveform {
            samples,
            sample_rate: s.sample_rate,
        })
    }

    /// Adjoint of [`Stft::inverse`] with respect to the real and imaginary
    /// parts of the spectrogram: maps a gradient on the output waveform to
    /// gradients on `Re(S)` and `Im(S)` (each `frames x bins`).
    pub fn inverse_adjoint(&self, grad: &[f64], frames: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = &self.config;
        let out_len = grad.len();
        let expected = c.frames_for(out_len) as i64;
        if out_len == 0 || (expected - frames as i64).abs() > 1 {
            return Err(Error::invalid("gradient length inconsistent with frame count"));
        }
        let pad = self.pad();
        let padded_len = out_len + 2 * pad;
        let env = self.envelope(frames, padded_len);
        let mut gp = vec![0.0; padded_len];
        for i in 0..out_len {
            let e = env[i + pad];
            if e > ENVELOPE_FLOOR {
                gp[i + pad] = grad[i] / e;
            }
        }
        let bins = c.bins();
        let n = c.fft_size as f64;
        let mut d_re = vec![0.0; frames * bins];
        let mut d_im = vec![0.0; frames * bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); c.fft_size];
        for t in 0..frames {
            let start = t * c.hop_len;
            for (m, slot) in buf.iter_mut().enumerate() {
                let v = if m < c.frame_len {
                    gp.get(start + m).copied().unwrap_or(0.0) * self.window[m]
                } else {
                    0.0
                };
                *slot = Complex64::new(v, 0.0);
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                let edge = k == 0 || k == c.fft_size / 2;
                let w = if edge { 1.0 } else { 2.0 } / n;
                d_re[t * bins + k] = w * buf[k].re;
                d_im[t * bins + k] = if edge { 0.0 } else { w * buf[k].im };
            }
        }
        Ok((d_re, d_im))
    }
}

pub fn stft(w: &Waveform, c: &StftConfig) -> Result<ComplexSpec> {
    Stft::new(*c)?.forward(w)
}

pub fn istft(s: &ComplexSpec, out_len: usize) -> Result<Waveform> {
    Stft::new(s.config)?.inverse(s, out_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000).unwrap()
    }

    /// Direct O(N^2) DFT of one windowed frame.
    fn dft_frame(x: &[f64], fft: usize) -> Vec<Complex64> {
        (0..fft / 2 + 1)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(n, &v)| {
                        let ph = -2.0 * PI * (k * n) as f64 / fft as f64;
                        Complex64::new(v * ph.cos(), v * ph.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn frame_count_for_one_second() {
        let c = StftConfig::default();
        assert_eq!((c.frame_len, c.hop_len, c.fft_size), (512, 256, 512));
        let s = stft(&noise(16_000, 1), &c).unwrap();
        assert_eq!((s.frames, s.bins), (63, 257));
        assert_eq!(c.frames_for(32_000), 126);
    }

    #[test]
    fn matches_reference_dft() {
        let c = StftConfig::default();
        let w = noise(4000, 2);
        let s = stft(&w, &c).unwrap();
        let win = Window::SqrtHann.coefficients(512);
        let t = 5;
        let frame: Vec<f64> = (0..512)
            .map(|m| w.samples[t * 256 + m - 256] * win[m])
            .collect();
        let reference = dft_frame(&frame, 512);
        for (k, r) in reference.iter().enumerate() {
            assert!((s.at(t, k) - r).norm() < 1e-9, "bin {k}");
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let c = StftConfig::default();
        let z = Waveform::zeros(3000, 16_000);
        let s = stft(&z, &c).unwrap();
        assert!(s.values.iter().all(|v| v.norm() == 0.0));
        let back = istft(&ComplexSpec::zeros(s.frames, c), 3000).unwrap();
        assert!(back.is_silent());
    }

    #[test]
    fn bin_centered_cosine_concentrates() {
        let c = StftConfig::default();
        let k0 = 40;
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * PI * k0 as f64 * n as f64 / 512.0).cos())
            .collect();
        let s = stft(&Waveform::new(x, 16_000).unwrap(), &c).unwrap();
        let t = s.frames / 2;
        let total: f64 = (0..s.bins).map(|f| s.at(t, f).norm_sqr()).sum();
        let near: f64 = (k0 - 1..=k0 + 1).map(|f| s.at(t, f).norm_sqr()).sum();
        assert!(near / total >= 0.99, "{}", near / total);
    }

    #[test]
    fn round_trip_reconstruction() {
        let c = StftConfig::default();
        for (n, seed) in [(16_000, 3), (4001, 4), (300, 5)] {
            let w = noise(n, seed);
            let back = istft(&stft(&w, &c).unwrap(), n).unwrap();
            let err: f64 = w
                .samples
                .iter()
                .zip(&back.samples)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let rel_db = 10.0 * (err / w.energy()).log10();
            assert!(rel_db <= -60.0, "n={n}: {rel_db} dB");
        }
    }

    #[test]
    fn linearity_and_scaling() {
        let c = StftConfig::default();
        let a = noise(2000, 6);
        let b = noise(2000, 7);
        let sum = Waveform::new(
            a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(),
            16_000,
        )
        .unwrap();
        let (sa, sb, ss) = (
            stft(&a, &c).unwrap(),
            stft(&b, &c).unwrap(),
            stft(&sum, &c).unwrap(),
        );
        for i in 0..ss.values.len() {
            assert!((ss.values[i] - sa.values[i] - sb.values[i]).norm() < 1e-12);
        }
        let x = istft(&sa.scaled(2.5), 2000).unwrap();
        let y = istft(&sa, 2000).unwrap();
        for (p, q) in x.samples.iter().zip(&y.samples) {
            assert!((p - 2.5 * q).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_with_cola_window() {
        // sqrt-Hann at 50% overlap: sum_t |X_t|^2 = fft_size * ||w||^2
        let c = StftConfig::default();
        let w = noise(16_000, 8);
        let s = stft(&w, &c).unwrap();
        let mut spec_energy = 0.0;
        for t in 0..s.frames {
            for f in 0..s.bins {
                let e = s.at(t, f).norm_sqr();
                spec_energy += if f == 0 || f == s.bins - 1 { e } else { 2.0 * e };
            }
        }
        let ratio = spec_energy / c.fft_size as f64 / w.energy();
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn inconsistent_length_rejected() {
        let c = StftConfig::default();
        let s = stft(&noise(16_000, 9), &c).unwrap();
        assert!(istft(&s, 8000).is_err());
        assert!(stft(&Waveform::zeros(0, 16_000), &c).is_err());
    }

    #[test]
    fn adjoint_matches_inner_product() {
        // <istft(S), g> == <Re S, adj_re(g)> + <Im S, adj_im(g)>
        let c = StftConfig::default();
        let proc = Stft::new(c).unwrap();
        let n = 3000;
        let frames = c.frames_for(n);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut s = ComplexSpec::zeros(frames, c);
        for v in s.values.iter_mut() {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = proc.inverse(&s, n).unwrap();
        let lhs: f64 = x.samples.iter().zip(&g).map(|(a, b)| a * b).sum();
        let (dr, di) = proc.inverse_adjoint(&g, frames).unwrap();
        let rhs: f64 = s
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v.re * dr[i] + v.im * di[i])
            .sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
