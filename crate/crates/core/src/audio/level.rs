use rand::Rng;

use super::Waveform;
use crate::error::{Error, Result};

pub fn rms(w: &Waveform) -> f64 {
    (w.energy() / w.len().max(1) as f64).sqrt()
}

/// RMS level in dBFS, `20 log10(rms)`.
pub fn rms_db(w: &Waveform) -> f64 {
    20.0 * rms(w).log10()
}

/// Scale `w` so its RMS level is exactly `target_db` dBFS.
pub fn scale_to_db(w: &Waveform, target_db: f64) -> Result<Waveform> {
    let r = rms(w);
    if !(r > 0.0) {
        return Err(Error::invalid("cannot level-scale a silent waveform"));
    }
    Ok(w.scaled(10f64.powf(target_db / 20.0) / r))
}

/// Scale `w` to an RMS level drawn uniformly from `[lo, hi]` dBFS.
pub fn rms_scale<R: Rng + ?Sized>(w: &Waveform, range: (f64, f64), rng: &mut R) -> Result<Waveform> {
    let (lo, hi) = range;
    if !(lo <= hi) {
        return Err(Error::invalid(format!("empty level range [{lo}, {hi}]")));
    }
    let target = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    scale_to_db(w, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn gain_from_known_rms() {
        let w = Waveform::new(vec![0.5, -0.5, 0.5, -0.5], 16_000).unwrap();
        let out = scale_to_db(&w, -20.0).unwrap();
        assert!((rms(&out) - 0.1).abs() < 1e-12);
        assert!((out.samples[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn identity_when_already_at_target() {
        let g = 10f64.powf(-22.0 / 20.0);
        let w = Waveform::new(vec![g, -g, g], 16_000).unwrap();
        let out = rms_scale(&w, (-22.0, -22.0), &mut seed::rng(0, &[])).unwrap();
        for (a, b) in out.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn silent_input_is_an_error() {
        let w = Waveform::zeros(100, 16_000);
        assert!(rms_scale(&w, (-25.0, -20.0), &mut seed::rng(0, &[])).is_err());
    }

    #[test]
    fn levels_are_uniform_over_range() {
        let w = Waveform::new((0..64).map(|i| (i as f64 * 0.3).sin()).collect(), 16_000).unwrap();
        let mut rng = seed::rng(11, &[]);
        let mut bins = [0usize; 10];
        let n = 10_000;
        for _ in 0..n {
            let db = rms_db(&rms_scale(&w, (-25.0, -20.0), &mut rng).unwrap());
            assert!((-25.0 - 1e-9..=-20.0 + 1e-9).contains(&db));
            bins[(((db + 25.0) / 0.5) as usize).min(9)] += 1;
        }
        // each half-dB bin holds 10% of the mass; allow 1.5 points of slack
        for c in bins {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.1).abs() < 0.015, "{frac}");
        }
    }
}
