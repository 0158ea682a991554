use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::rir::Rir;

/// Linear convolution of `a` and `b`, truncated to the first `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![0.0; out_len];
    }
    let full = a.len() + b.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let load = |x: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (slot, &v) in buf.iter_mut().zip(x) {
            slot.re = v;
        }
        buf
    };
    let (mut fa, mut fb) = (load(a), load(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    (0..out_len)
        .map(|i| if i < full { fa[i].re * scale } else { 0.0 })
        .collect()
}

/// Reverberant source `s * h`, truncated to `len(s)`.
pub fn render_reverberant(s: &Waveform, h: &Rir) -> Result<Waveform> {
    if s.sample_rate != h.sample_rate {
        return Err(Error::invalid(format!(
            "speech at {} Hz, impulse response at {} Hz",
            s.sample_rate, h.sample_rate
        )));
    }
    Ok(Waveform {
        samples: fft_convolve(&s.samples, &h.ir, s.len()),
        sample_rate: s.sample_rate,
    })
}

/// Sample-wise sum, accumulated in list order.
pub fn mix(xs: &[Waveform]) -> Result<Waveform> {
    let first = xs.first().ok_or_else(|| Error::invalid("cannot mix an empty list"))?;
    let mut out = Waveform::zeros(first.len(), first.sample_rate);
    for x in xs {
        if x.len() != first.len() || x.sample_rate != first.sample_rate {
            return Err(Error::shape("mixture sources differ in length or rate"));
        }
        for (o, v) in out.samples.iter_mut().zip(&x.samples) {
            *o += v;
        }
    }
    Ok(out)
}

/// Indices `k` with `|d_k - d_q| <= r_spk`; the boundary is included.
pub fn select_targets(distances: &[f64], d_q: f64, r_spk: f64) -> Vec<usize> {
    distances
        .iter()
        .enumerate()
        .filter(|(_, &d)| (d - d_q).abs() <= r_spk)
        .map(|(k, _)| k)
        .collect()
}

/// Disjoint sorted intervals `[d_k - r, d_k + r] ∩ [0, d_max]`.
fn presence_intervals(distances: &[f64], r_spk: f64, d_max: f64) -> Vec<(f64, f64)> {
    let mut iv: Vec<(f64, f64)> = distances
        .iter()
        .map(|&d| ((d - r_spk).max(0.0), (d + r_spk).min(d_max)))
        .filter(|(a, b)| a < b)
        .collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in iv {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
}

fn draw_from<R: Rng + ?Sized>(intervals: &[(f64, f64)], rng: &mut R) -> f64 {
    let total: f64 = intervals.iter().map(|(a, b)| b - a).sum();
    let mut u = rng.gen_range(0.0..total);
    for &(a, b) in intervals {
        if u < b - a {
            return a + u;
        }
        u -= b - a;
    }
    intervals.last().map(|iv| iv.1).unwrap_or(0.0)
}

/// Query distance in `(0, d_max]`: uniform over the speaker intervals when
/// `presence`, otherwise uniform over their complement.
pub fn sample_query<R: Rng + ?Sized>(
    distances: &[f64],
    presence: bool,
    r_spk: f64,
    d_max: f64,
    rng: &mut R,
) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::invalid("scene has no speakers"));
    }
    let occupied = presence_intervals(distances, r_spk, d_max);
    let candidates = if presence {
        occupied
    } else {
        let mut gaps = Vec::new();
        let mut cursor = 0.0;
        for &(a, b) in &occupied {
            if a > cursor {
                gaps.push((cursor, a));
            }
            cursor = cursor.max(b);
        }
        if cursor < d_max {
            gaps.push((cursor, d_max));
        }
        gaps
    };
    let measure: f64 = candidates.iter().map(|(a, b)| b - a).sum();
    if measure <= 1e-9 {
        return Err(Error::NoFeasibleQuery(format!(
            "no {} query in (0, {d_max}] for distances {distances:?}",
            if presence { "present" } else { "absent" }
        )));
    }
    for _ in 0..1000 {
        let d = draw_from(&candidates, rng);
        if d > 0.0 && d <= d_max && select_targets(distances, d, r_spk).is_empty() != presence {
            return Ok(d);
        }
    }
    Err(Error::NoFeasibleQuery("query sampling did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rir::RirRoom;
    use crate::seed;

    fn rir_from(ir: Vec<f64>) -> Rir {
        Rir {
            id: "t".into(),
            ir,
            sample_rate: 16_000,
            mic_pos: [0.0; 3],
            src_pos: [1.0, 0.0, 0.0],
            distance: 1.0,
            room: RirRoom::Real,
        }
    }

    fn random(n: usize, s: u64) -> Vec<f64> {
        let mut rng = seed::rng(s, &[]);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_and_delay() {
        let s = Waveform::new(random(300, 1), 16_000).unwrap();
        let out = render_reverberant(&s, &rir_from(vec![1.0])).unwrap();
        for (a, b) in out.samples.iter().zip(&s.samples) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut h = vec![0.0; 11];
        h[10] = 0.5;
        let out = render_reverberant(&s, &rir_from(h)).unwrap();
        assert_eq!(out.len(), 300);
        for i in 0..300 {
            let want = if i >= 10 { 0.5 * s.samples[i - 10] } else { 0.0 };
            assert!((out.samples[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_convolution() {
        let s = random(1000, 2);
        let h = random(200, 3);
        let fast = fft_convolve(&s, &h, 1000);
        for n in 0..1000 {
            let direct: f64 = (0..200).filter(|&k| k <= n).map(|k| h[k] * s[n - k]).sum();
            assert!((fast[n] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn rate_mismatch_is_an_error() {
        let s = Waveform::new(vec![1.0; 10], 8_000).unwrap();
        assert!(render_reverberant(&s, &rir_from(vec![1.0])).is_err());
    }

    #[test]
    fn mixing() {
        let x = Waveform::new(random(50, 4), 16_000).unwrap();
        assert_eq!(mix(&[x.clone(), Waveform::zeros(50, 16_000)]).unwrap(), x);
        assert!(mix(&[x.clone(), x.scaled(-1.0)]).unwrap().is_silent());
        assert!(mix(&[]).is_err());
        assert!(mix(&[x, Waveform::zeros(49, 16_000)]).is_err());
    }

    #[test]
    fn target_selection_cases() {
        assert_eq!(select_targets(&[1.0, 3.0], 1.2, 0.5), vec![0]);
        assert_eq!(select_targets(&[2.0, 2.4], 2.2, 0.5), vec![0, 1]);
        assert!(select_targets(&[1.0, 3.0], 2.0, 0.5).is_empty());
        assert_eq!(select_targets(&[2.0], 2.5, 0.5), vec![0]);
    }

    #[test]
    fn query_sampling_respects_intervals() {
        let mut rng = seed::rng(5, &[]);
        for _ in 0..10_000 {
            let p = sample_query(&[2.0], true, 0.5, 5.0, &mut rng).unwrap();
            assert!((1.5..=2.5).contains(&p));
            let a = sample_query(&[2.0], false, 0.5, 5.0, &mut rng).unwrap();
            assert!(!(1.5..=2.5).contains(&a) && a > 0.0 && a <= 5.0);
        }
        assert!(matches!(
            sample_query(&[0.5, 1.5, 2.5, 3.5, 4.5], false, 0.5, 5.0, &mut rng),
            Err(Error::NoFeasibleQuery(_))
        ));
    }
}
