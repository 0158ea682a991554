//! Training losses and evaluation metrics.

mod eval;
mod loss;

pub use eval::{
    evaluate, repetitions, Aggregate, EvalRow, Extractor, ModelExtractor, NullExtractor, OracleExtractor,
    PassthroughExtractor, PesqAdapter, Report, EVAL_REPETITIONS,
};
pub use loss::{
    inactive_floor, loss_active, loss_active_grad, loss_inactive, loss_inactive_grad, LossConfig,
};

use crate::error::{Error, Result};
use loss::{check_lengths, energy};

/// Ceiling reported for perfect or near-perfect estimates.
pub const SDR_CAP_DB: f64 = 80.0;

/// Plain SDR in dB, capped at [`SDR_CAP_DB`].
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let er = energy(reference);
    if er <= 0.0 {
        return Err(Error::invalid("SDR needs a non-zero reference"));
    }
    let err: f64 = reference.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
    if err == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (er / err).log10()).min(SDR_CAP_DB))
}

/// SDR improvement of `estimate` over using the mixture itself as the estimate.
pub fn sdri(reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(sdr(reference, estimate)? - sdr(reference, mixture)?)
}

/// Scale-invariant SDR in dB; diagnostic only, capped like [`sdr`].
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let er = energy(reference);
    if er <= 0.0 {
        return Err(Error::invalid("SI-SDR needs a non-zero reference"));
    }
    let alpha = reference.iter().zip(estimate).map(|(a, b)| a * b).sum::<f64>() / er;
    let projected: Vec<f64> = reference.iter().map(|v| alpha * v).collect();
    let target_energy = energy(&projected);
    let noise: f64 = projected.iter().zip(estimate).map(|(p, e)| (p - e).powi(2)).sum();
    if noise == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    if target_energy == 0.0 {
        return Ok(-SDR_CAP_DB);
    }
    Ok((10.0 * (target_energy / noise).log10()).clamp(-SDR_CAP_DB, SDR_CAP_DB))
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, _) = mean_std(&ra);
    let (mb, _) = mean_std(&rb);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn sdr_cap_and_identity() {
        let mut rng = seed::rng(1, &[]);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(sdr(&x, &x).unwrap(), SDR_CAP_DB);
        assert_eq!(sdri(&x, &x, &x).unwrap(), 0.0);
        assert!(sdr(&[0.0; 4], &[1.0; 4]).is_err());
        let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        assert!((sdr(&x, &half).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((si_sdr(&x, &half).unwrap() - SDR_CAP_DB).abs() < 1e-9);
    }

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[1.0, 1.0, 2.0, 2.0]) - 0.894_427_19).abs() < 1e-6);
    }

    #[test]
    fn mean_std_sample_convention() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.290_994_448_7).abs() < 1e-9);
    }
}
