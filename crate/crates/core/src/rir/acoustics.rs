use super::Rir;
use crate::error::{Error, Result};

/// DRR reported for responses without measurable reverberant energy.
pub const DRR_CAP_DB: f64 = 80.0;

const T30_START_DB: f64 = -5.0;
const T30_END_DB: f64 = -35.0;

/// Schroeder backward-integrated energy decay curve in dB (0 dB at the start).
pub fn schroeder_curve(ir: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = ir
        .iter()
        .rev()
        .map(|x| {
            acc += x * x;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| {
            if total > 0.0 && e > 0.0 {
                10.0 * (e / total).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// T30 reverberation time: least-squares slope of the Schroeder curve between
/// -5 and -35 dB, extrapolated to 60 dB of decay.
pub fn estimate_rt60(ir: &[f64], sample_rate: u32) -> Result<f64> {
    if ir.iter().all(|&x| x == 0.0) {
        return Err(Error::invalid("impulse response is silent"));
    }
    let edc = schroeder_curve(ir);
    let start = edc.iter().position(|&v| v <= T30_START_DB);
    let end = edc.iter().position(|&v| v <= T30_END_DB);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) => (s, e),
        _ => {
            let floor = edc
                .iter()
                .copied()
                .filter(|v| v.is_finite())
                .fold(0.0, f64::min);
            return Err(Error::DecayRange {
                dynamic_range_db: -floor,
                required_db: -T30_END_DB,
            });
        }
    };
    // regression over finite points in [start, end]
    let pts: Vec<(f64, f64)> = (start..=end)
        .filter(|&i| edc[i].is_finite())
        .map(|i| (i as f64 / sample_rate as f64, edc[i]))
        .collect();
    if pts.len() < 3 {
        return Err(Error::BelowMeasurable(format!(
            "decay from {T30_START_DB} to {T30_END_DB} dB spans {} samples",
            end - start
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let me = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, e)| (t - mt) * (e - me)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::BelowMeasurable("non-decaying energy curve".into()));
    }
    Ok(-60.0 / slope)
}

/// Direct-to-reverberant ratio in dB: energy within `+-window_ms` of the
/// direct arrival over all remaining energy, capped at [`DRR_CAP_DB`].
pub fn compute_drr(rir: &Rir, window_ms: f64) -> Result<f64> {
    let ir = &rir.ir;
    let center = rir.direct_index();
    let half = (window_ms * rir.sample_rate as f64 / 1000.0).round() as usize;
    if center + half >= ir.len() {
        return Err(Error::invalid(format!(
            "direct window ends at sample {} beyond response length {}",
            center + half,
            ir.len()
        )));
    }
    let lo = center.saturating_sub(half);
    let direct: f64 = ir[lo..=center + half].iter().map(|x| x * x).sum();
    let total: f64 = ir.iter().map(|x| x * x).sum();
    let reverb = total - direct;
    if direct <= 0.0 {
        return Err(Error::invalid("no energy at the direct-path arrival"));
    }
    if reverb <= direct * 10f64.powf(-DRR_CAP_DB / 10.0) {
        return Ok(DRR_CAP_DB);
    }
    Ok((10.0 * (direct / reverb).log10()).min(DRR_CAP_DB))
}
