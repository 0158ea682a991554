use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `d(10 log10 u)/du = DB_PER_NEPER / u`.
const DB_PER_NEPER: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Ceiling of the active loss in dB.
    pub eta: f64,
    /// Mixture-energy floor weight of the inactive loss.
    pub tau_inactive: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eta: 30.0,
            tau_inactive: 1e-2,
        }
    }
}

impl LossConfig {
    pub fn tau_active(&self) -> f64 {
        10f64.powf(-self.eta / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.tau_inactive.is_finite() && self.tau_inactive > 0.0) {
            return Err(Error::Config("loss constants must be finite, tau_inactive > 0".into()));
        }
        Ok(())
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub(crate) fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Thresholded SDR in dB, to be maximized. Bounded above by `eta`.
pub fn loss_active(target: &[f64], estimate: &[f64], cfg: &LossConfig) -> Result<f64> {
    Ok(loss_active_grad(target, estimate, cfg)?.0)
}

/// Value and gradient with respect to `estimate`.
pub fn loss_active_grad(target: &[f64], estimate: &[f64], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    check_lengths(target, estimate)?;
    let ex = energy(target);
    if ex <= 0.0 {
        return Err(Error::invalid("active loss needs a non-zero target"));
    }
    let err: f64 = target.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
    let denom = err + cfg.tau_active() * ex;
    let value = 10.0 * (ex / denom).log10();
    let scale = 2.0 * DB_PER_NEPER / denom;
    let grad = target.iter().zip(estimate).map(|(a, b)| scale * (a - b)).collect();
    Ok((value, grad))
}

/// Inactive SDR in dB, to be minimized. Bounded below by `10 log10(tau ||y||^2)`.
pub fn loss_inactive(mixture: &[f64], estimate: &[f64], cfg: &LossConfig) -> Result<f64> {
    Ok(loss_inactive_grad(mixture, estimate, cfg)?.0)
}

/// Value and gradient with respect to `estimate`.
pub fn loss_inactive_grad(mixture: &[f64], estimate: &[f64], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    check_lengths(mixture, estimate)?;
    let ey = energy(mixture);
    if ey <= 0.0 {
        return Err(Error::invalid("inactive loss needs a non-silent mixture"));
    }
    let denom = energy(estimate) + cfg.tau_inactive * ey;
    let scale = 2.0 * DB_PER_NEPER / denom;
    Ok((10.0 * denom.log10(), estimate.iter().map(|v| scale * v).collect()))
}

/// Lowest value [`loss_inactive`] can take for this mixture.
pub fn inactive_floor(mixture: &[f64], cfg: &LossConfig) -> f64 {
    10.0 * (cfg.tau_inactive * energy(mixture)).log10()
}
