//! Speaker-distance estimation by querying an extractor over a distance grid.
//!
//! Each grid point gets the inactive SDR of the extractor output; a point
//! is scored by the sum over grid points within half a window of it, and
//! peaks of that curve are speaker-distance candidates.

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::metrics::{loss_inactive, LossConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub step: f64,
    pub window: f64,
    pub peak_min_prominence: f64,
    pub loss: LossConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d_min: 0.5,
            d_max: 5.0,
            step: 0.5,
            window: 1.0,
            peak_min_prominence: 3.0,
            loss: LossConfig::default(),
        }
    }
}

impl SweepConfig {
    /// Range `(0, d_max]` on a `step` grid starting at `step`.
    pub fn for_range(d_max: f64) -> Self {
        Self {
            d_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.d_min > 0.0 && self.window >= 0.0 && self.peak_min_prominence >= 0.0) {
            return Err(Error::Config("sweep needs step > 0, d_min > 0, window >= 0, prominence >= 0".into()));
        }
        self.loss.validate()
    }

    /// `d_min, d_min + step, ...` up to `d_max` inclusive (with a half-step-free tolerance).
    pub fn grid(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = ((self.d_max - self.d_min) / self.step + 1e-9).floor();
        if !(n >= 0.0) {
            return Err(Error::invalid(format!("empty sweep grid [{}, {}]", self.d_min, self.d_max)));
        }
        Ok((0..=n as usize).map(|i| self.d_min + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub grid: Vec<f64>,
    /// Per-point inactive SDR of the extractor output, dB.
    pub point_scores: Vec<f64>,
    /// Windowed sums of `point_scores`, dB.
    pub scores: Vec<f64>,
}

impl SweepCurve {
    /// `d_q,point_iSDR,windowed_score` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d_q,point_iSDR,windowed_score\n");
        for ((d, p), s) in self.grid.iter().zip(&self.point_scores).zip(&self.scores) {
            out.push_str(&format!("{d},{p},{s}\n"));
        }
        out
    }
}

/// Sum of `points` over grid entries within `window / 2` of each grid entry.
pub fn windowed_sum(grid: &[f64], points: &[f64], window: f64) -> Vec<f64> {
    let half = window / 2.0 + 1e-9;
    grid.iter()
        .map(|&d| {
            grid.iter()
                .zip(points)
                .filter(|(g, _)| (**g - d).abs() <= half)
                .map(|(_, p)| p)
                .sum()
        })
        .collect()
}

/// Curve from precomputed point scores.
pub fn curve_from_points(grid: Vec<f64>, point_scores: Vec<f64>, window: f64) -> Result<SweepCurve> {
    if grid.is_empty() || grid.len() != point_scores.len() {
        return Err(Error::invalid("sweep grid empty or mismatched with scores"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sweep grid must be strictly increasing"));
    }
    let scores = windowed_sum(&grid, &point_scores, window);
    Ok(SweepCurve {
        grid,
        point_scores,
        scores,
    })
}

/// Query `extract(y, d_q)` at every grid point. Calls are independent and
/// run in parallel when the `parallel` feature is on.
pub fn sweep<F>(y: &Waveform, cfg: &SweepConfig, extract: F) -> Result<SweepCurve>
where
    F: Fn(&Waveform, f64) -> Result<Waveform> + Sync,
{
    let grid = cfg.grid()?;
    let point = |&d: &f64| -> Result<f64> {
        let est = extract(y, d)?;
        loss_inactive(&y.samples, &est.samples, &cfg.loss)
    };
    #[cfg(feature = "parallel")]
    let points: Result<Vec<f64>> = {
        use rayon::prelude::*;
        grid.par_iter().map(point).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let points: Result<Vec<f64>> = grid.iter().map(point).collect();
    curve_from_points(grid, points?, cfg.window)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub distance: f64,
    pub score: f64,
    pub prominence: f64,
}

/// Local maxima (plateaus count once, at their first point; endpoints
/// allowed) whose topographic prominence reaches the threshold, highest first.
pub fn detect_peaks(curve: &SweepCurve, min_prominence: f64) -> Vec<Peak> {
    let s = &curve.scores;
    let n = s.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        // extent of the plateau starting at i
        let mut j = i;
        while j + 1 < n && s[j + 1] == s[i] {
            j += 1;
        }
        let left_lower = i == 0 || s[i - 1] < s[i];
        let right_lower = j + 1 == n || s[j + 1] < s[i];
        // a curve that is flat end to end has no peak
        let whole = i == 0 && j + 1 == n;
        if left_lower && right_lower && !whole {
            let prominence = prominence(s, i, j);
            if prominence >= min_prominence {
                peaks.push(Peak {
                    index: i,
                    distance: curve.grid[i],
                    score: s[i],
                    prominence,
                });
            }
        }
        i = j + 1;
    }
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    peaks
}

/// Height above the higher of the two bases, where each base is the lowest
/// point between the plateau `[i, j]` and the nearest strictly higher point
/// on that side (or the curve end).
fn prominence(s: &[f64], i: usize, j: usize) -> f64 {
    let h = s[i];
    let mut left_min = h;
    let mut k = i;
    while k > 0 {
        k -= 1;
        if s[k] > h {
            break;
        }
        left_min = left_min.min(s[k]);
    }
    let mut right_min = h;
    for &v in &s[j + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    // an endpoint maximum has only one side to descend on
    let base = match (i == 0, j + 1 == s.len()) {
        (true, false) => right_min,
        (false, true) => left_min,
        _ => left_min.max(right_min),
    };
    h - base
}

/// Mean of `|highest peak - nearest true distance|` over mixtures with at
/// least one peak; `skipped` counts mixtures without a peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub mae: f64,
    pub errors: Vec<f64>,
    pub scored: usize,
    pub skipped: usize,
}

pub fn mae_eval(estimates: &[Option<f64>], truths: &[Vec<f64>]) -> Result<MaeReport> {
    if estimates.len() != truths.len() {
        return Err(Error::shape("one truth list per estimate"));
    }
    let mut errors = Vec::new();
    let mut skipped = 0;
    for (est, truth) in estimates.iter().zip(truths) {
        let Some(e) = est else {
            skipped += 1;
            continue;
        };
        let err = truth
            .iter()
            .map(|d| (e - d).abs())
            .fold(f64::INFINITY, f64::min);
        if !err.is_finite() {
            return Err(Error::invalid("mixture without true distances"));
        }
        errors.push(err);
    }
    let mae = if errors.is_empty() {
        f64::NAN
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    Ok(MaeReport {
        mae,
        scored: errors.len(),
        errors,
        skipped,
    })
}

/// Distance of the highest peak, if any.
pub fn estimate_distance(curve: &SweepCurve, min_prominence: f64) -> Option<f64> {
    detect_peaks(curve, min_prominence).first().map(|p| p.distance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(scores: &[f64]) -> SweepCurve {
        let grid: Vec<f64> = (1..=scores.len()).map(|i| i as f64 * 0.5).collect();
        SweepCurve {
            grid,
            point_scores: scores.to_vec(),
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn default_grid_has_ten_points() {
        let g = SweepConfig::default().grid().unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!((g[0], g[9]), (0.5, 5.0));
        assert_eq!(SweepConfig::for_range(10.0).grid().unwrap().len(), 20);
        let empty = SweepConfig {
            d_max: 0.2,
            ..SweepConfig::default()
        };
        assert!(empty.grid().is_err());
    }

    #[test]
    fn peak_rule_examples() {
        let two = detect_peaks(&curve(&[0.0, 5.0, 0.0, 0.0, 4.0, 0.0]), 3.0);
        assert_eq!(two.iter().map(|p| p.index).collect::<Vec<_>>(), vec![1, 4]);
        let mono = detect_peaks(&curve(&[0.0, 1.0, 2.0, 3.0, 4.0]), 3.0);
        assert_eq!(mono.len(), 1);
        assert_eq!(mono[0].index, 4);
        assert!(detect_peaks(&curve(&[2.0; 6]), 3.0).is_empty());
        assert!(detect_peaks(&curve(&[0.0, 2.0, 0.0]), 3.0).is_empty());
    }

    #[test]
    fn window_sums_are_edge_truncated() {
        let grid = vec![0.5, 1.0, 1.5, 2.0];
        assert_eq!(windowed_sum(&grid, &[1.0, 1.0, 1.0, 1.0], 1.0), vec![2.0, 3.0, 3.0, 2.0]);
        assert_eq!(windowed_sum(&grid, &[1.0, 2.0, 3.0, 4.0], 0.0), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mae_definition() {
        let r = mae_eval(&[Some(2.0), None], &[vec![1.8, 4.0], vec![1.0]]).unwrap();
        assert!((r.mae - 0.2).abs() < 1e-12);
        assert_eq!((r.scored, r.skipped), (1, 1));
        assert!(mae_eval(&[Some(1.0)], &[]).is_err());
    }
}
