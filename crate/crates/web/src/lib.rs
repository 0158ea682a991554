//! Browser demo. Each operation is a plain function over serde types so it
//! runs and tests natively; the `#[wasm_bindgen]` wrappers only move JSON.

use rand::Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use dist_tse::audio::{rms_scale, Waveform, SAMPLE_RATE};
use dist_tse::dataset::{mix, render_reverberant, select_targets, Split, SpeechCorpus, SyntheticCorpus};
use dist_tse::rir::{compute_drr, estimate_rt60, schroeder_curve, simulate_rir, Position, RoomSpec, SimOptions};
use dist_tse::seed;
use dist_tse::sweep::{detect_peaks, sweep, Peak, SweepConfig};
use dist_tse::{Error, Result};

/// Lowest decay level reported; the tail of a finite response reaches -inf.
const DECAY_FLOOR_DB: f64 = -100.0;
const SOURCE_PLACEMENT_TRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomParams {
    pub dims: [f64; 3],
    pub rt60: f64,
    pub mic: Position,
    pub seed: u64,
    /// Direct-path window half-width for the DRR.
    pub drr_window_ms: f64,
}

impl Default for RoomParams {
    fn default() -> Self {
        Self {
            dims: [7.0, 8.0, 3.0],
            rt60: 0.2,
            mic: [3.5, 4.0, 1.1],
            seed: 0,
            drr_window_ms: 2.5,
        }
    }
}

impl RoomParams {
    fn room(&self) -> Result<RoomSpec> {
        RoomSpec::new(self.dims, self.rt60)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirRequest {
    #[serde(flatten)]
    pub room: RoomParams,
    pub source: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirView {
    pub sample_rate: u32,
    pub distance: f64,
    pub direct_index: usize,
    pub ir: Vec<f64>,
    pub decay_db: Vec<f64>,
    pub drr_db: f64,
    pub rt60_estimate: f64,
}

pub fn explore_rir(req: &RirRequest) -> Result<RirView> {
    let room = req.room.room()?;
    let mut rng = seed::rng(req.room.seed, &[seed::tag("explore")]);
    let rir = simulate_rir(&room, &req.source, &req.room.mic, &SimOptions::default(), "explore", &mut rng)?;
    Ok(RirView {
        sample_rate: rir.sample_rate,
        distance: rir.distance,
        direct_index: rir.direct_index(),
        decay_db: schroeder_curve(&rir.ir).into_iter().map(|v| v.max(DECAY_FLOOR_DB)).collect(),
        drr_db: compute_drr(&rir, req.room.drr_window_ms)?,
        rt60_estimate: estimate_rt60(&rir.ir, rir.sample_rate)?,
        ir: rir.ir,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrrRequest {
    #[serde(flatten)]
    pub room: RoomParams,
    pub count: usize,
    pub min_distance: f64,
    pub max_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrrPoint {
    pub distance: f64,
    pub drr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrrView {
    pub points: Vec<DrrPoint>,
    /// Least-squares DRR change per decade of distance.
    pub db_per_decade: f64,
    pub spearman: f64,
}

/// Source at exactly `d` from the microphone, 0.5 m from every wall and
/// 1.2-2.0 m high, at a random azimuth.
fn place_source(room: &RoomSpec, mic: &Position, d: f64, rng: &mut seed::Rng) -> Result<Position> {
    for _ in 0..SOURCE_PLACEMENT_TRIES {
        let z: f64 = rng.gen_range(1.2..2.0);
        let dz = z - mic[2];
        if dz.abs() > d {
            continue;
        }
        let horizontal = (d * d - dz * dz).sqrt();
        let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = [mic[0] + horizontal * az.cos(), mic[1] + horizontal * az.sin(), z];
        if room.contains(&p) && room.wall_clearance(&p) >= 0.5 {
            return Ok(p);
        }
    }
    Err(Error::InvalidGeometry(format!(
        "no source position {d} m from the microphone fits the room"
    )))
}

pub fn drr_vs_distance(req: &DrrRequest) -> Result<DrrView> {
    if req.count < 3 || !(0.0 < req.min_distance && req.min_distance < req.max_distance) {
        return Err(Error::Config("need at least 3 sources over a non-empty distance range".into()));
    }
    let room = req.room.room()?;
    let mut rng = seed::rng(req.room.seed, &[seed::tag("drr")]);
    let mut points = Vec::with_capacity(req.count);
    for i in 0..req.count {
        let d = rng.gen_range(req.min_distance..=req.max_distance);
        let src = place_source(&room, &req.room.mic, d, &mut rng)?;
        let rir = simulate_rir(&room, &src, &req.room.mic, &SimOptions::default(), format!("drr{i}"), &mut rng)?;
        points.push(DrrPoint {
            distance: rir.distance,
            drr_db: compute_drr(&rir, req.room.drr_window_ms)?,
        });
    }
    points.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let log_d: Vec<f64> = points.iter().map(|p| p.distance.log10()).collect();
    let drr: Vec<f64> = points.iter().map(|p| p.drr_db).collect();
    Ok(DrrView {
        db_per_decade: slope(&log_d, &drr),
        spearman: dist_tse::metrics::spearman(&log_d, &drr),
        points,
    })
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepRequest {
    pub room: RoomParams,
    /// Speaker-microphone distances, one speaker each.
    pub distances: Vec<f64>,
    pub clip_len: f64,
    pub r_spk: f64,
}

impl Default for SweepRequest {
    fn default() -> Self {
        Self {
            room: RoomParams::default(),
            distances: vec![1.5, 3.5],
            clip_len: 1.0,
            r_spk: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepView {
    pub grid: Vec<f64>,
    pub point_scores: Vec<f64>,
    pub scores: Vec<f64>,
    pub peaks: Vec<Peak>,
    pub estimate: Option<f64>,
    /// Distance from the estimate to the closest true speaker.
    pub error: Option<f64>,
}

/// Reverberant synthetic speakers at the requested distances, swept with an
/// extractor that returns the sum of the in-range reverberant sources.
pub fn oracle_sweep(req: &SweepRequest) -> Result<SweepView> {
    if req.distances.is_empty() || !(req.clip_len > 0.0 && req.clip_len <= 10.0) {
        return Err(Error::Config("need at least one speaker and a clip of at most 10 s".into()));
    }
    let room = req.room.room()?;
    let mut rng = seed::rng(req.room.seed, &[seed::tag("sweep")]);
    let corpus = SyntheticCorpus::new(req.room.seed, SAMPLE_RATE, [req.distances.len(), 0, 0]);
    let len = (req.clip_len * SAMPLE_RATE as f64).round() as usize;
    let mut sources = Vec::with_capacity(req.distances.len());
    for (k, &d) in req.distances.iter().enumerate() {
        let src = place_source(&room, &req.room.mic, d, &mut rng)?;
        let rir = simulate_rir(&room, &src, &req.room.mic, &SimOptions::default(), format!("spk{k}"), &mut rng)?;
        let dry = corpus.utterance(Split::Train, k, len, &mut rng)?;
        let wet = render_reverberant(&dry, &rir)?;
        sources.push(rms_scale(&wet, (-25.0, -20.0), &mut rng)?);
    }
    let y = mix(&sources)?;
    let cfg = SweepConfig::default();
    let oracle = |w: &Waveform, d_q: f64| -> Result<Waveform> {
        let mut out = Waveform::zeros(w.len(), w.sample_rate);
        for k in select_targets(&req.distances, d_q, req.r_spk) {
            for (o, s) in out.samples.iter_mut().zip(&sources[k].samples) {
                *o += s;
            }
        }
        Ok(out)
    };
    let curve = sweep(&y, &cfg, oracle)?;
    let peaks = detect_peaks(&curve, cfg.peak_min_prominence);
    let estimate = peaks.first().map(|p| p.distance);
    let error = estimate.map(|e| req.distances.iter().map(|d| (d - e).abs()).fold(f64::INFINITY, f64::min));
    Ok(SweepView {
        grid: curve.grid,
        point_scores: curve.point_scores,
        scores: curve.scores,
        peaks,
        estimate,
        error,
    })
}

fn run<Q: for<'de> Deserialize<'de>, A: Serialize>(json: &str, op: impl Fn(&Q) -> Result<A>) -> std::result::Result<String, JsValue> {
    let req: Q = serde_json::from_str(json).map_err(|e| JsValue::from_str(&format!("bad request: {e}")))?;
    let out = op(&req).map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&out).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = exploreRir)]
pub fn explore_rir_json(request: &str) -> std::result::Result<String, JsValue> {
    run(request, explore_rir)
}

#[wasm_bindgen(js_name = drrVsDistance)]
pub fn drr_vs_distance_json(request: &str) -> std::result::Result<String, JsValue> {
    run(request, drr_vs_distance)
}

#[wasm_bindgen(js_name = oracleSweep)]
pub fn oracle_sweep_json(request: &str) -> std::result::Result<String, JsValue> {
    run(request, oracle_sweep)
}
