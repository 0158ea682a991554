use rand::Rng;

use super::{distance, Position, Rir, RirRoom, RoomSpec, SPEED_OF_SOUND};
use crate::audio::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Radius (m) of the ball each image source is jittered within.
pub const PERTURBATION_RADIUS: f64 = 0.05;

const MAX_ORDER_CAP: usize = 40;

/// `ceil(c * rt60 / min_dim) + 1`, capped.
pub fn default_max_order(room: &RoomSpec) -> usize {
    let min_dim = room.dims.iter().copied().fold(f64::INFINITY, f64::min);
    ((SPEED_OF_SOUND * room.rt60 / min_dim).ceil() as usize + 1).min(MAX_ORDER_CAP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Maximum total reflection count; `None` uses [`default_max_order`].
    pub max_order: Option<usize>,
    /// Response length in samples; `None` uses `1.5 * rt60 * fs`.
    pub length: Option<usize>,
    pub perturbation: f64,
    pub sample_rate: u32,
    /// Absorption override (`1.0` = fully absorbing walls).
    pub absorption: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            max_order: None,
            length: None,
            perturbation: PERTURBATION_RADIUS,
            sample_rate: SAMPLE_RATE,
            absorption: None,
        }
    }
}

fn jitter<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> [f64; 3] {
    if radius <= 0.0 {
        return [0.0; 3];
    }
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        if v.iter().map(|x: &f64| x * x).sum::<f64>() <= 1.0 {
            return v.map(|x| x * radius);
        }
    }
}

/// Randomized image-source room impulse response.
///
/// Every image with at least one reflection is displaced uniformly inside a
/// ball of radius `opts.perturbation`; the direct path is left exact so its
/// tap lands at `round(d / c * fs)`. Taps are placed at the nearest sample
/// with amplitude `beta^order / (4 pi r)`.
pub fn simulate_rir<R: Rng + ?Sized>(
    room: &RoomSpec,
    src: &Position,
    mic: &Position,
    opts: &SimOptions,
    id: impl Into<String>,
    rng: &mut R,
) -> Result<Rir> {
    room.validate()?;
    if !room.contains(src) {
        return Err(Error::InvalidGeometry(format!("source {src:?} outside room {:?}", room.dims)));
    }
    if !room.contains(mic) {
        return Err(Error::InvalidGeometry(format!("microphone {mic:?} outside room {:?}", room.dims)));
    }
    let d = distance(src, mic);
    if d < 1e-6 {
        return Err(Error::InvalidGeometry("source and microphone coincide".into()));
    }
    let fs = opts.sample_rate as f64;
    let max_order = opts.max_order.unwrap_or_else(|| default_max_order(room));
    let len = opts
        .length
        .unwrap_or_else(|| (1.5 * room.rt60 * fs).ceil() as usize)
        .max((d / SPEED_OF_SOUND * fs).round() as usize + 1);
    let beta = match opts.absorption {
        Some(a) => (1.0 - a.clamp(0.0, 1.0)).sqrt(),
        None => room.reflection(),
    };
    let max_dist = len as f64 / fs * SPEED_OF_SOUND + opts.perturbation;
    let n_max = (max_order as i64 + 1) / 2;

    let mut ir = vec![0.0; len];
    let four_pi = 4.0 * std::f64::consts::PI;
    for nx in -n_max..=n_max {
        for px in 0..2i64 {
            let ox = (nx - px).abs() + nx.abs();
            let x = (1 - 2 * px) as f64 * src[0] + 2.0 * nx as f64 * room.dims[0];
            for ny in -n_max..=n_max {
                for py in 0..2i64 {
                    let oy = (ny - py).abs() + ny.abs();
                    let y = (1 - 2 * py) as f64 * src[1] + 2.0 * ny as f64 * room.dims[1];
                    for nz in -n_max..=n_max {
                        for pz in 0..2i64 {
                            let oz = (nz - pz).abs() + nz.abs();
                            let order = (ox + oy + oz) as usize;
                            if order > max_order {
                                continue;
                            }
                            let z = (1 - 2 * pz) as f64 * src[2] + 2.0 * nz as f64 * room.dims[2];
                            let mut img = [x, y, z];
                            // cheap reject before drawing the jitter
                            if distance(&img, mic) > max_dist {
                                continue;
                            }
                            if order > 0 {
                                let j = jitter(opts.perturbation, rng);
                                for k in 0..3 {
                                    img[k] += j[k];
                                }
                            }
                            let r = distance(&img, mic).max(1e-3);
                            let idx = (r / SPEED_OF_SOUND * fs).round() as usize;
                            if idx >= len {
                                continue;
                            }
                            let gain = if order == 0 { 1.0 } else { beta.powi(order as i32) };
                            if gain == 0.0 {
                                continue;
                            }
                            ir[idx] += gain / (four_pi * r);
                        }
                    }
                }
            }
        }
    }

    Ok(Rir {
        id: id.into(),
        ir,
        sample_rate: opts.sample_rate,
        mic_pos: *mic,
        src_pos: *src,
        distance: d,
        room: RirRoom::Simulated(*room),
    })
}
