//! Room impulse responses: image-source simulation, decay/DRR measurement and
//! ingestion of measured responses.

mod acoustics;
mod image;
mod real;
mod store;

pub use acoustics::{compute_drr, estimate_rt60, schroeder_curve, DRR_CAP_DB};
pub use image::{default_max_order, simulate_rir, SimOptions, PERTURBATION_RADIUS};
pub use real::{ingest_real_rir, resample, RealRirSet, D4_DISTANCE_RANGE};
pub use store::{read_manifest, write_manifest, RirRecord, RirStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

pub type Position = [f64; 3];

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Shoebox room with a target reverberation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub rt60: f64,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], rt60: f64) -> Result<Self> {
        let room = Self { dims, rt60 };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidGeometry(format!(
                "room dimensions must be positive, got {:?}",
                self.dims
            )));
        }
        if !(self.rt60 > 0.0 && self.rt60.is_finite()) {
            return Err(Error::invalid(format!("rt60 must be positive, got {}", self.rt60)));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Uniform energy absorption coefficient from Sabine's formula,
    /// `RT60 = 24 ln(10) V / (c S a)`, clamped to `(0, 1]`.
    pub fn absorption(&self) -> f64 {
        let a = 24.0 * std::f64::consts::LN_10 * self.volume()
            / (SPEED_OF_SOUND * self.surface() * self.rt60);
        a.clamp(1e-6, 1.0)
    }

    /// Pressure reflection coefficient of every wall.
    pub fn reflection(&self) -> f64 {
        (1.0 - self.absorption()).max(0.0).sqrt()
    }

    pub fn contains(&self, p: &Position) -> bool {
        p.iter().zip(&self.dims).all(|(&v, &l)| v > 0.0 && v < l)
    }

    /// Smallest distance from `p` to any of the six walls.
    pub fn wall_clearance(&self, p: &Position) -> f64 {
        p.iter()
            .zip(&self.dims)
            .map(|(&v, &l)| v.min(l - v))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RirRoom {
    Simulated(RoomSpec),
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rir {
    pub id: String,
    pub ir: Vec<f64>,
    pub sample_rate: u32,
    pub mic_pos: Position,
    pub src_pos: Position,
    pub distance: f64,
    pub room: RirRoom,
}

impl Rir {
    /// Sample index of the direct-path arrival: from geometry for simulated
    /// responses, the absolute peak for measured ones.
    pub fn direct_index(&self) -> usize {
        match self.room {
            RirRoom::Simulated(_) => {
                (self.distance / SPEED_OF_SOUND * self.sample_rate as f64).round() as usize
            }
            RirRoom::Real => self
                .ir
                .iter()
                .enumerate()
                .fold((0, 0.0), |(bi, bv), (i, &v)| {
                    if v.abs() > bv {
                        (i, v.abs())
                    } else {
                        (bi, bv)
                    }
                })
                .0,
        }
    }

    pub fn rt60_target(&self) -> Option<f64> {
        match &self.room {
            RirRoom::Simulated(r) => Some(r.rt60),
            RirRoom::Real => None,
        }
    }
}
