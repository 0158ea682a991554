use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{Error, Result};
use crate::rir::Position;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Recipe {
    /// Fixed room, fixed microphone.
    D1,
    /// Fixed room, random microphones.
    D2,
    /// Random rooms, random microphones.
    D3,
    /// Measured impulse responses.
    D4,
}

impl Recipe {
    pub fn is_simulated(self) -> bool {
        self != Recipe::D4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Room and transducer placement rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub room_dims_min: [f64; 3],
    pub room_dims_max: [f64; 3],
    pub rt60: [f64; 2],
    /// Fixed microphone; `None` draws one per microphone group. Absent keys
    /// deserialize to `None`, so only D1 pins it.
    pub mic: Option<Position>,
    pub mic_height: [f64; 2],
    pub wall_clearance: f64,
    pub src_height: [f64; 2],
    /// Closest allowed speaker-microphone distance.
    pub min_distance: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            room_dims_min: [7.0, 8.0, 3.0],
            room_dims_max: [7.0, 8.0, 3.0],
            rt60: [0.2, 0.2],
            mic: None,
            mic_height: [1.0, 1.5],
            wall_clearance: 0.5,
            src_height: [1.2, 2.0],
            min_distance: 0.2,
        }
    }
}

/// RIR counts: `groups` microphone placements (D3: rooms), each with
/// `per_group` speaker positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RirCounts {
    pub groups: usize,
    pub per_group: usize,
}

impl Default for RirCounts {
    fn default() -> Self {
        Self {
            groups: 1,
            per_group: 10_000,
        }
    }
}

impl RirCounts {
    pub fn total(&self) -> usize {
        self.groups * self.per_group
    }
}

/// Mixture counts per split for materialized or on-the-fly datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExampleCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for ExampleCounts {
    fn default() -> Self {
        Self {
            train: 2_000,
            val: 100,
            test: 200,
        }
    }
}

impl ExampleCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Complete recipe for one dataset; every random choice derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub recipe: Recipe,
    pub seed: u64,
    /// Half-width of the inclusion interval around each speaker distance.
    pub r_spk: f64,
    /// Clip length in seconds.
    pub clip_len: f64,
    pub sample_rate: u32,
    /// Upper end of the query range.
    pub d_max: f64,
    pub n_speakers: usize,
    /// Per-source RMS range in dBFS, applied after convolution.
    pub level_db: [f64; 2],
    /// Train / val / test ratios.
    pub splits: [f64; 3],
    /// Speakers per split.
    pub corpus_speakers: [usize; 3],
    pub geometry: Geometry,
    pub counts: RirCounts,
    pub examples: ExampleCounts,
    /// Presence ratio for materialized val/test examples.
    pub eval_presence_ratio: f64,
    /// Measured-RIR manifest (D4).
    pub real_manifest: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::recipe(Recipe::D1)
    }
}

impl DatasetSpec {
    /// Published constants for each recipe.
    pub fn recipe(recipe: Recipe) -> Self {
        let base = Self {
            recipe,
            seed: 0,
            r_spk: 0.5,
            clip_len: 4.0,
            sample_rate: crate::audio::SAMPLE_RATE,
            d_max: 5.0,
            n_speakers: 2,
            level_db: [-25.0, -20.0],
            splits: [0.9, 0.02, 0.08],
            corpus_speakers: [128, 48, 64],
            geometry: Geometry::default(),
            counts: RirCounts::default(),
            examples: ExampleCounts::default(),
            eval_presence_ratio: 0.5,
            real_manifest: None,
        };
        match recipe {
            Recipe::D1 => Self {
                geometry: Geometry {
                    mic: Some([3.5, 4.0, 1.1]),
                    ..Geometry::default()
                },
                ..base
            },
            Recipe::D2 => Self {
                splits: [0.9, 0.01, 0.09],
                counts: RirCounts {
                    groups: 100,
                    per_group: 2_000,
                },
                ..base
            },
            Recipe::D3 => Self {
                geometry: Geometry {
                    room_dims_min: [4.0, 5.0, 2.5],
                    room_dims_max: [8.0, 10.0, 3.0],
                    rt60: [0.2, 0.5],
                    ..Geometry::default()
                },
                counts: RirCounts {
                    groups: 50_000,
                    per_group: 10,
                },
                ..base
            },
            Recipe::D4 => Self {
                r_spk: 0.1,
                d_max: 10.0,
                counts: RirCounts {
                    groups: 0,
                    per_group: 0,
                },
                ..base
            },
        }
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_len * self.sample_rate as f64).round() as usize
    }

    pub fn level_range(&self) -> (f64, f64) {
        (self.level_db[0], self.level_db[1])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.r_spk > 0.0 && self.r_spk.is_finite()) {
            return bad(format!("r_spk must be positive, got {}", self.r_spk));
        }
        if !(self.clip_len > 0.0) || self.clip_samples() == 0 {
            return bad("clip_len must be positive".into());
        }
        if !(self.d_max > 0.0) {
            return bad("d_max must be positive".into());
        }
        if self.n_speakers == 0 {
            return bad("n_speakers must be at least 1".into());
        }
        if self.level_db[0] > self.level_db[1] {
            return bad("level_db must be [lo, hi] with lo <= hi".into());
        }
        let total: f64 = self.splits.iter().sum();
        if self.splits.iter().any(|&r| r < 0.0) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios must be non-negative and sum to 1, got {:?}", self.splits));
        }
        if !(0.0..=1.0).contains(&self.eval_presence_ratio) {
            return bad("eval_presence_ratio must lie in [0, 1]".into());
        }
        let g = &self.geometry;
        for k in 0..3 {
            if !(g.room_dims_min[k] > 0.0 && g.room_dims_min[k] <= g.room_dims_max[k]) {
                return bad(format!("invalid room dimension range on axis {k}"));
            }
        }
        if !(g.rt60[0] > 0.0 && g.rt60[0] <= g.rt60[1]) {
            return bad(format!("invalid rt60 range {:?}", g.rt60));
        }
        if g.src_height[0] > g.src_height[1] || g.mic_height[0] > g.mic_height[1] {
            return bad("height ranges must be [lo, hi]".into());
        }
        if 2.0 * g.wall_clearance >= g.room_dims_min[0].min(g.room_dims_min[1]) {
            return bad("wall clearance leaves no room for speakers".into());
        }
        if self.recipe == Recipe::D4 && self.real_manifest.is_none() {
            return bad("D4 needs real_manifest".into());
        }
        Ok(())
    }

    /// Recipe defaults, overlaid with `text` and then with `key=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut probe: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config::apply_overrides(&mut probe, overrides)?;
        let recipe = match probe.get("recipe") {
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => Recipe::D1,
        };
        let spec: Self = config::layered(&Self::recipe(recipe), Some(text), overrides)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut spec = Self::from_toml_with(&std::fs::read_to_string(path)?, overrides)?;
        if let (Some(m), Some(dir)) = (&spec.real_manifest, path.parent()) {
            if m.is_relative() {
                spec.real_manifest = Some(dir.join(m));
            }
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_constants() {
        let d1 = DatasetSpec::recipe(Recipe::D1);
        assert_eq!(d1.geometry.mic, Some([3.5, 4.0, 1.1]));
        assert_eq!(d1.counts.total(), 10_000);
        assert_eq!(d1.r_spk, 0.5);
        let d2 = DatasetSpec::recipe(Recipe::D2);
        assert_eq!(d2.counts.total(), 200_000);
        let d3 = DatasetSpec::recipe(Recipe::D3);
        assert_eq!(d3.geometry.room_dims_max, [8.0, 10.0, 3.0]);
        let d4 = DatasetSpec::recipe(Recipe::D4);
        assert_eq!((d4.r_spk, d4.d_max), (0.1, 10.0));
        assert_eq!(d1.clip_samples(), 64_000);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let d3 = DatasetSpec::recipe(Recipe::D3);
        assert_eq!(DatasetSpec::from_toml(&d3.to_toml()).unwrap(), d3);
        let partial = DatasetSpec::from_toml("recipe = \"D3\"\nseed = 9\nclip_len = 1.0\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.geometry.rt60, [0.2, 0.5]);
        let over = DatasetSpec::from_toml_with("", &["recipe=D4".into(), "real_manifest=m.jsonl".into()]).unwrap();
        assert_eq!(over.r_spk, 0.1);
        assert!(DatasetSpec::from_toml("splits = [0.5, 0.2, 0.2]").is_err());
        assert!(DatasetSpec::from_toml("recipe = \"D4\"").is_err());
        assert!(DatasetSpec::from_toml("[geometry]\nroom_dims_min = [-1.0, 8.0, 3.0]").is_err());
    }
}
