use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetSpec, Recipe, Split};
use crate::error::{Error, Result};
use crate::rir::{distance, simulate_rir, Position, RealRirSet, Rir, RirRoom, RoomSpec, SimOptions};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpeaker {
    pub rir_id: String,
    pub src_pos: Position,
    pub distance: f64,
}

/// One room, one microphone, K speakers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub room: RirRoom,
    pub mic_pos: Position,
    pub speakers: Vec<SceneSpeaker>,
}

impl Scene {
    pub fn distances(&self) -> Vec<f64> {
        self.speakers.iter().map(|s| s.distance).collect()
    }
}

/// Placement attempts per speaker before giving up on a position.
const PLACEMENT_TRIES: usize = 1_000;
/// Attempts per speaker for distance-first placement (D3); failures are dropped.
const DISTANCE_FIRST_TRIES: usize = 20;

fn uniform_in<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..=range[1])
    }
}

pub(crate) fn sample_room<R: Rng + ?Sized>(spec: &DatasetSpec, rng: &mut R) -> Result<RoomSpec> {
    let g = &spec.geometry;
    let dims = [0, 1, 2].map(|k| uniform_in([g.room_dims_min[k], g.room_dims_max[k]], rng));
    RoomSpec::new(dims, uniform_in(g.rt60, rng))
}

pub(crate) fn sample_mic<R: Rng + ?Sized>(spec: &DatasetSpec, room: &RoomSpec, rng: &mut R) -> Result<Position> {
    let g = &spec.geometry;
    if let Some(m) = g.mic {
        if !room.contains(&m) {
            return Err(Error::InvalidGeometry(format!("fixed microphone {m:?} outside room {:?}", room.dims)));
        }
        return Ok(m);
    }
    let c = g.wall_clearance;
    let top = g.mic_height[1].min(room.dims[2] - 0.1);
    Ok([
        rng.gen_range(c..room.dims[0] - c),
        rng.gen_range(c..room.dims[1] - c),
        uniform_in([g.mic_height[0].min(top), top], rng),
    ])
}

fn placement_ok(spec: &DatasetSpec, room: &RoomSpec, mic: &Position, p: &Position) -> bool {
    let g = &spec.geometry;
    let c = g.wall_clearance;
    let d = distance(p, mic);
    p[0] >= c
        && p[0] <= room.dims[0] - c
        && p[1] >= c
        && p[1] <= room.dims[1] - c
        && p[2] >= g.src_height[0]
        && p[2] <= g.src_height[1].min(room.dims[2])
        && d >= g.min_distance
        && d <= spec.d_max
}

/// Speaker position. D3 draws the distance first (uniform), then a direction,
/// and fails after a few tries when the room cannot host that distance;
/// other recipes draw positions uniformly in the admissible volume.
pub(crate) fn sample_speaker<R: Rng + ?Sized>(
    spec: &DatasetSpec,
    room: &RoomSpec,
    mic: &Position,
    rng: &mut R,
) -> Option<Position> {
    let g = &spec.geometry;
    if spec.recipe == Recipe::D3 {
        let d = rng.gen_range(g.min_distance..=spec.d_max);
        for _ in 0..DISTANCE_FIRST_TRIES {
            let z = uniform_in(g.src_height, rng);
            let dz = z - mic[2];
            if dz.abs() > d {
                continue;
            }
            let horiz = (d * d - dz * dz).sqrt();
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = [mic[0] + horiz * phi.cos(), mic[1] + horiz * phi.sin(), z];
            if placement_ok(spec, room, mic, &p) {
                return Some(p);
            }
        }
        return None;
    }
    let c = g.wall_clearance;
    for _ in 0..PLACEMENT_TRIES {
        let p = [
            rng.gen_range(c..=room.dims[0] - c),
            rng.gen_range(c..=room.dims[1] - c),
            uniform_in([g.src_height[0], g.src_height[1].min(room.dims[2])], rng),
        ];
        if placement_ok(spec, room, mic, &p) {
            return Some(p);
        }
    }
    None
}

/// Geometry of one simulated scene; RIRs are not rendered.
pub fn sample_scene<R: Rng + ?Sized>(spec: &DatasetSpec, id: &str, rng: &mut R) -> Result<Scene> {
    if !spec.recipe.is_simulated() {
        return Err(Error::invalid("measured-RIR scenes come from an RIR pool"));
    }
    const ROOM_TRIES: usize = 50;
    for _ in 0..ROOM_TRIES {
        let room = sample_room(spec, rng)?;
        let mic = sample_mic(spec, &room, rng)?;
        let speakers: Option<Vec<SceneSpeaker>> = (0..spec.n_speakers)
            .map(|k| {
                sample_speaker(spec, &room, &mic, rng).map(|p| SceneSpeaker {
                    rir_id: format!("{id}-s{k}"),
                    src_pos: p,
                    distance: distance(&p, &mic),
                })
            })
            .collect();
        if let Some(speakers) = speakers {
            return Ok(Scene {
                id: id.to_string(),
                room: RirRoom::Simulated(room),
                mic_pos: mic,
                speakers,
            });
        }
    }
    Err(Error::Constraint {
        attempts: ROOM_TRIES,
        what: format!("placing {} speakers", spec.n_speakers),
    })
}

/// Render the impulse responses of a simulated scene.
pub fn simulate_scene<R: Rng + ?Sized>(scene: &Scene, rng: &mut R) -> Result<Vec<Rir>> {
    let RirRoom::Simulated(room) = &scene.room else {
        return Err(Error::invalid("scene has no simulated room"));
    };
    scene
        .speakers
        .iter()
        .map(|s| simulate_rir(room, &s.src_pos, &scene.mic_pos, &SimOptions::default(), s.rir_id.clone(), rng))
        .collect()
}

/// Outcome of a recipe-wide RIR generation.
#[derive(Debug, Clone)]
pub struct RirGeneration {
    pub rirs: Vec<(Rir, Split)>,
    pub requested: usize,
}

impl RirGeneration {
    pub fn realized(&self) -> usize {
        self.rirs.len()
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for (_, s) in &self.rirs {
            c[s.index()] += 1;
        }
        c
    }
}

/// Split sizes for `n` items: rounded train and val shares, remainder to test.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let val = ((n as f64 * ratios[1]).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Deterministic split label for item `i` of `n` under a seeded shuffle.
fn split_labels(n: usize, ratios: [f64; 3], seed: u64, tag: &str) -> Vec<Split> {
    use rand::seq::SliceRandom;
    let sizes = split_sizes(n, ratios);
    let mut labels: Vec<Split> = Split::ALL
        .iter()
        .zip(sizes)
        .flat_map(|(&s, k)| std::iter::repeat(s).take(k))
        .collect();
    labels.shuffle(&mut seed::rng(seed, &[seed::tag(tag)]));
    labels
}

/// Simulate every RIR of a recipe: `groups` microphone placements (rooms for
/// D3) with `per_group` speaker positions each. D3 is split by room, the
/// others by RIR.
pub fn generate_rirs(spec: &DatasetSpec) -> Result<RirGeneration> {
    spec.validate()?;
    if !spec.recipe.is_simulated() {
        return Err(Error::invalid("measured RIRs are ingested, not generated"));
    }
    let (groups, per) = (spec.counts.groups, spec.counts.per_group);
    let group_split = split_labels(groups, spec.splits, spec.seed, "group-split");
    let rir_split = split_labels(groups * per, spec.splits, spec.seed, "rir-split");
    let job = |g: usize| -> Result<Vec<(Rir, Split)>> {
        let mut rng = seed::rng(spec.seed, &[seed::tag("rir-group"), g as u64]);
        let room = sample_room(spec, &mut rng)?;
        let mic = sample_mic(spec, &room, &mut rng)?;
        let mut out = Vec::with_capacity(per);
        for p in 0..per {
            let mut prng = seed::rng(spec.seed, &[seed::tag("rir"), g as u64, p as u64]);
            let Some(src) = sample_speaker(spec, &room, &mic, &mut prng) else {
                continue;
            };
            let rir = simulate_rir(&room, &src, &mic, &SimOptions::default(), format!("g{g:05}-p{p:05}"), &mut prng)?;
            let split = if spec.recipe == Recipe::D3 {
                group_split[g]
            } else {
                rir_split[g * per + p]
            };
            out.push((rir, split));
        }
        Ok(out)
    };
    #[cfg(feature = "parallel")]
    let per_group: Vec<Result<Vec<(Rir, Split)>>> = {
        use rayon::prelude::*;
        (0..groups).into_par_iter().map(job).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_group: Vec<Result<Vec<(Rir, Split)>>> = (0..groups).map(job).collect();
    let mut rirs = Vec::with_capacity(groups * per);
    for g in per_group {
        rirs.extend(g?);
    }
    Ok(RirGeneration {
        rirs,
        requested: groups * per,
    })
}

/// Pre-rendered RIRs grouped by shared microphone (and room), per split.
#[derive(Debug, Clone, Default)]
pub struct RirPool {
    groups: [Vec<Vec<Rir>>; 3],
}

impl RirPool {
    pub fn new(rirs: impl IntoIterator<Item = (Rir, Split)>) -> Self {
        let mut keyed: [BTreeMap<String, Vec<Rir>>; 3] = Default::default();
        for (rir, split) in rirs {
            let key = format!("{:?}|{:?}", rir.mic_pos.map(f64::to_bits), rir.room);
            keyed[split.index()].entry(key).or_default().push(rir);
        }
        Self {
            groups: keyed.map(|m| m.into_values().collect()),
        }
    }

    /// Measured RIRs; records whose split is not train/val/test are ignored.
    pub fn from_real(set: &RealRirSet) -> Result<Self> {
        let mut rirs = Vec::with_capacity(set.records.len());
        for r in &set.records {
            if let Some(split) = r.split.as_deref().and_then(|s| Split::parse(s).ok()) {
                rirs.push((set.load(r)?, split));
            }
        }
        Ok(Self::new(rirs))
    }

    pub fn len(&self, split: Split) -> usize {
        self.groups[split.index()].iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        Split::ALL.iter().all(|&s| self.len(s) == 0)
    }

    /// K distinct RIRs from one group of `split`.
    pub fn draw_scene<R: Rng + ?Sized>(&self, split: Split, k: usize, id: &str, rng: &mut R) -> Result<(Scene, Vec<Rir>)> {
        let eligible: Vec<&Vec<Rir>> = self.groups[split.index()].iter().filter(|g| g.len() >= k).collect();
        if eligible.is_empty() {
            return Err(Error::invalid(format!("no RIR group in {split} holds {k} responses")));
        }
        // weight groups by size so every RIR is equally likely to appear
        let total: usize = eligible.iter().map(|g| g.len()).sum();
        let mut pick = rng.gen_range(0..total);
        let group = eligible
            .iter()
            .find(|g| {
                if pick < g.len() {
                    true
                } else {
                    pick -= g.len();
                    false
                }
            })
            .expect("pick within total");
        let rirs: Vec<Rir> = sample_indices(rng, group.len(), k).into_iter().map(|i| group[i].clone()).collect();
        let scene = Scene {
            id: id.to_string(),
            room: rirs[0].room.clone(),
            mic_pos: rirs[0].mic_pos,
            speakers: rirs
                .iter()
                .map(|r| SceneSpeaker {
                    rir_id: r.id.clone(),
                    src_pos: r.src_pos,
                    distance: r.distance,
                })
                .collect(),
        };
        Ok((scene, rirs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d1_scenes_use_fixed_room_and_mic() {
        let spec = DatasetSpec::recipe(Recipe::D1);
        let mut rng = seed::rng(1, &[]);
        for i in 0..200 {
            let s = sample_scene(&spec, &format!("s{i}"), &mut rng).unwrap();
            assert_eq!(s.mic_pos, [3.5, 4.0, 1.1]);
            let RirRoom::Simulated(room) = s.room else { panic!() };
            assert_eq!(room.dims, [7.0, 8.0, 3.0]);
            for sp in &s.speakers {
                assert!(room.wall_clearance(&sp.src_pos) >= 0.5 - 1e-12 || sp.src_pos[2] < 0.5);
                assert!((1.2..=2.0).contains(&sp.src_pos[2]));
                assert!((sp.distance - distance(&sp.src_pos, &s.mic_pos)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_sizes_cover_everything() {
        assert_eq!(split_sizes(10_000, [0.9, 0.02, 0.08]), [9000, 200, 800]);
        assert_eq!(split_sizes(7, [0.9, 0.02, 0.08]), [6, 0, 1]);
        let labels = split_labels(100, [0.5, 0.25, 0.25], 0, "t");
        assert_eq!(labels.iter().filter(|&&s| s == Split::Val).count(), 25);
    }

    #[test]
    fn d3_generation_records_shortfall_and_splits_by_room() {
        let mut spec = DatasetSpec::recipe(Recipe::D3);
        spec.counts.groups = 6;
        spec.counts.per_group = 10;
        spec.splits = [0.5, 0.0, 0.5];
        let generated = generate_rirs(&spec).unwrap();
        assert_eq!(generated.requested, 60);
        assert!(generated.realized() <= 60 && generated.realized() > 20);
        let mut room_split: BTreeMap<String, Split> = BTreeMap::new();
        for (r, s) in &generated.rirs {
            let key = format!("{:?}", r.room);
            assert_eq!(*room_split.entry(key).or_insert(*s), *s);
            assert!(r.distance <= spec.d_max + 1e-9);
        }
    }

    #[test]
    fn pool_draws_distinct_rirs_from_one_group() {
        let mut spec = DatasetSpec::recipe(Recipe::D2);
        spec.counts.groups = 3;
        spec.counts.per_group = 4;
        spec.splits = [1.0, 0.0, 0.0];
        let pool = RirPool::new(generate_rirs(&spec).unwrap().rirs);
        assert_eq!(pool.len(Split::Train), 12);
        let mut rng = seed::rng(0, &[]);
        for _ in 0..20 {
            let (scene, rirs) = pool.draw_scene(Split::Train, 2, "x", &mut rng).unwrap();
            assert_ne!(rirs[0].id, rirs[1].id);
            assert_eq!(rirs[0].mic_pos, rirs[1].mic_pos);
            assert_eq!(scene.distances(), vec![rirs[0].distance, rirs[1].distance]);
        }
        assert!(pool.draw_scene(Split::Test, 2, "x", &mut rng).is_err());
    }
}
