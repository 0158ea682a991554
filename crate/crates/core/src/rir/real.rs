use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use super::{distance, read_manifest, Position, Rir, RirRecord, RirRoom};
use crate::audio::{load_wav, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Source-microphone distances covered by the measured-room recipe.
pub const D4_DISTANCE_RANGE: (f64, f64) = (0.266, 10.521);

/// Zero crossings on each side of the interpolation kernel.
const KERNEL_HALF_WIDTH: usize = 16;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rational polyphase resampler. The rate ratio is reduced to `up/down`; each
/// of the `up` output phases owns a Blackman-windowed sinc branch with cutoff
/// at the lower of the two Nyquist frequencies.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let g = gcd(from as u64, to as u64);
    let (up, down) = ((to as u64 / g) as usize, (from as u64 / g) as usize);
    let cutoff = (up as f64 / down as f64).min(1.0);
    let half = (KERNEL_HALF_WIDTH as f64 / cutoff).ceil() as isize;
    let kernel = |t: f64| -> f64 {
        let span = half as f64;
        if t.abs() >= span {
            return 0.0;
        }
        let sinc = if t == 0.0 { 1.0 } else { (PI * cutoff * t).sin() / (PI * cutoff * t) };
        let w = 0.42 + 0.5 * (PI * t / span).cos() + 0.08 * (2.0 * PI * t / span).cos();
        cutoff * sinc * w
    };
    // branches[p][k] multiplies x[base - half + 1 + k] for output phase p
    let taps = (2 * half) as usize;
    let branches: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            (0..taps)
                .map(|k| kernel(frac - (k as isize - half + 1) as f64))
                .collect()
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    (0..out_len)
        .map(|j| {
            let pos = j * down;
            let (base, phase) = ((pos / up) as isize, pos % up);
            branches[phase]
                .iter()
                .enumerate()
                .filter_map(|(k, &c)| {
                    let i = base - half + 1 + k as isize;
                    (i >= 0 && (i as usize) < x.len()).then(|| c * x[i as usize])
                })
                .sum()
        })
        .collect()
}

/// Load a measured impulse response, resampled to the working rate.
pub fn ingest_real_rir(
    wav_path: &Path,
    mic_pos: Option<Position>,
    src_pos: Option<Position>,
) -> Result<Rir> {
    let mut missing = Vec::new();
    if mic_pos.is_none() {
        missing.push("mic_pos".to_string());
    }
    if src_pos.is_none() {
        missing.push("src_pos".to_string());
    }
    let (Some(mic), Some(src)) = (mic_pos, src_pos) else {
        return Err(Error::MissingMetadata(missing));
    };
    let w = load_wav(wav_path)?;
    let ir = resample(&w.samples, w.sample_rate, SAMPLE_RATE);
    let id = wav_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Rir {
        id,
        ir,
        sample_rate: SAMPLE_RATE,
        mic_pos: mic,
        src_pos: src,
        distance: distance(&mic, &src),
        room: RirRoom::Real,
    })
}

/// Measured-RIR collection described by a JSON-lines manifest; splits come
/// from each record's `split` field.
#[derive(Debug, Clone)]
pub struct RealRirSet {
    pub root: PathBuf,
    pub records: Vec<RirRecord>,
    pub warnings: Vec<String>,
}

impl RealRirSet {
    pub fn open(manifest: &Path) -> Result<Self> {
        let records = read_manifest(manifest)?;
        let mut warnings = Vec::new();
        for r in &records {
            let mut missing = Vec::new();
            if r.mic_pos.is_none() {
                missing.push(format!("{}: mic_pos", r.id));
            }
            if r.src_pos.is_none() {
                missing.push(format!("{}: src_pos", r.id));
            }
            if r.split.is_none() {
                missing.push(format!("{}: split", r.id));
            }
            if !missing.is_empty() {
                return Err(Error::MissingMetadata(missing));
            }
            let d = r.resolved_distance().unwrap_or(f64::NAN);
            if !(D4_DISTANCE_RANGE.0..=D4_DISTANCE_RANGE.1).contains(&d) {
                let msg = format!(
                    "{}: distance {d:.3} m outside documented range {:?}",
                    r.id, D4_DISTANCE_RANGE
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        Ok(Self {
            root: manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
            records,
            warnings,
        })
    }

    pub fn split_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.split.clone().unwrap_or_default()).or_insert(0) += 1;
        }
        counts
    }

    pub fn split(&self, name: &str) -> Vec<&RirRecord> {
        self.records
            .iter()
            .filter(|r| r.split.as_deref() == Some(name))
            .collect()
    }

    pub fn load(&self, record: &RirRecord) -> Result<Rir> {
        let mut rir = ingest_real_rir(&self.root.join(&record.wav), record.mic_pos, record.src_pos)?;
        rir.id = record.id.clone();
        Ok(rir)
    }
}
