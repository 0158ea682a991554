use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{distance, Position, Rir, RirRoom, RoomSpec};
use crate::audio::{load_wav, save_wav, WavEncoding, Waveform};
use crate::error::{Error, Result};

/// One line of an RIR store manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirRecord {
    pub id: String,
    /// WAV path relative to the manifest directory.
    pub wav: String,
    pub mic_pos: Option<Position>,
    pub src_pos: Option<Position>,
    pub distance_m: Option<f64>,
    pub rt60_s: Option<f64>,
    pub room_dims: Option<[f64; 3]>,
    pub split: Option<String>,
}

impl RirRecord {
    pub fn resolved_distance(&self) -> Option<f64> {
        self.distance_m.or_else(|| match (&self.mic_pos, &self.src_pos) {
            (Some(m), Some(s)) => Some(distance(m, s)),
            _ => None,
        })
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<RirRecord>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[RirRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Directory of RIR WAVs plus `manifest.jsonl`.
#[derive(Debug, Clone)]
pub struct RirStore {
    pub root: PathBuf,
    pub records: Vec<RirRecord>,
}

impl RirStore {
    pub const MANIFEST: &'static str = "manifest.jsonl";

    /// Write every `(rir, split)` pair as a float WAV plus one manifest line.
    pub fn write(root: &Path, rirs: &[(Rir, String)]) -> Result<Self> {
        fs::create_dir_all(root.join("wav"))?;
        let mut records = Vec::with_capacity(rirs.len());
        for (rir, split) in rirs {
            let rel = format!("wav/{}.wav", rir.id);
            let w = Waveform::new(rir.ir.clone(), rir.sample_rate)?;
            save_wav(root.join(&rel), &w, WavEncoding::Float32)?;
            let (rt60, dims) = match &rir.room {
                RirRoom::Simulated(r) => (Some(r.rt60), Some(r.dims)),
                RirRoom::Real => (None, None),
            };
            records.push(RirRecord {
                id: rir.id.clone(),
                wav: rel,
                mic_pos: Some(rir.mic_pos),
                src_pos: Some(rir.src_pos),
                distance_m: Some(rir.distance),
                rt60_s: rt60,
                room_dims: dims,
                split: Some(split.clone()),
            });
        }
        write_manifest(&root.join(Self::MANIFEST), &records)?;
        Ok(Self {
            root: root.to_path_buf(),
            records,
        })
    }

    pub fn open(root: &Path) -> Result<Self> {
        Ok(Self {
            root: root.to_path_buf(),
            records: read_manifest(&root.join(Self::MANIFEST))?,
        })
    }

    pub fn load(&self, record: &RirRecord) -> Result<Rir> {
        let w = load_wav(self.root.join(&record.wav))?;
        let (Some(mic), Some(src)) = (record.mic_pos, record.src_pos) else {
            return Err(Error::MissingMetadata(vec!["mic_pos".into(), "src_pos".into()]));
        };
        let room = match (record.room_dims, record.rt60_s) {
            (Some(dims), Some(rt60)) => RirRoom::Simulated(RoomSpec { dims, rt60 }),
            _ => RirRoom::Real,
        };
        Ok(Rir {
            id: record.id.clone(),
            ir: w.samples,
            sample_rate: w.sample_rate,
            mic_pos: mic,
            src_pos: src,
            distance: record.resolved_distance().unwrap_or_else(|| distance(&mic, &src)),
            room,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rir::{simulate_rir, SimOptions};
    use crate::seed;

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let room = RoomSpec::new([7.0, 8.0, 3.0], 0.2).unwrap();
        let rir = simulate_rir(
            &room,
            &[2.0, 2.0, 1.5],
            &[3.5, 4.0, 1.1],
            &SimOptions::default(),
            "r0",
            &mut seed::rng(0, &[]),
        )
        .unwrap();
        let store = RirStore::write(dir.path(), &[(rir.clone(), "train".into())]).unwrap();
        let back = RirStore::open(dir.path()).unwrap();
        assert_eq!(back.records, store.records);
        let loaded = back.load(&back.records[0]).unwrap();
        assert_eq!(loaded.room, rir.room);
        assert!((loaded.distance - rir.distance).abs() < 1e-12);
        for (a, b) in loaded.ir.iter().zip(&rir.ir) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
