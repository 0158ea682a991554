//! Speech sources. Speakers are partitioned into disjoint train/val/test pools.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::Split;
use crate::audio::{load_wav, Waveform};
use crate::error::{Error, Result};
use crate::rir::resample;
use crate::seed::{self, Rng as SeedRng};

pub trait SpeechCorpus: Send + Sync {
    fn n_speakers(&self, split: Split) -> usize;

    /// One utterance of `speaker` (index within `split`), exactly `len` samples.
    fn utterance(&self, split: Split, speaker: usize, len: usize, rng: &mut SeedRng) -> Result<Waveform>;

    /// Stable identifier, unique across splits.
    fn speaker_id(&self, split: Split, speaker: usize) -> String;
}

/// Random crop when longer than `len`, zero-pad at the end when shorter.
fn crop_or_pad(w: &Waveform, len: usize, rng: &mut SeedRng) -> Waveform {
    if w.len() > len {
        let start = rng.gen_range(0..=w.len() - len);
        Waveform {
            samples: w.samples[start..start + len].to_vec(),
            sample_rate: w.sample_rate,
        }
    } else {
        w.fit_to(len)
    }
}

/// Vowel formants (F1, F2, F3) in Hz for an adult reference voice.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [530.0, 1840.0, 2480.0],
    [270.0, 2290.0, 3010.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];

#[derive(Debug, Clone, Copy)]
struct Voice {
    f0: f64,
    formant_scale: f64,
    syllable_rate: f64,
    breathiness: f64,
}

/// Procedural voiced-speech corpus: glottal pulse trains through a cascade of
/// formant resonators, syllable envelopes, short pauses and fricative bursts.
/// Each speaker has its own pitch, vocal-tract scale and speaking rate.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub seed: u64,
    pub sample_rate: u32,
    pub speakers: [usize; 3],
}

impl SyntheticCorpus {
    pub fn new(seed: u64, sample_rate: u32, speakers: [usize; 3]) -> Self {
        Self {
            seed,
            sample_rate,
            speakers,
        }
    }

    fn voice(&self, split: Split, speaker: usize) -> Voice {
        let mut rng = seed::rng(self.seed, &[seed::tag("voice"), split.index() as u64, speaker as u64]);
        let low = rng.gen_bool(0.5);
        Voice {
            f0: if low { rng.gen_range(85.0..150.0) } else { rng.gen_range(165.0..260.0) },
            formant_scale: if low { rng.gen_range(0.85..1.0) } else { rng.gen_range(1.05..1.25) },
            syllable_rate: rng.gen_range(3.0..5.5),
            breathiness: rng.gen_range(0.01..0.06),
        }
    }

    fn synthesize(&self, v: Voice, len: usize, rng: &mut SeedRng) -> Vec<f64> {
        let fs = self.sample_rate as f64;
        let mut out = vec![0.0; len];
        let mut pos = (rng.gen_range(0.0..0.15) * fs) as usize;
        let mut phase = 0.0f64;
        let mut state = [[0.0f64; 2]; 3];
        while pos < len {
            let dur = (rng.gen_range(0.6..1.4) / v.syllable_rate * fs) as usize;
            let end = (pos + dur).min(len);
            let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
            let next = VOWELS[rng.gen_range(0..VOWELS.len())];
            let pitch_start = v.f0 * rng.gen_range(0.9..1.15);
            let pitch_end = pitch_start * rng.gen_range(0.85..1.05);
            let gain = rng.gen_range(0.5..1.0);
            if rng.gen_bool(0.35) {
                let burst = ((rng.gen_range(0.03..0.08) * fs) as usize).min(end - pos);
                let mut prev = 0.0;
                for n in pos..pos + burst {
                    let white: f64 = rng.gen_range(-1.0..1.0);
                    out[n] += 0.15 * gain * (white - prev);
                    prev = white;
                }
                pos += burst;
            }
            let n_voiced = end.saturating_sub(pos);
            for i in 0..n_voiced {
                let u = i as f64 / n_voiced.max(1) as f64;
                let f0 = pitch_start + (pitch_end - pitch_start) * u;
                phase += f0 / fs;
                let mut x = if phase >= 1.0 {
                    phase -= 1.0;
                    1.0
                } else {
                    0.0
                };
                x += v.breathiness * rng.gen_range(-1.0..1.0);
                let env = (PI * u).sin().powf(0.6) * gain;
                for (k, st) in state.iter_mut().enumerate() {
                    let f = (vowel[k] + (next[k] - vowel[k]) * u * u) * v.formant_scale;
                    let bw = 60.0 + 40.0 * k as f64;
                    let r = (-PI * bw / fs).exp();
                    let c = 2.0 * r * (2.0 * PI * f / fs).cos();
                    let y = (1.0 - r) * x + c * st[0] - r * r * st[1];
                    st[1] = st[0];
                    st[0] = y;
                    x = y;
                }
                out[pos + i] += env * x;
            }
            pos = end + (rng.gen_range(0.02..0.2) * fs) as usize;
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            out.iter_mut().for_each(|v| *v *= 0.5 / peak);
        }
        out
    }
}

impl SpeechCorpus for SyntheticCorpus {
    fn n_speakers(&self, split: Split) -> usize {
        self.speakers[split.index()]
    }

    fn utterance(&self, split: Split, speaker: usize, len: usize, rng: &mut SeedRng) -> Result<Waveform> {
        if speaker >= self.n_speakers(split) {
            return Err(Error::invalid(format!("speaker {speaker} not in {split} pool")));
        }
        let samples = self.synthesize(self.voice(split, speaker), len, rng);
        Waveform::new(samples, self.sample_rate)
    }

    fn speaker_id(&self, split: Split, speaker: usize) -> String {
        format!("synth-{split}-{speaker:03}")
    }
}

/// Directory of mono WAV utterances. The speaker id is the first path
/// component below the root for nested layouts, otherwise the file-name
/// prefix before the first `-` or `_`.
#[derive(Debug, Clone)]
pub struct WavCorpus {
    pub root: PathBuf,
    pub sample_rate: u32,
    pools: [Vec<(String, Vec<PathBuf>)>; 3],
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_wavs(&p, out)?;
        } else if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    Ok(())
}

fn speaker_of(root: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(root).unwrap_or(file);
    let mut parts = rel.components();
    let first = parts.next().map(|c| c.as_os_str().to_string_lossy().into_owned());
    if parts.next().is_some() {
        return first.unwrap_or_default();
    }
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.split(['-', '_']).next().unwrap_or(&stem).to_string()
}

impl WavCorpus {
    /// Speakers are shuffled with `seed` and dealt into pools of the requested
    /// sizes; if the corpus is smaller, pool sizes shrink proportionally.
    pub fn open(root: &Path, sample_rate: u32, speakers: [usize; 3], seed: u64) -> Result<Self> {
        let mut files = Vec::new();
        collect_wavs(root, &mut files)?;
        let mut by_speaker: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        for f in files {
            by_speaker.entry(speaker_of(root, &f)).or_default().push(f);
        }
        let mut all: Vec<(String, Vec<PathBuf>)> = by_speaker.into_iter().collect();
        if all.len() < 3 {
            return Err(Error::invalid(format!(
                "speech corpus at {} has {} speakers, need at least 3",
                root.display(),
                all.len()
            )));
        }
        all.shuffle(&mut seed::rng(seed, &[seed::tag("speaker-split")]));
        let wanted: usize = speakers.iter().sum();
        let sizes = if all.len() >= wanted {
            speakers
        } else {
            let scale = all.len() as f64 / wanted as f64;
            let val = ((speakers[1] as f64 * scale).floor() as usize).max(1);
            let test = ((speakers[2] as f64 * scale).floor() as usize).max(1);
            [all.len() - val - test, val, test]
        };
        let mut it = all.into_iter();
        let pools = sizes.map(|n| it.by_ref().take(n).collect::<Vec<_>>());
        Ok(Self {
            root: root.to_path_buf(),
            sample_rate,
            pools,
        })
    }
}

impl SpeechCorpus for WavCorpus {
    fn n_speakers(&self, split: Split) -> usize {
        self.pools[split.index()].len()
    }

    fn utterance(&self, split: Split, speaker: usize, len: usize, rng: &mut SeedRng) -> Result<Waveform> {
        let (_, files) = self.pools[split.index()]
            .get(speaker)
            .ok_or_else(|| Error::invalid(format!("speaker {speaker} not in {split} pool")))?;
        let path = files.choose(rng).expect("speaker has files");
        let mut w = load_wav(path)?;
        if w.sample_rate != self.sample_rate {
            w = Waveform::new(resample(&w.samples, w.sample_rate, self.sample_rate), self.sample_rate)?;
        }
        Ok(crop_or_pad(&w, len, rng))
    }

    fn speaker_id(&self, split: Split, speaker: usize) -> String {
        self.pools[split.index()][speaker].0.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{save_wav, WavEncoding};
    use std::collections::HashSet;

    #[test]
    fn synthetic_utterances_are_deterministic_and_voiced() {
        let c = SyntheticCorpus::new(1, 16_000, [4, 2, 2]);
        let a = c.utterance(Split::Train, 0, 16_000, &mut seed::rng(3, &[])).unwrap();
        let b = c.utterance(Split::Train, 0, 16_000, &mut seed::rng(3, &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16_000);
        assert!(a.energy() > 1.0);
        assert!(c.utterance(Split::Val, 2, 100, &mut seed::rng(3, &[])).is_err());
    }

    #[test]
    fn wav_corpus_pools_are_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        for s in 0..10 {
            for u in 0..2 {
                let w = Waveform::new(vec![0.1 * (s + 1) as f64; 400 + u * 100], 16_000).unwrap();
                save_wav(dir.path().join(format!("spk{s}_{u}.wav")), &w, WavEncoding::Float32).unwrap();
            }
        }
        let c = WavCorpus::open(dir.path(), 16_000, [128, 48, 64], 0).unwrap();
        let pools: Vec<HashSet<String>> = Split::ALL
            .iter()
            .map(|&s| (0..c.n_speakers(s)).map(|i| c.speaker_id(s, i)).collect())
            .collect();
        assert_eq!(pools.iter().map(HashSet::len).sum::<usize>(), 10);
        assert!(pools[0].is_disjoint(&pools[1]) && pools[0].is_disjoint(&pools[2]) && pools[1].is_disjoint(&pools[2]));
        let u = c.utterance(Split::Train, 0, 450, &mut seed::rng(0, &[])).unwrap();
        assert_eq!(u.len(), 450);
    }

    #[test]
    fn nested_layout_uses_directory_as_speaker() {
        let root = Path::new("/data");
        assert_eq!(speaker_of(root, Path::new("/data/alice/x_1.wav")), "alice");
        assert_eq!(speaker_of(root, Path::new("/data/bob-07.wav")), "bob");
    }
}
