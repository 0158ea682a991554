//! Mixture synthesis: scenes, reverberant rendering, query sampling and
//! on-disk example sets.

mod corpus;
mod render;
mod scene;
mod spec;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use corpus::{SpeechCorpus, SyntheticCorpus, WavCorpus};
pub use render::{fft_convolve, mix, render_reverberant, sample_query, select_targets};
pub use scene::{generate_rirs, sample_scene, simulate_scene, split_sizes, RirGeneration, RirPool, Scene, SceneSpeaker};
pub use spec::{DatasetSpec, ExampleCounts, Geometry, Recipe, RirCounts, Split};

use crate::audio::{load_wav, rms_scale, save_wav, WavEncoding, Waveform};
use crate::error::{Error, Result};
use crate::rir::Rir;
use crate::seed;

/// A rendered mixture before a query is attached.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub id: String,
    pub split: Split,
    pub scene: Scene,
    /// Level-scaled reverberant sources, in speaker order.
    pub sources: Vec<Waveform>,
    pub mixture: Waveform,
    pub speaker_ids: Vec<String>,
}

/// Mixture, query distance and the matching reference.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub scene_id: String,
    pub split: Split,
    pub mixture: Waveform,
    /// Sum of the selected sources; all zeros when nothing is in range.
    pub target: Waveform,
    pub d_q: f64,
    pub presence: bool,
    pub distances: Vec<f64>,
    pub sources: Vec<Waveform>,
    pub r_spk: f64,
}

impl Mixture {
    /// Convolve, level-scale each source independently, then sum in order.
    pub fn render<R: Rng + ?Sized>(
        id: String,
        split: Split,
        scene: Scene,
        rirs: &[Rir],
        utterances: &[Waveform],
        level_db: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        if rirs.len() != utterances.len() || rirs.len() != scene.speakers.len() {
            return Err(Error::shape("one RIR and one utterance per speaker"));
        }
        let sources = rirs
            .iter()
            .zip(utterances)
            .map(|(h, s)| rms_scale(&render_reverberant(s, h)?, level_db, rng))
            .collect::<Result<Vec<_>>>()?;
        let mixture = mix(&sources)?;
        Ok(Self {
            id,
            split,
            scene,
            sources,
            mixture,
            speaker_ids: Vec::new(),
        })
    }

    pub fn distances(&self) -> Vec<f64> {
        self.scene.distances()
    }

    /// Example for an explicit query distance.
    pub fn at(&self, d_q: f64, r_spk: f64) -> Example {
        let distances = self.distances();
        let selected = select_targets(&distances, d_q, r_spk);
        let mut target = Waveform::zeros(self.mixture.len(), self.mixture.sample_rate);
        for &k in &selected {
            for (t, s) in target.samples.iter_mut().zip(&self.sources[k].samples) {
                *t += s;
            }
        }
        Example {
            id: self.id.clone(),
            scene_id: self.scene.id.clone(),
            split: self.split,
            mixture: self.mixture.clone(),
            target,
            d_q,
            presence: !selected.is_empty(),
            distances,
            sources: self.sources.clone(),
            r_spk,
        }
    }

    /// Example with a query drawn for the requested presence label.
    pub fn query<R: Rng + ?Sized>(&self, presence: bool, r_spk: f64, d_max: f64, rng: &mut R) -> Result<Example> {
        let d_q = sample_query(&self.distances(), presence, r_spk, d_max, rng)?;
        Ok(self.at(d_q, r_spk))
    }

    fn admits_both_labels(&self, r_spk: f64, d_max: f64) -> bool {
        let mut scratch = seed::rng(0, &[]);
        let d = self.distances();
        sample_query(&d, true, r_spk, d_max, &mut scratch).is_ok()
            && sample_query(&d, false, r_spk, d_max, &mut scratch).is_ok()
    }
}

impl Example {
    pub fn selected(&self) -> Vec<usize> {
        select_targets(&self.distances, self.d_q, self.r_spk)
    }

    /// Same mixture, different query.
    pub fn requery(&self, d_q: f64) -> Result<Example> {
        if self.sources.len() != self.distances.len() {
            return Err(Error::invalid("requery needs the separated sources"));
        }
        let mut target = Waveform::zeros(self.mixture.len(), self.mixture.sample_rate);
        let selected = select_targets(&self.distances, d_q, self.r_spk);
        for &k in &selected {
            for (t, s) in target.samples.iter_mut().zip(&self.sources[k].samples) {
                *t += s;
            }
        }
        Ok(Example {
            target,
            d_q,
            presence: !selected.is_empty(),
            ..self.clone()
        })
    }
}

/// Where scene impulse responses come from.
#[derive(Debug, Clone)]
pub enum RirSource {
    /// Simulate each scene on demand.
    Simulate,
    /// Draw from a pre-rendered pool (required for measured RIRs).
    Pool(RirPool),
}

/// Mixtures are a pure function of `(seed, split, index)`; queries add a salt
/// so the same mixture can be re-queried every epoch.
#[derive(Clone)]
pub struct ExampleGenerator {
    spec: DatasetSpec,
    corpus: Arc<dyn SpeechCorpus>,
    rirs: RirSource,
}

/// Fresh scenes tried before a mixture is declared impossible.
const MIXTURE_ATTEMPTS: usize = 32;
/// Re-queries of one mixture before giving up on a label.
const QUERY_ATTEMPTS: usize = 8;

impl ExampleGenerator {
    pub fn new(spec: DatasetSpec, corpus: Arc<dyn SpeechCorpus>, rirs: RirSource) -> Result<Self> {
        spec.validate()?;
        if !spec.recipe.is_simulated() && matches!(rirs, RirSource::Simulate) {
            return Err(Error::Config("measured-RIR recipes need an RIR pool".into()));
        }
        for split in Split::ALL {
            if spec.examples.get(split) > 0 && corpus.n_speakers(split) < spec.n_speakers {
                return Err(Error::Config(format!(
                    "{split} split has {} speakers, scenes need {}",
                    corpus.n_speakers(split),
                    spec.n_speakers
                )));
            }
        }
        Ok(Self { spec, corpus, rirs })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn len(&self, split: Split) -> usize {
        self.spec.examples.get(split)
    }

    fn scene(&self, split: Split, index: usize, attempt: usize, id: &str) -> Result<(Scene, Vec<Rir>)> {
        let mut rng = seed::rng(
            self.spec.seed,
            &[seed::tag("scene"), split.index() as u64, index as u64, attempt as u64],
        );
        match &self.rirs {
            RirSource::Simulate => {
                let scene = sample_scene(&self.spec, id, &mut rng)?;
                let rirs = simulate_scene(&scene, &mut rng)?;
                Ok((scene, rirs))
            }
            RirSource::Pool(pool) => pool.draw_scene(split, self.spec.n_speakers, id, &mut rng),
        }
    }

    fn render(&self, split: Split, index: usize, attempt: usize) -> Result<Mixture> {
        let id = format!("{split}-{index:06}");
        let (scene, rirs) = self.scene(split, index, attempt, &id)?;
        let path = [seed::tag("sources"), split.index() as u64, index as u64, attempt as u64];
        let mut rng = seed::rng(self.spec.seed, &path);
        let n = self.corpus.n_speakers(split);
        let k = self.spec.n_speakers;
        if n < k {
            return Err(Error::Config(format!("{split} split has {n} speakers, need {k}")));
        }
        let speakers: Vec<usize> = sample_indices(&mut rng, n, k).into_vec();
        let len = self.spec.clip_samples();
        let utterances = speakers
            .iter()
            .map(|&s| self.corpus.utterance(split, s, len, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut m = Mixture::render(id, split, scene, &rirs, &utterances, self.spec.level_range(), &mut rng)?;
        m.speaker_ids = speakers.iter().map(|&s| self.corpus.speaker_id(split, s)).collect();
        Ok(m)
    }

    /// Mixture `index` of `split`. Scenes that cannot host both a present and
    /// an absent query, or whose sources are silent, are redrawn.
    pub fn mixture(&self, split: Split, index: usize) -> Result<Mixture> {
        let mut last = None;
        for attempt in 0..MIXTURE_ATTEMPTS {
            match self.render(split, index, attempt) {
                Ok(m) if m.admits_both_labels(self.spec.r_spk, self.spec.d_max) => return Ok(m),
                Ok(_) => last = Some(Error::NoFeasibleQuery(format!("{split}-{index}"))),
                Err(e @ Error::InvalidInput(_)) | Err(e @ Error::Constraint { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(Error::Constraint {
            attempts: MIXTURE_ATTEMPTS,
            what: format!(
                "mixture {split}-{index}: {}",
                last.map(|e| e.to_string()).unwrap_or_default()
            ),
        })
    }

    /// Mixture `index` queried for `presence`; `salt` selects the query draw.
    pub fn example(&self, split: Split, index: usize, presence: bool, salt: u64) -> Result<Example> {
        let m = self.mixture(split, index)?;
        self.query(&m, presence, salt)
    }

    pub fn query(&self, m: &Mixture, presence: bool, salt: u64) -> Result<Example> {
        let path = [seed::tag("query"), m.split.index() as u64, seed::tag(&m.id), salt];
        let mut rng = seed::rng(self.spec.seed, &path);
        let mut last = None;
        for _ in 0..QUERY_ATTEMPTS {
            match m.query(presence, self.spec.r_spk, self.spec.d_max, &mut rng) {
                Ok(e) => return Ok(e),
                Err(e @ Error::NoFeasibleQuery(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Deterministic Bernoulli(`ratio`) presence label for `(split, index, salt)`.
    pub fn presence_label(&self, split: Split, index: usize, ratio: f64, salt: u64) -> bool {
        let path = [seed::tag("presence"), split.index() as u64, index as u64, salt];
        seed::rng(self.spec.seed, &path).gen_bool(ratio.clamp(0.0, 1.0))
    }

    /// `count` examples of `split` with Bernoulli(`ratio`) presence labels.
    pub fn examples(&self, split: Split, count: usize, ratio: f64) -> Result<Vec<Example>> {
        let job = |i: usize| self.example(split, i, self.presence_label(split, i, ratio, 0), 0);
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(job).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..count).map(job).collect()
        }
    }
}

/// One line of an example-set manifest; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub scene_id: String,
    pub split: Split,
    pub mixture_wav: String,
    pub target_wav: String,
    #[serde(default)]
    pub source_wavs: Vec<String>,
    pub d_q: f64,
    pub presence: bool,
    pub distances: Vec<f64>,
    pub r_spk: f64,
}

pub const EXAMPLE_MANIFEST: &str = "examples.jsonl";

/// Write the examples as float WAVs under `root/<split>/` and append them to
/// `root/examples.jsonl`.
pub fn write_examples(root: &Path, examples: &[Example]) -> Result<Vec<ExampleRecord>> {
    let mut records = Vec::with_capacity(examples.len());
    for e in examples {
        let dir = root.join(e.split.as_str());
        std::fs::create_dir_all(&dir)?;
        let rel = |suffix: &str| format!("{}/{}_{suffix}.wav", e.split, e.id);
        let mixture_wav = rel("mix");
        let target_wav = rel("target");
        save_wav(root.join(&mixture_wav), &e.mixture, WavEncoding::Float32)?;
        save_wav(root.join(&target_wav), &e.target, WavEncoding::Float32)?;
        let mut source_wavs = Vec::new();
        for (k, s) in e.sources.iter().enumerate() {
            let p = rel(&format!("src{k}"));
            save_wav(root.join(&p), s, WavEncoding::Float32)?;
            source_wavs.push(p);
        }
        records.push(ExampleRecord {
            id: e.id.clone(),
            scene_id: e.scene_id.clone(),
            split: e.split,
            mixture_wav,
            target_wav,
            source_wavs,
            d_q: e.d_q,
            presence: e.presence,
            distances: e.distances.clone(),
            r_spk: e.r_spk,
        });
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(root.join(EXAMPLE_MANIFEST))?;
    let mut out = BufWriter::new(file);
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records)
}

pub fn read_example_records(root: &Path) -> Result<Vec<ExampleRecord>> {
    let path = root.join(EXAMPLE_MANIFEST);
    let reader = BufReader::new(File::open(&path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn load_example(root: &Path, r: &ExampleRecord) -> Result<Example> {
    Ok(Example {
        id: r.id.clone(),
        scene_id: r.scene_id.clone(),
        split: r.split,
        mixture: load_wav(root.join(&r.mixture_wav))?,
        target: load_wav(root.join(&r.target_wav))?,
        d_q: r.d_q,
        presence: r.presence,
        distances: r.distances.clone(),
        sources: r
            .source_wavs
            .iter()
            .map(|p| load_wav(root.join(p)))
            .collect::<Result<Vec<_>>>()?,
        r_spk: r.r_spk,
    })
}

/// Every example of `split` stored under `root`.
pub fn read_examples(root: &Path, split: Split) -> Result<Vec<Example>> {
    read_example_records(root)?
        .iter()
        .filter(|r| r.split == split)
        .map(|r| load_example(root, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        let mut spec = DatasetSpec::recipe(Recipe::D1);
        spec.clip_len = 0.5;
        spec.seed = 3;
        spec.examples = ExampleCounts { train: 4, val: 2, test: 2 };
        spec.corpus_speakers = [8, 4, 4];
        spec
    }

    fn generator(spec: &DatasetSpec) -> ExampleGenerator {
        let corpus = Arc::new(SyntheticCorpus::new(spec.seed, spec.sample_rate, spec.corpus_speakers));
        ExampleGenerator::new(spec.clone(), corpus, RirSource::Simulate).unwrap()
    }

    #[test]
    fn mixture_is_the_sum_of_its_sources() {
        let spec = small_spec();
        let g = generator(&spec);
        let m = g.mixture(Split::Train, 1).unwrap();
        assert_eq!(m.sources.len(), 2);
        for (i, &v) in m.mixture.samples.iter().enumerate() {
            assert_eq!(v, 0.0 + m.sources[0].samples[i] + m.sources[1].samples[i]);
        }
        for s in &m.sources {
            let db = crate::audio::rms_db(s);
            assert!((-25.0 - 1e-9..=-20.0 + 1e-9).contains(&db), "{db}");
        }
    }

    #[test]
    fn examples_are_reproducible_and_labelled_consistently() {
        let spec = small_spec();
        let g = generator(&spec);
        for presence in [true, false] {
            let a = g.example(Split::Val, 0, presence, 7).unwrap();
            let b = g.example(Split::Val, 0, presence, 7).unwrap();
            assert_eq!(a.mixture, b.mixture);
            assert_eq!(a.d_q, b.d_q);
            assert_eq!(a.presence, presence);
            assert_eq!(a.selected().is_empty(), !presence);
            assert_eq!(a.target.is_silent(), !presence);
        }
        let other_salt = g.example(Split::Val, 0, true, 8).unwrap();
        assert_eq!(other_salt.mixture, g.example(Split::Val, 0, true, 7).unwrap().mixture);
    }

    #[test]
    fn requery_rebuilds_the_target() {
        let spec = small_spec();
        let e = generator(&spec).example(Split::Train, 2, true, 0).unwrap();
        let far = e.requery(spec.d_max).unwrap();
        let near_first = e.requery(e.distances[0]).unwrap();
        assert!(near_first.presence);
        assert!(near_first.selected().contains(&0));
        if far.selected().is_empty() {
            assert!(far.target.is_silent());
        }
    }

    #[test]
    fn manifest_round_trip() {
        let spec = small_spec();
        let g = generator(&spec);
        let examples = g.examples(Split::Test, 2, 0.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_examples(dir.path(), &examples).unwrap();
        let back = read_examples(dir.path(), Split::Test).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in examples.iter().zip(&back) {
            assert_eq!(a.d_q, b.d_q);
            assert_eq!(a.presence, b.presence);
            assert_eq!(a.sources.len(), b.sources.len());
            for (x, y) in a.mixture.samples.iter().zip(&b.mixture.samples) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert!(read_examples(dir.path(), Split::Train).unwrap().is_empty());
    }
}
