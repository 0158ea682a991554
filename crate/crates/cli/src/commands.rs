use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context as _};
use serde::Serialize;

use dist_tse::audio::{load_wav, Waveform};
use dist_tse::dataset::{
    generate_rirs, read_examples, write_examples, Example, ExampleGenerator, RirPool, RirSource, SpeechCorpus,
    Split, SyntheticCorpus, WavCorpus, EXAMPLE_MANIFEST,
};
use dist_tse::metrics::{
    evaluate, repetitions, Extractor, ModelExtractor, NullExtractor, OracleExtractor, PassthroughExtractor,
    EVAL_REPETITIONS,
};
use dist_tse::model::{load_checkpoint, TseModel};
use dist_tse::rir::{RealRirSet, RirStore};
use dist_tse::sweep::{detect_peaks, mae_eval, sweep as run_sweep, Peak, SweepCurve};
use dist_tse::train::{read_train_log, train as run_train, FrozenExamples, RequeryPolicy, Trainer, TRAIN_LOG};

use crate::config::RunConfig;
use crate::plot;
use crate::{ExtractorKind, Failure};

type CmdResult = Result<(), Failure>;

pub struct Context {
    pub command: &'static str,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: PathBuf,
    pub cfg: RunConfig,
}

/// Everything needed to repeat a run: the resolved config is also written
/// next to it as `config.toml`.
#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'static str,
    git_revision: Option<String>,
    config_path: Option<&'a Path>,
    overrides: &'a [String],
    seed: u64,
    out_dir: &'a Path,
    resolved_config: &'a str,
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

impl Context {
    fn prepare_out(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let resolved = self.cfg.to_toml();
        fs::write(self.out.join("config.toml"), &resolved)?;
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            git_revision: git_revision(),
            config_path: self.config_path.as_deref(),
            overrides: &self.overrides,
            seed: self.cfg.dataset.seed,
            out_dir: &self.out,
            resolved_config: "config.toml",
        };
        fs::write(self.out.join("run_manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    fn corpus(&self) -> anyhow::Result<Arc<dyn SpeechCorpus>> {
        let spec = &self.cfg.dataset;
        Ok(match self.cfg.corpus_dir() {
            Some(dir) => {
                log::info!("speech corpus: {}", dir.display());
                Arc::new(WavCorpus::open(&dir, spec.sample_rate, spec.corpus_speakers, spec.seed)?)
            }
            None => {
                log::info!("speech corpus: synthetic");
                Arc::new(SyntheticCorpus::new(spec.seed, spec.sample_rate, spec.corpus_speakers))
            }
        })
    }

    fn rir_source(&self) -> anyhow::Result<RirSource> {
        let spec = &self.cfg.dataset;
        if !spec.recipe.is_simulated() {
            let manifest = spec.real_manifest.as_ref().ok_or_else(|| dist_tse::Error::Config("D4 needs real_manifest".into()))?;
            let set = RealRirSet::open(manifest)?;
            for w in &set.warnings {
                log::warn!("{w}");
            }
            return Ok(RirSource::Pool(RirPool::from_real(&set)?));
        }
        let Some(root) = &self.cfg.data.rir_store else {
            return Ok(RirSource::Simulate);
        };
        let store = RirStore::open(root)?;
        let mut rirs = Vec::with_capacity(store.records.len());
        for r in &store.records {
            let split = r
                .split
                .as_deref()
                .ok_or_else(|| anyhow!("RIR {} has no split", r.id))
                .and_then(|s| Ok(Split::parse(s)?))?;
            rirs.push((store.load(r)?, split));
        }
        Ok(RirSource::Pool(RirPool::new(rirs)))
    }

    fn generator(&self) -> anyhow::Result<ExampleGenerator> {
        Ok(ExampleGenerator::new(self.cfg.dataset.clone(), self.corpus()?, self.rir_source()?)?)
    }

    /// Stored examples when `data.examples` is set, else freshly generated ones.
    fn split_examples(&self, split: Split, limit: Option<usize>) -> anyhow::Result<Vec<Example>> {
        let mut out = match &self.cfg.data.examples {
            Some(dir) => read_examples(dir, split)?,
            None => {
                let g = self.generator()?;
                let n = limit.unwrap_or(usize::MAX).min(g.len(split));
                g.examples(split, n, self.cfg.dataset.eval_presence_ratio)?
            }
        };
        if let Some(n) = limit {
            out.truncate(n);
        }
        if out.is_empty() {
            return Err(dist_tse::Error::Config(format!("{split} split is empty")).into());
        }
        Ok(out)
    }

    fn model(&self, checkpoint: Option<&Path>) -> anyhow::Result<TseModel<f32>> {
        let path = checkpoint.ok_or_else(|| dist_tse::Error::Config("--checkpoint is required for the model extractor".into()))?;
        Ok(load_checkpoint::<f32>(path).with_context(|| format!("loading {}", path.display()))?.model)
    }
}

pub fn gen_rir(ctx: &Context) -> CmdResult {
    let spec = &ctx.cfg.dataset;
    if !spec.recipe.is_simulated() {
        return Err(Failure::Config("gen-rir simulates RIRs; measured recipes are read from real_manifest".into()));
    }
    ctx.prepare_out()?;
    let generated = generate_rirs(spec)?;
    let labelled: Vec<_> = generated
        .rirs
        .iter()
        .map(|(r, s)| (r.clone(), s.as_str().to_string()))
        .collect();
    let root = ctx.out.join("rirs");
    RirStore::write(&root, &labelled)?;
    let [train, val, test] = generated.split_counts();
    let summary = serde_json::json!({
        "requested": generated.requested,
        "realized": generated.realized(),
        "splits": { "train": train, "val": val, "test": test },
        "store": root,
    });
    println!("{}", serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?);
    if generated.realized() < generated.requested {
        log::warn!(
            "{} of {} positions failed the placement constraints",
            generated.requested - generated.realized(),
            generated.requested
        );
    }
    Ok(())
}

pub fn gen_data(ctx: &Context) -> CmdResult {
    let root = ctx.out.join("examples");
    if root.join(EXAMPLE_MANIFEST).exists() {
        return Err(Failure::Runtime(anyhow!("{} already holds a dataset", root.display())));
    }
    ctx.prepare_out()?;
    let g = ctx.generator()?;
    let mut counts = serde_json::Map::new();
    for split in Split::ALL {
        let n = g.len(split);
        let ratio = match split {
            Split::Train => ctx.cfg.train.presence_ratio(1),
            _ => ctx.cfg.dataset.eval_presence_ratio,
        };
        let examples = g.examples(split, n, ratio)?;
        let present = examples.iter().filter(|e| e.presence).count();
        write_examples(&root, &examples)?;
        counts.insert(split.to_string(), serde_json::json!({ "examples": n, "present": present }));
        log::info!("{split}: {n} examples, {present} with a speaker in range");
    }
    println!("{}", serde_json::to_string_pretty(&counts).map_err(anyhow::Error::from)?);
    Ok(())
}

pub fn train(ctx: &Context) -> CmdResult {
    ctx.prepare_out()?;
    let tc = ctx.cfg.train.clone();
    let mut trainer = match &tc.resume_from {
        Some(path) => Trainer::<f32>::resume(path, tc.clone())?,
        None => Trainer::new(TseModel::<f32>::new(ctx.cfg.model, tc.seed)?, tc.clone())?,
    };
    let report = |e: &dist_tse::train::EpochLog| {
        println!(
            "epoch {:>4}  train {:>8.3}  val {:>8.3}  lr {:.2e}  presence {:.2}  {:.1}s",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.presence_rate, e.seconds
        )
    };
    let summary = match &ctx.cfg.data.examples {
        Some(dir) => {
            let source = FrozenExamples {
                train: read_examples(dir, Split::Train)?,
                val: read_examples(dir, Split::Val)?,
                test: Vec::new(),
                requery: Some(RequeryPolicy {
                    seed: tc.seed,
                    d_max: ctx.cfg.dataset.d_max,
                }),
            };
            run_train(&mut trainer, &source, &ctx.out, report)?
        }
        None => run_train(&mut trainer, &ctx.generator()?, &ctx.out, report)?,
    };
    println!(
        "best validation loss {:.3}; checkpoint {}",
        summary.best_val,
        summary.best_checkpoint.display()
    );
    Ok(())
}

fn extractor(ctx: &Context, kind: ExtractorKind, checkpoint: Option<&Path>) -> anyhow::Result<Box<dyn Extractor>> {
    Ok(match kind {
        ExtractorKind::Model => Box::new(ModelExtractor { model: ctx.model(checkpoint)? }),
        ExtractorKind::Oracle => Box::new(OracleExtractor),
        ExtractorKind::Passthrough => Box::new(PassthroughExtractor),
        ExtractorKind::Null => Box::new(NullExtractor),
    })
}

pub fn eval(ctx: &Context, kind: ExtractorKind, checkpoint: Option<&Path>) -> CmdResult {
    let ex = extractor(ctx, kind, checkpoint)?;
    ctx.prepare_out()?;
    let test = ctx.split_examples(Split::Test, None)?;
    let passes = repetitions(&test, EVAL_REPETITIONS, ctx.cfg.dataset.seed, ctx.cfg.dataset.d_max)?;
    let report = evaluate(ex.as_ref(), &passes, &ctx.cfg.train.loss, ctx.cfg.data.pesq.as_ref())?;
    report.write(&ctx.out)?;
    print!("{}", report.to_csv());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepEstimate {
    id: String,
    peaks: Vec<Peak>,
    estimate: Option<f64>,
    true_distances: Vec<f64>,
}

fn write_curve(dir: &Path, stem: &str, curve: &SweepCurve, peaks: &[Peak], truths: &[f64]) -> anyhow::Result<()> {
    fs::write(dir.join(format!("{stem}.csv")), curve.to_csv())?;
    plot::sweep_curve(curve, peaks, truths, &dir.join(format!("{stem}.svg")))
}

pub fn sweep(
    ctx: &Context,
    kind: ExtractorKind,
    checkpoint: Option<&Path>,
    input: Option<&Path>,
    limit: usize,
) -> CmdResult {
    let cfg = ctx.cfg.sweep;
    let model = match kind {
        ExtractorKind::Model => Some(ctx.model(checkpoint)?),
        _ => None,
    };
    ctx.prepare_out()?;
    let min_prom = cfg.peak_min_prominence;

    if let Some(path) = input {
        let y = load_wav(path).with_context(|| format!("reading {}", path.display()))?;
        let extract = |w: &Waveform, d: f64| -> dist_tse::Result<Waveform> {
            match (kind, &model) {
                (ExtractorKind::Model, Some(m)) => m.forward(w, d),
                (ExtractorKind::Passthrough, _) => Ok(w.clone()),
                (ExtractorKind::Null, _) => Ok(Waveform::zeros(w.len(), w.sample_rate)),
                _ => Err(dist_tse::Error::Config("the oracle needs reference sources; sweep the test split instead".into())),
            }
        };
        let curve = run_sweep(&y, &cfg, extract)?;
        let peaks = detect_peaks(&curve, min_prom);
        write_curve(&ctx.out, "curve", &curve, &peaks, &[])?;
        let est = SweepEstimate {
            id: path.display().to_string(),
            estimate: peaks.first().map(|p| p.distance),
            peaks,
            true_distances: Vec::new(),
        };
        fs::write(ctx.out.join("estimates.json"), serde_json::to_string_pretty(&[&est]).map_err(anyhow::Error::from)?)
            .map_err(anyhow::Error::from)?;
        print!("{}", curve.to_csv());
        return Ok(());
    }

    let examples = ctx.split_examples(Split::Test, Some(limit))?;
    let curves_dir = ctx.out.join("curves");
    fs::create_dir_all(&curves_dir).map_err(anyhow::Error::from)?;
    let mut estimates = Vec::with_capacity(examples.len());
    for e in &examples {
        let extract = |w: &Waveform, d: f64| -> dist_tse::Result<Waveform> {
            match (kind, &model) {
                (ExtractorKind::Model, Some(m)) => m.forward(w, d),
                (ExtractorKind::Oracle, _) => Ok(e.requery(d)?.target),
                (ExtractorKind::Passthrough, _) => Ok(w.clone()),
                _ => Ok(Waveform::zeros(w.len(), w.sample_rate)),
            }
        };
        let curve = run_sweep(&e.mixture, &cfg, extract)?;
        let peaks = detect_peaks(&curve, min_prom);
        write_curve(&curves_dir, &e.id, &curve, &peaks, &e.distances)?;
        estimates.push(SweepEstimate {
            id: e.id.clone(),
            estimate: peaks.first().map(|p| p.distance),
            peaks,
            true_distances: e.distances.clone(),
        });
    }
    let est: Vec<Option<f64>> = estimates.iter().map(|e| e.estimate).collect();
    let truths: Vec<Vec<f64>> = estimates.iter().map(|e| e.true_distances.clone()).collect();
    let mae = mae_eval(&est, &truths)?;
    let out = serde_json::json!({ "mae": mae, "mixtures": estimates });
    fs::write(ctx.out.join("estimates.json"), serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)?)
        .map_err(anyhow::Error::from)?;
    println!(
        "MAE {:.3} m over {} mixtures ({} without a peak)",
        mae.mae, mae.scored, mae.skipped
    );
    Ok(())
}

pub fn plot(ctx: &Context, log: Option<&Path>, curve: Option<&Path>) -> CmdResult {
    if log.is_none() && curve.is_none() {
        return Err(Failure::Config("plot needs --log and/or --curve".into()));
    }
    ctx.prepare_out()?;
    if let Some(path) = log {
        let path = if path.is_dir() { path.join(TRAIN_LOG) } else { path.to_path_buf() };
        let entries = read_train_log(&path).with_context(|| format!("reading {}", path.display()))?;
        let out = ctx.out.join("training.svg");
        plot::training_curves(&entries, &out)?;
        println!("{}", out.display());
    }
    if let Some(path) = curve {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let parsed = plot::read_curve_csv(&text)?;
        let peaks = detect_peaks(&parsed, ctx.cfg.sweep.peak_min_prominence);
        let out = ctx.out.join("sweep.svg");
        plot::sweep_curve(&parsed, &peaks, &[], &out)?;
        println!("{}", out.display());
    }
    Ok(())
}
