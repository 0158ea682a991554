//! Optimization loop: Adam, global-norm clipping, plateau LR decay,
//! presence/absence curriculum, per-epoch checkpoints and a JSON-lines log.

mod optim;

pub use optim::{clip_global_norm, global_norm, Adam, AdamConfig, PlateauScheduler};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{save_wav, WavEncoding};
use crate::config;
use crate::dataset::{sample_query, DatasetSpec, Example, ExampleGenerator, Recipe, Split};
use crate::error::{Error, Result};
use crate::metrics::{loss_active_grad, loss_inactive_grad, LossConfig};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, TseModel};
use crate::nn::{Params, Real};
use crate::seed;

/// Inclusive 1-based epoch range with its presence ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub presence_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub patience_epochs: usize,
    pub clip_norm: f64,
    pub epochs: usize,
    pub curriculum: Vec<CurriculumStage>,
    pub seed: u64,
    pub resume_from: Option<PathBuf>,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Cap on optimizer steps per epoch; `None` runs the whole split.
    pub max_steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 14,
            lr0: 1e-3,
            lr_decay_factor: 0.8,
            patience_epochs: 14,
            clip_norm: 5.0,
            epochs: 500,
            curriculum: vec![
                CurriculumStage {
                    first_epoch: 1,
                    last_epoch: 250,
                    presence_ratio: 0.9,
                },
                CurriculumStage {
                    first_epoch: 251,
                    last_epoch: 500,
                    presence_ratio: 0.7,
                },
            ],
            seed: 0,
            resume_from: None,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            max_steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.lr0 > 0.0 && self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("need lr0 > 0 and 0 < lr_decay_factor <= 1".into());
        }
        if !(self.clip_norm > 0.0) || self.patience_epochs == 0 {
            return bad("clip_norm and patience_epochs must be positive".into());
        }
        if self.curriculum.is_empty() {
            return bad("curriculum needs at least one stage".into());
        }
        for s in &self.curriculum {
            if s.first_epoch == 0 || s.first_epoch > s.last_epoch || !(0.0..=1.0).contains(&s.presence_ratio) {
                return bad(format!("invalid curriculum stage {s:?}"));
            }
        }
        self.loss.validate()
    }

    /// Presence ratio in force at `epoch`; past the last stage the last ratio holds.
    pub fn presence_ratio(&self, epoch: usize) -> f64 {
        self.curriculum
            .iter()
            .find(|s| (s.first_epoch..=s.last_epoch).contains(&epoch))
            .or_else(|| self.curriculum.iter().filter(|s| s.last_epoch < epoch).max_by_key(|s| s.last_epoch))
            .or(self.curriculum.first())
            .map(|s| s.presence_ratio)
            .expect("validated curriculum")
    }

    pub fn from_toml_with(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let cfg: Self = config::layered(&Self::default(), text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training objective of one example and its gradient with respect to the
/// estimate: `-loss_active` when a speaker is in range, `+loss_inactive` otherwise.
pub fn signed_loss(e: &Example, estimate: &[f64], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if e.presence {
        let (l, mut g) = loss_active_grad(&e.target.samples, estimate, cfg)?;
        g.iter_mut().for_each(|v| *v = -*v);
        Ok((-l, g))
    } else {
        loss_inactive_grad(&e.mixture.samples, estimate, cfg)
    }
}

/// Supplies training and evaluation examples.
pub trait ExampleSource: Sync {
    fn len(&self, split: Split) -> usize;

    /// Example `index` for `epoch`; the source draws presence at `presence_ratio`
    /// when it can re-query, and returns its stored label otherwise.
    fn train_example(&self, index: usize, epoch: usize, presence_ratio: f64) -> Result<Example>;

    /// Fixed evaluation example.
    fn eval_example(&self, split: Split, index: usize) -> Result<Example>;
}

impl ExampleSource for ExampleGenerator {
    fn len(&self, split: Split) -> usize {
        ExampleGenerator::len(self, split)
    }

    fn train_example(&self, index: usize, epoch: usize, presence_ratio: f64) -> Result<Example> {
        let presence = self.presence_label(Split::Train, index, presence_ratio, epoch as u64);
        self.example(Split::Train, index, presence, epoch as u64)
    }

    fn eval_example(&self, split: Split, index: usize) -> Result<Example> {
        let ratio = self.spec().eval_presence_ratio;
        self.example(split, index, self.presence_label(split, index, ratio, 0), 0)
    }
}

/// In-memory example sets, e.g. loaded from disk or built by hand.
#[derive(Debug, Clone, Default)]
pub struct FrozenExamples {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
    /// Redraw presence and query per epoch (needs stored sources); otherwise
    /// examples are returned exactly as stored.
    pub requery: Option<RequeryPolicy>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequeryPolicy {
    pub seed: u64,
    pub d_max: f64,
}

impl FrozenExamples {
    fn split(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

impl ExampleSource for FrozenExamples {
    fn len(&self, split: Split) -> usize {
        self.split(split).len()
    }

    fn train_example(&self, index: usize, epoch: usize, presence_ratio: f64) -> Result<Example> {
        let e = self
            .train
            .get(index)
            .ok_or_else(|| Error::invalid(format!("no training example {index}")))?;
        let Some(policy) = self.requery else {
            return Ok(e.clone());
        };
        let mut rng = seed::rng(policy.seed, &[seed::tag("requery"), epoch as u64, index as u64]);
        let presence = rng.gen_bool(presence_ratio.clamp(0.0, 1.0));
        match sample_query(&e.distances, presence, e.r_spk, policy.d_max, &mut rng) {
            Ok(d_q) => e.requery(d_q),
            Err(Error::NoFeasibleQuery(_)) => Ok(e.clone()),
            Err(err) => Err(err),
        }
    }

    fn eval_example(&self, split: Split, index: usize) -> Result<Example> {
        self.split(split)
            .get(index)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no {split} example {index}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    /// Mean signed loss over the batch.
    pub loss: f64,
    pub per_example: Vec<f64>,
    pub presence_rows: usize,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Model, optimizer and schedule state.
pub struct Trainer<T> {
    pub model: TseModel<T>,
    pub adam: Adam<T>,
    pub scheduler: PlateauScheduler,
    pub config: TrainConfig,
    /// Last completed epoch.
    pub epoch: usize,
    /// Where a batch is dumped when the loss goes non-finite.
    pub dump_dir: Option<PathBuf>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: TseModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: Adam::new(config.adam, model.param_count(), config.lr0),
            scheduler: PlateauScheduler::new(config.lr0, config.lr_decay_factor, config.patience_epochs),
            model,
            config,
            epoch: 0,
            dump_dir: None,
        })
    }

    /// Continue from a checkpoint written by [`train`].
    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        let ckpt: Checkpoint<T> = load_checkpoint(path)?;
        let mut t = Self::new(ckpt.model, config)?;
        if let Some(state) = ckpt.optimizer {
            if state.first_moment.len() != t.model.param_count() {
                return Err(Error::Schema("optimizer state does not match the model".into()));
            }
            t.adam = Adam::from_state(t.config.adam, state);
        }
        if let Some(s) = ckpt.meta.get("scheduler") {
            t.scheduler = serde_json::from_value(s.clone())?;
        }
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr()
    }

    /// Summed parameter gradients of the batch objective and per-example losses.
    /// Examples run in parallel but are reduced in batch order.
    pub fn batch_gradients(&self, batch: &[Example]) -> Result<(Vec<T>, Vec<f64>)> {
        let cfg = self.config.loss;
        let job = |e: &Example| -> Result<(Option<TseModel<T>>, f64)> {
            let ex = self.model.forward_train(&e.mixture, e.d_q)?;
            let (loss, grad) = signed_loss(e, &ex.output.samples, &cfg)?;
            if !loss.is_finite() {
                return Ok((None, loss));
            }
            let mut g = self.model.gradient_buffer();
            self.model.backward(&ex, &grad, &mut g)?;
            Ok((Some(g), loss))
        };
        #[cfg(feature = "parallel")]
        let results: Vec<Result<(Option<TseModel<T>>, f64)>> = {
            use rayon::prelude::*;
            batch.par_iter().map(job).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<(Option<TseModel<T>>, f64)>> = batch.iter().map(job).collect();
        let mut total: Option<TseModel<T>> = None;
        let mut losses = Vec::with_capacity(batch.len());
        for r in results {
            let (g, loss) = r?;
            losses.push(loss);
            if let Some(g) = g {
                match total.as_mut() {
                    Some(t) => t.accumulate(&g),
                    None => total = Some(g),
                }
            }
        }
        let flat = total.map(|t| t.flatten()).unwrap_or_else(|| vec![T::zero(); self.model.param_count()]);
        Ok((flat, losses))
    }

    /// One optimizer step on the mean batch objective.
    pub fn step(&mut self, batch: &[Example], epoch: usize, step: usize) -> Result<BatchStats> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let (mut grads, losses) = self.batch_gradients(batch)?;
        let scale = T::of(1.0 / batch.len() as f64);
        grads.iter_mut().for_each(|g| *g *= scale);
        let grad_norm = global_norm(&grads);
        if losses.iter().any(|l| !l.is_finite()) || !grad_norm.is_finite() {
            return Err(self.dump_batch(batch, &losses, epoch, step));
        }
        clip_global_norm(&mut grads, self.config.clip_norm);
        let mut params = self.model.flatten();
        self.adam.step(&mut params, &grads)?;
        self.model.load_flat(&params);
        Ok(BatchStats {
            loss: losses.iter().sum::<f64>() / losses.len() as f64,
            per_example: losses,
            presence_rows: batch.iter().filter(|e| e.presence).count(),
            grad_norm,
        })
    }

    fn dump_batch(&self, batch: &[Example], losses: &[f64], epoch: usize, step: usize) -> Error {
        let dir = self
            .dump_dir
            .clone()
            .unwrap_or_else(std::env::temp_dir)
            .join(format!("nonfinite-e{epoch}-s{step}"));
        let write = || -> Result<()> {
            fs::create_dir_all(&dir)?;
            let rows: Vec<serde_json::Value> = batch
                .iter()
                .zip(losses)
                .map(|(e, l)| {
                    serde_json::json!({
                        "id": e.id, "d_q": e.d_q, "presence": e.presence,
                        "distances": e.distances, "loss": l.to_string(),
                    })
                })
                .collect();
            let info = serde_json::json!({ "epoch": epoch, "step": step, "lr": self.lr(), "rows": rows });
            fs::write(dir.join("batch.json"), serde_json::to_string_pretty(&info)?)?;
            for (i, e) in batch.iter().enumerate() {
                save_wav(dir.join(format!("{i:02}_mix.wav")), &e.mixture, WavEncoding::Float32)?;
            }
            Ok(())
        };
        if let Err(e) = write() {
            log::error!("could not write non-finite batch dump: {e}");
        }
        Error::NonFiniteLoss { epoch, step, dump: dir }
    }

    /// Mean signed loss without updating anything.
    pub fn mean_loss(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::invalid("no examples to score"));
        }
        let cfg = self.config.loss;
        let mut sum = 0.0;
        for e in examples {
            let out = self.model.forward(&e.mixture, e.d_q)?;
            sum += signed_loss(e, &out.samples, &cfg)?.0;
        }
        Ok(sum / examples.len() as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.adam.state.clone()),
            epoch: self.epoch,
            meta: serde_json::json!({
                "seed": self.config.seed,
                "train_config": self.config,
                "scheduler": self.scheduler,
                "rng": { "seed": self.config.seed, "next_epoch": self.epoch + 1 },
            }),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub presence_ratio: f64,
    /// Fraction of presence rows actually drawn.
    pub presence_rate: f64,
    pub steps: usize,
    pub seconds: f64,
}

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: Vec<EpochLog>,
    pub best_val: f64,
    pub best_checkpoint: PathBuf,
}

fn validation_loss<T: Real>(trainer: &Trainer<T>, source: &dyn ExampleSource) -> Result<Option<f64>> {
    let n = source.len(Split::Val);
    if n == 0 {
        return Ok(None);
    }
    let val = (0..n)
        .map(|i| source.eval_example(Split::Val, i))
        .collect::<Result<Vec<_>>>()?;
    trainer.mean_loss(&val).map(Some)
}

/// Run epochs `trainer.epoch + 1 ..= epochs`, writing `last.ckpt` every epoch,
/// `best.ckpt` on validation improvement and one log line per epoch. Without
/// a validation split the training loss drives the schedule.
pub fn train<T: Real>(
    trainer: &mut Trainer<T>,
    source: &dyn ExampleSource,
    out_dir: &Path,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainSummary> {
    fs::create_dir_all(out_dir)?;
    trainer.dump_dir.get_or_insert_with(|| out_dir.to_path_buf());
    let n_train = source.len(Split::Train);
    if n_train == 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    let cfg = trainer.config.clone();
    if trainer.epoch == 0 {
        // the untrained model's validation loss is the first reference point
        if let Some(v) = validation_loss(trainer, source)? {
            trainer.scheduler.observe(v);
        }
    }
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let mut log = OpenOptions::new().create(true).append(true).open(out_dir.join(TRAIN_LOG))?;
    let mut epochs = Vec::new();
    for epoch in trainer.epoch + 1..=cfg.epochs {
        let started = Instant::now();
        let ratio = cfg.presence_ratio(epoch);
        let lr = trainer.lr();
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut seed::rng(cfg.seed, &[seed::tag("epoch-order"), epoch as u64]));
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if let Some(cap) = cfg.max_steps_per_epoch {
            batches.truncate(cap);
        }
        let (mut loss_sum, mut rows, mut presence) = (0.0, 0usize, 0usize);
        for (step, idx) in batches.iter().enumerate() {
            let batch = idx
                .iter()
                .map(|&i| source.train_example(i, epoch, ratio))
                .collect::<Result<Vec<_>>>()?;
            let stats = trainer.step(&batch, epoch, step)?;
            loss_sum += stats.per_example.iter().sum::<f64>();
            rows += batch.len();
            presence += stats.presence_rows;
        }
        let train_loss = loss_sum / rows as f64;
        let val_loss = validation_loss(trainer, source)?.unwrap_or(train_loss);
        let improved = trainer.scheduler.observe(val_loss);
        trainer.adam.set_lr(trainer.scheduler.lr);
        trainer.epoch = epoch;
        let ckpt = trainer.checkpoint();
        save_checkpoint(&out_dir.join(LAST_CHECKPOINT), &ckpt)?;
        if improved || !best_path.exists() {
            save_checkpoint(&best_path, &ckpt)?;
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
            presence_ratio: ratio,
            presence_rate: presence as f64 / rows as f64,
            steps: batches.len(),
            seconds: started.elapsed().as_secs_f64(),
        };
        serde_json::to_writer(&mut log, &entry)?;
        log.write_all(b"\n")?;
        log.flush()?;
        log::info!(
            "epoch {epoch}: train {train_loss:.3} val {val_loss:.3} lr {lr:.2e} ({:.1}s)",
            entry.seconds
        );
        on_epoch(&entry);
        epochs.push(entry);
    }
    Ok(TrainSummary {
        epochs,
        best_val: trainer.scheduler.best,
        best_checkpoint: best_path,
    })
}

pub fn read_train_log(path: &Path) -> Result<Vec<EpochLog>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Measured-RIR fine-tuning spec: the D4 inclusion radius is enforced.
pub fn finetune_spec(spec: &DatasetSpec) -> Result<DatasetSpec> {
    if spec.recipe != Recipe::D4 {
        return Err(Error::Config(format!("fine-tuning expects the D4 recipe, got {:?}", spec.recipe)));
    }
    let mut out = spec.clone();
    out.r_spk = DatasetSpec::recipe(Recipe::D4).r_spk;
    Ok(out)
}

/// Trainer initialized from pre-trained parameters with a fresh optimizer.
/// The checkpoint must have been trained with `model_config`.
pub fn finetune<T: Real>(checkpoint: &Path, model_config: &ModelConfig, config: TrainConfig) -> Result<Trainer<T>> {
    let ckpt: Checkpoint<T> = load_checkpoint(checkpoint)?;
    if &ckpt.model.config != model_config {
        return Err(Error::Schema(format!(
            "checkpoint model config {:?} does not match requested {:?}",
            ckpt.model.config, model_config
        )));
    }
    Trainer::new(ckpt.model, config)
}
