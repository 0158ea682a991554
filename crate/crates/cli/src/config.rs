//! Run configuration: one TOML file with `[dataset]`, `[model]`, `[train]`,
//! `[sweep]` and `[data]` tables, overlaid with `--set key.path=value`.
//! Unset dataset keys take the constants of the selected recipe.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dist_tse::config::{apply_overrides, layered};
use dist_tse::dataset::{DatasetSpec, Recipe};
use dist_tse::metrics::PesqAdapter;
use dist_tse::model::ModelConfig;
use dist_tse::sweep::SweepConfig;
use dist_tse::train::TrainConfig;
use dist_tse::Error;

/// Environment variable naming the root that relative corpus paths resolve against.
pub const DATA_ROOT_ENV: &str = "DIST_TSE_DATA_ROOT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Speech corpus directory. Unset means `$DIST_TSE_DATA_ROOT` if present,
    /// else the built-in synthetic corpus.
    pub corpus: Option<PathBuf>,
    /// RIR store written by `gen-rir`; unset simulates scenes on the fly.
    pub rir_store: Option<PathBuf>,
    /// Example directory written by `gen-data`; unset generates on the fly.
    pub examples: Option<PathBuf>,
    /// External PESQ scorer; unset leaves PESQ out of reports.
    pub pesq: Option<PesqAdapter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_recipe(Recipe::D1)
    }
}

impl RunConfig {
    pub fn for_recipe(recipe: Recipe) -> Self {
        let dataset = DatasetSpec::recipe(recipe);
        Self {
            sweep: SweepConfig::for_range(dataset.d_max),
            dataset,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }

    /// Defaults for the recipe named in `text` or `overrides`, then the file,
    /// then the overrides. Relative paths in the file resolve against its directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        let mut probe = match &text {
            Some(t) => toml::from_str::<toml::Value>(t).map_err(|e| Error::Config(e.to_string()))?,
            None => toml::Value::Table(Default::default()),
        };
        apply_overrides(&mut probe, overrides)?;
        let recipe = match probe.get("dataset").and_then(|d| d.get("recipe")) {
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => Recipe::D1,
        };
        let defaults = Self::for_recipe(recipe);
        let mut cfg: Self = layered(&defaults, text.as_deref(), overrides)?;
        // the sweep range follows the recipe unless set explicitly
        let sweep_range_set = probe.get("sweep").and_then(|s| s.get("d_max")).is_some();
        if !sweep_range_set {
            cfg.sweep.d_max = cfg.dataset.d_max;
        }
        if let Some(dir) = path.and_then(Path::parent) {
            cfg.resolve_relative(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_relative(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = dir.join(&*inner);
                }
            }
        };
        fix(&mut self.dataset.real_manifest);
        fix(&mut self.data.rir_store);
        fix(&mut self.data.examples);
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.sweep.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Corpus directory after applying `DIST_TSE_DATA_ROOT`.
    pub fn corpus_dir(&self) -> Option<PathBuf> {
        let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        match (&self.data.corpus, root) {
            (Some(p), Some(root)) if p.is_relative() => Some(root.join(p)),
            (Some(p), _) => Some(p.clone()),
            (None, root) => root,
        }
    }
}
