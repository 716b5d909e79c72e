//! Experiment configuration files.
//!
//! Line-oriented `key = value` pairs under `[section]` headers; `#` and `;`
//! start comment lines. Every key is optional and defaults to the values
//! below. Unknown sections or keys are rejected.
//!
//! ```text
//! [data]
//! kind = blobs            # blobs | linreg | csv
//! n = 1024
//! feature_dim = 20
//! classes = 10
//! separation = 3.0
//! noise_sd = 0.1          # linreg only
//! path = data.csv         # csv only
//! seed = 0
//! train_fraction = 0.8333333333333334
//! normalize = false
//!
//! [model]
//! kind = logistic         # linear | logistic | mlp
//! hidden = 32
//!
//! [ordering]
//! variants = RandomReshuffle, MeanBalance
//! kernel = deterministic  # deterministic | probabilistic
//! c_bound = auto          # positive number or `auto`
//! kernel_seed = 0
//! depth = 5
//!
//! [optim]
//! learning_rate = 0.001
//! momentum = 0.9
//! weight_decay = 0.01
//! batch_size = 16
//! epochs = 30
//!
//! [experiment]
//! seeds = 0, 7, 42
//! output_dir = out
//! workers = 0             # 0 = one per core
//! ```

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use grab_core::{KernelConfig, KernelKind, ModelKind, OptimConfig, Variant};
use ini::Ini;

use crate::data::{self, DataError, Dataset, Task};
use crate::trainer::{OrderingSpec, RunConfig};

/// Environment variable that overrides `experiment.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "GRAB_OUTPUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("key `{key}` outside any section")]
    Unsectioned { key: String },
    #[error("duplicate key `{0}`")]
    Duplicate(String),
    #[error("invalid value for `{field}`: {msg}")]
    Field { field: String, msg: String },
    #[error("dataset: {0}")]
    Data(#[from] DataError),
}

fn field_err(field: &str, msg: impl Display) -> ConfigError {
    ConfigError::Field { field: field.to_string(), msg: msg.to_string() }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs { n: usize, feature_dim: usize, classes: usize, separation: f64 },
    Linreg { n: usize, feature_dim: usize, noise_sd: f64 },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub seed: u64,
    pub train_fraction: f64,
    pub normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Linear,
    /// Binary for two classes, softmax otherwise.
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingConfig {
    pub variants: Vec<Variant>,
    pub kernel: KernelKind,
    pub c_bound: Option<f64>,
    pub kernel_seed: u64,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelChoice,
    pub hidden: usize,
    pub ordering: OrderingConfig,
    pub optim: OptimConfig,
    pub experiment: ExperimentSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig {
                source: DataSource::Blobs { n: 1024, feature_dim: 20, classes: 10, separation: 3.0 },
                seed: 0,
                train_fraction: 5.0 / 6.0,
                normalize: false,
            },
            model: ModelChoice::Logistic,
            hidden: 32,
            ordering: OrderingConfig {
                variants: vec![Variant::RandomReshuffle, Variant::MeanBalance],
                kernel: KernelKind::Deterministic,
                c_bound: None,
                kernel_seed: 0,
                depth: 5,
            },
            optim: OptimConfig::default(),
            experiment: ExperimentSettings {
                seeds: vec![0, 7, 42],
                output_dir: PathBuf::from("out"),
                workers: 0,
            },
        }
    }
}

/// Command-line overrides; each `Some` wins over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub workers: Option<usize>,
    pub variants: Option<Vec<Variant>>,
}

const DATA_KEYS: &[&str] = &[
    "kind", "n", "feature_dim", "classes", "separation", "noise_sd", "path", "seed",
    "train_fraction", "normalize",
];
const MODEL_KEYS: &[&str] = &["kind", "hidden"];
const ORDERING_KEYS: &[&str] = &["variants", "kernel", "c_bound", "kernel_seed", "depth"];
const OPTIM_KEYS: &[&str] = &["learning_rate", "momentum", "weight_decay", "batch_size", "epochs"];
const EXPERIMENT_KEYS: &[&str] = &["seeds", "output_dir", "workers"];

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    Some(match section {
        "data" => DATA_KEYS,
        "model" => MODEL_KEYS,
        "ordering" => ORDERING_KEYS,
        "optim" => OPTIM_KEYS,
        "experiment" => EXPERIMENT_KEYS,
        _ => return None,
    })
}

/// Flattened `section.key -> value` view with checked parsing.
struct Raw(Vec<(String, String)>);

impl Raw {
    fn get(&self, field: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == field).map(|(_, v)| v.as_str())
    }

    fn parse<T: FromStr>(&self, field: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        match self.get(field) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| field_err(field, format!("{v:?}: {e}"))),
        }
    }

    fn list<T: FromStr>(&self, field: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError>
    where
        T::Err: Display,
    {
        match self.get(field) {
            None => Ok(default),
            Some(v) => parse_list(v).map_err(|e| field_err(field, e)),
        }
    }
}

pub fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut raw = Vec::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((key, _)) = props.iter().next() {
                    return Err(ConfigError::Unsectioned { key: key.to_string() });
                }
                continue;
            };
            let known =
                known_keys(section).ok_or_else(|| ConfigError::UnknownSection(section.into()))?;
            for (key, value) in props.iter() {
                if !known.contains(&key) {
                    return Err(ConfigError::UnknownKey {
                        section: section.into(),
                        key: key.into(),
                    });
                }
                let field = format!("{section}.{key}");
                if raw.iter().any(|(k, _): &(String, String)| *k == field) {
                    return Err(ConfigError::Duplicate(field));
                }
                raw.push((field, value.trim().to_string()));
            }
        }
        let cfg = Self::from_raw(&Raw(raw))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.into(), source })?;
        text.parse()
    }

    fn from_raw(raw: &Raw) -> Result<Self, ConfigError> {
        let def = Self::default();
        let (n0, f0, c0, s0) = (1024, 20, 10, 3.0);
        let source = match raw.get("data.kind").unwrap_or("blobs") {
            "blobs" => DataSource::Blobs {
                n: raw.parse("data.n", n0)?,
                feature_dim: raw.parse("data.feature_dim", f0)?,
                classes: raw.parse("data.classes", c0)?,
                separation: raw.parse("data.separation", s0)?,
            },
            "linreg" => DataSource::Linreg {
                n: raw.parse("data.n", n0)?,
                feature_dim: raw.parse("data.feature_dim", f0)?,
                noise_sd: raw.parse("data.noise_sd", 0.1)?,
            },
            "csv" => DataSource::Csv {
                path: raw
                    .get("data.path")
                    .map(PathBuf::from)
                    .ok_or_else(|| field_err("data.path", "required when data.kind = csv"))?,
            },
            other => return Err(field_err("data.kind", format!("unknown kind {other:?}"))),
        };
        let model = match raw.get("model.kind").unwrap_or("logistic") {
            "linear" => ModelChoice::Linear,
            "logistic" => ModelChoice::Logistic,
            "mlp" => ModelChoice::Mlp,
            other => return Err(field_err("model.kind", format!("unknown kind {other:?}"))),
        };
        let kernel = match raw.get("ordering.kernel").unwrap_or("deterministic") {
            "deterministic" => KernelKind::Deterministic,
            "probabilistic" => KernelKind::Probabilistic,
            other => return Err(field_err("ordering.kernel", format!("unknown kernel {other:?}"))),
        };
        let c_bound = match raw.get("ordering.c_bound") {
            None | Some("auto") => None,
            Some(_) => Some(raw.parse("ordering.c_bound", 0.0)?),
        };
        Ok(Self {
            data: DataConfig {
                source,
                seed: raw.parse("data.seed", def.data.seed)?,
                train_fraction: raw.parse("data.train_fraction", def.data.train_fraction)?,
                normalize: raw.parse("data.normalize", def.data.normalize)?,
            },
            model,
            hidden: raw.parse("model.hidden", def.hidden)?,
            ordering: OrderingConfig {
                variants: raw.list("ordering.variants", def.ordering.variants)?,
                kernel,
                c_bound,
                kernel_seed: raw.parse("ordering.kernel_seed", def.ordering.kernel_seed)?,
                depth: raw.parse("ordering.depth", def.ordering.depth)?,
            },
            optim: OptimConfig {
                learning_rate: raw.parse("optim.learning_rate", def.optim.learning_rate)?,
                momentum: raw.parse("optim.momentum", def.optim.momentum)?,
                weight_decay: raw.parse("optim.weight_decay", def.optim.weight_decay)?,
                batch_size: raw.parse("optim.batch_size", def.optim.batch_size)?,
                epochs: raw.parse("optim.epochs", def.optim.epochs)?,
            },
            experiment: ExperimentSettings {
                seeds: raw.list("experiment.seeds", def.experiment.seeds)?,
                output_dir: raw
                    .get("experiment.output_dir")
                    .map_or(def.experiment.output_dir, PathBuf::from),
                workers: raw.parse("experiment.workers", def.experiment.workers)?,
            },
        })
    }

    /// Applies CLI flags, then the output-directory environment variable
    /// (flags win), and revalidates.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            self.experiment.output_dir = PathBuf::from(dir);
        }
        if let Some(d) = &o.output_dir {
            self.experiment.output_dir = d.clone();
        }
        if let Some(s) = &o.seeds {
            self.experiment.seeds = s.clone();
        }
        if let Some(e) = o.epochs {
            self.optim.epochs = e;
        }
        if let Some(w) = o.workers {
            self.experiment.workers = w;
        }
        if let Some(v) = &o.variants {
            self.ordering.variants = v.clone();
        }
        self.validate()
    }

    /// Checks every field; the error names the first offending one.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.data.source {
            DataSource::Blobs { n, feature_dim, classes, separation } => {
                if *classes < 2 {
                    return Err(field_err("data.classes", "must be at least 2"));
                }
                if n < classes {
                    return Err(field_err("data.n", "must be at least data.classes"));
                }
                if *feature_dim == 0 {
                    return Err(field_err("data.feature_dim", "must be at least 1"));
                }
                if !(*separation >= 0.0) || !separation.is_finite() {
                    return Err(field_err("data.separation", "must be a finite number >= 0"));
                }
            }
            DataSource::Linreg { n, feature_dim, noise_sd } => {
                if *n == 0 {
                    return Err(field_err("data.n", "must be at least 1"));
                }
                if *feature_dim == 0 {
                    return Err(field_err("data.feature_dim", "must be at least 1"));
                }
                if !(*noise_sd >= 0.0) || !noise_sd.is_finite() {
                    return Err(field_err("data.noise_sd", "must be a finite number >= 0"));
                }
            }
            DataSource::Csv { path } => {
                if !path.exists() {
                    return Err(field_err("data.path", format!("{} does not exist", path.display())));
                }
            }
        }
        let tf = self.data.train_fraction;
        if !(tf > 0.0 && tf <= 1.0) {
            return Err(field_err("data.train_fraction", "must lie in (0, 1]"));
        }
        match (&self.data.source, self.model) {
            (DataSource::Linreg { .. }, ModelChoice::Logistic | ModelChoice::Mlp) => {
                return Err(field_err("model.kind", "classifier on a regression dataset"));
            }
            (DataSource::Blobs { .. }, ModelChoice::Linear) => {
                return Err(field_err("model.kind", "linear regression on a classification dataset"));
            }
            _ => {}
        }
        if self.model == ModelChoice::Mlp && self.hidden == 0 {
            return Err(field_err("model.hidden", "must be at least 1"));
        }
        if self.ordering.variants.is_empty() {
            return Err(field_err("ordering.variants", "list is empty"));
        }
        let mut seen = self.ordering.variants.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.ordering.variants.len() {
            return Err(field_err("ordering.variants", "variant listed twice"));
        }
        if let Some(c) = self.ordering.c_bound {
            if !(c > 0.0) || !c.is_finite() {
                return Err(field_err("ordering.c_bound", "must be a positive number or `auto`"));
            }
        }
        let recursive = self.ordering.variants.iter().any(|v| v.is_recursive());
        if recursive && !(1..=20).contains(&self.ordering.depth) {
            return Err(field_err("ordering.depth", "must lie in 1..=20"));
        }
        if let Err(e) = self.optim.validate() {
            let msg = e.to_string();
            let key = OPTIM_KEYS.iter().find(|k| msg.contains(*k)).unwrap_or(&"optim");
            return Err(field_err(&format!("optim.{key}"), msg));
        }
        if self.ordering.variants.contains(&Variant::RecursivePairBalance)
            && !self.optim.batch_size.is_power_of_two()
        {
            return Err(field_err(
                "optim.batch_size",
                "RecursivePairBalance needs a power-of-2 batch size",
            ));
        }
        if self.experiment.seeds.is_empty() {
            return Err(field_err("experiment.seeds", "list is empty"));
        }
        let mut seeds = self.experiment.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.experiment.seeds.len() {
            return Err(field_err("experiment.seeds", "seed listed twice"));
        }
        Ok(())
    }

    /// Builds (or loads) the dataset and splits it into train and test.
    pub fn load_dataset(&self) -> Result<(Dataset, Dataset), ConfigError> {
        let mut ds = match &self.data.source {
            DataSource::Blobs { n, feature_dim, classes, separation } => {
                data::gen_blobs(*n, *feature_dim, *classes, *separation, self.data.seed)?
            }
            DataSource::Linreg { n, feature_dim, noise_sd } => {
                data::gen_linreg(*n, *feature_dim, *noise_sd, self.data.seed)?.0
            }
            DataSource::Csv { path } => data::load_csv(path)?,
        };
        if self.data.normalize {
            ds.standardize();
        }
        Ok(ds.split(self.data.train_fraction, self.data.seed)?)
    }

    /// Model for a dataset; fails when the model does not fit the task.
    pub fn model_kind(&self, ds: &Dataset) -> Result<ModelKind, ConfigError> {
        let inputs = ds.meta.feature_dim;
        match (self.model, ds.meta.task) {
            (ModelChoice::Linear, Task::Regression) => Ok(ModelKind::LinearRegression { inputs }),
            (ModelChoice::Logistic, Task::Classification { classes: 2 }) => {
                Ok(ModelKind::BinaryLogistic { inputs })
            }
            (ModelChoice::Logistic, Task::Classification { classes }) => {
                Ok(ModelKind::MultinomialLogistic { inputs, classes })
            }
            (ModelChoice::Mlp, Task::Classification { classes }) => {
                Ok(ModelKind::Mlp { inputs, hidden: self.hidden, classes })
            }
            _ => Err(field_err("model.kind", "does not match the dataset task")),
        }
    }

    pub fn ordering_spec(&self, variant: Variant) -> OrderingSpec {
        let kernel = KernelConfig {
            kind: self.ordering.kernel,
            c_bound: self.ordering.c_bound,
            seed: self.ordering.kernel_seed,
        };
        OrderingSpec::new(variant, self.ordering.depth).with_kernel(kernel)
    }

    pub fn run_config(&self, model: ModelKind, variant: Variant, seed: u64) -> RunConfig {
        RunConfig { model, ordering: self.ordering_spec(variant), optim: self.optim, seed }
    }
}
