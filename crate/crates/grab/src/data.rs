//! Datasets: seeded synthetic generators, train/test splitting and a CSV
//! format with a JSON sidecar.
//!
//! CSV layout: header `y,x0,x1,...`, one example per row, floats written in
//! shortest round-trip form. Example ids are the row order. The sidecar
//! `<file>.json` records the dataset metadata (generator parameters, task,
//! normalization) so that loading restores it exactly.

use std::fs;
use std::path::{Path, PathBuf};

use grab_core::Example;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("invalid dataset parameters: {0}")]
    Invalid(String),
    #[error("no examples")]
    NoExamples,
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("sidecar {path}: {msg}")]
    Sidecar { path: PathBuf, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Blobs { separation: f64, seed: u64 },
    Linreg { noise_sd: f64, seed: u64 },
    Loaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub feature_dim: usize,
    pub task: Task,
    pub generator: Generator,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn classes(&self) -> Option<usize> {
        match self.meta.task {
            Task::Classification { classes } => Some(classes),
            Task::Regression => None,
        }
    }

    /// Rescales every feature to mean 0 and variance 1 (constant features are
    /// only centered).
    pub fn standardize(&mut self) {
        let n = self.examples.len() as f64;
        for j in 0..self.meta.feature_dim {
            let mean = self.examples.iter().map(|e| e.x[j]).sum::<f64>() / n;
            let var = self.examples.iter().map(|e| (e.x[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for e in &mut self.examples {
                e.x[j] = (e.x[j] - mean) / sd;
            }
        }
        self.meta.normalized = true;
    }

    /// Seeded split into `(train, test)`; both halves get ids `0..len`.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
        if !(0.0..=1.0).contains(&train_fraction) || train_fraction == 0.0 {
            return Err(DataError::Invalid(format!(
                "train_fraction must lie in (0, 1], got {train_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((self.len() as f64 * train_fraction).round() as usize).clamp(1, self.len());
        let take = |ids: &[usize]| {
            let examples: Vec<Example> = ids
                .iter()
                .enumerate()
                .map(|(k, &i)| Example { id: k, ..self.examples[i].clone() })
                .collect();
            Dataset {
                meta: DatasetMeta { n: examples.len(), ..self.meta.clone() },
                examples,
            }
        };
        Ok((take(&idx[..n_train]), take(&idx[n_train..])))
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Gaussian clusters, one per class, with unit within-class variance.
///
/// Class centers point in random directions at radius `separation / sqrt(2)`,
/// so two centers sit about `separation` apart. Class sizes differ by at most
/// one and examples come out shuffled.
pub fn gen_blobs(
    n: usize,
    feature_dim: usize,
    class_count: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if class_count < 2 || n < class_count {
        return Err(DataError::Invalid(format!(
            "need n >= class_count >= 2, got n = {n}, class_count = {class_count}"
        )));
    }
    if feature_dim == 0 {
        return Err(DataError::Invalid("feature_dim must be at least 1".into()));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(DataError::Invalid(format!("separation must be >= 0, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = separation / std::f64::consts::SQRT_2;
    let centers: Vec<Vec<f64>> = (0..class_count)
        .map(|_| {
            let mut c = normal_vec(&mut rng, feature_dim);
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x *= radius / norm);
            c
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % class_count).collect();
    labels.shuffle(&mut rng);
    let examples = labels
        .into_iter()
        .enumerate()
        .map(|(id, y)| {
            let x = centers[y]
                .iter()
                .map(|c| c + rng.sample::<f64, _>(StandardNormal))
                .collect();
            Example { x, y: y as f64, id }
        })
        .collect();
    Ok(Dataset {
        examples,
        meta: DatasetMeta {
            n,
            feature_dim,
            task: Task::Classification { classes: class_count },
            generator: Generator::Blobs { separation, seed },
            normalized: false,
        },
    })
}

/// `y = <w*, x> + noise` with standard normal features and weights. Returns
/// the dataset and `w*`.
pub fn gen_linreg(
    n: usize,
    feature_dim: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<(Dataset, Vec<f64>), DataError> {
    if n == 0 || feature_dim == 0 {
        return Err(DataError::Invalid(format!(
            "need n >= 1 and feature_dim >= 1, got n = {n}, feature_dim = {feature_dim}"
        )));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(DataError::Invalid(format!("noise_sd must be >= 0, got {noise_sd}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = normal_vec(&mut rng, feature_dim);
    let examples = (0..n)
        .map(|id| {
            let x = normal_vec(&mut rng, feature_dim);
            let clean: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let y = clean + noise_sd * rng.sample::<f64, _>(StandardNormal);
            Example { x, y, id }
        })
        .collect();
    let ds = Dataset {
        examples,
        meta: DatasetMeta {
            n,
            feature_dim,
            task: Task::Regression,
            generator: Generator::Linreg { noise_sd, seed },
            normalized: false,
        },
    };
    Ok((ds, w))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the CSV and its metadata sidecar.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["y".to_string()];
    header.extend((0..ds.meta.feature_dim).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for e in &ds.examples {
        let mut rec = Vec::with_capacity(e.x.len() + 1);
        rec.push(e.y.to_string());
        rec.extend(e.x.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = serde_json::to_string_pretty(&ds.meta).expect("metadata serializes");
    fs::write(sidecar_path(path), meta + "\n")?;
    Ok(())
}

/// Reads a CSV written by [`save_csv`] (or any file with the same layout).
/// Without a sidecar the task is inferred: classification when every target
/// is a non-negative integer, regression otherwise.
pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_path(path)?;
    let header = r.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(DataError::NoExamples);
    }
    if header[0].trim() != "y" || header.len() < 2 {
        return Err(DataError::Malformed {
            line: 1,
            msg: format!("expected header `y,x0,...`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let feature_dim = header.len() - 1;
    let mut examples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(DataError::Malformed {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, DataError> {
            let v: f64 = s.trim().parse().map_err(|_| DataError::Malformed {
                line,
                msg: format!("not a number: {s:?}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Malformed { line, msg: format!("non-finite value {s:?}") });
            }
            Ok(v)
        };
        let y = parse(&rec[0])?;
        let x = rec.iter().skip(1).map(parse).collect::<Result<Vec<_>, _>>()?;
        examples.push(Example { x, y, id: examples.len() });
    }
    if examples.is_empty() {
        return Err(DataError::NoExamples);
    }

    let side = sidecar_path(path);
    let meta = if side.exists() {
        let text = fs::read_to_string(&side)?;
        let meta: DatasetMeta = serde_json::from_str(&text)
            .map_err(|e| DataError::Sidecar { path: side.clone(), msg: e.to_string() })?;
        if meta.n != examples.len() || meta.feature_dim != feature_dim {
            return Err(DataError::Sidecar {
                path: side,
                msg: format!(
                    "describes {}x{} but the file holds {}x{}",
                    meta.n,
                    meta.feature_dim,
                    examples.len(),
                    feature_dim
                ),
            });
        }
        meta
    } else {
        let integral = examples.iter().all(|e| e.y >= 0.0 && e.y.fract() == 0.0);
        let task = if integral {
            let max = examples.iter().map(|e| e.y as usize).max().unwrap_or(0);
            Task::Classification { classes: (max + 1).max(2) }
        } else {
            Task::Regression
        };
        DatasetMeta {
            n: examples.len(),
            feature_dim,
            task,
            generator: Generator::Loaded,
            normalized: false,
        }
    };
    Ok(Dataset { examples, meta })
}
