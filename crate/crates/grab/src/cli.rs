//! The `run`, `herding` and `bench` subcommands.
//!
//! Output layout of `run`:
//!
//! ```text
//! <output_dir>/results/<Variant>/<seed>.csv   one row per epoch (see trainer)
//! <output_dir>/summary.json                   per-variant means over seeds
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use grab_core::{
    ordered_discrepancy, GradientMatrix, KernelConfig, KernelKind, Sorter, Variant,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, Overrides};
use crate::trainer::{run_experiment, write_reports_csv, EpochReport, TrainError, REPORT_SCHEMA_VERSION};

/// Number of uniformly random orders averaged for the herding baseline.
pub const BASELINE_SHUFFLES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Diverged(String),
    #[error(transparent)]
    Train(TrainError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Diverged(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    /// Seeds that finished every epoch; the means below run over these.
    pub completed_seeds: Vec<u64>,
    pub final_train_loss: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub final_herding_discrepancy: Option<f64>,
    pub mean_epoch_seconds: Option<f64>,
    pub accumulator_slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub epochs: usize,
    pub variants: Vec<VariantSummary>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, count) = xs.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (count > 0).then(|| sum / count as f64)
}

struct Job {
    variant: Variant,
    seed: u64,
    result: Result<Vec<EpochReport>, TrainError>,
}

fn run_matrix(cfg: &ExperimentConfig, on_done: impl Fn(&Job) -> Result<(), CliError> + Sync) -> Result<Vec<Job>, CliError> {
    let (train, test) = cfg.load_dataset()?;
    let model = cfg.model_kind(&train)?;
    let pairs: Vec<(Variant, u64)> = cfg
        .ordering
        .variants
        .iter()
        .flat_map(|&v| cfg.experiment.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.workers)
        .build()
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    pool.install(|| {
        pairs
            .par_iter()
            .map(|&(variant, seed)| {
                let rc = cfg.run_config(model, variant, seed);
                let test = (!test.is_empty()).then_some(&test);
                let job = Job { variant, seed, result: run_experiment(&train, test, &rc) };
                on_done(&job)?;
                Ok(job)
            })
            .collect()
    })
}

fn summarize(cfg: &ExperimentConfig, jobs: &[Job]) -> Summary {
    let variants = cfg
        .ordering
        .variants
        .iter()
        .map(|&variant| {
            let done: Vec<(u64, &Vec<EpochReport>)> = jobs
                .iter()
                .filter(|j| j.variant == variant)
                .filter_map(|j| j.result.as_ref().ok().map(|r| (j.seed, r)))
                .collect();
            let last = |f: fn(&EpochReport) -> Option<f64>| {
                mean(done.iter().filter_map(|(_, r)| r.last().and_then(f)))
            };
            VariantSummary {
                variant,
                seeds: cfg.experiment.seeds.clone(),
                completed_seeds: done.iter().map(|(s, _)| *s).collect(),
                final_train_loss: last(|e| Some(e.train_loss)),
                final_test_accuracy: last(|e| e.test_accuracy),
                final_herding_discrepancy: last(|e| Some(e.herding_discrepancy)),
                mean_epoch_seconds: mean(
                    done.iter().flat_map(|(_, r)| r.iter().map(|e| e.wall_seconds)),
                ),
                accumulator_slots: variant
                    .accumulator_slots(variant.is_recursive().then_some(cfg.ordering.depth)),
            }
        })
        .collect();
    Summary { schema_version: REPORT_SCHEMA_VERSION, epochs: cfg.optim.epochs, variants }
}

fn first_failure(jobs: &[Job]) -> Option<CliError> {
    let mut failure = None;
    for j in jobs {
        match &j.result {
            Err(TrainError::Diverged { .. }) => {
                let msg = format!("{} seed {}: {}", j.variant, j.seed, j.result.as_ref().unwrap_err());
                return Some(CliError::Diverged(msg));
            }
            Err(e) if failure.is_none() => {
                failure = Some(CliError::Invalid(format!("{} seed {}: {e}", j.variant, j.seed)));
            }
            _ => {}
        }
    }
    failure
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    cfg.apply(overrides)?;
    Ok(cfg)
}

/// Runs the variant x seed matrix and writes per-run CSVs plus `summary.json`.
/// Runs that diverge keep the epochs they completed.
pub fn cmd_run(config: &Path, overrides: &Overrides) -> Result<Summary, CliError> {
    let cfg = load_config(config, overrides)?;
    run_config(&cfg)
}

pub fn run_config(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    let root = cfg.experiment.output_dir.clone();
    for v in &cfg.ordering.variants {
        let dir = root.join("results").join(v.name());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let jobs = run_matrix(cfg, |job| {
        let reports = match &job.result {
            Ok(r) => r.as_slice(),
            Err(TrainError::Diverged { reports, .. }) => reports.as_slice(),
            Err(_) => return Ok(()),
        };
        let path = root.join("results").join(job.variant.name()).join(format!("{}.csv", job.seed));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_reports_csv(file, reports)?;
        Ok(())
    })?;
    let summary = summarize(cfg, &jobs);
    let path = root.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    fs::write(&path, text).map_err(io_err(&path))?;
    match first_failure(&jobs) {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: Variant,
    pub mean_epoch_seconds: f64,
    pub overhead_ratio: f64,
    pub accumulator_slots: usize,
}

/// Times every configured variant against random reshuffling (added when
/// missing) and writes one CSV row per variant to `out`. Runs execute one at
/// a time so timings do not compete for cores.
pub fn cmd_bench<W: Write>(
    config: &Path,
    overrides: &Overrides,
    out: W,
) -> Result<Vec<BenchRow>, CliError> {
    let mut cfg = load_config(config, overrides)?;
    bench_config(&mut cfg, out)
}

pub fn bench_config<W: Write>(cfg: &mut ExperimentConfig, out: W) -> Result<Vec<BenchRow>, CliError> {
    if !cfg.ordering.variants.contains(&Variant::RandomReshuffle) {
        cfg.ordering.variants.insert(0, Variant::RandomReshuffle);
    }
    cfg.experiment.workers = 1;
    let jobs = run_matrix(cfg, |_| Ok(()))?;
    if let Some(e) = first_failure(&jobs) {
        return Err(e);
    }
    let summary = summarize(cfg, &jobs);
    let baseline = summary
        .variants
        .iter()
        .find(|v| v.variant == Variant::RandomReshuffle)
        .and_then(|v| v.mean_epoch_seconds)
        .unwrap_or(f64::NAN);
    let rows: Vec<BenchRow> = summary
        .variants
        .iter()
        .map(|v| {
            let secs = v.mean_epoch_seconds.unwrap_or(f64::NAN);
            BenchRow {
                variant: v.variant,
                mean_epoch_seconds: secs,
                overhead_ratio: if v.variant == Variant::RandomReshuffle {
                    1.0
                } else {
                    secs / baseline
                },
                accumulator_slots: v.accumulator_slots,
            }
        })
        .collect();
    let mut w = csv::Writer::from_writer(out);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(Path::new("<output>")))?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct HerdingArgs {
    pub n: usize,
    pub d: usize,
    pub epochs: usize,
    pub variant: Variant,
    pub kernel: KernelKind,
    pub c_bound: Option<f64>,
    pub depth: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HerdingArgs {
    fn default() -> Self {
        Self {
            n: 256,
            d: 16,
            epochs: 10,
            variant: Variant::MeanBalance,
            kernel: KernelKind::Deterministic,
            c_bound: None,
            depth: 3,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HerdingRow {
    pub epoch: usize,
    pub discrepancy: f64,
    pub random_baseline: f64,
}

/// Zero-centered standard normal vectors, seeded.
pub fn centered_gaussian(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vs: Vec<Vec<f64>> =
        (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
    for j in 0..d {
        let m = vs.iter().map(|v| v[j]).sum::<f64>() / n as f64;
        vs.iter_mut().for_each(|v| v[j] -= m);
    }
    vs
}

/// Mean discrepancy over `shuffles` uniformly random orders.
pub fn random_baseline(vectors: &[Vec<f64>], shuffles: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    let total: f64 = (0..shuffles)
        .map(|_| {
            order.shuffle(&mut rng);
            ordered_discrepancy(vectors, &order).expect("non-empty vector set")
        })
        .sum();
    total / shuffles as f64
}

/// Re-orders a frozen vector set for `epochs` epochs, treating the vectors as
/// per-sample gradients, and writes `epoch,discrepancy,random_baseline` rows.
/// Row 0 is the initial random order.
pub fn cmd_herding<W: Write>(args: &HerdingArgs, out: W) -> Result<Vec<HerdingRow>, CliError> {
    if args.n == 0 || args.d == 0 || args.epochs == 0 {
        return Err(CliError::Invalid(format!(
            "n, d and epochs must be at least 1 (got n = {}, d = {}, epochs = {})",
            args.n, args.d, args.epochs
        )));
    }
    if args.batch_size == 0 {
        return Err(CliError::Invalid("batch size must be at least 1".into()));
    }
    let vectors = centered_gaussian(args.n, args.d, args.seed);
    let kernel = KernelConfig { kind: args.kernel, c_bound: args.c_bound, seed: args.seed };
    let depth = args.variant.is_recursive().then_some(args.depth);
    let mut sorter = Sorter::new(args.variant, args.n, args.d, kernel, depth, args.seed)
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let baseline = random_baseline(&vectors, BASELINE_SHUFFLES, args.seed);

    let score = |order: &[usize]| ordered_discrepancy(&vectors, order).expect("non-empty");
    let mut rows = vec![HerdingRow {
        epoch: 0,
        discrepancy: score(sorter.current_order().as_slice()),
        random_baseline: baseline,
    }];
    for epoch in 1..=args.epochs {
        let order = sorter.current_order().clone();
        for chunk in order.as_slice().chunks(args.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| vectors[i].as_slice()).collect();
            let g = GradientMatrix::from_rows(chunk.to_vec(), &rows)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            step_any(&mut sorter, &g).map_err(|e| CliError::Invalid(e.to_string()))?;
        }
        let next = sorter.next_epoch().map_err(|e| CliError::Invalid(e.to_string()))?;
        rows.push(HerdingRow { epoch, discrepancy: score(next.as_slice()), random_baseline: baseline });
    }

    let mut w = csv::Writer::from_writer(out);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(Path::new("<output>")))?;
    Ok(rows)
}

/// Splits ragged batches into power-of-two blocks for recursive pair balance.
fn step_any(sorter: &mut Sorter, g: &GradientMatrix) -> grab_core::Result<()> {
    if sorter.variant() != Variant::RecursivePairBalance || g.len().is_power_of_two() {
        return sorter.step(g);
    }
    let mut start = 0;
    while start < g.len() {
        let rest = g.len() - start;
        let take = 1 << (usize::BITS - 1 - rest.leading_zeros());
        let idx: Vec<usize> = (start..start + take).collect();
        sorter.step(&g.select(&idx)?)?;
        start += take;
    }
    Ok(())
}
