//! Permuted-order SGD driven by a [`Sorter`].
//!
//! Each epoch visits the training set in the sorter's current order. Every
//! batch yields per-sample gradients: the sorter consumes the rows, the
//! optimizer consumes their mean. After the epoch the sorter emits the next
//! order, which is scored against the gradients recorded during the epoch.

use std::io::Write;
use std::time::Instant;

use grab_core::{
    ordered_discrepancy, sgd_step, GradientMatrix, KernelConfig, ModelKind, ModelParams,
    OptimConfig, Sorter, Variant,
};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;

/// Version of the per-epoch CSV/JSON layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Loss growth factor (relative to the loss at initialization) treated as
/// divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingSpec {
    pub variant: Variant,
    pub kernel: KernelConfig,
    /// Tree depth, recursive variants only.
    pub depth: Option<usize>,
}

impl OrderingSpec {
    pub fn new(variant: Variant, depth: usize) -> Self {
        Self {
            variant,
            kernel: KernelConfig::deterministic(),
            depth: variant.is_recursive().then_some(depth),
        }
    }

    pub fn with_kernel(mut self, kernel: KernelConfig) -> Self {
        self.kernel = kernel;
        self
    }
}

/// One row of an experiment's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    /// Classification only.
    pub test_accuracy: Option<f64>,
    pub herding_discrepancy: f64,
    pub wall_seconds: f64,
    pub accumulator_slots: usize,
    pub overflow_count: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Core(#[from] grab_core::Error),
    #[error(
        "training diverged at epoch {epoch}: train loss {loss} (initial {initial}); \
         try a smaller learning rate"
    )]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
        /// Epochs completed before the divergent one.
        reports: Vec<EpochReport>,
    },
}

/// Everything one run needs besides the data.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub model: ModelKind,
    pub ordering: OrderingSpec,
    pub optim: OptimConfig,
    pub seed: u64,
}

/// Trains `model` on `train` for `optim.epochs` epochs.
///
/// The sorter, the model initialization and the kernel stream all derive
/// from `seed` (the kernel uses `kernel.seed + seed`), so a run is a pure
/// function of its inputs apart from `wall_seconds`.
pub fn run_experiment(
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &RunConfig,
) -> Result<Vec<EpochReport>, TrainError> {
    let RunConfig { model, ordering, optim, seed } = *cfg;
    optim.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(TrainError::Setup("training set is empty".into()));
    }
    if model.inputs() != train.meta.feature_dim {
        return Err(TrainError::Setup(format!(
            "model expects {} features, dataset has {}",
            model.inputs(),
            train.meta.feature_dim
        )));
    }
    if ordering.variant == Variant::RecursivePairBalance && !optim.batch_size.is_power_of_two() {
        return Err(grab_core::Error::BatchNotPowerOfTwo { batch: optim.batch_size }.into());
    }

    let n = train.len();
    let d = model.param_dim();
    let kernel = KernelConfig { seed: ordering.kernel.seed.wrapping_add(seed), ..ordering.kernel };
    let mut sorter = Sorter::new(ordering.variant, n, d, kernel, ordering.depth, seed)?;
    let mut params = ModelParams::init(&model, seed);
    let mut velocity = vec![0.0; d];
    let mut recorded = vec![vec![0.0; d]; n];

    let initial = model.loss(&params, &train.examples)?.0;
    let mut reports = Vec::with_capacity(optim.epochs);

    for epoch in 0..optim.epochs {
        let order = sorter.current_order().clone();
        let started = Instant::now();
        for chunk in order.as_slice().chunks(optim.batch_size) {
            let batch: Vec<&grab_core::Example> =
                chunk.iter().map(|&i| &train.examples[i]).collect();
            let grads = model.per_sample_grads(&params, &batch)?;
            for (row, &id) in grads.rows().zip(grads.ids()) {
                recorded[id].copy_from_slice(row);
            }
            feed_sorter(&mut sorter, &grads)?;
            sgd_step(&mut params.theta, &grads.mean_row(), &mut velocity, &optim)?;
        }
        let next = sorter.next_epoch()?;
        let wall_seconds = started.elapsed().as_secs_f64();

        let train_loss = model.loss(&params, &train.examples)?.0;
        if !train_loss.is_finite() || (initial > 0.0 && train_loss > DIVERGENCE_FACTOR * initial) {
            return Err(TrainError::Diverged { epoch, loss: train_loss, initial, reports });
        }
        let test_accuracy = match test {
            Some(t) if model.is_classifier() && !t.is_empty() => Some(accuracy(&model, &params, t)?),
            _ => None,
        };
        let stats = sorter.last_epoch_stats().cloned().unwrap_or_default();
        reports.push(EpochReport {
            epoch,
            train_loss,
            test_accuracy,
            herding_discrepancy: ordered_discrepancy(&recorded, next.as_slice())?,
            wall_seconds,
            accumulator_slots: sorter.accumulator_slots(),
            overflow_count: stats.overflow_count,
        });
    }
    Ok(reports)
}

/// Steps the sorter with one batch. Recursive pair balance only accepts
/// power-of-two batches, so a ragged final batch is fed as its binary
/// decomposition (largest block first).
fn feed_sorter(sorter: &mut Sorter, grads: &GradientMatrix) -> Result<(), grab_core::Error> {
    if sorter.variant() != Variant::RecursivePairBalance || grads.len().is_power_of_two() {
        return sorter.step(grads);
    }
    let mut start = 0;
    let mut rest = grads.len();
    while rest > 0 {
        let take = 1 << (usize::BITS - 1 - rest.leading_zeros());
        let rows: Vec<usize> = (start..start + take).collect();
        sorter.step(&grads.select(&rows)?)?;
        start += take;
        rest -= take;
    }
    Ok(())
}

pub fn accuracy(
    model: &ModelKind,
    params: &ModelParams,
    ds: &Dataset,
) -> Result<f64, grab_core::Error> {
    let mut hits = 0usize;
    for e in &ds.examples {
        if model.predict(params, &e.x)? == e.y {
            hits += 1;
        }
    }
    Ok(hits as f64 / ds.len() as f64)
}

/// CSV with one row per epoch; columns follow [`EpochReport`]'s field order
/// and `test_accuracy` is empty for regression.
pub fn write_reports_csv<W: Write>(w: W, reports: &[EpochReport]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    if reports.is_empty() {
        out.write_record([
            "epoch",
            "train_loss",
            "test_accuracy",
            "herding_discrepancy",
            "wall_seconds",
            "accumulator_slots",
            "overflow_count",
        ])?;
    }
    for r in reports {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub epochs: Vec<EpochReport>,
}

pub fn reports_json(reports: &[EpochReport]) -> String {
    serde_json::to_string_pretty(&ReportFile {
        schema_version: REPORT_SCHEMA_VERSION,
        epochs: reports.to_vec(),
    })
    .expect("reports serialize")
}
