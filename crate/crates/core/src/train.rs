//! Mini-batch training with early stopping on validation loss.
//!
//! Each epoch shuffles the training rows with the run's seeded generator,
//! walks mini-batches (the trailing short batch is kept; a trailing
//! singleton is merged into the previous batch when batch norm is active,
//! which cannot normalize a single row), and then scores the validation
//! partition in inference mode. Training stops when validation MSE has not
//! strictly improved for `patience` consecutive epochs or at the epoch cap,
//! and the parameters (including batch-norm running statistics) from the
//! best epoch are restored.
//!
//! Late fusion never trains jointly: each branch is trained here as an
//! independent single-modal model with its own early stopping, then the
//! branches are recombined.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::DataSplit;
use crate::features::{FeatureMatrix, JOINT_FEATURES};
use crate::fusion::{FusionError, FusionModel, ModelOptimizer, ModelSpec, Variant};
use crate::mat::Mat;
use crate::nn::{mse_grad, mse_loss, OptimizerKind};
use crate::num::{derive_seed, Real};

/// Epoch cap used throughout the experiments.
pub const DEFAULT_MAX_EPOCHS: usize = 100;
/// Early-stopping patience: epochs without strict improvement.
pub const DEFAULT_PATIENCE: usize = 10;
/// Learning rate shared by all optimizers in the search space.
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("epoch {epoch}, batch {batch}: training loss is not finite")]
    NanTrainLoss { epoch: usize, batch: usize },
    #[error("epoch {epoch}: validation loss is not finite")]
    NanValidationLoss { epoch: usize },
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: OptimizerKind,
    learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(
        batch_size: usize,
        max_epochs: usize,
        patience: usize,
        optimizer: OptimizerKind,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Self, TrainError> {
        if batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        if max_epochs == 0 {
            return Err(TrainError::InvalidConfig("max_epochs must be positive".into()));
        }
        if patience == 0 || patience >= max_epochs {
            return Err(TrainError::InvalidConfig(format!(
                "patience {patience} must lie in [1, max_epochs {max_epochs})"
            )));
        }
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate {learning_rate} must be positive"
            )));
        }
        Ok(Self {
            batch_size,
            max_epochs,
            patience,
            optimizer,
            learning_rate,
            seed,
        })
    }

    /// Standard run: epoch cap 100, patience 10, learning rate 0.001.
    pub fn standard(batch_size: usize, optimizer: OptimizerKind, seed: u64) -> Self {
        Self::new(
            batch_size,
            DEFAULT_MAX_EPOCHS,
            DEFAULT_PATIENCE,
            optimizer,
            DEFAULT_LEARNING_RATE,
            seed,
        )
        .expect("defaults are valid")
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

/// Supervised rows in scaled space plus the partition boundaries: the only
/// view of the data the trainer sees.
#[derive(Debug, Clone)]
pub struct TrainData<T> {
    inputs: Mat<T>,
    targets: Vec<T>,
    split: DataSplit,
}

impl<T: Real> TrainData<T> {
    pub fn new(inputs: Mat<T>, targets: Vec<T>, split: DataSplit) -> Self {
        assert_eq!(inputs.rows(), targets.len(), "input/target row mismatch");
        assert_eq!(
            inputs.rows(),
            split.n_rows(),
            "split covers {} rows but data has {}",
            split.n_rows(),
            inputs.rows()
        );
        assert_eq!(
            inputs.cols(),
            JOINT_FEATURES,
            "trainer expects the ten-column joint layout"
        );
        Self {
            inputs,
            targets,
            split,
        }
    }

    pub fn split(&self) -> &DataSplit {
        &self.split
    }

    pub fn inputs(&self) -> &Mat<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    fn partition_inputs(&self, range: std::ops::Range<usize>) -> Mat<T> {
        self.inputs.slice_rows(range.start, range.end)
    }

    fn partition_targets(&self, range: std::ops::Range<usize>) -> &[T] {
        &self.targets[range]
    }
}

impl TrainData<f64> {
    /// Packs an already-scaled feature matrix for training.
    pub fn from_matrix(scaled: &FeatureMatrix, split: &DataSplit) -> Self {
        Self::new(
            Mat::from_rows(&scaled.joint_inputs()),
            scaled.targets(),
            split.clone(),
        )
    }
}

/// Strict-improvement early stopping with a patience window.
///
/// Feed one validation loss per epoch; `observe` answers whether training
/// should stop after that epoch. Improvement means strictly lower than the
/// best loss seen so far — ties burn patience.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_epoch: usize,
    best_loss: f64,
    stale_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        assert!(patience >= 1, "patience must be at least 1");
        Self {
            patience,
            best_epoch: 0,
            best_loss: f64::INFINITY,
            stale_epochs: 0,
        }
    }

    /// Records epoch `epoch`'s validation loss (epochs are 1-based and must
    /// arrive in order). Returns `true` when the patience budget is spent
    /// and training should stop after this epoch.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
        }
        self.stale_epochs >= self.patience
    }

    /// Epoch with the lowest loss so far (0 before any observation).
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    /// True when `epoch` was the new best (call after `observe`).
    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }
}

/// One epoch's losses (both in scaled-target space).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Loss history of one network's training run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    /// 1-based epoch after which training ceased.
    pub stopped_epoch: usize,
}

impl EpochLog {
    /// The validation MSE at the restored epoch.
    pub fn best_val_mse(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_mse
    }
}

/// Writes an epoch log as `epoch,train_mse,val_mse` CSV.
pub fn write_epoch_csv(log: &EpochLog, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_mse,val_mse")?;
    for rec in &log.epochs {
        writeln!(out, "{},{},{}", rec.epoch, rec.train_mse, rec.val_mse)?;
    }
    Ok(())
}

/// A trained model with one epoch log per independently trained network
/// (one for joint variants, domestic-then-foreign for late fusion).
#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub model: FusionModel<T>,
    pub logs: Vec<EpochLog>,
}

/// Inference-mode predictions for one partition of the data.
pub fn predict_partition<T: Real>(
    model: &FusionModel<T>,
    data: &TrainData<T>,
    range: std::ops::Range<usize>,
) -> Vec<T> {
    model.predict(&data.partition_inputs(range))
}

/// Validation MSE in scaled space: the early-stopping and TPE signal.
pub fn evaluate_validation<T: Real>(model: &FusionModel<T>, data: &TrainData<T>) -> T {
    let range = data.split.validation();
    let predictions = predict_partition(model, data, range.clone());
    mse_loss(&predictions, data.partition_targets(range))
}

/// Splits `n` shuffled training rows into mini-batch ranges. The trailing
/// short batch is kept; when `merge_singleton` is set (batch norm active), a
/// trailing batch of one row is folded into its predecessor instead.
fn batch_sizes(n: usize, batch_size: usize, merge_singleton: bool) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(n / batch_size + 1);
    let mut remaining = n;
    while remaining > 0 {
        let take = remaining.min(batch_size);
        sizes.push(take);
        remaining -= take;
    }
    if merge_singleton && sizes.len() >= 2 && *sizes.last().unwrap() == 1 {
        sizes.pop();
        *sizes.last_mut().unwrap() += 1;
    }
    sizes
}

/// Builds the model for `spec` and trains it. Joint variants (single-modal,
/// early, intermediate) run one loop; late fusion trains its two branches
/// independently with seeds derived from `cfg.seed` and reassembles them.
pub fn train_fusion<T: Real>(
    spec: &ModelSpec,
    data: &TrainData<T>,
    cfg: &TrainConfig,
) -> Result<TrainedModel<T>, TrainError> {
    if let Variant::LateFusion { .. } = spec.variant {
        let domestic = train_fusion(
            &spec.branch_spec(crate::fusion::Modality::Domestic),
            data,
            &cfg.with_seed(derive_seed(cfg.seed, 1)),
        )?;
        let foreign = train_fusion(
            &spec.branch_spec(crate::fusion::Modality::Foreign),
            data,
            &cfg.with_seed(derive_seed(cfg.seed, 2)),
        )?;
        let mut logs = domestic.logs;
        logs.extend(foreign.logs);
        return Ok(TrainedModel {
            model: FusionModel::late_from_parts(*spec, domestic.model, foreign.model),
            logs,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = FusionModel::new(*spec, &mut rng)?;
    let log = train_joint(&mut model, data, cfg, &mut rng)?;
    Ok(TrainedModel {
        model,
        logs: vec![log],
    })
}

/// The core loop for a jointly trainable model. `rng` drives shuffling and
/// dropout; the optimizer and early stopping are created here.
pub fn train_joint<T: Real, R: Rng>(
    model: &mut FusionModel<T>,
    data: &TrainData<T>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<EpochLog, TrainError> {
    if model.uses_batch_norm() && cfg.batch_size < 2 {
        return Err(TrainError::InvalidConfig(format!(
            "batch_size {} too small for batch norm (needs >= 2)",
            cfg.batch_size
        )));
    }
    let train_range = data.split.train();
    let mut indices: Vec<usize> = train_range.clone().collect();
    let merge_singleton = model.uses_batch_norm();

    let mut optimizer = ModelOptimizer::new(cfg.optimizer, cfg.learning_rate(), model);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut records = Vec::new();
    let mut stopped_epoch = cfg.max_epochs;

    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(rng);
        let mut consumed = 0usize;
        let mut sq_err_sum = T::zero();
        for (batch_idx, &size) in batch_sizes(indices.len(), cfg.batch_size, merge_singleton)
            .iter()
            .enumerate()
        {
            let rows = &indices[consumed..consumed + size];
            consumed += size;
            let inputs = data.inputs.gather_rows(rows);
            let targets: Vec<T> = rows.iter().map(|&r| data.targets[r]).collect();
            let (pred, cache) = model.forward_train(&inputs, rng);
            let loss = mse_loss(&pred, &targets);
            if !loss.as_f64().is_finite() {
                return Err(TrainError::NanTrainLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            sq_err_sum = sq_err_sum + loss * T::from_usize(size).expect("batch size fits");
            let grads = model.backward(&cache, &mse_grad(&pred, &targets));
            optimizer.step(model, &grads);
        }
        let train_mse = (sq_err_sum / T::from_usize(indices.len()).expect("train size fits"))
            .as_f64();
        let val_mse = evaluate_validation(model, data).as_f64();
        if !val_mse.is_finite() {
            return Err(TrainError::NanValidationLoss { epoch });
        }
        records.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        let stop = stopper.observe(epoch, val_mse);
        if stopper.improved_at(epoch) {
            best = model.clone();
        }
        if stop {
            stopped_epoch = epoch;
            break;
        }
    }
    *model = best;
    Ok(EpochLog {
        epochs: records,
        best_epoch: stopper.best_epoch(),
        stopped_epoch,
    })
}
