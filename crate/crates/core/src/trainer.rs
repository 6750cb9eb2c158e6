//! Mini-batch training with per-batch sample selection, plus evaluation and
//! selection-quality metrics.
//!
//! Each epoch shuffles the training set, and for every batch computes posteriors,
//! asks the [`Selector`] which samples to keep, and takes one Adam step on the
//! mean loss of the kept samples. A batch with nothing kept is skipped.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{split_indices, RawDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::nn::{cce_loss, MlpParams};
use crate::noise::{NoisyDataset, TrainView, TransitionMatrix};
use crate::optim::{AdamConfig, AdamState, PlateauConfig, PlateauMode, PlateauScheduler};
use crate::real::Real;
use crate::seed::{self, Stream};
use crate::selection::Selector;

const EVAL_CHUNK: usize = 1024;

/// Quantity the learning-rate scheduler watches once per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    /// Accuracy on the validation split against its noisy labels (maximized).
    ValidationAccuracy,
    /// Mean loss of the samples kept during the epoch (minimized).
    TrainLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    pub monitor: Monitor,
    pub selector: Selector,
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl TrainConfig {
    /// 784 -> 256 -> 10 style defaults: Adam 2e-4, batch 128, 200 epochs, BARE with kappa 1.
    pub fn new(seed: u64) -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 200,
            batch_size: 128,
            plateau: PlateauConfig::for_lr(adam.lr),
            monitor: Monitor::TrainLoss,
            adam,
            selector: Selector::Bare { kappa: 1.0 },
            hidden: vec![256],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::param("need at least one epoch"));
        }
        if self.batch_size < 2 {
            return Err(Error::param(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::param(format!(
                "learning rate must be positive, got {}",
                self.adam.lr
            )));
        }
        self.selector.validate()
    }
}

/// Training outcome of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// `selected[i]`: whether dataset sample `i` entered an update this epoch.
    pub selected: Vec<bool>,
    pub processed: usize,
    pub selected_count: usize,
    /// Sum of the losses of kept samples, measured before the update.
    pub selected_loss_sum: f64,
    pub batches: usize,
    pub skipped_batches: usize,
    /// Per class: mean over batches of the BARE threshold (`None` if never computed).
    pub mean_threshold: Vec<Option<f64>>,
}

impl EpochLog {
    pub fn sample_fraction(&self) -> f64 {
        self.selected_count as f64 / self.processed.max(1) as f64
    }

    pub fn mean_selected_loss(&self) -> f64 {
        if self.selected_count == 0 {
            f64::NAN
        } else {
            self.selected_loss_sum / self.selected_count as f64
        }
    }
}

/// Copies the given rows of `features` into a matrix of the training scalar type.
pub fn gather_rows<T: Real>(features: &DenseMatrix<f32>, indices: &[usize]) -> DenseMatrix<T> {
    let d = features.cols();
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        data.extend(features.row(i).iter().map(|&v| T::from_f64_lossy(v as f64)));
    }
    DenseMatrix::from_vec(indices.len(), d, data).expect("gathered rows are finite")
}

/// One pass over `view` in freshly shuffled order.
pub fn train_epoch<T: Real, R: Rng + ?Sized>(
    view: TrainView<'_>,
    params: &mut MlpParams<T>,
    adam: &mut AdamState<T>,
    selector: &Selector,
    batch_size: usize,
    rng: &mut R,
) -> Result<EpochLog> {
    let n = view.labels.len();
    if n == 0 {
        return Err(Error::param("training set is empty"));
    }
    if batch_size == 0 || batch_size > n {
        return Err(Error::param(format!(
            "batch size {batch_size} invalid for {n} samples"
        )));
    }
    let k = view.num_classes;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut log = EpochLog {
        selected: vec![false; n],
        processed: 0,
        selected_count: 0,
        selected_loss_sum: 0.0,
        batches: 0,
        skipped_batches: 0,
        mean_threshold: vec![None; k],
    };
    let mut threshold_sums = vec![(0.0f64, 0usize); k];

    for batch in order.chunks(batch_size) {
        let x = gather_rows::<T>(view.features, batch);
        let labels: Vec<usize> = batch.iter().map(|&i| view.labels[i]).collect();
        let pass = params.forward_pass(&x)?;
        let choice = selector.select(&pass.probs, &labels)?;
        for stat in &choice.stats {
            let slot = &mut threshold_sums[stat.class];
            slot.0 += stat.threshold;
            slot.1 += 1;
        }
        log.batches += 1;
        log.processed += batch.len();
        if choice.selected_count == 0 {
            log.skipped_batches += 1;
            continue;
        }
        let losses = cce_loss(&pass.probs, &labels)?;
        for (pos, &i) in batch.iter().enumerate() {
            if choice.weights[pos] {
                log.selected[i] = true;
                log.selected_loss_sum += losses[pos].as_f64();
            }
        }
        log.selected_count += choice.selected_count;
        let weights: Vec<T> = choice
            .weights
            .iter()
            .map(|&w| if w { T::one() } else { T::zero() })
            .collect();
        let grads = params.backward_from(&pass, &x, &labels, &weights)?;
        adam.step(params, &grads)?;
    }
    log.mean_threshold = threshold_sums
        .into_iter()
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(log)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn evaluate<T: Real>(
    params: &MlpParams<T>,
    features: &DenseMatrix<f32>,
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() || labels.len() != features.rows() {
        return Err(Error::shape(
            "evaluate labels",
            features.rows(),
            labels.len(),
        ));
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..labels.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let probs = params.forward(&gather_rows::<T>(features, chunk))?;
        correct += chunk
            .iter()
            .enumerate()
            .filter(|&(r, &i)| probs.argmax_row(r) == labels[i])
            .count();
    }
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionMetrics {
    /// Clean among selected; `None` when nothing was selected.
    pub precision: Option<f64>,
    /// Selected among clean; 0 when there is nothing selected or nothing clean.
    pub recall: f64,
    pub fraction: f64,
}

pub fn selection_metrics(selected: &[bool], corrupted: &[bool]) -> Result<SelectionMetrics> {
    if selected.len() != corrupted.len() {
        return Err(Error::shape(
            "selection_metrics",
            corrupted.len(),
            selected.len(),
        ));
    }
    let n_selected = selected.iter().filter(|&&s| s).count();
    let n_clean = corrupted.iter().filter(|&&c| !c).count();
    let clean_selected = selected
        .iter()
        .zip(corrupted)
        .filter(|&(&s, &c)| s && !c)
        .count();
    Ok(SelectionMetrics {
        precision: (n_selected > 0).then(|| clean_selected as f64 / n_selected as f64),
        recall: if n_clean == 0 {
            0.0
        } else {
            clean_selected as f64 / n_clean as f64
        },
        fraction: n_selected as f64 / selected.len().max(1) as f64,
    })
}

/// Per-epoch record written to the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    /// Accuracy on the validation split against its noisy labels (drives the scheduler).
    pub val_acc: f64,
    pub label_precision: Option<f64>,
    pub label_recall: f64,
    pub sample_fraction: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub skipped_batches: usize,
    pub mean_threshold: Vec<Option<f64>>,
}

/// Noisy training and validation splits plus the clean test set.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train: NoisyDataset,
    pub validation: NoisyDataset,
    pub test: RawDataset,
}

impl Experiment {
    /// Splits `pool`, corrupts the training and validation labels with `matrix`,
    /// and keeps `test` clean. All randomness derives from `seed`.
    pub fn prepare(
        pool: &RawDataset,
        test: RawDataset,
        matrix: &TransitionMatrix,
        split: &SplitSpec,
        seed: u64,
    ) -> Result<Self> {
        if matrix.num_classes() != pool.num_classes || test.num_classes != pool.num_classes {
            return Err(Error::shape(
                "experiment class count",
                pool.num_classes,
                matrix.num_classes(),
            ));
        }
        if test.dim() != pool.dim() {
            return Err(Error::shape(
                "experiment feature dimension",
                pool.dim(),
                test.dim(),
            ));
        }
        let idx = split_indices(pool.len(), split)?;
        let train = pool.subset(&idx.train);
        let validation = pool.subset(&idx.validation);
        Ok(Self {
            train: NoisyDataset::corrupt(
                train.features,
                train.labels,
                matrix,
                seed::derive(seed, Stream::TrainNoise),
            )?,
            validation: NoisyDataset::corrupt(
                validation.features,
                validation.labels,
                matrix,
                seed::derive(seed, Stream::ValidationNoise),
            )?,
            test,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.train.features().cols()
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<T = f32> {
    pub metrics: Vec<EpochMetrics>,
    pub params: MlpParams<T>,
}

/// Full training run; see [`run_training_with`].
pub fn run_training<T: Real>(config: &TrainConfig, exp: &Experiment) -> Result<TrainingOutcome<T>> {
    run_training_with(config, exp, |_| {})
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each one.
///
/// The scheduler watches `config.monitor`; validation accuracy uses noisy labels. Clean labels and
/// corruption flags are only read to compute the reported metrics.
pub fn run_training_with<T: Real>(
    config: &TrainConfig,
    exp: &Experiment,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainingOutcome<T>> {
    config.validate()?;
    if exp.validation.is_empty() || exp.test.is_empty() {
        return Err(Error::param("validation and test sets must be non-empty"));
    }
    if config.batch_size > exp.train.len() {
        return Err(Error::param(format!(
            "batch size {} exceeds the {} training samples",
            config.batch_size,
            exp.train.len()
        )));
    }
    let mut dims = vec![exp.dim()];
    dims.extend(&config.hidden);
    dims.push(exp.num_classes());
    let mut params = MlpParams::<T>::glorot(&dims, &mut seed::rng(config.seed, Stream::Init, 0))?;
    let mut adam = AdamState::new(&params, config.adam);
    let mode = match config.monitor {
        Monitor::ValidationAccuracy => PlateauMode::Max,
        Monitor::TrainLoss => PlateauMode::Min,
    };
    let mut scheduler = PlateauScheduler::with_mode(config.adam.lr, config.plateau, mode)?;

    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = scheduler.lr();
        adam.set_lr(lr);
        let mut rng = seed::rng(config.seed, Stream::Shuffle, epoch as u64);
        let log = train_epoch(
            exp.train.train_view(),
            &mut params,
            &mut adam,
            &config.selector,
            config.batch_size,
            &mut rng,
        )?;
        let quality = selection_metrics(&log.selected, exp.train.corrupted())?;
        let test_acc = evaluate(&params, &exp.test.features, &exp.test.labels)?;
        let val_acc = evaluate(
            &params,
            exp.validation.features(),
            exp.validation.noisy_labels(),
        )?;
        scheduler.step(match config.monitor {
            Monitor::ValidationAccuracy => val_acc,
            Monitor::TrainLoss => log.mean_selected_loss(),
        });
        let record = EpochMetrics {
            epoch: epoch + 1,
            train_loss: log.mean_selected_loss(),
            test_acc,
            val_acc,
            label_precision: quality.precision,
            label_recall: quality.recall,
            sample_fraction: log.sample_fraction(),
            lr,
            skipped_batches: log.skipped_batches,
            mean_threshold: log.mean_threshold,
        };
        on_epoch(&record);
        metrics.push(record);
    }
    Ok(TrainingOutcome { metrics, params })
}
