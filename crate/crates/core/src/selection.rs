//! Per-batch sample selection.
//!
//! BARE keeps a sample when its posterior for the observed label reaches the
//! class threshold `mean + kappa * std`, where the statistics run over the
//! samples in the same mini-batch that carry the same label. The self-paced
//! and small-loss rules are provided as comparators.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::nn::cce_loss;
use crate::real::Real;

/// Default threshold multiplier.
pub const DEFAULT_KAPPA: f64 = 1.0;
/// Multipliers of the threshold ablation.
pub const KAPPA_ABLATION: [f64; 7] = [-1.0, 0.0, 0.5, 0.75, 1.0, 1.25, 1.5];

/// Posterior statistics of one class within a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStat {
    pub class: usize,
    /// Batch positions carrying this label, ascending.
    pub members: Vec<usize>,
    pub mean: f64,
    /// Population standard deviation (divisor `members.len()`).
    pub std: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub weights: Vec<bool>,
    /// One entry per class present in the batch, ordered by class.
    pub stats: Vec<ClassStat>,
    pub selected_count: usize,
}

/// Groups the batch by label and computes mean, std and `mean + kappa * std` of
/// `probs[i][label]` within each group. Absent classes get no entry.
pub fn class_stats<T: Real>(
    probs: &DenseMatrix<T>,
    labels: &[usize],
    kappa: f64,
) -> Result<Vec<ClassStat>> {
    check_batch(probs, labels)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); probs.cols()];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    Ok(members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(class, members)| {
            let values: Vec<f64> = members
                .iter()
                .map(|&i| probs.get(i, class).as_f64())
                .collect();
            let n = values.len() as f64;
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            // clamp rounding error
            let mean = (values.iter().sum::<f64>() / n).clamp(lo, hi);
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            ClassStat {
                class,
                members,
                mean,
                std,
                threshold: mean + kappa * std,
            }
        })
        .collect())
}

/// Keeps sample `i` iff `probs[i][y_i] >= mean_{y_i} + kappa * std_{y_i}`.
pub fn bare_select<T: Real>(
    probs: &DenseMatrix<T>,
    labels: &[usize],
    kappa: f64,
) -> Result<SelectionResult> {
    let stats = class_stats(probs, labels, kappa)?;
    let mut weights = vec![false; labels.len()];
    for stat in &stats {
        for &i in &stat.members {
            weights[i] = probs.get(i, stat.class).as_f64() >= stat.threshold;
        }
    }
    let selected_count = weights.iter().filter(|&&w| w).count();
    Ok(SelectionResult {
        weights,
        stats,
        selected_count,
    })
}

/// Self-paced weights: `w_i = 1` iff `l_i < lambda`.
pub fn spl_weights(losses: &[f64], lambda: f64) -> Vec<bool> {
    losses.iter().map(|&l| l < lambda).collect()
}

/// Self-paced weights with a threshold per class: `w_i = 1` iff `l_i < lambda[y_i]`.
pub fn spl_weights_classwise(
    losses: &[f64],
    labels: &[usize],
    lambda: &[f64],
) -> Result<Vec<bool>> {
    if losses.len() != labels.len() {
        return Err(Error::shape(
            "spl_weights_classwise",
            losses.len(),
            labels.len(),
        ));
    }
    losses
        .iter()
        .zip(labels)
        .map(|(&l, &y)| {
            lambda.get(y).map(|&t| l < t).ok_or(Error::LabelOutOfRange {
                label: y,
                classes: lambda.len(),
            })
        })
        .collect()
}

/// Number of samples the small-loss rule keeps from a batch of `m`.
pub fn small_loss_count(m: usize, keep_fraction: f64) -> usize {
    // guard against e.g. 0.7 * 10 = 7.000000000000001
    (((keep_fraction * m as f64) - 1e-9).ceil().max(0.0) as usize).min(m)
}

/// Keeps the `ceil(keep_fraction * m)` smallest losses; ties go to the lower index.
pub fn small_loss_select(losses: &[f64], keep_fraction: f64) -> Result<Vec<bool>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::param(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let keep = small_loss_count(losses.len(), keep_fraction);
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| {
        losses[a]
            .partial_cmp(&losses[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut weights = vec![false; losses.len()];
    for &i in &order[..keep] {
        weights[i] = true;
    }
    Ok(weights)
}

fn check_batch<T: Real>(probs: &DenseMatrix<T>, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.rows() {
        return Err(Error::shape("selection labels", probs.rows(), labels.len()));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.cols(),
        });
    }
    Ok(())
}

/// Sample-selection strategy applied to every mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    /// Batch-statistics thresholding on posteriors.
    Bare { kappa: f64 },
    /// Keep a fixed fraction of the lowest-loss samples.
    SmallLoss { keep_fraction: f64 },
    /// Fixed self-paced loss threshold.
    Spl { lambda: f64 },
    /// Plain ERM: keep everything.
    None,
}

impl Selector {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Selector::Bare { kappa } if !kappa.is_finite() => {
                Err(Error::param(format!("kappa must be finite, got {kappa}")))
            }
            Selector::SmallLoss { keep_fraction }
                if !(keep_fraction > 0.0 && keep_fraction <= 1.0) =>
            {
                Err(Error::param(format!(
                    "keep fraction must lie in (0, 1], got {keep_fraction}"
                )))
            }
            Selector::Spl { lambda } if !(lambda > 0.0 && lambda.is_finite()) => Err(Error::param(
                format!("spl lambda must be positive, got {lambda}"),
            )),
            _ => Ok(()),
        }
    }

    /// Selection for one batch. `stats` is only populated by [`Selector::Bare`].
    pub fn select<T: Real>(
        &self,
        probs: &DenseMatrix<T>,
        labels: &[usize],
    ) -> Result<SelectionResult> {
        let plain = |weights: Vec<bool>| SelectionResult {
            selected_count: weights.iter().filter(|&&w| w).count(),
            weights,
            stats: Vec::new(),
        };
        match *self {
            Selector::Bare { kappa } => bare_select(probs, labels, kappa),
            Selector::SmallLoss { keep_fraction } => {
                let losses = losses_f64(probs, labels)?;
                Ok(plain(small_loss_select(&losses, keep_fraction)?))
            }
            Selector::Spl { lambda } => {
                let losses = losses_f64(probs, labels)?;
                Ok(plain(spl_weights(&losses, lambda)))
            }
            Selector::None => {
                check_batch(probs, labels)?;
                Ok(plain(vec![true; labels.len()]))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Selector::Bare { .. } => "bare",
            Selector::SmallLoss { .. } => "small-loss",
            Selector::Spl { .. } => "spl",
            Selector::None => "none",
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Bare { kappa } => write!(f, "bare(kappa={kappa})"),
            Selector::SmallLoss { keep_fraction } => write!(f, "small-loss(keep={keep_fraction})"),
            Selector::Spl { lambda } => write!(f, "spl(lambda={lambda})"),
            Selector::None => write!(f, "none"),
        }
    }
}

fn losses_f64<T: Real>(probs: &DenseMatrix<T>, labels: &[usize]) -> Result<Vec<f64>> {
    Ok(cce_loss(probs, labels)?
        .into_iter()
        .map(Real::as_f64)
        .collect())
}
