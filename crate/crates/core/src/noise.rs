//! Label-noise transition matrices and label corruption.
//!
//! Entry `(k, k')` of a [`TransitionMatrix`] is the probability that a sample whose
//! true class is `k` carries the observed label `k'`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

const ROW_SUM_TOL: f64 = 1e-9;
/// Row-sum tolerance when reading a matrix from text.
pub const FILE_ROW_SUM_TOL: f64 = 1e-6;

/// MNIST class-conditional flips: 7 -> 1, 2 -> 7, 3 -> 8, 5 <-> 6.
pub const MNIST_FLIPS: [(usize, usize); 5] = [(7, 1), (2, 7), (3, 8), (5, 6), (6, 5)];
/// CIFAR-10 flips: truck -> automobile, bird -> airplane, deer -> horse, cat <-> dog.
pub const CIFAR10_FLIPS: [(usize, usize); 5] = [(9, 1), (2, 0), (4, 7), (3, 5), (5, 3)];

/// Diagonally dominant matrix used for the MNIST arbitrary-noise experiment.
pub const MNIST_ARBITRARY_TEXT: &str = include_str!("../../../matrices/mnist_arbitrary.txt");
/// Same for CIFAR-10.
pub const CIFAR10_ARBITRARY_TEXT: &str = include_str!("../../../matrices/cifar10_arbitrary.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: DenseMatrix<f64>,
}

impl TransitionMatrix {
    /// Validates a `K x K` row-stochastic matrix with tolerance `1e-9`.
    pub fn new(entries: DenseMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(entries, ROW_SUM_TOL)
    }

    fn with_tolerance(entries: DenseMatrix<f64>, tol: f64) -> Result<Self> {
        let (r, c) = entries.shape();
        if r != c || r < 2 {
            return Err(Error::Model(format!(
                "transition matrix must be KxK with K >= 2, got {r}x{c}"
            )));
        }
        for k in 0..r {
            let row = entries.row(k);
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Model(format!(
                    "row {k} has entry {v} outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::Model(format!("row {k} sums to {sum}, not 1")));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(DenseMatrix::from_rows(rows)?)
    }

    pub fn identity(k: usize) -> Result<Self> {
        Self::symmetric(k, 0.0)
    }

    /// Flip to each other class with probability `eta / (K - 1)`.
    pub fn symmetric(k: usize, eta: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::param(format!("need at least 2 classes, got {k}")));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::param(format!("noise rate {eta} outside [0, 1]")));
        }
        let off = eta / (k - 1) as f64;
        let mut m = DenseMatrix::filled(k, k, off);
        for i in 0..k {
            m.set(i, i, 1.0 - eta);
        }
        Self::new(m)
    }

    /// Each `(from, to)` pair moves mass `eta` from `from`'s diagonal to column `to`.
    /// Classes never named as a source keep identity rows.
    pub fn class_conditional(k: usize, flips: &[(usize, usize)], eta: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::param(format!("need at least 2 classes, got {k}")));
        }
        if !(0.0..0.5).contains(&eta) {
            return Err(Error::param(format!(
                "class-conditional noise rate must lie in [0, 0.5), got {eta}"
            )));
        }
        let mut m = DenseMatrix::zeros(k, k);
        for i in 0..k {
            m.set(i, i, 1.0);
        }
        let mut seen = vec![false; k];
        for &(from, to) in flips {
            if from >= k || to >= k {
                return Err(Error::param(format!(
                    "flip {from}->{to} out of range for {k} classes"
                )));
            }
            if from == to {
                return Err(Error::param(format!(
                    "flip {from}->{to} maps a class onto itself"
                )));
            }
            if std::mem::replace(&mut seen[from], true) {
                return Err(Error::param(format!(
                    "class {from} appears twice as a flip source"
                )));
            }
            m.set(from, from, 1.0 - eta);
            m.set(from, to, eta);
        }
        Self::new(m)
    }

    /// Parses `K` on the first line followed by `K` rows of `K` whitespace-separated reals.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty transition matrix file".into()))?;
        let k: usize = header.parse().map_err(|_| {
            Error::Format(format!(
                "first line must be the class count, got {header:?}"
            ))
        })?;
        let mut data = Vec::with_capacity(k * k);
        for r in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("expected {k} rows, found {r}")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad number {t:?} in row {r}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != k {
                return Err(Error::Format(format!(
                    "row {r} has {} entries, expected {k}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        if lines.next().is_some() {
            return Err(Error::Format(format!("more than {k} rows")));
        }
        Self::with_tolerance(DenseMatrix::from_vec(k, k, data)?, FILE_ROW_SUM_TOL)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.num_classes());
        for k in 0..self.num_classes() {
            let row: Vec<String> = self.row(k).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.entries.rows()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries.get(from, to)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.entries.row(k)
    }

    pub fn entries(&self) -> &DenseMatrix<f64> {
        &self.entries
    }

    /// `eta_kk > eta_kk'` for every `k` and every `k' != k`.
    pub fn is_diagonally_dominant(&self) -> bool {
        (0..self.num_classes()).all(|k| {
            let row = self.row(k);
            row.iter().enumerate().all(|(j, &v)| j == k || row[k] > v)
        })
    }

    /// Expected fraction of corrupted labels under class priors `priors`.
    pub fn expected_flip_rate(&self, priors: &[f64]) -> f64 {
        priors
            .iter()
            .enumerate()
            .map(|(k, p)| p * (1.0 - self.get(k, k)))
            .sum()
    }

    fn sample_row(&self, k: usize, u: f64) -> usize {
        let row = self.row(k);
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding gap above the last cumulative sum
        row.iter().rposition(|&p| p > 0.0).unwrap_or(k)
    }
}

/// Result of [`corrupt_labels`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    pub noisy: Vec<usize>,
    pub corrupted: Vec<bool>,
}

impl Corruption {
    pub fn flipped(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }
}

/// Resamples every label from its row of `matrix`.
///
/// Label `i` uses one uniform draw from ChaCha stream `i` under `seed`, so the outcome
/// for a given index does not depend on the rest of the array.
pub fn corrupt_labels(clean: &[usize], matrix: &TransitionMatrix, seed: u64) -> Result<Corruption> {
    let k = matrix.num_classes();
    if let Some(&label) = clean.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let base = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<usize> = clean
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            let u: f64 = rng.random();
            matrix.sample_row(y, u)
        })
        .collect();
    let corrupted = clean.iter().zip(&noisy).map(|(a, b)| a != b).collect();
    Ok(Corruption { noisy, corrupted })
}

/// Features with observed labels, plus the clean labels kept for evaluation only.
///
/// Training code receives a [`TrainView`], which does not expose the clean labels.
#[derive(Debug, Clone)]
pub struct NoisyDataset {
    features: DenseMatrix<f32>,
    noisy_labels: Vec<usize>,
    clean_labels: Vec<usize>,
    corrupted: Vec<bool>,
    num_classes: usize,
}

/// What the training loop is allowed to see.
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    pub features: &'a DenseMatrix<f32>,
    pub labels: &'a [usize],
    pub num_classes: usize,
}

impl NoisyDataset {
    pub fn corrupt(
        features: DenseMatrix<f32>,
        clean_labels: Vec<usize>,
        matrix: &TransitionMatrix,
        seed: u64,
    ) -> Result<Self> {
        if features.rows() != clean_labels.len() {
            return Err(Error::shape(
                "NoisyDataset labels",
                features.rows(),
                clean_labels.len(),
            ));
        }
        let Corruption { noisy, corrupted } = corrupt_labels(&clean_labels, matrix, seed)?;
        Ok(Self {
            features,
            noisy_labels: noisy,
            clean_labels,
            corrupted,
            num_classes: matrix.num_classes(),
        })
    }

    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DenseMatrix<f32> {
        &self.features
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn corrupted(&self) -> &[bool] {
        &self.corrupted
    }

    pub fn corrupted_fraction(&self) -> f64 {
        self.corrupted.iter().filter(|&&c| c).count() as f64 / self.len().max(1) as f64
    }

    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            features: &self.features,
            labels: &self.noisy_labels,
            num_classes: self.num_classes,
        }
    }
}
