//! Dataset ingestion: the IDX binary format, synthetic Gaussian blobs, and the
//! train / validation split.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Decoded IDX file. Pixels stay as raw bytes so the file can be written back unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxTensor {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Length {
            expected: offset + 4,
            actual: bytes.len(),
        })
}

/// Parses an unsigned-byte IDX file (1-D labels or 3-D images).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = read_u32(bytes, 0)?;
    match magic {
        IDX_LABELS_MAGIC => {
            let n = read_u32(bytes, 4)? as usize;
            let expected = 8 + n;
            if bytes.len() != expected {
                return Err(Error::Length {
                    expected,
                    actual: bytes.len(),
                });
            }
            Ok(IdxTensor::Labels(bytes[8..].to_vec()))
        }
        IDX_IMAGES_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            let expected = count
                .checked_mul(rows)
                .and_then(|v| v.checked_mul(cols))
                .and_then(|v| v.checked_add(16))
                .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
            if bytes.len() != expected {
                return Err(Error::Length {
                    expected,
                    actual: bytes.len(),
                });
            }
            Ok(IdxTensor::Images {
                count,
                rows,
                cols,
                pixels: bytes[16..].to_vec(),
            })
        }
        other => Err(Error::Format(format!(
            "unsupported IDX magic 0x{other:08x}"
        ))),
    }
}

impl IdxTensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            IdxTensor::Labels(labels) => {
                let mut out = Vec::with_capacity(8 + labels.len());
                out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
                out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
                out.extend_from_slice(labels);
                out
            }
            IdxTensor::Images {
                count,
                rows,
                cols,
                pixels,
            } => {
                let mut out = Vec::with_capacity(16 + pixels.len());
                out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
                for d in [count, rows, cols] {
                    out.extend_from_slice(&(*d as u32).to_be_bytes());
                }
                out.extend_from_slice(pixels);
                out
            }
        }
    }

    /// Images as rows of `rows * cols` values scaled by 1/255.
    pub fn to_features(&self) -> Result<DenseMatrix<f32>> {
        match self {
            IdxTensor::Images {
                count,
                rows,
                cols,
                pixels,
            } => DenseMatrix::from_vec(
                *count,
                rows * cols,
                pixels.iter().map(|&b| b as f32 / 255.0).collect(),
            ),
            IdxTensor::Labels(_) => {
                Err(Error::Format("expected an image file, found labels".into()))
            }
        }
    }

    pub fn to_labels(&self) -> Result<Vec<usize>> {
        match self {
            IdxTensor::Labels(l) => Ok(l.iter().map(|&b| b as usize).collect()),
            IdxTensor::Images { .. } => {
                Err(Error::Format("expected a label file, found images".into()))
            }
        }
    }

    /// Encodes features in `[0, 1]` as an image file, rounding to the nearest byte.
    pub fn from_features(features: &DenseMatrix<f32>, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != features.cols() {
            return Err(Error::shape("IDX image size", features.cols(), rows * cols));
        }
        Ok(IdxTensor::Images {
            count: features.rows(),
            rows,
            cols,
            pixels: features
                .as_slice()
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        })
    }

    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        labels
            .iter()
            .map(|&y| {
                u8::try_from(y).map_err(|_| Error::Format(format!("label {y} does not fit a byte")))
            })
            .collect::<Result<Vec<u8>>>()
            .map(IdxTensor::Labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Mnist,
    Synthetic,
}

/// Features in `[0, 1]` with class labels.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub features: DenseMatrix<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl RawDataset {
    pub fn new(
        features: DenseMatrix<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "RawDataset labels",
                features.rows(),
                labels.len(),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        if features.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("features must lie in [0, 1]".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            provenance: self.provenance,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Reads an image/label file pair.
pub fn load_idx_pair(images: &Path, labels: &Path, num_classes: usize) -> Result<RawDataset> {
    let features = parse_idx(&read_file(images)?)?.to_features()?;
    let labels = parse_idx(&read_file(labels)?)?.to_labels()?;
    RawDataset::new(features, labels, num_classes, Provenance::Mnist)
}

/// Loads the uncompressed MNIST training and test sets from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(RawDataset, RawDataset)> {
    let train = load_idx_pair(
        &dir.join(MNIST_TRAIN_IMAGES),
        &dir.join(MNIST_TRAIN_LABELS),
        10,
    )?;
    let test = load_idx_pair(
        &dir.join(MNIST_TEST_IMAGES),
        &dir.join(MNIST_TEST_LABELS),
        10,
    )?;
    Ok((train, test))
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Class `k` is centred at `separation * e_k`.
    pub separation: f64,
    pub std: f64,
    pub seed: u64,
}

impl BlobSpec {
    /// Values are clipped to `[0, separation + 4 std]` before rescaling to `[0, 1]`.
    pub fn clip_range(&self) -> (f64, f64) {
        (0.0, self.separation + 4.0 * self.std)
    }
}

/// Isotropic Gaussian clusters, `per_class` samples per class in class order.
pub fn make_blobs(spec: &BlobSpec) -> Result<RawDataset> {
    let BlobSpec {
        num_classes: k,
        per_class,
        dim,
        separation,
        std,
        seed,
    } = *spec;
    if k < 2 {
        return Err(Error::param(format!("need at least 2 classes, got {k}")));
    }
    if dim < k {
        return Err(Error::param(format!(
            "blob dimension {dim} must be at least the class count {k}"
        )));
    }
    if !(separation > 0.0) || !(std >= 0.0) {
        return Err(Error::param(
            "blob separation must be positive and std non-negative",
        ));
    }
    let (lo, hi) = spec.clip_range();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(k * per_class * dim);
    let mut labels = Vec::with_capacity(k * per_class);
    for class in 0..k {
        for _ in 0..per_class {
            for d in 0..dim {
                let centre = if d == class { separation } else { 0.0 };
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = (centre + std * z).clamp(lo, hi);
                data.push(((v - lo) / (hi - lo)) as f32);
            }
            labels.push(class);
        }
    }
    RawDataset::new(
        DenseMatrix::from_vec(k * per_class, dim, data)?,
        labels,
        k,
        Provenance::Synthetic,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_count: usize,
    pub seed: u64,
}

impl SplitSpec {
    /// 80% train; 1000 validation samples from the rest.
    pub fn standard(seed: u64) -> Self {
        Self {
            train_fraction: 0.8,
            validation_count: 1000,
            seed,
        }
    }
}

/// Index sets produced by [`split`]. `discarded` is the unused part of the hold-out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub discarded: Vec<usize>,
}

/// Shuffles `0..n`, takes the leading `train_fraction` as training data and the
/// first `validation_count` of the remainder as validation data.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::param(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    let held_out = n - n_train;
    if spec.validation_count > held_out {
        return Err(Error::param(format!(
            "validation count {} exceeds the {held_out} held-out samples",
            spec.validation_count
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let rest = order.split_off(n_train);
    let (validation, discarded) = rest.split_at(spec.validation_count);
    Ok(SplitIndices {
        train: order,
        validation: validation.to_vec(),
        discarded: discarded.to_vec(),
    })
}

/// Materializes [`split_indices`] into training and validation datasets.
pub fn split(raw: &RawDataset, spec: &SplitSpec) -> Result<(RawDataset, RawDataset)> {
    let idx = split_indices(raw.len(), spec)?;
    Ok((raw.subset(&idx.train), raw.subset(&idx.validation)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_file() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 5, 0, 4];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.to_labels().unwrap(), vec![5, 0, 4]);
        assert_eq!(t.to_bytes(), bytes);
    }

    #[test]
    fn image_file_scaling() {
        let bytes = [
            0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 64,
        ];
        let f = parse_idx(&bytes).unwrap().to_features().unwrap();
        assert_eq!(f.shape(), (1, 4));
        assert_eq!(f.row(0), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128];
        assert_eq!(
            parse_idx(&bytes),
            Err(Error::Length {
                expected: 20,
                actual: 19
            })
        );
        assert!(matches!(
            parse_idx(&[0, 0, 8, 2, 0, 0, 0, 0]),
            Err(Error::Format(_))
        ));
        assert!(matches!(parse_idx(&[0, 0]), Err(Error::Length { .. })));
    }

    #[test]
    fn blobs_are_balanced_and_seeded() {
        let spec = BlobSpec {
            num_classes: 3,
            per_class: 20,
            dim: 5,
            separation: 4.0,
            std: 1.0,
            seed: 9,
        };
        let a = make_blobs(&spec).unwrap();
        assert_eq!(a.class_counts(), vec![20, 20, 20]);
        let b = make_blobs(&spec).unwrap();
        assert_eq!(a.features, b.features);
        assert!(a
            .features
            .as_slice()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_std_blobs_sit_on_centres() {
        let spec = BlobSpec {
            num_classes: 2,
            per_class: 4,
            dim: 3,
            separation: 2.0,
            std: 0.0,
            seed: 1,
        };
        let d = make_blobs(&spec).unwrap();
        for i in 0..8 {
            let mut centre = [0.0f32; 3];
            centre[d.labels[i]] = 1.0;
            assert_eq!(d.features.row(i), &centre);
        }
    }

    #[test]
    fn standard_split_sizes() {
        let s = split_indices(60_000, &SplitSpec::standard(0)).unwrap();
        assert_eq!(s.train.len(), 48_000);
        assert_eq!(s.validation.len(), 1000);
        assert_eq!(s.discarded.len(), 11_000);
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.discarded)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..60_000).collect::<Vec<_>>());
        assert_eq!(s, split_indices(60_000, &SplitSpec::standard(0)).unwrap());
    }

    #[test]
    fn split_rejects_bad_specs() {
        let full = SplitSpec {
            train_fraction: 1.0,
            ..SplitSpec::standard(0)
        };
        assert!(split_indices(100, &full).is_err());
        assert!(split_indices(100, &SplitSpec::standard(0)).is_err());
    }
}
