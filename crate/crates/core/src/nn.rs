//! Feedforward softmax classifier with hand-derived backpropagation.
//!
//! Hidden layers use ReLU, the output layer feeds a row-wise softmax. Weights are
//! stored `fan_in x fan_out` so a batch `X` (rows are samples) maps to `X W + b`.

use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Op};
use crate::real::Real;

/// Smallest probability fed to `ln` inside [`cce_loss`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f64> {
    pub weight: DenseMatrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Parameters of an MLP. Also used as the gradient container, since gradients
/// have exactly the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T = f64> {
    layers: Vec<Dense<T>>,
}

/// Activations retained by [`MlpParams::forward_pass`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T = f64> {
    /// Post-ReLU output of every hidden layer, in order.
    pub hidden: Vec<DenseMatrix<T>>,
    /// Softmax output, one row per sample.
    pub probs: DenseMatrix<T>,
}

impl<T: Real> MlpParams<T> {
    /// Builds parameters from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("an MLP needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::shape(
                    "layer bias",
                    layer.fan_out(),
                    layer.bias.len(),
                ));
            }
            if i + 1 < layers.len() && layers[i + 1].fan_in() != layer.fan_out() {
                return Err(Error::shape(
                    "layer chaining",
                    layer.fan_out(),
                    layers[i + 1].fan_in(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero parameters for the layer widths `dims` (input first, classes last).
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: DenseMatrix::zeros(w[0], w[1]),
                bias: vec![T::zero(); w[1]],
            })
            .collect();
        Ok(Self { layers })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    ///
    /// Draws are taken in `f64` so `f32` and `f64` networks from the same RNG state
    /// agree up to rounding.
    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite init bounds");
            for w in layer.weight.as_mut_slice() {
                *w = T::from_f64_lossy(dist.sample(rng));
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: DenseMatrix::zeros(l.fan_in(), l.fan_out()),
                    bias: vec![T::zero(); l.fan_out()],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::fan_out))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.fan_in() * l.fan_out() + l.fan_out())
            .sum()
    }

    /// Visits every scalar parameter (weights then bias, layer by layer).
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for layer in &mut self.layers {
            layer.weight.as_mut_slice().iter_mut().for_each(&mut f);
            layer.bias.iter_mut().for_each(&mut f);
        }
    }

    /// Flat read-only view of every scalar, in the [`for_each_mut`](Self::for_each_mut) order.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.iter()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape())
    }

    /// Class posteriors for every row of `x`.
    pub fn forward(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        Ok(self.forward_pass(x)?.probs)
    }

    /// Forward pass keeping hidden activations for [`backward_from`](Self::backward_from).
    pub fn forward_pass(&self, x: &DenseMatrix<T>) -> Result<ForwardPass<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward input columns",
                self.input_dim(),
                x.cols(),
            ));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("forward input"));
        }
        let last = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(last);
        let mut logits = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &hidden[l - 1] };
            let mut z = input.matmul(&layer.weight)?;
            z.add_row_vector(&layer.bias)?;
            if l == last {
                logits = Some(z);
            } else {
                for v in z.as_mut_slice() {
                    if *v <= T::zero() {
                        *v = T::zero();
                    }
                }
                hidden.push(z);
            }
        }
        let mut probs = logits.expect("at least one layer");
        softmax_rows(&mut probs);
        Ok(ForwardPass { hidden, probs })
    }

    /// Gradient of `(sum_i w_i l_i) / (sum_i w_i)` with `l_i` the cross-entropy of sample `i`.
    pub fn backward(&self, x: &DenseMatrix<T>, labels: &[usize], weights: &[T]) -> Result<Self> {
        let pass = self.forward_pass(x)?;
        self.backward_from(&pass, x, labels, weights)
    }

    /// As [`backward`](Self::backward), reusing a forward pass computed on the same `x`.
    ///
    /// Rows with zero weight are dropped before any matrix product.
    pub fn backward_from(
        &self,
        pass: &ForwardPass<T>,
        x: &DenseMatrix<T>,
        labels: &[usize],
        weights: &[T],
    ) -> Result<Self> {
        let m = x.rows();
        let k = self.num_classes();
        if labels.len() != m || weights.len() != m || pass.probs.rows() != m {
            return Err(Error::shape(
                "backward batch length",
                m,
                format!("{} labels, {} weights", labels.len(), weights.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::param(
                "sample weights must be finite and non-negative",
            ));
        }
        let active: Vec<usize> = (0..m).filter(|&i| weights[i] > T::zero()).collect();
        if active.is_empty() {
            return Err(Error::EmptySelection);
        }
        let total: T = active.iter().map(|&i| weights[i]).sum();

        let compact = active.len() < m;
        let take = |mat: &DenseMatrix<T>| -> DenseMatrix<T> {
            if compact {
                mat.select_rows(&active)
            } else {
                mat.clone()
            }
        };

        // d loss / d logits = w_i / W * (p_i - e_{y_i})
        let mut delta = take(&pass.probs);
        for (r, &i) in active.iter().enumerate() {
            let scale = weights[i] / total;
            let row = delta.row_mut(r);
            row[labels[i]] = row[labels[i]] - T::one();
            for v in row.iter_mut() {
                *v = *v * scale;
            }
        }

        let inputs: Vec<DenseMatrix<T>> = std::iter::once(take(x))
            .chain(pass.hidden.iter().map(take))
            .collect();

        let mut grads = self.zeros_like();
        for l in (0..self.layers.len()).rev() {
            let a_prev = &inputs[l];
            let g = &mut grads.layers[l];
            g.weight.gemm(
                T::one(),
                a_prev,
                Op::Transposed,
                &delta,
                Op::Plain,
                T::zero(),
            )?;
            g.bias = delta.column_sums();
            if l > 0 {
                let mut next = DenseMatrix::zeros(delta.rows(), self.layers[l].fan_in());
                next.gemm(
                    T::one(),
                    &delta,
                    Op::Plain,
                    &self.layers[l].weight,
                    Op::Transposed,
                    T::zero(),
                )?;
                // ReLU'(z) = 1 iff z > 0, which is iff the stored activation is > 0.
                for (d, a) in next.as_mut_slice().iter_mut().zip(a_prev.as_slice()) {
                    if *a <= T::zero() {
                        *d = T::zero();
                    }
                }
                delta = next;
            }
        }
        Ok(grads)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::param(
            "layer widths need an input and an output size",
        ));
    }
    if dims.contains(&0) {
        return Err(Error::param("layer widths must be positive"));
    }
    Ok(())
}

/// In-place row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(logits: &mut DenseMatrix<T>) {
    let cols = logits.cols();
    if cols == 0 {
        return;
    }
    for row in logits.as_mut_slice().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Per-sample categorical cross-entropy `-ln p[i][y_i]`, with `p` floored at [`PROB_FLOOR`].
pub fn cce_loss<T: Real>(probs: &DenseMatrix<T>, labels: &[usize]) -> Result<Vec<T>> {
    if labels.len() != probs.rows() {
        return Err(Error::shape("cce_loss labels", probs.rows(), labels.len()));
    }
    let floor = T::from_f64_lossy(PROB_FLOOR);
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= probs.cols() {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: probs.cols(),
                });
            }
            Ok(-(probs.get(i, y).max(floor)).ln())
        })
        .collect()
}
