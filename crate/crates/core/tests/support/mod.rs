//! Plain-loop reference computations shared by the integration tests.
#![allow(dead_code)]

use bare::nn::{Dense, MlpParams};
use bare::DenseMatrix;
use rand::Rng;

/// Weighted mean cross-entropy of a one-hidden-layer net, given the hidden
/// pre-activations `z1[s][j]`.
fn loss_from_hidden(
    z1: &[Vec<f64>],
    w2: &[Vec<f64>],
    b2: &[f64],
    labels: &[usize],
    w: &[f64],
) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (s, zs) in z1.iter().enumerate() {
        let mut logits = b2.to_vec();
        for (j, &z) in zs.iter().enumerate() {
            let a = if z > 0.0 { z } else { 0.0 };
            for (k, lk) in logits.iter_mut().enumerate() {
                *lk += a * w2[j][k];
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += w[s] * (lse - logits[labels[s]]);
        wsum += w[s];
    }
    total / wsum
}

fn hidden_pre(x: &[Vec<f64>], w1: &[Vec<f64>], b1: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let mut z = b1.to_vec();
            for (i, &xi) in row.iter().enumerate() {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += xi * w1[i][j];
                }
            }
            z
        })
        .collect()
}

fn nested(m: &DenseMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Softmax posteriors of a one-hidden-layer net, row by row.
pub fn reference_probs(params: &MlpParams<f64>, x: &DenseMatrix<f64>) -> Vec<Vec<f64>> {
    let [l1, l2] = params.layers() else {
        panic!("reference covers one hidden layer")
    };
    let w2 = nested(&l2.weight);
    hidden_pre(&nested(x), &nested(&l1.weight), &l1.bias)
        .iter()
        .map(|zs| {
            let mut logits = l2.bias.clone();
            for (j, &z) in zs.iter().enumerate() {
                for (k, lk) in logits.iter_mut().enumerate() {
                    *lk += z.max(0.0) * w2[j][k];
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Central-difference gradient of [`reference_loss`], in [`MlpParams::iter`] order.
pub fn numeric_gradient(
    params: &MlpParams<f64>,
    x: &DenseMatrix<f64>,
    labels: &[usize],
    w: &[f64],
    h: f64,
) -> Vec<f64> {
    let nudge = |at: usize, delta: f64| {
        let mut p = params.clone();
        let mut i = 0;
        p.for_each_mut(|v| {
            if i == at {
                *v += delta;
            }
            i += 1;
        });
        reference_loss(&p, x, labels, w)
    };
    (0..params.num_parameters())
        .map(|at| (nudge(at, h) - nudge(at, -h)) / (2.0 * h))
        .collect()
}

/// Reference loss of a one-hidden-layer net.
pub fn reference_loss(
    params: &MlpParams<f64>,
    x: &DenseMatrix<f64>,
    labels: &[usize],
    w: &[f64],
) -> f64 {
    let [l1, l2] = params.layers() else {
        panic!("reference covers one hidden layer")
    };
    let z1 = hidden_pre(&nested(x), &nested(&l1.weight), &l1.bias);
    loss_from_hidden(&z1, &nested(&l2.weight), &l2.bias, labels, w)
}

/// Worst entry-wise relative error `|a - n| / max(|a|, |n|, 1e-8)` between the
/// analytic gradient of a one-hidden-layer net and central differences with step `h`.
pub fn max_fd_error(
    params: &MlpParams<f64>,
    x: &DenseMatrix<f64>,
    labels: &[usize],
    w: &[f64],
    h: f64,
) -> f64 {
    let grads = params.backward(x, labels, w).expect("backward");
    let [g1, g2] = grads.layers() else {
        panic!("reference covers one hidden layer")
    };
    let [l1, l2] = params.layers() else {
        unreachable!()
    };
    let xs = nested(x);
    let w1 = nested(&l1.weight);
    let b1 = l1.bias.clone();
    let mut w2 = nested(&l2.weight);
    let mut b2 = l2.bias.clone();
    let z1 = hidden_pre(&xs, &w1, &b1);

    let rel = |a: f64, up: f64, down: f64| {
        let n = (up - down) / (2.0 * h);
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    };
    let mut worst: f64 = 0.0;

    // first layer: only hidden column j moves
    let shifted = |j: usize, delta: &dyn Fn(usize) -> f64| -> Vec<Vec<f64>> {
        let mut z = z1.clone();
        for (s, zs) in z.iter_mut().enumerate() {
            zs[j] += delta(s);
        }
        z
    };
    for j in 0..b1.len() {
        for i in 0..w1.len() {
            let up = loss_from_hidden(&shifted(j, &|s| h * xs[s][i]), &w2, &b2, labels, w);
            let down = loss_from_hidden(&shifted(j, &|s| -h * xs[s][i]), &w2, &b2, labels, w);
            worst = worst.max(rel(g1.weight.get(i, j), up, down));
        }
        let up = loss_from_hidden(&shifted(j, &|_| h), &w2, &b2, labels, w);
        let down = loss_from_hidden(&shifted(j, &|_| -h), &w2, &b2, labels, w);
        worst = worst.max(rel(g1.bias[j], up, down));
    }
    for j in 0..w2.len() {
        for k in 0..b2.len() {
            let orig = w2[j][k];
            w2[j][k] = orig + h;
            let up = loss_from_hidden(&z1, &w2, &b2, labels, w);
            w2[j][k] = orig - h;
            let down = loss_from_hidden(&z1, &w2, &b2, labels, w);
            w2[j][k] = orig;
            worst = worst.max(rel(g2.weight.get(j, k), up, down));
        }
    }
    for k in 0..b2.len() {
        let orig = b2[k];
        b2[k] = orig + h;
        let up = loss_from_hidden(&z1, &w2, &b2, labels, w);
        b2[k] = orig - h;
        let down = loss_from_hidden(&z1, &w2, &b2, labels, w);
        b2[k] = orig;
        worst = worst.max(rel(g2.bias[k], up, down));
    }
    worst
}

/// Network with uniform weights scaled by `sqrt(6 / fan_in)` and small random biases.
pub fn random_params<R: Rng>(dims: &[usize], rng: &mut R) -> MlpParams<f64> {
    let layers = dims
        .windows(2)
        .map(|p| {
            let (fi, fo) = (p[0], p[1]);
            let scale = (6.0 / fi as f64).sqrt();
            let data = (0..fi * fo)
                .map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0))
                .collect();
            Dense {
                weight: DenseMatrix::from_vec(fi, fo, data).unwrap(),
                bias: (0..fo)
                    .map(|_| 0.1 * (rng.random::<f64>() * 2.0 - 1.0))
                    .collect(),
            }
        })
        .collect();
    MlpParams::from_layers(layers).unwrap()
}

/// Uniform features in `[0, 1)`, uniform labels, and 0/1 weights with at least one 1.
pub fn random_batch<R: Rng>(
    m: usize,
    d: usize,
    k: usize,
    rng: &mut R,
) -> (DenseMatrix<f64>, Vec<usize>, Vec<f64>) {
    let x = DenseMatrix::from_vec(m, d, (0..m * d).map(|_| rng.random::<f64>()).collect()).unwrap();
    let labels = (0..m).map(|_| rng.random_range(0..k)).collect();
    let mut w: Vec<f64> = (0..m)
        .map(|_| if rng.random_bool(0.7) { 1.0 } else { 0.0 })
        .collect();
    w[rng.random_range(0..m)] = 1.0;
    (x, labels, w)
}

/// Minimizer of the class-wise self-paced objective over every 0/1 weight vector;
/// ties go to the vector with fewer ones.
pub fn exhaustive_spl(losses: &[f64], labels: &[usize], lambda: &[f64]) -> Vec<bool> {
    let m = losses.len();
    let mut best: Option<(f64, u32, u32)> = None;
    for mask in 0u32..(1 << m) {
        let objective: f64 = (0..m)
            .map(|i| {
                let lam = lambda[labels[i]];
                if mask >> i & 1 == 1 {
                    losses[i] - lam
                } else {
                    0.0
                }
            })
            .sum();
        let count = mask.count_ones();
        let better = match best {
            None => true,
            Some((o, c, _)) => objective < o || (objective == o && count < c),
        };
        if better {
            best = Some((objective, count, mask));
        }
    }
    let mask = best.unwrap().2;
    (0..m).map(|i| mask >> i & 1 == 1).collect()
}

/// BARE selection recomputed sample by sample from the definitions.
pub fn straight_line_bare(probs: &[Vec<f64>], labels: &[usize], kappa: f64) -> Vec<bool> {
    (0..labels.len())
        .map(|i| {
            let y = labels[i];
            let mut sum = 0.0;
            let mut n = 0.0;
            for s in 0..labels.len() {
                if labels[s] == y {
                    sum += probs[s][y];
                    n += 1.0;
                }
            }
            let mu = sum / n;
            let mut sq = 0.0;
            for s in 0..labels.len() {
                if labels[s] == y {
                    sq += (probs[s][y] - mu) * (probs[s][y] - mu);
                }
            }
            let sigma = (sq / n).sqrt();
            probs[i][y] >= mu + kappa * sigma
        })
        .collect()
}
