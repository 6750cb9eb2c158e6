use bare::noise::{
    corrupt_labels, TransitionMatrix, CIFAR10_ARBITRARY_TEXT, CIFAR10_FLIPS, MNIST_ARBITRARY_TEXT,
    MNIST_FLIPS,
};

fn balanced(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i % k).collect()
}

/// Per-cell transition counts `counts[from][to]`.
fn counts(clean: &[usize], noisy: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0; k]; k];
    for (&a, &b) in clean.iter().zip(noisy) {
        c[a][b] += 1;
    }
    c
}

fn assert_within_3_sigma(matrix: &TransitionMatrix, n: usize, seed: u64) {
    let k = matrix.num_classes();
    let clean = balanced(n, k);
    let out = corrupt_labels(&clean, matrix, seed).unwrap();
    let c = counts(&clean, &out.noisy, k);
    for (from, row) in c.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (to, &count) in row.iter().enumerate() {
            let p = matrix.get(from, to);
            let expected = total as f64 * p;
            let sd = (total as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (count as f64 - expected).abs() <= 3.0 * sd,
                "cell ({from},{to}): {count} vs {expected:.1} +- {sd:.1}"
            );
        }
    }
}

#[test]
fn symmetric_half_noise_frequencies_are_binomial() {
    let m = TransitionMatrix::symmetric(10, 0.5).unwrap();
    assert_within_3_sigma(&m, 100_000, 7);
}

#[test]
fn class_conditional_frequencies_are_binomial() {
    let m = TransitionMatrix::class_conditional(10, &MNIST_FLIPS, 0.45).unwrap();
    assert_within_3_sigma(&m, 100_000, 8);
}

#[test]
fn identity_never_flips() {
    let clean = balanced(10_000, 10);
    let out = corrupt_labels(&clean, &TransitionMatrix::identity(10).unwrap(), 3).unwrap();
    assert_eq!(out.noisy, clean);
    assert_eq!(out.flipped(), 0);
}

#[test]
fn corruption_flags_match_label_changes() {
    let clean = balanced(5_000, 10);
    let out = corrupt_labels(&clean, &TransitionMatrix::symmetric(10, 0.3).unwrap(), 4).unwrap();
    for ((c, n), f) in clean.iter().zip(&out.noisy).zip(&out.corrupted) {
        assert_eq!(c != n, *f);
    }
}

#[test]
fn diagonal_dominance_keeps_clean_plurality_in_each_noisy_class() {
    let n = 100_000;
    for matrix in [
        TransitionMatrix::symmetric(10, 0.7).unwrap(),
        TransitionMatrix::class_conditional(10, &CIFAR10_FLIPS, 0.45).unwrap(),
        TransitionMatrix::parse_text(MNIST_ARBITRARY_TEXT).unwrap(),
    ] {
        assert!(matrix.is_diagonally_dominant());
        let clean = balanced(n, 10);
        let out = corrupt_labels(&clean, &matrix, 9).unwrap();
        for class in 0..10 {
            let mut by_true = [0usize; 10];
            for (&c, &y) in clean.iter().zip(&out.noisy) {
                if y == class {
                    by_true[c] += 1;
                }
            }
            let best = (0..10).max_by_key(|&t| by_true[t]).unwrap();
            assert_eq!(best, class, "noisy class {class}: {by_true:?}");
        }
    }
}

#[test]
fn shipped_matrices_parse_and_round_trip() {
    for text in [MNIST_ARBITRARY_TEXT, CIFAR10_ARBITRARY_TEXT] {
        let m = TransitionMatrix::parse_text(text).unwrap();
        assert_eq!(m.num_classes(), 10);
        let again = TransitionMatrix::parse_text(&m.to_text()).unwrap();
        assert_eq!(again, m);
    }
}

#[test]
fn expected_flip_rate_matches_empirical_rate() {
    let m = TransitionMatrix::class_conditional(10, &MNIST_FLIPS, 0.4).unwrap();
    let clean = balanced(100_000, 10);
    let out = corrupt_labels(&clean, &m, 10).unwrap();
    let empirical = out.flipped() as f64 / clean.len() as f64;
    let expected = m.expected_flip_rate(&[0.1; 10]);
    assert!((expected - 0.2).abs() < 1e-12);
    assert!(
        (empirical - expected).abs() < 0.01,
        "{empirical} vs {expected}"
    );
}
