//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bare::noise::{corrupt_labels, TransitionMatrix};
use bare::selection::{bare_select, spl_weights_classwise};
use bare::DenseMatrix;
use bare_cli::{parse_config, run, RunManifest, Summary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn manifest(args: &str, out: &Path) -> RunManifest {
    let argv = std::iter::once("bare".to_string())
        .chain(args.split_whitespace().map(str::to_string))
        .chain(["--quiet".into(), "--out".into(), out.display().to_string()]);
    parse_config(argv).unwrap_or_else(|e| panic!("bad acceptance manifest {args:?}: {e}"))
}

fn run_args(args: &str) -> Summary {
    let dir = tempfile::tempdir().unwrap();
    run(&manifest(args, dir.path())).unwrap()
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let (dims, m) = if i % 2 == 0 {
            ([784, 16, 10], 6)
        } else {
            ([8, 8, 3], 12)
        };
        let params = support::random_params(&dims, &mut rng);
        let (x, labels, w) = support::random_batch(m, dims[0], dims[2], &mut rng);
        worst = worst.max(support::max_fd_error(&params, &x, &labels, &w, 1e-5));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "max relative error {worst:.2e} over 50 instances in {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn spl_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..200 {
        let m = rng.random_range(1..=12);
        let classes = rng.random_range(1..=4);
        let losses: Vec<f64> = (0..m)
            .map(|_| rng.random_range(0..1024) as f64 / 256.0)
            .collect();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let lambda: Vec<f64> = (0..classes)
            .map(|_| rng.random_range(0..1024) as f64 / 256.0)
            .collect();
        let fast = spl_weights_classwise(&losses, &labels, &lambda).unwrap();
        if fast != support::exhaustive_spl(&losses, &labels, &lambda) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{mismatches} mismatches in 200 batches in {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn bare_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    let mut selected = 0;
    for i in 0..200 {
        let m = rng.random_range(1..=64);
        let k = rng.random_range(2..=10);
        let probs: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-6).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let kappa = match i % 5 {
            0 => 1.0,
            1 => -1.0,
            2 => 0.0,
            _ => rng.random_range(-2.0..2.0),
        };
        let got = bare_select(&DenseMatrix::from_rows(&probs).unwrap(), &labels, kappa).unwrap();
        let want = support::straight_line_bare(&probs, &labels, kappa);
        selected += got.selected_count;
        if got.weights != want {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches in 200 instances ({selected} samples selected)"),
    )
}

fn noise_statistics() -> Outcome {
    let n = 100_000;
    let clean: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let matrix = TransitionMatrix::symmetric(10, 0.5).unwrap();
    let out = corrupt_labels(&clean, &matrix, 5).unwrap();
    let mut counts = [[0usize; 10]; 10];
    for (&a, &b) in clean.iter().zip(&out.noisy) {
        counts[a][b] += 1;
    }
    let mut worst: f64 = 0.0;
    for (from, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (to, &c) in row.iter().enumerate() {
            let p = matrix.get(from, to);
            let sd = (total as f64 * p * (1.0 - p)).sqrt();
            worst = worst.max((c as f64 - total as f64 * p).abs() / sd);
        }
    }
    let identity = corrupt_labels(&clean, &TransitionMatrix::identity(10).unwrap(), 5).unwrap();
    outcome(
        worst <= 3.0 && identity.flipped() == 0,
        format!(
            "worst cell deviation {worst:.2} sd; identity flips {}",
            identity.flipped()
        ),
    )
}

fn mnist_reproduction(dir: &Path) -> Outcome {
    let base = format!(
        "--dataset mnist --mnist-dir {} --noise symmetric --eta 0.5 --trials 1",
        dir.display()
    );
    let bare = run_args(&base);
    let cce = run_args(&format!("{base} --selector none"));
    let (b, c) = (bare.final_acc_mean, cce.final_acc_mean);
    outcome(
        (0.92..=0.965).contains(&b) && c <= 0.82 && b - c >= 0.10,
        format!(
            "BARE {} CCE {} gap {:.2} points",
            pct(b),
            pct(c),
            100.0 * (b - c)
        ),
    )
}

fn mnist_high_noise(dir: &Path) -> Outcome {
    let base = format!(
        "--dataset mnist --mnist-dir {} --noise symmetric --eta 0.7 --epochs 50 --trials 2",
        dir.display()
    );
    let bare = run_args(&base);
    let cce = run_args(&format!("{base} --selector none"));
    let (b, c) = (bare.final_acc_mean, cce.final_acc_mean);
    outcome(
        b - c >= 0.15,
        format!(
            "BARE {} CCE {} gap {:.2} points",
            pct(b),
            pct(c),
            100.0 * (b - c)
        ),
    )
}

const BLOBS: &str =
    "--dataset blobs --blob-classes 10 --blob-dim 512 --blob-per-class 800 --blob-separation 6 \
     --epochs 30 --batch-size 128 --hidden 256 --lr 1e-3";

fn kappa_sanity() -> Outcome {
    let acc = |kappa: &str| {
        run_args(&format!(
            "{BLOBS} --noise symmetric --eta 0.5 --trials 5 --kappa={kappa}"
        ))
        .final_acc_mean
    };
    let (m1, a, b, c) = (acc("-1"), acc("0.5"), acc("1"), acc("1.5"));
    let spread = a.max(b).max(c) - a.min(b).min(c);
    outcome(
        b - m1 >= 0.15 && spread <= 0.05,
        format!(
            "kappa -1: {}, 0.5: {}, 1: {}, 1.5: {}; gap {:.2} points, spread {:.2} points",
            pct(m1),
            pct(a),
            pct(b),
            pct(c),
            100.0 * (b - m1),
            100.0 * spread
        ),
    )
}

fn selection_quality() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(
        &format!("{BLOBS} --noise class-conditional --eta 0.4 --trials 1"),
        dir.path(),
    );
    run(&m).unwrap();
    let csv = fs::read_to_string(dir.path().join("trial_0.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let late = &rows[rows.len() - 10..];
    let fraction = late.iter().map(|r| r[5]).sum::<f64>() / late.len() as f64;
    let precision = late.iter().map(|r| r[3]).sum::<f64>() / late.len() as f64;

    let (pool, test) = bare_cli::run::load_data(&m).unwrap();
    let matrix = bare_cli::run::noise_matrix(&m.noise, 10).unwrap();
    let exp = bare_cli::run::trial_experiment(&m, &pool, &test, &matrix, m.trial_seeds[0]).unwrap();
    let clean = 1.0 - exp.train.corrupted_fraction();
    outcome(
        (0.70..=0.90).contains(&fraction) && precision > clean,
        format!("late fraction {fraction:.3}, precision {precision:.3}, clean fraction {clean:.3}"),
    )
}

fn small_loss_contract() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(
        "--dataset blobs --blob-classes 10 --blob-dim 32 --blob-per-class 100 --noise symmetric --eta 0.4 \
         --selector small-loss --keep-fraction 0.6 --epochs 15 --batch-size 100 --hidden 64 --trials 1",
        dir.path(),
    );
    run(&m).unwrap();
    let csv = fs::read_to_string(dir.path().join("trial_0.csv")).unwrap();
    let fractions: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    let worst = fractions
        .iter()
        .map(|f| (f - 0.6).abs())
        .fold(0.0, f64::max);
    outcome(
        fractions.len() == 15 && worst < 1e-12,
        format!(
            "{} epochs, max |fraction - 0.6| = {worst:.1e}",
            fractions.len()
        ),
    )
}

fn determinism() -> Outcome {
    let args = "--dataset blobs --blob-classes 4 --blob-dim 16 --blob-per-class 100 --noise symmetric --eta 0.5 \
                --epochs 8 --batch-size 32 --hidden 32 --lr 1e-3 --trials 2";
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&manifest(args, a.path())).unwrap();
    run(&manifest(args, b.path())).unwrap();
    let same = (0..2).all(|t| {
        let name = format!("trial_{t}.csv");
        fs::read(a.path().join(&name)).unwrap() == fs::read(b.path().join(&name)).unwrap()
    });
    outcome(
        same,
        if same {
            "trial CSVs byte-identical"
        } else {
            "trial CSVs differ"
        },
    )
}

type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

fn main() -> ExitCode {
    let mnist = mnist_dir();
    let mut criteria: Vec<Criterion> = vec![
        ("gradient correctness", Box::new(gradient_correctness)),
        ("SPL oracle equivalence", Box::new(spl_oracle)),
        ("BARE selection oracle", Box::new(bare_oracle)),
        ("noise-injection statistics", Box::new(noise_statistics)),
    ];
    match &mnist {
        Some(dir) => {
            let (d1, d2) = (dir.clone(), dir.clone());
            criteria.push((
                "MNIST reproduction",
                Box::new(move || mnist_reproduction(&d1)),
            ));
            criteria.push((
                "MNIST eta=0.7 short run",
                Box::new(move || mnist_high_noise(&d2)),
            ));
        }
        None => {
            let missing = || outcome(false, "MNIST files not found (set MNIST_DIR)");
            criteria.push(("MNIST reproduction", Box::new(missing)));
            criteria.push(("MNIST eta=0.7 short run", Box::new(missing)));
        }
    }
    criteria.push(("kappa sanity", Box::new(kappa_sanity)));
    criteria.push(("selection quality", Box::new(selection_quality)));
    criteria.push(("small-loss contract", Box::new(small_loss_contract)));
    criteria.push(("determinism", Box::new(determinism)));

    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
