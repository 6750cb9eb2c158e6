//! Trial execution, output files and sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use bare::data::{load_mnist, make_blobs, RawDataset, SplitSpec};
use bare::noise::TransitionMatrix;
use bare::optim::{AdamConfig, PlateauConfig};
use bare::seed::{self, Stream};
use bare::trainer::{run_training_with, EpochMetrics, Experiment, Monitor, TrainConfig};

use crate::config::{DatasetSpec, MonitorKind, NoiseSpec, Precision, RunManifest, SweepAxis};
use crate::error::{CliError, CliResult};

pub const CSV_HEADER: &str =
    "epoch,train_loss,test_acc,label_precision,label_recall,sample_fraction,lr,skipped_batches";

/// Final-epoch statistics across trials. Accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub trials: usize,
    pub epochs: usize,
    pub final_acc_mean: f64,
    /// Population standard deviation.
    pub final_acc_std: f64,
    pub best_acc_mean: f64,
    /// Mean over trials whose final precision is defined; `null` if none is.
    pub final_precision_mean: Option<f64>,
    pub final_recall_mean: f64,
    pub final_fraction_mean: f64,
    pub final_acc: Vec<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Summarizes per-trial metric histories (each non-empty).
pub fn summarize(trials: &[Vec<EpochMetrics>]) -> Summary {
    assert!(!trials.is_empty() && trials.iter().all(|t| !t.is_empty()));
    let last: Vec<&EpochMetrics> = trials.iter().map(|t| t.last().unwrap()).collect();
    let final_acc: Vec<f64> = last.iter().map(|m| m.test_acc).collect();
    let mu = mean(&final_acc);
    let var = final_acc.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / final_acc.len() as f64;
    let best: Vec<f64> = trials
        .iter()
        .map(|t| {
            t.iter()
                .map(|m| m.test_acc)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let precisions: Vec<f64> = last.iter().filter_map(|m| m.label_precision).collect();
    Summary {
        trials: trials.len(),
        epochs: trials[0].len(),
        final_acc_mean: mu,
        final_acc_std: var.sqrt(),
        best_acc_mean: mean(&best),
        final_precision_mean: (!precisions.is_empty()).then(|| mean(&precisions)),
        final_recall_mean: mean(&last.iter().map(|m| m.label_recall).collect::<Vec<_>>()),
        final_fraction_mean: mean(&last.iter().map(|m| m.sample_fraction).collect::<Vec<_>>()),
        final_acc,
    }
}

/// One CSV document for a trial, header included.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::with_capacity(64 * (metrics.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for m in metrics {
        let precision = m
            .label_precision
            .map_or_else(|| "nan".to_string(), |p| p.to_string());
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.epoch,
            m.train_loss,
            m.test_acc,
            precision,
            m.label_recall,
            m.sample_fraction,
            m.lr,
            m.skipped_batches
        )
        .unwrap();
    }
    s
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Creates `dir` and proves it accepts files.
fn ensure_writable(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| CliError::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))
}

/// Training pool and clean test set for the manifest's dataset.
pub fn load_data(manifest: &RunManifest) -> CliResult<(RawDataset, RawDataset)> {
    match &manifest.dataset {
        DatasetSpec::Mnist { dir } => Ok(load_mnist(dir)?),
        blobs @ DatasetSpec::Blobs { .. } => {
            let (pool, test) = blobs.blob_specs(manifest.seed).expect("blob dataset");
            Ok((make_blobs(&pool)?, make_blobs(&test)?))
        }
    }
}

pub fn noise_matrix(noise: &NoiseSpec, classes: usize) -> CliResult<TransitionMatrix> {
    let m = match noise {
        NoiseSpec::None => TransitionMatrix::identity(classes)?,
        NoiseSpec::Symmetric { eta } => TransitionMatrix::symmetric(classes, *eta)?,
        NoiseSpec::ClassConditional { eta, flips } => {
            TransitionMatrix::class_conditional(classes, flips, *eta)?
        }
        NoiseSpec::Matrix { path } => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            TransitionMatrix::parse_text(&text)?
        }
    };
    if m.num_classes() != classes {
        return Err(CliError::Usage(format!(
            "noise matrix has {} classes but the dataset has {classes}",
            m.num_classes()
        )));
    }
    Ok(m)
}

pub fn train_config(manifest: &RunManifest, trial_seed: u64) -> TrainConfig {
    let t = &manifest.train;
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        adam: AdamConfig {
            lr: t.lr,
            beta1: t.adam_beta1,
            beta2: t.adam_beta2,
            eps: t.adam_eps,
        },
        plateau: PlateauConfig {
            patience: t.plateau_patience,
            factor: t.plateau_factor,
            min_lr: t.plateau_min_lr,
        },
        monitor: match t.monitor {
            MonitorKind::ValAcc => Monitor::ValidationAccuracy,
            MonitorKind::TrainLoss => Monitor::TrainLoss,
        },
        selector: t.selector.selector(),
        hidden: t.hidden.clone(),
        seed: trial_seed,
    }
}

/// Builds the noisy splits for one trial. Depends only on the dataset, noise,
/// split settings and trial seed.
pub fn trial_experiment(
    manifest: &RunManifest,
    pool: &RawDataset,
    test: &RawDataset,
    matrix: &TransitionMatrix,
    trial_seed: u64,
) -> CliResult<Experiment> {
    let n_train = (manifest.split.train_fraction * pool.len() as f64).floor() as usize;
    let split = SplitSpec {
        train_fraction: manifest.split.train_fraction,
        validation_count: manifest
            .split
            .validation_count
            .unwrap_or(pool.len() - n_train),
        seed: seed::derive(trial_seed, Stream::Split),
    };
    Ok(Experiment::prepare(
        pool,
        test.clone(),
        matrix,
        &split,
        trial_seed,
    )?)
}

fn run_trial(
    manifest: &RunManifest,
    exp: &Experiment,
    trial_seed: u64,
    label: &str,
) -> CliResult<Vec<EpochMetrics>> {
    let config = train_config(manifest, trial_seed);
    let quiet = manifest.quiet;
    let log = |m: &EpochMetrics| {
        if !quiet {
            eprintln!(
                "{label} epoch {:>3}  loss {:.4}  test {:.4}  fraction {:.3}  lr {:.2e}",
                m.epoch, m.train_loss, m.test_acc, m.sample_fraction, m.lr
            );
        }
    };
    let metrics = match manifest.train.precision {
        Precision::F32 => run_training_with::<f32>(&config, exp, log)?.metrics,
        Precision::F64 => run_training_with::<f64>(&config, exp, log)?.metrics,
    };
    Ok(metrics)
}

/// Runs `f` over `0..n` on up to `jobs` threads, returning results in index order.
fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(i);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.unwrap())
        .collect()
}

struct Cell {
    manifest: RunManifest,
    matrix: TransitionMatrix,
}

/// Runs all trials of every cell, writing `trial_<i>.csv` and `summary.json`
/// into each cell's output directory.
fn run_cells(
    cells: &[Cell],
    pool: &RawDataset,
    test: &RawDataset,
    jobs: usize,
) -> CliResult<Vec<Summary>> {
    for cell in cells {
        ensure_writable(&cell.manifest.out)?;
    }
    let tasks: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cell)| (0..cell.manifest.trials).map(move |t| (c, t)))
        .collect();
    let results = parallel_map(tasks.len(), jobs, |j| -> CliResult<Vec<EpochMetrics>> {
        let (c, t) = tasks[j];
        let m = &cells[c].manifest;
        let trial_seed = m.trial_seeds[t];
        let exp = trial_experiment(m, pool, test, &cells[c].matrix, trial_seed)?;
        let label = if cells.len() > 1 {
            format!("[cell {c} trial {t}]")
        } else {
            format!("[trial {t}]")
        };
        let metrics = run_trial(m, &exp, trial_seed, &label)?;
        write_file(
            &m.out.join(format!("trial_{t}.csv")),
            &metrics_csv(&metrics),
        )?;
        Ok(metrics)
    });
    let mut per_cell: Vec<Vec<Vec<EpochMetrics>>> = cells.iter().map(|_| Vec::new()).collect();
    for ((c, _), r) in tasks.iter().zip(results) {
        per_cell[*c].push(r?);
    }
    cells
        .iter()
        .zip(per_cell)
        .map(|(cell, trials)| {
            let summary = summarize(&trials);
            let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
            write_file(&cell.manifest.out.join("summary.json"), &json)?;
            Ok(summary)
        })
        .collect()
}

fn make_cell(manifest: RunManifest, pool: &RawDataset) -> CliResult<Cell> {
    let matrix = noise_matrix(&manifest.noise, pool.num_classes)?;
    Ok(Cell { manifest, matrix })
}

/// Single configuration: trials plus summary under `manifest.out`.
pub fn run(manifest: &RunManifest) -> CliResult<Summary> {
    manifest.check_inputs()?;
    ensure_writable(&manifest.out)?;
    write_file(&manifest.out.join("manifest.json"), &manifest.to_json())?;
    let (pool, test) = load_data(manifest)?;
    let cell = make_cell(manifest.clone(), &pool)?;
    let mut summaries = run_cells(std::slice::from_ref(&cell), &pool, &test, manifest.jobs)?;
    Ok(summaries.remove(0))
}

fn format_value(v: f64) -> String {
    v.to_string()
}

/// Manifest for one sweep cell, written below the sweep's output directory.
pub fn sweep_cell(manifest: &RunManifest, axis: SweepAxis, value: f64) -> RunManifest {
    let mut m = manifest.clone();
    m.sweep = None;
    let name = match axis {
        SweepAxis::Kappa => {
            m.train.selector.kappa = Some(value);
            "kappa"
        }
        SweepAxis::BatchSize => {
            m.train.batch_size = value as usize;
            "batch_size"
        }
        SweepAxis::Eta => {
            match &mut m.noise {
                NoiseSpec::Symmetric { eta } | NoiseSpec::ClassConditional { eta, .. } => {
                    *eta = value
                }
                _ => unreachable!("validated sweep axis"),
            }
            "eta"
        }
    };
    m.out = manifest.out.join(format!("{name}_{}", format_value(value)));
    m
}

/// Combined sweep table, one row per value.
pub fn sweep_table(axis: SweepAxis, values: &[f64], summaries: &[Summary]) -> String {
    let name = match axis {
        SweepAxis::Kappa => "kappa",
        SweepAxis::BatchSize => "batch_size",
        SweepAxis::Eta => "eta",
    };
    let mut s = format!(
        "{name},final_acc_mean,final_acc_std,best_acc_mean,final_precision_mean,final_recall_mean,final_fraction_mean\n"
    );
    for (v, sm) in values.iter().zip(summaries) {
        let precision = sm
            .final_precision_mean
            .map_or_else(|| "nan".to_string(), |p| p.to_string());
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            format_value(*v),
            sm.final_acc_mean,
            sm.final_acc_std,
            sm.best_acc_mean,
            precision,
            sm.final_recall_mean,
            sm.final_fraction_mean
        )
        .unwrap();
    }
    s
}

/// One full run per sweep value; writes `sweep.csv` and returns the summaries in value order.
pub fn sweep(manifest: &RunManifest) -> CliResult<Vec<Summary>> {
    let spec = manifest
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("manifest has no sweep".into()))?;
    if spec.values.is_empty() {
        return Err(CliError::Usage(
            "--values must list at least one value".into(),
        ));
    }
    manifest.check_inputs()?;
    ensure_writable(&manifest.out)?;
    write_file(&manifest.out.join("manifest.json"), &manifest.to_json())?;
    let (pool, test) = load_data(manifest)?;
    let cells = spec
        .values
        .iter()
        .map(|&v| {
            let m = sweep_cell(manifest, spec.axis, v);
            write_file_after_mkdir(&m)?;
            make_cell(m, &pool)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let summaries = run_cells(&cells, &pool, &test, manifest.jobs)?;
    let table = sweep_table(spec.axis, &spec.values, &summaries);
    write_file(&manifest.out.join("sweep.csv"), &table)?;
    print!("{table}");
    Ok(summaries)
}

fn write_file_after_mkdir(m: &RunManifest) -> CliResult<()> {
    ensure_writable(&m.out)?;
    write_file(&m.out.join("manifest.json"), &m.to_json())
}

/// Entry point used by the binary: echoes the manifest, then runs or sweeps.
pub fn execute(manifest: &RunManifest) -> CliResult<()> {
    println!("{}", manifest.to_json());
    if manifest.sweep.is_some() {
        sweep(manifest)?;
    } else {
        let s = run(manifest)?;
        println!(
            "{}",
            serde_json::to_string_pretty(&s).expect("summary serializes")
        );
    }
    Ok(())
}
