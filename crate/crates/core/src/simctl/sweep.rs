//! Parameter sweeps over seeded repetitions.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{check_param_path, config_from_value, override_value};
use super::metrics::{final_window_start, window_stats, MetricsRow, WindowStats};
use super::runner::run_in_memory;
use crate::error::{Error, Result};

/// Number of epoch buckets in each learning curve.
pub const CURVE_BUCKETS: usize = 50;

/// Fraction of a run, from the start, treated as its early phase.
pub const EARLY_WINDOW_FRACTION: f64 = 0.1;

/// What one repetition contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct RepStats {
    pub seed: u64,
    pub final_window: WindowStats,
    pub early_window: WindowStats,
    /// Mean utility of each epoch bucket.
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: String,
    pub reps: usize,
    /// Mean over repetitions of the final-window mean utility.
    pub mean_utility: f64,
    /// Sample standard deviation of those per-repetition means.
    pub std_utility: f64,
    pub stderr_utility: f64,
    pub mean_early_utility: f64,
    pub mean_energy: f64,
    pub mean_drops: f64,
    pub mean_payment: f64,
    pub mean_delay: f64,
    pub mean_queuing: f64,
    #[serde(skip)]
    pub runs: Vec<RepStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub param: String,
    pub base_seed: u64,
    pub horizon: u64,
    pub points: Vec<SweepPoint>,
}

/// Per-bucket mean utility, bucket `b` covering epochs
/// `[b * horizon / buckets, (b + 1) * horizon / buckets)`.
pub fn utility_curve(rows: &[MetricsRow], horizon: u64, buckets: usize) -> Vec<f64> {
    let buckets = buckets.min(horizon.max(1) as usize);
    let mut sums = vec![0.0; buckets];
    let mut counts = vec![0usize; buckets];
    for r in rows {
        let b = ((r.epoch as u128 * buckets as u128) / horizon.max(1) as u128) as usize;
        if b < buckets {
            sums[b] += r.utility;
            counts[b] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect()
}

fn rep_stats(rows: &[MetricsRow], horizon: u64, seed: u64) -> RepStats {
    let early_end = ((horizon as f64) * EARLY_WINDOW_FRACTION).ceil() as u64;
    RepStats {
        seed,
        final_window: window_stats(rows, final_window_start(horizon), horizon),
        early_window: window_stats(rows, 0, early_end.max(1)),
        curve: utility_curve(rows, horizon, CURVE_BUCKETS),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Runs `reps` repetitions for every value of `param`, with seeds
/// `base_seed + rep`. Repetitions run in parallel; results do not depend on
/// scheduling.
pub fn sweep(
    base: &toml::Value,
    param: &str,
    values: &[String],
    reps: u64,
    seed_override: Option<u64>,
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Validation(vec!["sweep needs at least one value".into()]));
    }
    if reps == 0 {
        return Err(Error::Validation(vec!["reps must be >= 1".into()]));
    }
    check_param_path(base, param)?;
    let mut base = base.clone();
    if let Some(seed) = seed_override {
        override_value(&mut base, "seed", &seed.to_string())?;
    }

    // Validate every point before spending time on any run.
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut doc = base.clone();
        override_value(&mut doc, param, v)?;
        configs.push(config_from_value(doc).map_err(|e| match e {
            Error::Validation(msgs) => Error::Validation(msgs.into_iter().map(|m| format!("{param} = {v}: {m}")).collect()),
            other => other,
        })?);
    }
    let base_seed = configs[0].seed;
    let horizon = configs[0].horizon();

    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|i| (0..reps).map(move |r| (i, r))).collect();
    let results: Vec<Result<RepStats>> = jobs
        .par_iter()
        .map(|&(i, rep)| {
            let mut cfg = configs[i].clone();
            cfg.seed = base_seed.wrapping_add(rep);
            let run = run_in_memory(&cfg)?;
            Ok(rep_stats(&run.rows, run.horizon, cfg.seed))
        })
        .collect();
    let mut per_point: Vec<Vec<RepStats>> = vec![Vec::new(); configs.len()];
    for ((i, _), r) in jobs.iter().zip(results) {
        per_point[*i].push(r?);
    }

    let points = values
        .iter()
        .zip(per_point)
        .map(|(v, runs)| {
            let finals: Vec<f64> = runs.iter().map(|r| r.final_window.utility_mean).collect();
            let std = sample_std(&finals);
            SweepPoint {
                value: v.clone(),
                reps: runs.len(),
                mean_utility: mean(finals.iter().copied()),
                std_utility: std,
                stderr_utility: std / (runs.len() as f64).sqrt(),
                mean_early_utility: mean(runs.iter().map(|r| r.early_window.utility_mean)),
                mean_energy: mean(runs.iter().map(|r| r.final_window.energy_mean)),
                mean_drops: mean(runs.iter().map(|r| r.final_window.drops_mean)),
                mean_payment: mean(runs.iter().map(|r| r.final_window.payment_mean)),
                mean_delay: mean(runs.iter().map(|r| r.final_window.delay_mean)),
                mean_queuing: mean(runs.iter().map(|r| r.final_window.queuing_mean)),
                runs,
            }
        })
        .collect();
    Ok(SweepReport {
        param: param.to_owned(),
        base_seed,
        horizon,
        points,
    })
}

/// Writes `sweep_summary.csv`, `sweep_curves.csv`, and `sweep.json`.
pub fn write_sweep(report: &SweepReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let path = out_dir.join("sweep_summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "param", "value", "reps", "mean_utility", "std_utility", "stderr_utility", "mean_early_utility",
        "mean_energy", "mean_drops", "mean_payment", "mean_delay", "mean_queuing",
    ])?;
    for p in &report.points {
        w.write_record([
            report.param.clone(),
            p.value.clone(),
            p.reps.to_string(),
            p.mean_utility.to_string(),
            p.std_utility.to_string(),
            p.stderr_utility.to_string(),
            p.mean_early_utility.to_string(),
            p.mean_energy.to_string(),
            p.mean_drops.to_string(),
            p.mean_payment.to_string(),
            p.mean_delay.to_string(),
            p.mean_queuing.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join("sweep_curves.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["value", "bucket", "epoch_start", "mean_utility", "std_utility"])?;
    for p in &report.points {
        let buckets = p.runs.first().map_or(0, |r| r.curve.len());
        for b in 0..buckets {
            let ys: Vec<f64> = p.runs.iter().map(|r| r.curve[b]).collect();
            w.write_record([
                p.value.clone(),
                b.to_string(),
                (b as u64 * report.horizon / buckets as u64).to_string(),
                mean(ys.iter().copied()).to_string(),
                sample_std(&ys).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join("sweep.json");
    fs::write(&path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> toml::Value {
        toml::from_str(
            "mode = \"greedy\"\nseed = 10\ndevices = 1\nepochs = 60\n[system]\n",
        )
        .unwrap()
    }

    #[test]
    fn one_point_per_value() {
        let values: Vec<String> = ["0.1", "0.5", "0.9"].map(String::from).to_vec();
        let r = sweep(&base(), "system.p_t", &values, 3, None).unwrap();
        assert_eq!(r.points.len(), 3);
        assert!(r.points.iter().all(|p| p.reps == 3));
        assert_eq!(r.points[0].runs.iter().map(|x| x.seed).collect::<Vec<_>>(), vec![10, 11, 12]);
    }

    #[test]
    fn empty_values_are_rejected() {
        assert!(matches!(sweep(&base(), "system.p_t", &[], 2, None), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let v = vec!["1".to_string()];
        assert!(sweep(&base(), "system.p_q", &v, 1, None).is_err());
    }

    #[test]
    fn curve_buckets_cover_the_run() {
        let rows: Vec<MetricsRow> = (0..10)
            .map(|e| MetricsRow {
                round: 0,
                epoch: e,
                device_id: 0,
                mode: super::super::metrics::Mode::Greedy,
                utility: e as f64,
                exec_delay: 0.0,
                queuing: 0,
                drops: 0,
                payment: 0.0,
                energy_spent: 0,
                offloaded: false,
                epsilon: 0.0,
                train_loss: None,
            })
            .collect();
        assert_eq!(utility_curve(&rows, 10, 5), vec![0.5, 2.5, 4.5, 6.5, 8.5]);
    }
}
