//! Side-by-side runs of several modes on the same seed and environments.

use std::fs;
use std::path::Path;

use log::warn;

use super::config::ExperimentConfig;
use super::metrics::{final_window_start, window_stats, write_csv, Mode, Summary, WindowStats};
use super::runner::{run_in_memory, RunResult};
use super::sweep::CURVE_BUCKETS;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ModeResult {
    pub mode: Mode,
    pub run: RunResult,
    pub final_window: WindowStats,
    /// Mean training loss over final-window rows that trained.
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub results: Vec<ModeResult>,
}

impl Comparison {
    pub fn get(&self, mode: Mode) -> Option<&ModeResult> {
        self.results.iter().find(|r| r.mode == mode)
    }

    pub fn summaries(&self) -> Vec<&Summary> {
        self.results.iter().map(|r| &r.run.summary).collect()
    }
}

/// Removes repeated modes, keeping the first occurrence.
pub fn dedup_modes(modes: &[Mode]) -> Vec<Mode> {
    let mut out: Vec<Mode> = Vec::new();
    for &m in modes {
        if out.contains(&m) {
            warn!("mode {m} listed more than once; running it once");
        } else {
            out.push(m);
        }
    }
    out
}

/// Runs each distinct mode with `cfg`'s seed. Every mode simulates
/// `cfg.horizon()` epochs of the federated schedule when federated, and
/// `cfg.epochs` otherwise.
pub fn compare(cfg: &ExperimentConfig, modes: &[Mode]) -> Result<Comparison> {
    let modes = dedup_modes(modes);
    if modes.len() < 2 {
        return Err(Error::Validation(vec![format!(
            "compare needs at least two distinct modes (got {})",
            modes.len()
        )]));
    }
    let mut results = Vec::with_capacity(modes.len());
    for mode in modes {
        let mut c = cfg.clone();
        c.mode = mode;
        let run = run_in_memory(&c)?;
        let from = final_window_start(run.horizon);
        let final_window = window_stats(&run.rows, from, run.horizon);
        let losses: Vec<f64> = run
            .rows
            .iter()
            .filter(|r| r.epoch >= from)
            .filter_map(|r| r.train_loss)
            .collect();
        let final_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        results.push(ModeResult {
            mode,
            run,
            final_window,
            final_loss,
        });
    }
    Ok(Comparison { results })
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `<mode>/metrics.csv`, `<mode>/summary.json`, the paired table
/// `compare.csv`, and bucketed curves per device and pooled in
/// `compare_curves.csv`.
pub fn write_comparison(cmp: &Comparison, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for r in &cmp.results {
        let dir = out_dir.join(r.mode.as_str());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("metrics.csv");
        write_csv(&r.run.rows, fs::File::create(&path).map_err(|e| Error::io(&path, e))?)?;
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(&r.run.summary)?).map_err(|e| Error::io(&path, e))?;
    }

    let path = out_dir.join("compare.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "mode", "final_window_mean_utility", "final_window_std", "final_loss", "energy", "exec_delay", "queuing",
        "drops", "payment", "offload_fraction",
    ])?;
    for r in &cmp.results {
        let s = &r.final_window;
        w.write_record([
            r.mode.to_string(),
            s.utility_mean.to_string(),
            s.utility_std.to_string(),
            opt(r.final_loss),
            s.energy_mean.to_string(),
            s.delay_mean.to_string(),
            s.queuing_mean.to_string(),
            s.drops_mean.to_string(),
            s.payment_mean.to_string(),
            s.offload_fraction.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join("compare_curves.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["mode", "device", "bucket", "epoch_start", "mean_utility", "mean_loss"])?;
    for r in &cmp.results {
        let horizon = r.run.horizon.max(1);
        let buckets = CURVE_BUCKETS.min(horizon as usize);
        let mut ids: Vec<usize> = r.run.rows.iter().map(|x| x.device_id).collect();
        ids.sort_unstable();
        ids.dedup();
        let groups = ids.iter().map(|&id| (id.to_string(), Some(id))).chain([("pooled".to_string(), None)]);
        for (label, id) in groups {
            let mut acc = vec![(0.0, 0usize, 0.0, 0usize); buckets];
            for row in r.run.rows.iter().filter(|x| id.is_none_or(|d| x.device_id == d)) {
                let b = ((row.epoch as u128 * buckets as u128) / horizon as u128) as usize;
                if let Some(a) = acc.get_mut(b) {
                    a.0 += row.utility;
                    a.1 += 1;
                    if let Some(l) = row.train_loss {
                        a.2 += l;
                        a.3 += 1;
                    }
                }
            }
            for (b, (us, un, ls, ln)) in acc.into_iter().enumerate() {
                if un == 0 {
                    continue;
                }
                w.write_record([
                    r.mode.to_string(),
                    label.clone(),
                    b.to_string(),
                    (b as u64 * horizon / buckets as u64).to_string(),
                    (us / un as f64).to_string(),
                    opt((ln > 0).then(|| ls / ln as f64)),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
