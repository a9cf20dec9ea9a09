//! Executes one configured experiment and writes its artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::metrics::{summarize, MetricsRow, MetricsSink, Mode, Summary, CSV_HEADER};
use crate::baselines::{centralized_train, run_greedy};
use crate::error::{Error, Result};
use crate::federation::{Federation, RoundReport};
use crate::qnet::QNetParams;

/// Everything a run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub rows: Vec<MetricsRow>,
    pub rounds: Vec<RoundReport>,
    pub summary: Summary,
    pub horizon: u64,
}

/// Streams rows to a CSV file, flushing every `flush_interval` rows, and
/// keeps them for the summary.
struct CsvSink {
    writer: csv::Writer<BufWriter<File>>,
    path: PathBuf,
    flush_interval: usize,
    since_flush: usize,
    rows: Vec<MetricsRow>,
}

impl CsvSink {
    fn create(path: PathBuf, flush_interval: usize) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        writer.write_record(CSV_HEADER)?;
        Ok(Self {
            writer,
            path,
            flush_interval,
            since_flush: 0,
            rows: Vec::new(),
        })
    }

    fn flush(&mut self) -> Result<()> {
        self.since_flush = 0;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl MetricsSink for CsvSink {
    fn record(&mut self, row: MetricsRow) -> Result<()> {
        self.writer.write_record(row.fields())?;
        self.rows.push(row);
        self.since_flush += 1;
        if self.since_flush >= self.flush_interval {
            self.flush()?;
        }
        Ok(())
    }
}

/// Runs the configured mode, handing every model checkpoint to `checkpoint`.
pub fn simulate(
    cfg: &ExperimentConfig,
    sink: &mut dyn MetricsSink,
    mut checkpoint: impl FnMut(&str, &QNetParams) -> Result<()>,
) -> Result<Vec<RoundReport>> {
    match cfg.mode {
        Mode::Greedy => {
            run_greedy(&cfg.system, cfg.devices, cfg.epochs, cfg.seed, sink)?;
            Ok(Vec::new())
        }
        Mode::Centralized => {
            let learner = centralized_train(&cfg.system, &cfg.agent, cfg.devices, cfg.epochs, cfg.seed, sink)?;
            checkpoint("final", &learner.agent.current)?;
            Ok(Vec::new())
        }
        Mode::Fl => {
            let mut fed = Federation::new(cfg.federation.clone(), &cfg.system, &cfg.agent, cfg.devices, cfg.seed)?;
            let mut reports = Vec::with_capacity(cfg.federation.rounds as usize);
            for _ in 0..cfg.federation.rounds {
                let report = fed.run_round(sink)?;
                if cfg.checkpoint_every > 0 && report.round % cfg.checkpoint_every == 0 {
                    for (slot, model) in fed.models.iter().enumerate() {
                        checkpoint(&model_name(&format!("round_{:06}", report.round), slot, fed.models.len()), model)?;
                    }
                }
                reports.push(report);
            }
            for (slot, model) in fed.models.iter().enumerate() {
                checkpoint(&model_name("final", slot, fed.models.len()), model)?;
            }
            Ok(reports)
        }
    }
}

fn model_name(stem: &str, slot: usize, slots: usize) -> String {
    if slots == 1 {
        stem.to_owned()
    } else {
        format!("{stem}_en{}", slot + 1)
    }
}

/// Runs without touching the filesystem.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<RunResult> {
    let mut rows = Vec::new();
    let rounds = simulate(cfg, &mut rows, |_, _| Ok(()))?;
    let horizon = cfg.horizon();
    Ok(RunResult {
        summary: summarize(cfg.mode, &rows, horizon),
        rows,
        rounds,
        horizon,
    })
}

#[derive(Serialize)]
struct RoundLine<'a> {
    round: u64,
    selected: &'a [usize],
    uploads: &'a [(usize, u64)],
    weights: &'a [f64],
    excluded: &'a [usize],
    model_digests: &'a [String],
    mean_utility: &'a [(usize, f64)],
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs the experiment and writes `metrics.csv`, `summary.json`,
/// `checkpoints/*.json`, and for federated runs `rounds.jsonl` into
/// `cfg.out_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    let out = &cfg.out_dir;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;

    let mut sink = CsvSink::create(out.join("metrics.csv"), cfg.flush_interval)?;
    let rounds = simulate(cfg, &mut sink, |name, model| {
        write_file(&ckpt_dir.join(format!("{name}.json")), model.to_json()?.as_bytes())
    })?;
    sink.flush()?;

    let horizon = cfg.horizon();
    let summary = summarize(cfg.mode, &sink.rows, horizon);
    write_file(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;

    if cfg.mode == Mode::Fl {
        let path = out.join("rounds.jsonl");
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        for r in &rounds {
            let line = serde_json::to_string(&RoundLine {
                round: r.round,
                selected: &r.selected,
                uploads: &r.uploads,
                weights: &r.weights,
                excluded: &r.excluded,
                model_digests: &r.model_digests,
                mean_utility: &r.mean_utility,
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    Ok(RunResult {
        rows: sink.rows,
        rounds,
        summary,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simctl::config::parse_config;
    use crate::simctl::metrics::read_csv;

    fn small(mode: &str, extra: &str) -> ExperimentConfig {
        parse_config(&format!(
            "mode = \"{mode}\"\nseed = 5\ndevices = 4\nepochs = 100\n{extra}\n[system]\n\
             [agent]\nhidden = 8\nwarmup = 16\nbatch_size = 8\n\
             [federation]\nrounds = 2\nm = 2\nlocal_epochs = 30\n"
        ))
        .unwrap()
    }

    #[test]
    fn greedy_run_has_one_row_per_device_epoch() {
        let mut cfg = small("greedy", "");
        cfg.devices = 1;
        let r = run_in_memory(&cfg).unwrap();
        assert_eq!(r.rows.len(), 100);
        assert!(r.rows.iter().all(|row| row.train_loss.is_none()));
    }

    #[test]
    fn federated_run_reports_each_round() {
        let r = run_in_memory(&small("fl", "")).unwrap();
        assert_eq!(r.rounds.len(), 2);
        assert!(r.rounds.iter().all(|rep| rep.selected.len() == 2));
        assert_eq!(r.rows.len(), 2 * 2 * 30);
    }

    #[test]
    fn artifacts_are_written_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small("fl", "");
        cfg.checkpoint_every = 1;
        cfg.out_dir = dir.path().join("a");
        let first = run(&cfg).unwrap();
        cfg.out_dir = dir.path().join("b");
        run(&cfg).unwrap();

        let read = |p: PathBuf| fs::read(p).unwrap();
        for name in ["metrics.csv", "summary.json", "rounds.jsonl", "checkpoints/final.json"] {
            assert_eq!(read(dir.path().join("a").join(name)), read(dir.path().join("b").join(name)), "{name}");
        }
        assert!(dir.path().join("a/checkpoints/round_000002.json").exists());
        let rows = read_csv(File::open(dir.path().join("a/metrics.csv")).unwrap()).unwrap();
        assert_eq!(rows, first.rows);
        let model = QNetParams::from_json(&fs::read_to_string(dir.path().join("a/checkpoints/final.json")).unwrap()).unwrap();
        assert!(model.is_finite());
    }
}
