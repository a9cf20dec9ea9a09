//! Per device-epoch metric rows with their CSV form, plus run summaries.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::device::EpochRecord;
use crate::error::{Error, Result};

/// Fraction of the run, counted from the end, that summaries average over.
pub const FINAL_WINDOW_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fl,
    Centralized,
    Greedy,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fl => "fl",
            Mode::Centralized => "centralized",
            Mode::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fl" => Ok(Mode::Fl),
            "centralized" => Ok(Mode::Centralized),
            "greedy" => Ok(Mode::Greedy),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected fl, centralized, or greedy)"
            ))),
        }
    }
}

/// Column order of the metrics CSV.
pub const CSV_HEADER: [&str; 13] = [
    "round",
    "epoch",
    "device_id",
    "mode",
    "utility",
    "exec_delay",
    "queuing",
    "drops",
    "payment",
    "energy_spent",
    "offloaded",
    "epsilon",
    "train_loss",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub epoch: u64,
    pub device_id: usize,
    pub mode: Mode,
    pub utility: f64,
    pub exec_delay: f64,
    pub queuing: usize,
    pub drops: usize,
    pub payment: f64,
    pub energy_spent: usize,
    pub offloaded: bool,
    pub epsilon: f64,
    pub train_loss: Option<f64>,
}

impl MetricsRow {
    pub fn from_record(
        round: u64,
        epoch: u64,
        device_id: usize,
        mode: Mode,
        epsilon: f64,
        record: &EpochRecord,
        train_loss: Option<f64>,
    ) -> Self {
        let o = &record.outcome;
        Self {
            round,
            epoch,
            device_id,
            mode,
            utility: o.utility,
            exec_delay: o.delay,
            queuing: o.queuing,
            drops: o.drops,
            payment: o.payment,
            energy_spent: o.energy_units_spent,
            offloaded: record.action.offload > 0 && record.action.energy > 0,
            epsilon,
            train_loss,
        }
    }

    pub(crate) fn fields(&self) -> [String; 13] {
        [
            self.round.to_string(),
            self.epoch.to_string(),
            self.device_id.to_string(),
            self.mode.to_string(),
            self.utility.to_string(),
            self.exec_delay.to_string(),
            self.queuing.to_string(),
            self.drops.to_string(),
            self.payment.to_string(),
            self.energy_spent.to_string(),
            u8::from(self.offloaded).to_string(),
            self.epsilon.to_string(),
            self.train_loss.map(|l| l.to_string()).unwrap_or_default(),
        ]
    }
}

/// Receives rows as a run produces them.
pub trait MetricsSink {
    fn record(&mut self, row: MetricsRow) -> Result<()>;
}

impl MetricsSink for Vec<MetricsRow> {
    fn record(&mut self, row: MetricsRow) -> Result<()> {
        self.push(row);
        Ok(())
    }
}

/// Discards rows.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _row: MetricsRow) -> Result<()> {
        Ok(())
    }
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected metrics header {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    let int = |s: &str| s.parse::<u64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(MetricsRow {
                round: int(&rec[0])?,
                epoch: int(&rec[1])?,
                device_id: int(&rec[2])? as usize,
                mode: rec[3].parse()?,
                utility: num(&rec[4])?,
                exec_delay: num(&rec[5])?,
                queuing: int(&rec[6])? as usize,
                drops: int(&rec[7])? as usize,
                payment: num(&rec[8])?,
                energy_spent: int(&rec[9])? as usize,
                offloaded: &rec[10] == "1",
                epsilon: num(&rec[11])?,
                train_loss: if rec[12].is_empty() { None } else { Some(num(&rec[12])?) },
            })
        })
        .collect()
}

/// The run summary written next to the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub final_window_mean_utility: f64,
    pub final_window_std: f64,
    pub energy_per_epoch_mean: f64,
    pub drops_per_epoch_mean: f64,
}

/// Averages of the rows in a run's final window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowStats {
    pub rows: usize,
    pub utility_mean: f64,
    pub utility_std: f64,
    pub energy_mean: f64,
    pub drops_mean: f64,
    pub payment_mean: f64,
    pub delay_mean: f64,
    pub queuing_mean: f64,
    pub offload_fraction: f64,
}

/// First epoch index of the final window of a run of `total_epochs`.
pub fn final_window_start(total_epochs: u64) -> u64 {
    let keep = ((total_epochs as f64) * FINAL_WINDOW_FRACTION).ceil() as u64;
    total_epochs - keep.clamp(1.min(total_epochs), total_epochs)
}

/// Statistics over rows with `epoch` in `[from, to)`.
pub fn window_stats(rows: &[MetricsRow], from: u64, to: u64) -> WindowStats {
    let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.epoch >= from && r.epoch < to).collect();
    if sel.is_empty() {
        return WindowStats::default();
    }
    let n = sel.len() as f64;
    let mean = |f: &dyn Fn(&MetricsRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
    let utility_mean = mean(&|r| r.utility);
    let var = sel.iter().map(|r| (r.utility - utility_mean).powi(2)).sum::<f64>() / n;
    WindowStats {
        rows: sel.len(),
        utility_mean,
        utility_std: var.sqrt(),
        energy_mean: mean(&|r| r.energy_spent as f64),
        drops_mean: mean(&|r| r.drops as f64),
        payment_mean: mean(&|r| r.payment),
        delay_mean: mean(&|r| r.exec_delay),
        queuing_mean: mean(&|r| r.queuing as f64),
        offload_fraction: mean(&|r| f64::from(u8::from(r.offloaded))),
    }
}

/// Summary over the final window of a run that spans `total_epochs`.
pub fn summarize(mode: Mode, rows: &[MetricsRow], total_epochs: u64) -> Summary {
    let s = window_stats(rows, final_window_start(total_epochs), total_epochs);
    Summary {
        mode,
        final_window_mean_utility: s.utility_mean,
        final_window_std: s.utility_std,
        energy_per_epoch_mean: s.energy_mean,
        drops_per_epoch_mean: s.drops_mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: u64, utility: f64) -> MetricsRow {
        MetricsRow {
            round: 0,
            epoch,
            device_id: 0,
            mode: Mode::Greedy,
            utility,
            exec_delay: 0.004,
            queuing: 1,
            drops: 0,
            payment: 0.0,
            energy_spent: 2,
            offloaded: false,
            epsilon: 0.01,
            train_loss: None,
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut rows: Vec<MetricsRow> = (0..5).map(|e| row(e, -0.1 * e as f64 - 1e-17)).collect();
        rows[2].train_loss = Some(0.125);
        rows[3].offloaded = true;
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("round,epoch,device_id,mode,utility,exec_delay,queuing,drops,payment,energy_spent,offloaded,epsilon,train_loss\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn final_window_is_last_fifth() {
        assert_eq!(final_window_start(100), 80);
        assert_eq!(final_window_start(7), 5);
        assert_eq!(final_window_start(1), 0);
        assert_eq!(final_window_start(0), 0);
    }

    #[test]
    fn summary_uses_final_window() {
        let rows: Vec<MetricsRow> = (0..10).map(|e| row(e, e as f64)).collect();
        let s = summarize(Mode::Greedy, &rows, 10);
        assert_eq!(s.final_window_mean_utility, 8.5);
        assert_eq!(s.final_window_std, 0.5);
        assert_eq!(s.energy_per_epoch_mean, 2.0);
    }
}
