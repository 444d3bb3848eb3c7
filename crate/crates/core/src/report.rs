//! Run reports: JSON (fixed key order), per-epoch CSV and a plain-text table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::DatasetStats;
use crate::error::{Error, Result};
use crate::instrument::{CostCounters, SpeedReport};
use crate::scalar::Scalar;
use crate::seed::Seeds;
use crate::training::{EpochRecord, Mode, TestMetrics, WindowStats};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: DatasetStats,
    pub n_val_users: usize,
    pub n_test_users: usize,
    pub n_cold_items: usize,
    pub steps_per_epoch: usize,
}

/// Everything a run produced. Field order is the serialized key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub precision: String,
    pub mode: Mode,
    pub latency: Option<String>,
    pub accumulation_steps: Option<usize>,
    pub recompute_encodings: bool,
    pub seeds: Seeds,
    pub data: SplitSummary,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub test: TestMetrics,
    pub counters: CostCounters,
    pub windows: WindowStats,
    pub speed: Option<SpeedReport>,
    pub config: RunConfig,
}

impl RunReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        config: &RunConfig,
        accumulation_steps: Option<usize>,
        data: SplitSummary,
        epochs: Vec<EpochRecord>,
        best_epoch: usize,
        stopped_early: bool,
        test: TestMetrics,
        counters: CostCounters,
        windows: WindowStats,
    ) -> Self {
        let gram = config.train.mode == Mode::Gram;
        Self {
            version: VERSION.to_string(),
            precision: T::NAME.to_string(),
            mode: config.train.mode,
            latency: gram.then(|| config.train.latency.to_string()),
            accumulation_steps,
            recompute_encodings: gram && config.train.recompute_encodings,
            seeds: config.seeds(),
            data,
            epochs,
            best_epoch,
            stopped_early,
            test,
            counters,
            windows,
            speed: None,
            config: config.clone(),
        }
    }

    /// Copy with every wall-clock field zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.counters = r.counters.without_timing();
        for e in &mut r.epochs {
            e.wall_clock_ns = 0;
        }
        if let Some(s) = &mut r.speed {
            s.e2e_wall_clock_ns = 0;
            s.gram_wall_clock_ns = 0;
            s.gram_cf_phase_ns = 0;
            s.gram_ce_phase_ns = 0;
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn epochs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.epochs {
            w.serialize(e)
                .map_err(|e| Error::Validation(format!("csv: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Validation(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Validation(format!("csv: {e}")))
    }

    /// Aligned human-readable summary.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let mut rows: Vec<(&str, String)> = vec![
            ("version", self.version.clone()),
            ("mode", self.mode.to_string()),
            ("precision", self.precision.clone()),
        ];
        if let Some(l) = &self.latency {
            rows.push((
                "latency",
                format!("{l} (N={})", self.accumulation_steps.unwrap_or(1)),
            ));
            rows.push(("recompute_encodings", self.recompute_encodings.to_string()));
        }
        rows.extend([
            ("epochs_run", self.epochs.len().to_string()),
            ("best_epoch", self.best_epoch.to_string()),
            ("test_auc", fmt(self.test.auc)),
            ("test_cs_auc", fmt(self.test.cs_auc)),
            ("test_mrr", fmt(self.test.mrr)),
            ("test_ndcg@5", fmt(self.test.ndcg_at_5)),
            ("test_ndcg@10", fmt(self.test.ndcg_at_10)),
            (
                "ce_forward_calls",
                self.counters.ce_forward_calls.to_string(),
            ),
            (
                "ce_backward_calls",
                self.counters.ce_backward_calls.to_string(),
            ),
            (
                "cf_forward_calls",
                self.counters.cf_forward_calls.to_string(),
            ),
            (
                "activation_peak",
                self.counters.activation_elements_peak.to_string(),
            ),
            ("flop_estimate", self.counters.flop_estimate.to_string()),
            (
                "wall_clock_ms",
                format!("{:.1}", self.counters.wall_clock_ns as f64 / 1e6),
            ),
        ]);
        if let Some(s) = &self.speed {
            rows.push((
                "measured_call_ratio",
                format!("{}/{}", s.measured_call_ratio.0, s.measured_call_ratio.1),
            ));
            rows.push((
                "theoretical_r",
                format!("{}/{}", s.theoretical_r.0, s.theoretical_r.1),
            ));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    /// Write `report.json`, `epochs.csv` and `report.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("report.json", self.to_json()?),
            ("epochs.csv", self.epochs_csv()?),
            ("report.txt", self.table()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
