use serde::Serialize;

use crate::model::Strategy;
use crate::stats::Summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    First,
    Subsequent,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::First => "first",
            Self::Subsequent => "subsequent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub strategy: Strategy,
    pub phase: Phase,
    pub summary: Summary,
}

/// Per strategy and phase timing statistics, in seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
}

impl BenchReport {
    pub fn push(&mut self, strategy: Strategy, phase: Phase, samples: &[f64]) {
        if let Some(summary) = Summary::of(samples) {
            self.rows.push(ReportRow {
                strategy,
                phase,
                summary,
            });
        }
    }

    pub fn get(&self, strategy: Strategy, phase: Phase) -> Option<&Summary> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.phase == phase)
            .map(|r| &r.summary)
    }

    pub fn mean(&self, strategy: Strategy, phase: Phase) -> f64 {
        self.get(strategy, phase).map_or(f64::NAN, |s| s.mean)
    }

    /// `strategy,phase,mean_s,median_s,stddev_s,n` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["strategy", "phase", "mean_s", "median_s", "stddev_s", "n"])
            .expect("writing to memory");
        for r in &self.rows {
            let s = &r.summary;
            w.write_record([
                r.strategy.name().to_string(),
                r.phase.name().to_string(),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.median),
                format!("{:.6}", s.stddev),
                s.n.to_string(),
            ])
            .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV is UTF-8")
    }

    /// Aligned table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<18} {:<11} {:>12} {:>12} {:>12} {:>6}\n",
            "strategy", "phase", "mean_s", "median_s", "stddev_s", "n"
        );
        for r in &self.rows {
            let s = &r.summary;
            out += &format!(
                "{:<18} {:<11} {:>12.6} {:>12.6} {:>12.6} {:>6}\n",
                r.strategy.name(),
                r.phase.name(),
                s.mean,
                s.median,
                s.stddev,
                s.n
            );
        }
        out
    }
}
