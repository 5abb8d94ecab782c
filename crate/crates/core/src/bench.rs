//! Model comparison over a set of series.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline::{load_series, prepare_series, run_model, RunResult, TestSummary};
use crate::rl::TrainObserver;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    /// The run configuration, serialized as TOML.
    pub config: String,
    pub rows: Vec<TestSummary>,
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aligned text table, one row per (series, model).
    pub fn to_table(&self) -> String {
        let header = ["series", "model", "ratio mean", "ratio std", "budget mean", "budget std", "greedy", "oracle"];
        let cells: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.series.clone(),
                    r.model.to_string(),
                    format!("{:.4}", r.report.ratio_mean),
                    format!("{:.4}", r.report.ratio_std),
                    format!("{:.4}", r.report.budget_mean),
                    format!("{:.4}", r.report.budget_std),
                    format!("{:.4}", r.greedy_reward),
                    format!("{:.4}", r.oracle),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |row: &[&str]| {
            let parts: Vec<String> = row
                .iter()
                .zip(width)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header);
        for row in &cells {
            line(&row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

/// Train and test every model in `cfg.bench_models` on every series.
/// `observer` is called once per cell to obtain that cell's training observer.
pub fn run_bench(cfg: &RunConfig, mut observer: impl FnMut(&str, crate::model::ModelKind) -> Box<dyn TrainObserver>) -> Result<(BenchReport, Vec<RunResult>)> {
    cfg.check()?;
    let mut results = Vec::new();
    for series in load_series(cfg)? {
        let prepared = prepare_series(&series, cfg, None)?;
        for &model in &cfg.bench_models {
            let mut obs = observer(&series.name, model);
            results.push(run_model(&prepared, cfg, model, obs.as_mut())?);
        }
    }
    let report = BenchReport {
        seed: cfg.seed,
        config: cfg.to_toml()?,
        rows: results.iter().map(RunResult::summary).collect(),
    };
    Ok((report, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::rl::EvalReport;

    #[test]
    fn table_columns_line_up() {
        let row = |model, budget| TestSummary {
            series: "synth".into(),
            model,
            best_restart: 0,
            greedy_reward: 0.5,
            oracle: 1.0,
            report: EvalReport { ratio_mean: 0.25, ratio_std: 0.0, budget_mean: budget, budget_std: 1.0, rollouts: 3 },
        };
        let report = BenchReport {
            seed: 0,
            config: String::new(),
            rows: vec![row(ModelKind::Gmemn2n, 51.5), row(ModelKind::Fcnn, 1234.5)],
        };
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("ratio mean") && lines[0].contains("budget std"));
        assert!(lines.iter().all(|l| l.len() == lines[0].len()), "{table}");
        assert!(lines[2].ends_with("1.0000"));
    }
}
