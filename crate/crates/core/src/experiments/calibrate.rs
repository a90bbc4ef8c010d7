use serde::Serialize;

use super::{derive_seed, ExperimentConfig, ReportRow};
use crate::engine::candidate_reports;
use crate::error::Result;

const TAG: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrateRow {
    pub d: usize,
    pub c1: f64,
    pub evaluated: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub pass: bool,
    /// The smallest passing candidate.
    pub selected: bool,
    pub flag: String,
}

impl ReportRow for CalibrateRow {
    fn pass(&self) -> bool {
        self.pass
    }
    fn flag(&self) -> &str {
        &self.flag
    }
}

/// One row per candidate. Candidates above the selected one are informational;
/// the run fails when nothing passes.
pub fn run_calibrate(cfg: &ExperimentConfig) -> Result<Vec<CalibrateRow>> {
    let reports =
        candidate_reports(&cfg.model, &cfg.boxes, &cfg.calibrate.p_grid, cfg.n_samples, derive_seed(cfg.seed, TAG, 0))?;
    let chosen = reports.iter().position(|r| r.pass);
    Ok(reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let below = chosen.is_some_and(|c| i < c);
            let empty = r.evaluated == 0;
            CalibrateRow {
                d: cfg.model.d,
                c1: r.c1,
                evaluated: r.evaluated,
                violations: r.violations,
                worst_margin: r.worst_margin,
                pass: r.pass,
                selected: chosen == Some(i),
                flag: if chosen == Some(i) || (chosen.is_none() && !empty) {
                    String::new()
                } else if below {
                    "rejected".into()
                } else if empty {
                    "no_admissible_box".into()
                } else {
                    "above_selected".into()
                },
            }
        })
        .collect())
}
