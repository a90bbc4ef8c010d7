//! Mechanical execution of the bound-propagation calculus: single-step
//! transforms, upward iteration and schedules, ladder descent, and empirical
//! calibration of the splitting constant `C1`.
//!
//! Side conditions that the asymptotic arguments only guarantee for large
//! enough parameters are evaluated at the given finite values and reported
//! with their slack. A failing condition is reported, never hidden.

mod calibrate;
mod ladder;
mod propagate;
mod step;

pub use calibrate::{
    calibrate_c1, calibrate_c1_from_sources, candidate_grid, candidate_reports, candidate_reports_from_sources,
    Calibration, CandidateReport,
};
pub use ladder::{ladder_descent, LadderCertificate};
pub use propagate::{
    iterate_quadratic_lower, iterate_quadratic_upper, multilevel_schedule, LevelStep, MultilevelSchedule, Propagation,
};
pub use step::{single_step_check, slope_step, step_down, step_up, SingleStep, SlopeStep, StepResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scale::ScaleFunctions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

fn default_eps() -> f64 {
    0.05
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub c1: f64,
    pub d: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Minimal width for ladder descent; defaults to `c1`.
    #[serde(default)]
    pub w: Option<f64>,
    #[serde(default = "one")]
    pub c3: f64,
    #[serde(default = "one")]
    pub c2_volume: f64,
}

impl EngineParams {
    pub fn new(c1: f64, d: usize) -> Self {
        Self { c1, d, eps: default_eps(), w: None, c3: 1.0, c2_volume: 1.0 }
    }

    pub fn width_floor(&self) -> f64 {
        self.w.unwrap_or(self.c1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 3.0 && self.c1.is_finite()) {
            return Err(Error::InvalidParameter(format!("C1 must be at least 3, got {}", self.c1)));
        }
        if self.d == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if self.width_floor() < self.c1 {
            return Err(Error::InvalidParameter(format!(
                "W = {} must be at least C1 = {}",
                self.width_floor(),
                self.c1
            )));
        }
        if !(self.c3 > 0.0 && self.c2_volume > 0.0) {
            return Err(Error::InvalidParameter("C3 and C2 must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn scale(&self) -> ScaleFunctions {
        ScaleFunctions::new(self.d)
    }

    /// `log^(d-1) S(v)`, required positive.
    pub(crate) fn log_s(&self, v: f64) -> Result<f64> {
        let l = self.scale().log_s_pow(v);
        if !(l > 0.0) {
            return Err(Error::InvalidParameter(format!("log S(v) <= 0 at v = {v}")));
        }
        Ok(l)
    }
}

/// A named inequality with its margin; `slack >= 0` iff it holds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub slack: f64,
}

impl Check {
    /// `lhs <= rhs`.
    pub fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), pass: lhs <= rhs, slack: rhs - lhs }
    }

    /// `lhs >= rhs`.
    pub fn ge(name: &str, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), pass: lhs >= rhs, slack: lhs - rhs }
    }

    /// Worst case of a family of `lhs_k <= rhs_k`; passes vacuously when empty.
    pub fn all_le(name: &str, pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut slack = f64::INFINITY;
        let mut pass = true;
        for (l, r) in pairs {
            pass &= l <= r;
            slack = slack.min(r - l);
        }
        Self { name: name.into(), pass, slack }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}
