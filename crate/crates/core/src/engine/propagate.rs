use serde::Serialize;

use super::step::{step_down_at, step_up};
use super::{Check, Direction, EngineParams};
use crate::error::{Error, Result};
use crate::geometry::AxisBox;

/// One rung of an upward iteration, at `B / 2^level`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStep {
    pub level: usize,
    pub vol: f64,
    /// Envelope coefficient square root valid at this level.
    pub u: f64,
    pub radius: f64,
    /// Step constants used to reach this level from the one below; zero at the seed.
    pub x: f64,
    pub p: f64,
}

/// Result of composing `n` single steps from `B / 2^n` up to `B`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Propagation {
    #[serde(rename = "box")]
    pub domain: AxisBox,
    pub direction: Direction,
    /// `U` (upper) or `L` (lower) with `f_B(lambda)` bounded by `coefficient * lambda^2`.
    pub coefficient: f64,
    pub radius: f64,
    /// Seed first, `B` last.
    pub steps: Vec<LevelStep>,
}

impl Propagation {
    pub fn x_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.x).sum()
    }
}

fn check_inputs(a: f64, delta: f64, b: &AxisBox, n: usize, params: &EngineParams) -> Result<()> {
    params.validate()?;
    if b.dim() != params.d {
        return Err(Error::DimensionMismatch { expected: params.d, got: b.dim() });
    }
    if !(a > 0.0 && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("need a, delta > 0, got {a}, {delta}")));
    }
    let top = b.halve_n(n.saturating_sub(1));
    if top.width() < params.c1 {
        return Err(Error::WidthBelowC1 { width: top.width(), c1: params.c1 });
    }
    Ok(())
}

fn iterate(
    a: f64,
    delta: f64,
    b: &AxisBox,
    n: usize,
    params: &EngineParams,
    direction: Direction,
) -> Result<Propagation> {
    check_inputs(a, delta, b, n, params)?;
    let seed = b.halve_n(n);
    let mut steps = vec![LevelStep { level: n, vol: seed.vol(), u: a.sqrt(), radius: delta, x: 0.0, p: 1.0 }];
    let (mut u, mut r) = (a.sqrt(), delta);
    for level in (0..n).rev() {
        let bk = b.halve_n(level);
        let s = match direction {
            Direction::Up => step_up(u, r, &bk, params)?,
            Direction::Down => step_down_at(u, r, &bk, params, level)?,
        };
        u = s.u_out;
        r = s.delta_out;
        steps.push(LevelStep { level, vol: bk.vol(), u, radius: r, x: s.x, p: s.p });
    }
    Ok(Propagation { domain: b.clone(), direction, coefficient: u * u, radius: r, steps })
}

/// Lifts `f_{B/2^n} <= a lambda^2` on `[-delta, delta]` to a bound on `f_B`.
pub fn iterate_quadratic_upper(
    a: f64,
    delta: f64,
    b: &AxisBox,
    n: usize,
    params: &EngineParams,
) -> Result<Propagation> {
    iterate(a, delta, b, n, params, Direction::Up)
}

/// Lifts `f_{B/2^n} >= a lambda^2` on `[-delta, delta]` to a bound on `f_B`.
pub fn iterate_quadratic_lower(
    a: f64,
    delta: f64,
    b: &AxisBox,
    n: usize,
    params: &EngineParams,
) -> Result<Propagation> {
    iterate(a, delta, b, n, params, Direction::Down)
}

/// Explicit multi-level schedule with every finite-scale side condition evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultilevelSchedule {
    pub direction: Direction,
    pub a: f64,
    pub delta: f64,
    pub n: usize,
    /// Tail split actually used, clamped to `[0, n]`.
    pub split: usize,
    pub split_requested: usize,
    /// Indexed by level `k = 0..=n`.
    pub a_seq: Vec<f64>,
    pub x_seq: Vec<f64>,
    pub m_seq: Vec<f64>,
    pub delta_seq: Vec<f64>,
    /// `p_k` for `k = 0..n`, linking level `k` to `k + 1`.
    pub p_seq: Vec<f64>,
    /// Upper-direction `p_k`, used for the radii in both directions.
    pub p_tilde_seq: Vec<f64>,
    pub side_conditions: Vec<Check>,
}

impl MultilevelSchedule {
    pub fn passes(&self) -> bool {
        super::all_pass(&self.side_conditions)
    }
}

// Relative allowance for equalities that hold by construction.
const ROUNDING: f64 = 1e-12;

/// Builds the level-by-level schedule for the given split `N`. Never fails on
/// side conditions; they are reported with their slack.
pub fn multilevel_schedule(
    a: f64,
    delta: f64,
    b: &AxisBox,
    n: usize,
    split: usize,
    params: &EngineParams,
    direction: Direction,
) -> Result<MultilevelSchedule> {
    params.validate()?;
    if b.dim() != params.d {
        return Err(Error::DimensionMismatch { expected: params.d, got: b.dim() });
    }
    if !(a > 0.0 && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("need a, delta > 0, got {a}, {delta}")));
    }
    let d = params.d as f64;
    let eps = params.eps;
    let c1 = params.c1;
    let sf = params.scale();
    let big_n = split.min(n);
    let vol: Vec<f64> = (0..=n).map(|k| b.halve_n(k).vol()).collect();
    let x_seq: Vec<f64> = vol.iter().map(|&v| (c1 / sf.r(v)).sqrt()).collect();
    let x_n = x_seq[n];
    let sign = match direction {
        Direction::Up => 1.0,
        Direction::Down => -1.0,
    };
    let root = |k: usize, s: f64| {
        let tail: f64 = (1..=n - k).map(|i| 2f64.powf(-(i as f64) / (2.0 * d))).sum();
        a.sqrt() + s * x_n * tail
    };
    let roots: Vec<f64> = (0..=n).map(|k| root(k, sign)).collect();
    let up_roots: Vec<f64> = (0..=n).map(|k| root(k, 1.0)).collect();
    let mut a_seq: Vec<f64> = roots.iter().map(|r| r * r).collect();
    // Empty sum: keep the seed bit-exact rather than a rounded sqrt-square.
    a_seq[n] = a;
    let p_tilde_seq: Vec<f64> = (0..n).map(|k| (up_roots[k + 1] + x_seq[k]) / up_roots[k + 1]).collect();
    let p_seq: Vec<f64> = match direction {
        Direction::Up => p_tilde_seq.clone(),
        Direction::Down => (0..n).map(|k| roots[k + 1] / (roots[k + 1] - x_seq[k])).collect(),
    };
    let logs: Vec<f64> = vol.iter().map(|&v| sf.log_s_pow(v)).collect();
    let m_seq: Vec<f64> = (0..=n).map(|k| (sf.s(vol[k]) / a).sqrt() / (c1 * logs[k])).collect();
    let start = n - big_n;
    let mut delta_seq = m_seq.clone();
    for k in start + 1..=n {
        delta_seq[k] = delta_seq[k - 1] * p_tilde_seq[k - 1] / std::f64::consts::SQRT_2;
    }

    let sqrt2 = std::f64::consts::SQRT_2;
    let target_root = match direction {
        Direction::Up => (a + eps).sqrt(),
        Direction::Down => a.sqrt(),
    };
    let delta_target = (sf.s(vol[0]) / (target_root * target_root)).sqrt() / (c1 * logs[0]);
    let mut checks = Vec::new();
    checks.push(Check::le("a_at_most_inv_eps", a, 1.0 / eps));
    checks.push(Check::ge("width_at_level_n_minus_1", b.halve_n(n.saturating_sub(1)).width(), c1));
    match direction {
        Direction::Up => {
            checks.push(Check::ge("a_at_least_eps", a, eps));
            checks.push(Check::le("a0_at_most_a_plus_eps", a_seq[0], a + eps));
        }
        Direction::Down => {
            checks.push(Check::ge("a0_at_least_a_minus_eps", a_seq[0], a - eps));
            checks.push(Check::ge("roots_positive", roots.iter().cloned().fold(f64::INFINITY, f64::min), 0.0));
        }
    }
    checks.push(Check::le("delta_n_at_most_delta", delta_seq[n], delta));
    checks.push(Check::ge("delta_0_reaches_target", delta_seq[0] * (1.0 + ROUNDING), delta_target));
    let recursion = (0..n).map(|k| {
        let step = match direction {
            Direction::Up => sqrt2 / p_seq[k] * delta_seq[k + 1],
            Direction::Down => p_seq[k] * sqrt2 * delta_seq[k + 1],
        };
        (delta_seq[k], step.min(m_seq[k]) * (1.0 + ROUNDING))
    });
    checks.push(Check::all_le("radius_recursion", recursion));
    let dominated = (0..n).map(|k| {
        let gain = match direction {
            Direction::Up => (p_seq[k] - 1.0) / p_seq[k],
            Direction::Down => p_seq[k] - 1.0,
        };
        (m_seq[k], gain * vol[k].sqrt() / (c1 * logs[k]))
    });
    checks.push(Check::all_le("m_dominated", dominated));
    checks.push(Check::all_le("m_ratio", (0..start).map(|k| (m_seq[k], sqrt2 / p_tilde_seq[k] * m_seq[k + 1]))));
    let tail_product: f64 = p_tilde_seq[start..].iter().product();
    checks.push(Check::le("tail_product", tail_product, 2f64.powf(big_n as f64 / (2.0 * d))));
    checks.push(Check::all_le("p_monotone", p_tilde_seq.windows(2).map(|w| (w[0], w[1]))));

    Ok(MultilevelSchedule {
        direction,
        a,
        delta,
        n,
        split: big_n,
        split_requested: split,
        a_seq,
        x_seq,
        m_seq,
        delta_seq,
        p_seq,
        p_tilde_seq,
        side_conditions: checks,
    })
}
