//! Estimation of `f_B(lambda) = log E exp((lambda / sqrt(vol B)) int_B X)` and
//! quadratic envelopes built from it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{BoxSampler, FieldModel};
use crate::geometry::AxisBox;
use crate::scale::{log_pow, ScaleFunctions};
use crate::stats::{par_generate, par_map_max, par_map_sum};

pub const MIN_SAMPLES: usize = 1000;
pub const MIN_ESS: f64 = 30.0;
pub const Z95: f64 = 1.959_963_984_540_054;
pub const POINTS_PER_DECADE: usize = 32;
pub const MIN_ENVELOPE_POINTS: usize = 8;

/// Value of a CGF at one point, with its 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CgfPoint {
    pub value: f64,
    pub ci: f64,
    pub reliable: bool,
    /// True when read off a chord between two grid points.
    pub interpolated: bool,
}

/// Anything that can report `f_B` at a requested tilt.
pub trait CgfSource: Sync {
    fn domain(&self) -> &AxisBox;
    fn at(&self, lambda: f64) -> Option<CgfPoint>;
    fn is_exact(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgfEstimate {
    #[serde(rename = "box")]
    pub domain: AxisBox,
    pub lambda_grid: Vec<f64>,
    pub f_values: Vec<f64>,
    pub ci_half_widths: Vec<f64>,
    pub reliable: Vec<bool>,
    pub n_samples: usize,
    pub exact: bool,
}

fn sorted_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() || grid.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidParameter("lambda grid must be non-empty and finite".into()));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Monte Carlo estimate from fresh samples of the box integral.
pub fn estimate_cgf(model: &FieldModel, b: &AxisBox, grid: &[f64], n_samples: usize, seed: u64) -> Result<CgfEstimate> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!("n_samples must be at least {MIN_SAMPLES}, got {n_samples}")));
    }
    let sampler = BoxSampler::new(model, b)?;
    let samples = par_generate(n_samples as u64, |i| sampler.sample(seed, i));
    CgfEstimate::from_samples(b, grid, &samples)
}

impl CgfEstimate {
    /// Log-mean-exp of `(lambda / sqrt(vol)) * samples` on the grid, sharing
    /// one sample set across all tilts.
    pub fn from_samples(b: &AxisBox, grid: &[f64], samples: &[f64]) -> Result<Self> {
        if samples.len() < MIN_SAMPLES {
            return Err(Error::InvalidParameter(format!("need at least {MIN_SAMPLES} samples, got {}", samples.len())));
        }
        let grid = sorted_grid(grid)?;
        let n = samples.len() as f64;
        let root = b.vol().sqrt();
        let mut f_values = Vec::with_capacity(grid.len());
        let mut ci = Vec::with_capacity(grid.len());
        let mut reliable = Vec::with_capacity(grid.len());
        for &lambda in &grid {
            if lambda == 0.0 {
                f_values.push(0.0);
                ci.push(0.0);
                reliable.push(true);
                continue;
            }
            let t = lambda / root;
            let shift = par_map_max(samples, |y| t * y);
            let s1 = par_map_sum(samples, |y| (t * y - shift).exp());
            let s2 = par_map_sum(samples, |y| (2.0 * (t * y - shift)).exp());
            let mean = s1 / n;
            let var = (s2 / n - mean * mean).max(0.0);
            f_values.push(shift + mean.ln());
            ci.push(Z95 * (var / n).sqrt() / mean);
            reliable.push(s1 * s1 / s2 >= MIN_ESS);
        }
        Ok(Self {
            domain: b.clone(),
            lambda_grid: grid,
            f_values,
            ci_half_widths: ci,
            reliable,
            n_samples: samples.len(),
            exact: false,
        })
    }

    /// The Gaussian closed form tabulated on a grid.
    pub fn exact(model: &FieldModel, b: &AxisBox, grid: &[f64]) -> Result<Self> {
        let grid = sorted_grid(grid)?;
        let var = model.exact_box_variance(b)?;
        let f_values = grid.iter().map(|l| 0.5 * l * l * var / b.vol()).collect();
        Ok(Self {
            domain: b.clone(),
            ci_half_widths: vec![0.0; grid.len()],
            reliable: vec![true; grid.len()],
            lambda_grid: grid,
            f_values,
            n_samples: 0,
            exact: true,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["lambda", "f", "ci", "reliable"])?;
        for i in 0..self.lambda_grid.len() {
            wr.write_record([
                self.lambda_grid[i].to_string(),
                self.f_values[i].to_string(),
                self.ci_half_widths[i].to_string(),
                self.reliable[i].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    fn point(&self, i: usize) -> CgfPoint {
        CgfPoint {
            value: self.f_values[i],
            ci: self.ci_half_widths[i],
            reliable: self.reliable[i],
            interpolated: false,
        }
    }
}

impl CgfSource for CgfEstimate {
    fn domain(&self) -> &AxisBox {
        &self.domain
    }

    /// Grid value, or the chord between neighbouring grid points. For a convex
    /// function the chord lies above the graph.
    fn at(&self, lambda: f64) -> Option<CgfPoint> {
        let g = &self.lambda_grid;
        let idx = g.partition_point(|&x| x < lambda);
        if idx < g.len() && (g[idx] - lambda).abs() <= 1e-12 * lambda.abs().max(1e-300) {
            return Some(self.point(idx));
        }
        if idx > 0 && idx < g.len() && (g[idx - 1] - lambda).abs() <= 1e-12 * lambda.abs() {
            return Some(self.point(idx - 1));
        }
        if idx == 0 || idx == g.len() {
            return None;
        }
        let (a, b) = (self.point(idx - 1), self.point(idx));
        let w = (lambda - g[idx - 1]) / (g[idx] - g[idx - 1]);
        Some(CgfPoint {
            value: (1.0 - w) * a.value + w * b.value,
            ci: a.ci.max(b.ci),
            reliable: a.reliable && b.reliable,
            interpolated: true,
        })
    }

    fn is_exact(&self) -> bool {
        self.exact
    }
}

/// Exact Gaussian CGF `lambda^2 Var / (2 vol)`, evaluable anywhere.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianCgf {
    pub domain: AxisBox,
    pub variance: f64,
}

impl GaussianCgf {
    pub fn new(model: &FieldModel, b: &AxisBox) -> Result<Self> {
        Ok(Self { domain: b.clone(), variance: model.exact_box_variance(b)? })
    }

    pub fn coefficient(&self) -> f64 {
        0.5 * self.variance / self.domain.vol()
    }
}

impl CgfSource for GaussianCgf {
    fn domain(&self) -> &AxisBox {
        &self.domain
    }

    fn at(&self, lambda: f64) -> Option<CgfPoint> {
        Some(CgfPoint { value: self.coefficient() * lambda * lambda, ci: 0.0, reliable: true, interpolated: false })
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// `per_decade` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && per_decade > 0);
    let steps = ((hi / lo).log10() * per_decade as f64).round().max(1.0) as usize;
    let ratio = (hi / lo).powf(1.0 / steps as f64);
    let mut out: Vec<f64> = (0..steps).map(|i| lo * ratio.powi(i as i32)).collect();
    out.push(hi);
    out
}

/// Log-spaced grid mirrored to negative tilts, with 0 included.
pub fn symmetric_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let pos = log_grid(lo, hi, per_decade);
    let mut out: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    out.push(0.0);
    out.extend(pos);
    out
}

/// Admissible tilt radius `(1/C) sqrt(S(v)) log^-(d-1) S(v)`.
pub fn delta_cap(v: f64, c: f64, d: usize) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("C must be positive, got {c}")));
    }
    if !(v > 0.0) {
        return Err(Error::InvalidParameter(format!("volume must be positive, got {v}")));
    }
    if d == 1 {
        return Ok(1.0 / c);
    }
    let sf = ScaleFunctions::new(d);
    let s = sf.s(v);
    if v <= 1.0 || s.ln() <= 0.0 {
        return Err(Error::InvalidParameter(format!("log S(v) <= 0 at v = {v}")));
    }
    Ok(s.sqrt() / (c * log_pow(s, d as i32 - 1)))
}

/// `L lambda^2 <= f_B(lambda) <= U lambda^2` for `|lambda| <= radius`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadEnvelope {
    #[serde(rename = "box")]
    pub domain: AxisBox,
    pub lower: f64,
    pub upper: f64,
    pub radius: f64,
    /// Largest `ci / lambda^2` among the points used.
    pub slack: f64,
    pub points: usize,
}

/// Min and max of `f / lambda^2` over reliable grid points with `0 < |lambda| <= radius`.
pub fn quad_envelope(est: &CgfEstimate, radius: f64) -> Result<QuadEnvelope> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    let mut slack: f64 = 0.0;
    let mut points = 0;
    for i in 0..est.lambda_grid.len() {
        let l = est.lambda_grid[i];
        if l == 0.0 || l.abs() > radius * (1.0 + 1e-12) || !est.reliable[i] {
            continue;
        }
        let q = est.f_values[i] / (l * l);
        lower = lower.min(q);
        upper = upper.max(q);
        slack = slack.max(est.ci_half_widths[i] / (l * l));
        points += 1;
    }
    if points == 0 {
        return Err(Error::EmptyGrid(format!("no reliable grid point in 0 < |lambda| <= {radius}")));
    }
    if points < MIN_ENVELOPE_POINTS {
        return Err(Error::EmptyGrid(format!(
            "only {points} grid points in 0 < |lambda| <= {radius}, need {MIN_ENVELOPE_POINTS}"
        )));
    }
    Ok(QuadEnvelope { domain: est.domain.clone(), lower: lower.max(0.0), upper, radius, slack, points })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Oscillation {
    pub osc: f64,
    pub bound: f64,
    pub slack: f64,
    /// Whether `f(+-1/C2) <= 1`; `None` if the grid does not reach `1/C2`.
    pub c2_gate: Option<bool>,
    pub pass: bool,
}

/// `U - L` on `(0, delta]` against `(82 / (3 e^2)) (2 C2)^3 delta`.
pub fn oscillation_check(est: &CgfEstimate, delta: f64, c2: f64) -> Result<Oscillation> {
    if !(c2 > 0.0 && delta > 0.0) {
        return Err(Error::InvalidParameter("C2 and delta must be positive".into()));
    }
    if 2.0 * c2 * delta > 1.0 {
        return Err(Error::InvalidParameter(format!("C2 hypothesis violated: 2 C2 delta = {} > 1", 2.0 * c2 * delta)));
    }
    let gate = |l: f64| est.at(l).map(|p| p.value - p.ci <= 1.0);
    let c2_gate = match (gate(1.0 / c2), gate(-1.0 / c2)) {
        (Some(a), Some(b)) => Some(a && b),
        _ => None,
    };
    let env = quad_envelope(est, delta)?;
    let osc = env.upper - env.lower;
    let bound = oscillation_bound(delta, c2);
    let slack = 2.0 * env.slack;
    Ok(Oscillation { osc, bound, slack, c2_gate, pass: osc <= bound + slack })
}

pub fn oscillation_bound(delta: f64, c2: f64) -> f64 {
    let e2 = std::f64::consts::E.powi(2);
    82.0 / (3.0 * e2) * (2.0 * c2).powi(3) * delta
}
