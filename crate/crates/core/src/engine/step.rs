use serde::Serialize;

use super::{Direction, EngineParams};
use crate::cgf::CgfSource;
use crate::error::{Error, Result};
use crate::geometry::AxisBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepResult {
    pub u_out: f64,
    pub delta_out: f64,
    pub p: f64,
    pub x: f64,
}

fn require_width(b: &AxisBox, params: &EngineParams) -> Result<()> {
    if b.width() < params.c1 {
        return Err(Error::WidthBelowC1 { width: b.width(), c1: params.c1 });
    }
    Ok(())
}

fn check_dim(b: &AxisBox, params: &EngineParams) -> Result<()> {
    if b.dim() != params.d {
        return Err(Error::DimensionMismatch { expected: params.d, got: b.dim() });
    }
    Ok(())
}

/// `sqrt(C1 / R(vol))`.
pub(crate) fn step_x(b: &AxisBox, params: &EngineParams) -> f64 {
    (params.c1 / params.scale().r(b.vol())).sqrt()
}

/// From `f_{B/2} <= u^2 mu^2` on `[-delta, delta]` to `f_B <= (u+x)^2 lambda^2`.
pub fn step_up(u: f64, delta: f64, b: &AxisBox, params: &EngineParams) -> Result<StepResult> {
    check_dim(b, params)?;
    require_width(b, params)?;
    if !(u > 0.0 && delta > 0.0) {
        return Err(Error::InvalidParameter(format!("need u, delta > 0, got {u}, {delta}")));
    }
    let v = b.vol();
    let x = step_x(b, params);
    let p = (u + x) / u;
    let cap = (p - 1.0) / p * v.sqrt() / (params.c1 * params.log_s(v)?);
    let delta_out = (std::f64::consts::SQRT_2 * delta / p).min(cap);
    Ok(StepResult { u_out: u + x, delta_out, p, x })
}

/// From `f_{B/2} >= u^2 mu^2` on `[-delta, delta]` to `f_B >= (u-x)^2 lambda^2`.
pub fn step_down(u: f64, delta: f64, b: &AxisBox, params: &EngineParams) -> Result<StepResult> {
    step_down_at(u, delta, b, params, 0)
}

pub(crate) fn step_down_at(u: f64, delta: f64, b: &AxisBox, params: &EngineParams, level: usize) -> Result<StepResult> {
    check_dim(b, params)?;
    require_width(b, params)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("need delta > 0, got {delta}")));
    }
    let v = b.vol();
    let x = step_x(b, params);
    if u <= x {
        return Err(Error::Annihilated { level, u, x });
    }
    let p = u / (u - x);
    let cap = (p - 1.0) * v.sqrt() / (params.c1 * params.log_s(v)?);
    let delta_out = (p * delta * std::f64::consts::SQRT_2).min(cap);
    Ok(StepResult { u_out: u - x, delta_out, p, x })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleStep {
    pub direction: Direction,
    pub p: f64,
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Confidence half-widths added on the favorable side.
    pub slack: f64,
    /// `rhs + slack - lhs` for the upper inequality, `lhs - rhs + slack` for the lower.
    pub margin: f64,
    pub holds: bool,
    pub admissible: bool,
    pub interpolated: bool,
    pub reliable: bool,
}

/// Evaluates one halving inequality between `f_B` and `f_{B/2}`.
pub fn single_step_check(
    f_b: &dyn CgfSource,
    f_half: &dyn CgfSource,
    params: &EngineParams,
    p: f64,
    lambda: f64,
    direction: Direction,
) -> Result<SingleStep> {
    let b = f_b.domain();
    check_dim(b, params)?;
    if f_half.domain() != &b.halve() {
        return Err(Error::InvalidParameter(format!("box mismatch: {} is not the half of {}", f_half.domain(), b)));
    }
    require_width(b, params)?;
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("need p > 1, got {p}")));
    }
    let v = b.vol();
    let cap = v.sqrt() / params.log_s(v)?;
    let quad = params.c1 * lambda * lambda / params.scale().r(v);
    let sqrt2 = std::f64::consts::SQRT_2;
    let (half_arg, admissible) = match direction {
        Direction::Up => (p * lambda / sqrt2, params.c1 * lambda.abs() <= (p - 1.0) / p * cap),
        Direction::Down => (lambda / (p * sqrt2), params.c1 * lambda.abs() <= (p - 1.0) * cap),
    };
    let missing = |l: f64| Error::EmptyGrid(format!("no CGF value available at lambda = {l}"));
    let fb = f_b.at(lambda).ok_or_else(|| missing(lambda))?;
    let fh = f_half.at(half_arg).ok_or_else(|| missing(half_arg))?;
    let (rhs, slack, margin) = match direction {
        Direction::Up => {
            let rhs = 2.0 / p * fh.value + p / (p - 1.0) * quad;
            let slack = fb.ci + 2.0 / p * fh.ci;
            (rhs, slack, rhs + slack - fb.value)
        }
        Direction::Down => {
            let rhs = 2.0 * p * fh.value - quad / (p - 1.0);
            let slack = fb.ci + 2.0 * p * fh.ci;
            (rhs, slack, fb.value - rhs + slack)
        }
    };
    Ok(SingleStep {
        direction,
        p,
        lambda,
        lhs: fb.value,
        rhs,
        slack,
        margin,
        holds: margin >= 0.0,
        admissible,
        interpolated: fb.interpolated || fh.interpolated,
        reliable: fb.reliable && fh.reliable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeStep {
    pub alpha: f64,
    pub beta: f64,
    pub x: f64,
    pub y: f64,
    pub beta_ci: f64,
    pub case_a_fires: bool,
    pub case_a_holds: bool,
    pub case_b_fires: bool,
    pub case_b_holds: bool,
}

/// Slope comparison between `f_B` at `lambda` and `f_{B/2}` at `mu`.
pub fn slope_step(
    lambda: f64,
    mu: f64,
    b: &AxisBox,
    params: &EngineParams,
    f_b: &dyn CgfSource,
    f_half: &dyn CgfSource,
) -> Result<SlopeStep> {
    check_dim(b, params)?;
    if !(lambda * mu > 0.0) {
        return Err(Error::InvalidParameter(format!("need lambda mu > 0, got {lambda}, {mu}")));
    }
    require_width(b, params)?;
    if f_b.domain() != b || f_half.domain() != &b.halve() {
        return Err(Error::InvalidParameter("box mismatch".into()));
    }
    let v = b.vol();
    let l = params.log_s(v)?;
    let x = 1.0 / (params.scale().r(v) * l);
    let y = params.c1 / (0.5 * v).sqrt() * l;
    let alpha = std::f64::consts::SQRT_2 / lambda.abs() - 1.0 / mu.abs();
    let missing = |t: f64| Error::EmptyGrid(format!("no CGF value available at lambda = {t}"));
    let fb = f_b.at(lambda).ok_or_else(|| missing(lambda))?;
    let fh = f_half.at(mu).ok_or_else(|| missing(mu))?;
    let sa = lambda.abs() * v.sqrt();
    let sb = mu.abs() * (0.5 * v).sqrt();
    let beta = fb.value / sa - fh.value / sb;
    let beta_ci = fb.ci / sa + fh.ci / sb;
    let case_a_fires = alpha >= y;
    let case_b_fires = alpha <= -y;
    Ok(SlopeStep {
        alpha,
        beta,
        x,
        y,
        beta_ci,
        case_a_fires,
        case_a_holds: !case_a_fires || beta <= x + beta_ci,
        case_b_fires,
        case_b_holds: !case_b_fires || beta >= -x - beta_ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgf::GaussianCgf;
    use crate::field::FieldModel;

    fn bx(s: &[f64]) -> AxisBox {
        AxisBox::new(s.to_vec()).unwrap()
    }

    #[test]
    fn step_values_by_hand() {
        let params = EngineParams::new(4.0, 1);
        let b = bx(&[16.0]);
        let up = step_up(1.0, 0.1, &b, &params).unwrap();
        assert!((up.x - 0.5).abs() < 1e-15);
        assert!((up.p - 1.5).abs() < 1e-15);
        assert!((up.u_out - 1.5).abs() < 1e-15);
        assert!((up.delta_out - 0.094_280_904_158_206_34).abs() < 1e-9);
        let down = step_down(1.0, 0.1, &b, &params).unwrap();
        assert!((down.p - 2.0).abs() < 1e-15);
        assert!((down.u_out - 0.5).abs() < 1e-15);
        // min(p delta sqrt2, (p-1) sqrt(16) / 4) = min(0.28284, 1)
        assert!((down.delta_out - 0.282_842_712_474_619).abs() < 1e-9);
        assert!(matches!(step_down(0.5, 0.1, &b, &params), Err(Error::Annihilated { .. })));
        assert!(matches!(step_up(1.0, 0.1, &bx(&[3.5]), &params), Err(Error::WidthBelowC1 { .. })));
    }

    #[test]
    fn large_volume_limit() {
        let params = EngineParams::new(4.0, 1);
        let up = step_up(1.0, 0.1, &bx(&[1e12]), &params).unwrap();
        assert!(up.x < 1e-5 && (up.u_out - 1.0).abs() < 1e-5);
    }

    #[test]
    fn slope_constants() {
        let params = EngineParams::new(4.0, 1);
        let g = FieldModel::gaussian(1, 1.0);
        let b = bx(&[16.0]);
        let fb = GaussianCgf::new(&g, &b).unwrap();
        let fh = GaussianCgf::new(&g, &b.halve()).unwrap();
        let s = slope_step(0.3, 0.3 / std::f64::consts::SQRT_2, &b, &params, &fb, &fh).unwrap();
        assert!((s.x - 0.0625).abs() < 1e-15);
        assert!((s.y - 4.0 / 8f64.sqrt()).abs() < 1e-12);
        assert!(s.alpha.abs() < 1e-12 && !s.case_a_fires && !s.case_b_fires);
        assert!(s.case_a_holds && s.case_b_holds);
        assert!(slope_step(0.3, -0.3, &b, &params, &fb, &fh).is_err());
    }

    #[test]
    fn single_step_on_gaussian_oracle() {
        let params = EngineParams::new(3.0, 1);
        let g = FieldModel::gaussian(1, 1.0);
        let b = bx(&[64.0]);
        let fb = GaussianCgf::new(&g, &b).unwrap();
        let fh = GaussianCgf::new(&g, &b.halve()).unwrap();
        for dir in [Direction::Up, Direction::Down] {
            let zero = single_step_check(&fb, &fh, &params, 2.0, 0.0, dir).unwrap();
            assert_eq!((zero.lhs, zero.rhs), (0.0, 0.0));
            assert!(zero.holds);
            for p in [1.01, 1.5, 3.0] {
                for lambda in [-1.0, -0.1, 0.05, 0.3, 0.9] {
                    let r = single_step_check(&fb, &fh, &params, p, lambda, dir).unwrap();
                    assert!(r.holds, "{dir:?} p={p} lambda={lambda}: {r:?}");
                }
            }
        }
        let far = single_step_check(&fb, &fh, &params, 1.01, 50.0, Direction::Up).unwrap();
        assert!(!far.admissible);
        assert!(single_step_check(&fb, &fb, &params, 2.0, 0.1, Direction::Up).is_err());
    }
}
