use rayon::prelude::*;
use serde::Serialize;

use super::step::single_step_check;
use super::{Direction, EngineParams};
use crate::cgf::{estimate_cgf, symmetric_grid, CgfEstimate, CgfSource, GaussianCgf, POINTS_PER_DECADE};
use crate::error::{Error, Result};
use crate::field::{FieldKind, FieldModel};
use crate::geometry::AxisBox;

/// Candidate values `3 * 1.5^k`.
pub const CANDIDATES: usize = 16;

/// Fractions of the admissible tilt radius probed for each `(box, p)`.
const LAMBDA_FRACTIONS: [f64; 4] = [0.125, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateReport {
    pub c1: f64,
    /// Number of reliable inequality evaluations.
    pub evaluated: usize,
    pub violations: usize,
    /// Smallest margin seen; negative when some inequality failed.
    pub worst_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub c1: f64,
    pub candidates: Vec<CandidateReport>,
}

pub fn candidate_grid() -> Vec<f64> {
    (0..CANDIDATES).map(|k| 3.0 * 1.5f64.powi(k as i32)).collect()
}

fn evaluate(c1: f64, d: usize, pairs: &[(&dyn CgfSource, &dyn CgfSource)], p_grid: &[f64]) -> CandidateReport {
    let params = EngineParams::new(c1, d);
    let mut evaluated = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for (fb, fh) in pairs {
        let b = fb.domain();
        if b.width() < c1 {
            continue;
        }
        let Ok(l) = params.log_s(b.vol()) else {
            continue;
        };
        for &p in p_grid {
            for direction in [Direction::Up, Direction::Down] {
                let gain = match direction {
                    Direction::Up => (p - 1.0) / p,
                    Direction::Down => p - 1.0,
                };
                let cap = gain * b.vol().sqrt() / (l * c1);
                for frac in LAMBDA_FRACTIONS {
                    for lambda in [frac * cap, -frac * cap] {
                        let Ok(r) = single_step_check(*fb, *fh, &params, p, lambda, direction) else {
                            continue;
                        };
                        if !r.reliable {
                            continue;
                        }
                        evaluated += 1;
                        worst = worst.min(r.margin);
                        if !r.holds {
                            violations += 1;
                        }
                    }
                }
            }
        }
    }
    CandidateReport { c1, evaluated, violations, worst_margin: worst, pass: evaluated > 0 && violations == 0 }
}

/// Evaluates every candidate on the given pairs.
pub fn candidate_reports_from_sources(
    pairs: &[(&dyn CgfSource, &dyn CgfSource)],
    p_grid: &[f64],
) -> Result<Vec<CandidateReport>> {
    let Some((first, _)) = pairs.first() else {
        return Err(Error::InvalidParameter("no box pairs to calibrate on".into()));
    };
    if p_grid.is_empty() || p_grid.iter().any(|&p| !(p > 1.0)) {
        return Err(Error::InvalidParameter("p grid must be non-empty with p > 1".into()));
    }
    let d = first.domain().dim();
    Ok(candidate_grid().into_par_iter().map(|c1| evaluate(c1, d, pairs, p_grid)).collect())
}

fn select(candidates: Vec<CandidateReport>) -> Result<Calibration> {
    match candidates.iter().find(|c| c.pass) {
        Some(best) => Ok(Calibration { c1: best.c1, candidates }),
        None => {
            let worst =
                candidates.iter().filter(|c| c.evaluated > 0).min_by(|a, b| a.worst_margin.total_cmp(&b.worst_margin));
            let (c1, w) = worst.map_or((f64::NAN, f64::NAN), |c| (c.c1, c.worst_margin));
            Err(Error::Calibration { c1, worst_violation: w })
        }
    }
}

/// Smallest candidate for which every reliable halving inequality holds on the given pairs.
pub fn calibrate_c1_from_sources(pairs: &[(&dyn CgfSource, &dyn CgfSource)], p_grid: &[f64]) -> Result<Calibration> {
    select(candidate_reports_from_sources(pairs, p_grid)?)
}

/// Evaluates every candidate, on exact CGFs for Gaussian models and on Monte Carlo estimates otherwise.
pub fn candidate_reports(
    model: &FieldModel,
    boxes: &[AxisBox],
    p_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<CandidateReport>> {
    model.validate()?;
    if boxes.is_empty() {
        return Err(Error::InvalidParameter("no boxes to calibrate on".into()));
    }
    if model.kind == FieldKind::GaussianMa {
        let sources: Vec<(GaussianCgf, GaussianCgf)> = boxes
            .iter()
            .map(|b| Ok((GaussianCgf::new(model, b)?, GaussianCgf::new(model, &b.halve())?)))
            .collect::<Result<_>>()?;
        let pairs: Vec<(&dyn CgfSource, &dyn CgfSource)> =
            sources.iter().map(|(a, b)| (a as &dyn CgfSource, b as &dyn CgfSource)).collect();
        return candidate_reports_from_sources(&pairs, p_grid);
    }
    let pmax = p_grid.iter().cloned().fold(1.0, f64::max);
    let mut sources: Vec<(CgfEstimate, CgfEstimate)> = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        let l = EngineParams::new(3.0, model.d).log_s(b.vol())?;
        let hi = (pmax - 1.0).max(1.0) * b.vol().sqrt() / (l * 3.0);
        let grid = symmetric_grid(hi * 1e-3, hi * pmax, POINTS_PER_DECADE);
        let s = seed.wrapping_add(2 * i as u64);
        let fb = estimate_cgf(model, b, &grid, n_samples, s)?;
        let fh = estimate_cgf(model, &b.halve(), &grid, n_samples, s + 1)?;
        sources.push((fb, fh));
    }
    let pairs: Vec<(&dyn CgfSource, &dyn CgfSource)> =
        sources.iter().map(|(a, b)| (a as &dyn CgfSource, b as &dyn CgfSource)).collect();
    candidate_reports_from_sources(&pairs, p_grid)
}

pub fn calibrate_c1(
    model: &FieldModel,
    boxes: &[AxisBox],
    p_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Calibration> {
    select(candidate_reports(model, boxes, p_grid, n_samples, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgf::CgfPoint;

    #[test]
    fn gaussian_calibrates() {
        let model = FieldModel::gaussian(1, 1.0);
        let boxes: Vec<AxisBox> = [8.0, 32.0, 128.0].iter().map(|&s| AxisBox::new(vec![s]).unwrap()).collect();
        let cal = calibrate_c1(&model, &boxes, &[1.1, 1.5, 2.0, 4.0], 1000, 1).unwrap();
        assert!(cal.c1.is_finite());
        assert_eq!(cal.c1, 3.0);
    }

    #[test]
    fn zero_field_gives_three() {
        let model = FieldModel::gaussian(2, 1.0).with_amplitude(0.0);
        let boxes = vec![AxisBox::cube(2, 16.0).unwrap()];
        let cal = calibrate_c1(&model, &boxes, &[1.5, 2.0], 1000, 1).unwrap();
        assert_eq!(cal.c1, 3.0);
    }

    struct Fixed {
        domain: AxisBox,
        coef: f64,
    }

    impl CgfSource for Fixed {
        fn domain(&self) -> &AxisBox {
            &self.domain
        }
        fn at(&self, lambda: f64) -> Option<CgfPoint> {
            Some(CgfPoint { value: self.coef * lambda * lambda, ci: 0.0, reliable: true, interpolated: false })
        }
        fn is_exact(&self) -> bool {
            false
        }
    }

    #[test]
    fn adversarial_pair_exhausts_grid() {
        let b = AxisBox::new(vec![1e5]).unwrap();
        let big = Fixed { domain: b.clone(), coef: 1e6 };
        let zero = Fixed { domain: b.halve(), coef: 0.0 };
        let err = calibrate_c1_from_sources(&[(&big, &zero)], &[1.5]).unwrap_err();
        assert!(matches!(err, Error::Calibration { worst_violation, .. } if worst_violation < 0.0), "{err}");
    }
}
