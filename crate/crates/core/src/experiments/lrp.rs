use serde::Serialize;

use super::{derive_seed, join_flags, reference_sigma2, sample_box, ExperimentConfig, ReportRow};
use crate::cgf::{CgfEstimate, CgfSource};
use crate::error::Result;
use crate::field::{BoxSampler, FieldKind};
use crate::scale::log_pow;

const TAG: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrpRow {
    pub d: usize,
    pub sides: String,
    pub vol: f64,
    pub lambda: f64,
    /// `f_B(mu) / mu^2` at `mu = lambda sqrt(vol)`.
    pub value: f64,
    pub ci: f64,
    /// `sigma^2 / 2`.
    pub reference: f64,
    pub pass: bool,
    pub source: &'static str,
    pub mu: f64,
    pub reference_ci: f64,
    pub tolerance: f64,
    pub flag: String,
}

impl ReportRow for LrpRow {
    fn pass(&self) -> bool {
        self.pass
    }
    fn flag(&self) -> &str {
        &self.flag
    }
}

/// `|value - reference| <= max(tol * reference, 3 (ci + reference_ci))`.
pub fn lrp_pass(value: f64, ci: f64, reference: f64, reference_ci: f64, tol: f64) -> bool {
    (value - reference).abs() <= (tol * reference).max(3.0 * (ci + reference_ci))
}

pub fn run_lrp(cfg: &ExperimentConfig) -> Result<Vec<LrpRow>> {
    let model = &cfg.model;
    let gaussian = model.kind == FieldKind::GaussianMa;
    let tol = cfg.lrp.tolerance_rel;
    let mut rows = Vec::new();
    for (i, b) in cfg.boxes.iter().enumerate() {
        let vol = b.vol();
        let root = vol.sqrt();
        let (reference, reference_ci) = if gaussian {
            (0.5 * model.exact_sigma2()?, 0.0)
        } else {
            let (s2, se) =
                reference_sigma2(model, b, cfg.reference_samples(), derive_seed(cfg.seed, TAG, 2 * i as u64 + 1))?;
            (0.5 * s2, 0.5 * crate::cgf::Z95 * se)
        };
        let sampler = BoxSampler::new(model, b)?;
        let samples = sample_box(&sampler, cfg.n_samples, derive_seed(cfg.seed, TAG, 2 * i as u64));
        let est = CgfEstimate::from_samples(b, &cfg.lrp.scaled_lambdas, &samples)?;
        for &mu in &cfg.lrp.scaled_lambdas {
            let lambda = mu / root;
            let outside = lambda.abs() * log_pow(vol.ln(), model.d as i32) > cfg.lrp.lambda_log_bound;
            let zero = mu == 0.0;
            let base_flags = [if zero { "lambda_zero" } else { "" }, if outside { "outside_constraint" } else { "" }];
            let row = |value: f64, ci: f64, source: &'static str, extra: &str| {
                let pass = !zero && lrp_pass(value, ci, reference, reference_ci, tol);
                LrpRow {
                    d: model.d,
                    sides: b.to_string(),
                    vol,
                    lambda,
                    value,
                    ci,
                    reference,
                    pass,
                    source,
                    mu,
                    reference_ci,
                    tolerance: tol,
                    flag: join_flags(&[base_flags[0], base_flags[1], extra]),
                }
            };
            if zero {
                rows.push(row(f64::NAN, f64::NAN, "mc", ""));
                continue;
            }
            let p = est.at(mu).expect("grid point present");
            let unreliable = if p.reliable { "" } else { "unreliable" };
            rows.push(row(p.value / (mu * mu), p.ci / (mu * mu), "mc", unreliable));
            if gaussian {
                let exact = model.exact_gaussian_cgf(b, mu)? / (mu * mu);
                rows.push(LrpRow { reference_ci: 0.0, ..row(exact, 0.0, "exact", "") });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldModel;
    use crate::geometry::AxisBox;

    #[test]
    fn exact_rows_follow_closed_form() {
        let cfg = ExperimentConfig {
            boxes: vec![AxisBox::new(vec![10_000.0]).unwrap()],
            n_samples: 20_000,
            ..Default::default()
        };
        let rows = run_lrp(&cfg).unwrap();
        let exact: Vec<&LrpRow> = rows.iter().filter(|r| r.source == "exact").collect();
        assert_eq!(exact.len(), 6);
        for r in exact {
            assert!((r.value - 0.5 * (1.0 - 1.0 / 30_000.0)).abs() < 1e-12);
            assert!(r.pass);
        }
        let zero = rows.iter().find(|r| r.mu == 0.0).unwrap();
        assert_eq!(zero.flag, "lambda_zero");
        assert!(rows.iter().filter(|r| r.flag.is_empty()).all(|r| r.pass), "{rows:#?}");
    }

    #[test]
    fn zero_field_rows_are_zero() {
        let cfg = ExperimentConfig {
            model: FieldModel::gaussian(1, 1.0).with_amplitude(0.0),
            boxes: vec![AxisBox::new(vec![100.0]).unwrap()],
            n_samples: 1000,
            ..Default::default()
        };
        for r in run_lrp(&cfg).unwrap().iter().filter(|r| r.mu != 0.0) {
            assert_eq!((r.value, r.reference), (0.0, 0.0));
            assert!(r.pass);
        }
    }
}
