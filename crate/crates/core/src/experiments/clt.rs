use serde::Serialize;

use super::{derive_seed, join_flags, reference_sigma2, sample_box, ExperimentConfig, ReportRow};
use crate::cgf::Z95;
use crate::error::Result;
use crate::field::{BoxSampler, FieldKind};
use crate::ks::{ks_pvalue, ks_statistic};
use crate::normal;
use crate::stats::moments;

const TAG: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltRow {
    pub d: usize,
    pub sides: String,
    pub vol: f64,
    pub replicas: usize,
    pub mean: f64,
    /// Sample variance of `vol^(-1/2) int_B X`.
    pub sigma2_hat: f64,
    pub sigma2_ci: f64,
    /// Variance of the normal law tested against.
    pub reference_sigma2: f64,
    pub ks_stat: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub pass: bool,
    pub flag: String,
}

impl ReportRow for CltRow {
    fn pass(&self) -> bool {
        self.pass
    }
    fn flag(&self) -> &str {
        &self.flag
    }
}

pub fn run_clt(cfg: &ExperimentConfig) -> Result<Vec<CltRow>> {
    let model = &cfg.model;
    let n = cfg.clt.replicas.unwrap_or(cfg.n_samples);
    let mut rows = Vec::new();
    for (i, b) in cfg.boxes.iter().enumerate() {
        let vol = b.vol();
        let sampler = BoxSampler::new(model, b)?;
        let reference = match sampler.gaussian_variance() {
            Some(v) => v / vol,
            None if model.kind == FieldKind::GaussianMa => {
                unreachable!("gaussian models use the exact plan")
            }
            None => {
                reference_sigma2(model, b, cfg.reference_samples(), derive_seed(cfg.seed, TAG, 2 * i as u64 + 1))?.0
            }
        };
        let root = vol.sqrt();
        let zs: Vec<f64> =
            sample_box(&sampler, n, derive_seed(cfg.seed, TAG, 2 * i as u64)).into_iter().map(|y| y / root).collect();
        let m = moments(&zs);
        let degenerate = !(reference > 0.0);
        let (ks_stat, p_value) = if degenerate {
            (f64::NAN, f64::NAN)
        } else {
            let s = reference.sqrt();
            let d = ks_statistic(&zs, |z| normal::cdf(z / s));
            (d, ks_pvalue(n, d))
        };
        rows.push(CltRow {
            d: model.d,
            sides: b.to_string(),
            vol,
            replicas: n,
            mean: m.mean,
            sigma2_hat: m.var,
            sigma2_ci: Z95 * m.var_se,
            reference_sigma2: reference,
            ks_stat,
            p_value,
            alpha: cfg.clt.alpha,
            pass: p_value > cfg.clt.alpha,
            flag: join_flags(&[if degenerate { "degenerate" } else { "" }]),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldModel;
    use crate::geometry::AxisBox;

    #[test]
    fn gaussian_passes_and_zero_field_is_flagged() {
        let cfg =
            ExperimentConfig { boxes: vec![AxisBox::new(vec![50.0]).unwrap()], n_samples: 5000, ..Default::default() };
        let row = &run_clt(&cfg).unwrap()[0];
        assert!(row.pass && row.flag.is_empty(), "{row:?}");
        assert!((row.sigma2_hat - row.reference_sigma2).abs() < 3.0 * row.sigma2_ci);
        let zero = ExperimentConfig { model: FieldModel::gaussian(1, 1.0).with_amplitude(0.0), ..cfg };
        let row = &run_clt(&zero).unwrap()[0];
        assert_eq!(row.flag, "degenerate");
        assert_eq!(row.sigma2_hat, 0.0);
    }
}
