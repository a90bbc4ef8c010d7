use rayon::prelude::*;
use serde::Serialize;

use super::{derive_seed, join_flags, ExperimentConfig, ReportRow};
use crate::cgf::Z95;
use crate::error::Result;
use crate::field::{BoxSampler, FieldKind, FieldModel, Kernel};
use crate::geometry::AxisBox;
use crate::stats::pairwise_sum;

const TAG: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdditivityRow {
    pub d: usize,
    pub r: f64,
    pub s: f64,
    pub other_sides: String,
    pub source: &'static str,
    /// `Var(r+s) - Var(r) - Var(s)` of the box integrals.
    pub defect: f64,
    /// `defect / Var(r+s)`.
    pub value: f64,
    pub reference: f64,
    pub ci: f64,
    pub tolerance: f64,
    /// `|value - reference| <= 3 ci + tolerance`.
    pub pass: bool,
    pub flag: String,
}

impl ReportRow for AdditivityRow {
    fn pass(&self) -> bool {
        self.pass
    }
    fn flag(&self) -> &str {
        &self.flag
    }
}

fn simpson<F: Fn(f64) -> f64>(a: f64, b: f64, n: usize, f: F) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `2 int_0^m u c(u) du`, the one-axis defect once both sides reach `m`.
pub fn boundary_defect(kernel: &Kernel) -> f64 {
    let m = kernel.radius;
    let f = |u: f64| u * kernel.autocov1(u);
    2.0 * (simpson(0.0, 0.5 * m, 4096, f) + simpson(0.5 * m, m, 4096, f))
}

fn with_first(first: f64, others: &[f64]) -> Result<AxisBox> {
    let mut sides = vec![first];
    sides.extend_from_slice(others);
    AxisBox::new(sides)
}

fn exact_row(model: &FieldModel, r: f64, s: f64, others: &[f64], tol: f64) -> Result<AdditivityRow> {
    let v = |x: f64| -> Result<f64> { model.exact_box_variance(&with_first(x, others)?) };
    let total = v(r + s)?;
    let defect = total - v(r)? - v(s)?;
    let a2 = model.kernel.amplitude.powi(2);
    let across: f64 = others.iter().map(|&o| model.kernel.axis_variance(o)).product();
    let reference_defect = a2 * across * boundary_defect(&model.kernel);
    let short = r.min(s) < model.kernel.radius;
    let degenerate = !(total > 0.0);
    let (value, reference) = (defect / total, reference_defect / total);
    Ok(AdditivityRow {
        d: model.d,
        r,
        s,
        other_sides: fmt_sides(others),
        source: "exact",
        defect,
        value,
        reference,
        ci: 0.0,
        tolerance: tol,
        pass: (value - reference).abs() <= tol,
        flag: join_flags(&[if short { "short_side" } else { "" }, if degenerate { "degenerate" } else { "" }]),
    })
}

fn fmt_sides(others: &[f64]) -> String {
    others.iter().map(|o| o.to_string()).collect::<Vec<_>>().join("x")
}

/// Splits one simulated `[0, r+s]` box at `r` and estimates `2 Cov(I_r, I_s)`.
fn mc_row(cfg: &ExperimentConfig, r: f64, s: f64, others: &[f64], seed: u64) -> Result<AdditivityRow> {
    let model = &cfg.model;
    let whole = with_first(r + s, others)?;
    let sampler = BoxSampler::per_cell(model, &whole)?;
    let probe = sampler.field(seed, 0).expect("per-cell plan");
    let counts = probe.counts().to_vec();
    let h0 = probe.steps()[0];
    let k = (r / h0).round() as usize;
    let aligned = (k as f64 * h0 - r).abs() <= 1e-9 * r && k > 0 && k < counts[0];
    let k = k.clamp(1, counts[0] - 1);
    let zeros = vec![0usize; counts.len()];
    let mut left_len = counts.clone();
    left_len[0] = k;
    let mut right_off = zeros.clone();
    right_off[0] = k;
    let mut right_len = counts.clone();
    right_len[0] = counts[0] - k;
    let n = cfg.n_samples;
    let pairs: Vec<(f64, f64)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let g = sampler.field(seed, i).expect("per-cell plan");
            (g.window_integral(&zeros, &left_len), g.window_integral(&right_off, &right_len))
        })
        .collect();
    let nf = n as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (mx, my) = (pairwise_sum(&xs) / nf, pairwise_sum(&ys) / nf);
    let prods: Vec<f64> = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).collect();
    let cov = pairwise_sum(&prods) / (nf - 1.0);
    let prod_var = pairwise_sum(&prods.iter().map(|p| (p - cov).powi(2)).collect::<Vec<_>>()) / (nf - 1.0);
    let sums: Vec<f64> = pairs.iter().map(|(x, y)| (x + y - mx - my).powi(2)).collect();
    let total = pairwise_sum(&sums) / (nf - 1.0);
    let defect = 2.0 * cov;
    let degenerate = !(total > 0.0);
    let gaussian = model.kind == FieldKind::GaussianMa;
    let (reference, tolerance, lattice_ok) = if gaussian {
        // lattice-exact variances of the simulated quantity
        let var = |x: f64| -> Result<(f64, f64)> {
            let s = BoxSampler::new(model, &with_first(x, others)?)?;
            let step = s.box_().sides()[0] / (s.box_().sides()[0] / model.grid_h).ceil();
            Ok((s.gaussian_variance().expect("gaussian plan"), step))
        };
        let (vt, ht) = var(r + s)?;
        let (vr, hr) = var(r)?;
        let (vs, hs) = var(s)?;
        let same = (ht - hr).abs() <= 1e-12 * ht && (ht - hs).abs() <= 1e-12 * ht;
        ((vt - vr - vs) / vt, 0.0, same)
    } else {
        (0.0, model.kernel.radius / (r + s), true)
    };
    let value = defect / total;
    let ci = Z95 * 2.0 * (prod_var / nf).sqrt() / total;
    Ok(AdditivityRow {
        d: model.d,
        r,
        s,
        other_sides: fmt_sides(others),
        source: "mc",
        defect,
        value,
        reference,
        ci,
        tolerance,
        pass: (value - reference).abs() <= 3.0 * ci + tolerance,
        flag: join_flags(&[
            if aligned && lattice_ok { "" } else { "misaligned" },
            if degenerate { "degenerate" } else { "" },
        ]),
    })
}

pub fn run_additivity(cfg: &ExperimentConfig) -> Result<Vec<AdditivityRow>> {
    let model = &cfg.model;
    let others = cfg.additivity.other_sides.clone().unwrap_or_else(|| vec![4.0 * model.kernel.radius; model.d - 1]);
    if others.len() + 1 != model.d {
        return Err(crate::Error::Config(format!("other_sides must have {} entries", model.d - 1)));
    }
    let mut rows = Vec::new();
    for (i, &[r, s]) in cfg.additivity.pairs.iter().enumerate() {
        rows.push(mc_row(cfg, r, s, &others, derive_seed(cfg.seed, TAG, i as u64))?);
        if model.kind == FieldKind::GaussianMa {
            rows.push(exact_row(model, r, s, &others, cfg.additivity.exact_tolerance)?);
        }
    }
    Ok(rows)
}
