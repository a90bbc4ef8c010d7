use linresp::cgf::{CgfEstimate, CgfSource, GaussianCgf};
use linresp::field::BoxSampler;
use linresp::noise::NoiseStream;
use linresp::tail::{tail_sandwich, tilt_internals};
use linresp::{normal, AxisBox, FieldModel};
use proptest::prelude::*;

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
    cov / (va * vb).sqrt()
}

/// Window integrals over cells `[lo, lo + 4)` for each window start, across replicas.
fn windows(model: &FieldModel, starts: &[usize], replicas: u64) -> Vec<Vec<f64>> {
    let b = AxisBox::new(vec![6.0]).unwrap();
    let sampler = BoxSampler::per_cell(model, &b).unwrap();
    let mut out = vec![Vec::new(); starts.len()];
    for r in 0..replicas {
        let g = sampler.field(17, r).unwrap();
        assert_eq!(g.counts(), &[24]);
        for (w, &s) in out.iter_mut().zip(starts) {
            w.push(g.window_integral(&[s], &[4]));
        }
    }
    out
}

#[test]
fn windows_a_range_apart_are_uncorrelated() {
    for model in [FieldModel::gaussian(1, 1.0), FieldModel::clipped(1, 1.0, 1.0)] {
        let w = windows(&model, &[0, 4, 8], 4000);
        let near = corr(&w[0], &w[1]);
        let far = corr(&w[0], &w[2]);
        assert!(near > 0.15, "adjacent windows should correlate, got {near}");
        assert!(far.abs() < 0.07, "windows m apart correlate: {far}");
    }
}

#[test]
fn window_variance_is_shift_invariant() {
    let w = windows(&FieldModel::gaussian(1, 1.0), &[0, 10, 20], 4000);
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    };
    let base = var(&w[0]);
    for other in &w[1..] {
        let ratio = var(other) / base;
        assert!((0.88..1.12).contains(&ratio), "variance ratio {ratio}");
    }
}

#[test]
fn clipped_values_stay_bounded() {
    let model = FieldModel::clipped(2, 1.0, 0.7);
    let b = AxisBox::new(vec![3.0, 5.0]).unwrap();
    let g = BoxSampler::per_cell(&model, &b).unwrap().field(3, 0).unwrap();
    let mean = model.nonlinearity.gaussian_mean();
    assert!(g.values().iter().all(|v| (v + mean).abs() <= 0.7 + 1e-12));
}

proptest! {
    #[test]
    fn empirical_cgf_is_convex(seed in any::<u64>(), scale in 0.1f64..5.0) {
        let samples: Vec<f64> = NoiseStream::new(seed, 0, 0).normals(0, 2000).iter().map(|z| scale * z).collect();
        let b = AxisBox::new(vec![4.0]).unwrap();
        let grid: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.1).collect();
        let est = CgfEstimate::from_samples(&b, &grid, &samples).unwrap();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        for w in est.f_values.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12 * w[1].abs().max(1.0));
        }
        for (l, f) in est.lambda_grid.iter().zip(&est.f_values) {
            prop_assert!(*f >= l * mean / 2.0 - 1e-12 * f.abs().max(1.0));
        }
    }

    #[test]
    fn tabulated_oracle_matches_closed_form(side in 1.0f64..1e4, m in 0.25f64..3.0, l in -5.0f64..5.0) {
        let model = FieldModel::gaussian(1, m);
        let b = AxisBox::new(vec![side]).unwrap();
        let table = CgfEstimate::exact(&model, &b, &[l]).unwrap();
        let oracle = GaussianCgf::new(&model, &b).unwrap();
        let p = table.at(l).unwrap();
        prop_assert!((p.value - oracle.at(l).unwrap().value).abs() <= 1e-12 * p.value.abs().max(1e-300));
        prop_assert_eq!(p.ci, 0.0);
    }

    #[test]
    fn sandwich_contains_the_gaussian_tail(eps in 1e-4f64..=1e-2, x in 100.0f64..=1000.0) {
        let s = tail_sandwich(eps, 100.0, 1001.0, x).unwrap();
        let (lo, hi) = normal::ln_sf_bracket(x);
        prop_assert!(s.log_lower <= lo && hi <= s.log_upper);
        prop_assert!(tilt_internals(eps, x).xi <= -4.05);
    }

    #[test]
    fn sandwich_is_monotone(eps in 1e-4f64..0.009, x in 100.0f64..999.0) {
        let s = tail_sandwich(eps, 100.0, 1001.0, x).unwrap();
        let wider = tail_sandwich(eps + 1e-3, 100.0, 1001.0, x).unwrap();
        let further = tail_sandwich(eps, 100.0, 1001.0, x + 1.0).unwrap();
        prop_assert!(wider.log_lower <= s.log_lower && s.log_upper <= wider.log_upper);
        prop_assert!(further.log_lower < s.log_lower && further.log_upper < s.log_upper);
    }
}
