//! Standard normal tail helpers in log space.

use statrs::function::erf::erfc;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `ln P[Z > x]`, accurate far into the tail.
pub fn ln_sf(x: f64) -> f64 {
    if x < 5.0 {
        return sf(x).ln();
    }
    // Mills ratio by its continued fraction x + 1/(x + 2/(x + 3/(x + ...))).
    let mut t = x;
    for k in (1..=80).rev() {
        t = x + k as f64 / t;
    }
    ln_pdf(x) - t.ln()
}

/// Mills-ratio bracket `phi(x) x / (1 + x^2) <= P[Z > x] <= phi(x) / x`, as logs.
pub fn ln_sf_bracket(x: f64) -> (f64, f64) {
    assert!(x > 0.0);
    let lp = ln_pdf(x);
    (lp + (x / (1.0 + x * x)).ln(), lp - x.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_agrees_with_erfc_where_both_work() {
        for x in [5.0, 6.0, 8.0, 10.0, 20.0] {
            let direct = sf(x).ln();
            assert!((ln_sf(x) - direct).abs() < 1e-10 * direct.abs(), "x = {x}");
        }
    }

    #[test]
    fn deep_tail_inside_mills_bracket() {
        for x in [100.0, 300.0, 1000.0] {
            let (lo, hi) = ln_sf_bracket(x);
            let v = ln_sf(x);
            assert!(lo <= v && v <= hi);
        }
        assert!((ln_sf(100.0) + 5005.524).abs() < 1e-3);
    }

    #[test]
    fn cdf_sf_complement() {
        for x in [-2.0, -0.3, 0.0, 1.7] {
            assert!((cdf(x) + sf(x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sf(0.0), 0.5);
    }
}
