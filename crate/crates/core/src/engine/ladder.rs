use serde::Serialize;

use super::{Check, Direction, EngineParams};
use crate::error::{Error, Result};
use crate::geometry::AxisBox;
use crate::scale::log_pow;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderCertificate {
    pub direction: Direction,
    pub lambda: f64,
    pub n: usize,
    /// `log2` of the bracketing quantity that determines `n`; `None` on the short circuit.
    pub log2_bracket: Option<f64>,
    /// Set when the bracket asked for `n <= 0` and `n = 0` was used instead.
    pub n_clamped: bool,
    pub short_circuit: bool,
    pub lambda_seq: Vec<f64>,
    pub mu: f64,
    pub x_sum: f64,
    pub checks: Vec<Check>,
}

impl LadderCertificate {
    pub fn passes(&self) -> bool {
        super::all_pass(&self.checks)
    }

    /// `2^(n/2) |mu| / |lambda|`, the factor multiplying the small-box quotient.
    pub fn scale_ratio(&self) -> f64 {
        2f64.powf(self.n as f64 / 2.0) * self.mu.abs() / self.lambda.abs()
    }
}

/// Smallest integer `n` with `Q <= 2^n`, from `log2 Q`.
pub(crate) fn bracket_log2(lambda: f64, v: f64, params: &EngineParams) -> f64 {
    let d = params.d as f64;
    let cl = params.c3 * lambda.abs();
    let mut q = 2.0 * d * cl.log2() - (d - 1.0) * v.log2();
    if params.d > 1 {
        q += 2.0 * d * (d - 1.0) * (2.0 * d).log2();
        q += 2.0 * d * (d - 1.0) * ((v.sqrt() / cl).ln()).log2();
    }
    q
}

/// Descends from `B` to `B / 2^n` along the tilt chain, reporting every
/// condition that makes the small-box quotient control the large-box one.
pub fn ladder_descent(
    b: &AxisBox,
    lambda: f64,
    params: &EngineParams,
    direction: Direction,
) -> Result<LadderCertificate> {
    params.validate()?;
    if b.dim() != params.d {
        return Err(Error::DimensionMismatch { expected: params.d, got: b.dim() });
    }
    if lambda == 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be finite and nonzero, got {lambda}")));
    }
    let d = params.d;
    let sf = params.scale();
    let eps = params.eps;
    let v = b.vol();
    let abs = lambda.abs();
    let mut checks = vec![
        Check::ge("volume_at_least_c2", v, params.c2_volume),
        Check::ge("width_at_least_w", b.width(), params.width_floor()),
        Check::le("c3_lambda_admissible", params.c3 * abs, v.sqrt() / log_pow(v.ln(), d as i32)),
    ];
    let threshold = eps * sf.s(v).sqrt() / log_pow(v.ln(), d as i32 - 1);
    let short_circuit = abs <= threshold;
    let (n, log2_bracket, n_clamped) = if short_circuit {
        (0, None, false)
    } else {
        let q = bracket_log2(lambda, v, params);
        let raw = q.ceil();
        if raw.is_nan() || raw <= 0.0 {
            (0, Some(q), true)
        } else {
            (raw as usize, Some(q), false)
        }
    };

    let root_v = v.sqrt();
    let sign = match direction {
        Direction::Up => -1.0,
        Direction::Down => 1.0,
    };
    let mut lambda_seq = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    for k in 0..=n {
        let inv = 1.0 / abs + sign * params.c1 / root_v * acc;
        if !(inv > 0.0) {
            return Err(Error::LadderCollapsed { level: k });
        }
        lambda_seq.push(lambda.signum() / (2f64.powf(k as f64 / 2.0) * inv));
        acc += sf.log_s_pow(v / 2f64.powi(k as i32));
    }
    let mu = lambda_seq[n];
    let x_sum: f64 = (0..n)
        .map(|k| {
            let vk = v / 2f64.powi(k as i32);
            1.0 / (sf.r(vk) * sf.log_s_pow(vk))
        })
        .sum();

    let bottom = b.halve_n(n);
    let scaled = 2f64.powf(n as f64 / 2.0) * mu.abs();
    checks.push(Check::ge("bottom_width_at_least_w", bottom.width(), params.width_floor()));
    match direction {
        Direction::Up => checks.push(Check::le("scaled_mu_upper", scaled, (1.0 + eps) * abs)),
        Direction::Down => {
            checks.push(Check::ge("scaled_mu_lower", scaled, (1.0 - eps) * abs));
            checks.push(Check::le("scaled_mu_at_most_lambda", scaled, abs));
        }
    }
    let vn = bottom.vol();
    let mu_cap = eps * sf.s(vn).sqrt() / log_pow(vn.ln(), d as i32 - 1);
    checks.push(Check::le("mu_small", mu.abs(), mu_cap));
    checks.push(Check::le("x_sum_small", x_sum, eps * abs / root_v));

    Ok(LadderCertificate {
        direction,
        lambda,
        n,
        log2_bracket,
        n_clamped,
        short_circuit,
        lambda_seq,
        mu,
        x_sum,
        checks,
    })
}
