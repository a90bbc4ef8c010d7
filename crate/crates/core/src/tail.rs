//! Explicit tail-probability sandwich from a quadratic CGF sandwich, the
//! internals of its tilting argument, and the parameter mapping used to turn
//! box-level CGF control into moderate-deviation statements.
//!
//! All probabilities are natural logarithms.

use serde::Serialize;

use crate::engine::Check;
use crate::error::{Error, Result};
use crate::scale::log_pow;

pub const MAX_EPS: f64 = 0.01;
pub const MIN_A: f64 = 100.0;
/// Probability floor of the tilted measure on the target window.
pub const WINDOW_MASS: f64 = 0.96;
pub const MDP_MAX_EPS: f64 = 0.32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailSandwich {
    pub x: f64,
    pub eps: f64,
    pub log_lower: f64,
    pub log_upper: f64,
    /// The CGF sandwich on `[a, A + 6(1 + A sqrt(eps))]` is taken on trust by this function.
    pub cgf_hypothesis_assumed: bool,
}

impl TailSandwich {
    pub fn contains(&self, log_p: f64) -> bool {
        self.log_lower <= log_p && log_p <= self.log_upper
    }
}

/// Markov bound at tilt `x`: `log P(Y >= x) <= -x^2 + f(x)`.
pub fn chernoff_upper(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let fx = f(x);
    if fx == f64::INFINITY {
        return f64::INFINITY;
    }
    -x * x + fx
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("eps must be positive, got {eps}")));
    }
    if eps > MAX_EPS {
        return Err(Error::Precondition(format!("eps = {eps} exceeds 1/100")));
    }
    Ok(())
}

/// Bounds on `log P(Y > x)` for `Y` whose CGF lies within `(1/2 +- eps) lambda^2`.
pub fn tail_sandwich(eps: f64, a: f64, big_a: f64, x: f64) -> Result<TailSandwich> {
    check_eps(eps)?;
    if !(a >= MIN_A) {
        return Err(Error::Precondition(format!("a = {a} is below 100")));
    }
    if !(big_a > a) {
        return Err(Error::Precondition(format!("A = {big_a} must exceed a = {a}")));
    }
    if !(a <= x && x <= big_a) {
        return Err(Error::Precondition(format!("x = {x} outside [a, A] = [{a}, {big_a}]")));
    }
    let log_upper = chernoff_upper(|l| (0.5 + eps) * l * l, x);
    let log_lower = WINDOW_MASS.ln() - (0.5 + 16.0 * eps + 9.0 / x) * x * x;
    Ok(TailSandwich { x, eps, log_lower, log_upper, cgf_hypothesis_assumed: true })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiltInternals {
    pub eps: f64,
    pub x: f64,
    pub delta: f64,
    pub lambda: f64,
    pub xi: f64,
    pub zeta: f64,
    /// `2 eps x^2 + 6 eps delta x + 5 eps delta^2 - delta^2 / 2`.
    pub xi_collected: f64,
    /// Full expansion of `zeta` in powers of `x`.
    pub zeta_collected: f64,
    /// The expansion without the `6 sqrt(eps) x^2` term, as it is usually quoted.
    pub zeta_quoted: f64,
    pub zeta_cap: f64,
    pub xi_ok: bool,
    pub window_mass_ok: bool,
    pub zeta_within_cap: bool,
    pub xi_forms_agree: bool,
    pub zeta_forms_agree: bool,
    pub zeta_quoted_agrees: bool,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// The tilting quantities for threshold `x`, from their defining expressions.
pub fn tilt_internals(eps: f64, x: f64) -> TiltInternals {
    let r = eps.sqrt();
    let delta = 3.0 * (1.0 + x * r);
    let lambda = x + delta;
    let xi = -delta * (x + 2.0 * delta) + (0.5 + eps) * (lambda + delta).powi(2) - (0.5 - eps) * lambda * lambda;
    let zeta = -0.5 * x * x - (0.5 - eps) * lambda * lambda + lambda * (x + 2.0 * delta);
    let xi_collected = 2.0 * eps * x * x + 6.0 * eps * delta * x + 5.0 * eps * delta * delta - 0.5 * delta * delta;
    let linear = (6.0 + 27.0 * r + 6.0 * eps + 18.0 * eps * r) * x + 13.5 + 9.0 * eps;
    let zeta_quoted = eps * (14.5 + 6.0 * r + 9.0 * eps) * x * x + linear;
    let zeta_collected = zeta_quoted + 6.0 * r * x * x;
    let zeta_cap = (16.0 * eps + 9.0 / x) * x * x;
    TiltInternals {
        eps,
        x,
        delta,
        lambda,
        xi,
        zeta,
        xi_collected,
        zeta_collected,
        zeta_quoted,
        zeta_cap,
        xi_ok: xi <= -4.05,
        window_mass_ok: 1.0 - 2.0 * xi.exp() >= WINDOW_MASS,
        zeta_within_cap: zeta <= zeta_cap,
        xi_forms_agree: close(xi, xi_collected),
        zeta_forms_agree: close(zeta, zeta_collected),
        zeta_quoted_agrees: close(zeta, zeta_quoted),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdpParams {
    pub eps_in: f64,
    pub eps_clamped: bool,
    pub warning: Option<String>,
    pub sigma: f64,
    pub c_envelope: f64,
    pub w: f64,
    pub v: f64,
    pub d: usize,
    pub r: f64,
    pub delta_out: f64,
    pub eps_sandwich: f64,
    pub eps_envelope: f64,
    pub a: f64,
    pub big_a: f64,
    pub checks: Vec<Check>,
}

/// Parameters that reduce a moderate-deviation statement at volume `v` to the tail sandwich.
pub fn mdp_parameters(eps: f64, sigma: f64, c_envelope: f64, w: f64, v: f64, d: usize) -> Result<MdpParams> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if sigma == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    if !(c_envelope > 0.0 && v > 1.0 && d >= 1 && sigma.is_finite()) {
        return Err(Error::InvalidParameter("need C > 0, v > 1, d >= 1".into()));
    }
    let (eps_in, eps_clamped, warning) = if eps > MDP_MAX_EPS {
        (MDP_MAX_EPS, true, Some(format!("eps = {eps} clamped to {MDP_MAX_EPS}")))
    } else {
        (eps, false, None)
    };
    let sigma = sigma.abs();
    let eps_sandwich = eps_in / 32.0;
    let eps_envelope = sigma * sigma * eps_in / 32.0;
    let r = w.max(100.0).max(10.0 / eps_in);
    let delta_out = (sigma / (1.66 * c_envelope)).powi(2);
    let a = MIN_A;
    let big_a = (delta_out * v).sqrt() / log_pow(v.ln(), d as i32);
    let checks = vec![
        Check::ge("tail_room", 1.66 * big_a, big_a * (1.0 + 6.0 * eps_sandwich.sqrt()) + 6.0),
        Check::ge("a_below_big_a", big_a, a),
    ];
    Ok(MdpParams {
        eps_in,
        eps_clamped,
        warning,
        sigma,
        c_envelope,
        w,
        v,
        d,
        r,
        delta_out,
        eps_sandwich,
        eps_envelope,
        a,
        big_a,
        checks,
    })
}
