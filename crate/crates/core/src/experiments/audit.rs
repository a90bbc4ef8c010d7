use std::collections::BTreeMap;

use serde::Serialize;

use super::{derive_seed, reference_sigma2, ExperimentConfig, ReportRow};
use crate::cgf::{
    delta_cap, estimate_cgf, quad_envelope, symmetric_grid, CgfSource, GaussianCgf, POINTS_PER_DECADE, Z95,
};
use crate::engine::{
    iterate_quadratic_lower, iterate_quadratic_upper, ladder_descent, multilevel_schedule, single_step_check, Check,
    Direction, EngineParams,
};
use crate::error::{Error, Result};
use crate::field::{FieldKind, FieldModel};
use crate::geometry::AxisBox;

const TAG: u64 = 5;
const DIAGNOSTIC: &str = "diagnostic";
/// Relative rounding allowance for `sqrt` then square round trips.
const ROUNDING: f64 = 1e-12;
// Seed sub-streams per target box: envelope 0, truth 1, single steps
// 2 + 2 level (+1), ladder from LADDER_SUB on.
const SUBS_PER_BOX: u64 = 1 << 16;
const LADDER_SUB: u64 = 1 << 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub sides: String,
    pub vol: f64,
    /// Halvings from the target box down to its near-cube base.
    pub n: usize,
    pub kind: String,
    pub level: Option<usize>,
    pub direction: Option<Direction>,
    pub p: Option<f64>,
    pub lambda: Option<f64>,
    pub value: f64,
    pub reference: f64,
    pub ci: f64,
    pub pass: bool,
    pub flag: String,
    pub detail: String,
}

impl ReportRow for AuditRow {
    fn pass(&self) -> bool {
        self.pass
    }
    fn flag(&self) -> &str {
        &self.flag
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    params: EngineParams,
    target: &'a AxisBox,
    n: usize,
    index: u64,
    rows: Vec<AuditRow>,
}

impl Ctx<'_> {
    fn row(&self, kind: &str) -> AuditRow {
        AuditRow {
            sides: self.target.to_string(),
            vol: self.target.vol(),
            n: self.n,
            kind: kind.into(),
            level: None,
            direction: None,
            p: None,
            lambda: None,
            value: f64::NAN,
            reference: f64::NAN,
            ci: 0.0,
            pass: false,
            flag: String::new(),
            detail: String::new(),
        }
    }

    fn seed(&self, sub: u64) -> u64 {
        derive_seed(self.cfg.seed, TAG, self.index * SUBS_PER_BOX + sub)
    }

    fn oracle(&self) -> bool {
        self.cfg.audit.oracle && self.cfg.model.kind == FieldKind::GaussianMa
    }

    /// CGF sources at `b`, exact or estimated on exactly the requested tilts.
    fn source(&self, b: &AxisBox, tilts: &[f64], sub: u64) -> Result<Box<dyn CgfSource>> {
        if self.oracle() {
            return Ok(Box::new(GaussianCgf::new(&self.cfg.model, b)?));
        }
        Ok(Box::new(estimate_cgf(&self.cfg.model, b, tilts, self.cfg.n_samples, self.seed(sub))?))
    }

    fn diagnostics(&mut self, prefix: &str, checks: &[Check], direction: Direction) {
        for c in checks {
            let mut r = self.row(&format!("{prefix}:{}", c.name));
            r.direction = Some(direction);
            r.value = c.slack;
            r.reference = 0.0;
            r.pass = c.pass;
            r.flag = DIAGNOSTIC.into();
            self.rows.push(r);
        }
    }
}

fn truth(cfg: &ExperimentConfig, b: &AxisBox, seed: u64) -> Result<(f64, f64)> {
    if cfg.model.kind == FieldKind::GaussianMa {
        return Ok((GaussianCgf::new(&cfg.model, b)?.coefficient(), 0.0));
    }
    let (s2, se) = reference_sigma2(&cfg.model, b, cfg.reference_samples(), seed)?;
    Ok((0.5 * s2, 0.5 * Z95 * se))
}

fn envelopes(ctx: &mut Ctx, base: &AxisBox, radius: f64) -> Result<(f64, f64)> {
    let model: &FieldModel = &ctx.cfg.model;
    if ctx.oracle() {
        let c = GaussianCgf::new(model, base)?.coefficient();
        return Ok((c, c));
    }
    let grid = symmetric_grid(radius * 1e-2, radius, POINTS_PER_DECADE);
    let est = estimate_cgf(model, base, &grid, ctx.cfg.n_samples, ctx.seed(0))?;
    let env = quad_envelope(&est, radius)?;
    Ok((env.upper + env.slack, (env.lower - env.slack).max(0.0)))
}

fn propagation_rows(ctx: &mut Ctx, upper: f64, lower: f64, radius: f64) -> Result<()> {
    let (t, t_ci) = truth(ctx.cfg, ctx.target, ctx.seed(1))?;
    for (direction, a) in [(Direction::Up, upper), (Direction::Down, lower)] {
        let name = match direction {
            Direction::Up => "envelope_upper",
            Direction::Down => "envelope_lower",
        };
        let mut r = ctx.row(name);
        r.direction = Some(direction);
        r.reference = t;
        r.ci = t_ci;
        let res = match direction {
            Direction::Up => iterate_quadratic_upper(a, radius, ctx.target, ctx.n, &ctx.params),
            Direction::Down => iterate_quadratic_lower(a, radius, ctx.target, ctx.n, &ctx.params),
        };
        match res {
            Ok(prop) => {
                r.value = prop.coefficient;
                r.pass = match direction {
                    Direction::Up => prop.coefficient >= t * (1.0 - ROUNDING) - 3.0 * t_ci,
                    Direction::Down => prop.coefficient <= t * (1.0 + ROUNDING) + 3.0 * t_ci,
                };
                r.detail = format!("radius={}", prop.radius);
                let mut gap = ctx.row(&format!("gap_{}", &name[9..]));
                gap.direction = Some(direction);
                gap.value = (prop.coefficient - t).abs();
                gap.reference = t;
                gap.ci = t_ci;
                gap.pass = true;
                gap.flag = "informational".into();
                ctx.rows.push(r);
                ctx.rows.push(gap);
            }
            Err(e) => {
                r.flag = match &e {
                    Error::Annihilated { level, .. } => format!("annihilated_at_level_{level}"),
                    Error::InvalidParameter(_) => "degenerate".into(),
                    _ => "error".into(),
                };
                r.detail = e.to_string();
                ctx.rows.push(r);
            }
        }
    }
    Ok(())
}

fn single_step_rows(ctx: &mut Ctx) -> Result<()> {
    let l = ctx.cfg.audit.single_step_levels;
    let levels = ctx.n.saturating_sub(l)..ctx.n.max(1);
    let c1 = ctx.params.c1;
    for level in levels {
        let b = ctx.target.halve_n(level);
        let half = b.halve();
        let log_s = crate::scale::ScaleFunctions::new(ctx.params.d).log_s_pow(b.vol());
        let mut cases = Vec::new();
        for &p in &ctx.cfg.audit.p_grid {
            for direction in [Direction::Up, Direction::Down] {
                let gain = match direction {
                    Direction::Up => (p - 1.0) / p,
                    Direction::Down => p - 1.0,
                };
                let cap = gain * b.vol().sqrt() / (c1 * log_s);
                for f in [-1.0, -0.5, 0.5, 1.0] {
                    cases.push((p, direction, f * cap));
                }
            }
        }
        let big: Vec<f64> = cases.iter().map(|c| c.2).collect();
        let small: Vec<f64> = cases
            .iter()
            .map(|&(p, dir, lam)| match dir {
                Direction::Up => p * lam / std::f64::consts::SQRT_2,
                Direction::Down => lam / (p * std::f64::consts::SQRT_2),
            })
            .collect();
        let fb = ctx.source(&b, &big, 2 + 2 * level as u64)?;
        let fh = ctx.source(&half, &small, 3 + 2 * level as u64)?;
        for (p, direction, lambda) in cases {
            let mut r = ctx.row("single_step");
            r.level = Some(level);
            r.direction = Some(direction);
            r.p = Some(p);
            r.lambda = Some(lambda);
            r.reference = 0.0;
            match single_step_check(fb.as_ref(), fh.as_ref(), &ctx.params, p, lambda, direction) {
                Ok(s) => {
                    r.value = s.margin;
                    r.ci = s.slack;
                    r.pass = s.holds;
                    let mut flags = Vec::new();
                    if !s.admissible {
                        flags.push("inadmissible");
                    }
                    if s.interpolated {
                        flags.push("interpolated");
                    }
                    if !s.reliable {
                        flags.push("unreliable");
                    }
                    r.flag = flags.join(";");
                    r.detail = format!("lhs={} rhs={}", s.lhs, s.rhs);
                }
                Err(e) => {
                    r.flag = "error".into();
                    r.detail = e.to_string();
                }
            }
            ctx.rows.push(r);
        }
    }
    Ok(())
}

fn ladder_rows(ctx: &mut Ctx) -> Result<()> {
    let eps = ctx.params.eps;
    let mut certs = Vec::new();
    for &lambda in &ctx.cfg.audit.ladder_lambdas {
        for direction in [Direction::Up, Direction::Down] {
            certs.push((lambda, direction, ladder_descent(ctx.target, lambda, &ctx.params, direction)));
        }
    }
    // One sample set for the target and one per distinct bottom level.
    let fb = ctx.source(ctx.target, &ctx.cfg.audit.ladder_lambdas.clone(), LADDER_SUB)?;
    let mut bottoms: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (_, _, cert) in &certs {
        if let Ok(c) = cert {
            bottoms.entry(c.n).or_default().push(c.mu);
        }
    }
    let mut fms = BTreeMap::new();
    for (n, mus) in bottoms {
        fms.insert(n, ctx.source(&ctx.target.halve_n(n), &mus, LADDER_SUB + 1 + n as u64)?);
    }
    for (lambda, direction, cert) in certs {
        let mut r = ctx.row("ladder");
        r.direction = Some(direction);
        r.lambda = Some(lambda);
        let cert = match cert {
            Ok(c) => c,
            Err(e) => {
                r.flag = match &e {
                    Error::LadderCollapsed { level } => format!("collapsed_at_level_{level}"),
                    _ => "error".into(),
                };
                r.detail = e.to_string();
                ctx.rows.push(r);
                continue;
            }
        };
        let (pb, pm) = match (fb.at(lambda), fms[&cert.n].at(cert.mu)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::EmptyGrid("ladder tilt missing".into())),
        };
        let lhs = pb.value / (lambda * lambda);
        let q = pm.value / (cert.mu * cert.mu);
        let ci = pb.ci / (lambda * lambda) + (1.0 + eps) * pm.ci / (cert.mu * cert.mu);
        let rhs = match direction {
            Direction::Up => (1.0 + eps) * q + eps,
            Direction::Down => (1.0 - eps) * q - eps,
        };
        r.level = Some(cert.n);
        r.value = lhs;
        r.reference = rhs;
        r.ci = ci;
        r.pass = match direction {
            Direction::Up => lhs <= rhs + ci,
            Direction::Down => lhs >= rhs - ci,
        };
        if !(pb.reliable && pm.reliable) {
            r.flag = "unreliable".into();
        }
        r.detail = format!("mu={} ratio={} clamped={}", cert.mu, cert.scale_ratio(), cert.n_clamped);
        ctx.rows.push(r);
        ctx.diagnostics(&format!("ladder_check[{lambda}]"), &cert.checks, direction);
    }
    Ok(())
}

fn schedule_rows(ctx: &mut Ctx, a: f64, radius: f64) -> Result<()> {
    let split = ctx.cfg.audit.split.unwrap_or(ctx.n / 2);
    for direction in [Direction::Up, Direction::Down] {
        let s = multilevel_schedule(a, radius, ctx.target, ctx.n, split, &ctx.params, direction)?;
        ctx.diagnostics("schedule", &s.side_conditions, direction);
    }
    Ok(())
}

fn audit_box(cfg: &ExperimentConfig, params: EngineParams, target: &AxisBox, index: u64) -> Result<Vec<AuditRow>> {
    let mut ctx = Ctx { cfg, params, target, n: 0, index, rows: Vec::new() };
    let n = match target.normalize_to_scale(params.c1) {
        Ok(n) => n,
        Err(e) => {
            let mut r = ctx.row("normalize");
            r.flag = "scale_exceeds_width".into();
            r.detail = e.to_string();
            return Ok(vec![r]);
        }
    };
    ctx.n = n;
    let base = target.halve_n(n);
    let radius = delta_cap(base.vol(), params.c1, params.d)?;
    let (upper, lower) = envelopes(&mut ctx, &base, radius)?;
    propagation_rows(&mut ctx, upper, lower, radius)?;
    single_step_rows(&mut ctx)?;
    ladder_rows(&mut ctx)?;
    if upper > 0.0 {
        schedule_rows(&mut ctx, upper, radius)?;
    }
    Ok(ctx.rows)
}

pub fn run_certificate_audit(cfg: &ExperimentConfig) -> Result<Vec<AuditRow>> {
    let params = cfg.engine();
    let mut rows = Vec::new();
    for (i, b) in cfg.boxes.iter().enumerate() {
        rows.extend(audit_box(cfg, params, b, i as u64)?);
    }
    Ok(rows)
}
