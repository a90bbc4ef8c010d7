//! Simulable stationary centered fields with finite dependence range.
//!
//! Moving-average fields are white noise convolved with a product kernel
//! supported on `[0, m]^d`, so values at points more than `m` apart (in some
//! coordinate) are independent. The noise lives on a lattice anchored at the
//! origin and every normal is keyed by its lattice coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AxisBox;
use crate::noise::NoiseStream;
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    GaussianMa,
    BoundedNonlinearMa,
    IidBlock,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::GaussianMa => "gaussian_ma",
            FieldKind::BoundedNonlinearMa => "bounded_nonlinear_ma",
            FieldKind::IidBlock => "iid_block",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    /// `1` on `[0, m)`.
    Indicator,
    /// Tent on `[0, m]` peaking at `m/2` with height 1.
    Triangle,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub shape: KernelShape,
    /// Support length `m` per coordinate, which is also the dependence range.
    pub radius: f64,
    /// Overall multiplier of the field.
    #[serde(default = "one")]
    pub amplitude: f64,
}

impl Kernel {
    /// One-dimensional factor.
    pub fn eval1(&self, u: f64) -> f64 {
        let m = self.radius;
        match self.shape {
            KernelShape::Indicator => {
                if (0.0..m).contains(&u) {
                    1.0
                } else {
                    0.0
                }
            }
            KernelShape::Triangle => {
                if (0.0..=m).contains(&u) {
                    1.0 - (2.0 * u / m - 1.0).abs()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn integral1(&self) -> f64 {
        match self.shape {
            KernelShape::Indicator => self.radius,
            KernelShape::Triangle => 0.5 * self.radius,
        }
    }

    fn kinks(&self) -> Vec<f64> {
        match self.shape {
            KernelShape::Indicator => vec![0.0, self.radius],
            KernelShape::Triangle => vec![0.0, 0.5 * self.radius, self.radius],
        }
    }

    /// Autocovariance factor `int k(s) k(s+u) ds` for `u >= 0`.
    pub fn autocov1(&self, u: f64) -> f64 {
        let u = u.abs();
        let hi = self.radius - u;
        if hi <= 0.0 {
            return 0.0;
        }
        let mut pts: Vec<f64> =
            self.kinks().into_iter().flat_map(|k| [k, k - u]).filter(|&p| p > 0.0 && p < hi).collect();
        pts.push(0.0);
        pts.push(hi);
        gauss_legendre_pieces(&mut pts, |s| self.eval1(s) * self.eval1(s + u))
    }

    /// `Var(int_0^r)` of the unit-amplitude one-dimensional field.
    pub fn axis_variance(&self, r: f64) -> f64 {
        let top = r.min(self.radius);
        let mut pts: Vec<f64> = self.kinks().into_iter().filter(|&p| p > 0.0 && p < top).collect();
        pts.push(0.0);
        pts.push(top);
        2.0 * gauss_legendre_pieces(&mut pts, |u| (r - u) * self.autocov1(u))
    }

    /// Lattice taps `k((a + 1/2) h)` for `a = 0, 1, ...` inside the support.
    fn taps(&self, h: f64) -> Vec<f64> {
        let mut taps = Vec::new();
        let mut a = 0usize;
        while (a as f64 + 0.5) * h < self.radius {
            taps.push(self.eval1((a as f64 + 0.5) * h));
            a += 1;
        }
        taps
    }
}

/// Integrates a piecewise polynomial of degree at most 9 exactly over the
/// sorted breakpoints, using 5-point Gauss-Legendre on each piece.
fn gauss_legendre_pieces<F: Fn(f64) -> f64>(pts: &mut Vec<f64>, f: F) -> f64 {
    const X: [f64; 5] =
        [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        total += half * X.iter().zip(W).map(|(x, wt)| wt * f(mid + half * x)).sum::<f64>();
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Identity,
    /// `clamp(g, -level, level)` of a unit-variance Gaussian field.
    Clipped { level: f64 },
}

impl Nonlinearity {
    fn apply(&self, g: f64) -> f64 {
        match *self {
            Nonlinearity::Identity => g,
            Nonlinearity::Clipped { level } => g.clamp(-level, level),
        }
    }

    /// `E phi(Z)` for standard normal `Z`.
    pub fn gaussian_mean(&self) -> f64 {
        match *self {
            Nonlinearity::Identity => 0.0,
            Nonlinearity::Clipped { level } => clipped_gaussian_mean(-level, level),
        }
    }
}

/// `E clamp(Z, lo, hi) = lo Phi(lo) + hi (1 - Phi(hi)) + phi(lo) - phi(hi)`.
pub fn clipped_gaussian_mean(lo: f64, hi: f64) -> f64 {
    let pdf = |x: f64| normal::ln_pdf(x).exp();
    lo * normal::cdf(lo) + hi * normal::sf(hi) + pdf(lo) - pdf(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub d: usize,
    pub kind: FieldKind,
    pub kernel: Kernel,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    pub grid_h: f64,
}

impl FieldModel {
    /// Gaussian moving average with an indicator kernel and `grid_h = m/4`.
    pub fn gaussian(d: usize, m: f64) -> Self {
        Self {
            d,
            kind: FieldKind::GaussianMa,
            kernel: Kernel { shape: KernelShape::Indicator, radius: m, amplitude: 1.0 },
            nonlinearity: Nonlinearity::Identity,
            grid_h: m / 4.0,
        }
    }

    pub fn clipped(d: usize, m: f64, level: f64) -> Self {
        Self {
            kind: FieldKind::BoundedNonlinearMa,
            nonlinearity: Nonlinearity::Clipped { level },
            ..Self::gaussian(d, m)
        }
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.kernel.amplitude = amplitude;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.d == 0 {
            return bad("dimension must be at least 1".into());
        }
        let m = self.kernel.radius;
        if !(m > 0.0 && m.is_finite()) {
            return bad(format!("kernel radius must be positive and finite, got {m}"));
        }
        if !self.kernel.amplitude.is_finite() {
            return bad("kernel amplitude must be finite".into());
        }
        if !(self.grid_h > 0.0) {
            return bad(format!("grid_h must be positive, got {}", self.grid_h));
        }
        if self.grid_h > m / 4.0 {
            return Err(Error::GridTooCoarse { grid_h: self.grid_h, limit: m / 4.0 });
        }
        match (self.kind, self.nonlinearity) {
            (FieldKind::GaussianMa, Nonlinearity::Clipped { .. }) => {
                bad("gaussian_ma takes the identity nonlinearity".into())
            }
            (FieldKind::BoundedNonlinearMa, Nonlinearity::Identity) => {
                bad("bounded_nonlinear_ma needs a clip level".into())
            }
            (_, Nonlinearity::Clipped { level }) if !(level >= 0.0 && level.is_finite()) => {
                bad(format!("clip level must be nonnegative, got {level}"))
            }
            _ => Ok(()),
        }
    }

    fn check_box(&self, b: &AxisBox) -> Result<()> {
        if b.dim() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: b.dim() });
        }
        Ok(())
    }

    fn require_gaussian(&self) -> Result<()> {
        match self.kind {
            FieldKind::GaussianMa => Ok(()),
            k => Err(Error::NoClosedForm(k.name())),
        }
    }

    /// `Var(int_B X)` of the continuum Gaussian field.
    pub fn exact_box_variance(&self, b: &AxisBox) -> Result<f64> {
        self.validate()?;
        self.require_gaussian()?;
        self.check_box(b)?;
        let a = self.kernel.amplitude;
        Ok(a * a * b.sides().iter().map(|&r| self.kernel.axis_variance(r)).product::<f64>())
    }

    /// `lim Var(int_B X) / vol B`.
    pub fn exact_sigma2(&self) -> Result<f64> {
        self.validate()?;
        self.require_gaussian()?;
        let a = self.kernel.amplitude;
        Ok(a * a * self.kernel.integral1().powi(2 * self.d as i32))
    }

    pub fn exact_gaussian_cgf(&self, b: &AxisBox, lambda: f64) -> Result<f64> {
        Ok(0.5 * lambda * lambda * self.exact_box_variance(b)? / b.vol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub model: FieldModel,
    pub seed: u64,
    pub replica: u64,
}

/// One realization of `int_B X`.
pub fn sample_integral(model: &FieldModel, b: &AxisBox, seed: u64, replica: u64) -> Result<f64> {
    Ok(BoxSampler::new(model, b)?.sample(seed, replica))
}

const CELL_BIAS: i64 = 1 << 40;
const LANE_BLOCK_SHIFT: u64 = u64::MAX;
const LANE_CLASSES: u64 = u64::MAX - 1;

fn lane_of(coords: &[i64]) -> u64 {
    coords.iter().fold(0x243f_6a88_85a3_08d3u64, |h, &c| {
        let z = (h ^ (c + CELL_BIAS) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        z ^ (z >> 29)
    }) & (u64::MAX >> 2)
}

/// Regular grid along one axis: `n` cells of width `h` with the kernel taps.
#[derive(Debug, Clone)]
struct AxisGrid {
    n: usize,
    h: f64,
    taps: Vec<f64>,
}

impl AxisGrid {
    fn new(kernel: &Kernel, side: f64, h: f64) -> Self {
        let n = ((side / h).ceil() as usize).max(1);
        let h = side / n as f64;
        Self { n, h, taps: kernel.taps(h) }
    }

    fn k(&self) -> usize {
        self.taps.len()
    }

    /// Noise cells reaching the grid: indices `-(K-1) .. n-1`.
    fn noise_len(&self) -> usize {
        self.n + self.k() - 1
    }

    /// Weight of each noise cell in the grid sum, `sum_i tau_{i-j}`.
    fn noise_weights(&self) -> Vec<f64> {
        let k = self.k();
        let mut prefix = vec![0.0; k + 1];
        for a in 0..k {
            prefix[a + 1] = prefix[a] + self.taps[a];
        }
        (0..self.noise_len())
            .map(|idx| {
                let j = idx as i64 - (k as i64 - 1);
                // taps a = i - j with 0 <= i < n
                let lo = (-j).max(0) as usize;
                let hi = ((self.n as i64 - j).min(k as i64)) as usize;
                prefix[hi] - prefix[lo]
            })
            .collect()
    }
}

/// Field values on the grid covering a box.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    counts: Vec<usize>,
    steps: Vec<f64>,
    values: Vec<f64>,
}

impl FieldGrid {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Riemann sum over the window of cells `offset .. offset + len` per axis.
    pub fn window_integral(&self, offset: &[usize], len: &[usize]) -> f64 {
        let d = self.counts.len();
        assert!(offset.len() == d && len.len() == d);
        for k in 0..d {
            assert!(offset[k] + len[k] <= self.counts[k], "window exceeds grid");
        }
        let cell: f64 = self.steps.iter().product();
        let mut idx = vec![0usize; d];
        let total: usize = len.iter().product();
        let mut sum = 0.0;
        for _ in 0..total {
            let mut flat = 0;
            for k in (0..d).rev() {
                flat = flat * self.counts[k] + offset[k] + idx[k];
            }
            sum += self.values[flat];
            for k in 0..d {
                idx[k] += 1;
                if idx[k] < len[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        cell * sum + 0.0
    }

    pub fn integral(&self) -> f64 {
        let zeros = vec![0; self.counts.len()];
        self.window_integral(&zeros, &self.counts.clone())
    }
}

#[derive(Debug, Clone)]
enum Plan {
    /// Gaussian integral as `scale * sum_c w_c sqrt(n_c) Z_c` over classes of
    /// noise cells sharing the same weight; exact in law.
    Aggregated {
        scale: f64,
        classes: Vec<(f64, f64)>,
        variance: f64,
    },
    PerCell {
        axes: Vec<AxisGrid>,
    },
    Blocks,
}

/// Prepared sampler of `int_B X` for one (model, box).
#[derive(Debug, Clone)]
pub struct BoxSampler {
    model: FieldModel,
    bx: AxisBox,
    plan: Plan,
}

impl BoxSampler {
    /// Picks the aggregated plan for Gaussian fields, lattice simulation otherwise.
    pub fn new(model: &FieldModel, b: &AxisBox) -> Result<Self> {
        model.validate()?;
        model.check_box(b)?;
        let plan = match model.kind {
            FieldKind::GaussianMa => Self::aggregated_plan(model, b),
            FieldKind::BoundedNonlinearMa => Plan::PerCell { axes: Self::axes(model, b) },
            FieldKind::IidBlock => Plan::Blocks,
        };
        Ok(Self { model: *model, bx: b.clone(), plan })
    }

    /// Forces cell-by-cell simulation.
    pub fn per_cell(model: &FieldModel, b: &AxisBox) -> Result<Self> {
        model.validate()?;
        model.check_box(b)?;
        if model.kind == FieldKind::IidBlock {
            return Self::new(model, b);
        }
        Ok(Self { model: *model, bx: b.clone(), plan: Plan::PerCell { axes: Self::axes(model, b) } })
    }

    fn axes(model: &FieldModel, b: &AxisBox) -> Vec<AxisGrid> {
        b.sides().iter().map(|&r| AxisGrid::new(&model.kernel, r, model.grid_h)).collect()
    }

    fn aggregated_plan(model: &FieldModel, b: &AxisBox) -> Plan {
        let axes = Self::axes(model, b);
        // weight classes per axis, keyed by exact bit pattern
        let per_axis: Vec<Vec<(f64, usize)>> = axes
            .iter()
            .map(|ax| {
                let mut classes: std::collections::BTreeMap<u64, usize> = Default::default();
                for w in ax.noise_weights() {
                    *classes.entry(w.to_bits()).or_default() += 1;
                }
                classes.into_iter().map(|(bits, c)| (f64::from_bits(bits), c)).collect()
            })
            .collect();
        let mut classes = vec![(1.0f64, 1usize)];
        for axis in &per_axis {
            classes = classes.iter().flat_map(|&(w, c)| axis.iter().map(move |&(wa, ca)| (w * wa, c * ca))).collect();
        }
        let a = model.kernel.amplitude;
        let scale = a * axes.iter().map(|ax| ax.h.powf(1.5)).product::<f64>();
        let classes: Vec<(f64, f64)> = classes.into_iter().map(|(w, c)| (w, (c as f64).sqrt())).collect();
        let variance = scale * scale * classes.iter().map(|(w, sc)| (w * sc).powi(2)).sum::<f64>();
        Plan::Aggregated { scale, classes, variance }
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    pub fn box_(&self) -> &AxisBox {
        &self.bx
    }

    /// Exact variance of the sampled quantity, when it is Gaussian.
    pub fn gaussian_variance(&self) -> Option<f64> {
        match &self.plan {
            Plan::Aggregated { variance, .. } => Some(*variance),
            _ => None,
        }
    }

    pub fn sample(&self, seed: u64, replica: u64) -> f64 {
        match &self.plan {
            Plan::Aggregated { scale, classes, .. } => {
                let z = NoiseStream::new(seed, replica, LANE_CLASSES).normals(0, classes.len());
                let s: f64 = classes.iter().zip(&z).map(|(&(w, sc), z)| w * sc * z).sum();
                scale * s + 0.0
            }
            Plan::PerCell { axes } => self.simulate(axes, seed, replica).integral(),
            Plan::Blocks => self.sample_blocks(seed, replica),
        }
    }

    /// Draw under the exponential tilt `theta` of the Gaussian integral.
    /// Returns the value and the log likelihood ratio `ln dP/dQ`.
    pub fn sample_tilted(&self, seed: u64, replica: u64, theta: f64) -> Option<(f64, f64)> {
        let Plan::Aggregated { scale, classes, variance } = &self.plan else {
            return None;
        };
        let z = NoiseStream::new(seed, replica, LANE_CLASSES).normals(0, classes.len());
        let s: f64 = classes.iter().zip(&z).map(|(&(w, sc), z)| w * sc * (z + theta * scale * w * sc)).sum();
        let value = scale * s;
        Some((value, -theta * value + 0.5 * theta * theta * variance))
    }

    /// Simulates the field on the grid covering the sampler's box.
    pub fn field(&self, seed: u64, replica: u64) -> Option<FieldGrid> {
        match &self.plan {
            Plan::PerCell { axes } => Some(self.simulate(axes, seed, replica)),
            _ => None,
        }
    }

    fn simulate(&self, axes: &[AxisGrid], seed: u64, replica: u64) -> FieldGrid {
        let d = axes.len();
        let ext: Vec<usize> = axes.iter().map(AxisGrid::noise_len).collect();
        let total: usize = ext.iter().product();
        let mut buf = vec![0.0; total];
        // fill noise row by row along axis 0
        let rows = total / ext[0];
        let mut coords = vec![0i64; d];
        for row in 0..rows {
            let mut rem = row;
            for k in 1..d {
                coords[k] = (rem % ext[k]) as i64 - (axes[k].k() as i64 - 1);
                rem /= ext[k];
            }
            let lane = lane_of(&coords[1..]);
            let start = (CELL_BIAS - (axes[0].k() as i64 - 1)) as u64;
            NoiseStream::new(seed, replica, lane).fill(start, &mut buf[row * ext[0]..(row + 1) * ext[0]]);
        }
        // separable convolution, one axis at a time
        let mut dims = ext.clone();
        for (k, ax) in axes.iter().enumerate() {
            buf = convolve_axis(&buf, &dims, k, &ax.taps, ax.n);
            dims[k] = ax.n;
        }
        let a = self.model.kernel.amplitude;
        match self.model.nonlinearity {
            Nonlinearity::Identity if self.model.kind == FieldKind::GaussianMa => {
                let norm = a * axes.iter().map(|ax| ax.h.sqrt()).product::<f64>();
                buf.iter_mut().for_each(|v| *v *= norm);
            }
            nl => {
                let tap_norm: f64 = axes.iter().map(|ax| ax.taps.iter().map(|t| t * t).sum::<f64>().sqrt()).product();
                let mean = nl.gaussian_mean();
                buf.iter_mut().for_each(|v| *v = a * (nl.apply(*v / tap_norm) - mean));
            }
        }
        FieldGrid { counts: dims, steps: axes.iter().map(|ax| ax.h).collect(), values: buf }
    }

    /// Piecewise-constant field on blocks of side `m` with a uniformly random
    /// lattice shift, integrated exactly.
    fn sample_blocks(&self, seed: u64, replica: u64) -> f64 {
        let m = self.model.kernel.radius;
        let d = self.model.d;
        let shift: Vec<f64> = NoiseStream::new(seed, replica, LANE_BLOCK_SHIFT)
            .normals(0, d)
            .into_iter()
            .map(|z| m * normal::cdf(z))
            .collect();
        // per axis: overlaps of [0, r] with blocks [j m - s, (j+1) m - s), j >= 0
        let overlaps: Vec<Vec<f64>> = self
            .bx
            .sides()
            .iter()
            .zip(&shift)
            .map(|(&r, &s)| {
                let mut out = Vec::new();
                let mut j = 0usize;
                loop {
                    let lo = (j as f64 * m - s).max(0.0);
                    let hi = ((j + 1) as f64 * m - s).min(r);
                    if lo >= r {
                        break;
                    }
                    if hi > lo {
                        out.push(hi - lo);
                    }
                    j += 1;
                }
                out
            })
            .collect();
        let nl = self.model.nonlinearity;
        let mean = nl.gaussian_mean();
        let dims: Vec<usize> = overlaps.iter().map(Vec::len).collect();
        let rows: usize = dims[1..].iter().product();
        let mut total = 0.0;
        let mut coords = vec![0i64; d];
        for row in 0..rows {
            let mut rem = row;
            let mut w_rest = 1.0;
            for k in 1..d {
                let i = rem % dims[k];
                coords[k] = i as i64;
                w_rest *= overlaps[k][i];
                rem /= dims[k];
            }
            let z = NoiseStream::new(seed, replica, lane_of(&coords[1..])).normals(CELL_BIAS as u64, dims[0]);
            let row_sum: f64 = overlaps[0].iter().zip(&z).map(|(w, z)| w * (nl.apply(*z) - mean)).sum();
            total += w_rest * row_sum;
        }
        self.model.kernel.amplitude * total + 0.0
    }
}

/// Valid convolution along axis `k`: `out[i] = sum_a taps[a] in[i + K - 1 - a]`.
fn convolve_axis(input: &[f64], dims: &[usize], k: usize, taps: &[f64], n_out: usize) -> Vec<f64> {
    let stride: usize = dims[..k].iter().product();
    let outer: usize = dims[k + 1..].iter().product();
    let kk = taps.len();
    let mut out = vec![0.0; stride * n_out * outer];
    let uniform = taps.iter().all(|&t| t == taps[0]);
    for o in 0..outer {
        for s in 0..stride {
            let at = |i: usize| input[s + stride * (i + dims[k] * o)];
            let put = |i: usize| s + stride * (i + n_out * o);
            if uniform {
                // running window sum
                let mut acc: f64 = (0..kk).map(at).sum();
                out[put(0)] = taps[0] * acc;
                for i in 1..n_out {
                    acc += at(i + kk - 1) - at(i - 1);
                    out[put(i)] = taps[0] * acc;
                }
            } else {
                for i in 0..n_out {
                    out[put(i)] = (0..kk).map(|a| taps[a] * at(i + kk - 1 - a)).sum();
                }
            }
        }
    }
    out
}
