//! Axis-aligned boxes anchored at the origin and their dyadic calculus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `[0, r_1] x ... x [0, r_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AxisBox {
    sides: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measures {
    pub vol: f64,
    pub width: f64,
    pub length: f64,
    /// 1-based index of the first longest side.
    pub arglength: usize,
}

impl AxisBox {
    pub fn new(sides: Vec<f64>) -> Result<Self> {
        if sides.is_empty() {
            return Err(Error::InvalidBox("dimension must be at least 1".into()));
        }
        if let Some(bad) = sides.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidBox(format!("side {bad} is not a positive finite number")));
        }
        Ok(Self { sides })
    }

    pub fn cube(d: usize, side: f64) -> Result<Self> {
        Self::new(vec![side; d])
    }

    pub fn sides(&self) -> &[f64] {
        &self.sides
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn vol(&self) -> f64 {
        self.sides.iter().product()
    }

    pub fn width(&self) -> f64 {
        self.sides.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn length(&self) -> f64 {
        self.sides.iter().copied().fold(0.0, f64::max)
    }

    pub fn arglength(&self) -> usize {
        let len = self.length();
        self.sides.iter().position(|&s| s == len).unwrap() + 1
    }

    pub fn measures(&self) -> Measures {
        Measures { vol: self.vol(), width: self.width(), length: self.length(), arglength: self.arglength() }
    }

    /// Halves the first longest side.
    pub fn halve(&self) -> Self {
        let mut sides = self.sides.clone();
        sides[self.arglength() - 1] *= 0.5;
        Self { sides }
    }

    pub fn halve_n(&self, n: usize) -> Self {
        let mut b = self.clone();
        for _ in 0..n {
            b = b.halve();
        }
        b
    }

    /// Multiplies side `k` by `2^alpha_k`.
    pub fn dyadic_scale(&self, alpha: &[u32]) -> Result<Self> {
        if alpha.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: alpha.len() });
        }
        let sides = self.sides.iter().zip(alpha).map(|(&s, &a)| s * 2f64.powi(a as i32)).collect();
        Ok(Self { sides })
    }

    pub fn is_near_cube(&self) -> bool {
        self.length() < 2.0 * self.width()
    }

    /// Number of halvings bringing every side into `[scale, 2*scale)`.
    pub fn normalize_to_scale(&self, scale: f64) -> Result<usize> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        if scale > self.width() {
            return Err(Error::ScaleExceedsWidth { scale, width: self.width() });
        }
        let mut n = 0;
        let mut b = self.clone();
        while b.length() >= 2.0 * scale {
            b = b.halve();
            n += 1;
        }
        assert!(b.width() >= scale, "halving pushed width below scale");
        // C^d <= vol(B/2^n) < (2C)^d, computed with the same multiplication order as vol().
        let lo: f64 = (0..self.dim()).map(|_| scale).product();
        let hi: f64 = (0..self.dim()).map(|_| 2.0 * scale).product();
        let v = b.vol();
        assert!(lo <= v && v < hi, "volume bracket violated: {lo} <= {v} < {hi}");
        Ok(n)
    }
}

impl TryFrom<Vec<f64>> for AxisBox {
    type Error = Error;
    fn try_from(sides: Vec<f64>) -> Result<Self> {
        Self::new(sides)
    }
}

impl From<AxisBox> for Vec<f64> {
    fn from(b: AxisBox) -> Self {
        b.sides
    }
}

impl std::fmt::Display for AxisBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.sides.iter().map(|s| s.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}
