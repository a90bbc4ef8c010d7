//! Isotropic length and face-area scales of a volume, and the log-power
//! convention `log^0 x = 1` used throughout.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleFunctions {
    pub d: usize,
}

impl ScaleFunctions {
    pub fn new(d: usize) -> Self {
        assert!(d >= 1, "dimension must be at least 1");
        Self { d }
    }

    /// `v^(1/d)`.
    pub fn r(&self, v: f64) -> f64 {
        if self.d == 1 {
            v
        } else {
            v.powf(1.0 / self.d as f64)
        }
    }

    /// `v^((d-1)/d)`; identically 1 for `d = 1`.
    pub fn s(&self, v: f64) -> f64 {
        if self.d == 1 {
            1.0
        } else {
            v.powf((self.d - 1) as f64 / self.d as f64)
        }
    }

    /// `ln(s(v))^(d-1)`.
    pub fn log_s_pow(&self, v: f64) -> f64 {
        log_pow(self.s(v), self.d as i32 - 1)
    }
}

/// `ln(x)^k` with `ln(x)^0 = 1` for every `x`, including `x <= 0`.
pub fn log_pow(x: f64, k: i32) -> f64 {
    if k == 0 {
        1.0
    } else {
        x.ln().powi(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_conventions() {
        let sf = ScaleFunctions::new(1);
        assert_eq!(sf.r(16.0), 16.0);
        assert_eq!(sf.s(16.0), 1.0);
        assert_eq!(sf.log_s_pow(16.0), 1.0);
        assert_eq!(log_pow(0.0, 0), 1.0);
        assert_eq!(log_pow(-3.0, 0), 1.0);
    }

    #[test]
    fn two_dimensional_values() {
        let sf = ScaleFunctions::new(2);
        let v = 4f64.exp();
        assert!((sf.r(v) - 2f64.exp()).abs() < 1e-12);
        assert!((sf.s(v) - 2f64.exp()).abs() < 1e-12);
        assert!((sf.log_s_pow(v) - 2.0).abs() < 1e-12);
    }
}
