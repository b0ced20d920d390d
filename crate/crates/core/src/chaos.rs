//! Wick powers, chaos coefficients of `cos(θZ)` / `sin(θZ)`, chaos truncation and the
//! analytic θ-derivatives of the two-point functional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    Cos,
    Sin,
}

impl Trig {
    /// `trig(u + q·π/2)`.
    #[inline]
    pub fn shifted(self, u: f64, q: u32) -> f64 {
        let q = match self {
            Trig::Cos => q,
            Trig::Sin => q + 3,
        } % 4;
        match q {
            0 => u.cos(),
            1 => -u.sin(),
            2 => -u.cos(),
            _ => u.sin(),
        }
    }

    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Trig::Cos => u.cos(),
            Trig::Sin => u.sin(),
        }
    }

    /// Chaos orders carried by `trig(θZ)` have this parity.
    pub fn parity(self) -> u32 {
        match self {
            Trig::Cos => 0,
            Trig::Sin => 1,
        }
    }
}

/// `Z^{⋄k} = σ^k He_k(Z/σ)` by the three-term recurrence `P_{k+1} = x P_k - k σ² P_{k-1}`.
pub fn wick_power(x: f64, k: u32, sigma2: f64) -> f64 {
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = x;
    for j in 1..k {
        let next = x * cur - j as f64 * sigma2 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// All Wick powers `Z^{⋄0..=k_max}`.
pub fn wick_powers(x: f64, k_max: u32, sigma2: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_max as usize + 1);
    out.push(1.0);
    if k_max >= 1 {
        out.push(x);
    }
    for j in 1..k_max as usize {
        let next = x * out[j] - j as f64 * sigma2 * out[j - 1];
        out.push(next);
    }
    out
}

/// Signed log-magnitude of a real number; `sign == 0` encodes zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogValue {
    pub log_mag: f64,
    pub sign: i8,
}

impl LogValue {
    pub const ZERO: LogValue = LogValue { log_mag: f64::NEG_INFINITY, sign: 0 };

    pub fn value(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            self.sign as f64 * self.log_mag.exp()
        }
    }
}

pub(crate) fn ln_factorial(k: u32) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}

/// Coefficient of `Z^{⋄k}` in `trig(θZ)`, `Z ~ N(0, σ²)`, in log form.
pub fn trig_chaos_log_coeff(trig: Trig, k: u32, theta: f64, sigma2: f64) -> LogValue {
    if k % 2 != trig.parity() {
        return LogValue::ZERO;
    }
    if theta == 0.0 {
        return if k == 0 { LogValue { log_mag: 0.0, sign: 1 } } else { LogValue::ZERO };
    }
    let half = match trig {
        Trig::Cos => k / 2,
        Trig::Sin => (k - 1) / 2,
    };
    let mut sign: i8 = if half % 2 == 0 { 1 } else { -1 };
    if theta < 0.0 && k % 2 == 1 {
        sign = -sign;
    }
    LogValue {
        log_mag: -0.5 * theta * theta * sigma2 + k as f64 * theta.abs().ln() - ln_factorial(k),
        sign,
    }
}

pub fn trig_chaos_coeff(trig: Trig, k: u32, theta: f64, sigma2: f64) -> f64 {
    trig_chaos_log_coeff(trig, k, theta, sigma2).value()
}

/// `∂_θ^r` of the chaos coefficient `c_k(θ) = s_k θ^k e^{-θ²σ²/2} / k!`.
///
/// The derivative is `P_r(θ) e^{-θ²σ²/2}` with `P_0 = s_k θ^k / k!` and
/// `P_{r+1} = P_r' - σ² θ P_r`.
pub fn trig_chaos_coeff_deriv(trig: Trig, k: u32, theta: f64, sigma2: f64, r: u32) -> f64 {
    if k % 2 != trig.parity() {
        return 0.0;
    }
    if r == 0 {
        return trig_chaos_coeff(trig, k, theta, sigma2);
    }
    let half = match trig {
        Trig::Cos => k / 2,
        Trig::Sin => (k - 1) / 2,
    };
    let sign = if half % 2 == 0 { 1.0 } else { -1.0 };
    let mut poly = vec![0.0; k as usize + 1];
    poly[k as usize] = 1.0;
    for _ in 0..r {
        let mut next = vec![0.0; poly.len() + 1];
        for (j, c) in poly.iter().enumerate() {
            if j > 0 {
                next[j - 1] += j as f64 * c;
            }
            next[j + 1] -= sigma2 * c;
        }
        poly = next;
    }
    let p: f64 = poly.iter().rev().fold(0.0, |acc, c| acc * theta + c);
    if p == 0.0 {
        return 0.0;
    }
    let log = -0.5 * theta * theta * sigma2 + p.abs().ln() - ln_factorial(k);
    sign * p.signum() * log.exp()
}

/// Truncation `T_{(m-1)}`: orders `< m` removed from `trig(θZ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChaosTruncSpec {
    pub trig: Trig,
    pub m: u32,
}

impl ChaosTruncSpec {
    /// Rejects `m` of the wrong parity (odd for sin, even for cos).
    pub fn new(trig: Trig, m: u32) -> Result<Self> {
        let spec = Self { trig, m };
        if !spec.parity_ok() {
            return Err(Error::InvalidParameter(format!(
                "truncation order m={m} has the wrong parity for {trig:?}"
            )));
        }
        Ok(spec)
    }

    /// Canonical spec for a truncation order: sin when odd, cos when even.
    pub fn for_order(m: u32) -> Self {
        Self { trig: if m % 2 == 1 { Trig::Sin } else { Trig::Cos }, m }
    }

    pub fn parity_ok(&self) -> bool {
        self.m % 2 == self.trig.parity()
    }
}

pub fn truncated_trig(x: f64, theta: f64, spec: &ChaosTruncSpec, sigma2: f64) -> f64 {
    truncated_trig_deriv(x, theta, spec, sigma2, 0)
}

/// `∂_θ^r T_{(m-1)}(trig(θ x))`.
pub fn truncated_trig_deriv(x: f64, theta: f64, spec: &ChaosTruncSpec, sigma2: f64, r: u32) -> f64 {
    let head = x.powi(r as i32) * spec.trig.shifted(theta * x, r);
    if spec.m == 0 {
        return head;
    }
    let powers = wick_powers(x, spec.m - 1, sigma2);
    let mut low = 0.0;
    for k in (spec.trig.parity()..spec.m).step_by(2) {
        low += trig_chaos_coeff_deriv(spec.trig, k, theta, sigma2, r) * powers[k as usize];
    }
    head - low
}

/// `∂_θ^r ∂_Z^n T_{(m-1)}(trig(θ z))`.
pub fn truncated_trig_partial(z: f64, theta: f64, spec: &ChaosTruncSpec, sigma2: f64, r: u32, n: u32) -> f64 {
    // ∂_z^n trig(θz) = θ^n trig(θz + nπ/2); then Leibniz in θ.
    let mut head = 0.0;
    let mut binom = 1.0;
    let mut falling = 1.0;
    for i in 0..=r.min(n) {
        if i > 0 {
            binom *= (r - i + 1) as f64 / i as f64;
            falling *= (n - i + 1) as f64;
        }
        head += binom
            * falling
            * theta.powi((n - i) as i32)
            * z.powi((r - i) as i32)
            * spec.trig.shifted(theta * z, n + r - i);
    }
    if spec.m == 0 || n >= spec.m {
        return head;
    }
    let powers = wick_powers(z, spec.m - 1, sigma2);
    let mut low = 0.0;
    for k in (spec.trig.parity()..spec.m).step_by(2) {
        if k < n {
            continue;
        }
        let falling_k: f64 = ((k - n + 1)..=k).map(|j| j as f64).product();
        low += trig_chaos_coeff_deriv(spec.trig, k, theta, sigma2, r) * falling_k * powers[(k - n) as usize];
    }
    head - low
}

/// `F(Θ, x, y) = T_{(m1-1)}(trig(θx X)) · T_{(m2-1)}(trig(θy Y))` and its `∂_Θ^r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointFunctional {
    pub spec_x: ChaosTruncSpec,
    pub spec_y: ChaosTruncSpec,
    pub theta: [f64; 2],
    pub deriv: [u32; 2],
}

/// Largest supported derivative order per frequency.
pub const MAX_DERIV: u32 = 8;

impl TwoPointFunctional {
    pub fn new(spec_x: ChaosTruncSpec, spec_y: ChaosTruncSpec, theta: [f64; 2], deriv: [u32; 2]) -> Result<Self> {
        if !spec_x.parity_ok() || !spec_y.parity_ok() {
            return Err(Error::InvalidParameter("chaos truncation parity violated".into()));
        }
        if deriv.iter().any(|r| *r > MAX_DERIV) {
            return Err(Error::InvalidParameter(format!("derivative order above {MAX_DERIV}")));
        }
        Ok(Self { spec_x, spec_y, theta, deriv })
    }

    pub fn with_theta(mut self, theta: [f64; 2]) -> Self {
        self.theta = theta;
        self
    }

    #[inline]
    pub fn factor_x(&self, x: f64, sigma2: f64) -> f64 {
        truncated_trig_deriv(x, self.theta[0], &self.spec_x, sigma2, self.deriv[0])
    }

    #[inline]
    pub fn factor_y(&self, y: f64, sigma2: f64) -> f64 {
        truncated_trig_deriv(y, self.theta[1], &self.spec_y, sigma2, self.deriv[1])
    }

    pub fn eval(&self, x: f64, y: f64, sigma2x: f64, sigma2y: f64) -> f64 {
        self.factor_x(x, sigma2x) * self.factor_y(y, sigma2y)
    }
}

pub fn eval_functional(f: &TwoPointFunctional, x: f64, y: f64, sigma2x: f64, sigma2y: f64) -> f64 {
    f.eval(x, y, sigma2x, sigma2y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wick_power_examples() {
        assert_relative_eq!(wick_power(2.0, 2, 1.0), 3.0);
        assert_relative_eq!(wick_power(2.0, 2, 4.0), 0.0);
        assert_relative_eq!(wick_power(1.0, 3, 1.0), -2.0);
        assert_eq!(wick_powers(1.3, 5, 0.7)[5], wick_power(1.3, 5, 0.7));
    }

    #[test]
    fn coefficient_examples() {
        assert_relative_eq!(trig_chaos_coeff(Trig::Cos, 0, 1.0, 1.0), 0.606_530_659_712_633_4, epsilon = 1e-15);
        assert_eq!(trig_chaos_coeff(Trig::Cos, 1, 3.0, 2.0), 0.0);
        assert_eq!(trig_chaos_coeff(Trig::Sin, 1, 0.0, 1.0), 0.0);
        assert_eq!(trig_chaos_coeff(Trig::Sin, 3, 1e3, 1.0), 0.0);
        let lv = trig_chaos_log_coeff(Trig::Sin, 3, 1e3, 1.0);
        assert_eq!(lv.sign, -1);
        assert!(lv.log_mag < -4.9e5);
    }

    #[test]
    fn truncation_examples() {
        let cos2 = ChaosTruncSpec::new(Trig::Cos, 2).unwrap();
        assert_relative_eq!(truncated_trig(0.8, 0.0, &cos2, 1.0), 0.0, epsilon = 1e-15);
        let sin1 = ChaosTruncSpec::new(Trig::Sin, 1).unwrap();
        assert_relative_eq!(truncated_trig(0.8, 2.0, &sin1, 1.0), (1.6f64).sin());
        assert!(ChaosTruncSpec::new(Trig::Sin, 2).is_err());
        assert!(ChaosTruncSpec::new(Trig::Cos, 1).is_err());
    }

    #[test]
    fn functional_examples() {
        let f = TwoPointFunctional::new(
            ChaosTruncSpec::for_order(1),
            ChaosTruncSpec::for_order(2),
            [0.0, 0.0],
            [0, 0],
        )
        .unwrap();
        assert_eq!(f.eval(0.3, -0.4, 1.0, 1.0), 0.0);
        let g = f.with_theta([0.7, 1.3]);
        let prod = truncated_trig(0.3, 0.7, &g.spec_x, 0.9) * truncated_trig(-0.4, 1.3, &g.spec_y, 1.1);
        assert_relative_eq!(g.eval(0.3, -0.4, 0.9, 1.1), prod, epsilon = 1e-15);
    }

    #[test]
    fn first_derivative_matches_central_difference() {
        let base = TwoPointFunctional::new(
            ChaosTruncSpec::for_order(3),
            ChaosTruncSpec::for_order(2),
            [0.7, 1.1],
            [0, 0],
        )
        .unwrap();
        let d = TwoPointFunctional { deriv: [1, 0], ..base };
        let h = 1e-4;
        let fd = (base.with_theta([0.7 + h, 1.1]).eval(0.9, -0.6, 0.8, 1.2)
            - base.with_theta([0.7 - h, 1.1]).eval(0.9, -0.6, 0.8, 1.2))
            / (2.0 * h);
        assert!((d.eval(0.9, -0.6, 0.8, 1.2) - fd).abs() < 1e-6);
    }

    #[test]
    fn coefficient_derivative_matches_difference() {
        for trig in [Trig::Cos, Trig::Sin] {
            for k in 0..6 {
                let h = 1e-5;
                let fd = (trig_chaos_coeff(trig, k, 1.3 + h, 0.7) - trig_chaos_coeff(trig, k, 1.3 - h, 0.7)) / (2.0 * h);
                assert!((trig_chaos_coeff_deriv(trig, k, 1.3, 0.7, 1) - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn partial_in_z_matches_difference() {
        let spec = ChaosTruncSpec::for_order(3);
        let h = 1e-5;
        for r in 0..3 {
            let fd = (truncated_trig_partial(0.4 + h, 1.7, &spec, 0.9, r, 0)
                - truncated_trig_partial(0.4 - h, 1.7, &spec, 0.9, r, 0))
                / (2.0 * h);
            assert!((truncated_trig_partial(0.4, 1.7, &spec, 0.9, r, 1) - fd).abs() < 1e-7);
            assert_relative_eq!(
                truncated_trig_partial(0.4, 1.7, &spec, 0.9, r, 0),
                truncated_trig_deriv(0.4, 1.7, &spec, 0.9, r),
                epsilon = 1e-14
            );
        }
    }
}
