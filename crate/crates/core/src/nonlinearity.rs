//! Nonlinearities of class `C_P^{k,β}`, their mollifications `F_δ^{(ℓ)} = F^{(ℓ)} ∗ ϱ_δ`,
//! windowed Fourier norms and coupling constants.

use std::sync::OnceLock;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::NdFft;
use crate::geometry::bump1;
use crate::kernel::cutoff;
use crate::quadrature::{gauss_hermite, graded_rule};
use crate::stats::loglog_slope;

/// Shape of a nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearityKind {
    /// `|u|^{2+β}`.
    PowerEven { beta: f64 },
    /// `sign(u)|u|^{3+β}`.
    PowerOdd { beta: f64 },
    /// `Σ c_i u^i`.
    Polynomial { coeffs: Vec<f64> },
    /// Natural cubic spline through `(xs, ys)`, extended linearly.
    Table { xs: Vec<f64>, ys: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub kind: NonlinearityKind,
    /// Smoothness order `k`.
    pub k: u32,
    /// Hölder index of `F^{(k)}`.
    pub beta: f64,
    /// Mollification scale; 0 means none.
    pub delta: f64,
    #[serde(skip)]
    spline: Option<Spline>,
}

/// Builds a nonlinearity and checks its parameters.
pub fn make_nonlinearity(kind: NonlinearityKind) -> Result<NonlinearitySpec> {
    let (k, beta, spline) = match &kind {
        NonlinearityKind::PowerEven { beta } | NonlinearityKind::PowerOdd { beta } => {
            if !(*beta > 0.0 && *beta < 1.0) {
                return Err(Error::InvalidParameter(format!("beta={beta} outside (0,1)")));
            }
            let k = if matches!(kind, NonlinearityKind::PowerEven { .. }) { 2 } else { 3 };
            (k, *beta, None)
        }
        NonlinearityKind::Polynomial { coeffs } => {
            if coeffs.is_empty() {
                return Err(Error::InvalidParameter("empty polynomial".into()));
            }
            (coeffs.len() as u32 + 1, 0.0, None)
        }
        NonlinearityKind::Table { xs, ys } => (2, 1.0 - 1e-9, Some(Spline::new(xs, ys)?)),
    };
    Ok(NonlinearitySpec { kind, k, beta, delta: 0.0, spline })
}

/// `F_δ`: same nonlinearity with mollification scale `delta`.
pub fn mollify(spec: &NonlinearitySpec, delta: f64) -> Result<NonlinearitySpec> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!("delta={delta} outside [0,1)")));
    }
    Ok(NonlinearitySpec { delta, ..spec.clone() })
}

/// Normalizing constant of the mollifier `ϱ = bump / ∫bump`.
fn mollifier_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| graded_rule(-1.0, 1.0, &[], 0.05, 16).integrate(bump1))
}

/// `ϱ(s)`, the normalized bump on `(-1, 1)`.
pub fn mollifier(s: f64) -> f64 {
    bump1(s) / mollifier_mass()
}

/// `ϱ̂(ω) = ∫ ϱ(s) cos(ωs) ds`.
pub fn mollifier_hat(omega: f64) -> f64 {
    let panels = (omega.abs() / 2.0).ceil().max(40.0);
    graded_rule(-1.0, 1.0, &[], 2.0 / panels, 16).integrate(|s| mollifier(s) * (omega * s).cos())
}

fn falling(p: f64, l: u32) -> f64 {
    (0..l).map(|i| p - i as f64).product()
}

/// `ℓ`-th derivative of `sign(u)^{odd} |u|^p`.
fn power_deriv(u: f64, p: f64, odd: bool, l: u32) -> f64 {
    let c = falling(p, l);
    if c == 0.0 {
        return 0.0;
    }
    let a = u.abs();
    let mag = if a == 0.0 {
        if p - (l as f64) > 0.0 {
            0.0
        } else if p - (l as f64) == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a.powf(p - l as f64)
    };
    let odd_now = odd ^ (l % 2 == 1);
    let s = if odd_now && u < 0.0 { -1.0 } else { 1.0 };
    c * mag * s
}

impl NonlinearitySpec {
    /// Points where `F^{(ℓ)}` fails to be smooth; spline nodes are not listed.
    fn kinks(&self) -> Vec<f64> {
        match &self.kind {
            NonlinearityKind::PowerEven { .. } | NonlinearityKind::PowerOdd { .. } => vec![0.0],
            NonlinearityKind::Polynomial { .. } | NonlinearityKind::Table { .. } => vec![],
        }
    }

    /// Unmollified `F^{(ℓ)}(u)`.
    pub fn raw_deriv(&self, u: f64, l: u32) -> f64 {
        match &self.kind {
            NonlinearityKind::PowerEven { beta } => power_deriv(u, 2.0 + beta, false, l),
            NonlinearityKind::PowerOdd { beta } => power_deriv(u, 3.0 + beta, true, l),
            NonlinearityKind::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(l as usize)
                .map(|(i, c)| c * falling(i as f64, l) * u.powi(i as i32 - l as i32))
                .sum(),
            NonlinearityKind::Table { .. } => self.spline.as_ref().map_or(f64::NAN, |s| s.deriv(u, l)),
        }
    }

    /// `F_δ^{(ℓ)}(u)`; equals `F^{(ℓ)}(u)` when `δ = 0`.
    pub fn deriv(&self, u: f64, l: u32) -> f64 {
        if self.delta == 0.0 {
            return self.raw_deriv(u, l);
        }
        let d = self.delta;
        let sing: Vec<f64> = self.kinks().iter().map(|c| (u - c) / d).collect();
        graded_rule(-1.0, 1.0, &sing, 0.05, 16).integrate(|s| self.raw_deriv(u - d * s, l) * mollifier(s))
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.deriv(u, 0)
    }

    /// Growth exponent `M`: log-log slope of `max_{ℓ≤k} sup_{|u|≤R} |F^{(ℓ)}|` against `1+R`.
    pub fn growth_exponent(&self) -> f64 {
        let radii: Vec<f64> = (1..=6).map(|i| 2f64.powi(i)).collect();
        let sups: Vec<f64> = radii
            .iter()
            .map(|r| {
                (0..=200)
                    .map(|i| -r + 2.0 * r * i as f64 / 200.0)
                    .flat_map(|u| (0..=self.k).map(move |l| (u, l)))
                    .map(|(u, l)| self.raw_deriv(u, l).abs())
                    .filter(|v| v.is_finite())
                    .fold(1e-300, f64::max)
            })
            .collect();
        let x: Vec<f64> = radii.iter().map(|r| 1.0 + r).collect();
        loglog_slope(&x, &sups).map_or(0.0, |(s, _)| s.max(0.0))
    }

    /// `sup |F^{(k)}(u+h) − F^{(k)}(u)| / (|h|^β (1+|u|)^M)` over `|u| ≤ r` and `h ∈ hs`.
    pub fn holder_quotient(&self, r: f64, hs: &[f64]) -> f64 {
        let m = self.growth_exponent();
        let mut sup = 0.0f64;
        for i in 0..=400 {
            let u = -r + 2.0 * r * i as f64 / 400.0;
            for h in hs {
                let q = (self.deriv(u + h, self.k) - self.deriv(u, self.k)).abs() / (h.abs().powf(self.beta) * (1.0 + u.abs()).powf(m));
                if q.is_finite() {
                    sup = sup.max(q);
                }
            }
        }
        sup
    }
}

/// Gaussian average `E F_δ^{(ℓ)}(σZ)`, `Z ~ N(0,1)`.
pub fn gaussian_mean(spec: &NonlinearitySpec, l: u32, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2={sigma2} must be positive")));
    }
    let sigma = sigma2.sqrt();
    if matches!(spec.kind, NonlinearityKind::Polynomial { .. }) && spec.delta == 0.0 {
        return Ok(gauss_hermite(40).integrate(|z| spec.deriv(sigma * z, l)));
    }
    // Gaussian weight with graded panels at the kinks.
    let lim = 12.0 * sigma;
    let kinks: Vec<f64> = spec.kinks().into_iter().filter(|c| c.abs() < lim).collect();
    let dens = |x: f64| (-x * x / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).sqrt();
    Ok(graded_rule(-lim, lim, &kinks, 0.1 * sigma, 12).integrate(|x| spec.deriv(x, l) * dens(x)))
}

/// `a = E F^{(order)}(σZ) / order!`.
pub fn coupling_constant(spec: &NonlinearitySpec, sigma2: f64, order: u32) -> Result<f64> {
    if !(2..=3).contains(&order) {
        return Err(Error::InvalidParameter(format!("order={order} must be 2 or 3")));
    }
    Ok(gaussian_mean(spec, order, sigma2)? / falling(order as f64, order))
}

/// `u ↦ F_δ^{(ℓ)}(u)` on `[-radius, radius]`, tabulated by a cubic spline when `δ > 0`.
#[derive(Debug, Clone)]
pub struct DerivTable {
    spec: NonlinearitySpec,
    l: u32,
    radius: f64,
    spline: Option<Spline>,
}

/// Node cap for [`DerivTable`].
const TABLE_MAX_NODES: usize = 1 << 17;

impl DerivTable {
    pub fn new(spec: &NonlinearitySpec, l: u32, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!("radius={radius} must be positive")));
        }
        let spline = if spec.delta > 0.0 {
            let n = ((2.0 * radius * 16.0 / spec.delta).ceil() as usize).clamp(64, TABLE_MAX_NODES);
            let xs: Vec<f64> = (0..=n).map(|i| -radius + 2.0 * radius * i as f64 / n as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|u| spec.deriv(*u, l)).collect();
            Some(Spline::new(&xs, &ys)?)
        } else {
            None
        };
        Ok(Self { spec: spec.clone(), l, radius, spline })
    }

    pub fn eval(&self, u: f64) -> f64 {
        match &self.spline {
            Some(s) if u.abs() <= self.radius => s.deriv(u, 0),
            _ => self.spec.deriv(u, self.l),
        }
    }
}

/// Window probes `ψ(t) = bump(t)·t^j` on `[-1, 1]`, each scaled to unit `B_M` norm.
#[derive(Debug, Clone)]
pub struct ProbeFamily {
    pub m_probe: u32,
    /// Samples on the grid `t_i = -1 + i·dt`.
    samples: Vec<Vec<f64>>,
    dt: f64,
}

const PROBE_POINTS: usize = 1024;

impl ProbeFamily {
    pub fn new(m_probe: u32, size: usize) -> Self {
        let dt = 2.0 / PROBE_POINTS as f64;
        let samples = (0..size)
            .map(|j| {
                let f = |t: f64| bump1(t) * t.powi(j as i32);
                let norm = b_norm(&f, m_probe);
                (0..=PROBE_POINTS).map(|i| f(-1.0 + i as f64 * dt) / norm).collect()
            })
            .collect();
        Self { m_probe, samples, dt }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `sup_{r≤M} sup_t |ψ^{(r)}(t)|` by central differences.
fn b_norm(f: &dyn Fn(f64) -> f64, m: u32) -> f64 {
    let h = 1e-2;
    let mut sup = 0.0f64;
    for i in 0..=2000 {
        let t = -1.0 + 2.0 * i as f64 / 2000.0;
        for r in 0..=m {
            // r-th central difference.
            let v: f64 = (0..=r)
                .map(|j| {
                    let c = binom(r, j) * if j % 2 == 0 { 1.0 } else { -1.0 };
                    c * f(t + (r as f64 / 2.0 - j as f64) * h)
                })
                .sum::<f64>()
                / h.powi(r as i32);
            sup = sup.max(v.abs());
        }
    }
    sup
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

/// Parameters of one windowed-norm evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowNormQuery {
    /// Derivative order per tensor factor.
    pub ell: Vec<u32>,
    /// Window centre `K`; the window is the side-2 cube around it.
    pub center: Vec<i64>,
    pub m_probe: u32,
    /// Mollification scale `δ` (0 = none).
    pub delta: f64,
    /// Evaluate `Υ − Υ_δ` instead of `Υ_δ`.
    #[serde(default)]
    pub difference: bool,
    /// Number of probes.
    #[serde(default = "default_probes")]
    pub probes: usize,
}

fn default_probes() -> usize {
    4
}

/// Near/far split radius for the `x`-space pairing.
const NEAR: f64 = 4.0;
const FFT_LEN: usize = 1 << 18;

/// `|⟨F̂^{(ℓ)}, g⟩| = |∫ F^{(ℓ)}(x) ĝ(x) dx|` for `g(θ) = ψ(θ−K)·m(θ)`, with `ĝ(x) = ∫ g(θ) e^{-iθx} dθ`.
///
/// With `lift = n > 0` the window must avoid `θ = 0`, and the pairing is evaluated as
/// `⟨F̂^{(ℓ+n)}, θ^{-n} g⟩`, which tames the growth of `F^{(ℓ)}` in `x`.
fn pairing(
    spec: &NonlinearitySpec,
    l: u32,
    lift: u32,
    k: f64,
    probe: &[f64],
    dt: f64,
    modulate: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    let g: Vec<f64> = probe
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let theta = k - 1.0 + i as f64 * dt;
            if lift == 0 {
                v * modulate(theta)
            } else if *v == 0.0 {
                0.0
            } else {
                v * modulate(theta) / theta.powi(lift as i32)
            }
        })
        .collect();
    let l = l + lift;
    let ts: Vec<f64> = (0..g.len()).map(|i| -1.0 + i as f64 * dt).collect();
    let ghat = |x: f64| -> Complex<f64> {
        g.iter()
            .zip(&ts)
            .map(|(gv, t)| Complex::from_polar(gv * dt, -(k + t) * x))
            .sum()
    };
    // Near part: F^{(ℓ)} χ with graded panels at the kinks.
    let chi = |x: f64| cutoff(x.abs() / NEAR);
    let mut kinks: Vec<f64> = spec.kinks().into_iter().filter(|c| c.abs() < NEAR).collect();
    kinks.push(0.0);
    let near_rule = graded_rule(-NEAR, NEAR, &kinks, 0.05, 8);
    let near: Complex<f64> = near_rule
        .nodes
        .iter()
        .zip(&near_rule.weights)
        .map(|(x, w)| {
            let f = spec.deriv(*x, l) * chi(*x);
            if f == 0.0 || !f.is_finite() {
                Complex::new(0.0, 0.0)
            } else {
                ghat(*x) * (w * f)
            }
        })
        .sum();
    // Far part: smooth integrand, trapezoid on the DFT grid of ĝ.
    let n = FFT_LEN;
    let dx = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (i, gv) in g.iter().enumerate() {
        buf[i] = Complex::new(gv * dt, 0.0);
    }
    NdFft::new(&[n]).forward(&mut buf);
    let mut far = Complex::new(0.0, 0.0);
    let mut tail = 0.0;
    let half = n / 2;
    for idx in 0..n {
        let kk = if idx < half { idx as i64 } else { idx as i64 - n as i64 };
        let x = kk as f64 * dx;
        let c = 1.0 - chi(x);
        if c == 0.0 {
            continue;
        }
        // Σ_i g_i dt e^{-i t_i x} with t_i = -1 + i dt, then the e^{-iKx} shift.
        let gh = buf[idx] * Complex::from_polar(1.0, x - k * x);
        let term = gh * (spec.deriv(x, l) * c * dx);
        if kk.unsigned_abs() as usize > (9 * half) / 10 {
            tail += term.norm();
        }
        far += term;
    }
    let total = near + far;
    if tail > 1e-8 * total.norm().max(1e-300) {
        return Err(Error::Quadrature(format!("window pairing tail {tail:e} too large; widen the x-range")));
    }
    Ok(total.norm())
}

/// Lower-bound estimate of `‖⊗ F̂_δ^{(ℓ_i)}‖_{M+2, R_K}` (or of the difference with the
/// unmollified norm) as the max over a tensor probe family.
pub fn window_norm(spec: &NonlinearitySpec, q: &WindowNormQuery) -> Result<f64> {
    if q.ell.len() != q.center.len() || q.ell.is_empty() {
        return Err(Error::InvalidParameter("ell and center must have the same positive length".into()));
    }
    let family = ProbeFamily::new(q.m_probe, q.probes);
    window_norm_with(spec, q, &family)
}

pub fn window_norm_with(spec: &NonlinearitySpec, q: &WindowNormQuery, family: &ProbeFamily) -> Result<f64> {
    let base = mollify(spec, 0.0)?;
    let delta = if q.delta > 0.0 { q.delta } else { spec.delta };
    let modulate = |theta: f64| {
        if delta == 0.0 {
            if q.difference {
                0.0
            } else {
                1.0
            }
        } else {
            let m = mollifier_hat(delta * theta);
            if q.difference {
                1.0 - m
            } else {
                m
            }
        }
    };
    let power = matches!(spec.kind, NonlinearityKind::PowerEven { .. } | NonlinearityKind::PowerOdd { .. });
    let mut total = 1.0;
    for (l, k) in q.ell.iter().zip(&q.center) {
        // Away from the origin, lift to the first locally integrable but decaying derivative.
        let lift = if power && *k != 0 && *l <= spec.k { spec.k + 1 - l } else { 0 };
        let mut best = 0.0f64;
        for probe in &family.samples {
            best = best.max(pairing(&base, *l, lift, *k as f64, probe, family.dt, &modulate)?);
        }
        total *= best;
    }
    Ok(total)
}

/// Natural cubic spline with linear extension.
#[derive(Debug, Clone, PartialEq)]
struct Spline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 3 || ys.len() != n || xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("table needs ≥3 strictly increasing nodes".into()));
        }
        // Tridiagonal solve for second derivatives, natural ends.
        let mut m = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            let rhs = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
            c[i] = h1 / diag;
            d[i] = (rhs - h0 * d[i - 1]) / diag;
        }
        for i in (1..n - 1).rev() {
            m[i] = d[i] - c[i] * m[i + 1];
        }
        Ok(Self { xs: xs.to_vec(), ys: ys.to_vec(), m })
    }

    fn deriv(&self, u: f64, l: u32) -> f64 {
        let n = self.xs.len();
        let (x0, xn) = (self.xs[0], self.xs[n - 1]);
        if u < x0 || u > xn {
            let (i, x) = if u < x0 { (0, x0) } else { (n - 2, xn) };
            let slope = self.piece(i, x, 1);
            return match l {
                0 => self.piece(i, x, 0) + slope * (u - x),
                1 => slope,
                _ => 0.0,
            };
        }
        let i = match self.xs.partition_point(|v| *v <= u) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        self.piece(i, u, l)
    }

    fn piece(&self, i: usize, u: f64, l: u32) -> f64 {
        let h = self.xs[i + 1] - self.xs[i];
        let a = self.xs[i + 1] - u;
        let b = u - self.xs[i];
        let (m0, m1, y0, y1) = (self.m[i], self.m[i + 1], self.ys[i], self.ys[i + 1]);
        match l {
            0 => m0 * a.powi(3) / (6.0 * h) + m1 * b.powi(3) / (6.0 * h) + (y0 / h - m0 * h / 6.0) * a + (y1 / h - m1 * h / 6.0) * b,
            1 => -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (y0 / h - m0 * h / 6.0) + (y1 / h - m1 * h / 6.0),
            2 => m0 * a / h + m1 * b / h,
            3 => (m1 - m0) / h,
            _ => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn power_even(beta: f64) -> NonlinearitySpec {
        make_nonlinearity(NonlinearityKind::PowerEven { beta }).unwrap()
    }

    #[test]
    fn power_even_second_derivative() {
        let f = power_even(0.5);
        for u in [-2.0, -0.3, 0.7, 3.0] {
            assert_relative_eq!(f.deriv(u, 2), 2.5 * 1.5 * f64::abs(u).powf(0.5), epsilon = 1e-12);
        }
        assert!(make_nonlinearity(NonlinearityKind::PowerEven { beta: 1.5 }).is_err());
    }

    #[test]
    fn power_odd_is_odd() {
        let g = make_nonlinearity(NonlinearityKind::PowerOdd { beta: 0.5 }).unwrap();
        for i in 0..50 {
            let u = -3.0 + 0.13 * i as f64;
            assert_relative_eq!(g.eval(-u), -g.eval(u), epsilon = 1e-12);
        }
        assert_eq!(g.k, 3);
    }

    #[test]
    fn holder_quotient_is_finite() {
        let f = power_even(0.5);
        let q = f.holder_quotient(4.0, &[1e-1, 1e-2, 1e-3, 1e-4]);
        assert!(q.is_finite() && q > 0.0 && q < 10.0, "{q}");
    }

    #[test]
    fn mollification_of_polynomial() {
        let p = make_nonlinearity(NonlinearityKind::Polynomial { coeffs: vec![0.0, 0.0, 1.0] }).unwrap();
        // (u²) ∗ ϱ_δ = u² + δ² ∫ s² ϱ.
        let second: f64 = graded_rule(-1.0, 1.0, &[], 0.05, 16).integrate(|s| s * s * mollifier(s));
        for d in [0.1, 0.01] {
            let pd = mollify(&p, d).unwrap();
            assert_relative_eq!(pd.eval(0.7), 0.49 + d * d * second, epsilon = 1e-12);
        }
        assert_eq!(mollify(&p, 0.0).unwrap().eval(0.7), p.eval(0.7));
    }

    #[test]
    fn mollified_second_derivative_converges_at_rate_beta() {
        let f = power_even(0.5);
        let mut worst = 0.0f64;
        for d in [0.1, 0.01, 0.001] {
            let fd = mollify(&f, d).unwrap();
            for u in [-1.0, -0.05, 0.0, 0.003, 0.5, 2.0] {
                let diff = (f.deriv(u, 2) - fd.deriv(u, 2)).abs();
                worst = worst.max(diff / (d.powf(0.5) * (1.0 + f64::abs(u)).powf(2.5)));
            }
        }
        assert!(worst < 5.0, "{worst}");
    }

    #[test]
    fn mollifier_is_normalized() {
        let r = graded_rule(-1.0, 1.0, &[], 0.05, 16);
        assert_relative_eq!(r.integrate(mollifier), 1.0, epsilon = 1e-12);
        assert_relative_eq!(mollifier_hat(0.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coupling_constant_examples() {
        let sq = make_nonlinearity(NonlinearityKind::Polynomial { coeffs: vec![0.0, 0.0, 1.0] }).unwrap();
        assert_relative_eq!(coupling_constant(&sq, 0.3, 2).unwrap(), 1.0, epsilon = 1e-12);
        let cube = make_nonlinearity(NonlinearityKind::Polynomial { coeffs: vec![0.0, 0.0, 0.0, 1.0] }).unwrap();
        assert_relative_eq!(coupling_constant(&cube, 2.0, 3).unwrap(), 1.0, epsilon = 1e-12);
        // E|Z|^{1/2} = 2^{1/4} Γ(3/4) / √π.
        let gamma34 = 1.225_416_702_465_177_6;
        let e = 2f64.powf(0.25) * gamma34 / std::f64::consts::PI.sqrt();
        assert_relative_eq!(coupling_constant(&power_even(0.5), 1.0, 2).unwrap(), 0.5 * 2.5 * 1.5 * e, max_relative = 1e-8);
    }

    #[test]
    fn table_spline_reproduces_cubic_interior() {
        let xs: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let t = make_nonlinearity(NonlinearityKind::Table { xs, ys }).unwrap();
        assert_relative_eq!(t.eval(0.33), 0.1089, epsilon = 1e-3);
        assert_relative_eq!(t.deriv(0.33, 1), 0.66, epsilon = 1e-2);
    }

    #[test]
    fn window_norm_monotone_in_family() {
        let f = power_even(0.5);
        let q = WindowNormQuery { ell: vec![2], center: vec![4], m_probe: 2, delta: 0.0, difference: false, probes: 2 };
        let small = window_norm(&f, &q).unwrap();
        let large = window_norm(&f, &WindowNormQuery { probes: 4, ..q }).unwrap();
        assert!(large >= small && small > 0.0);
    }

    #[test]
    fn gaussian_like_window_norm_decays_fast() {
        // F(u) = u² e^{-u²}, tabulated finely: smooth and rapidly decaying.
        let xs: Vec<f64> = (0..=1600).map(|i| -8.0 + 0.01 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * (-x * x).exp()).collect();
        let t = make_nonlinearity(NonlinearityKind::Table { xs, ys }).unwrap();
        let q = |k| WindowNormQuery { ell: vec![0], center: vec![k], m_probe: 2, delta: 0.0, difference: false, probes: 2 };
        let a = window_norm(&t, &q(2)).unwrap();
        let b = window_norm(&t, &q(8)).unwrap();
        assert!(b < 1e-4 * a, "{a} {b}");
    }
}
