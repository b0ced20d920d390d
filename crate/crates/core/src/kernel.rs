//! Singular kernel `K₀`, its Taylor-renormalized form `K` and the region bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScalingGeometry;
use crate::rng::stream;
use crate::stats::loglog_slope;

/// Largest supported Taylor order.
pub const MAX_RE: u32 = 2;

/// `⌈γ − α m₂ / 2⌉ ∨ 0`.
pub fn compute_re(gamma: f64, alpha: f64, m2: u32) -> u32 {
    let v = gamma - alpha * m2 as f64 / 2.0;
    let c = (v - 1e-12).ceil();
    if c <= 0.0 {
        0
    } else {
        c as u32
    }
}

/// Smooth cutoff: 1 on `[0, 1/2]`, 0 on `[1, ∞)`.
pub fn cutoff(t: f64) -> f64 {
    if t <= 0.5 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let u = 2.0 * t - 1.0;
    let f = |v: f64| if v <= 0.0 { 0.0 } else { (-1.0 / v).exp() };
    let a = f(1.0 - u);
    a / (a + f(u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelProfile {
    /// `χ(|x|/c) |x|^{-(|s|-γ)}`.
    Power,
    /// `χ(|x|/c) |x|^{-(|s|-γ)} exp(-|x|²)`, a heat-kernel-like profile with the same singularity.
    Damped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormKernel {
    gamma: f64,
    geometry: ScalingGeometry,
    re: u32,
    cutoff: f64,
    profile: KernelProfile,
}

impl RenormKernel {
    /// Kernel with `r_e` derived from `(γ, α, m₂)`.
    pub fn new(gamma: f64, alpha: f64, m2: u32, geometry: ScalingGeometry) -> Result<Self> {
        Self::with_re(gamma, compute_re(gamma, alpha, m2), geometry)
    }

    /// Kernel with an explicit Taylor order.
    pub fn with_re(gamma: f64, re: u32, geometry: ScalingGeometry) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= geometry.total() / 2.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "gamma={gamma} outside (0, |s|/2] with |s|={}",
                geometry.total()
            )));
        }
        if re > MAX_RE {
            return Err(Error::InvalidParameter(format!("r_e={re} exceeds {MAX_RE}")));
        }
        Ok(Self { gamma, geometry, re, cutoff: 1.0, profile: KernelProfile::Power })
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_profile(mut self, profile: KernelProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn re(&self) -> u32 {
        self.re
    }

    pub fn geometry(&self) -> &ScalingGeometry {
        &self.geometry
    }

    pub fn cutoff_radius(&self) -> f64 {
        self.cutoff
    }

    /// Singularity exponent `|s| − γ`.
    pub fn beta(&self) -> f64 {
        self.geometry.total() - self.gamma
    }

    fn smooth_part(&self, x: &[f64]) -> f64 {
        let r = self.geometry.metric_unchecked(x);
        let c = cutoff(r / self.cutoff);
        match self.profile {
            KernelProfile::Power => c,
            KernelProfile::Damped => c * (-x.iter().map(|v| v * v).sum::<f64>()).exp(),
        }
    }

    /// `K₀(x)`; `+∞` at the origin.
    pub fn k0(&self, x: &[f64]) -> f64 {
        let r = self.geometry.metric_unchecked(x);
        if r == 0.0 {
            return f64::INFINITY;
        }
        if r >= self.cutoff {
            return 0.0;
        }
        self.smooth_part(x) * r.powf(-self.beta())
    }

    /// `∂_i K₀(x)`: the power part differentiated exactly, the cutoff part by central differences.
    pub fn dk0(&self, x: &[f64], i: usize) -> f64 {
        let g = &self.geometry;
        let r = g.metric_unchecked(x);
        if r == 0.0 {
            return f64::INFINITY;
        }
        if r >= self.cutoff {
            return 0.0;
        }
        let beta = self.beta();
        let s = g.s();
        let arg = (0..x.len())
            .max_by(|a, b| x[*a].abs().powf(1.0 / s[*a]).total_cmp(&x[*b].abs().powf(1.0 / s[*b])))
            .unwrap_or(0);
        let dr = if arg == i {
            x[i].signum() * x[i].abs().powf(1.0 / s[i] - 1.0) / s[i]
        } else {
            0.0
        };
        let power = r.powf(-beta);
        let dpower = -beta * r.powf(-beta - 1.0) * dr;
        let h = 1e-4 * self.cutoff;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let dsmooth = (self.smooth_part(&xp) - self.smooth_part(&xm)) / (2.0 * h);
        dsmooth * power + self.smooth_part(x) * dpower
    }

    /// `K(x, y) = K₀(x−y) − Σ_{|j|<r_e} x^j/j! D^jK₀(−y)`; `+∞` when a needed evaluation is singular.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let mut v = self.k0(&d);
        if self.re == 0 || !v.is_finite() {
            return v;
        }
        let my: Vec<f64> = y.iter().map(|v| -v).collect();
        let base = self.k0(&my);
        if !base.is_finite() {
            return f64::INFINITY;
        }
        v -= base;
        if self.re >= 2 {
            for (i, xi) in x.iter().enumerate() {
                if *xi != 0.0 {
                    v -= xi * self.dk0(&my, i);
                }
            }
        }
        v
    }

    /// Bound expression of the region containing `(x, y)`, with the region index.
    pub fn region_bound(&self, x: &[f64], y: &[f64]) -> (usize, f64) {
        let g = &self.geometry;
        let beta = self.beta();
        let dist = g.distance(x, y);
        if self.re == 0 {
            return (1, dist.powf(-beta));
        }
        let ax = g.metric_unchecked(x);
        let ay = g.metric_unchecked(y);
        let re = self.re as f64;
        if ay > 2.0 * ax {
            (0, ax.powf(re) * ay.powf(-(beta + re)))
        } else if ay > ax / 2.0 {
            (1, dist.powf(-beta))
        } else {
            (2, ax.powf(re - 1.0) * ay.powf(-(beta + re - 1.0)))
        }
    }
}

pub fn eval_k0(x: &[f64], k: &RenormKernel) -> f64 {
    k.k0(x)
}

pub fn eval_k(x: &[f64], y: &[f64], k: &RenormKernel) -> f64 {
    k.eval(x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStat {
    pub region: String,
    pub samples: u64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub re: u32,
    pub regions: Vec<RegionStat>,
    /// Largest factor between the two bounds adjacent to `|y| = 2|x|` at sampled points.
    pub boundary_factor: f64,
}

const REGION_NAMES: [&str; 3] = ["far", "comparable", "near"];

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn random_point(rng: &mut impl Rng, g: &ScalingGeometry, radius: f64) -> Vec<f64> {
    let d = g.dim();
    let lead = rng.random_range(0..d);
    g.s()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let w = radius.powf(*s);
            let v = if i == lead { w } else { rng.random_range(0.0..=w) };
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Samples `(x, y)` with log-uniform norms in `[1e-4, 0.5]` and reports per region the
/// largest `|K| / bound`.
pub fn check_region_bounds(k: &RenormKernel, n_samples: u64, seed: u64) -> BoundReport {
    let g = k.geometry();
    let mut rng = stream(seed, 0);
    let mut stats: Vec<RegionStat> = if k.re() == 0 {
        vec![RegionStat { region: "single".into(), samples: 0, max_ratio: 0.0 }]
    } else {
        REGION_NAMES.iter().map(|n| RegionStat { region: (*n).into(), samples: 0, max_ratio: 0.0 }).collect()
    };
    let mut boundary_factor: f64 = 1.0;
    for _ in 0..n_samples {
        let rx = log_uniform(&mut rng, 1e-4, 0.5);
        let x = random_point(&mut rng, g, rx);
        let ry = log_uniform(&mut rng, 1e-4, 0.5);
        let y = random_point(&mut rng, g, ry);
        let kv = k.eval(&x, &y);
        if !kv.is_finite() {
            continue;
        }
        let (region, bound) = k.region_bound(&x, &y);
        let slot = if k.re() == 0 { 0 } else { region };
        stats[slot].samples += 1;
        stats[slot].max_ratio = stats[slot].max_ratio.max(kv.abs() / bound);
        if k.re() >= 1 {
            let yb: Vec<f64> = g.dilate(&x, 2.0).iter().map(|v| -v).collect();
            let beta = k.beta();
            let re = k.re() as f64;
            let axv = g.metric_unchecked(&x);
            let ayv = g.metric_unchecked(&yb);
            let far = axv.powf(re) * ayv.powf(-(beta + re));
            let mid = g.distance(&x, &yb).powf(-beta);
            boundary_factor = boundary_factor.max((far / mid).max(mid / far));
        }
    }
    BoundReport { re: k.re(), regions: stats, boundary_factor }
}

/// Log-log slope of `|K(t e, y)|` against `t` for `t ∈ [1e-4, 1e-2]·|y|` along `e`.
pub fn taylor_slope(k: &RenormKernel, y: &[f64], direction: &[f64]) -> Option<f64> {
    let g = k.geometry();
    let ay = g.metric_unchecked(y);
    let ts: Vec<f64> = (0..9).map(|i| ay * 10f64.powf(-4.0 + 0.25 * i as f64)).collect();
    let vals: Vec<f64> = ts
        .iter()
        .map(|t| {
            let x: Vec<f64> = direction.iter().map(|e| e * t).collect();
            k.eval(&x, y).abs()
        })
        .collect();
    if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    loglog_slope(&ts, &vals).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k1(re: u32) -> RenormKernel {
        RenormKernel::with_re(0.4, re, ScalingGeometry::euclidean(1)).unwrap()
    }

    #[test]
    fn re_examples() {
        assert_eq!(compute_re(2.0, 1.0, 3), 1);
        assert_eq!(compute_re(0.3, 0.6, 1), 0);
        assert_eq!(compute_re(0.5, 0.2, 1), 1);
        assert_eq!(compute_re(1.0, 1.0, 2), 0);
    }

    #[test]
    fn k0_examples() {
        let k = k1(0);
        assert_eq!(k.k0(&[1.0]), 0.0);
        assert_eq!(k.k0(&[1.5]), 0.0);
        assert_relative_eq!(k.k0(&[0.25]), 0.25f64.powf(-0.6), epsilon = 1e-14);
        assert_relative_eq!(k.k0(&[0.25]), 2.297_396_709_994_07, epsilon = 1e-12);
        assert_relative_eq!(k.k0(&[0.1]) / k.k0(&[0.2]), 2f64.powf(0.6), epsilon = 1e-14);
        assert_eq!(k.k0(&[0.0]), f64::INFINITY);
    }

    #[test]
    fn renormalized_examples() {
        let k = k1(0);
        assert_relative_eq!(k.eval(&[0.1], &[0.3]), k.k0(&[-0.2]), epsilon = 1e-14);
        let k = k1(1);
        assert_eq!(k.eval(&[0.0], &[0.3]), 0.0);
        assert_relative_eq!(k.eval(&[0.1], &[0.3]), k.k0(&[-0.2]) - k.k0(&[-0.3]), epsilon = 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let k = k1(2);
        for x in [-0.7, -0.3, 0.05, 0.2, 0.6, 0.9] {
            let h = 1e-6;
            let fd = (k.k0(&[x + h]) - k.k0(&[x - h])) / (2.0 * h);
            assert_relative_eq!(k.dk0(&[x], 0), fd, max_relative = 1e-5, epsilon = 1e-6);
        }
    }

    #[test]
    fn cutoff_is_smooth_step() {
        assert_eq!(cutoff(0.3), 1.0);
        assert_eq!(cutoff(1.0), 0.0);
        assert_relative_eq!(cutoff(0.75), 0.5, epsilon = 1e-15);
        let mut prev = 1.0;
        for i in 0..=100 {
            let c = cutoff(0.5 + 0.005 * i as f64);
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn single_bound_is_equality_inside_plateau() {
        let r = check_region_bounds(&k1(0), 10_000, 1);
        assert!(r.regions[0].max_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn taylor_slopes() {
        for re in 0..=2 {
            let s = taylor_slope(&k1(re), &[0.3], &[1.0]).unwrap();
            assert!(s >= re as f64 - 0.05, "re={re} slope={s}");
        }
    }
}
