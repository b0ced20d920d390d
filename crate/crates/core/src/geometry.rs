//! Anisotropic scaling, the induced sup-metric, lattices and rescaled test functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scaling vector `s` with `|s| = sum s_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingGeometry {
    s: Vec<f64>,
    total: f64,
}

impl ScalingGeometry {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidParameter("scaling needs at least one axis".into()));
        }
        if let Some(bad) = s.iter().find(|v| !(**v >= 1.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("scaling exponent {bad} must be >= 1")));
        }
        let total = s.iter().sum();
        Ok(Self { s, total })
    }

    /// Isotropic scaling in `d` dimensions.
    pub fn euclidean(d: usize) -> Self {
        Self::new(vec![1.0; d.max(1)]).expect("unit scaling is valid")
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    /// Effective dimension `|s|`.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn metric(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.metric_unchecked(x))
    }

    /// `sup_i |x_i|^{1/s_i}`; callers guarantee `x.len() == d`.
    #[inline]
    pub fn metric_unchecked(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.s)
            .map(|(xi, si)| if *si == 1.0 { xi.abs() } else { xi.abs().powf(1.0 / si) })
            .fold(0.0, f64::max)
    }

    #[inline]
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .zip(&self.s)
            .map(|((a, b), si)| {
                let d = (a - b).abs();
                if *si == 1.0 { d } else { d.powf(1.0 / si) }
            })
            .fold(0.0, f64::max)
    }

    /// Dilation `x_i -> scale^{s_i} x_i`.
    pub fn dilate(&self, x: &[f64], scale: f64) -> Vec<f64> {
        x.iter().zip(&self.s).map(|(xi, si)| scale.powf(*si) * xi).collect()
    }

    /// Volume of the metric ball of radius `r`, i.e. the box `prod [-r^{s_i}, r^{s_i}]`.
    pub fn ball_volume(&self, r: f64) -> f64 {
        2f64.powi(self.dim() as i32) * r.powf(self.total)
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }
}

pub fn metric(x: &[f64], g: &ScalingGeometry) -> Result<f64> {
    g.metric(x)
}

/// Default point budget for [`build_lattice`].
pub const DEFAULT_POINT_BUDGET: usize = 1 << 24;

/// Symmetric lattice `{k_i h^{s_i} : |k_i| <= K_i}` covering `prod [-extent_i, extent_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    geometry: ScalingGeometry,
    base_step: f64,
    extent: Vec<f64>,
    steps: Vec<f64>,
    half_counts: Vec<usize>,
}

impl Lattice {
    pub fn geometry(&self) -> &ScalingGeometry {
        &self.geometry
    }

    pub fn base_step(&self) -> f64 {
        self.base_step
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    /// Per-axis spacing `h^{s_i}`.
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Points per axis.
    pub fn shape(&self) -> Vec<usize> {
        self.half_counts.iter().map(|k| 2 * k + 1).collect()
    }

    pub fn half_counts(&self) -> &[usize] {
        &self.half_counts
    }

    pub fn len(&self) -> usize {
        self.half_counts.iter().map(|k| 2 * k + 1).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.steps.iter().product()
    }

    /// Signed per-axis integer offsets of the flat row-major index.
    pub fn offsets(&self, mut index: usize) -> Vec<i64> {
        let shape = self.shape();
        let mut out = vec![0i64; shape.len()];
        for axis in (0..shape.len()).rev() {
            let n = shape[axis];
            out[axis] = (index % n) as i64 - self.half_counts[axis] as i64;
            index /= n;
        }
        out
    }

    /// Flat row-major index of integer offsets, if inside the lattice.
    pub fn index_of(&self, offsets: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for (axis, &o) in offsets.iter().enumerate() {
            let k = self.half_counts[axis] as i64;
            if o < -k || o > k {
                return None;
            }
            idx = idx * (2 * k as usize + 1) + (o + k) as usize;
        }
        Some(idx)
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.offsets(index)
            .iter()
            .zip(&self.steps)
            .map(|(k, h)| *k as f64 * h)
            .collect()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Index of the origin.
    pub fn origin(&self) -> usize {
        self.index_of(&vec![0; self.geometry.dim()]).expect("origin lies on the lattice")
    }

    /// Same box, same geometry, step `h / 2`.
    pub fn refined(&self) -> Result<Lattice> {
        build_lattice_with_budget(&self.geometry, self.base_step / 2.0, &self.extent, usize::MAX)
    }
}

pub fn build_lattice(g: &ScalingGeometry, h: f64, extent: &[f64]) -> Result<Lattice> {
    build_lattice_with_budget(g, h, extent, DEFAULT_POINT_BUDGET)
}

pub fn build_lattice_with_budget(
    g: &ScalingGeometry,
    h: f64,
    extent: &[f64],
    budget: usize,
) -> Result<Lattice> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("lattice step {h} must be positive")));
    }
    g.check_dim(extent)?;
    if extent.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidParameter("extent must be positive on every axis".into()));
    }
    let steps: Vec<f64> = g.s().iter().map(|s| h.powf(*s)).collect();
    let half_counts: Vec<usize> = extent
        .iter()
        .zip(&steps)
        .map(|(e, st)| (e / st + 1e-9).floor() as usize)
        .collect();
    let needed = half_counts
        .iter()
        .try_fold(1usize, |acc, k| acc.checked_mul(2 * k + 1))
        .unwrap_or(usize::MAX);
    if needed > budget {
        return Err(Error::PointBudget { needed, budget });
    }
    Ok(Lattice {
        geometry: g.clone(),
        base_step: h,
        extent: extent.to_vec(),
        steps,
        half_counts,
    })
}

/// Bump profile on the unit sup-ball, normalized to sup 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `prod_i exp(1 - 1/(1 - u_i^2))`.
    #[default]
    Bump,
    /// Identically zero, used as a null probe.
    Zero,
}

impl Profile {
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Bump => u.iter().map(|v| bump1(*v)).product(),
        }
    }
}

/// One-dimensional bump `exp(1 - 1/(1 - u^2))` on `(-1, 1)`.
#[inline]
pub fn bump1(u: f64) -> f64 {
    let q = 1.0 - u * u;
    if q <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / q).exp()
    }
}

/// `phi^lambda_z(y) = lambda^{-|s|} phi((y_i - z_i) / lambda^{s_i})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub profile: Profile,
    pub center: Vec<f64>,
    pub scale: f64,
}

impl TestFunction {
    pub fn new(center: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidParameter(format!("test function scale {scale} outside (0,1]")));
        }
        Ok(Self { profile: Profile::Bump, center, scale })
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        self
    }

    pub fn eval(&self, g: &ScalingGeometry, y: &[f64]) -> Result<f64> {
        g.check_dim(y)?;
        g.check_dim(&self.center)?;
        Ok(self.eval_unchecked(g, y))
    }

    #[inline]
    pub fn eval_unchecked(&self, g: &ScalingGeometry, y: &[f64]) -> f64 {
        let lam = self.scale;
        let mut u = [0.0f64; 8];
        let d = g.dim();
        let mut buf = Vec::new();
        let u: &mut [f64] = if d <= 8 {
            &mut u[..d]
        } else {
            buf.resize(d, 0.0);
            &mut buf
        };
        for i in 0..d {
            let r = lam.powf(g.s()[i]);
            u[i] = (y[i] - self.center[i]) / r;
            if u[i].abs() >= 1.0 {
                return 0.0;
            }
        }
        lam.powf(-g.total()) * self.profile.eval(u)
    }
}

pub fn eval_test_function(tf: &TestFunction, g: &ScalingGeometry, y: &[f64]) -> Result<f64> {
    tf.eval(g, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn metric_examples() {
        let g = ScalingGeometry::new(vec![2.0, 1.0]).unwrap();
        assert_relative_eq!(g.metric(&[4.0, 3.0]).unwrap(), 3.0);
        let g1 = ScalingGeometry::euclidean(1);
        assert_relative_eq!(g1.metric(&[-0.5]).unwrap(), 0.5);
        let g4 = ScalingGeometry::new(vec![2.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(g4.metric(&[0.0; 4]).unwrap(), 0.0);
        assert!(matches!(g.metric(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn scaling_rejects_small_exponents() {
        assert!(ScalingGeometry::new(vec![0.5]).is_err());
        assert!(ScalingGeometry::new(vec![]).is_err());
    }

    #[test]
    fn test_function_examples() {
        let g = ScalingGeometry::new(vec![2.0, 1.0]).unwrap();
        let tf = TestFunction::new(vec![0.1, 0.2], 0.5).unwrap();
        assert_relative_eq!(tf.eval(&g, &[0.1, 0.2]).unwrap(), 8.0, epsilon = 1e-12);
        assert_eq!(tf.eval(&g, &[0.1, 0.71]).unwrap(), 0.0);
        let g1 = ScalingGeometry::euclidean(1);
        let unit = TestFunction::new(vec![0.0], 1.0).unwrap();
        assert_relative_eq!(unit.eval(&g1, &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn lattice_examples() {
        let g1 = ScalingGeometry::euclidean(1);
        let l = build_lattice(&g1, 0.25, &[1.0]).unwrap();
        assert_eq!(l.len(), 9);
        assert_relative_eq!(l.point(0)[0], -1.0);
        assert_relative_eq!(l.point(8)[0], 1.0);
        let g2 = ScalingGeometry::new(vec![2.0, 1.0]).unwrap();
        let l2 = build_lattice(&g2, 0.5, &[1.0, 1.0]).unwrap();
        assert_eq!(l2.steps(), &[0.25, 0.5]);
        let g3 = ScalingGeometry::new(vec![2.0, 1.0]).unwrap();
        let l3 = build_lattice(&g3, 0.5, &[1.0, 1.0]).unwrap();
        assert_relative_eq!(l3.cell_volume(), 0.125);
        assert!(matches!(
            build_lattice_with_budget(&g1, 1e-3, &[1.0], 100),
            Err(Error::PointBudget { .. })
        ));
    }

    #[test]
    fn lattice_index_roundtrip_is_row_major() {
        let g = ScalingGeometry::new(vec![1.0, 2.0]).unwrap();
        let l = build_lattice(&g, 0.5, &[1.0, 1.0]).unwrap();
        assert_eq!(l.shape(), vec![5, 9]);
        for i in 0..l.len() {
            assert_eq!(l.index_of(&l.offsets(i)), Some(i));
        }
        assert_eq!(l.offsets(1), vec![-2, -3]);
        assert_eq!(l.point(l.origin()), vec![0.0, 0.0]);
    }
}
