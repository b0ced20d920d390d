//! Deterministic double quadrature of the second-moment functionals
//! `G(x) = ‖∫|K(x,y)| Y^{⋄m₂} dy‖₂` and `H(y) = ‖∫|K(x,y)||φ^λ(x)| X^{⋄m₁} dx‖₂` in one dimension.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::CovarianceSpec;
use crate::geometry::TestFunction;
use crate::kernel::RenormKernel;
use crate::quadrature::graded_rule;

/// Quadrature resolution for `G` and `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentQuery {
    /// Gauss–Legendre points per panel on the coarse grid.
    pub order: usize,
    /// Maximal panel width away from breakpoints, relative to the domain half-width.
    pub max_width: f64,
    /// Accepted relative disagreement between the coarse and fine grids.
    pub tolerance: f64,
}

impl Default for SecondMomentQuery {
    fn default() -> Self {
        Self { order: 8, max_width: 0.05, tolerance: 0.1 }
    }
}

fn factorial(m: u32) -> f64 {
    (1..=m).map(f64::from).product()
}

fn check_1d(k: &RenormKernel, p: &[f64]) -> Result<()> {
    if k.geometry().dim() != 1 {
        return Err(Error::InvalidParameter("second-moment quadrature supports d = 1 only".into()));
    }
    k.geometry().check_dim(p)
}

/// `∫∫ w(u₁) w(u₂) c(u₁−u₂) du₁ du₂` over `[a, b]²`, with breakpoints at `singular` and on the diagonal.
fn double_integral(
    a: f64,
    b: f64,
    singular: &[f64],
    width: f64,
    order: usize,
    w: &(dyn Fn(f64) -> f64 + Sync),
    c: &(dyn Fn(f64) -> f64 + Sync),
) -> f64 {
    let outer = graded_rule(a, b, singular, width, order);
    let terms: Vec<f64> = outer
        .nodes
        .par_iter()
        .zip(&outer.weights)
        .map(|(u1, wt)| {
            let w1 = w(*u1);
            if w1 == 0.0 {
                return 0.0;
            }
            let mut sing = singular.to_vec();
            sing.push(*u1);
            let inner = graded_rule(a, b, &sing, width, order);
            let s: f64 = inner.nodes.iter().zip(&inner.weights).map(|(u2, v)| v * w(*u2) * c(u1 - u2)).sum();
            wt * w1 * s
        })
        .collect();
    terms.iter().sum()
}

fn two_grid(q: &SecondMomentQuery, run: impl Fn(usize, f64) -> f64) -> Result<f64> {
    let coarse = run(q.order, q.max_width);
    let fine = run(q.order + 4, q.max_width / 2.0);
    let scale = fine.abs().max(coarse.abs());
    if scale > 0.0 && (fine - coarse).abs() > q.tolerance * scale {
        return Err(Error::Quadrature(format!("two-grid disagreement: coarse {coarse}, fine {fine}")));
    }
    Ok(fine.max(0.0))
}

/// `G(x)² = m₂! ∬ |K(x,y₁)||K(x,y₂)| (E Y₁Y₂)^{m₂} dy₁dy₂`, with `E Y₁Y₂ = (ε/(|y₁−y₂|+ε))^α`.
pub fn second_moment_g(x: &[f64], k: &RenormKernel, m2: u32, cov: &CovarianceSpec, q: &SecondMomentQuery) -> Result<f64> {
    check_1d(k, x)?;
    if !(k.cutoff_radius() > 0.0) {
        return Ok(0.0);
    }
    let x0 = x[0];
    let half = x0.abs() + k.cutoff_radius();
    let w = |y: f64| {
        let v = k.eval(&[x0], &[y]).abs();
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let c = |r: f64| cov.normalized(r.abs()).powi(m2 as i32);
    let i = two_grid(q, |order, width| double_integral(-half, half, &[x0, 0.0], width * half, order, &w, &c))?;
    Ok((factorial(m2) * i).sqrt())
}

/// `H(y)² = m₁! ∬ |K(x₁,y)||K(x₂,y)||φ^λ(x₁)||φ^λ(x₂)| (E X₁X₂)^{m₁} dx₁dx₂`.
pub fn second_moment_h(
    y: &[f64],
    k: &RenormKernel,
    test: &TestFunction,
    m1: u32,
    cov: &CovarianceSpec,
    q: &SecondMomentQuery,
) -> Result<f64> {
    check_1d(k, y)?;
    k.geometry().check_dim(&test.center)?;
    if !(k.cutoff_radius() > 0.0) || test.profile == crate::geometry::Profile::Zero {
        return Ok(0.0);
    }
    let g = k.geometry().clone();
    let y0 = y[0];
    let (a, b) = (test.center[0] - test.scale, test.center[0] + test.scale);
    let w = |x: f64| {
        let phi = test.eval_unchecked(&g, &[x]).abs();
        if phi == 0.0 {
            return 0.0;
        }
        let v = k.eval(&[x], &[y0]).abs();
        if v.is_finite() {
            v * phi
        } else {
            0.0
        }
    };
    let c = |r: f64| cov.normalized(r.abs()).powi(m1 as i32);
    let half = 0.5 * (b - a);
    let i = two_grid(q, |order, width| double_integral(a, b, &[y0], width * half, order, &w, &c))?;
    Ok((factorial(m1) * i).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Profile, ScalingGeometry};
    use approx::assert_relative_eq;

    fn kernel(gamma: f64, alpha: f64, m2: u32) -> RenormKernel {
        RenormKernel::new(gamma, alpha, m2, ScalingGeometry::euclidean(1)).unwrap()
    }

    #[test]
    fn null_kernel_and_test() {
        let cov = CovarianceSpec::new(0.6, 0.01, 2.0).unwrap();
        let q = SecondMomentQuery::default();
        let k = kernel(0.25, 0.6, 1).with_cutoff(0.0);
        assert_eq!(second_moment_g(&[0.1], &k, 1, &cov, &q).unwrap(), 0.0);
        let t = TestFunction::new(vec![0.0], 0.2).unwrap().with_profile(Profile::Zero);
        assert_eq!(second_moment_h(&[0.5], &kernel(0.25, 0.6, 1), &t, 1, &cov, &q).unwrap(), 0.0);
    }

    #[test]
    fn smooth_weight_matches_closed_form() {
        // w ≡ 1 and c ≡ 1 on [0, 2] gives 4.
        let v = double_integral(0.0, 2.0, &[0.5], 0.1, 8, &|_| 1.0, &|_| 1.0);
        assert_relative_eq!(v, 4.0, epsilon = 1e-10);
        // ∬ |u₁−u₂| over [0,1]² = 1/3.
        let v = double_integral(0.0, 1.0, &[], 0.1, 8, &|_| 1.0, &|r| r.abs());
        assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn g_decreases_with_epsilon() {
        let k = kernel(0.25, 0.6, 1);
        let q = SecondMomentQuery::default();
        let g1 = second_moment_g(&[0.1], &k, 1, &CovarianceSpec::new(0.6, 0.01, 2.0).unwrap(), &q).unwrap();
        let g2 = second_moment_g(&[0.1], &k, 1, &CovarianceSpec::new(0.6, 0.002, 2.0).unwrap(), &q).unwrap();
        assert!(g2 < g1 && g2 > 0.0);
    }

    #[test]
    fn rejects_higher_dimension() {
        let k = RenormKernel::new(0.5, 0.6, 1, ScalingGeometry::euclidean(2)).unwrap();
        let cov = CovarianceSpec::new(0.6, 0.01, 2.0).unwrap();
        assert!(second_moment_g(&[0.1, 0.1], &k, 1, &cov, &SecondMomentQuery::default()).is_err());
    }
}
