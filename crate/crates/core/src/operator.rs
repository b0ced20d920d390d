//! Lattice quadrature of `A_{ε,λ} F(Θ) = ∫ φ^λ(x) K(x,y) F(Θ,x,y) dx dy` and of the
//! single-point pairing `∫ T(trig(θX)) φ^λ(x) dx`.
//!
//! The `y`-sum is the Riemann sum over `{|y| ≤ 2}`. Cells near the singularity of `K₀`
//! either carry the exact cell average of `K₀` or are excluded. The `K₀(x−y)` part is
//! evaluated as a zero-padded FFT convolution and the Taylor part from precomputed
//! moments, which equals the direct double sum up to rounding.

use std::collections::HashMap;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::chaos::{truncated_trig, ChaosTruncSpec, TwoPointFunctional};
use crate::error::{Error, Result};
use crate::fft::NdFft;
use crate::field::FieldSample;
use crate::geometry::{Lattice, TestFunction};
use crate::kernel::RenormKernel;
use crate::quadrature::graded_rule;

/// Radius of the `y` domain.
pub const Y_RADIUS: f64 = 2.0;

/// Treatment of the cells within the diagonal radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularCells {
    /// Use the exact average of `K₀` over the cell.
    #[default]
    CellAverage,
    /// Drop the cell.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagonalPolicy {
    /// Cells with lattice index distance (sup over axes) below this get the singular treatment.
    pub radius: usize,
    #[serde(default)]
    pub cells: SingularCells,
}

impl Default for DiagonalPolicy {
    fn default() -> Self {
        Self { radius: 1, cells: SingularCells::CellAverage }
    }
}

impl DiagonalPolicy {
    pub fn exclude(radius: usize) -> Self {
        Self { radius, cells: SingularCells::Exclude }
    }

    pub fn cell_average(radius: usize) -> Self {
        Self { radius, cells: SingularCells::CellAverage }
    }
}

/// `(1/|cell|) ∫_cell K₀`, for the cell of half-widths `steps/2` centred at `center`.
pub fn cell_average_k0(kernel: &RenormKernel, center: &[f64], steps: &[f64]) -> f64 {
    let rules: Vec<_> = center
        .iter()
        .zip(steps)
        .map(|(c, h)| graded_rule(c - h / 2.0, c + h / 2.0, &[0.0], *h, 8))
        .collect();
    let d = center.len();
    let mut idx = vec![0usize; d];
    let mut pt = vec![0.0; d];
    let mut total = 0.0;
    'outer: loop {
        let mut w = 1.0;
        for a in 0..d {
            pt[a] = rules[a].nodes[idx[a]];
            w *= rules[a].weights[idx[a]];
        }
        let v = kernel.k0(&pt);
        if v.is_finite() {
            total += w * v;
        }
        for a in 0..d {
            idx[a] += 1;
            if idx[a] < rules[a].len() {
                continue 'outer;
            }
            idx[a] = 0;
        }
        break;
    }
    total / steps.iter().product::<f64>()
}

/// Visits every offset in `{-(r-1), …, r-1}^d`.
fn for_each_near(d: usize, r: i64, mut visit: impl FnMut(&[i64])) {
    if r <= 0 {
        return;
    }
    let mut delta = vec![-(r - 1); d];
    loop {
        visit(&delta);
        let mut a = 0;
        while a < d {
            delta[a] += 1;
            if delta[a] <= r - 1 {
                break;
            }
            delta[a] = -(r - 1);
            a += 1;
        }
        if a == d {
            return;
        }
    }
}

/// Precomputed quadrature for one `(kernel, test function, lattice)` triple.
#[derive(Debug, Clone)]
pub struct OperatorConfig {
    kernel: RenormKernel,
    test: TestFunction,
    lattice: Lattice,
    policy: DiagonalPolicy,
    /// Lattice indices of the `x` support and `φ^λ(x)·cell`.
    x_idx: Vec<usize>,
    x_weight: Vec<f64>,
    /// Indices of the `y` domain.
    y_idx: Vec<usize>,
    /// `K₀(−y)·cell` and `∂_i K₀(−y)·cell` on the `y` domain, for the Taylor part.
    taylor0: Vec<f64>,
    taylor1: Vec<Vec<f64>>,
    /// Per `x`: excluded `y` positions in `y_idx` with the Taylor value there.
    excluded: Vec<Vec<(usize, f64)>>,
    /// Cell averages of `K₀` on the near lags, times the cell volume.
    near: HashMap<Vec<i64>, f64>,
    pad_shape: Vec<usize>,
    fft: NdFft,
    kernel_hat: Vec<Complex<f64>>,
}

impl OperatorConfig {
    pub fn new(kernel: RenormKernel, test: TestFunction, lattice: Lattice, policy: DiagonalPolicy) -> Result<Self> {
        let g = lattice.geometry().clone();
        if kernel.geometry() != &g {
            return Err(Error::InvalidParameter("kernel and lattice geometries differ".into()));
        }
        g.check_dim(&test.center)?;
        let steps = lattice.steps().to_vec();
        for (i, s) in g.s().iter().enumerate() {
            if lattice.extent()[i] + 1e-12 < Y_RADIUS.powf(*s) {
                return Err(Error::InvalidParameter(format!(
                    "lattice extent {} on axis {i} does not cover |y| <= {Y_RADIUS}",
                    lattice.extent()[i]
                )));
            }
        }
        if steps.iter().zip(g.s()).any(|(h, s)| test.scale.powf(*s) < *h) {
            return Err(Error::Resolution { lambda: test.scale, h: lattice.base_step() });
        }
        let cell = lattice.cell_volume();
        let mut x_idx = Vec::new();
        let mut x_weight = Vec::new();
        let mut y_idx = Vec::new();
        let origin = lattice.origin();
        let re = kernel.re();
        for (i, p) in lattice.points().enumerate() {
            let phi = test.eval_unchecked(&g, &p);
            if phi != 0.0 {
                x_idx.push(i);
                x_weight.push(phi * cell);
            }
            let drop_origin = re >= 1 && i == origin && policy.cells == SingularCells::Exclude;
            if g.metric_unchecked(&p) <= Y_RADIUS && !drop_origin {
                y_idx.push(i);
            }
        }
        let d = g.dim();
        let r = policy.radius as i64;
        let averaging = policy.cells == SingularCells::CellAverage;
        let mut near = HashMap::new();
        if averaging {
            for_each_near(d, r, |delta| {
                let c: Vec<f64> = delta.iter().zip(&steps).map(|(l, h)| *l as f64 * h).collect();
                near.insert(delta.to_vec(), cell_average_k0(&kernel, &c, &steps) * cell);
            });
        }
        let mut taylor0 = Vec::new();
        let mut taylor1 = vec![Vec::new(); if re >= 2 { d } else { 0 }];
        if re >= 1 {
            for &j in &y_idx {
                let my: Vec<f64> = lattice.point(j).iter().map(|v| -v).collect();
                let oy: Vec<i64> = lattice.offsets(j).iter().map(|v| -v).collect();
                // ∂_i K₀ averages to zero over a cell centred at the origin.
                let at_origin = j == origin;
                match near.get(&oy) {
                    Some(avg) => taylor0.push(*avg),
                    None => taylor0.push(kernel.k0(&my) * cell),
                }
                if re >= 2 {
                    for (a, t) in taylor1.iter_mut().enumerate() {
                        t.push(if at_origin { 0.0 } else { kernel.dk0(&my, a) * cell });
                    }
                }
            }
        }
        let y_pos: std::collections::HashMap<usize, usize> = y_idx.iter().enumerate().map(|(k, i)| (*i, k)).collect();
        let mut excluded = Vec::with_capacity(x_idx.len());
        for &i in &x_idx {
            let ox = lattice.offsets(i);
            let x = lattice.point(i);
            let mut list = Vec::new();
            if !averaging {
                for_each_near(d, r, |delta| {
                    let oy: Vec<i64> = ox.iter().zip(delta).map(|(a, b)| a + b).collect();
                    if let Some(&k) = lattice.index_of(&oy).and_then(|j| y_pos.get(&j)) {
                        let t = if re >= 1 {
                            taylor0[k] + (0..taylor1.len()).map(|a| x[a] * taylor1[a][k]).sum::<f64>()
                        } else {
                            0.0
                        };
                        list.push((k, t));
                    }
                });
            }
            excluded.push(list);
        }
        let shape = lattice.shape();
        let reach: Vec<usize> = g
            .s()
            .iter()
            .zip(&steps)
            .zip(&shape)
            .map(|((s, h), n)| ((kernel.cutoff_radius().powf(*s) / h).floor() as usize).min(*n - 1))
            .collect();
        let pad_shape: Vec<usize> = shape.iter().zip(&reach).map(|(n, r)| (n + r).next_power_of_two()).collect();
        let fft = NdFft::new(&pad_shape);
        let total: usize = pad_shape.iter().product();
        let mut kernel_hat = vec![Complex::new(0.0, 0.0); total];
        let mut lag = vec![0i64; d];
        let mut lagpt = vec![0.0; d];
        for (flat, slot) in kernel_hat.iter_mut().enumerate() {
            let mut rest = flat;
            let mut inside = true;
            for a in (0..d).rev() {
                let p = pad_shape[a];
                let k = rest % p;
                rest /= p;
                let l = if k <= p / 2 { k as i64 } else { k as i64 - p as i64 };
                if l.unsigned_abs() as usize > reach[a] {
                    inside = false;
                }
                lag[a] = l;
                lagpt[a] = l as f64 * steps[a];
            }
            if !inside {
                continue;
            }
            if lag.iter().all(|l| l.abs() < r) {
                if let Some(avg) = near.get(&lag) {
                    *slot = Complex::new(*avg, 0.0);
                }
                continue;
            }
            *slot = Complex::new(kernel.k0(&lagpt) * cell, 0.0);
        }
        fft.forward(&mut kernel_hat);
        Ok(Self {
            kernel,
            test,
            lattice,
            policy,
            x_idx,
            x_weight,
            y_idx,
            taylor0,
            taylor1,
            excluded,
            near,
            pad_shape,
            fft,
            kernel_hat,
        })
    }

    pub fn kernel(&self) -> &RenormKernel {
        &self.kernel
    }

    pub fn test(&self) -> &TestFunction {
        &self.test
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn policy(&self) -> DiagonalPolicy {
        self.policy
    }

    pub fn x_support(&self) -> usize {
        self.x_idx.len()
    }

    fn check(&self, sample: &FieldSample) -> Result<()> {
        if sample.normalized.len() != self.lattice.len() {
            return Err(Error::Dimension { expected: self.lattice.len(), got: sample.normalized.len() });
        }
        Ok(())
    }

    /// `Σ_y K(x, y) f(y)` for every `x` in the support, given `f` on the `y` domain.
    fn inner_sums(&self, fy: &[f64]) -> Vec<f64> {
        let shape = self.lattice.shape();
        let d = shape.len();
        let total: usize = self.pad_shape.iter().product();
        let mut buf = vec![Complex::new(0.0, 0.0); total];
        for (k, &j) in self.y_idx.iter().enumerate() {
            buf[self.pad_index(j, &shape)] = Complex::new(fy[k], 0.0);
        }
        self.fft.forward(&mut buf);
        for (b, kh) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= kh;
        }
        self.fft.inverse(&mut buf);
        let c0: f64 = self.taylor0.iter().zip(fy).map(|(t, f)| t * f).sum();
        let c1: Vec<f64> = self.taylor1.iter().map(|t| t.iter().zip(fy).map(|(a, f)| a * f).sum()).collect();
        self.x_idx
            .iter()
            .zip(&self.excluded)
            .map(|(&i, excl)| {
                let mut v = buf[self.pad_index(i, &shape)].re;
                if !self.taylor0.is_empty() {
                    let x = self.lattice.point(i);
                    v -= c0 + (0..c1.len().min(d)).map(|a| x[a] * c1[a]).sum::<f64>();
                    for (k, t) in excl {
                        v += t * fy[*k];
                    }
                }
                v
            })
            .collect()
    }

    fn pad_index(&self, flat: usize, shape: &[usize]) -> usize {
        let mut rest = flat;
        let mut coords = vec![0usize; shape.len()];
        for a in (0..shape.len()).rev() {
            coords[a] = rest % shape[a];
            rest /= shape[a];
        }
        coords.iter().zip(&self.pad_shape).fold(0, |acc, (c, p)| acc * p + c)
    }

    /// `A_{ε,λ} F(Θ)` for one field sample.
    pub fn apply(&self, f: &TwoPointFunctional, sample: &FieldSample) -> Result<f64> {
        Ok(self.apply_many(std::slice::from_ref(f), sample)?[0])
    }

    /// `A_{ε,λ} F` for several functionals on one field sample.
    pub fn apply_many(&self, fs: &[TwoPointFunctional], sample: &FieldSample) -> Result<Vec<f64>> {
        self.check(sample)?;
        let s2 = sample.sigma2;
        let x = &sample.normalized;
        Ok(fs
            .iter()
            .map(|f| {
                if f.theta == [0.0, 0.0] && f.deriv == [0, 0] {
                    return 0.0;
                }
                let fy: Vec<f64> = self.y_idx.iter().map(|j| f.factor_y(x[*j], s2)).collect();
                let inner = self.inner_sums(&fy);
                self.x_idx
                    .iter()
                    .zip(&self.x_weight)
                    .zip(&inner)
                    .map(|((i, w), v)| w * f.factor_x(x[*i], s2) * v)
                    .sum()
            })
            .collect())
    }

    /// `K(x, y)·cell` as used by the quadrature, for `x = x_idx[xi]` and `y = y_idx[k]`.
    fn dense_weight(&self, xi: usize, k: usize) -> f64 {
        let i = self.x_idx[xi];
        let j = self.y_idx[k];
        let ox = self.lattice.offsets(i);
        let oy = self.lattice.offsets(j);
        let lag: Vec<i64> = ox.iter().zip(&oy).map(|(a, b)| a - b).collect();
        let r = self.policy.radius as i64;
        let k0 = if lag.iter().all(|l| l.abs() < r) {
            match self.near.get(&lag) {
                Some(avg) => *avg,
                None => return 0.0,
            }
        } else {
            let p: Vec<f64> = lag.iter().zip(self.lattice.steps()).map(|(l, h)| *l as f64 * h).collect();
            self.kernel.k0(&p) * self.lattice.cell_volume()
        };
        if self.taylor0.is_empty() {
            return k0;
        }
        let x = self.lattice.point(i);
        k0 - self.taylor0[k] - (0..self.taylor1.len()).map(|a| x[a] * self.taylor1[a][k]).sum::<f64>()
    }

    /// Direct double sum with the dense kernel; for validation.
    pub fn apply_direct(&self, f: &TwoPointFunctional, sample: &FieldSample) -> Result<f64> {
        self.check(sample)?;
        let s2 = sample.sigma2;
        let x = &sample.normalized;
        let mut total = 0.0;
        for (xi, (&i, w)) in self.x_idx.iter().zip(&self.x_weight).enumerate() {
            let mut inner = 0.0;
            for (k, &j) in self.y_idx.iter().enumerate() {
                let kw = self.dense_weight(xi, k);
                if kw != 0.0 {
                    inner += kw * f.factor_y(x[j], s2);
                }
            }
            total += w * f.factor_x(x[i], s2) * inner;
        }
        Ok(total)
    }

    /// `Σ_x |φ^λ(x)| Σ_y |K(x,y)|` cell-weighted, the envelope for `|A F| / sup|F|`.
    pub fn envelope(&self) -> f64 {
        let mut total = 0.0;
        for (xi, w) in self.x_weight.iter().enumerate() {
            let inner: f64 = (0..self.y_idx.len()).map(|k| self.dense_weight(xi, k).abs()).sum();
            total += w.abs() * inner;
        }
        total
    }
}

/// `A_{ε,λ} F(Θ)` for one sample.
pub fn apply(cfg: &OperatorConfig, f: &TwoPointFunctional, sample: &FieldSample) -> Result<f64> {
    cfg.apply(f, sample)
}

/// `Σ_x T_{(m−1)}(trig(θX(x))) φ^λ(x)·cell`.
pub fn apply_single(
    theta: f64,
    spec: &ChaosTruncSpec,
    test: &TestFunction,
    lattice: &Lattice,
    sample: &FieldSample,
) -> Result<f64> {
    if sample.normalized.len() != lattice.len() {
        return Err(Error::Dimension { expected: lattice.len(), got: sample.normalized.len() });
    }
    let g = lattice.geometry();
    let cell = lattice.cell_volume();
    if lattice.steps().iter().zip(g.s()).any(|(h, s)| test.scale.powf(*s) < *h) {
        return Err(Error::Resolution { lambda: test.scale, h: lattice.base_step() });
    }
    let mut total = 0.0;
    for (i, p) in lattice.points().enumerate() {
        let phi = test.eval_unchecked(g, &p);
        if phi != 0.0 {
            total += phi * cell * truncated_trig(sample.normalized[i], theta, spec, sample.sigma2);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{build_spectrum, sample_field, CovarianceSpec};
    use crate::geometry::{build_lattice, ScalingGeometry};
    use approx::assert_relative_eq;

    fn setup(re: u32, h: f64) -> (OperatorConfig, FieldSample) {
        let g = ScalingGeometry::euclidean(1);
        let lattice = build_lattice(&g, h, &[2.0]).unwrap();
        let kernel = RenormKernel::with_re(0.4, re, g.clone()).unwrap();
        let test = TestFunction::new(vec![0.0], 0.2).unwrap();
        let spec = CovarianceSpec::new(0.6, 0.1, 2.0).unwrap();
        let sp = build_spectrum(&spec, &lattice).unwrap();
        let sample = sample_field(&sp, 3, 0);
        (OperatorConfig::new(kernel, test, lattice, DiagonalPolicy::default()).unwrap(), sample)
    }

    fn functional(theta: [f64; 2]) -> TwoPointFunctional {
        TwoPointFunctional::new(ChaosTruncSpec::for_order(1), ChaosTruncSpec::for_order(1), theta, [0, 0]).unwrap()
    }

    #[test]
    fn fft_path_matches_direct_sum() {
        for policy in [DiagonalPolicy::default(), DiagonalPolicy::exclude(1), DiagonalPolicy::cell_average(2)] {
            for re in 0..=2 {
                let (cfg, sample) = setup(re, 0.02);
                let cfg = OperatorConfig::new(cfg.kernel().clone(), cfg.test().clone(), cfg.lattice().clone(), policy).unwrap();
                let f = functional([3.0, 1.5]);
                let a = cfg.apply(&f, &sample).unwrap();
                let b = cfg.apply_direct(&f, &sample).unwrap();
                assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cell_average_of_power_singularity() {
        // d=1, K₀ = |x|^{-0.6} near 0: average over [-h/2, h/2] is (h/2)^{-0.6}/0.4.
        let g = ScalingGeometry::euclidean(1);
        let k = RenormKernel::with_re(0.4, 0, g).unwrap();
        let h = 1e-3;
        assert_relative_eq!(cell_average_k0(&k, &[0.0], &[h]), (h / 2.0).powf(-0.6) / 0.4, max_relative = 1e-5);
        let far = cell_average_k0(&k, &[0.1], &[h]);
        assert_relative_eq!(far, 0.1f64.powf(-0.6), max_relative = 1e-4);
    }

    #[test]
    fn cell_average_is_robust_to_radius() {
        let (cfg, sample) = setup(1, 0.01);
        let f = functional([1.0, 1.0]);
        let with = |p| {
            OperatorConfig::new(cfg.kernel().clone(), cfg.test().clone(), cfg.lattice().clone(), p)
                .unwrap()
                .apply(&f, &sample)
                .unwrap()
        };
        let (a1, a2) = (with(DiagonalPolicy::cell_average(1)), with(DiagonalPolicy::cell_average(2)));
        let (e1, e2) = (with(DiagonalPolicy::exclude(1)), with(DiagonalPolicy::exclude(2)));
        assert!((a1 - a2).abs() < 0.2 * (e1 - e2).abs(), "{a1} {a2} {e1} {e2}");
    }

    #[test]
    fn zero_frequency_vanishes() {
        let (cfg, sample) = setup(0, 0.02);
        assert_eq!(cfg.apply(&functional([0.0, 0.0]), &sample).unwrap(), 0.0);
    }

    #[test]
    fn zero_test_function_vanishes() {
        let (cfg, sample) = setup(1, 0.02);
        let zero = cfg.test().clone().with_profile(crate::geometry::Profile::Zero);
        let cfg = OperatorConfig::new(cfg.kernel().clone(), zero, cfg.lattice().clone(), DiagonalPolicy::default()).unwrap();
        assert_eq!(cfg.apply(&functional([3.0, 1.0]), &sample).unwrap(), 0.0);
    }

    #[test]
    fn single_pairing_examples() {
        let (cfg, sample) = setup(0, 0.02);
        let sin = ChaosTruncSpec::for_order(1);
        assert_eq!(apply_single(0.0, &sin, cfg.test(), cfg.lattice(), &sample).unwrap(), 0.0);
        let mut constant = sample.clone();
        constant.normalized.iter_mut().for_each(|v| *v = 0.7);
        let raw = ChaosTruncSpec::new(crate::chaos::Trig::Sin, 1).unwrap();
        let v = apply_single(2.0, &raw, cfg.test(), cfg.lattice(), &constant).unwrap();
        let mass: f64 = cfg.lattice().points().map(|p| cfg.test().eval_unchecked(cfg.lattice().geometry(), &p)).sum::<f64>()
            * cfg.lattice().cell_volume();
        assert_relative_eq!(v, (1.4f64).sin() * mass, epsilon = 1e-12);
    }

    #[test]
    fn resolution_error_when_lambda_below_step() {
        let g = ScalingGeometry::euclidean(1);
        let lattice = build_lattice(&g, 0.05, &[2.0]).unwrap();
        let kernel = RenormKernel::with_re(0.4, 0, g).unwrap();
        let test = TestFunction::new(vec![0.0], 0.01).unwrap();
        assert!(matches!(
            OperatorConfig::new(kernel, test, lattice, DiagonalPolicy::default()),
            Err(Error::Resolution { .. })
        ));
    }
}
