//! Stationary Gaussian fields with covariance `(|x|_s + ε)^{-α}` by circulant embedding.

use std::fmt;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::NdFft;
use crate::geometry::Lattice;
use crate::rng::{derive_seed, stream, tag};
use crate::stats::{bootstrap_ci, mean};

/// Target covariance parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub alpha: f64,
    pub epsilon: f64,
    /// Sandwich budget `Λ`.
    pub lambda_const: f64,
}

impl CovarianceSpec {
    pub fn new(alpha: f64, epsilon: f64, lambda_const: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha={alpha} must be positive")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon={epsilon} outside (0,1)")));
        }
        if !(lambda_const > 1.0) {
            return Err(Error::InvalidParameter(format!("Lambda={lambda_const} must exceed 1")));
        }
        Ok(Self { alpha, epsilon, lambda_const })
    }

    /// `(r + ε)^{-α}`.
    #[inline]
    pub fn target(&self, r: f64) -> f64 {
        (r + self.epsilon).powf(-self.alpha)
    }

    /// Covariance of `X = ε^{α/2} Ψ`: `(ε / (r + ε))^α`.
    #[inline]
    pub fn normalized(&self, r: f64) -> f64 {
        (self.epsilon / (r + self.epsilon)).powf(self.alpha)
    }

    /// `ε^{α/2}`.
    pub fn scale(&self) -> f64 {
        self.epsilon.powf(self.alpha / 2.0)
    }
}

/// Default clipped-mass threshold.
pub const DEFAULT_CLIP_THRESHOLD: f64 = 0.01;

/// Square roots of the clipped circulant eigenvalues on the embedding torus.
#[derive(Clone)]
pub struct Spectrum {
    spec: CovarianceSpec,
    lattice: Lattice,
    embed_shape: Vec<usize>,
    sqrt_eig: Vec<f64>,
    clipped_mass: f64,
    sigma2: f64,
    id: u64,
    fft: NdFft,
}

impl fmt::Debug for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectrum")
            .field("spec", &self.spec)
            .field("embed_shape", &self.embed_shape)
            .field("clipped_mass", &self.clipped_mass)
            .field("sigma2", &self.sigma2)
            .field("id", &self.id)
            .finish()
    }
}

impl Spectrum {
    pub fn spec(&self) -> &CovarianceSpec {
        &self.spec
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn embed_shape(&self) -> &[usize] {
        &self.embed_shape
    }

    /// Negative eigenvalue mass relative to the positive mass.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    /// Exact variance of `X` under the clipped spectrum.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Exact covariance of `X` at integer lattice lag `lag` under the clipped spectrum.
    pub fn realized_normalized_cov(&self, lag: &[i64]) -> f64 {
        let m: usize = self.embed_shape.iter().product();
        let mut data: Vec<Complex<f64>> = self.sqrt_eig.iter().map(|s| Complex::new(s * s, 0.0)).collect();
        self.fft.forward(&mut data);
        let mut idx = 0;
        for (axis, l) in lag.iter().enumerate() {
            let n = self.embed_shape[axis] as i64;
            idx = idx * n as usize + l.rem_euclid(n) as usize;
        }
        data[idx].re / m as f64
    }
}

pub fn build_spectrum(spec: &CovarianceSpec, lattice: &Lattice) -> Result<Spectrum> {
    build_spectrum_with_threshold(spec, lattice, DEFAULT_CLIP_THRESHOLD)
}

pub fn build_spectrum_with_threshold(spec: &CovarianceSpec, lattice: &Lattice, threshold: f64) -> Result<Spectrum> {
    let g = lattice.geometry();
    if spec.alpha >= g.total() {
        return Err(Error::InvalidParameter(format!(
            "alpha={} must be below |s|={}",
            spec.alpha,
            g.total()
        )));
    }
    let shape = lattice.shape();
    let embed_shape: Vec<usize> = shape.iter().map(|n| (2 * (n - 1)).max(1).next_power_of_two()).collect();
    let m: usize = embed_shape.iter().product();
    let steps = lattice.steps().to_vec();
    let mut data = vec![Complex::new(0.0, 0.0); m];
    let mut lag = vec![0.0; embed_shape.len()];
    for (flat, slot) in data.iter_mut().enumerate() {
        let mut rest = flat;
        for axis in (0..embed_shape.len()).rev() {
            let n = embed_shape[axis];
            let k = rest % n;
            rest /= n;
            lag[axis] = k.min(n - k) as f64 * steps[axis];
        }
        *slot = Complex::new(spec.normalized(g.metric_unchecked(&lag)), 0.0);
    }
    let fft = NdFft::new(&embed_shape);
    fft.forward(&mut data);
    let mut pos = 0.0;
    let mut neg = 0.0;
    for c in &data {
        if c.re >= 0.0 {
            pos += c.re;
        } else {
            neg -= c.re;
        }
    }
    let clipped_mass = if pos > 0.0 { neg / pos } else { 1.0 };
    if clipped_mass > threshold {
        return Err(Error::Clipping { mass: clipped_mass, threshold });
    }
    let sqrt_eig: Vec<f64> = data.iter().map(|c| c.re.max(0.0).sqrt()).collect();
    let sigma2 = pos / m as f64;
    let id = spectrum_id(spec, lattice);
    Ok(Spectrum {
        spec: *spec,
        lattice: lattice.clone(),
        embed_shape,
        sqrt_eig,
        clipped_mass,
        sigma2,
        id,
        fft,
    })
}

fn spectrum_id(spec: &CovarianceSpec, lattice: &Lattice) -> u64 {
    let mut h = tag("spectrum");
    for v in [spec.alpha, spec.epsilon, lattice.base_step()]
        .iter()
        .chain(lattice.extent())
        .chain(lattice.geometry().s())
    {
        h = derive_seed(h, v.to_bits());
    }
    h
}

/// One realization on the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    /// `Ψ_ε` at each lattice point, row-major.
    pub values: Vec<f64>,
    /// `X = ε^{α/2} Ψ_ε` at each lattice point.
    pub normalized: Vec<f64>,
    pub sigma2: f64,
    pub spectrum_id: u64,
}

/// Draw `(seed, index)`; independent of any other draw.
pub fn sample_field(spectrum: &Spectrum, seed: u64, index: u64) -> FieldSample {
    let m: usize = spectrum.embed_shape.iter().product();
    let mut rng = stream(derive_seed(seed, spectrum.id), index);
    let norm = (m as f64).sqrt();
    let mut data: Vec<Complex<f64>> = spectrum
        .sqrt_eig
        .iter()
        .map(|s| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            Complex::new(a, b) * (s / norm)
        })
        .collect();
    spectrum.fft.forward(&mut data);
    let lattice = &spectrum.lattice;
    let shape = lattice.shape();
    let mut normalized = Vec::with_capacity(lattice.len());
    let mut counter = vec![0usize; shape.len()];
    for _ in 0..lattice.len() {
        let mut idx = 0;
        for (axis, c) in counter.iter().enumerate() {
            idx = idx * spectrum.embed_shape[axis] + c;
        }
        normalized.push(data[idx].re);
        for axis in (0..shape.len()).rev() {
            counter[axis] += 1;
            if counter[axis] < shape[axis] {
                break;
            }
            counter[axis] = 0;
        }
    }
    let inv_scale = 1.0 / spectrum.spec.scale();
    let values = normalized.iter().map(|x| x * inv_scale).collect();
    FieldSample { values, normalized, sigma2: spectrum.sigma2, spectrum_id: spectrum.id }
}

/// Per-lag entry of a [`SandwichReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagEstimate {
    pub lag: f64,
    pub c_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub lambda_hat: f64,
    pub per_lag: Vec<LagEstimate>,
    pub clipped_mass: f64,
    /// Lags where the budget `Λ` is violated beyond the bootstrap interval.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<f64>,
}

impl SandwichReport {
    /// Smallest `Λ̂` with `Λ̂^{-1} target <= ĉ <= Λ̂ target` on every lag.
    pub fn from_estimates(per_lag: Vec<LagEstimate>, clipped_mass: f64, budget: f64) -> Self {
        let lambda_hat = per_lag
            .iter()
            .map(|e| {
                if e.c_hat <= 0.0 {
                    f64::INFINITY
                } else {
                    (e.c_hat / e.target).max(e.target / e.c_hat)
                }
            })
            .fold(1.0, f64::max);
        let violations = per_lag
            .iter()
            .filter(|e| e.hi < e.target / budget || e.lo > e.target * budget)
            .map(|e| e.lag)
            .collect();
        Self { lambda_hat, per_lag, clipped_mass, violations }
    }
}

/// Lag grid along the first axis: integer lags spaced roughly geometrically up to `max_lag` steps.
pub fn default_lags(max_lag: usize) -> Vec<usize> {
    let mut lags = vec![0usize];
    let mut l = 1.0f64;
    while (l as usize) <= max_lag {
        let v = l as usize;
        if *lags.last().unwrap() != v {
            lags.push(v);
        }
        l *= 1.5;
    }
    if *lags.last().unwrap() != max_lag && max_lag > 0 {
        lags.push(max_lag);
    }
    lags
}

/// Empirical covariance of `Ψ_ε` at lags along axis 0 up to a quarter of the extent,
/// averaged over all lattice pairs per sample, with a bootstrap over samples.
pub fn verify_assumption1(spectrum: &Spectrum, n_samples: usize, seed: u64) -> Result<SandwichReport> {
    let lattice = spectrum.lattice();
    let max_lag = lattice.half_counts()[0] / 2;
    verify_assumption1_on(spectrum, n_samples, seed, &default_lags(max_lag))
}

pub fn verify_assumption1_on(spectrum: &Spectrum, n_samples: usize, seed: u64, lags: &[usize]) -> Result<SandwichReport> {
    if n_samples < 1000 {
        return Err(Error::InvalidParameter(format!("n_samples={n_samples} below 1000")));
    }
    let lattice = spectrum.lattice();
    let shape = lattice.shape();
    let n0 = shape[0];
    let stride: usize = shape[1..].iter().product();
    if let Some(l) = lags.iter().find(|l| **l >= n0) {
        return Err(Error::InvalidParameter(format!("lag {l} exceeds the lattice")));
    }
    let spec = *spectrum.spec();
    let scale2 = spec.epsilon.powf(-spec.alpha);
    let per_sample: Vec<Vec<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let s = sample_field(spectrum, seed, i);
            lags.iter()
                .map(|&l| {
                    let count = (n0 - l) * stride;
                    let mut acc = Vec::with_capacity(count);
                    for a in 0..n0 - l {
                        for b in 0..stride {
                            acc.push(s.normalized[a * stride + b] * s.normalized[(a + l) * stride + b]);
                        }
                    }
                    mean(&acc) * scale2
                })
                .collect()
        })
        .collect();
    let step = lattice.steps()[0];
    let mut per_lag = Vec::with_capacity(lags.len());
    for (j, &l) in lags.iter().enumerate() {
        let col: Vec<f64> = per_sample.iter().map(|row| row[j]).collect();
        let c_hat = mean(&col);
        let (lo, hi) = bootstrap_ci(&col, mean, 500, derive_seed(seed, j as u64), 0.95);
        let lag = l as f64 * step;
        let mut point = vec![0.0; shape.len()];
        point[0] = lag;
        let r = lattice.geometry().metric_unchecked(&point);
        per_lag.push(LagEstimate { lag, c_hat, lo, hi, target: spec.target(r) });
    }
    Ok(SandwichReport::from_estimates(per_lag, spectrum.clipped_mass(), spec.lambda_const))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_lattice, ScalingGeometry};
    use approx::assert_relative_eq;

    fn small() -> Spectrum {
        let g = ScalingGeometry::euclidean(1);
        let l = build_lattice(&g, 0.05, &[3.2]).unwrap();
        build_spectrum(&CovarianceSpec::new(0.6, 0.1, 2.0).unwrap(), &l).unwrap()
    }

    #[test]
    fn target_examples() {
        let s = CovarianceSpec::new(0.6, 0.1, 2.0).unwrap();
        assert_relative_eq!(s.normalized(0.0), 1.0);
        assert_relative_eq!(s.target(0.0), 0.1f64.powf(-0.6));
        assert_relative_eq!(s.normalized(0.1), 0.5f64.powf(0.6), epsilon = 1e-15);
        assert_relative_eq!(s.normalized(0.1), 0.659_753_955_386_447, epsilon = 1e-12);
    }

    #[test]
    fn embedding_reproduces_target_in_one_dimension() {
        let s = small();
        assert!(s.clipped_mass() < 1e-12);
        assert_relative_eq!(s.sigma2(), 1.0, epsilon = 1e-12);
        for lag in [0i64, 1, 5, 30, 63] {
            let r = lag as f64 * 0.05;
            assert_relative_eq!(s.realized_normalized_cov(&[lag]), s.spec().normalized(r), epsilon = 1e-12);
        }
    }

    #[test]
    fn samples_are_deterministic() {
        let s = small();
        let a = sample_field(&s, 11, 4);
        let b = sample_field(&s, 11, 4);
        let c = sample_field(&s, 11, 5);
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        assert_eq!(a.values.len(), s.lattice().len());
    }

    #[test]
    fn exact_target_has_unit_lambda() {
        let spec = CovarianceSpec::new(0.6, 0.1, 2.0).unwrap();
        let per_lag = [0.0, 0.1, 0.5]
            .iter()
            .map(|l| LagEstimate { lag: *l, c_hat: spec.target(*l), lo: 0.0, hi: 0.0, target: spec.target(*l) })
            .collect();
        assert_eq!(SandwichReport::from_estimates(per_lag, 0.0, 2.0).lambda_hat, 1.0);
    }

    #[test]
    fn two_dimensional_embedding_reports_clipping() {
        let g = ScalingGeometry::euclidean(2);
        let l = build_lattice(&g, 0.1, &[1.6, 1.6]).unwrap();
        let spec = CovarianceSpec::new(0.6, 0.2, 2.0).unwrap();
        match build_spectrum_with_threshold(&spec, &l, 1.0) {
            Ok(s) => {
                assert!(s.clipped_mass() < 1.0);
                assert!(s.sigma2() >= 1.0 - 1e-12);
            }
            Err(e) => panic!("{e}"),
        }
    }
}
