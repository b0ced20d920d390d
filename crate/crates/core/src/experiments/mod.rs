//! Moment-norm estimation, frequency sweeps, scaling scans, the second-moment
//! functionals `G`, `H` and the volume lemmas.

mod second_moment;
mod volume;

pub use second_moment::{second_moment_g, second_moment_h, SecondMomentQuery};
pub use volume::{volume_lemma_check, VolumeLemmaOptions, VolumeLemmaPoint, VolumeLemmaReport, DOMAIN_RADIUS};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::{ChaosTruncSpec, TwoPointFunctional};
use crate::error::{Error, Result};
use crate::field::{build_spectrum, sample_field, CovarianceSpec};
use crate::geometry::{build_lattice, ScalingGeometry, TestFunction};
use crate::kernel::RenormKernel;
use crate::operator::{DiagonalPolicy, OperatorConfig, Y_RADIUS};
use crate::rng::derive_seed;
use crate::stats::{bootstrap_ci, least_squares};

/// Estimate of `‖·‖_{2n} = (E|·|^{2n})^{1/(2n)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub n: u32,
    pub value: f64,
    pub ci: [f64; 2],
    pub n_samples: usize,
}

pub const BOOTSTRAP_RESAMPLES: usize = 500;

fn moment_stat(v: &[f64], n: u32) -> f64 {
    let p = 2 * n as i32;
    let m = crate::stats::mean(&v.iter().map(|x| x.abs().powi(p)).collect::<Vec<_>>());
    m.powf(1.0 / p as f64)
}

/// Plug-in `2n`-th moment norm with a percentile bootstrap interval.
pub fn moment_norm(values: &[f64], n: u32, seed: u64) -> Result<MomentEstimate> {
    if values.len() < 200 {
        return Err(Error::InvalidParameter(format!("{} samples, need at least 200", values.len())));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if values.iter().all(|v| *v == 0.0) {
        return Ok(MomentEstimate { n, value: 0.0, ci: [0.0, 0.0], n_samples: values.len() });
    }
    let value = moment_stat(values, n);
    let (lo, hi) = bootstrap_ci(values, |v| moment_stat(v, n), BOOTSTRAP_RESAMPLES, seed, 0.95);
    Ok(MomentEstimate { n, value, ci: [lo.min(value), hi.max(value)], n_samples: values.len() })
}

/// Parameters of a moment experiment on `A_{ε,λ} F(Θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub geometry: ScalingGeometry,
    pub alpha: f64,
    pub lambda_const: f64,
    pub m1: u32,
    pub m2: u32,
    pub deriv: [u32; 2],
    pub gamma: f64,
    /// Explicit Taylor order; derived from `(γ, α, m₂)` when absent.
    pub re: Option<u32>,
    /// Support radius of the kernel cutoff.
    #[serde(default = "unit_cutoff")]
    pub cutoff: f64,
    pub n: u32,
    pub n_samples: usize,
    /// Lattice step; overridden by `cells_per_eps` when set.
    pub h: f64,
    /// Lattice step `ε / cells_per_eps`, so every `ε` is resolved alike.
    #[serde(default)]
    pub cells_per_eps: Option<f64>,
    #[serde(default)]
    pub diagonal: DiagonalPolicy,
    pub seed: u64,
}

fn unit_cutoff() -> f64 {
    1.0
}

impl MomentConfig {
    pub fn kernel(&self) -> Result<RenormKernel> {
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel cutoff {} must be positive", self.cutoff)));
        }
        let k = match self.re {
            Some(re) => RenormKernel::with_re(self.gamma, re, self.geometry.clone()),
            None => RenormKernel::new(self.gamma, self.alpha, self.m2, self.geometry.clone()),
        }?;
        Ok(k.with_cutoff(self.cutoff))
    }

    pub fn functional(&self, theta: [f64; 2]) -> Result<TwoPointFunctional> {
        TwoPointFunctional::new(ChaosTruncSpec::for_order(self.m1), ChaosTruncSpec::for_order(self.m2), theta, self.deriv)
    }

    pub fn step(&self, eps: f64) -> f64 {
        self.cells_per_eps.map_or(self.h, |c| eps / c)
    }

    /// `a = α(m₁+m₂)/2` and `b = γ − a`.
    pub fn exponents(&self) -> (f64, f64) {
        let a = self.alpha * (self.m1 + self.m2) as f64 / 2.0;
        (a, self.gamma - a)
    }
}

/// One output row: `eps, lambda, theta_x, theta_y, n, estimate, ci_lo, ci_hi, n_samples, seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub eps: f64,
    pub lambda: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub n: u32,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_samples: usize,
    pub seed: u64,
}

pub const MOMENT_CSV_HEADER: [&str; 10] =
    ["eps", "lambda", "theta_x", "theta_y", "n", "estimate", "ci_lo", "ci_hi", "n_samples", "seed"];

/// Moment estimates for every `(λ, Θ)` at one `ε`, reusing each field draw across the grid.
pub fn moment_table(cfg: &MomentConfig, eps: f64, lambdas: &[f64], thetas: &[[f64; 2]]) -> Result<Vec<MomentRow>> {
    let g = &cfg.geometry;
    let h = cfg.step(eps);
    if eps < 2.0 * h {
        return Err(Error::Resolution { lambda: eps, h });
    }
    let extent: Vec<f64> = g.s().iter().map(|s| Y_RADIUS.powf(*s)).collect();
    let lattice = build_lattice(g, h, &extent)?;
    let spec = CovarianceSpec::new(cfg.alpha, eps, cfg.lambda_const)?;
    let spectrum = build_spectrum(&spec, &lattice)?;
    let kernel = cfg.kernel()?;
    let ops: Vec<OperatorConfig> = lambdas
        .iter()
        .map(|l| {
            let test = TestFunction::new(vec![0.0; g.dim()], *l)?;
            OperatorConfig::new(kernel.clone(), test, lattice.clone(), cfg.diagonal)
        })
        .collect::<Result<_>>()?;
    let fs: Vec<TwoPointFunctional> = thetas.iter().map(|t| cfg.functional(*t)).collect::<Result<_>>()?;
    let per_sample: Vec<Vec<f64>> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let sample = sample_field(&spectrum, cfg.seed, i);
            let mut out = Vec::with_capacity(ops.len() * fs.len());
            for op in &ops {
                out.extend(op.apply_many(&fs, &sample)?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(ops.len() * fs.len());
    for (li, lambda) in lambdas.iter().enumerate() {
        for (ti, theta) in thetas.iter().enumerate() {
            let col: Vec<f64> = per_sample.iter().map(|r| r[li * fs.len() + ti]).collect();
            let boot_seed = derive_seed(derive_seed(cfg.seed, spectrum.id()), (li * fs.len() + ti) as u64);
            let est = moment_norm(&col, cfg.n, boot_seed)?;
            rows.push(MomentRow {
                eps,
                lambda: *lambda,
                theta_x: theta[0],
                theta_y: theta[1],
                n: cfg.n,
                estimate: est.value,
                ci_lo: est.ci[0],
                ci_hi: est.ci[1],
                n_samples: est.n_samples,
                seed: cfg.seed,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqSweep {
    pub rows: Vec<MomentRow>,
    /// Max over min of the nonzero estimates.
    pub ratio: f64,
}

/// Moment norms across a frequency grid at fixed `(ε, λ)`.
pub fn freq_sweep(cfg: &MomentConfig, eps: f64, lambda: f64, thetas: &[[f64; 2]]) -> Result<FreqSweep> {
    let rows = moment_table(cfg, eps, &[lambda], thetas)?;
    Ok(FreqSweep { ratio: spread_ratio(&rows), rows })
}

fn spread_ratio(rows: &[MomentRow]) -> f64 {
    let nz: Vec<f64> = rows.iter().map(|r| r.estimate).filter(|v| *v > 0.0).collect();
    if nz.is_empty() {
        return f64::NAN;
    }
    let max = nz.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = nz.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<MomentRow>,
    pub eps_slope: f64,
    pub eps_slope_se: f64,
    pub lambda_slope: f64,
    pub lambda_slope_se: f64,
    /// Predicted exponents `a`, `b` and the slack `η`.
    pub a: f64,
    pub b: f64,
    pub eta: f64,
    /// `max estimate / (ε^{a−η} λ^{b−η})` over the grid.
    pub constant: f64,
    /// Same ratio's geometric mean.
    pub geo_mean_ratio: f64,
    /// Rows excluded from the fit because their interval reaches zero.
    pub flagged: Vec<usize>,
}

impl ScalingReport {
    /// Single-constant domination: no grid point exceeds the typical ratio by more than `factor`.
    pub fn dominated(&self, factor: f64) -> bool {
        self.constant.is_finite() && self.constant <= factor * self.geo_mean_ratio
    }
}

pub fn check_geometric(grid: &[f64], min_points: usize) -> Result<()> {
    if grid.len() < min_points {
        return Err(Error::InvalidParameter(format!("grid has {} points, need {min_points}", grid.len())));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted.windows(2).any(|w| w[1] / w[0] < 2.0 - 1e-9) {
        return Err(Error::InvalidParameter("grid ratio below 2".into()));
    }
    Ok(())
}

/// Moment norms on an `(ε, λ)` grid at frequency `theta`, with a log-log fit.
pub fn scaling_scan(cfg: &MomentConfig, eps_grid: &[f64], lambda_grid: &[f64], theta: [f64; 2], eta: f64) -> Result<ScalingReport> {
    check_geometric(eps_grid, 4)?;
    check_geometric(lambda_grid, 4)?;
    let mut rows = Vec::new();
    for eps in eps_grid {
        rows.extend(moment_table(cfg, *eps, lambda_grid, &[theta])?);
    }
    scaling_fit(cfg, rows, eta)
}

/// Fit `ln est = c + p ln ε + q ln λ` and compute the domination constant.
pub fn scaling_fit(cfg: &MomentConfig, rows: Vec<MomentRow>, eta: f64) -> Result<ScalingReport> {
    let (a, b) = cfg.exponents();
    let flagged: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| !(r.ci_lo > 0.0)).map(|(i, _)| i).collect();
    let kept: Vec<&MomentRow> = rows.iter().enumerate().filter(|(i, _)| !flagged.contains(i)).map(|(_, r)| r).collect();
    let x: Vec<Vec<f64>> = kept.iter().map(|r| vec![1.0, r.eps.ln(), r.lambda.ln()]).collect();
    let y: Vec<f64> = kept.iter().map(|r| r.estimate.ln()).collect();
    let (beta, se) = least_squares(&x, &y).ok_or_else(|| Error::InvalidParameter("degenerate scaling grid".into()))?;
    let ratios: Vec<f64> = kept
        .iter()
        .map(|r| r.estimate / (r.eps.powf(a - eta) * r.lambda.powf(b - eta)))
        .collect();
    let constant = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let geo_mean_ratio = (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp();
    Ok(ScalingReport {
        rows,
        eps_slope: beta[1],
        eps_slope_se: se[1],
        lambda_slope: beta[2],
        lambda_slope_se: se[2],
        a,
        b,
        eta,
        constant,
        geo_mean_ratio,
        flagged,
    })
}
