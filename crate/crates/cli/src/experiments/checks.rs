use anyhow::{bail, Context};
use rand::Rng;
use rayon::prelude::*;
use trigbound_core::clustering::{partition_sum_check, volume_sc};
use trigbound_core::experiments::{volume_lemma_check, VolumeLemmaOptions};
use trigbound_core::field::{build_spectrum_with_threshold, verify_assumption1, CovarianceSpec};
use trigbound_core::geometry::build_lattice;
use trigbound_core::isserlis::{matching_moment, WickExpansion};
use trigbound_core::kernel::{check_region_bounds, taylor_slope, RenormKernel};
use trigbound_core::nonlinearity::{window_norm, WindowNormQuery};
use trigbound_core::rng::{derive_seed, stream, tag};
use trigbound_core::stats::loglog_slope;

use super::nonlinearity;
use crate::config::ExperimentConfig;
use crate::outcome::{num, spread, Check, Outcome, Table};

pub(crate) fn verify_cov(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let g = cfg.scaling()?;
    let lattice = build_lattice(&g, cfg.geometry.h, &cfg.geometry.extent)?;
    let budget = cfg.covariance.lambda_budget;
    let mut t = Table::new(&["eps", "lag", "c_hat", "ci_lo", "ci_hi", "target"]);
    let mut out = Outcome::default();
    out.note("lattice_points", lattice.len());
    for (i, eps) in cfg.covariance.eps.iter().enumerate() {
        let spec = CovarianceSpec::new(cfg.covariance.alpha, *eps, budget)?;
        let spectrum = build_spectrum_with_threshold(&spec, &lattice, cfg.covariance.clip_threshold)?;
        let rep = verify_assumption1(&spectrum, cfg.n_samples, derive_seed(cfg.seed, i as u64))?;
        for e in &rep.per_lag {
            t.push(vec![num(*eps), num(e.lag), num(e.c_hat), num(e.lo), num(e.hi), num(e.target)]);
        }
        out.check(Check::at_most(format!("eps={eps} lambda_hat"), rep.lambda_hat, budget));
        out.check(Check::at_most(format!("eps={eps} clipped mass"), rep.clipped_mass, cfg.covariance.clip_threshold));
    }
    out.table = t;
    Ok(out)
}

/// All degree vectors of length `k` with total at most `max_total`, in lexicographic order.
pub(crate) fn degree_vectors(k: usize, max_total: u32) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, k: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for d in 0..=left {
            prefix.push(d);
            rec(prefix, k, left - d, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), k, max_total, &mut out);
    out
}

/// `A Aᵀ / k` with entries of `A` uniform on `[-1, 1]`.
pub(crate) fn random_psd(k: usize, seed: u64, index: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, index);
    let a: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
    (0..k)
        .map(|i| (0..k).map(|j| (0..k).map(|l| a[i][l] * a[j][l]).sum::<f64>() / k as f64).collect())
        .collect()
}

pub(crate) fn isserlis_check(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let sec = cfg.isserlis.as_ref().context("isserlis-check needs an [isserlis] section")?;
    let seed = derive_seed(cfg.seed, tag("isserlis-covariances"));
    let covs: Vec<Vec<Vec<f64>>> = (0..sec.covariances as u64).map(|i| random_psd(sec.variables, seed, i)).collect();
    let degrees = degree_vectors(sec.variables, sec.max_total);
    let rows: Vec<(f64, f64)> = degrees
        .par_iter()
        .map(|d| {
            let expansion = WickExpansion::new(d);
            let mut worst = (0.0f64, 0.0f64);
            for c in &covs {
                let a = expansion.eval(c)?;
                let b = matching_moment(d, c)?;
                let diff = (a - b).abs();
                worst = (worst.0.max(diff), worst.1.max(diff / b.abs().max(1.0)));
            }
            Ok(worst)
        })
        .collect::<trigbound_core::Result<_>>()?;
    let mut t = Table::new(&["degrees", "total", "max_abs_diff", "max_scaled_diff"]);
    let mut worst = 0.0f64;
    for (d, (abs, scaled)) in degrees.iter().zip(&rows) {
        let label: Vec<String> = d.iter().map(u32::to_string).collect();
        t.push(vec![label.join(" "), d.iter().sum::<u32>().to_string(), num(*abs), num(*scaled)]);
        worst = worst.max(*scaled);
    }
    let mut out = Outcome::new(t);
    out.note("degree_vectors", degrees.len());
    out.note("covariances", covs.len());
    out.check(Check::at_most("max |wick - matching| / max(1, |matching|)", worst, cfg.gate.moment_tolerance));
    Ok(out)
}

pub(crate) fn kernel_check(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let sec = cfg.kernel_check.as_ref().context("kernel-check needs a [kernel_check] section")?;
    let g = cfg.scaling()?;
    let mut t = Table::new(&["re", "quantity", "label", "samples", "value"]);
    let mut out = Outcome::default();
    out.note("config_re", cfg.resolved_re());
    for (i, re) in sec.re.iter().enumerate() {
        let k = RenormKernel::with_re(cfg.kernel.gamma, *re, g.clone())?.with_cutoff(cfg.kernel.cutoff);
        let seed = derive_seed(cfg.seed, i as u64);
        let single = check_region_bounds(&k, sec.samples, seed);
        let double = check_region_bounds(&k, 2 * sec.samples, seed);
        for (a, b) in single.regions.iter().zip(&double.regions) {
            t.push(vec![re.to_string(), "region".into(), a.region.clone(), a.samples.to_string(), num(a.max_ratio)]);
            t.push(vec![re.to_string(), "region".into(), b.region.clone(), b.samples.to_string(), num(b.max_ratio)]);
            if a.samples == 0 {
                continue;
            }
            out.check(Check::at_most(format!("re={re} {} max ratio finite", a.region), b.max_ratio, f64::MAX));
            let change = (b.max_ratio / a.max_ratio - 1.0).abs();
            out.check(Check::at_most(format!("re={re} {} doubling change", a.region), change, cfg.gate.stability));
        }
        t.push(vec![re.to_string(), "boundary_factor".into(), String::new(), (2 * sec.samples).to_string(), num(double.boundary_factor)]);
        for y in &sec.taylor_y {
            if y.len() != g.dim() {
                bail!("taylor_y point {y:?} has the wrong dimension");
            }
            for axis in 0..g.dim() {
                for sign in [1.0, -1.0] {
                    let mut e = vec![0.0; g.dim()];
                    e[axis] = sign;
                    let label = format!("y={y:?} e={}{axis}", if sign > 0.0 { "+" } else { "-" });
                    let slope = taylor_slope(&k, y, &e).unwrap_or(f64::NAN);
                    t.push(vec![re.to_string(), "taylor_slope".into(), label.clone(), String::new(), num(slope)]);
                    out.check(Check::at_least(format!("re={re} taylor slope {label}"), slope, *re as f64 - cfg.gate.taylor_slack));
                }
            }
        }
    }
    out.table = t;
    Ok(out)
}

pub(crate) fn volume_check(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let sec = cfg.volume.as_ref().context("volume-check needs a [volume] section")?;
    let g = cfg.scaling()?;
    let header = ["check", "n", "eps", "lambda", "estimate", "ci_lo", "ci_hi", "bound", "ratio"];
    let mut t = Table::new(&header);
    let mut out = Outcome::default();
    let mut violations = 0u64;
    let mut sc_ratios = Vec::new();
    for (ei, eps) in sec.eps.iter().enumerate() {
        for (li, lam) in sec.lambda.iter().enumerate() {
            let cell = derive_seed(cfg.seed, (ei * sec.lambda.len() + li) as u64);
            let p = partition_sum_check(sec.n, *eps, *lam, sec.l, &g, sec.partition_trials, derive_seed(cell, 1))?;
            violations += p.violations;
            t.push(vec![
                "partition".into(),
                sec.n.to_string(),
                num(*eps),
                num(*lam),
                p.violations.to_string(),
                String::new(),
                String::new(),
                p.trials.to_string(),
                num(p.in_sc as f64 / p.trials as f64),
            ]);
            let v = volume_sc(sec.n, *eps, *lam, sec.l, &g, sec.n_mc, derive_seed(cell, 2))?;
            t.push(vec![
                "volume_sc".into(),
                sec.n.to_string(),
                num(*eps),
                num(*lam),
                num(v.estimate),
                num(v.lo),
                num(v.hi),
                num(v.bound),
                num(v.ratio),
            ]);
            sc_ratios.push(v.ratio);
        }
    }
    out.check(Check::at_most("partition identity violations", violations as f64, 0.0));
    let (max, gm, factor) = spread(&sc_ratios);
    out.note("volume_sc_constant", [max, gm]);
    out.check(Check::at_most("volume_sc max/geometric-mean ratio", factor, cfg.gate.domination_factor));
    let k = RenormKernel::with_re(cfg.kernel.gamma, cfg.resolved_re(), g.clone())?.with_cutoff(cfg.kernel.cutoff);
    for n in &sec.lemma_n {
        let opts = VolumeLemmaOptions { l: sec.l, eta: cfg.eta, n_mc: sec.n_mc, seed: derive_seed(cfg.seed, tag("volume-lemma") ^ *n as u64) };
        let rep = volume_lemma_check(*n, &k, cfg.covariance.alpha, cfg.functional.m2, &sec.eps, &sec.lambda, &opts)?;
        for p in &rep.points {
            t.push(vec![
                format!("lemma{}", p.lemma),
                n.to_string(),
                num(p.eps),
                num(p.lambda),
                num(p.estimate),
                num(p.ci[0]),
                num(p.ci[1]),
                num(p.bound),
                num(p.ratio),
            ]);
        }
        for (j, c) in rep.constants.iter().enumerate() {
            let Some((max, gm)) = c else { continue };
            out.check(Check::at_most(format!("n={n} lemma{} max/geometric-mean ratio", j + 1), max / gm, cfg.gate.domination_factor));
        }
        out.note(&format!("lemma_constants_n{n}"), rep.constants);
    }
    out.table = t;
    Ok(out)
}

pub(crate) fn fourier_decay(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let sec = cfg.window.as_ref().context("fourier-decay needs a [window] section")?;
    let spec = nonlinearity(cfg)?;
    let mut t = Table::new(&["series", "ell", "k", "delta", "probes", "norm"]);
    let mut out = Outcome::default();
    let decay = |ell: u32, probes: usize, t: &mut Table| -> anyhow::Result<f64> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for k in &sec.k {
            let q = WindowNormQuery { ell: vec![ell], center: vec![*k], m_probe: sec.m_probe, delta: 0.0, difference: false, probes };
            let v = window_norm(&spec, &q)?;
            t.push(vec!["decay".into(), ell.to_string(), k.to_string(), num(0.0), probes.to_string(), num(v)]);
            xs.push(1.0 + k.unsigned_abs() as f64);
            ys.push(v);
        }
        Ok(loglog_slope(&xs, &ys).map_or(f64::NAN, |s| s.0))
    };
    let base = spec.k as f64 + spec.beta;
    for ell in &sec.ell {
        let slope = decay(*ell, sec.probes, &mut t)?;
        out.note(&format!("slope_ell{ell}"), slope);
        let predicted = base - *ell as f64;
        out.check(Check::at_least(format!("ell={ell} decay exponent"), -slope, predicted - cfg.gate.decay_slack));
        if let Some(p2) = sec.stability_probes {
            let s2 = decay(*ell, p2, &mut t)?;
            out.note(&format!("slope_ell{ell}_probes{p2}"), s2);
            out.check(Check::at_most(format!("ell={ell} slope change under probe doubling"), (s2 - slope).abs(), cfg.gate.probe_slack));
        }
    }
    for k in &sec.difference_k {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for d in &sec.delta {
            let q = WindowNormQuery {
                ell: vec![sec.difference_ell],
                center: vec![*k],
                m_probe: sec.m_probe,
                delta: *d,
                difference: true,
                probes: sec.probes,
            };
            let v = window_norm(&spec, &q)?;
            t.push(vec!["difference".into(), sec.difference_ell.to_string(), k.to_string(), num(*d), sec.probes.to_string(), num(v)]);
            xs.push(*d);
            ys.push(v);
        }
        let slope = loglog_slope(&xs, &ys).map_or(f64::NAN, |s| s.0);
        out.note(&format!("delta_slope_k{k}"), slope);
        out.check(Check::at_least(format!("K={k} difference delta slope"), slope, spec.beta / 2.0 - cfg.gate.difference_slack));
    }
    out.table = t;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_vectors_are_complete() {
        // Stars and bars: vectors of length k with sum <= n number C(n + k, k).
        assert_eq!(degree_vectors(4, 10).len(), 1001);
        assert_eq!(degree_vectors(2, 1), vec![vec![0, 0], vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn random_covariances_are_psd() {
        for i in 0..20 {
            let c = random_psd(4, 9, i);
            assert!(trigbound_core::isserlis::cholesky(&c).is_ok());
            assert_eq!(c[1][2], c[2][1]);
        }
    }
}
