use anyhow::Context;
use trigbound_core::experiments::{self as ex, MomentConfig, MomentRow, MOMENT_CSV_HEADER};
use trigbound_core::isserlis::{check_correlation_lemma, LemmaConfig};

use crate::config::{Axis, ExperimentConfig};
use crate::outcome::{num, Check, Outcome, Table};

pub(crate) fn moment_config(cfg: &ExperimentConfig) -> anyhow::Result<MomentConfig> {
    Ok(MomentConfig {
        geometry: cfg.scaling()?,
        alpha: cfg.covariance.alpha,
        lambda_const: cfg.covariance.lambda_budget,
        m1: cfg.functional.m1,
        m2: cfg.functional.m2,
        deriv: cfg.functional.deriv,
        gamma: cfg.kernel.gamma,
        re: cfg.re_override(),
        cutoff: cfg.kernel.cutoff,
        n: cfg.n,
        n_samples: cfg.n_samples,
        h: cfg.geometry.h,
        cells_per_eps: cfg.geometry.cells_per_eps,
        diagonal: Default::default(),
        seed: cfg.seed,
    })
}

fn moment_table(rows: &[MomentRow]) -> Table {
    let mut t = Table::new(&MOMENT_CSV_HEADER);
    for r in rows {
        t.push(vec![
            num(r.eps),
            num(r.lambda),
            num(r.theta_x),
            num(r.theta_y),
            r.n.to_string(),
            num(r.estimate),
            num(r.ci_lo),
            num(r.ci_hi),
            r.n_samples.to_string(),
            r.seed.to_string(),
        ]);
    }
    t
}

fn theta_of(axis: Axis, t: f64, base: f64) -> [f64; 2] {
    match axis {
        Axis::X => [t, base],
        Axis::Y => [base, t],
    }
}

/// Max over min of the estimates on one sweep.
fn ratio(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub(crate) fn freq_sweep(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let mc = moment_config(cfg)?;
    let eps = cfg.covariance.eps[0];
    let lambda = cfg.grids.lambda[0];
    let base = cfg.grids.theta_base;
    let mut thetas: Vec<[f64; 2]> = Vec::new();
    for axis in &cfg.grids.sweep_axes {
        for t in &cfg.grids.theta_values {
            let th = theta_of(*axis, *t, base);
            if !thetas.contains(&th) {
                thetas.push(th);
            }
        }
    }
    let sweep = ex::freq_sweep(&mc, eps, lambda, &thetas)?;
    let mut out = Outcome::new(moment_table(&sweep.rows));
    out.note("eps", eps);
    out.note("lambda", lambda);
    for axis in &cfg.grids.sweep_axes {
        let values: Vec<f64> = cfg
            .grids
            .theta_values
            .iter()
            .map(|t| {
                let th = theta_of(*axis, *t, base);
                let i = thetas.iter().position(|x| *x == th).expect("theta was queued");
                sweep.rows[i].estimate
            })
            .collect();
        let name = match axis {
            Axis::X => "x",
            Axis::Y => "y",
        };
        let r = ratio(&values);
        out.note(&format!("ratio_{name}"), r);
        out.check(Check::at_most(format!("{name}-sweep max/min ratio"), r, cfg.gate.ratio_ceiling));
    }
    Ok(out)
}

pub(crate) fn scaling_scan(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let mc = moment_config(cfg)?;
    let base = cfg.grids.theta_base;
    let rep = ex::scaling_scan(&mc, &cfg.covariance.eps, &cfg.grids.lambda, [base, base], cfg.eta)?;
    let mut out = Outcome::new(moment_table(&rep.rows));
    for (k, v) in [
        ("eps_slope", rep.eps_slope),
        ("eps_slope_se", rep.eps_slope_se),
        ("lambda_slope", rep.lambda_slope),
        ("lambda_slope_se", rep.lambda_slope_se),
        ("a", rep.a),
        ("b", rep.b),
        ("eta", rep.eta),
        ("constant", rep.constant),
        ("geo_mean_ratio", rep.geo_mean_ratio),
    ] {
        out.note(k, v);
    }
    out.note("flagged_rows", &rep.flagged);
    out.check(Check::at_most(
        "domination max/geometric-mean ratio",
        rep.constant / rep.geo_mean_ratio,
        cfg.gate.domination_factor,
    ));
    out.check(Check::at_least("fitted eps slope", rep.eps_slope, rep.a - rep.eta - cfg.gate.slope_slack));
    Ok(out)
}

pub(crate) fn lemma_check(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let sec = cfg.lemma.as_ref().context("lemma-check needs a [lemma] section")?;
    let mut t = Table::new(&["lemma", "theta_x", "theta_y", "ratio", "ci_lo", "ci_hi"]);
    let mut out = Outcome::default();
    for (i, kind) in sec.kinds.iter().enumerate() {
        let lc = LemmaConfig {
            geometry: cfg.scaling()?,
            n: cfg.n as usize,
            alpha: cfg.covariance.alpha,
            epsilon: cfg.covariance.eps[0],
            lambda_const: cfg.covariance.lambda_budget,
            m1: cfg.functional.m1,
            m2: cfg.functional.m2,
            deriv: cfg.functional.deriv,
            thetas: sec.thetas.clone(),
            l0: cfg.l0,
            configs: sec.configs,
            samples: sec.samples,
            spread: sec.spread,
            seed: trigbound_core::rng::derive_seed(cfg.seed, i as u64),
        };
        let rep = check_correlation_lemma(*kind, &lc)?;
        for p in &rep.grid {
            t.push(vec![kind.name().into(), num(p.theta[0]), num(p.theta[1]), num(p.ratio), num(p.ci[0]), num(p.ci[1])]);
        }
        out.note(&format!("{}_rejections", kind.name()), rep.rejections);
        out.note(&format!("{}_l0_sensitivity", kind.name()), &rep.l0_sensitivity);
        out.check(Check::at_least(format!("{} admissible frequency pairs", kind.name()), rep.grid.len() as f64, 1.0));
        out.check(Check::at_most(format!("{} max ratio", kind.name()), rep.max_ratio, cfg.gate.lemma_ceiling));
    }
    out.table = t;
    Ok(out)
}
