use anyhow::{bail, Context};
use rayon::prelude::*;
use trigbound_core::experiments::MomentEstimate;
use trigbound_core::models::{
    build_object, holder_norm, mollification_gap as gap, remainder_pairing, Family, ModelField, ModelObject,
    ModelObjectSpec, PairingQuery, Symbol,
};
use trigbound_core::rng::{derive_seed, tag};
use trigbound_core::stats::{loglog_slope, mean};

use super::nonlinearity;
use crate::config::{ExperimentConfig, ModelConfig};
use crate::outcome::{num, spread, Check, Outcome, Table};

fn symbols(m: &ModelConfig) -> Vec<Symbol> {
    if !m.symbols.is_empty() {
        return m.symbols.clone();
    }
    match m.family {
        Family::Kpz => vec![Symbol::Zero, Symbol::One, Symbol::Two],
        Family::Phi43 => vec![Symbol::Zero, Symbol::One, Symbol::Two, Symbol::Three],
    }
}

fn symbol_name(s: Symbol) -> &'static str {
    match s {
        Symbol::Zero => "0'",
        Symbol::One => "1'",
        Symbol::Two => "2'",
        Symbol::Three => "3'",
    }
}

fn family_model(cfg: &ExperimentConfig, family: Family) -> anyhow::Result<&ModelConfig> {
    let m = cfg.model()?;
    if m.family != family {
        bail!("[model] declares family {:?}, this experiment needs {family:?}", m.family);
    }
    Ok(m)
}

pub(crate) fn object(cfg: &ExperimentConfig, family: Family) -> anyhow::Result<Outcome> {
    let m = family_model(cfg, family)?;
    if cfg.n_samples < 2 {
        bail!("n_samples must be at least 2 for a standard error");
    }
    let eps = m.epsilon[0];
    let field = ModelField::new(family, eps, &m.lattice)?;
    let spec = nonlinearity(cfg)?;
    let a = match m.a {
        Some(a) => a,
        None => field.coupling(&spec)?,
    };
    let syms = symbols(m);
    let renorm_seed = derive_seed(cfg.seed, tag("renormalization"));
    let objs: Vec<ModelObject> = syms
        .iter()
        .map(|s| {
            let os = ModelObjectSpec { family, symbol: *s, nonlinearity: spec.clone(), a, epsilon: eps, renorm: m.renorm };
            build_object(&os, &field, cfg.n_samples, renorm_seed)
        })
        .collect::<trigbound_core::Result<_>>()?;
    let means: Vec<Vec<f64>> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let psi = field.sample(cfg.seed, k);
            objs.iter().map(|o| mean(&o.eval_field(&psi))).collect()
        })
        .collect();
    let psi0 = field.sample(cfg.seed, 0);
    let mut t = Table::new(&["symbol", "constant", "mean", "std_error", "holder_alpha", "holder_norm", "argmax_lambda"]);
    let mut out = Outcome::default();
    out.note("epsilon", eps);
    out.note("a", a);
    out.note("sigma2", field.sigma2());
    out.note("sites", field.lattice().len());
    for (j, (s, o)) in syms.iter().zip(&objs).enumerate() {
        let col: Vec<f64> = means.iter().map(|r| r[j]).collect();
        let mu = mean(&col);
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (col.len() - 1) as f64;
        let se = (var / col.len() as f64).sqrt();
        let h = holder_norm(&o.eval_field(&psi0), field.lattice(), m.holder_alpha, m.holder_levels, m.holder_stride)?;
        t.push(vec![
            symbol_name(*s).into(),
            num(o.constant),
            num(mu),
            num(se),
            num(h.alpha),
            num(h.value),
            num(h.argmax_lambda),
        ]);
        out.check(Check::at_most(format!("<{}> |mean| - z*se", symbol_name(*s)), mu.abs() - cfg.gate.mean_z * se, 1e-12));
    }
    out.table = t;
    Ok(out)
}

const PAIRING_HEADER: [&str; 12] =
    ["family", "eps", "lambda", "delta", "n", "estimate", "ci_lo", "ci_hi", "n_samples", "seed", "bound", "ratio"];

fn pairing_row(family: Family, q: &PairingQuery, e: &MomentEstimate, bound: Option<f64>) -> Vec<String> {
    let fam = match family {
        Family::Kpz => "kpz",
        Family::Phi43 => "phi43",
    };
    let (b, r) = match bound {
        Some(b) => (num(b), num(e.value / b)),
        None => (String::new(), String::new()),
    };
    vec![
        fam.into(),
        num(q.epsilon),
        num(q.lambda),
        num(q.delta),
        q.n.to_string(),
        num(e.value),
        num(e.ci[0]),
        num(e.ci[1]),
        e.n_samples.to_string(),
        q.seed.to_string(),
        b,
        r,
    ]
}

pub(crate) fn remainder_sweep(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let m = cfg.model()?;
    let spec = nonlinearity(cfg)?;
    let eps = m.epsilon[0];
    let lambda = *m.lambda.first().context("[model] needs a lambda value")?;
    let mut t = Table::new(&PAIRING_HEADER);
    let mut out = Outcome::default();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut at_zero = 0.0f64;
    for d in &m.delta {
        let q = PairingQuery {
            family: m.family,
            nonlinearity: spec.clone(),
            epsilon: eps,
            lattice: m.lattice,
            delta: *d,
            lambda,
            n: cfg.n,
            n_samples: cfg.n_samples,
            seed: cfg.seed,
        };
        let e = remainder_pairing(&q)?;
        t.push(pairing_row(m.family, &q, &e, None));
        if *d == 0.0 {
            at_zero = at_zero.max(e.value.abs());
        } else {
            xs.push(*d);
            ys.push(e.value);
        }
    }
    if xs.len() >= 2 {
        let slope = loglog_slope(&xs, &ys).map_or(f64::NAN, |s| s.0);
        out.note("delta_slope", slope);
        out.check(Check::at_least("delta slope", slope, 0.0));
    }
    if m.delta.contains(&0.0) {
        out.check(Check::at_most("estimate at delta=0", at_zero, 0.0));
    }
    out.table = t;
    Ok(out)
}

pub(crate) fn mollification_gap(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let m = family_model(cfg, Family::Kpz)?;
    let spec = nonlinearity(cfg)?;
    let mut t = Table::new(&PAIRING_HEADER);
    let mut out = Outcome::default();
    let mut eps_sorted = m.epsilon.clone();
    eps_sorted.sort_by(f64::total_cmp);
    let mut grid = vec![vec![0.0; m.lambda.len()]; eps_sorted.len()];
    let mut ratios = Vec::new();
    for (ei, eps) in eps_sorted.iter().enumerate() {
        for (li, lambda) in m.lambda.iter().enumerate() {
            let q = PairingQuery {
                family: Family::Kpz,
                nonlinearity: spec.clone(),
                epsilon: *eps,
                lattice: m.lattice,
                delta: eps.powf(m.delta_exponent),
                lambda: *lambda,
                n: cfg.n,
                n_samples: cfg.n_samples,
                seed: cfg.seed,
            };
            let e = gap(&q)?;
            let bound = eps.powf(m.zeta) * lambda.powf(-0.5 + m.zeta);
            t.push(pairing_row(Family::Kpz, &q, &e, Some(bound)));
            grid[ei][li] = e.value;
            ratios.push(e.value / bound);
        }
    }
    let (max, gm, factor) = spread(&ratios);
    out.note("constant", [max, gm]);
    out.check(Check::at_most("domination max/geometric-mean ratio", factor, cfg.gate.domination_factor));
    let increases = (1..eps_sorted.len())
        .flat_map(|ei| (0..m.lambda.len()).map(move |li| (ei, li)))
        .filter(|(ei, li)| grid[ei - 1][*li] > grid[*ei][*li])
        .count();
    out.check(Check::at_most("estimates growing as eps shrinks", increases as f64, 0.0));
    out.table = t;
    Ok(out)
}
