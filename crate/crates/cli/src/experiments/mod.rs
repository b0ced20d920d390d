//! The twelve experiments, each mapping a config to an [`Outcome`].

mod checks;
mod models;
mod moments;

use std::fmt;
use std::str::FromStr;

use anyhow::bail;

use crate::config::ExperimentConfig;
use crate::outcome::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    VerifyCov,
    IsserlisCheck,
    KernelCheck,
    FreqSweep,
    ScalingScan,
    VolumeCheck,
    FourierDecay,
    LemmaCheck,
    KpzObject,
    Phi43Object,
    RemainderSweep,
    MollificationGap,
}

impl Experiment {
    pub const ALL: [Experiment; 12] = [
        Experiment::VerifyCov,
        Experiment::IsserlisCheck,
        Experiment::KernelCheck,
        Experiment::FreqSweep,
        Experiment::ScalingScan,
        Experiment::VolumeCheck,
        Experiment::FourierDecay,
        Experiment::LemmaCheck,
        Experiment::KpzObject,
        Experiment::Phi43Object,
        Experiment::RemainderSweep,
        Experiment::MollificationGap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::VerifyCov => "verify-cov",
            Experiment::IsserlisCheck => "isserlis-check",
            Experiment::KernelCheck => "kernel-check",
            Experiment::FreqSweep => "freq-sweep",
            Experiment::ScalingScan => "scaling-scan",
            Experiment::VolumeCheck => "volume-check",
            Experiment::FourierDecay => "fourier-decay",
            Experiment::LemmaCheck => "lemma-check",
            Experiment::KpzObject => "kpz-object",
            Experiment::Phi43Object => "phi43-object",
            Experiment::RemainderSweep => "remainder-sweep",
            Experiment::MollificationGap => "mollification-gap",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match Experiment::ALL.iter().find(|e| e.name() == s) {
            Some(e) => Ok(*e),
            None => {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                bail!("unknown experiment '{s}'; expected one of {}", names.join(", "))
            }
        }
    }
}

pub(crate) fn nonlinearity(cfg: &ExperimentConfig) -> anyhow::Result<trigbound_core::nonlinearity::NonlinearitySpec> {
    use anyhow::Context;
    let kind = cfg.nonlinearity.clone().context("this experiment needs a [nonlinearity] section")?;
    Ok(trigbound_core::nonlinearity::make_nonlinearity(kind)?)
}

/// Runs `exp` on the current rayon pool.
pub fn dispatch(cfg: &ExperimentConfig, exp: Experiment) -> anyhow::Result<Outcome> {
    match exp {
        Experiment::VerifyCov => checks::verify_cov(cfg),
        Experiment::IsserlisCheck => checks::isserlis_check(cfg),
        Experiment::KernelCheck => checks::kernel_check(cfg),
        Experiment::FreqSweep => moments::freq_sweep(cfg),
        Experiment::ScalingScan => moments::scaling_scan(cfg),
        Experiment::VolumeCheck => checks::volume_check(cfg),
        Experiment::FourierDecay => checks::fourier_decay(cfg),
        Experiment::LemmaCheck => moments::lemma_check(cfg),
        Experiment::KpzObject => models::object(cfg, trigbound_core::models::Family::Kpz),
        Experiment::Phi43Object => models::object(cfg, trigbound_core::models::Family::Phi43),
        Experiment::RemainderSweep => models::remainder_sweep(cfg),
        Experiment::MollificationGap => models::mollification_gap(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        let err = "frequency-sweep".parse::<Experiment>().unwrap_err().to_string();
        assert!(err.contains("freq-sweep"));
    }
}
