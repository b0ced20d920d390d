//! Experiment configuration: one TOML file per run, or the `config` object embedded in a manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use trigbound_core::chaos::{ChaosTruncSpec, Trig, MAX_DERIV};
use trigbound_core::isserlis::LemmaKind;
use trigbound_core::kernel::{compute_re, MAX_RE};
use trigbound_core::models::{Family, ModelLatticeSpec, Renorm, Symbol};
use trigbound_core::nonlinearity::NonlinearityKind;
use trigbound_core::ScalingGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Default experiment when `--experiment` is not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    pub n: u32,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(rename = "L0")]
    pub l0: f64,
    pub eta: f64,
    pub geometry: GeometryConfig,
    pub covariance: CovarianceConfig,
    pub kernel: KernelConfig,
    pub functional: FunctionalConfig,
    pub grids: GridConfig,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isserlis: Option<IsserlisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_check: Option<KernelCheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<VolumeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<LemmaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearityKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Scaling exponents `s`.
    pub scaling: Vec<f64>,
    /// Lattice step.
    pub h: f64,
    /// When set, moment experiments use the step `ε / cells_per_eps` instead of `h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells_per_eps: Option<f64>,
    /// Half-widths of the sampling box per axis.
    pub extent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceConfig {
    pub alpha: f64,
    pub eps: Vec<f64>,
    /// Sandwich constant `Λ`.
    pub lambda_budget: f64,
    #[serde(default = "default_clip")]
    pub clip_threshold: f64,
}

fn default_clip() -> f64 {
    trigbound_core::field::DEFAULT_CLIP_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

/// Taylor order: `"auto"` derives it from `(γ, α, m₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReMode {
    Auto(AutoKeyword),
    Fixed(u32),
}

impl Default for ReMode {
    fn default() -> Self {
        ReMode::Auto(AutoKeyword::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub gamma: f64,
    #[serde(default)]
    pub re: ReMode,
    #[serde(default = "one")]
    pub cutoff: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub m1: u32,
    pub m2: u32,
    /// Trigonometric function of each factor; must carry the parity of `m₁`, `m₂`.
    pub trig: [Trig; 2],
    #[serde(default)]
    pub deriv: [u32; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lambda: Vec<f64>,
    /// Frequencies swept along each axis in `sweep_axes`.
    pub theta_values: Vec<f64>,
    /// Frequency held on the other axis, and on both axes in scaling scans.
    pub theta_base: f64,
    #[serde(default = "both_axes")]
    pub sweep_axes: Vec<Axis>,
}

fn both_axes() -> Vec<Axis> {
    vec![Axis::X, Axis::Y]
}

/// Acceptance thresholds; each experiment reads the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    /// Ceiling on the max/min moment ratio of a frequency sweep.
    pub ratio_ceiling: f64,
    /// Largest allowed `max / geometric mean` of a domination ratio over a grid.
    pub domination_factor: f64,
    /// The fitted ε-slope may fall short of `a − η` by this much.
    pub slope_slack: f64,
    /// Relative change allowed when a sample count or probe family is doubled.
    pub stability: f64,
    /// Taylor cancellation slope may fall short of `r_e` by this much.
    pub taylor_slack: f64,
    /// Accepted disagreement between the two moment oracles.
    pub moment_tolerance: f64,
    /// Window-norm decay exponent may fall short of `k + β − ℓ` by this much.
    pub decay_slack: f64,
    /// Allowed change of a decay slope under probe doubling.
    pub probe_slack: f64,
    /// Difference-norm δ-slope may fall short of `β/2` by this much.
    pub difference_slack: f64,
    /// Ceiling on correlation-lemma ratios.
    pub lemma_ceiling: f64,
    /// Sample means of renormalized objects must lie within this many standard errors of 0.
    pub mean_z: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            ratio_ceiling: 3.0,
            domination_factor: 10.0,
            slope_slack: 0.05,
            stability: 0.2,
            taylor_slack: 0.05,
            moment_tolerance: 1e-12,
            decay_slack: 0.2,
            probe_slack: 0.1,
            difference_slack: 0.1,
            lemma_ceiling: 10.0,
            mean_z: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsserlisConfig {
    /// Random covariance matrices drawn.
    pub covariances: usize,
    /// Number of Gaussian variables.
    pub variables: usize,
    /// Largest total degree.
    pub max_total: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCheckConfig {
    /// Taylor orders checked, in addition to none.
    pub re: Vec<u32>,
    pub samples: u64,
    /// Base points for the Taylor cancellation slope.
    pub taylor_y: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeConfig {
    /// Half the number of points for the partition identity and the `S^c` volume.
    pub n: usize,
    /// Values of `n` for the two volume lemmas.
    pub lemma_n: Vec<usize>,
    /// Cluster scale in units of ε.
    pub l: f64,
    pub eps: Vec<f64>,
    pub lambda: Vec<f64>,
    pub n_mc: u64,
    pub partition_trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSection {
    pub kinds: Vec<LemmaKind>,
    pub thetas: Vec<[f64; 2]>,
    /// Point configurations per frequency pair.
    pub configs: usize,
    /// Field draws per configuration.
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub ell: Vec<u32>,
    /// Window centres `K`.
    pub k: Vec<i64>,
    pub m_probe: u32,
    pub probes: usize,
    /// Probe count of the stability rerun; skipped when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_probes: Option<usize>,
    /// Mollification scales of the difference norm.
    pub delta: Vec<f64>,
    pub difference_ell: u32,
    pub difference_k: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub lattice: ModelLatticeSpec,
    pub epsilon: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Mollification scales of a remainder sweep.
    #[serde(default)]
    pub delta: Vec<f64>,
    /// The mollification gap uses `δ = ε^ν`.
    #[serde(default = "half")]
    pub delta_exponent: f64,
    /// Exponent `ζ'` of the mollification-gap bound `ε^{ζ'} λ^{−1/2+ζ'}`.
    #[serde(default = "small_zeta")]
    pub zeta: f64,
    #[serde(default)]
    pub symbols: Vec<Symbol>,
    #[serde(default)]
    pub renorm: Renorm,
    /// Coupling constant; the Gaussian average of the nonlinearity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    pub holder_alpha: f64,
    pub holder_levels: usize,
    pub holder_stride: usize,
}

fn half() -> f64 {
    0.5
}

fn small_zeta() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// File names inside `dir`; default to `<experiment>.csv` and `<experiment>.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), csv: None, manifest: None }
    }
}

/// A config together with the experiment a manifest recorded, if any.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub experiment: Option<String>,
}

/// Reads a TOML config, or the embedded config of a JSON manifest.
pub fn load(path: &Path) -> anyhow::Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Some(cfg) = v.get("config") else { bail!("{} has no embedded config", path.display()) };
        let config: ExperimentConfig = serde_json::from_value(cfg.clone()).context("embedded config")?;
        let experiment = v.get("experiment").and_then(|e| e.as_str()).map(str::to_owned);
        return Ok(Loaded { config, experiment });
    }
    let config: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let experiment = config.experiment.clone();
    Ok(Loaded { config, experiment })
}

impl ExperimentConfig {
    pub fn scaling(&self) -> anyhow::Result<ScalingGeometry> {
        Ok(ScalingGeometry::new(self.geometry.scaling.clone())?)
    }

    /// Explicit Taylor order, or `None` for the derived one.
    pub fn re_override(&self) -> Option<u32> {
        match self.kernel.re {
            ReMode::Auto(_) => None,
            ReMode::Fixed(r) => Some(r),
        }
    }

    /// The Taylor order the kernel will use.
    pub fn resolved_re(&self) -> u32 {
        self.re_override().unwrap_or_else(|| compute_re(self.kernel.gamma, self.covariance.alpha, self.functional.m2))
    }

    pub fn model(&self) -> anyhow::Result<&ModelConfig> {
        self.model.as_ref().context("config has no [model] section")
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// All constraint and parity violations; empty when the config is admissible.
pub fn validate(cfg: &ExperimentConfig) -> Vec<String> {
    let mut v = Vec::new();
    let geo = &cfg.geometry;
    if geo.scaling.is_empty() || geo.scaling.iter().any(|s| !(*s >= 1.0 && s.is_finite())) {
        v.push(format!("scaling exponents must be >= 1: scaling={:?}", geo.scaling));
    }
    if geo.extent.len() != geo.scaling.len() || geo.extent.iter().any(|e| !positive(*e)) {
        v.push(format!("extent needs one positive entry per axis: extent={:?}, d={}", geo.extent, geo.scaling.len()));
    }
    if !positive(geo.h) {
        v.push(format!("lattice step must be positive: h={}", geo.h));
    }
    if let Some(c) = geo.cells_per_eps {
        if !(c >= 2.0 && c.is_finite()) {
            v.push(format!("cells_per_eps must be >= 2: cells_per_eps={c}"));
        }
    }
    let s: f64 = geo.scaling.iter().sum();
    let (alpha, gamma) = (cfg.covariance.alpha, cfg.kernel.gamma);
    let (m1, m2) = (cfg.functional.m1 as f64, cfg.functional.m2 as f64);
    if !(0.0 < alpha * m1 && alpha * m1 < s) {
        v.push(format!("0 < αm₁ < |s| violated: α={alpha}, m₁={m1}, αm₁={}, |s|={s}", alpha * m1));
    }
    if !(0.0 < alpha * m2 && alpha * m2 < s) {
        v.push(format!("0 < αm₂ < |s| violated: α={alpha}, m₂={m2}, αm₂={}, |s|={s}", alpha * m2));
    }
    if !(alpha * (m1 + m2) <= s + 2.0 * gamma + 1e-12) {
        v.push(format!(
            "α(m₁+m₂) ≤ |s| + 2γ violated: α(m₁+m₂)={}, |s|+2γ={}",
            alpha * (m1 + m2),
            s + 2.0 * gamma
        ));
    }
    if !(gamma > 0.0) {
        v.push(format!("0 < γ violated: γ={gamma}"));
    }
    if !(gamma <= s / 2.0 + 1e-12) {
        v.push(format!("γ ≤ |s|/2 violated: γ={gamma}, |s|/2={}", s / 2.0));
    }
    for (name, trig, m) in [("m₁", cfg.functional.trig[0], cfg.functional.m1), ("m₂", cfg.functional.trig[1], cfg.functional.m2)] {
        if m == 0 {
            v.push(format!("truncation order {name} must be positive"));
        } else if ChaosTruncSpec::new(trig, m).is_err() {
            let want = if m % 2 == 1 { "sin" } else { "cos" };
            v.push(format!("parity violated: {name}={m} needs {want}, got {trig:?}"));
        }
    }
    if cfg.functional.deriv.iter().any(|d| *d > MAX_DERIV) {
        v.push(format!("derivative orders exceed {MAX_DERIV}: deriv={:?}", cfg.functional.deriv));
    }
    if let Some(r) = cfg.re_override() {
        if r > MAX_RE {
            v.push(format!("r_e ≤ {MAX_RE} violated: re={r}"));
        }
    }
    if !positive(cfg.kernel.cutoff) {
        v.push(format!("kernel cutoff must be positive: cutoff={}", cfg.kernel.cutoff));
    }
    if cfg.covariance.eps.is_empty() || cfg.covariance.eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        v.push(format!("ε values must lie in (0,1): eps={:?}", cfg.covariance.eps));
    }
    if !(cfg.covariance.lambda_budget >= 1.0) {
        v.push(format!("Λ ≥ 1 violated: lambda_budget={}", cfg.covariance.lambda_budget));
    }
    if !(cfg.covariance.clip_threshold > 0.0 && cfg.covariance.clip_threshold < 1.0) {
        v.push(format!("clip threshold must lie in (0,1): clip_threshold={}", cfg.covariance.clip_threshold));
    }
    if cfg.grids.lambda.is_empty() || cfg.grids.lambda.iter().any(|l| !positive(*l)) {
        v.push(format!("λ grid must be nonempty and positive: lambda={:?}", cfg.grids.lambda));
    }
    if cfg.grids.theta_values.is_empty() || cfg.grids.theta_values.iter().any(|t| !t.is_finite()) {
        v.push(format!("θ grid must be nonempty and finite: theta_values={:?}", cfg.grids.theta_values));
    }
    if !cfg.grids.theta_base.is_finite() {
        v.push(format!("theta_base must be finite: theta_base={}", cfg.grids.theta_base));
    }
    if cfg.n == 0 {
        v.push("n must be positive".into());
    }
    if cfg.n_samples == 0 {
        v.push("n_samples must be positive".into());
    }
    if !positive(cfg.l0) {
        v.push(format!("L0 must be positive: L0={}", cfg.l0));
    }
    if !(cfg.eta >= 0.0 && cfg.eta < 1.0) {
        v.push(format!("η must lie in [0,1): eta={}", cfg.eta));
    }
    if let Some(m) = &cfg.model {
        if m.family.geometry().s() != geo.scaling.as_slice() {
            v.push(format!(
                "model family {:?} needs scaling {:?}, got {:?}",
                m.family,
                m.family.geometry().s(),
                geo.scaling
            ));
        }
        if m.epsilon.is_empty() || m.epsilon.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            v.push(format!("model ε values must lie in (0,1): epsilon={:?}", m.epsilon));
        }
        if m.delta.iter().any(|d| !(0.0..1.0).contains(d)) {
            v.push(format!("model δ values must lie in [0,1): delta={:?}", m.delta));
        }
        if !(m.holder_alpha < 0.0) {
            v.push(format!("Hölder exponent must be negative: holder_alpha={}", m.holder_alpha));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base() -> ExperimentConfig {
        toml::from_str(
            r#"
            n = 2
            n_samples = 100
            seed = 1
            L0 = 8.0
            eta = 0.1
            [geometry]
            scaling = [1.0]
            h = 0.01
            extent = [1.0]
            [covariance]
            alpha = 0.6
            eps = [0.05]
            lambda_budget = 2.0
            [kernel]
            gamma = 0.4
            re = "auto"
            [functional]
            m1 = 1
            m2 = 1
            trig = ["sin", "sin"]
            [grids]
            lambda = [0.2]
            theta_values = [1.0, 10.0]
            theta_base = 1.0
            "#,
        )
        .unwrap()
    }

    #[test]
    fn reference_config_is_valid() {
        assert!(validate(&base()).is_empty(), "{:?}", validate(&base()));
    }

    #[test]
    fn phi43_parameters_are_valid() {
        let mut c = base();
        c.geometry.scaling = vec![2.0, 1.0, 1.0, 1.0];
        c.geometry.extent = vec![1.0; 4];
        c.covariance.alpha = 1.0;
        c.functional.m1 = 2;
        c.functional.m2 = 3;
        c.functional.trig = [Trig::Cos, Trig::Sin];
        c.kernel.gamma = 2.0;
        assert!(validate(&c).is_empty(), "{:?}", validate(&c));
        assert_eq!(c.resolved_re(), 1);
    }

    #[test]
    fn large_gamma_is_reported() {
        let mut c = base();
        c.kernel.gamma = 0.6;
        let v = validate(&c);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("γ ≤ |s|/2"), "{v:?}");
        assert!(v[0].contains("γ=0.6"));
    }

    #[test]
    fn parity_mismatch_is_reported() {
        let mut c = base();
        c.functional.trig = [Trig::Cos, Trig::Sin];
        let v = validate(&c);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("parity") && v[0].contains("m₁=1"), "{v:?}");
    }

    #[test]
    fn re_mode_parses_both_forms() {
        let mut c = base();
        assert_eq!(c.re_override(), None);
        c = toml::from_str(&toml::to_string(&c).unwrap().replace("re = \"auto\"", "re = 1")).unwrap();
        assert_eq!(c.re_override(), Some(1));
        assert!(toml::from_str::<KernelConfig>("gamma = 0.4\nre = \"often\"").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = toml::to_string(&base()).unwrap().replace("eta = 0.1", "eta = 0.1\ntypo = 3");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
    }
}
