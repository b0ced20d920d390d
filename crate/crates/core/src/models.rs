//! Lattice realizations of the first-order KPZ and Φ⁴₃ objects, the two-frequency
//! remainder pairings, the mollification gap and negative Hölder norms.
//!
//! Fields live on a periodic space-time lattice with parabolic scaling `(2, 1, …)`:
//! `Ψ_ε = D P_{·+ε²} ∗ ξ` where `ξ` is lattice white noise, `P` the periodic heat
//! kernel truncated smoothly in time and `D = ∂_x` for KPZ, the identity for Φ⁴₃.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::chaos::wick_power;
use crate::error::{Error, Result};
use crate::experiments::{moment_norm, MomentEstimate};
use crate::fft::NdFft;
use crate::geometry::{build_lattice_with_budget, Lattice, ScalingGeometry, TestFunction};
use crate::kernel::{compute_re, cutoff};
use crate::nonlinearity::{coupling_constant, gaussian_mean, mollify, DerivTable, NonlinearitySpec};
use crate::rng::{derive_seed, splitmix64, stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Kpz,
    Phi43,
}

impl Family {
    pub fn geometry(self) -> ScalingGeometry {
        let s = match self {
            Family::Kpz => vec![2.0, 1.0],
            Family::Phi43 => vec![2.0, 1.0, 1.0, 1.0],
        };
        ScalingGeometry::new(s).expect("parabolic scaling is valid")
    }

    pub fn space_dim(self) -> usize {
        match self {
            Family::Kpz => 1,
            Family::Phi43 => 3,
        }
    }

    /// Derivative order fixing the coupling constant `a`.
    pub fn order(self) -> u32 {
        match self {
            Family::Kpz => 2,
            Family::Phi43 => 3,
        }
    }

    /// Chaos orders `(m₁, m₂)` of the two-frequency remainder object (`⟨2'1'⟩` or `⟨3'2'⟩`).
    pub fn remainder_orders(self) -> (u32, u32) {
        match self {
            Family::Kpz => (1, 2),
            Family::Phi43 => (2, 3),
        }
    }

    /// Regularity `γ` of the integration kernel (`∂ₓP` or `P`).
    pub fn kernel_gamma(self) -> f64 {
        match self {
            Family::Kpz => 1.0,
            Family::Phi43 => 2.0,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Family::Kpz => "kpz",
            Family::Phi43 => "phi43",
        }
    }
}

/// First-order symbol `⟨k'⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symbol {
    Zero,
    One,
    Two,
    Three,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Renorm {
    #[default]
    Analytic,
    Empirical,
}

/// Derivative order of the nonlinearity and prefactor `c(a, ε)` of `(Π^ε τ)(z) = c F^{(ℓ)}(√ε Ψ_ε(z)) − …`.
fn symbol_form(family: Family, symbol: Symbol, a: f64, eps: f64) -> Result<(u32, f64)> {
    let r = eps.sqrt();
    Ok(match (family, symbol) {
        (Family::Kpz, Symbol::Zero) => (2, 1.0 / (2.0 * a)),
        (Family::Kpz, Symbol::One) => (1, 1.0 / (2.0 * a * r)),
        (Family::Kpz, Symbol::Two) => (0, 1.0 / (a * eps)),
        (Family::Phi43, Symbol::Zero) => (3, 1.0 / (6.0 * a)),
        (Family::Phi43, Symbol::One) => (2, 1.0 / (6.0 * a * r)),
        (Family::Phi43, Symbol::Two) => (1, 1.0 / (3.0 * a * eps)),
        (Family::Phi43, Symbol::Three) => (0, 1.0 / (a * eps * r)),
        (f, s) => return Err(Error::InvalidParameter(format!("symbol {s:?} does not belong to family {f:?}"))),
    })
}

/// Periodic space-time box: time axis `[-time_extent, time_extent]` with step `h²`,
/// space axes `[-space_extent, space_extent]` with step `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelLatticeSpec {
    pub h: f64,
    pub space_extent: f64,
    pub time_extent: f64,
}

impl Default for ModelLatticeSpec {
    fn default() -> Self {
        Self { h: 1.0 / 64.0, space_extent: 0.5, time_extent: 0.25 }
    }
}

const MODEL_POINT_BUDGET: usize = 1 << 23;

/// `p_τ` or `∂ₓp_τ` of the periodic heat kernel on a circle of `n` sites, by wrapped site index.
fn periodic_heat(tau: f64, n: usize, h: f64, deriv: bool) -> Vec<f64> {
    let len = n as f64 * h;
    let w = 2.0 * std::f64::consts::PI / len;
    let kmax = ((40.0 / tau).sqrt() / w).ceil() as usize + 1;
    let damp: Vec<f64> = (1..=kmax).map(|k| (-(w * k as f64).powi(2) * tau).exp()).collect();
    let half = (n / 2) as i64;
    (0..n)
        .map(|j| {
            let o = if j as i64 <= half { j as i64 } else { j as i64 - n as i64 };
            let x = o as f64 * h;
            if deriv {
                -2.0 / len * damp.iter().enumerate().map(|(k, d)| {
                    let kw = w * (k + 1) as f64;
                    kw * d * (kw * x).sin()
                }).sum::<f64>()
            } else {
                (1.0 + 2.0 * damp.iter().enumerate().map(|(k, d)| d * (w * (k + 1) as f64 * x).cos()).sum::<f64>()) / len
            }
        })
        .collect()
}

/// Row-major index in FFT (wrapped) order of each lattice-order index.
fn wrap_permutation(lattice: &Lattice) -> Vec<usize> {
    let shape = lattice.shape();
    (0..lattice.len())
        .map(|i| {
            lattice
                .offsets(i)
                .iter()
                .zip(&shape)
                .fold(0usize, |acc, (o, n)| acc * n + o.rem_euclid(*n as i64) as usize)
        })
        .collect()
}

/// Signed offsets of a wrapped-order index.
fn wrapped_offsets(mut j: usize, shape: &[usize]) -> Vec<i64> {
    let mut out = vec![0i64; shape.len()];
    for axis in (0..shape.len()).rev() {
        let n = shape[axis];
        let r = j % n;
        out[axis] = if r <= n / 2 { r as i64 } else { r as i64 - n as i64 };
        j /= n;
    }
    out
}

/// Realizations of `Ψ_ε` and the truncated integration kernel on one lattice.
#[derive(Debug, Clone)]
pub struct ModelField {
    family: Family,
    eps: f64,
    lattice: Lattice,
    fft: NdFft,
    perm: Vec<usize>,
    noise_hat: Vec<Complex<f64>>,
    kernel_hat: Vec<Complex<f64>>,
    variance: f64,
    id: u64,
}

impl ModelField {
    pub fn new(family: Family, eps: f64, spec: &ModelLatticeSpec) -> Result<Self> {
        let h = spec.h;
        if !(h > 0.0) || !(spec.space_extent > 0.0) || !(spec.time_extent > 0.0) {
            return Err(Error::InvalidParameter("lattice step and extents must be positive".into()));
        }
        if !(eps >= 2.0 * h) {
            return Err(Error::Resolution { lambda: eps, h });
        }
        let mut extent = vec![spec.time_extent];
        extent.extend(std::iter::repeat_n(spec.space_extent, family.space_dim()));
        let lattice = build_lattice_with_budget(&family.geometry(), h, &extent, MODEL_POINT_BUDGET)?;
        let shape = lattice.shape();
        let fft = NdFft::new(&shape);
        let perm = wrap_permutation(&lattice);
        let cell = lattice.cell_volume();
        let noise = stencil(family, &lattice, eps * eps);
        let variance = noise.iter().map(|v| v * v).sum::<f64>() * cell;
        let noise_hat = transform(&fft, &noise, cell);
        let kernel_hat = transform(&fft, &stencil(family, &lattice, 0.5 * lattice.steps()[0]), cell);
        let id = [eps.to_bits(), h.to_bits(), spec.space_extent.to_bits(), spec.time_extent.to_bits()]
            .iter()
            .fold(tag(family.label()), |acc, b| splitmix64(acc ^ b));
        Ok(Self { family, eps, lattice, fft, perm, noise_hat, kernel_hat, variance, id })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Exact lattice variance `E Ψ_ε(z)²`.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Variance of `√ε Ψ_ε`.
    pub fn sigma2(&self) -> f64 {
        self.eps * self.variance
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Coupling constant `a = E F^{(k)}(√ε Ψ_ε)/k!` of the family.
    pub fn coupling(&self, nonlinearity: &NonlinearitySpec) -> Result<f64> {
        coupling_constant(nonlinearity, self.sigma2(), self.family.order())
    }

    /// Draw `(seed, index)` of `Ψ_ε`, in lattice order.
    pub fn sample(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = stream(derive_seed(seed, self.id), index);
        let sd = 1.0 / self.lattice.cell_volume().sqrt();
        let mut buf: Vec<Complex<f64>> = (0..self.lattice.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                Complex::new(z * sd, 0.0)
            })
            .collect();
        self.fft.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.noise_hat) {
            *b *= s;
        }
        self.fft.inverse(&mut buf);
        self.perm.iter().map(|j| buf[*j].re).collect()
    }

    /// `(K₀ ∗ f)(x) = Σ_y K₀(x − y) f(y) |cell|` with the truncated `DP`, in lattice order.
    pub fn integrate(&self, values: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.lattice.len()];
        for (v, j) in values.iter().zip(&self.perm) {
            buf[*j] = Complex::new(*v, 0.0);
        }
        self.fft.forward(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= s;
        }
        self.fft.inverse(&mut buf);
        self.perm.iter().map(|j| buf[*j].re).collect()
    }
}

/// `χ(t/T) D p_{t+shift}(x)` for `t ≥ 0`, zero for `t < 0`, in wrapped order.
fn stencil(family: Family, lattice: &Lattice, shift: f64) -> Vec<f64> {
    let shape = lattice.shape();
    let (dt, h) = (lattice.steps()[0], lattice.steps()[1]);
    let horizon = lattice.extent()[0];
    let n = shape[1];
    let rows: Vec<Option<(f64, Vec<f64>, Vec<f64>)>> = (0..shape[0])
        .map(|jt| {
            let ot = if jt <= shape[0] / 2 { jt as i64 } else { jt as i64 - shape[0] as i64 };
            let t = ot as f64 * dt;
            let c = if t < 0.0 { 0.0 } else { cutoff(t / horizon) };
            if c == 0.0 {
                return None;
            }
            let p = periodic_heat(t + shift, n, h, false);
            let dp = match family {
                Family::Kpz => periodic_heat(t + shift, n, h, true),
                Family::Phi43 => Vec::new(),
            };
            Some((c, p, dp))
        })
        .collect();
    let per_row: usize = shape[1..].iter().product();
    let mut out = vec![0.0; lattice.len()];
    for (jt, row) in rows.iter().enumerate() {
        let Some((c, p, dp)) = row else { continue };
        for r in 0..per_row {
            let mut rest = r;
            let mut v = *c;
            for axis in (1..shape.len()).rev() {
                let j = rest % shape[axis];
                rest /= shape[axis];
                v *= if axis == 1 && family == Family::Kpz { dp[j] } else { p[j] };
            }
            out[jt * per_row + r] = v;
        }
    }
    out
}

fn transform(fft: &NdFft, values: &[f64], cell: f64) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = values.iter().map(|v| Complex::new(*v, 0.0)).collect();
    fft.forward(&mut buf);
    for b in buf.iter_mut() {
        *b *= cell;
    }
    buf
}

/// One first-order object `Π^ε τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelObjectSpec {
    pub family: Family,
    pub symbol: Symbol,
    pub nonlinearity: NonlinearitySpec,
    /// Coupling constant `a`.
    pub a: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub renorm: Renorm,
}

/// A [`ModelObjectSpec`] with its renormalization constant resolved.
#[derive(Debug, Clone)]
pub struct ModelObject {
    pub spec: ModelObjectSpec,
    /// `C^{(ε)}`; for `⟨3'⟩` the coefficient multiplying `Ψ_ε`.
    pub constant: f64,
    order: u32,
    prefactor: f64,
    table: DerivTable,
}

/// Resolves `C^{(ε)}` so that `E Π^ε τ = 0`: by Gaussian quadrature, or by the mean over
/// `n_samples` draws and all lattice sites.
pub fn build_object(spec: &ModelObjectSpec, field: &ModelField, n_samples: usize, seed: u64) -> Result<ModelObject> {
    if spec.family != field.family || spec.epsilon != field.eps {
        return Err(Error::InvalidParameter("object and field disagree on family or ε".into()));
    }
    if !(spec.a != 0.0 && spec.a.is_finite()) {
        return Err(Error::InvalidParameter(format!("coupling constant a={} must be finite and nonzero", spec.a)));
    }
    let (order, prefactor) = symbol_form(spec.family, spec.symbol, spec.a, spec.epsilon)?;
    let sigma2 = field.sigma2();
    let table = DerivTable::new(&spec.nonlinearity, order, 12.0 * sigma2.sqrt() + 1.0)?;
    // `⟨3'⟩` subtracts 3 C_{⟨2'⟩} Ψ_ε.
    let (mean_order, mean_pre, scale) = match spec.symbol {
        Symbol::Three => {
            let (o, p) = symbol_form(spec.family, Symbol::Two, spec.a, spec.epsilon)?;
            (o, p, 3.0)
        }
        _ => (order, prefactor, 1.0),
    };
    let mean = match spec.renorm {
        Renorm::Analytic => gaussian_mean(&spec.nonlinearity, mean_order, sigma2)?,
        Renorm::Empirical => {
            if n_samples == 0 {
                return Err(Error::InvalidParameter("empirical renormalization needs samples".into()));
            }
            let t = DerivTable::new(&spec.nonlinearity, mean_order, 12.0 * sigma2.sqrt() + 1.0)?;
            let r = spec.epsilon.sqrt();
            let seed = derive_seed(seed, tag("renorm"));
            let sums: Vec<f64> = (0..n_samples as u64)
                .into_par_iter()
                .map(|k| crate::stats::mean(&field.sample(seed, k).iter().map(|p| t.eval(r * p)).collect::<Vec<_>>()))
                .collect();
            crate::stats::mean(&sums)
        }
    };
    Ok(ModelObject { spec: spec.clone(), constant: scale * mean_pre * mean, order, prefactor, table })
}

impl ModelObject {
    /// `(Π^ε τ)(z)` for a lattice-order sample of `Ψ_ε`.
    pub fn eval(&self, psi: &[f64], z: usize) -> Result<f64> {
        let p = *psi.get(z).ok_or_else(|| Error::InvalidParameter(format!("site {z} outside the sample")))?;
        Ok(self.eval_at(p))
    }

    fn eval_at(&self, p: f64) -> f64 {
        let raw = self.prefactor * self.table.eval(self.spec.epsilon.sqrt() * p);
        match self.spec.symbol {
            Symbol::Three => raw - self.constant * p,
            _ => raw - self.constant,
        }
    }

    pub fn eval_field(&self, psi: &[f64]) -> Vec<f64> {
        psi.iter().map(|p| self.eval_at(*p)).collect()
    }

    /// Derivative order of the nonlinearity entering `τ`.
    pub fn order(&self) -> u32 {
        self.order
    }
}

/// `(Π^ε τ)(z)`.
pub fn eval_object(obj: &ModelObject, sample: &[f64], z: usize) -> Result<f64> {
    obj.eval(sample, z)
}

/// Negative Hölder norm estimate `sup_{λ, z} λ^{-α} |⟨f, φ^λ_z⟩|` with the bump `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderNormEstimate {
    pub alpha: f64,
    pub value: f64,
    /// Scale and centre offsets of the maximiser.
    pub argmax_lambda: f64,
    pub argmax_center: Vec<i64>,
    /// Dyadic scales probed and the centre stride in lattice sites.
    pub lambdas: Vec<f64>,
    pub stride: usize,
}

/// Largest dyadic `λ ≤ 1` whose support fits the half-period on every axis.
fn max_dyadic_scale(lattice: &Lattice) -> f64 {
    let s = lattice.geometry().s();
    let mut lam = 1.0f64;
    while lattice.extent().iter().zip(s).any(|(e, si)| lam.powf(*si) > *e) {
        lam /= 2.0;
    }
    lam
}

/// Max over the dyadic scales `λ_max 2^{-j}`, `j < levels`, `λ ≥ 2h`, and over centres whose
/// offsets are multiples of `stride`; `values` is periodic on `lattice` and in lattice order.
pub fn holder_norm(values: &[f64], lattice: &Lattice, alpha: f64, levels: usize, stride: usize) -> Result<HolderNormEstimate> {
    if !(alpha < 0.0) {
        return Err(Error::InvalidParameter(format!("alpha={alpha} must be negative")));
    }
    if values.len() != lattice.len() || stride == 0 {
        return Err(Error::InvalidParameter("values must cover the lattice and stride must be positive".into()));
    }
    let g = lattice.geometry().clone();
    let shape = lattice.shape();
    let fft = NdFft::new(&shape);
    let perm = wrap_permutation(lattice);
    let cell = lattice.cell_volume();
    let h = lattice.base_step();
    let top = max_dyadic_scale(lattice);
    let lambdas: Vec<f64> = (0..levels).map(|j| top / 2f64.powi(j as i32)).filter(|l| *l >= 2.0 * h).collect();
    let mut fhat = vec![Complex::new(0.0, 0.0); lattice.len()];
    for (v, j) in values.iter().zip(&perm) {
        fhat[*j] = Complex::new(*v, 0.0);
    }
    fft.forward(&mut fhat);
    let centers: Vec<usize> = (0..lattice.len())
        .filter(|i| lattice.offsets(*i).iter().all(|o| o.rem_euclid(stride as i64) == 0))
        .collect();
    let mut best = HolderNormEstimate {
        alpha,
        value: 0.0,
        argmax_lambda: lambdas.first().copied().unwrap_or(top),
        argmax_center: vec![0; shape.len()],
        lambdas: lambdas.clone(),
        stride,
    };
    for lam in &lambdas {
        let tf = TestFunction::new(vec![0.0; shape.len()], *lam)?;
        let steps = lattice.steps();
        let mut buf: Vec<Complex<f64>> = (0..lattice.len())
            .map(|j| {
                let y: Vec<f64> = wrapped_offsets(j, &shape).iter().zip(steps).map(|(o, s)| *o as f64 * s).collect();
                Complex::new(tf.eval_unchecked(&g, &y), 0.0)
            })
            .collect();
        fft.forward(&mut buf);
        // ⟨f, φ_z⟩ = Σ_w f(w) φ(w − z): correlation, φ real.
        for (b, f) in buf.iter_mut().zip(&fhat) {
            *b = f * b.conj() * cell;
        }
        fft.inverse(&mut buf);
        let w = lam.powf(-alpha);
        for i in &centers {
            let v = w * buf[perm[*i]].re.abs();
            if v > best.value {
                best.value = v;
                best.argmax_lambda = *lam;
                best.argmax_center = lattice.offsets(*i);
            }
        }
    }
    Ok(best)
}

/// Monte Carlo query shared by [`remainder_pairing`] and [`mollification_gap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingQuery {
    pub family: Family,
    pub nonlinearity: NonlinearitySpec,
    pub epsilon: f64,
    #[serde(default)]
    pub lattice: ModelLatticeSpec,
    pub delta: f64,
    pub lambda: f64,
    pub n: u32,
    pub n_samples: usize,
    pub seed: u64,
}

/// Sparse `(site, φ^λ_0(site) |cell|)` list.
fn test_weights(field: &ModelField, lambda: f64) -> Result<Vec<(usize, f64)>> {
    let lattice = field.lattice();
    if lambda < 2.0 * lattice.base_step() {
        return Err(Error::Resolution { lambda, h: lattice.base_step() });
    }
    if lattice.extent().iter().zip(lattice.geometry().s()).any(|(e, si)| lambda.powf(*si) > *e) {
        return Err(Error::InvalidParameter(format!("λ={lambda} exceeds the lattice half-period")));
    }
    let g = lattice.geometry().clone();
    let tf = TestFunction::new(vec![0.0; g.dim()], lambda)?;
    let cell = lattice.cell_volume();
    Ok((0..lattice.len())
        .filter_map(|i| {
            let w = tf.eval_unchecked(&g, &lattice.point(i));
            (w != 0.0).then_some((i, w * cell))
        })
        .collect())
}

/// `f ↦ T_{(m)} f(u) = f(u) − Σ_{j≤m} E f^{(j)}(σZ)/j! · u^{⋄j}` for `f = F^{(ℓ)}`.
struct Truncated {
    table: DerivTable,
    coeffs: Vec<f64>,
    sigma2: f64,
}

impl Truncated {
    fn new(spec: &NonlinearitySpec, l: u32, m: Option<u32>, sigma2: f64) -> Result<Self> {
        let table = DerivTable::new(spec, l, 12.0 * sigma2.sqrt() + 1.0)?;
        let mut coeffs = Vec::new();
        if let Some(m) = m {
            let mut fact = 1.0;
            for j in 0..=m {
                if j > 0 {
                    fact *= j as f64;
                }
                coeffs.push(gaussian_mean(spec, l + j, sigma2)? / fact);
            }
        }
        Ok(Self { table, coeffs, sigma2 })
    }

    fn eval(&self, u: f64) -> f64 {
        let mut v = self.table.eval(u);
        for (j, c) in self.coeffs.iter().enumerate() {
            v -= c * wick_power(u, j as u32, self.sigma2);
        }
        v
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!("δ={delta} outside [0,1)")));
    }
    Ok(())
}

/// `‖⟨τ_ε − τ_ε^{(δ)}, φ^λ⟩‖_{2n}` for `τ = ⟨2'1'⟩` (KPZ) or `⟨3'2'⟩` (Φ⁴₃), where
/// `τ_ε(x) = c ∫ K(x,y) T_{(m₁−1)}(F'(X)) T_{(m₂−1)}(F(Y)) dy` and `τ^{(δ)}` uses `F_δ`.
pub fn remainder_pairing(q: &PairingQuery) -> Result<MomentEstimate> {
    check_delta(q.delta)?;
    let field = ModelField::new(q.family, q.epsilon, &q.lattice)?;
    let weights = test_weights(&field, q.lambda)?;
    let a = field.coupling(&q.nonlinearity)?;
    let sigma2 = field.sigma2();
    let eps = q.epsilon;
    let (m1, m2) = q.family.remainder_orders();
    let pre = match q.family {
        Family::Kpz => 1.0 / (2.0 * a * a * eps.powf(1.5)),
        Family::Phi43 => 1.0 / (3.0 * a * a * eps.powf(2.5)),
    };
    let re = compute_re(q.family.kernel_gamma(), 1.0, m2);
    let origin = field.lattice().origin();
    let smooth = mollify(&q.nonlinearity, q.delta)?;
    let sides = [&q.nonlinearity, &smooth]
        .iter()
        .map(|s| Ok((Truncated::new(s, 1, Some(m1 - 1), sigma2)?, Truncated::new(s, 0, Some(m2 - 1), sigma2)?)))
        .collect::<Result<Vec<_>>>()?;
    let r = eps.sqrt();
    let values: Vec<f64> = (0..q.n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let u: Vec<f64> = field.sample(q.seed, k).iter().map(|p| r * p).collect();
            let pair = |(x_side, y_side): &(Truncated, Truncated)| {
                let b: Vec<f64> = u.iter().map(|v| y_side.eval(*v)).collect();
                let v = field.integrate(&b);
                let base = if re >= 1 { v[origin] } else { 0.0 };
                weights.iter().map(|(i, w)| w * x_side.eval(u[*i]) * (v[*i] - base)).sum::<f64>()
            };
            pre * (pair(&sides[0]) - pair(&sides[1]))
        })
        .collect();
    moment_norm(&values, q.n, derive_seed(q.seed, tag("remainder-bootstrap")))
}

/// `‖⟨⟨1'⟩_ε − ⟨1'⟩_ε^{(δ)}, φ^λ⟩‖_{2n}` for KPZ, `⟨1'⟩_ε = F'(√ε Ψ_ε)/(2a√ε)`.
pub fn mollification_gap(q: &PairingQuery) -> Result<MomentEstimate> {
    if q.family != Family::Kpz {
        return Err(Error::InvalidParameter("the mollification gap is defined for the KPZ family".into()));
    }
    check_delta(q.delta)?;
    let field = ModelField::new(q.family, q.epsilon, &q.lattice)?;
    let weights = test_weights(&field, q.lambda)?;
    let a = field.coupling(&q.nonlinearity)?;
    let radius = 12.0 * field.sigma2().sqrt() + 1.0;
    let raw = DerivTable::new(&q.nonlinearity, 1, radius)?;
    let smooth = DerivTable::new(&mollify(&q.nonlinearity, q.delta)?, 1, radius)?;
    let r = q.epsilon.sqrt();
    let pre = 1.0 / (2.0 * a * r);
    let values: Vec<f64> = (0..q.n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let psi = field.sample(q.seed, k);
            pre * weights.iter().map(|(i, w)| w * (raw.eval(r * psi[*i]) - smooth.eval(r * psi[*i]))).sum::<f64>()
        })
        .collect();
    moment_norm(&values, q.n, derive_seed(q.seed, tag("gap-bootstrap")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{make_nonlinearity, NonlinearityKind};
    use approx::assert_relative_eq;

    fn small() -> ModelLatticeSpec {
        ModelLatticeSpec { h: 1.0 / 8.0, space_extent: 0.5, time_extent: 0.25 }
    }

    fn poly(coeffs: Vec<f64>) -> NonlinearitySpec {
        make_nonlinearity(NonlinearityKind::Polynomial { coeffs }).unwrap()
    }

    #[test]
    fn periodic_heat_kernel_has_unit_mass() {
        let h = 1.0 / 32.0;
        let p = periodic_heat(0.01, 33, h, false);
        assert_relative_eq!(p.iter().sum::<f64>() * h, 1.0, epsilon = 1e-10);
        let dp = periodic_heat(0.01, 33, h, true);
        assert!(dp.iter().sum::<f64>().abs() * h < 1e-10);
        // ∂ₓp is odd.
        assert_relative_eq!(dp[1], -dp[32], epsilon = 1e-12);
    }

    #[test]
    fn variance_matches_samples() {
        let field = ModelField::new(Family::Kpz, 0.125, &ModelLatticeSpec { h: 1.0 / 16.0, ..Default::default() }).unwrap();
        let mut acc = 0.0;
        let mut count = 0usize;
        for k in 0..40 {
            for v in field.sample(3, k) {
                acc += v * v;
                count += 1;
            }
        }
        let est = acc / count as f64;
        assert!((est / field.variance() - 1.0).abs() < 0.1, "{est} vs {}", field.variance());
    }

    #[test]
    fn resolution_guard() {
        assert!(matches!(ModelField::new(Family::Kpz, 0.1, &small()), Err(Error::Resolution { .. })));
    }

    #[test]
    fn cubic_two_is_wick_square() {
        let field = ModelField::new(Family::Phi43, 0.25, &small()).unwrap();
        let spec = ModelObjectSpec {
            family: Family::Phi43,
            symbol: Symbol::Two,
            nonlinearity: poly(vec![0.0, 0.0, 0.0, 1.0]),
            a: 1.0,
            epsilon: 0.25,
            renorm: Renorm::Analytic,
        };
        let obj = build_object(&spec, &field, 0, 0).unwrap();
        let psi = field.sample(11, 0);
        for (z, p) in psi.iter().enumerate() {
            let v = eval_object(&obj, &psi, z).unwrap();
            assert!((v - wick_power(*p, 2, field.variance())).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_zero_vanishes() {
        let field = ModelField::new(Family::Kpz, 0.25, &small()).unwrap();
        let f = poly(vec![0.0, 0.0, 1.0]);
        let spec = ModelObjectSpec {
            family: Family::Kpz,
            symbol: Symbol::Zero,
            a: field.coupling(&f).unwrap(),
            nonlinearity: f,
            epsilon: 0.25,
            renorm: Renorm::Analytic,
        };
        assert_relative_eq!(spec.a, 1.0, epsilon = 1e-12);
        let obj = build_object(&spec, &field, 0, 0).unwrap();
        assert!(obj.eval_field(&field.sample(1, 0)).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn family_mismatch_is_rejected() {
        let field = ModelField::new(Family::Kpz, 0.25, &small()).unwrap();
        let spec = ModelObjectSpec {
            family: Family::Kpz,
            symbol: Symbol::Three,
            nonlinearity: poly(vec![0.0, 0.0, 1.0]),
            a: 1.0,
            epsilon: 0.25,
            renorm: Renorm::Analytic,
        };
        assert!(build_object(&spec, &field, 0, 0).is_err());
    }

    #[test]
    fn empirical_and_analytic_constants_agree() {
        let field = ModelField::new(Family::Kpz, 0.125, &ModelLatticeSpec { h: 1.0 / 16.0, ..Default::default() }).unwrap();
        let f = make_nonlinearity(NonlinearityKind::PowerEven { beta: 0.5 }).unwrap();
        let mut spec = ModelObjectSpec {
            family: Family::Kpz,
            symbol: Symbol::Zero,
            a: field.coupling(&f).unwrap(),
            nonlinearity: f,
            epsilon: 0.125,
            renorm: Renorm::Analytic,
        };
        let analytic = build_object(&spec, &field, 0, 0).unwrap().constant;
        assert_relative_eq!(analytic, 1.0, epsilon = 1e-9);
        spec.renorm = Renorm::Empirical;
        let empirical = build_object(&spec, &field, 50, 5).unwrap().constant;
        assert!((empirical - analytic).abs() < 0.05, "{empirical} vs {analytic}");
    }

    #[test]
    fn holder_norm_of_zero_and_of_a_bump() {
        let field = ModelField::new(Family::Kpz, 0.125, &ModelLatticeSpec { h: 1.0 / 16.0, ..Default::default() }).unwrap();
        let lattice = field.lattice();
        let zero = vec![0.0; lattice.len()];
        assert_eq!(holder_norm(&zero, lattice, -0.5, 3, 1).unwrap().value, 0.0);
        let lam0 = 0.25;
        let tf = TestFunction::new(vec![0.0, 0.0], lam0).unwrap();
        let g = lattice.geometry().clone();
        let f: Vec<f64> = lattice.points().map(|p| tf.eval_unchecked(&g, &p)).collect();
        let overlap: f64 = f.iter().map(|v| v * v).sum::<f64>() * lattice.cell_volume();
        let est = holder_norm(&f, lattice, -0.5, 4, 1).unwrap();
        assert!(est.value >= lam0.powf(0.5) * overlap * (1.0 - 1e-12));
    }

    #[test]
    fn holder_norm_grid_monotone() {
        let field = ModelField::new(Family::Kpz, 0.125, &ModelLatticeSpec { h: 1.0 / 16.0, ..Default::default() }).unwrap();
        let psi = field.sample(2, 0);
        let coarse = holder_norm(&psi, field.lattice(), -0.6, 2, 4).unwrap();
        let fine = holder_norm(&psi, field.lattice(), -0.6, 3, 2).unwrap();
        assert!(fine.value >= coarse.value);
    }

    #[test]
    fn zero_delta_gives_zero_remainder() {
        let q = PairingQuery {
            family: Family::Kpz,
            nonlinearity: make_nonlinearity(NonlinearityKind::PowerEven { beta: 0.5 }).unwrap(),
            epsilon: 0.125,
            lattice: ModelLatticeSpec { h: 1.0 / 16.0, ..Default::default() },
            delta: 0.0,
            lambda: 0.25,
            n: 1,
            n_samples: 200,
            seed: 1,
        };
        assert_eq!(remainder_pairing(&q).unwrap().value, 0.0);
        assert_eq!(mollification_gap(&q).unwrap().value, 0.0);
    }
}
