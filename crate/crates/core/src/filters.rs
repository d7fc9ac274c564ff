//! Spectral regularization families.
//!
//! A family `g_λ` approximates `σ ↦ 1/σ` on the spectrum `(0, η]` of a
//! positive operator; its residual is `r_λ(σ) = 1 − σ g_λ(σ)`. Four families
//! are provided: Tikhonov, spectral cut-off, Showalter (asymptotic
//! regularization) and Landweber iteration. [`certify_constants`] checks the
//! boundedness, residual and qualification constants of a family numerically
//! on a log-spaced grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FlrError, Result};

/// Relative slack used when checking `λ ≤ η` and `σ ≤ η`, so that values
/// clamped exactly to `η` (or eigenvalues equal to it) never trip the check.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Tikhonov,
    #[serde(rename = "cutoff")]
    SpectralCutoff,
    Showalter,
    Landweber,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [
        FilterKind::Tikhonov,
        FilterKind::SpectralCutoff,
        FilterKind::Showalter,
        FilterKind::Landweber,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Tikhonov => "tikhonov",
            FilterKind::SpectralCutoff => "cutoff",
            FilterKind::Showalter => "showalter",
            FilterKind::Landweber => "landweber",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = FlrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tikhonov" => Ok(FilterKind::Tikhonov),
            "cutoff" | "spectral-cutoff" | "spectral_cutoff" => Ok(FilterKind::SpectralCutoff),
            "showalter" => Ok(FilterKind::Showalter),
            "landweber" => Ok(FilterKind::Landweber),
            other => Err(FlrError::Input(format!(
                "unknown filter family '{other}' (expected tikhonov, cutoff, showalter or landweber)"
            ))),
        }
    }
}

/// Qualification of a family: the largest `p` for which the residual obeys
/// `|r_λ(σ)| σ^p ≤ ω_p λ^p`. May be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Qualification {
    Finite(f64),
    Infinite,
}

impl Qualification {
    pub fn value(self) -> f64 {
        match self {
            Qualification::Finite(v) => v,
            Qualification::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Qualification::Finite(_))
    }

    /// `min(x, ν + offset)`, treating an infinite qualification symbolically.
    pub fn min_with(self, x: f64, offset: impl Fn(f64) -> f64) -> f64 {
        match self {
            Qualification::Finite(nu) => x.min(offset(nu)),
            Qualification::Infinite => x,
        }
    }
}

impl Serialize for Qualification {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Qualification::Finite(v) => serializer.serialize_f64(*v),
            Qualification::Infinite => serializer.serialize_str("infinity"),
        }
    }
}

impl<'de> Deserialize<'de> for Qualification {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) if v.is_finite() && v > 0.0 => Ok(Qualification::Finite(v)),
            Repr::Num(v) => Err(serde::de::Error::custom(format!(
                "qualification must be positive, got {v}"
            ))),
            Repr::Text(s) if matches!(s.as_str(), "infinity" | "inf") => {
                Ok(Qualification::Infinite)
            }
            Repr::Text(s) => Err(serde::de::Error::custom(format!(
                "qualification must be a number or \"infinity\", got {s:?}"
            ))),
        }
    }
}

/// Upper end `η` of the spectrum a filter is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDomain {
    eta: f64,
}

impl SpectrumDomain {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(FlrError::precondition(format!(
                "spectrum bound eta must be positive and finite, got {eta}"
            )));
        }
        Ok(SpectrumDomain { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Admissible regularization parameters: the half-open interval `(0, η]`.
    pub fn lambda_range(&self) -> (f64, f64) {
        (0.0, self.eta)
    }

    fn check(&self, lambda: f64, sigma: f64) -> Result<()> {
        let limit = self.eta * (1.0 + DOMAIN_SLACK);
        if !(lambda > 0.0 && lambda <= limit) {
            return Err(FlrError::precondition(format!(
                "lambda={lambda:e} outside (0, eta={:e}]",
                self.eta
            )));
        }
        if !(sigma >= 0.0 && sigma <= limit) {
            return Err(FlrError::precondition(format!(
                "sigma={sigma:e} outside [0, eta={:e}]",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Declared constants of a family. `A`, `B` and `D` bound `|σ g|`, `λ|g|`
/// and `|r|`; `ω_p` is available for every `p` up to the qualification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConstants {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterFamily {
    pub kind: FilterKind,
    pub qualification: Qualification,
    pub constants: FilterConstants,
}

impl FilterFamily {
    pub fn new(kind: FilterKind) -> Self {
        let qualification = match kind {
            FilterKind::Tikhonov => Qualification::Finite(1.0),
            _ => Qualification::Infinite,
        };
        FilterFamily {
            kind,
            qualification,
            constants: FilterConstants {
                a: 1.0,
                b: 1.0,
                d: 1.0,
            },
        }
    }

    pub fn tikhonov() -> Self {
        Self::new(FilterKind::Tikhonov)
    }

    pub fn cutoff() -> Self {
        Self::new(FilterKind::SpectralCutoff)
    }

    pub fn showalter() -> Self {
        Self::new(FilterKind::Showalter)
    }

    pub fn landweber() -> Self {
        Self::new(FilterKind::Landweber)
    }

    /// Declared `ω_p`, or `None` when `p` exceeds the qualification.
    pub fn declared_omega(&self, p: f64) -> Option<f64> {
        if !(p > 0.0) || p > self.qualification.value() {
            return None;
        }
        let omega = match self.kind {
            // σ^p λ^(1-p) / (σ+λ) ≤ 1 for p ∈ (0, 1] by weighted AM-GM.
            FilterKind::Tikhonov => 1.0,
            FilterKind::SpectralCutoff => 1.0,
            // sup_x x^p e^{-x} = (p/e)^p
            FilterKind::Showalter => (p / std::f64::consts::E).powf(p),
            // (1-x)^t x^p ≤ (p/(e t))^p and 1/λ' ≤ t + 1 ≤ 2t.
            FilterKind::Landweber => (2.0 * p / std::f64::consts::E).powf(p).max(1.0),
        };
        Some(omega)
    }

    pub fn eval(&self, lambda: f64, sigma: f64, domain: &SpectrumDomain) -> Result<f64> {
        domain.check(lambda, sigma)?;
        Ok(self.eval_unchecked(lambda, sigma, domain.eta))
    }

    pub fn residual(&self, lambda: f64, sigma: f64, domain: &SpectrumDomain) -> Result<f64> {
        domain.check(lambda, sigma)?;
        Ok(self.residual_unchecked(lambda, sigma, domain.eta))
    }

    pub(crate) fn eval_unchecked(&self, lambda: f64, sigma: f64, eta: f64) -> f64 {
        match self.kind {
            FilterKind::Tikhonov => 1.0 / (sigma + lambda),
            FilterKind::SpectralCutoff => {
                if sigma >= lambda {
                    1.0 / sigma
                } else {
                    0.0
                }
            }
            FilterKind::Showalter => {
                if sigma > 0.0 {
                    -(-sigma / lambda).exp_m1() / sigma
                } else {
                    1.0 / lambda
                }
            }
            FilterKind::Landweber => {
                // Work on the rescaled spectrum σ/η ∈ [0, 1] and undo the scale.
                let steps = landweber_steps(lambda, eta);
                landweber_sum(steps, sigma / eta) / eta
            }
        }
    }

    pub(crate) fn residual_unchecked(&self, lambda: f64, sigma: f64, eta: f64) -> f64 {
        match self.kind {
            FilterKind::Tikhonov => lambda / (sigma + lambda),
            FilterKind::SpectralCutoff => {
                if sigma >= lambda {
                    0.0
                } else {
                    1.0
                }
            }
            FilterKind::Showalter => (-sigma / lambda).exp(),
            FilterKind::Landweber => {
                let steps = landweber_steps(lambda, eta);
                landweber_residual(steps, sigma / eta)
            }
        }
    }
}

impl Default for FilterFamily {
    fn default() -> Self {
        FilterFamily::tikhonov()
    }
}

/// Iteration count for Landweber on the spectrum rescaled to `(0, 1]`:
/// `t = ⌊η/λ⌋`, at least one step.
pub fn landweber_steps(lambda: f64, eta: f64) -> f64 {
    let ratio = eta / lambda;
    // Guard against 1/(1/k) landing just below k.
    (ratio * (1.0 + 1e-12)).floor().max(1.0)
}

/// `Σ_{i=0}^{t-1} (1-x)^i`, evaluated in closed form `(1 - (1-x)^t)/x`.
/// Valid for `x ∈ [0, 2)`.
pub fn landweber_sum(steps: f64, x: f64) -> f64 {
    if x == 0.0 {
        return steps;
    }
    let one_minus_residual = if x < 1.0 {
        -(steps * (-x).ln_1p()).exp_m1()
    } else {
        1.0 - (1.0 - x).powf(steps)
    };
    one_minus_residual / x
}

/// `(1-x)^t` on `x ∈ [0, 1]`.
pub fn landweber_residual(steps: f64, x: f64) -> f64 {
    if x >= 1.0 {
        return if steps == 0.0 { 1.0 } else { 0.0 };
    }
    (steps * (-x).ln_1p()).exp()
}

pub fn eval_filter(
    family: &FilterFamily,
    lambda: f64,
    sigma: f64,
    domain: &SpectrumDomain,
) -> Result<f64> {
    family.eval(lambda, sigma, domain)
}

pub fn eval_residual(
    family: &FilterFamily,
    lambda: f64,
    sigma: f64,
    domain: &SpectrumDomain,
) -> Result<f64> {
    family.residual(lambda, sigma, domain)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaStatus {
    /// Grid supremum is bounded and within the declared constant.
    Certified,
    /// Bounded but larger than the declared constant.
    ExceedsDeclared,
    /// Supremum keeps growing as the λ-grid is refined toward zero.
    Divergent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaCertificate {
    pub p: f64,
    pub supremum: f64,
    pub refined_supremum: f64,
    pub declared: Option<f64>,
    pub status: OmegaStatus,
    /// (λ, σ) where the supremum on the refined grid is attained.
    pub argmax: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub kind: FilterKind,
    pub eta: f64,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub omega: Vec<OmegaCertificate>,
}

impl Certification {
    /// True when `A`, `B`, `D` are within their declared values (to grid
    /// tolerance) and every requested `ω_p` is certified.
    pub fn all_certified(&self, declared: &FilterConstants) -> bool {
        let tol = 1.0 + 1e-6;
        self.a <= declared.a * tol
            && self.b <= declared.b * tol
            && self.d <= declared.d * tol
            && self.omega.iter().all(|w| w.status == OmegaStatus::Certified)
    }

    pub fn omega_for(&self, p: f64) -> Option<&OmegaCertificate> {
        self.omega.iter().find(|w| w.p == p)
    }
}

/// Number of log-spaced λ values per decade used by the certification grid
/// (16 points over the six decades `[1e-6 η, η]`).
const LAMBDA_POINTS: usize = 16;
const LAMBDA_DECADES: f64 = 6.0;
const SIGMA_DECADES: f64 = 10.0;
/// Extra λ decades probed to detect a supremum that grows without bound.
const REFINE_DECADES: f64 = 2.0;
const DIVERGENCE_GROWTH: f64 = 1.5;

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| {
            if k + 1 == count {
                hi
            } else {
                (llo + (lhi - llo) * k as f64 / (count - 1) as f64).exp()
            }
        })
        .collect()
}

/// Numerically certify the constants of `family` on `(0, η]`.
///
/// σ runs over `grid_size` log-spaced points in `[1e-10 η, η]` and λ over 16
/// log-spaced points in `[1e-6 η, η]`. Each `ω_p` is additionally evaluated
/// on a λ-grid extended two decades further toward zero; a supremum that
/// grows there by more than 50% is reported as divergent.
pub fn certify_constants(
    family: &FilterFamily,
    eta: f64,
    p_list: &[f64],
    grid_size: usize,
) -> Result<Certification> {
    let domain = SpectrumDomain::new(eta)?;
    if grid_size < 2 {
        return Err(FlrError::precondition("certification grid needs at least 2 sigma points"));
    }
    if let Some(p) = p_list.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(FlrError::precondition(format!("p must be positive, got {p}")));
    }
    let sigmas = log_spaced(eta * 10f64.powf(-SIGMA_DECADES), eta, grid_size);
    let lambdas = log_spaced(eta * 10f64.powf(-LAMBDA_DECADES), eta, LAMBDA_POINTS);
    let refined_count = LAMBDA_POINTS + ((LAMBDA_POINTS - 1) as f64 * REFINE_DECADES / LAMBDA_DECADES).round() as usize;
    let refined_lambdas = log_spaced(
        eta * 10f64.powf(-(LAMBDA_DECADES + REFINE_DECADES)),
        eta,
        refined_count,
    );

    let (mut a, mut b, mut d) = (0.0f64, 0.0f64, 0.0f64);
    for &lambda in &lambdas {
        for &sigma in &sigmas {
            let g = family.eval(lambda, sigma, &domain)?;
            let r = family.residual(lambda, sigma, &domain)?;
            if !(g.is_finite() && r.is_finite()) {
                return Err(FlrError::NonFinite {
                    what: format!("{} filter evaluation", family.kind),
                    lambda,
                    sigma,
                });
            }
            a = a.max((sigma * g).abs());
            b = b.max(lambda * g.abs());
            d = d.max(r.abs());
        }
    }

    let omega_sup = |p: f64, lambdas: &[f64]| -> Result<(f64, (f64, f64))> {
        let mut best = (0.0f64, (lambdas[0], sigmas[0]));
        for &lambda in lambdas {
            for &sigma in &sigmas {
                let r = family.residual(lambda, sigma, &domain)?;
                // (σ/λ)^p in log form to avoid overflow at extreme ratios.
                let value = r.abs() * (p * (sigma / lambda).ln()).exp();
                if !value.is_finite() {
                    return Err(FlrError::NonFinite {
                        what: format!("{} residual bound for p={p}", family.kind),
                        lambda,
                        sigma,
                    });
                }
                if value > best.0 {
                    best = (value, (lambda, sigma));
                }
            }
        }
        Ok(best)
    };

    let mut omega = Vec::with_capacity(p_list.len());
    for &p in p_list {
        let (supremum, _) = omega_sup(p, &lambdas)?;
        let (refined_supremum, argmax) = omega_sup(p, &refined_lambdas)?;
        let declared = family.declared_omega(p);
        let status = if refined_supremum > DIVERGENCE_GROWTH * supremum {
            OmegaStatus::Divergent
        } else {
            match declared {
                Some(w) if supremum <= w * (1.0 + 1e-6) => OmegaStatus::Certified,
                _ => OmegaStatus::ExceedsDeclared,
            }
        };
        omega.push(OmegaCertificate {
            p,
            supremum,
            refined_supremum,
            declared,
            status,
            argmax,
        });
    }

    Ok(Certification {
        kind: family.kind,
        eta,
        a,
        b,
        d,
        omega,
    })
}
