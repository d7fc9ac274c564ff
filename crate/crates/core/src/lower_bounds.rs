//! Numerics of the minimax lower-bound construction: Varshamov–Gilbert
//! codebooks, hypothesis slopes, pairwise separations and Gaussian KL.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FlrError, Result};
use crate::metrics::{l2_error, prediction_error, rkhs_error};
use crate::operator::SpectralOperator;
use crate::simulate::sample_covariates;

/// Random candidates tried per accepted word before giving up.
pub const CANDIDATE_BUDGET: usize = 10_000;

/// Binary word of length `m`, packed into 64-bit blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Word {
    m: usize,
    bits: Vec<u64>,
}

impl Word {
    pub fn zero(m: usize) -> Self {
        Word {
            m,
            bits: vec![0; m.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut w = Word::zero(bits.len());
        for (k, &b) in bits.iter().enumerate() {
            if b {
                w.bits[k / 64] |= 1 << (k % 64);
            }
        }
        w
    }

    fn random(m: usize, rng: &mut ChaCha20Rng) -> Self {
        let mut w = Word::zero(m);
        for (block, slot) in w.bits.iter_mut().enumerate() {
            let width = (m - block * 64).min(64);
            let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
            *slot = rng.random::<u64>() & mask;
        }
        w
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn get(&self, k: usize) -> bool {
        self.bits[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn weight(&self) -> u32 {
        self.bits.iter().map(|b| b.count_ones()).sum()
    }

    pub fn hamming(&self, other: &Word) -> u32 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.m).map(|k| self.get(k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub m: usize,
    /// `words[0]` is the all-zero word.
    pub words: Vec<Word>,
}

impl Codebook {
    /// Number of nonzero words.
    pub fn n(&self) -> usize {
        self.words.len() - 1
    }

    /// Exhaustive check over all pairs: zero word present and every
    /// distance strictly above `m/8`. Returns the minimum distance.
    pub fn verify(&self) -> Result<u32> {
        if self.words.len() < 2 {
            return Err(FlrError::Construction("codebook needs at least two words".into()));
        }
        if self.words.iter().any(|w| w.len() != self.m) {
            return Err(FlrError::Construction("codebook words have inconsistent length".into()));
        }
        if !self.words.iter().any(|w| w.weight() == 0) {
            return Err(FlrError::Construction("codebook lacks the zero word".into()));
        }
        let threshold = self.m as f64 / 8.0;
        let mut min = u32::MAX;
        for i in 0..self.words.len() {
            for j in (i + 1)..self.words.len() {
                let d = self.words[i].hamming(&self.words[j]);
                if d as f64 <= threshold {
                    return Err(FlrError::Construction(format!(
                        "words {i} and {j} are at Hamming distance {d} <= m/8 = {threshold}"
                    )));
                }
                min = min.min(d);
            }
        }
        Ok(min)
    }
}

/// Target size `max(⌈2^{m/8}⌉, 2)` of nonzero words.
pub fn codebook_target(m: usize) -> usize {
    (2f64.powf(m as f64 / 8.0).ceil() as usize).max(2)
}

/// Greedy randomized search: random words are accepted when they are
/// farther than `m/8` from every accepted word, until `2^{m/8}` nonzero words
/// are found. The result is verified exhaustively.
pub fn varshamov_gilbert(m: usize, rng: &mut ChaCha20Rng) -> Result<Codebook> {
    if m < 8 {
        return Err(FlrError::precondition(format!("codebook length must be at least 8, got {m}")));
    }
    let target = codebook_target(m);
    let threshold = m as f64 / 8.0;
    let mut words = vec![Word::zero(m)];
    while words.len() <= target {
        let mut accepted = false;
        for _ in 0..CANDIDATE_BUDGET {
            let candidate = Word::random(m, rng);
            if words.iter().all(|w| w.hamming(&candidate) as f64 > threshold) {
                words.push(candidate);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(FlrError::Resource(format!(
                "no admissible word after {CANDIDATE_BUDGET} candidates ({} of {target} found); retry with another stream",
                words.len() - 1
            )));
        }
    }
    let book = Codebook { m, words };
    book.verify()?;
    Ok(book)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Smoothness {
    /// `f_θ = Σ θ_k M^{-1/2} T^α φ_{k+M}`
    Commutative { alpha: f64 },
    /// `f_θ = Σ θ_k M^{-1/2} T^{1/2} Λ^s φ_{k+M}`
    NonCommutative { s: f64 },
}

/// Coefficients of `f_θ`: entry `k + M` (1-based) is
/// `θ_k M^{-1/2} μ_{k+M}^α` (commutative) or `θ_k M^{-1/2} μ_{k+M}^{1/2} τ_{k+M}^s`
/// with `τ = μ ξ` (non-commutative); all other entries vanish. `t` and `c`
/// must be diagonal in the construction basis, of dimension at least `2M`.
pub fn hypothesis_slope(
    theta: &Word,
    smoothness: Smoothness,
    t: &SpectralOperator,
    c: &SpectralOperator,
) -> Result<DVector<f64>> {
    let m = theta.len();
    if !t.is_diagonal() || !c.is_diagonal() {
        return Err(FlrError::precondition(
            "hypothesis slopes need operators diagonal in the construction basis",
        ));
    }
    if t.dim() != c.dim() {
        return Err(FlrError::DimensionMismatch { expected: t.dim(), found: c.dim() });
    }
    if t.dim() < 2 * m {
        return Err(FlrError::precondition(format!(
            "operators of dimension {} cannot hold coordinates {}..{}",
            t.dim(),
            m + 1,
            2 * m
        )));
    }
    let mu = t.matrix().diagonal();
    let xi = c.matrix().diagonal();
    let scale = (m as f64).powf(-0.5);
    let mut f = DVector::zeros(t.dim());
    for k in 0..m {
        if !theta.get(k) {
            continue;
        }
        let idx = k + m;
        f[idx] = scale
            * match smoothness {
                Smoothness::Commutative { alpha } => mu[idx].powf(alpha),
                Smoothness::NonCommutative { s } => mu[idx].sqrt() * (mu[idx] * xi[idx]).powf(s),
            };
    }
    Ok(f)
}

/// `n/(2σ²) (f1 − f2)ᵀ C (f1 − f2)`.
pub fn kl_divergence(
    f1: &DVector<f64>,
    f2: &DVector<f64>,
    n: usize,
    sigma2: f64,
    c: &SpectralOperator,
) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(FlrError::precondition(format!(
            "noise variance must be positive, got {sigma2}"
        )));
    }
    let delta = f1 - f2;
    Ok(n as f64 / (2.0 * sigma2) * prediction_error(&delta, c)?)
}

/// Monte Carlo estimate of the KL divergence between the Gaussian
/// regression models with slopes `f1` and `f2`: the mean log-likelihood
/// ratio of datasets of size `n` drawn under `f1`.
pub fn kl_monte_carlo(
    f1: &DVector<f64>,
    f2: &DVector<f64>,
    n: usize,
    sigma2: f64,
    c: &SpectralOperator,
    datasets: usize,
    rng: &mut ChaCha20Rng,
) -> Result<f64> {
    if !(sigma2 > 0.0) || datasets == 0 {
        return Err(FlrError::precondition("need sigma2 > 0 and at least one dataset"));
    }
    let sigma = sigma2.sqrt();
    let x = sample_covariates(c, n * datasets, rng);
    let m1 = &x * f1;
    let m2 = &x * f2;
    let mut total = 0.0;
    for k in 0..n * datasets {
        let y = m1[k] + sigma * rng.sample::<f64, _>(StandardNormal);
        total += ((y - m2[k]).powi(2) - (y - m1[k]).powi(2)) / (2.0 * sigma2);
    }
    Ok(total / datasets as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisFamily {
    pub codebook: Codebook,
    pub smoothness: Smoothness,
    /// `slopes[j]` corresponds to `codebook.words[j]`.
    pub slopes: Vec<Vec<f64>>,
    pub basis_offset: usize,
}

impl HypothesisFamily {
    pub fn build(
        codebook: Codebook,
        smoothness: Smoothness,
        t: &SpectralOperator,
        c: &SpectralOperator,
    ) -> Result<Self> {
        let slopes = codebook
            .words
            .iter()
            .map(|w| hypothesis_slope(w, smoothness, t, c).map(|v| v.iter().copied().collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let basis_offset = codebook.m;
        Ok(HypothesisFamily {
            codebook,
            smoothness,
            slopes,
            basis_offset,
        })
    }

    fn slope(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.slopes[j])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub m: usize,
    pub n_words: usize,
    pub n: usize,
    pub sigma2: f64,
    pub u: f64,
    pub min_hamming: u32,
    pub codebook_verified: bool,
    /// `None` when some difference is not in the RKHS.
    pub min_sep_rkhs: Option<f64>,
    pub min_sep_l2: f64,
    pub min_sep_pred: f64,
    pub max_kl: f64,
    pub mean_kl: f64,
    /// `u · log N`
    pub kl_budget: f64,
    pub budget_ok: bool,
}

impl SeparationReport {
    pub fn passed(&self) -> bool {
        self.codebook_verified && self.budget_ok
    }
}

/// Pairwise separations of the family in the three norms and the KL
/// divergences `K(P_θj, P_θ0)` against the budget `u · log N`.
pub fn separation_report(
    family: &HypothesisFamily,
    t: &SpectralOperator,
    c: &SpectralOperator,
    n: usize,
    sigma2: f64,
    u: f64,
) -> Result<SeparationReport> {
    if !(u > 0.0 && u < 0.125) {
        return Err(FlrError::precondition(format!("u must lie in (0, 1/8), got {u}")));
    }
    let (min_hamming, verified) = match family.codebook.verify() {
        Ok(d) => (d, true),
        Err(_) => (
            min_pairwise(&family.codebook),
            false,
        ),
    };
    let k = family.slopes.len();
    let slopes: Vec<DVector<f64>> = (0..k).map(|j| family.slope(j)).collect();
    let mut min_rkhs = Some(f64::INFINITY);
    let mut min_l2 = f64::INFINITY;
    let mut min_pred = f64::INFINITY;
    for i in 0..k {
        for j in (i + 1)..k {
            let delta = &slopes[i] - &slopes[j];
            min_l2 = min_l2.min(l2_error(&delta));
            min_pred = min_pred.min(prediction_error(&delta, c)?);
            min_rkhs = match (min_rkhs, rkhs_error(&delta, t)?) {
                (Some(a), Some(b)) => Some(a.min(b)),
                _ => None,
            };
        }
    }
    let mut max_kl = 0.0f64;
    let mut sum_kl = 0.0;
    for slope in slopes.iter().skip(1) {
        let kl = kl_divergence(slope, &slopes[0], n, sigma2, c)?;
        max_kl = max_kl.max(kl);
        sum_kl += kl;
    }
    let n_words = family.codebook.n();
    let mean_kl = sum_kl / n_words as f64;
    let kl_budget = u * (n_words as f64).ln();
    Ok(SeparationReport {
        m: family.codebook.m,
        n_words,
        n,
        sigma2,
        u,
        min_hamming,
        codebook_verified: verified,
        min_sep_rkhs: min_rkhs,
        min_sep_l2: min_l2,
        min_sep_pred: min_pred,
        max_kl,
        mean_kl,
        kl_budget,
        budget_ok: mean_kl <= kl_budget,
    })
}

fn min_pairwise(book: &Codebook) -> u32 {
    let mut min = u32::MAX;
    for i in 0..book.words.len() {
        for j in (i + 1)..book.words.len() {
            min = min.min(book.words[i].hamming(&book.words[j]));
        }
    }
    min
}

/// Smallest integer strictly greater than `c0 · n^{1/q}`.
pub fn smallest_m_exceeding(c0: f64, n: usize, q: f64) -> usize {
    (c0 * (n as f64).powf(1.0 / q)).floor() as usize + 1
}
