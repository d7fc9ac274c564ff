//! The spectrally regularized estimator `β̂ = T^{1/2} g_λ(Λ̂_n) T^{1/2} R̂`
//! and its Tikhonov Gram-representer counterpart.

use std::cmp::Ordering;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FlrError, Result};
use crate::filters::{FilterFamily, FilterKind, SpectrumDomain};
use crate::metrics::{error_for, MetricTruth};
use crate::operator::{effective_dimension_of, symmetrize, SpectralOperator};
use crate::theory::Metric;

/// Rows per leaf of the pairwise summation tree.
const LEAF_ROWS: usize = 64;
/// Landweber is limited to 1e5 iterations: λ is kept at or above 1e-5·η.
const LANDWEBER_MIN_RATIO: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub eff_dim: f64,
    pub lambda_hat_max_eig: f64,
    pub n: usize,
    pub lambda_requested: f64,
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub lambda_used: f64,
    pub filter_kind: String,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn beta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta_hat)
    }
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(FlrError::Numerical(format!(
            "covariate entry at row {}, column {} is not finite",
            k % x.nrows() + 1,
            k / x.nrows() + 1
        ))),
        None => Ok(()),
    }
}

/// Row order used for every accumulation: rows sorted by their bit
/// patterns (then by response), so that permuting the sample does not
/// change a single bit of the result.
fn canonical_order(x: &DMatrix<f64>, y: Option<&DVector<f64>>) -> Vec<usize> {
    let (n, m) = (x.nrows(), x.ncols());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        for j in 0..m {
            match x[(a, j)].total_cmp(&x[(b, j)]) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        match y {
            Some(y) => y[a].total_cmp(&y[b]),
            None => Ordering::Equal,
        }
    });
    order
}

fn gather_rows(x: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(order.len(), x.ncols(), |i, j| x[(order[i], j)])
}

/// `Σ_k x_k x_kᵀ` by pairwise summation over row blocks.
fn pairwise_gram(x: &DMatrix<f64>, lo: usize, hi: usize) -> DMatrix<f64> {
    if hi - lo <= LEAF_ROWS {
        let block = x.rows(lo, hi - lo);
        return block.tr_mul(&block);
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_gram(x, lo, mid) + pairwise_gram(x, mid, hi)
}

fn pairwise_xty(x: &DMatrix<f64>, y: &DVector<f64>, lo: usize, hi: usize) -> DVector<f64> {
    if hi - lo <= LEAF_ROWS {
        return x.rows(lo, hi - lo).tr_mul(&y.rows(lo, hi - lo));
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_xty(x, y, lo, mid) + pairwise_xty(x, y, mid, hi)
}

fn covariance_matrix(sorted_x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sorted_x.nrows();
    symmetrize(pairwise_gram(sorted_x, 0, n) / n as f64)
}

/// `Ĉ_n = XᵀX / n`.
pub fn empirical_covariance(x_coeffs: &DMatrix<f64>) -> Result<SpectralOperator> {
    if x_coeffs.nrows() == 0 {
        return Err(FlrError::precondition("at least one sample is required"));
    }
    check_finite(x_coeffs)?;
    let order = canonical_order(x_coeffs, None);
    SpectralOperator::new(covariance_matrix(&gather_rows(x_coeffs, &order)))
}

/// `R̂ = Xᵀy / n`.
pub fn empirical_xy(x_coeffs: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x_coeffs.nrows() != y.len() {
        return Err(FlrError::DimensionMismatch {
            expected: x_coeffs.nrows(),
            found: y.len(),
        });
    }
    if y.is_empty() {
        return Err(FlrError::precondition("at least one sample is required"));
    }
    check_finite(x_coeffs)?;
    let order = canonical_order(x_coeffs, Some(y));
    let xs = gather_rows(x_coeffs, &order);
    let ys = DVector::from_iterator(y.len(), order.iter().map(|&k| y[k]));
    Ok(pairwise_xty(&xs, &ys, 0, y.len()) / y.len() as f64)
}

/// Sample-dependent part of the estimator: the eigendecomposition of
/// `Λ̂_n` and `T^{1/2} R̂`. One system serves any number of
/// (filter, λ) pairs.
#[derive(Clone, Debug)]
pub struct EmpiricalSystem {
    t_half: SpectralOperator,
    lambda_hat: SpectralOperator,
    /// `Uᵀ T^{1/2} R̂` in the eigenbasis of `Λ̂_n`.
    rhs_eigen: DVector<f64>,
    n: usize,
}

impl EmpiricalSystem {
    /// `t_half` is `T^{1/2}`.
    pub fn new(t_half: &SpectralOperator, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let (n, m) = (x.nrows(), x.ncols());
        if n == 0 {
            return Err(FlrError::precondition("at least one sample is required"));
        }
        if y.len() != n {
            return Err(FlrError::DimensionMismatch { expected: n, found: y.len() });
        }
        if t_half.dim() != m {
            return Err(FlrError::DimensionMismatch { expected: t_half.dim(), found: m });
        }
        check_finite(x)?;
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(FlrError::Numerical(format!("response {v} is not finite")));
        }
        let order = canonical_order(x, Some(y));
        let xs = gather_rows(x, &order);
        let ys = DVector::from_iterator(n, order.iter().map(|&k| y[k]));
        let c_hat = covariance_matrix(&xs);
        let r_hat = pairwise_xty(&xs, &ys, 0, n) / n as f64;

        let lambda_matrix = if t_half.is_diagonal() {
            let d = t_half.matrix().diagonal();
            DMatrix::from_fn(m, m, |i, j| d[i] * c_hat[(i, j)] * d[j])
        } else {
            symmetrize(t_half.matrix() * &c_hat * t_half.matrix())
        };
        let lambda_hat = SpectralOperator::new(lambda_matrix)?;
        let t_half_r = t_half.matrix() * r_hat;
        let rhs_eigen = lambda_hat.to_eigenbasis(&t_half_r);
        Ok(EmpiricalSystem {
            t_half: t_half.clone(),
            lambda_hat,
            rhs_eigen,
            n,
        })
    }

    pub fn lambda_hat(&self) -> &SpectralOperator {
        &self.lambda_hat
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fit(&self, family: &FilterFamily, lambda: f64) -> Result<FitResult> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(FlrError::precondition(format!("lambda must be positive, got {lambda}")));
        }
        let eta = self.lambda_hat.max_eigenvalue();
        let mut warnings = Vec::new();
        let mut used = lambda;
        let mut clamped = false;
        let domain_eta = if eta > 0.0 {
            if lambda > eta {
                warnings.push(format!(
                    "lambda {lambda:e} exceeds the largest eigenvalue {eta:e} of the empirical operator; clamped"
                ));
                used = eta;
                clamped = true;
            }
            if family.kind == FilterKind::Landweber && used < LANDWEBER_MIN_RATIO * eta {
                warnings.push(format!(
                    "lambda {used:e} needs more than 1e5 Landweber iterations; raised to {:e}",
                    LANDWEBER_MIN_RATIO * eta
                ));
                used = LANDWEBER_MIN_RATIO * eta;
                clamped = true;
            }
            eta
        } else {
            // Degenerate sample: the empirical operator vanishes.
            warnings.push("empirical operator is zero".into());
            used
        };
        let domain = SpectrumDomain::new(domain_eta)?;
        let mut coeffs = self.rhs_eigen.clone();
        for (k, &sigma) in self.lambda_hat.eigenvalues().iter().enumerate() {
            coeffs[k] *= family.eval(used, sigma, &domain)?;
        }
        let beta = self.t_half.matrix() * (self.lambda_hat.eigenvectors() * coeffs);
        if let Some(v) = beta.iter().find(|v| !v.is_finite()) {
            return Err(FlrError::NonFinite {
                what: format!("estimator coefficient {v}"),
                lambda: used,
                sigma: eta,
            });
        }
        Ok(FitResult {
            beta_hat: beta.iter().copied().collect(),
            lambda_used: used,
            filter_kind: family.kind.name().to_string(),
            diagnostics: FitDiagnostics {
                eff_dim: effective_dimension_of(self.lambda_hat.eigenvalues().as_slice(), used),
                lambda_hat_max_eig: eta,
                n: self.n,
                lambda_requested: lambda,
                clamped,
                warnings,
            },
        })
    }
}

/// `β̂ = T^{1/2} g_λ(T^{1/2} Ĉ_n T^{1/2}) T^{1/2} R̂`. λ above `λ_max(Λ̂_n)`
/// is clamped with a diagnostic.
pub fn fit_flr(
    t: &SpectralOperator,
    x_coeffs: &DMatrix<f64>,
    y: &DVector<f64>,
    family: &FilterFamily,
    lambda: f64,
) -> Result<FitResult> {
    let t_half = t.frac_power(0.5)?;
    EmpiricalSystem::new(&t_half, x_coeffs, y)?.fit(family, lambda)
}

/// Tikhonov estimate from the `n × n` system `(G/n + λI) a = y/n` with
/// `G_kl = ⟨x_k, T x_l⟩`, then `β̂ = T Xᵀ a`.
pub fn fit_tikhonov_representer(
    t: &SpectralOperator,
    x_coeffs: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<FitResult> {
    let (n, m) = (x_coeffs.nrows(), x_coeffs.ncols());
    if n == 0 {
        return Err(FlrError::precondition("at least one sample is required"));
    }
    if y.len() != n {
        return Err(FlrError::DimensionMismatch { expected: n, found: y.len() });
    }
    if t.dim() != m {
        return Err(FlrError::DimensionMismatch { expected: t.dim(), found: m });
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FlrError::precondition(format!("lambda must be positive, got {lambda}")));
    }
    check_finite(x_coeffs)?;
    let nf = n as f64;
    let xt = x_coeffs * t.matrix();
    let mut system = symmetrize(&xt * x_coeffs.transpose()) / nf;
    for k in 0..n {
        system[(k, k)] += lambda;
    }
    let chol = Cholesky::new(system).ok_or_else(|| {
        FlrError::Conditioning(format!("Gram system not positive definite at lambda = {lambda:e}"))
    })?;
    let a = chol.solve(&(y / nf));
    let beta = xt.tr_mul(&a);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(FlrError::Conditioning(format!(
            "Gram system solution not finite at lambda = {lambda:e}"
        )));
    }
    let lambda_hat = {
        let t_half = t.frac_power(0.5)?;
        let c_hat = x_coeffs.tr_mul(x_coeffs) / nf;
        SpectralOperator::new(symmetrize(t_half.matrix() * c_hat * t_half.matrix()))?
    };
    Ok(FitResult {
        beta_hat: beta.iter().copied().collect(),
        lambda_used: lambda,
        filter_kind: FilterKind::Tikhonov.name().to_string(),
        diagnostics: FitDiagnostics {
            eff_dim: effective_dimension_of(lambda_hat.eigenvalues().as_slice(), lambda),
            lambda_hat_max_eig: lambda_hat.max_eigenvalue(),
            n,
            lambda_requested: lambda,
            clamped: false,
            warnings: Vec::new(),
        },
    })
}

/// Grid λ minimizing the true error of `metric` (available because the
/// truth is known). Ties keep the first grid point; undefined errors are
/// skipped.
pub fn choose_lambda_oracle(
    system: &EmpiricalSystem,
    truth: &MetricTruth<'_>,
    family: &FilterFamily,
    metric: Metric,
    lambda_grid: &[f64],
) -> Result<(f64, f64)> {
    if lambda_grid.is_empty() {
        return Err(FlrError::precondition("lambda grid is empty"));
    }
    let mut best: Option<(f64, f64)> = None;
    for &lambda in lambda_grid {
        let fit = system.fit(family, lambda)?;
        let delta = fit.beta() - truth.beta_star;
        if let Some(err) = error_for(metric, &delta, truth)? {
            if best.is_none_or(|(_, e)| err < e) {
                best = Some((lambda, err));
            }
        }
    }
    best.ok_or_else(|| FlrError::Numerical(format!("{metric} error undefined on the whole grid")))
}
