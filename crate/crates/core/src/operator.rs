//! Dense symmetric PSD operators in a truncated orthonormal basis.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FlrError, Result};
use crate::filters::{FilterFamily, SpectrumDomain};

/// Relative threshold below which negative eigenvalues are treated as roundoff.
pub const PSD_TOLERANCE: f64 = 1e-12;
const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// A symmetric positive semidefinite matrix with its eigendecomposition,
/// computed once at construction. Eigenvalues are stored in descending order
/// and clamped at zero.
#[derive(Clone, Debug)]
pub struct SpectralOperator {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl PartialEq for SpectralOperator {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl SpectralOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(FlrError::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(FlrError::precondition("operator dimension must be at least 1"));
        }
        if let Some(v) = matrix.iter().find(|v| !v.is_finite()) {
            return Err(FlrError::Numerical(format!("operator entry {v} is not finite")));
        }
        let scale = matrix.amax();
        let m = matrix.nrows();
        for i in 0..m {
            for j in (i + 1)..m {
                let gap = (matrix[(i, j)] - matrix[(j, i)]).abs();
                if gap > SYMMETRY_TOLERANCE * scale {
                    return Err(FlrError::Input(format!(
                        "operator not symmetric: |A[{i}][{j}] - A[{j}][{i}]| = {gap:e}"
                    )));
                }
            }
        }
        let matrix = symmetrize(matrix);
        if is_diagonal(&matrix) {
            let diag: Vec<f64> = matrix.diagonal().iter().copied().collect();
            return Self::from_diagonal(&diag);
        }
        let eig = SymmetricEigen::new(matrix.clone());
        let (values, vectors) = sort_descending(eig.eigenvalues, eig.eigenvectors);
        let values = clamp_psd(values)?;
        Ok(SpectralOperator {
            matrix,
            eigenvalues: values,
            eigenvectors: vectors,
        })
    }

    /// Diagonal operator; its eigenvectors are the canonical basis vectors.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return Err(FlrError::precondition("operator dimension must be at least 1"));
        }
        if let Some(v) = diag.iter().find(|v| !v.is_finite()) {
            return Err(FlrError::Numerical(format!("operator entry {v} is not finite")));
        }
        let m = diag.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]).then(a.cmp(&b)));
        let values = clamp_psd(DVector::from_iterator(m, order.iter().map(|&k| diag[k])))?;
        let mut vectors = DMatrix::zeros(m, m);
        for (col, &k) in order.iter().enumerate() {
            vectors[(k, col)] = 1.0;
        }
        let mut matrix = DMatrix::zeros(m, m);
        for (col, &k) in order.iter().enumerate() {
            matrix[(k, k)] = values[col];
        }
        Ok(SpectralOperator {
            matrix,
            eigenvalues: values,
            eigenvectors: vectors,
        })
    }

    pub fn identity(m: usize) -> Result<Self> {
        Self::from_diagonal(&vec![1.0; m])
    }

    pub fn zeros(m: usize) -> Result<Self> {
        Self::from_diagonal(&vec![0.0; m])
    }

    /// Operator `U diag(values) Uᵀ` from a known eigensystem. `values` must be
    /// nonnegative; order is normalized to descending.
    pub(crate) fn from_eigen_parts(values: DVector<f64>, vectors: DMatrix<f64>) -> Self {
        let (values, vectors) = sort_descending(values, vectors);
        let scaled = &vectors * DMatrix::from_diagonal(&values);
        let matrix = symmetrize(&scaled * vectors.transpose());
        SpectralOperator {
            matrix,
            eigenvalues: values,
            eigenvectors: vectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    pub fn is_diagonal(&self) -> bool {
        is_diagonal(&self.matrix)
    }

    /// Relative Frobenius error of `U diag(λ) Uᵀ` against the stored matrix.
    pub fn reconstruction_error(&self) -> f64 {
        let rebuilt = self.map_spectrum(|v| v);
        relative_frobenius(&rebuilt, &self.matrix)
    }

    /// `U diag(f(λ_i)) Uᵀ` as a plain matrix.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mapped = self.eigenvalues.map(f);
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&mapped);
        symmetrize(&scaled * self.eigenvectors.transpose())
    }

    pub fn frac_power(&self, p: f64) -> Result<Self> {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(FlrError::precondition(format!(
                "fractional power must be finite and nonnegative, got {p}"
            )));
        }
        let values = self.eigenvalues.map(|v| pow_psd(v, p));
        Ok(Self::from_eigen_parts(values, self.eigenvectors.clone()))
    }

    /// `g_λ(A)` for a filter family. The filter domain is `[0, η]` with
    /// `η = λ_max(A)`, widened to `λ` when `λ` exceeds the spectrum.
    pub fn apply_filter(&self, family: &FilterFamily, lambda: f64) -> Result<Self> {
        let eta = self.max_eigenvalue().max(lambda);
        self.apply_filter_on(family, lambda, eta)
    }

    pub fn apply_filter_on(&self, family: &FilterFamily, lambda: f64, eta: f64) -> Result<Self> {
        let domain = SpectrumDomain::new(eta)?;
        let mut values = DVector::zeros(self.dim());
        for (k, &sigma) in self.eigenvalues.iter().enumerate() {
            values[k] = family.eval(lambda, sigma, &domain)?;
        }
        Ok(Self::from_eigen_parts(values, self.eigenvectors.clone()))
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(FlrError::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(&self.matrix * v)
    }

    /// Coefficients of `v` in the eigenbasis (`Uᵀ v`).
    pub fn to_eigenbasis(&self, v: &DVector<f64>) -> DVector<f64> {
        self.eigenvectors.tr_mul(v)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

impl Serialize for SpectralOperator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            dim: usize,
            matrix: &'a [f64],
        }
        // nalgebra is column-major; the matrix is symmetric so the transpose
        // is only needed to make the row-major layout explicit.
        let row_major = self.matrix.transpose();
        Repr {
            dim: self.dim(),
            matrix: row_major.as_slice(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SpectralOperator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            dim: usize,
            matrix: Vec<f64>,
        }
        let repr = Repr::deserialize(deserializer)?;
        if repr.matrix.len() != repr.dim * repr.dim {
            return Err(serde::de::Error::custom(format!(
                "operator of dim {} needs {} entries, found {}",
                repr.dim,
                repr.dim * repr.dim,
                repr.matrix.len()
            )));
        }
        let matrix = DMatrix::from_row_slice(repr.dim, repr.dim, &repr.matrix);
        SpectralOperator::new(matrix).map_err(serde::de::Error::custom)
    }
}

pub fn frac_power(a: &SpectralOperator, p: f64) -> Result<SpectralOperator> {
    a.frac_power(p)
}

pub fn apply_filter(
    family: &FilterFamily,
    lambda: f64,
    a: &SpectralOperator,
) -> Result<SpectralOperator> {
    a.apply_filter(family, lambda)
}

/// `T^{1/2} C T^{1/2}`, symmetrized.
pub fn sandwich(t: &SpectralOperator, c: &SpectralOperator) -> Result<SpectralOperator> {
    let half = t.frac_power(0.5)?;
    sandwich_with_root(half.matrix(), c.matrix())
}

pub(crate) fn sandwich_with_root(
    t_half: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<SpectralOperator> {
    if t_half.nrows() != c.nrows() {
        return Err(FlrError::DimensionMismatch {
            expected: t_half.nrows(),
            found: c.nrows(),
        });
    }
    SpectralOperator::new(symmetrize(t_half * c * t_half))
}

/// `N(λ) = Σ τ_i / (τ_i + λ)`.
pub fn effective_dimension(lambda_op: &SpectralOperator, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FlrError::precondition(format!("lambda must be positive, got {lambda}")));
    }
    Ok(effective_dimension_of(lambda_op.eigenvalues().as_slice(), lambda))
}

pub(crate) fn effective_dimension_of(eigenvalues: &[f64], lambda: f64) -> f64 {
    eigenvalues.iter().map(|&tau| tau / (tau + lambda)).sum()
}

/// Compares `T^{1/2} g_λ(T^{1/2} A T^{1/2}) T^{1/2}` against the inclusion
/// form `J g_λ(J* A J) J*` with `J = U_T diag(√μ)`, where the second side is
/// assembled from the eigenpairs `(m_i, φ_i)` of `J* A J`: modes with
/// `m_i > 0` use the vectors `T A J φ_i / m_i`, null modes use `J φ_i`.
/// Returns the relative Frobenius deviation.
pub fn verify_jt_identity(
    a: &SpectralOperator,
    t: &SpectralOperator,
    family: &FilterFamily,
    lambda: f64,
) -> Result<f64> {
    if a.dim() != t.dim() {
        return Err(FlrError::DimensionMismatch {
            expected: t.dim(),
            found: a.dim(),
        });
    }
    let t_half = t.frac_power(0.5)?;
    let inner = sandwich_with_root(t_half.matrix(), a.matrix())?;
    let eta = inner.max_eigenvalue().max(lambda);
    let filtered = inner.apply_filter_on(family, lambda, eta)?;
    let direct = t_half.matrix() * filtered.matrix() * t_half.matrix();

    let j = t.eigenvectors() * DMatrix::from_diagonal(&t.eigenvalues().map(f64::sqrt));
    let jaj = SpectralOperator::new(symmetrize(j.transpose() * a.matrix() * &j))?;
    let domain = SpectrumDomain::new(eta)?;
    let top = jaj.max_eigenvalue();
    let ta = t.matrix() * a.matrix();
    let m = a.dim();
    let mut via_j = DMatrix::zeros(m, m);
    for (k, &mk) in jaj.eigenvalues().iter().enumerate() {
        let phi = jaj.eigenvectors().column(k);
        let j_phi = &j * phi;
        let v = if top > 0.0 && mk > PSD_TOLERANCE * top {
            (&ta * &j_phi) / mk
        } else {
            j_phi
        };
        let g = family.eval(lambda, mk, &domain)?;
        via_j += g * &v * v.transpose();
    }

    let norm = direct.norm();
    let gap = (&direct - &via_j).norm();
    Ok(if norm > 0.0 { gap / norm } else { gap })
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

pub(crate) fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    let gap = (a - b).norm();
    if denom > 0.0 {
        gap / denom
    } else {
        gap
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || m[(i, j)] == 0.0))
}

/// `v^p` with `0^0 = 1` and `0^p = 0` for `p > 0`.
fn pow_psd(v: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if v <= 0.0 {
        0.0
    } else if p == 0.5 {
        v.sqrt()
    } else if p == 1.0 {
        v
    } else {
        v.powf(p)
    }
}

fn sort_descending(values: DVector<f64>, vectors: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    if order.iter().enumerate().all(|(k, &o)| k == o) {
        return (values, vectors);
    }
    let sorted_values = DVector::from_iterator(m, order.iter().map(|&k| values[k]));
    let mut sorted_vectors = DMatrix::zeros(vectors.nrows(), m);
    for (col, &k) in order.iter().enumerate() {
        sorted_vectors.set_column(col, &vectors.column(k));
    }
    (sorted_values, sorted_vectors)
}

fn clamp_psd(values: DVector<f64>) -> Result<DVector<f64>> {
    let top = values.iter().fold(0.0f64, |acc, v| acc.max(*v));
    let floor = -PSD_TOLERANCE * top;
    if let Some(v) = values.iter().find(|v| **v < floor) {
        return Err(FlrError::Input(format!(
            "operator is not positive semidefinite: eigenvalue {v:e} below -1e-12·{top:e}"
        )));
    }
    Ok(values.map(|v| v.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn diag(v: &[f64]) -> SpectralOperator {
        SpectralOperator::from_diagonal(v).unwrap()
    }

    #[test]
    fn frac_power_examples() {
        let a = diag(&[4.0, 9.0]).frac_power(0.5).unwrap();
        assert_eq!(a.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));
        let p0 = diag(&[4.0, 0.0]).frac_power(0.0).unwrap();
        assert_eq!(p0.matrix(), &DMatrix::identity(2, 2));
        let cube = diag(&[2.0]).frac_power(3.0).unwrap();
        assert_relative_eq!(cube.matrix()[(0, 0)], 8.0, max_relative = 1e-15);
        assert!(diag(&[1.0]).frac_power(-1.0).is_err());
    }

    #[test]
    fn apply_filter_examples() {
        let id = SpectralOperator::identity(3).unwrap();
        let g = id.apply_filter(&FilterFamily::tikhonov(), 1.0).unwrap();
        assert_eq!(g.matrix(), &(DMatrix::identity(3, 3) * 0.5));

        let g = diag(&[1.0, 0.25])
            .apply_filter(&FilterFamily::cutoff(), 0.5)
            .unwrap();
        assert_eq!(g.matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])));

        let zero = SpectralOperator::zeros(2).unwrap();
        let g = zero.apply_filter(&FilterFamily::tikhonov(), 1.0).unwrap();
        assert_eq!(g.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn sandwich_examples() {
        let s = sandwich(&diag(&[4.0]), &diag(&[3.0])).unwrap();
        assert_relative_eq!(s.matrix()[(0, 0)], 12.0, max_relative = 1e-15);

        let c = SpectralOperator::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0])).unwrap();
        let s = sandwich(&SpectralOperator::identity(2).unwrap(), &c).unwrap();
        assert_eq!(s.matrix(), c.matrix());

        let ones = SpectralOperator::new(DMatrix::from_element(2, 2, 1.0)).unwrap();
        let s = sandwich(&diag(&[1.0, 0.0]), &ones).unwrap();
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn effective_dimension_examples() {
        assert_relative_eq!(effective_dimension(&diag(&[1.0, 1.0]), 1.0).unwrap(), 1.0);
        assert_relative_eq!(
            effective_dimension(&diag(&[1.0, 0.25]), 0.5).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_eq!(effective_dimension(&SpectralOperator::zeros(3).unwrap(), 0.1).unwrap(), 0.0);
        assert!(effective_dimension(&diag(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn jt_identity_examples() {
        let dev = verify_jt_identity(
            &diag(&[2.0]),
            &SpectralOperator::identity(1).unwrap(),
            &FilterFamily::tikhonov(),
            1.0,
        )
        .unwrap();
        assert!(dev <= 1e-10);

        let t = SpectralOperator::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let dev = verify_jt_identity(
            &SpectralOperator::zeros(2).unwrap(),
            &t,
            &FilterFamily::tikhonov(),
            0.5,
        )
        .unwrap();
        assert!(dev <= 1e-15, "dev = {dev}");
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SpectralOperator::new(asym), Err(FlrError::Input(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpectralOperator::new(indefinite), Err(FlrError::Input(_))));
    }

    #[test]
    fn roundoff_negative_eigenvalues_are_clamped() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let op = SpectralOperator::new(m).unwrap();
        assert!(op.min_eigenvalue() >= 0.0);
        assert!(op.reconstruction_error() < 1e-12);
    }

    #[test]
    fn eigenvalues_are_descending() {
        let op = diag(&[0.1, 3.0, 1.0]);
        assert_eq!(op.eigenvalues().as_slice(), &[3.0, 1.0, 0.1]);
        assert_eq!(op.reconstruction_error(), 0.0);
    }

    #[test]
    fn json_round_trip_is_row_major() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let op = SpectralOperator::new(m).unwrap();
        let text = serde_json::to_string(&op).unwrap();
        assert_eq!(text, r#"{"dim":2,"matrix":[2.0,1.0,1.0,3.0]}"#);
        let back: SpectralOperator = serde_json::from_str(&text).unwrap();
        assert_eq!(back, op);
        assert!(serde_json::from_str::<SpectralOperator>(r#"{"dim":2,"matrix":[1.0]}"#).is_err());
    }
}
