//! Reproducing kernels and covariance functions on `[0, 1]`, their analytic
//! eigensystems, quadrature grids, and Nyström discretization.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FlrError, Result};
use crate::operator::SpectralOperator;

/// Kernels sharing the eigenfunctions `√2 sin((i − ½)πs)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnalyticEigensystem {
    /// `C(s, t) = min(s, t)`, eigenvalues `((i − ½)π)^{-2}`.
    BrownianCov,
    /// `K(s, t) = |s−t|³/12 − (s+t)³/12 + st`, eigenvalues `((i − ½)π)^{-4}`.
    CubicKernel,
    /// Eigenvalues `i^{-q}` on the same eigenfunctions.
    SyntheticPower { q: f64 },
}

impl AnalyticEigensystem {
    pub fn decay_exponent(&self) -> f64 {
        match self {
            AnalyticEigensystem::BrownianCov => 2.0,
            AnalyticEigensystem::CubicKernel => 4.0,
            AnalyticEigensystem::SyntheticPower { q } => *q,
        }
    }

    pub fn eigenvalue(&self, i: usize) -> Result<f64> {
        if i == 0 {
            return Err(FlrError::precondition("eigenvalue index starts at 1"));
        }
        Ok(self.eigenvalue_unchecked(i))
    }

    fn eigenvalue_unchecked(&self, i: usize) -> f64 {
        let freq = (i as f64 - 0.5) * PI;
        match self {
            AnalyticEigensystem::BrownianCov => freq.powi(-2),
            AnalyticEigensystem::CubicKernel => freq.powi(-4),
            AnalyticEigensystem::SyntheticPower { q } => (i as f64).powf(-q),
        }
    }

    /// The first `m` eigenvalues.
    pub fn eigenvalues(&self, m: usize) -> Vec<f64> {
        (1..=m).map(|i| self.eigenvalue_unchecked(i)).collect()
    }

    pub fn eigenfunction(&self, i: usize, s: f64) -> Result<f64> {
        if i == 0 {
            return Err(FlrError::precondition("eigenfunction index starts at 1"));
        }
        check_unit(s)?;
        Ok(sine_basis(i, s))
    }

    /// Diagonal operator of the first `m` eigenvalues in the sine basis.
    pub fn operator(&self, m: usize) -> Result<SpectralOperator> {
        SpectralOperator::from_diagonal(&self.eigenvalues(m))
    }
}

/// `√2 sin((i − ½)πs)`, `i ≥ 1`.
pub fn sine_basis(i: usize, s: f64) -> f64 {
    std::f64::consts::SQRT_2 * ((i as f64 - 0.5) * PI * s).sin()
}

pub fn analytic_eigenvalue(kind: &AnalyticEigensystem, i: usize) -> Result<f64> {
    kind.eigenvalue(i)
}

fn check_unit(s: f64) -> Result<()> {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(FlrError::precondition(format!("argument {s} outside [0, 1]")))
    }
}

pub fn eval_cubic_kernel(s: f64, t: f64) -> Result<f64> {
    check_unit(s)?;
    check_unit(t)?;
    Ok((s - t).abs().powi(3) / 12.0 - (s + t).powi(3) / 12.0 + s * t)
}

pub fn eval_brownian_cov(s: f64, t: f64) -> Result<f64> {
    check_unit(s)?;
    check_unit(t)?;
    Ok(s.min(t))
}

/// Quadrature rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(FlrError::precondition(format!(
                "grid needs matching nonempty points/weights, got {} and {}",
                points.len(),
                weights.len()
            )));
        }
        for &p in &points {
            check_unit(p)?;
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FlrError::precondition("grid points must be strictly increasing"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(FlrError::precondition("quadrature weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(FlrError::precondition(format!(
                "quadrature weights must sum to 1, got {total}"
            )));
        }
        Ok(QuadratureGrid { points, weights })
    }

    /// `g` equally spaced points including both endpoints, trapezoidal weights.
    pub fn uniform_trapezoid(g: usize) -> Result<Self> {
        if g < 2 {
            return Err(FlrError::precondition("trapezoid grid needs at least 2 points"));
        }
        let h = 1.0 / (g - 1) as f64;
        let points = (0..g).map(|k| if k + 1 == g { 1.0 } else { k as f64 * h }).collect();
        let weights = (0..g)
            .map(|k| if k == 0 || k + 1 == g { h / 2.0 } else { h })
            .collect();
        Self::new(points, weights)
    }

    /// Trapezoidal weights for arbitrary sorted points; the intervals
    /// between the outermost points and the ends of `[0, 1]` are assigned to
    /// the nearest point so the weights always sum to 1.
    pub fn trapezoid(points: Vec<f64>) -> Result<Self> {
        let g = points.len();
        if g == 0 {
            return Err(FlrError::precondition("grid needs at least one point"));
        }
        let mut weights = vec![0.0; g];
        for k in 0..g {
            let left = if k == 0 { points[0] } else { (points[k] - points[k - 1]) / 2.0 };
            let right = if k + 1 == g { 1.0 - points[k] } else { (points[k + 1] - points[k]) / 2.0 };
            weights[k] = left + right;
        }
        Self::new(points, weights)
    }

    /// Gauss–Legendre rule with `g` nodes mapped to `[0, 1]`.
    pub fn gauss_legendre(g: usize) -> Result<Self> {
        if g == 0 {
            return Err(FlrError::precondition("Gauss–Legendre rule needs at least one node"));
        }
        let mut points = vec![0.0; g];
        let mut weights = vec![0.0; g];
        let n = g as f64;
        for k in 0..g.div_ceil(2) {
            let mut x = (PI * (k as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(g, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(g, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // Nodes in descending x; map [-1, 1] → [0, 1].
            points[g - 1 - k] = 0.5 * (1.0 + x);
            points[k] = 0.5 * (1.0 - x);
            weights[g - 1 - k] = 0.5 * w;
            weights[k] = 0.5 * w;
        }
        // Remove the last bits of drift so the weights sum to exactly 1 within tolerance.
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self::new(points, weights)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `∫ f g` approximated on the grid.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid::uniform_trapezoid(256).expect("default grid is valid")
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// `W^{1/2} K W^{1/2}` with `K_ij = kernel(p_i, p_j)`.
pub fn nystrom_discretize(
    kernel: impl Fn(f64, f64) -> f64,
    grid: &QuadratureGrid,
) -> Result<SpectralOperator> {
    let g = grid.len();
    let pts = grid.points();
    let k = DMatrix::from_fn(g, g, |i, j| kernel(pts[i], pts[j]));
    let scale = k.amax();
    for i in 0..g {
        for j in (i + 1)..g {
            let gap = (k[(i, j)] - k[(j, i)]).abs();
            if gap > 1e-10 * scale.max(1.0) {
                return Err(FlrError::Input(format!(
                    "kernel not symmetric at ({}, {}): gap {gap:e}",
                    pts[i], pts[j]
                )));
            }
        }
    }
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut m = DMatrix::from_fn(g, g, |i, j| sqrt_w[i] * k[(i, j)] * sqrt_w[j]);
    // Exact symmetry before the eigendecomposition.
    for i in 0..g {
        for j in (i + 1)..g {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    SpectralOperator::new(m)
}

/// Curves projected onto the sine basis.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestedCurves {
    pub ids: Vec<String>,
    /// `n × M`, row `k` holds `⟨x_k, φ_i⟩` for `i = 1..M`.
    pub coeffs: DMatrix<f64>,
}

/// Read curves from CSV and project each onto the first `m` sine
/// eigenfunctions using the grid's quadrature weights.
///
/// The header row is `s, s_1, …, s_G` and must match `grid`; each later row
/// is `curve_id, x(s_1), …, x(s_G)`.
pub fn ingest_curves(path: impl AsRef<Path>, grid: &QuadratureGrid, m: usize) -> Result<IngestedCurves> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FlrError::io(path, e))?;
    ingest_curves_str(&text, grid, m)
}

/// Read the header row of a curve CSV and build a trapezoid grid on it.
pub fn grid_from_curve_header(path: impl AsRef<Path>) -> Result<QuadratureGrid> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FlrError::io(path, e))?;
    let mut reader = curve_reader(&text);
    let header = reader
        .records()
        .next()
        .ok_or_else(|| FlrError::Parse { row: 1, message: "empty file".into() })?
        .map_err(|e| FlrError::Parse { row: 1, message: e.to_string() })?;
    let points = parse_cells(&header, 1)?;
    QuadratureGrid::trapezoid(points).map_err(|e| FlrError::Parse {
        row: 1,
        message: e.to_string(),
    })
}

fn curve_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn parse_cells(record: &csv::StringRecord, row: usize) -> Result<Vec<f64>> {
    record
        .iter()
        .skip(1)
        .enumerate()
        .map(|(col, cell)| {
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| FlrError::Parse {
                    row,
                    message: format!("column {}: '{cell}' is not a finite number", col + 2),
                })
        })
        .collect()
}

pub fn ingest_curves_str(text: &str, grid: &QuadratureGrid, m: usize) -> Result<IngestedCurves> {
    if m == 0 {
        return Err(FlrError::precondition("number of basis functions must be positive"));
    }
    let mut reader = curve_reader(text);
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| FlrError::Parse { row: 1, message: "empty file".into() })?
        .map_err(|e| FlrError::Parse { row: 1, message: e.to_string() })?;
    let header_points = parse_cells(&header, 1)?;
    if header_points.len() != grid.len() {
        return Err(FlrError::Parse {
            row: 1,
            message: format!(
                "header has {} grid points, quadrature grid has {}",
                header_points.len(),
                grid.len()
            ),
        });
    }
    if let Some((k, (a, b))) = header_points
        .iter()
        .zip(grid.points())
        .enumerate()
        .find(|(_, (a, b))| (*a - *b).abs() > 1e-9)
    {
        return Err(FlrError::Parse {
            row: 1,
            message: format!("grid point {} is {a} in the header but {b} in the grid", k + 1),
        });
    }

    let basis: Vec<Vec<f64>> = (1..=m)
        .map(|i| grid.points().iter().map(|&s| sine_basis(i, s)).collect())
        .collect();

    let mut ids = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (offset, record) in records.enumerate() {
        let row = offset + 2;
        let record = record.map_err(|e| FlrError::Parse { row, message: e.to_string() })?;
        if record.len() == 1 && record.get(0).is_some_and(str::is_empty) {
            continue;
        }
        if record.len() != grid.len() + 1 {
            return Err(FlrError::Parse {
                row,
                message: format!("expected {} cells, found {}", grid.len() + 1, record.len()),
            });
        }
        let values = parse_cells(&record, row)?;
        ids.push(record.get(0).unwrap_or_default().to_string());
        rows.extend(basis.iter().map(|phi| grid.inner(&values, phi)));
    }
    let coeffs = DMatrix::from_row_slice(ids.len(), m, &rows);
    Ok(IngestedCurves { ids, coeffs })
}

/// Responses for ingested curves: a CSV with header `id, y` whose rows are
/// matched to `ids` by curve id.
pub fn read_responses(path: impl AsRef<Path>, ids: &[String]) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FlrError::io(path, e))?;
    read_responses_str(&text, ids)
}

pub fn read_responses_str(text: &str, ids: &[String]) -> Result<DVector<f64>> {
    let mut reader = curve_reader(text);
    let mut values = std::collections::HashMap::new();
    for (offset, record) in reader.records().enumerate() {
        let row = offset + 1;
        let record = record.map_err(|e| FlrError::Parse { row, message: e.to_string() })?;
        if row == 1 || (record.len() == 1 && record.get(0).is_some_and(str::is_empty)) {
            continue;
        }
        if record.len() != 2 {
            return Err(FlrError::Parse {
                row,
                message: format!("expected 2 cells (id, y), found {}", record.len()),
            });
        }
        let y = parse_cells(&record, row)?[0];
        let id = record.get(0).unwrap_or_default().to_string();
        if values.insert(id.clone(), y).is_some() {
            return Err(FlrError::Parse { row, message: format!("duplicate id '{id}'") });
        }
    }
    ids.iter()
        .map(|id| {
            values
                .get(id)
                .copied()
                .ok_or_else(|| FlrError::Input(format!("no response for curve '{id}'")))
        })
        .collect::<Result<Vec<f64>>>()
        .map(DVector::from_vec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn responses_match_by_id() {
        let ids = vec!["b".to_string(), "a".to_string()];
        let y = read_responses_str("id,y\na,1.5\nb,-2\n", &ids).unwrap();
        assert_eq!(y.as_slice(), &[-2.0, 1.5]);
        assert!(read_responses_str("id,y\na,1.5\n", &ids).is_err());
        assert!(matches!(
            read_responses_str("id,y\na,1.5\nb,x\n", &ids),
            Err(FlrError::Parse { row: 3, .. })
        ));
        assert!(matches!(
            read_responses_str("id,y\na,1\na,2\n", &ids),
            Err(FlrError::Parse { row: 3, .. })
        ));
    }

    #[test]
    fn cubic_kernel_values() {
        assert_eq!(eval_cubic_kernel(0.0, 0.0).unwrap(), 0.0);
        assert_relative_eq!(eval_cubic_kernel(1.0, 1.0).unwrap(), 1.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(eval_cubic_kernel(0.5, 0.5).unwrap(), 1.0 / 6.0, max_relative = 1e-14);
        assert!(eval_cubic_kernel(1.1, 0.5).is_err());
    }

    #[test]
    fn brownian_values() {
        assert_eq!(eval_brownian_cov(0.3, 0.7).unwrap(), 0.3);
        assert_eq!(eval_brownian_cov(0.0, 0.4).unwrap(), 0.0);
        assert_eq!(eval_brownian_cov(1.0, 1.0).unwrap(), 1.0);
        assert!(eval_brownian_cov(-0.1, 0.5).is_err());
    }

    #[test]
    fn analytic_eigenvalue_values() {
        let b = AnalyticEigensystem::BrownianCov.eigenvalue(1).unwrap();
        assert_relative_eq!(b, 4.0 / (PI * PI), max_relative = 1e-14);
        assert_relative_eq!(b, 0.405285, epsilon = 1e-6);
        let k = AnalyticEigensystem::CubicKernel.eigenvalue(1).unwrap();
        assert_relative_eq!(k, 16.0 / PI.powi(4), max_relative = 1e-14);
        assert_relative_eq!(k, 0.164255, epsilon = 1e-6);
        let p = AnalyticEigensystem::SyntheticPower { q: 6.0 }.eigenvalue(2).unwrap();
        assert_eq!(p, 0.015625);
        assert!(AnalyticEigensystem::CubicKernel.eigenvalue(0).is_err());
    }

    #[test]
    fn eigenvalues_strictly_decrease() {
        for kind in [
            AnalyticEigensystem::BrownianCov,
            AnalyticEigensystem::CubicKernel,
            AnalyticEigensystem::SyntheticPower { q: 1.5 },
        ] {
            let v = kind.eigenvalues(512);
            assert!(v.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn trapezoid_grids_sum_to_one() {
        let g = QuadratureGrid::uniform_trapezoid(256).unwrap();
        assert_relative_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let g = QuadratureGrid::trapezoid(vec![0.1, 0.5, 0.8]).unwrap();
        assert_relative_eq!(g.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(QuadratureGrid::trapezoid(vec![0.5, 0.2]).is_err());
        assert!(QuadratureGrid::new(vec![0.5], vec![0.5]).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let g = QuadratureGrid::gauss_legendre(5).unwrap();
        // exact through degree 9: ∫ s^9 = 1/10
        let f: Vec<f64> = g.points().iter().map(|s| s.powi(9)).collect();
        let ones = vec![1.0; 5];
        assert_relative_eq!(g.inner(&f, &ones), 0.1, max_relative = 1e-13);
    }

    #[test]
    fn nystrom_constant_kernel() {
        let grid = QuadratureGrid::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let op = nystrom_discretize(|_, _| 1.0, &grid).unwrap();
        assert_relative_eq!(op.eigenvalues()[0], 1.0, epsilon = 1e-14);
        assert!(op.eigenvalues()[1].abs() < 1e-14);
    }

    #[test]
    fn nystrom_rejects_asymmetric_kernel() {
        let grid = QuadratureGrid::uniform_trapezoid(8).unwrap();
        assert!(matches!(
            nystrom_discretize(|s, t| s - 2.0 * t, &grid),
            Err(FlrError::Input(_))
        ));
    }

    #[test]
    fn nystrom_matches_analytic_spectra() {
        let grid = QuadratureGrid::uniform_trapezoid(256).unwrap();
        let k = nystrom_discretize(|s, t| eval_cubic_kernel(s, t).unwrap(), &grid).unwrap();
        let top = k.eigenvalues()[0];
        assert!((top / (16.0 / PI.powi(4)) - 1.0).abs() < 0.01, "top={top}");
        let c = nystrom_discretize(|s, t| eval_brownian_cov(s, t).unwrap(), &grid).unwrap();
        for i in 1..=5 {
            let analytic = AnalyticEigensystem::BrownianCov.eigenvalue(i).unwrap();
            let rel = (c.eigenvalues()[i - 1] / analytic - 1.0).abs();
            assert!(rel < 0.02, "i={i} rel={rel}");
        }
    }

    fn series(kind: AnalyticEigensystem, terms: usize, s: f64, t: f64) -> f64 {
        (1..=terms)
            .map(|i| kind.eigenvalue(i).unwrap() * sine_basis(i, s) * sine_basis(i, t))
            .sum()
    }

    fn test_grid() -> Vec<f64> {
        (0..16).map(|k| k as f64 / 15.0).collect()
    }

    #[test]
    fn brownian_mercer_reconstruction() {
        let worst = |terms| {
            let mut worst = 0.0f64;
            for &s in &test_grid() {
                for &t in &test_grid() {
                    worst = worst.max((series(AnalyticEigensystem::BrownianCov, terms, s, t) - s.min(t)).abs());
                }
            }
            worst
        };
        assert!(worst(4096) <= 1e-4, "4096 terms: {}", worst(4096));
        // At s = t = 1 every φ_i² equals 2, so the 512-term error is the full
        // tail 2 Σ_{i>512} ξ_i ≈ 2 / (π² · 512), above 1e-4. Σ ξ_i = ∫ s ds = 1/2.
        let head: f64 = AnalyticEigensystem::BrownianCov.eigenvalues(512).iter().sum();
        let tail = 1.0 - 2.0 * head;
        let err = worst(512);
        assert!(err <= tail * (1.0 + 1e-6), "err {err} tail {tail}");
        assert!(err >= 0.99 * tail, "err {err} tail {tail}");
    }

    #[test]
    fn cubic_kernel_matches_series() {
        use rand::Rng;
        let mut rng = crate::config::derive_stream(31, &[1]);
        for _ in 0..16 {
            let s: f64 = rng.random_range(0.0..=1.0);
            let t: f64 = rng.random_range(0.0..=1.0);
            let closed = eval_cubic_kernel(s, t).unwrap();
            let sum = series(AnalyticEigensystem::CubicKernel, 1024, s, t);
            assert!((closed - sum).abs() <= 1e-6, "({s}, {t}): {closed} vs {sum}");
        }
    }

    #[test]
    fn sine_basis_is_orthonormal() {
        let grid = QuadratureGrid::gauss_legendre(2048).unwrap();
        let phi: Vec<Vec<f64>> = (1..=32)
            .map(|i| grid.points().iter().map(|&s| sine_basis(i, s)).collect())
            .collect();
        for i in 0..32 {
            for j in 0..32 {
                let want = if i == j { 1.0 } else { 0.0 };
                let got = grid.inner(&phi[i], &phi[j]);
                assert!((got - want).abs() <= 1e-6, "<phi_{}, phi_{}> = {got}", i + 1, j + 1);
            }
        }
    }

    #[test]
    fn nystrom_cubic_and_brownian_commute() {
        let grid = QuadratureGrid::uniform_trapezoid(256).unwrap();
        let t = nystrom_discretize(|s, u| eval_cubic_kernel(s, u).unwrap(), &grid).unwrap();
        let c = nystrom_discretize(|s, u| eval_brownian_cov(s, u).unwrap(), &grid).unwrap();
        let tc = t.matrix() * c.matrix();
        let ct = c.matrix() * t.matrix();
        let rel = (&tc - &ct).norm() / tc.norm();
        assert!(rel <= 0.02, "relative commutator {rel}");
    }

    fn curve_csv(grid: &QuadratureGrid, curves: &[(&str, Vec<f64>)]) -> String {
        let mut text = String::from("s");
        for p in grid.points() {
            text.push_str(&format!(",{p:?}"));
        }
        text.push('\n');
        for (id, values) in curves {
            text.push_str(id);
            for v in values {
                text.push_str(&format!(",{v:?}"));
            }
            text.push('\n');
        }
        text
    }

    #[test]
    fn ingest_projects_onto_sine_basis() {
        let grid = QuadratureGrid::uniform_trapezoid(256).unwrap();
        let phi1: Vec<f64> = grid.points().iter().map(|&s| sine_basis(1, s)).collect();
        let mix: Vec<f64> = grid
            .points()
            .iter()
            .map(|&s| sine_basis(1, s) + 2.0 * sine_basis(3, s))
            .collect();
        let zero = vec![0.0; grid.len()];
        let text = curve_csv(&grid, &[("a", phi1), ("b", zero), ("c", mix)]);
        let curves = ingest_curves_str(&text, &grid, 6).unwrap();
        assert_eq!(curves.ids, vec!["a", "b", "c"]);
        let expect = [[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0; 6], [1.0, 0.0, 2.0, 0.0, 0.0, 0.0]];
        for (r, row) in expect.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                assert!((curves.coeffs[(r, i)] - v).abs() < 1e-4, "row {r} coeff {i}");
            }
        }
    }

    #[test]
    fn ingest_reports_row_numbers() {
        let grid = QuadratureGrid::trapezoid(vec![0.25, 0.5, 0.75]).unwrap();
        let ragged = "s,0.25,0.5,0.75\na,1,2,3\nb,1,2\n";
        match ingest_curves_str(ragged, &grid, 2) {
            Err(FlrError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_cell = "s,0.25,0.5,0.75\na,1,x,3\n";
        match ingest_curves_str(bad_cell, &grid, 2) {
            Err(FlrError::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        let mismatch = "s,0.25,0.5,0.8\na,1,2,3\n";
        match ingest_curves_str(mismatch, &grid, 2) {
            Err(FlrError::Parse { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
