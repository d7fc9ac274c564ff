//! Error functionals: L², RKHS and prediction.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{FlrError, Result};
use crate::operator::{SpectralOperator, PSD_TOLERANCE};
use crate::simulate::Model;
use crate::theory::Metric;

/// Share of `‖δ‖²` allowed in the numerical null space of `T` before the
/// RKHS norm is declared undefined.
const NULL_MASS_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTriple {
    pub l2: f64,
    /// `None` when `δ` is not in the RKHS.
    pub rkhs: Option<f64>,
    pub pred: f64,
}

impl ErrorTriple {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::L2 => Some(self.l2),
            Metric::Rkhs => self.rkhs,
            Metric::Prediction => Some(self.pred),
        }
    }
}

/// Truth needed to score an estimate.
#[derive(Clone, Copy, Debug)]
pub struct MetricTruth<'a> {
    pub beta_star: &'a DVector<f64>,
    pub t: &'a SpectralOperator,
    pub c: &'a SpectralOperator,
}

impl<'a> MetricTruth<'a> {
    pub fn from_model(model: &'a Model) -> Self {
        MetricTruth {
            beta_star: &model.beta_star,
            t: &model.t,
            c: &model.c,
        }
    }
}

pub fn l2_error(delta: &DVector<f64>) -> f64 {
    delta.norm()
}

/// `√(δᵀ T⁺ δ)`, or `None` when more than 1e-8 of `‖δ‖²` lies in the
/// numerical null space of `T` (eigenvalues at or below `1e-12·λ_max`).
pub fn rkhs_error(delta: &DVector<f64>, t: &SpectralOperator) -> Result<Option<f64>> {
    check_dim(delta, t)?;
    let total = delta.norm_squared();
    if total == 0.0 {
        return Ok(Some(0.0));
    }
    let coords = t.to_eigenbasis(delta);
    let cutoff = PSD_TOLERANCE * t.max_eigenvalue();
    let mut null_mass = 0.0;
    let mut norm_sq = 0.0;
    for (w, &mu) in coords.iter().zip(t.eigenvalues().iter()) {
        if mu > cutoff {
            norm_sq += w * w / mu;
        } else {
            null_mass += w * w;
        }
    }
    if null_mass > NULL_MASS_TOLERANCE * total {
        return Ok(None);
    }
    Ok(Some(norm_sq.sqrt()))
}

/// `δᵀ C δ`, evaluated in the eigenbasis of `C` so that it is never negative.
pub fn prediction_error(delta: &DVector<f64>, c: &SpectralOperator) -> Result<f64> {
    check_dim(delta, c)?;
    if c.is_diagonal() {
        return Ok(delta
            .iter()
            .zip(c.matrix().diagonal().iter())
            .map(|(d, xi)| xi * d * d)
            .sum());
    }
    let coords = c.to_eigenbasis(delta);
    Ok(coords
        .iter()
        .zip(c.eigenvalues().iter())
        .map(|(w, xi)| xi * w * w)
        .sum())
}

pub fn error_triple(delta: &DVector<f64>, t: &SpectralOperator, c: &SpectralOperator) -> Result<ErrorTriple> {
    Ok(ErrorTriple {
        l2: l2_error(delta),
        rkhs: rkhs_error(delta, t)?,
        pred: prediction_error(delta, c)?,
    })
}

pub(crate) fn error_for(metric: Metric, delta: &DVector<f64>, truth: &MetricTruth<'_>) -> Result<Option<f64>> {
    Ok(match metric {
        Metric::L2 => Some(l2_error(delta)),
        Metric::Rkhs => rkhs_error(delta, truth.t)?,
        Metric::Prediction => Some(prediction_error(delta, truth.c)?),
    })
}

fn check_dim(delta: &DVector<f64>, op: &SpectralOperator) -> Result<()> {
    if delta.len() != op.dim() {
        return Err(FlrError::DimensionMismatch {
            expected: op.dim(),
            found: delta.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::derive_stream;
    use crate::kernels::{sine_basis, QuadratureGrid};
    use crate::simulate::sample_covariates;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_error(&v(&[0.0, 0.0])), 0.0);
        assert_eq!(l2_error(&v(&[3.0, 4.0])), 5.0);
    }

    #[test]
    fn l2_matches_quadrature() {
        let grid = QuadratureGrid::gauss_legendre(512).unwrap();
        let mut rng = derive_stream(2, &[]);
        let delta: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<f64> = grid
            .points()
            .iter()
            .map(|&s| delta.iter().enumerate().map(|(i, d)| d * sine_basis(i + 1, s)).sum())
            .collect();
        let quad = grid.inner(&f, &f).sqrt();
        assert!((quad - l2_error(&v(&delta))).abs() < 1e-4);
    }

    #[test]
    fn rkhs_examples() {
        let t = SpectralOperator::from_diagonal(&[4.0]).unwrap();
        assert_eq!(rkhs_error(&v(&[0.0]), &t).unwrap(), Some(0.0));
        assert_eq!(rkhs_error(&v(&[2.0]), &t).unwrap(), Some(1.0));
        let singular = SpectralOperator::from_diagonal(&[1.0, 0.0]).unwrap();
        assert_eq!(rkhs_error(&v(&[0.0, 1.0]), &singular).unwrap(), None);
    }

    #[test]
    fn prediction_examples() {
        let c = SpectralOperator::from_diagonal(&[0.25]).unwrap();
        assert_eq!(prediction_error(&v(&[0.0]), &c).unwrap(), 0.0);
        assert_eq!(prediction_error(&v(&[2.0]), &c).unwrap(), 1.0);
    }

    #[test]
    fn prediction_matches_monte_carlo() {
        let c = SpectralOperator::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.3, 0.0, 0.3, 0.5, 0.1, 0.0, 0.1, 0.2],
        ))
        .unwrap();
        let delta = v(&[0.5, -1.0, 2.0]);
        let n = 100_000;
        let x = sample_covariates(&c, n, &mut derive_stream(3, &[]));
        let mc = (&x * &delta).iter().map(|a| a * a).sum::<f64>() / n as f64;
        let exact = prediction_error(&delta, &c).unwrap();
        assert_relative_eq!(exact, (delta.transpose() * c.matrix() * &delta)[0], max_relative = 1e-12);
        assert!((mc / exact - 1.0).abs() < 0.03, "mc={mc} exact={exact}");
    }

    fn random_psd(seed: u64, m: usize) -> SpectralOperator {
        let mut rng = derive_stream(seed, &[]);
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        SpectralOperator::new(crate::operator::symmetrize(&a * a.transpose() + DMatrix::identity(m, m) * 0.1))
            .unwrap()
    }

    proptest! {
        #[test]
        fn norm_comparisons(seed in 0u64..1000, coeffs in prop::collection::vec(-1.0f64..1.0, 5)) {
            let t = random_psd(seed, 5);
            let c = random_psd(seed + 7, 5);
            let delta = v(&coeffs);
            let l2 = l2_error(&delta);
            if let Some(h) = rkhs_error(&delta, &t).unwrap() {
                prop_assert!(h >= l2 / t.max_eigenvalue().sqrt() * (1.0 - 1e-9));
            }
            let pred = prediction_error(&delta, &c).unwrap();
            prop_assert!(pred >= 0.0);
            prop_assert!(pred <= c.max_eigenvalue() * l2 * l2 * (1.0 + 1e-9));
        }

        #[test]
        fn rotation_invariance(seed in 0u64..1000, coeffs in prop::collection::vec(-1.0f64..1.0, 4)) {
            let t = random_psd(seed, 4);
            let c = random_psd(seed + 3, 4);
            let q = random_psd(seed + 5, 4).eigenvectors().clone();
            let rot = |op: &SpectralOperator| {
                SpectralOperator::new(crate::operator::symmetrize(&q * op.matrix() * q.transpose())).unwrap()
            };
            let delta = v(&coeffs);
            let a = error_triple(&delta, &t, &c).unwrap();
            let b = error_triple(&(&q * &delta), &rot(&t), &rot(&c)).unwrap();
            prop_assert!((a.l2 - b.l2).abs() <= 1e-10 * a.l2.max(1.0));
            prop_assert!((a.pred - b.pred).abs() <= 1e-9 * a.pred.max(1.0));
            if let (Some(x), Some(y)) = (a.rkhs, b.rkhs) {
                prop_assert!((x - y).abs() <= 1e-6 * x.max(1.0));
            }
        }
    }
}
