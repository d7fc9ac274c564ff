//! Monte Carlo probes of the two concentration steps behind the upper
//! bounds: the noise term and the relative deviation of `Λ̂_n` from `Λ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::config::{derive_stream, labels};
use crate::error::{FlrError, Result};
use crate::operator::effective_dimension;
use crate::par::{map_ordered, ExecutionMode};
use crate::rates::quantile;
use crate::simulate::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProbeReport {
    pub n: usize,
    pub lambda: f64,
    pub delta: f64,
    pub replicates: usize,
    /// `√(σ² N(λ) / (n δ))`
    pub bound: f64,
    pub norms: Vec<f64>,
    pub frequency: f64,
    /// `1 − δ − 3√(δ(1−δ)/R)`
    pub required: f64,
    pub passed: bool,
}

/// Draws `R` datasets and records `‖(Λ+λI)^{-1/2} T^{1/2}(R̂ − Ĉ_n β*)‖`
/// against the `1 − δ` bound.
pub fn noise_probe(
    model: &Model,
    n: usize,
    lambda: f64,
    delta: f64,
    replicates: usize,
    execution: ExecutionMode,
) -> Result<NoiseProbeReport> {
    check(n, lambda, replicates)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(FlrError::precondition(format!("delta must lie in (0, 1), got {delta}")));
    }
    let sigma = model.scenario.sigma;
    let bound = (sigma * sigma * effective_dimension(&model.lambda, lambda)? / (n as f64 * delta)).sqrt();
    let w = resolvent_root(model, lambda);
    let left = &w * model.t_half.matrix();
    let reps: Vec<usize> = (0..replicates).collect();
    let norms = map_ordered(execution, &reps, |&rep| {
        let mut rng = derive_stream(model.scenario.seed, &[labels::NOISE_PROBE, n as u64, rep as u64]);
        let (x, y) = model.draw(n, &mut rng);
        let resid: DVector<f64> = &y - &x * &model.beta_star;
        let term = x.transpose() * resid / n as f64;
        (&left * term).norm()
    });
    let holds = norms.iter().filter(|&&v| v <= bound).count();
    let frequency = holds as f64 / replicates as f64;
    let required = 1.0 - delta - 3.0 * (delta * (1.0 - delta) / replicates as f64).sqrt();
    Ok(NoiseProbeReport {
        n,
        lambda,
        delta,
        replicates,
        bound,
        norms,
        frequency,
        required,
        passed: frequency >= required,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub lambda: f64,
    pub replicates: usize,
    pub n: usize,
    pub median_n: f64,
    pub median_4n: f64,
    /// `median(4n) / median(n)`; `1/2` under `n^{-1/2}` concentration.
    pub ratio: f64,
    pub passed: bool,
}

/// Median over replicates of `‖(Λ+λI)^{-1/2}(Λ − Λ̂_n)(Λ+λI)^{-1/2}‖`.
pub fn concentration_median(
    model: &Model,
    n: usize,
    lambda: f64,
    replicates: usize,
    execution: ExecutionMode,
) -> Result<f64> {
    check(n, lambda, replicates)?;
    let w = resolvent_root(model, lambda);
    let lam = model.lambda.matrix();
    let th = model.t_half.matrix();
    let reps: Vec<usize> = (0..replicates).collect();
    let mut norms = map_ordered(execution, &reps, |&rep| {
        let mut rng = derive_stream(
            model.scenario.seed,
            &[labels::CONCENTRATION_PROBE, n as u64, rep as u64],
        );
        let (x, _) = model.draw(n, &mut rng);
        let c_hat = x.transpose() * &x / n as f64;
        let lam_hat = th * c_hat * th;
        let dev = &w * (lam - lam_hat) * &w;
        spectral_norm(dev)
    });
    norms.sort_by(f64::total_cmp);
    Ok(quantile(&norms, 0.5))
}

/// Compares the deviation medians at `n` and `4n`; passes when the ratio is
/// within 25% of `1/2`.
pub fn concentration_probe(
    model: &Model,
    n: usize,
    lambda: f64,
    replicates: usize,
    execution: ExecutionMode,
) -> Result<ConcentrationReport> {
    let median_n = concentration_median(model, n, lambda, replicates, execution)?;
    let median_4n = concentration_median(model, 4 * n, lambda, replicates, execution)?;
    let ratio = median_4n / median_n;
    Ok(ConcentrationReport {
        lambda,
        replicates,
        n,
        median_n,
        median_4n,
        ratio,
        passed: (0.375..=0.625).contains(&ratio),
    })
}

fn check(n: usize, lambda: f64, replicates: usize) -> Result<()> {
    if n < 2 || replicates == 0 {
        return Err(FlrError::precondition("need n >= 2 and at least one replicate"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(FlrError::precondition(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

fn resolvent_root(model: &Model, lambda: f64) -> DMatrix<f64> {
    model.lambda.map_spectrum(|s| (s + lambda).powf(-0.5))
}

fn spectral_norm(sym: DMatrix<f64>) -> f64 {
    let sym = (&sym + sym.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}
