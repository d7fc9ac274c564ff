//! Synthetic data: Karhunen–Loève sampling of covariates, source-condition
//! slopes, Gaussian noise, and commuting / non-commuting operator pairs.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{derive_stream, labels};
use crate::error::{FlrError, Result};
use crate::filters::FilterKind;
use crate::kernels::AnalyticEigensystem;
use crate::operator::{sandwich, SpectralOperator};
use crate::rates::ols_loglog;
use crate::theory::Mode;

/// Eigenvalue families used for the commutative setting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spectrum {
    /// Cubic kernel for `T` and Brownian covariance for `C` (t = 4, c = 2).
    #[default]
    BrownianCubic,
    /// `μ_i = i^{-t}`, `ξ_i = i^{-c}`.
    Power,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_s() -> f64 {
    1.0
}
fn default_h_decay() -> f64 {
    0.55
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub mode: Mode,
    #[serde(default)]
    pub spectrum: Spectrum,
    pub m: usize,
    pub t: f64,
    pub c: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_s")]
    pub s: f64,
    pub sigma: f64,
    pub filter: FilterKind,
    pub seed: u64,
    #[serde(default = "default_h_decay")]
    pub h_decay: f64,
    /// Seed of the Givens mixing in the non-commutative setting; the main
    /// seed is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing_seed: Option<u64>,
}

impl Scenario {
    /// Every range violation, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.m < 8 {
            out.push(format!("scenario.m must be at least 8, got {}", self.m));
        }
        if !(self.t > 1.0) {
            out.push(format!("scenario.t must satisfy t > 1 (decay of T's eigenvalues), got {}", self.t));
        }
        if !(self.c > 1.0) {
            out.push(format!("scenario.c must satisfy c > 1 (decay of C's eigenvalues), got {}", self.c));
        }
        match self.mode {
            Mode::Commutative => {
                if !(self.alpha > 0.0) {
                    out.push(format!("scenario.alpha must be positive, got {}", self.alpha));
                }
                if self.spectrum == Spectrum::BrownianCubic && (self.t != 4.0 || self.c != 2.0) {
                    out.push(format!(
                        "spectrum brownian-cubic fixes t = 4 and c = 2, got t = {}, c = {}",
                        self.t, self.c
                    ));
                }
            }
            Mode::NonCommutative => {
                if !(self.s > 0.0) {
                    out.push(format!("scenario.s must be positive, got {}", self.s));
                }
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            out.push(format!("scenario.sigma must be nonnegative, got {}", self.sigma));
        }
        if !(self.h_decay > 0.5) {
            out.push(format!(
                "scenario.h_decay must exceed 1/2 so h has finite norm, got {}",
                self.h_decay
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FlrError::Validation(problems))
        }
    }

    pub fn mixing_seed(&self) -> u64 {
        self.mixing_seed.unwrap_or(self.seed)
    }
}

/// `h_i = i^{-decay}`, normalized to unit ℓ² norm.
pub fn default_h(m: usize, decay: f64) -> DVector<f64> {
    let h = DVector::from_iterator(m, (1..=m).map(|i| (i as f64).powf(-decay)));
    let norm = h.norm();
    h / norm
}

/// Rows are independent `N(0, C)` draws `x = U diag(√ξ) z`.
pub fn sample_covariates(c: &SpectralOperator, n: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let factor = CovFactor::from_operator(c);
    factor.sample(n, rng)
}

/// Square root factor of a covariance: `x = F z` with `F Fᵀ = C`.
#[derive(Clone, Debug)]
pub(crate) enum CovFactor {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl CovFactor {
    fn from_operator(c: &SpectralOperator) -> Self {
        let sqrt = c.eigenvalues().map(f64::sqrt);
        if c.is_diagonal() {
            CovFactor::Diagonal(c.matrix().diagonal().map(|v| v.max(0.0).sqrt()))
        } else {
            CovFactor::Dense(c.eigenvectors() * DMatrix::from_diagonal(&sqrt))
        }
    }

    fn dim(&self) -> usize {
        match self {
            CovFactor::Diagonal(d) => d.len(),
            CovFactor::Dense(f) => f.nrows(),
        }
    }

    pub(crate) fn sample(&self, n: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        let m = self.dim();
        let z: Vec<f64> = (0..n * m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let z = DMatrix::from_row_slice(n, m, &z);
        match self {
            CovFactor::Diagonal(d) => {
                let mut x = z;
                for (j, mut col) in x.column_iter_mut().enumerate() {
                    col *= d[j];
                }
                x
            }
            CovFactor::Dense(f) => z * f.transpose(),
        }
    }
}

/// `β*_i = μ_i^α h_i`.
pub fn make_slope_commutative(alpha: f64, mu: &[f64], h: &[f64]) -> Result<DVector<f64>> {
    if !(alpha > 0.0) {
        return Err(FlrError::precondition(format!("alpha must be positive, got {alpha}")));
    }
    if mu.len() != h.len() {
        return Err(FlrError::DimensionMismatch {
            expected: mu.len(),
            found: h.len(),
        });
    }
    Ok(DVector::from_iterator(
        mu.len(),
        mu.iter().zip(h).map(|(m, h)| m.powf(alpha) * h),
    ))
}

/// `β* = T^{1/2} Λ^s h`.
pub fn make_slope_noncommutative(
    s: f64,
    t: &SpectralOperator,
    lambda: &SpectralOperator,
    h: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !(s > 0.0) {
        return Err(FlrError::precondition(format!("s must be positive, got {s}")));
    }
    let inner = lambda.frac_power(s)?.apply(h)?;
    t.frac_power(0.5)?.apply(&inner)
}

#[derive(Clone, Debug)]
pub struct NonCommutativePair {
    pub t: SpectralOperator,
    pub c: SpectralOperator,
    pub lambda: SpectralOperator,
    pub fitted_b: f64,
    /// Orthogonal mixing matrix; `C = Q diag(i^{-c}) Qᵀ`.
    pub q: DMatrix<f64>,
}

/// Orthogonal matrix composed of `3m` Givens rotations on adjacent
/// coordinates, angles uniform in `[-π/4, π/4]`.
pub fn givens_mixing(m: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = derive_stream(seed, &[labels::MIXING]);
    let mut q = DMatrix::<f64>::identity(m, m);
    let quarter = std::f64::consts::FRAC_PI_4;
    for _ in 0..3 * m {
        let j = rng.random_range(0..m - 1);
        let angle: f64 = rng.random_range(-quarter..=quarter);
        let (sin, cos) = angle.sin_cos();
        // Left-multiply by the rotation acting on rows j and j+1.
        for col in 0..m {
            let a = q[(j, col)];
            let b = q[(j + 1, col)];
            q[(j, col)] = cos * a - sin * b;
            q[(j + 1, col)] = sin * a + cos * b;
        }
    }
    let gap = (q.transpose() * &q - DMatrix::<f64>::identity(m, m)).amax();
    if gap > 1e-10 {
        return Err(FlrError::Construction(format!(
            "mixing matrix deviates from orthogonality by {gap:e}"
        )));
    }
    Ok(q)
}

/// `T = diag(i^{-t})`, `C = Q diag(i^{-c}) Qᵀ`, `Λ = T^{1/2} C T^{1/2}`.
/// `mixing_seed = None` gives `Q = I`. `fitted_b` is minus the log–log
/// slope of Λ's eigenvalues over ranks `[2, m/2]`.
pub fn make_noncommutative_pair(
    m: usize,
    t: f64,
    c: f64,
    mixing_seed: Option<u64>,
) -> Result<NonCommutativePair> {
    if m < 8 {
        return Err(FlrError::precondition(format!("dimension must be at least 8, got {m}")));
    }
    let q = match mixing_seed {
        Some(seed) => givens_mixing(m, seed)?,
        None => DMatrix::identity(m, m),
    };
    let mu: Vec<f64> = (1..=m).map(|i| (i as f64).powf(-t)).collect();
    let xi = DVector::from_iterator(m, (1..=m).map(|i| (i as f64).powf(-c)));
    let t_op = SpectralOperator::from_diagonal(&mu)?;
    let c_matrix = &q * DMatrix::from_diagonal(&xi) * q.transpose();
    let c_op = SpectralOperator::new(crate::operator::symmetrize(c_matrix))?;
    let lambda = sandwich(&t_op, &c_op)?;
    let fitted_b = fit_decay(lambda.eigenvalues().as_slice())?;
    Ok(NonCommutativePair {
        t: t_op,
        c: c_op,
        lambda,
        fitted_b,
        q,
    })
}

fn fit_decay(eigenvalues: &[f64]) -> Result<f64> {
    let m = eigenvalues.len();
    let points: Vec<(f64, f64)> = (2..=m / 2).map(|r| (r as f64, eigenvalues[r - 1])).collect();
    Ok(-ols_loglog(&points)?.slope)
}

/// Operators, slope and sampler for a scenario, built once and shared by
/// every replicate.
#[derive(Clone, Debug)]
pub struct Model {
    pub scenario: Scenario,
    pub t: SpectralOperator,
    pub c: SpectralOperator,
    pub lambda: SpectralOperator,
    pub beta_star: DVector<f64>,
    /// Decay exponent of Λ: `t + c` in the commutative setting, fitted otherwise.
    pub b: f64,
    pub(crate) t_half: SpectralOperator,
    factor: CovFactor,
}

impl Model {
    pub fn build(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let m = scenario.m;
        let h = default_h(m, scenario.h_decay);
        let (t, c, lambda, beta_star, b, factor) = match scenario.mode {
            Mode::Commutative => {
                let (mu, xi) = match scenario.spectrum {
                    Spectrum::BrownianCubic => (
                        AnalyticEigensystem::CubicKernel.eigenvalues(m),
                        AnalyticEigensystem::BrownianCov.eigenvalues(m),
                    ),
                    Spectrum::Power => (
                        AnalyticEigensystem::SyntheticPower { q: scenario.t }.eigenvalues(m),
                        AnalyticEigensystem::SyntheticPower { q: scenario.c }.eigenvalues(m),
                    ),
                };
                let t = SpectralOperator::from_diagonal(&mu)?;
                let c = SpectralOperator::from_diagonal(&xi)?;
                let tau: Vec<f64> = mu.iter().zip(&xi).map(|(a, b)| a * b).collect();
                let lambda = SpectralOperator::from_diagonal(&tau)?;
                let beta = make_slope_commutative(scenario.alpha, &mu, h.as_slice())?;
                let factor = CovFactor::Diagonal(DVector::from_iterator(m, xi.iter().map(|v| v.sqrt())));
                (t, c, lambda, beta, scenario.t + scenario.c, factor)
            }
            Mode::NonCommutative => {
                let pair = make_noncommutative_pair(m, scenario.t, scenario.c, Some(scenario.mixing_seed()))?;
                let beta = make_slope_noncommutative(scenario.s, &pair.t, &pair.lambda, &h)?;
                let sqrt_xi = DVector::from_iterator(m, (1..=m).map(|i| (i as f64).powf(-scenario.c / 2.0)));
                let factor = CovFactor::Dense(&pair.q * DMatrix::from_diagonal(&sqrt_xi));
                (pair.t, pair.c, pair.lambda, beta, pair.fitted_b, factor)
            }
        };
        let t_half = t.frac_power(0.5)?;
        Ok(Model {
            scenario: scenario.clone(),
            t,
            c,
            lambda,
            beta_star,
            b,
            t_half,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.scenario.m
    }

    /// Draw `n` covariate rows and responses from `rng`.
    pub fn draw(&self, n: usize, rng: &mut ChaCha20Rng) -> (DMatrix<f64>, DVector<f64>) {
        let x = self.factor.sample(n, rng);
        let mut y = &x * &self.beta_star;
        if self.scenario.sigma > 0.0 {
            for v in y.iter_mut() {
                *v += self.scenario.sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        (x, y)
    }

    pub fn truth(&self) -> Truth {
        Truth {
            beta_star: self.beta_star.iter().copied().collect(),
            t: self.t.clone(),
            c: self.c.clone(),
            lambda: self.lambda.clone(),
            b: self.b,
            scenario: Some(self.scenario.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct Truth {
    pub beta_star: Vec<f64>,
    #[serde(rename = "T")]
    pub t: SpectralOperator,
    #[serde(rename = "C")]
    pub c: SpectralOperator,
    #[serde(rename = "Lambda")]
    pub lambda: SpectralOperator,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x_coeffs: DMatrix<f64>,
    pub y: DVector<f64>,
    pub truth: Option<Truth>,
}

/// Dataset of size `n` drawn on the scenario's simulation stream.
pub fn gen_dataset(scenario: &Scenario, n: usize) -> Result<Dataset> {
    if n < 2 {
        return Err(FlrError::precondition(format!("sample size must be at least 2, got {n}")));
    }
    let model = Model::build(scenario)?;
    let mut rng = derive_stream(scenario.seed, &[labels::SIMULATE, n as u64]);
    let (x, y) = model.draw(n, &mut rng);
    Ok(Dataset {
        x_coeffs: x,
        y,
        truth: Some(model.truth()),
    })
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x_coeffs.ncols()
    }

    /// Columns `x_1..x_M, y`; floats use shortest round-trip formatting.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path)?;
        let m = self.dim();
        let mut header: Vec<String> = (1..=m).map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        writer.write_record(&header)?;
        for k in 0..self.n() {
            let mut row: Vec<String> = (0..m).map(|i| format!("{:?}", self.x_coeffs[(k, i)])).collect();
            row.push(format!("{:?}", self.y[k]));
            writer.write_record(&row)?;
        }
        writer.flush().map_err(|e| FlrError::io(path, e))?;
        Ok(())
    }

    pub fn write_truth(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let truth = self
            .truth
            .as_ref()
            .ok_or_else(|| FlrError::Input("dataset has no recorded truth".into()))?;
        let text = serde_json::to_string_pretty(truth)?;
        fs::write(path, text + "\n").map_err(|e| FlrError::io(path, e))
    }

    /// Read a dataset CSV; the truth sidecar is attached when `truth_path`
    /// is given.
    pub fn read_csv(path: impl AsRef<Path>, truth_path: Option<&Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FlrError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        if header.len() < 2 || header.get(header.len() - 1) != Some("y") {
            return Err(FlrError::Parse {
                row: 1,
                message: "header must be x_1, ..., x_M, y".into(),
            });
        }
        let m = header.len() - 1;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (offset, record) in reader.records().enumerate() {
            let row = offset + 2;
            let record = record.map_err(|e| FlrError::Parse { row, message: e.to_string() })?;
            if record.len() != m + 1 {
                return Err(FlrError::Parse {
                    row,
                    message: format!("expected {} cells, found {}", m + 1, record.len()),
                });
            }
            for (col, cell) in record.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| FlrError::Parse {
                    row,
                    message: format!("column {}: '{cell}' is not a number", col + 1),
                })?;
                if col == m {
                    ys.push(v);
                } else {
                    xs.push(v);
                }
            }
        }
        let truth = match truth_path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| FlrError::io(p, e))?;
                let truth: Truth = serde_json::from_str(&text)?;
                if truth.beta_star.len() != m {
                    return Err(FlrError::DimensionMismatch {
                        expected: m,
                        found: truth.beta_star.len(),
                    });
                }
                Some(truth)
            }
            None => None,
        };
        Ok(Dataset {
            x_coeffs: DMatrix::from_row_slice(ys.len(), m, &xs),
            y: DVector::from_vec(ys),
            truth,
        })
    }
}
