//! Smoothness indices, λ schedules and convergence exponents for the
//! commutative and non-commutative settings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FlrError, Result};
use crate::filters::Qualification;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Commutative,
    NonCommutative,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Commutative => "commutative",
            Mode::NonCommutative => "non-commutative",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `‖β̂ − β*‖_{L²}`
    L2,
    /// `‖β̂ − β*‖_H`
    Rkhs,
    /// `‖C^{1/2}(β̂ − β*)‖²_{L²}`
    Prediction,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::L2, Metric::Rkhs, Metric::Prediction];

    pub fn name(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::Rkhs => "rkhs",
            Metric::Prediction => "prediction",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = FlrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(Metric::L2),
            "rkhs" => Ok(Metric::Rkhs),
            "prediction" | "pred" => Ok(Metric::Prediction),
            other => Err(FlrError::Input(format!(
                "unknown metric '{other}' (expected l2, rkhs or prediction)"
            ))),
        }
    }
}

/// Exponents entering the rates. `t`, `c` and `alpha` are used in the
/// commutative setting; `b` and `s` in the non-commutative one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateParams {
    pub t: f64,
    pub c: f64,
    pub b: f64,
    pub alpha: f64,
    pub s: f64,
    pub nu: Qualification,
}

impl RateParams {
    pub fn commutative(t: f64, c: f64, alpha: f64, nu: Qualification) -> Self {
        RateParams {
            t,
            c,
            b: t + c,
            alpha,
            s: f64::NAN,
            nu,
        }
    }

    pub fn noncommutative(b: f64, s: f64, nu: Qualification) -> Self {
        RateParams {
            t: f64::NAN,
            c: f64::NAN,
            b,
            alpha: f64::NAN,
            s,
            nu,
        }
    }

    fn check(&self, mode: Mode) -> Result<()> {
        let mut problems = Vec::new();
        match mode {
            Mode::Commutative => {
                if !(self.t > 1.0) {
                    problems.push(format!("t must exceed 1, got {}", self.t));
                }
                if !(self.c > 1.0) {
                    problems.push(format!("c must exceed 1, got {}", self.c));
                }
                if !(self.alpha > 0.0) {
                    problems.push(format!("alpha must be positive, got {}", self.alpha));
                }
            }
            Mode::NonCommutative => {
                if !(self.b > 1.0) {
                    problems.push(format!("b must exceed 1, got {}", self.b));
                }
                if !(self.s > 0.0) {
                    problems.push(format!("s must be positive, got {}", self.s));
                }
            }
        }
        if !(self.nu.value() >= 1.0) {
            problems.push(format!("qualification must be at least 1, got {}", self.nu.value()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FlrError::Validation(problems))
        }
    }
}

/// Effective smoothness `r` for a (mode, metric) pair.
pub fn effective_smoothness(mode: Mode, metric: Metric, p: &RateParams) -> Result<f64> {
    p.check(mode)?;
    match (mode, metric) {
        (Mode::Commutative, Metric::L2) => {
            Ok(p.nu.min_with(p.alpha, |nu| nu + (p.c / p.t) * (nu - 0.5)))
        }
        (Mode::Commutative, Metric::Rkhs) => {
            if p.alpha < 0.5 {
                return Err(FlrError::precondition(format!(
                    "the RKHS rate is only stated for alpha >= 1/2, got alpha = {}",
                    p.alpha
                )));
            }
            Ok(p.nu.min_with(p.alpha, |nu| nu + (p.c / p.t) * nu + 0.5))
        }
        (Mode::Commutative, Metric::Prediction) => {
            Ok(p.nu.min_with(p.alpha, |nu| nu + 0.5 + nu * p.c / p.t))
        }
        (Mode::NonCommutative, Metric::Rkhs) => Ok(p.nu.min_with(p.s, |nu| nu)),
        (Mode::NonCommutative, Metric::Prediction) => Ok(p.nu.min_with(p.s, |nu| nu - 0.5)),
        (Mode::NonCommutative, Metric::L2) => Err(FlrError::precondition(
            "no L2 rate is available in the non-commutative setting",
        )),
    }
}

/// Exponent `e` of the scheduled regularization `λ = n^{-e}`.
pub fn lambda_exponent(mode: Mode, metric: Metric, p: &RateParams) -> Result<f64> {
    let r = effective_smoothness(mode, metric, p)?;
    Ok(match mode {
        Mode::Commutative => (p.t + p.c) / (1.0 + p.c + 2.0 * p.t * r),
        Mode::NonCommutative => p.b / (1.0 + p.b + 2.0 * r * p.b),
    })
}

pub fn choose_lambda_theorem(mode: Mode, metric: Metric, n: usize, p: &RateParams) -> Result<f64> {
    if n == 0 {
        return Err(FlrError::precondition("sample size must be positive"));
    }
    let e = lambda_exponent(mode, metric, p)?;
    Ok((n as f64).powf(-e))
}

/// Decay exponent of the error: error ≍ n^{-exponent}. Prediction metrics
/// refer to the squared norm.
pub fn theoretical_exponent(mode: Mode, metric: Metric, p: &RateParams) -> Result<f64> {
    let r = effective_smoothness(mode, metric, p)?;
    Ok(match (mode, metric) {
        (Mode::Commutative, Metric::L2) => r * p.t / (1.0 + p.c + 2.0 * p.t * r),
        (Mode::Commutative, Metric::Rkhs) => p.t * (r - 0.5) / (1.0 + p.c + 2.0 * p.t * r),
        (Mode::Commutative, Metric::Prediction) => {
            (2.0 * r * p.t + p.c) / (1.0 + p.c + 2.0 * p.t * r)
        }
        (Mode::NonCommutative, Metric::Rkhs) => p.b * r / (1.0 + p.b + 2.0 * r * p.b),
        (Mode::NonCommutative, Metric::Prediction) => {
            p.b * (2.0 * r + 1.0) / (1.0 + p.b + 2.0 * r * p.b)
        }
        (Mode::NonCommutative, Metric::L2) => unreachable!("rejected by effective_smoothness"),
    })
}
