//! Monte Carlo rate experiments: error statistics over an n-grid, log–log
//! slope fits and comparison with the theoretical exponents.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{derive_stream, labels};
use crate::error::{FlrError, Result};
use crate::estimator::EmpiricalSystem;
use crate::filters::{FilterFamily, FilterKind};
use crate::metrics::{error_for, MetricTruth};
use crate::par::{map_ordered, ExecutionMode};
use crate::simulate::{Model, Scenario};
use crate::theory::{choose_lambda_theorem, theoretical_exponent, Metric, Mode, RateParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// OLS of `log(error)` on `log(n)`; at least two points.
pub(crate) fn ols_loglog(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(FlrError::precondition("a slope needs at least two points"));
    }
    if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(FlrError::Input(format!(
            "log-log fit needs positive values, got ({x}, {y})"
        )));
    }
    let k = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FlrError::Input("log-log fit needs at least two distinct n".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if points.len() > 2 {
        let rss: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (k - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
    })
}

/// Least-squares slope of `log(error)` against `log(n)` with its standard
/// error. Needs at least four points, all positive.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 4 {
        return Err(FlrError::precondition(format!(
            "slope fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    ols_loglog(points)
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaRule {
    #[default]
    Theorem,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Withheld,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessParams {
    pub metrics: Vec<Metric>,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub lambda_rule: LambdaRule,
    pub tolerance_estimation: f64,
    pub tolerance_prediction: f64,
    pub execution: ExecutionMode,
}

impl Default for HarnessParams {
    fn default() -> Self {
        HarnessParams {
            metrics: vec![Metric::L2, Metric::Prediction],
            n_grid: default_n_grid(),
            replicates: 50,
            lambda_rule: LambdaRule::Theorem,
            tolerance_estimation: 0.08,
            tolerance_prediction: 0.12,
            execution: ExecutionMode::Parallel,
        }
    }
}

/// Seven powers of two from 128 to 8192.
pub fn default_n_grid() -> Vec<usize> {
    (7..=13).map(|k| 1usize << k).collect()
}

impl HarnessParams {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_grid.len() < 4 {
            out.push(format!("harness.n_grid needs at least 4 points, got {}", self.n_grid.len()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            out.push("harness.n_grid must be strictly increasing".into());
        }
        if self.n_grid.first().is_some_and(|&n| n < 2) {
            out.push("harness.n_grid entries must be at least 2".into());
        }
        if self.replicates == 0 {
            out.push("harness.replicates must be positive".into());
        }
        if self.metrics.is_empty() {
            out.push("harness.metrics must not be empty".into());
        }
        for (name, tol) in [
            ("tolerance_estimation", self.tolerance_estimation),
            ("tolerance_prediction", self.tolerance_prediction),
        ] {
            if !(tol > 0.0) {
                out.push(format!("harness.{name} must be positive, got {tol}"));
            }
        }
        out
    }

    fn tolerance(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Prediction => self.tolerance_prediction,
            _ => self.tolerance_estimation,
        }
    }
}

/// Smallest replicate count whose verdict is scored.
pub const MIN_SCORED_REPLICATES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NStats {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Median λ actually used (after any clamping).
    pub lambda: f64,
    pub scheduled_lambda: f64,
    pub undefined: usize,
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub setting: String,
    pub metric: Metric,
    pub mode: Mode,
    pub filter: FilterKind,
    pub lambda_rule: LambdaRule,
    pub replicates: usize,
    pub n_grid: Vec<usize>,
    pub per_n: Vec<NStats>,
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub theory_exponent: f64,
    pub tolerance: f64,
    /// Decay exponent of Λ used by the schedule (fitted in the
    /// non-commutative setting).
    pub b: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RateReport {
    pub fn slope_gap(&self) -> f64 {
        (self.fitted_slope + self.theory_exponent).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub n: usize,
    pub replicate: usize,
    pub error: f64,
}

/// A report together with every per-replicate error behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct RateRun {
    pub report: RateReport,
    pub samples: Vec<Sample>,
}

pub fn rate_params(model: &Model, family: &FilterFamily) -> RateParams {
    let sc = &model.scenario;
    match sc.mode {
        Mode::Commutative => RateParams::commutative(sc.t, sc.c, sc.alpha, family.qualification),
        Mode::NonCommutative => RateParams::noncommutative(model.b, sc.s, family.qualification),
    }
}

/// Oracle grid: the scheduled λ times `10^{k/4}`, `k = -12..=12`.
fn oracle_grid(scheduled: f64) -> Vec<f64> {
    (-12..=12).map(|k| scheduled * 10f64.powf(k as f64 / 4.0)).collect()
}

struct CellOutcome {
    /// Per metric: (error or None if undefined, λ used, clamped).
    values: Vec<(Option<f64>, f64, bool)>,
}

/// Run one experiment per metric on the shared (n, replicate) work set.
pub fn run_rate_experiments(scenario: &Scenario, params: &HarnessParams) -> Result<Vec<RateRun>> {
    let problems = params.problems();
    if !problems.is_empty() {
        return Err(FlrError::Validation(problems));
    }
    let model = Model::build(scenario)?;
    let family = FilterFamily::new(scenario.filter);
    let rp = rate_params(&model, &family);

    let mut exponents = Vec::new();
    for &metric in &params.metrics {
        exponents.push(theoretical_exponent(scenario.mode, metric, &rp)?);
    }

    let cells: Vec<(usize, usize)> = params
        .n_grid
        .iter()
        .flat_map(|&n| (0..params.replicates).map(move |r| (n, r)))
        .collect();
    let truth = MetricTruth::from_model(&model);

    let outcomes = map_ordered(params.execution, &cells, |&(n, rep)| -> Result<CellOutcome> {
        let mut rng = derive_stream(scenario.seed, &[labels::REPLICATE, n as u64, rep as u64]);
        let (x, y) = model.draw(n, &mut rng);
        let system = EmpiricalSystem::new(&model.t_half, &x, &y)?;
        // Metrics sharing a scheduled λ share one fit.
        let mut cache: BTreeMap<u64, (nalgebra::DVector<f64>, f64, bool)> = BTreeMap::new();
        let mut values = Vec::with_capacity(params.metrics.len());
        for &metric in &params.metrics {
            let scheduled = choose_lambda_theorem(scenario.mode, metric, n, &rp)?;
            let value = match params.lambda_rule {
                LambdaRule::Theorem => {
                    let (delta, used, clamped) = match cache.entry(scheduled.to_bits()) {
                        Entry::Occupied(e) => e.into_mut(),
                        Entry::Vacant(e) => {
                            let fit = system.fit(&family, scheduled)?;
                            let delta = fit.beta() - truth.beta_star;
                            e.insert((delta, fit.lambda_used, fit.diagnostics.clamped))
                        }
                    };
                    (error_for(metric, delta, &truth)?, *used, *clamped)
                }
                LambdaRule::Oracle => {
                    let grid = oracle_grid(scheduled);
                    let (lam, err) = crate::estimator::choose_lambda_oracle(&system, &truth, &family, metric, &grid)?;
                    let clamped = lam > system.lambda_hat().max_eigenvalue();
                    (Some(err), lam.min(system.lambda_hat().max_eigenvalue()), clamped)
                }
            };
            values.push(value);
        }
        Ok(CellOutcome { values })
    });
    let outcomes: Vec<CellOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut runs = Vec::new();
    for (mi, &metric) in params.metrics.iter().enumerate() {
        let mut samples = Vec::new();
        let mut per_n = Vec::new();
        for &n in &params.n_grid {
            let mut errors = Vec::new();
            let mut lambdas = Vec::new();
            let (mut undefined, mut clamped) = (0, 0);
            for (cell, outcome) in cells.iter().zip(&outcomes) {
                if cell.0 != n {
                    continue;
                }
                let (err, lam, was_clamped) = outcome.values[mi];
                lambdas.push(lam);
                if was_clamped {
                    clamped += 1;
                }
                match err {
                    Some(e) => {
                        errors.push(e);
                        samples.push(Sample {
                            n,
                            replicate: cell.1,
                            error: e,
                        });
                    }
                    None => undefined += 1,
                }
            }
            if errors.is_empty() {
                return Err(FlrError::Numerical(format!(
                    "{metric} error undefined for every replicate at n = {n}"
                )));
            }
            errors.sort_by(f64::total_cmp);
            lambdas.sort_by(f64::total_cmp);
            per_n.push(NStats {
                n,
                median: quantile(&errors, 0.5),
                q25: quantile(&errors, 0.25),
                q75: quantile(&errors, 0.75),
                lambda: quantile(&lambdas, 0.5),
                scheduled_lambda: choose_lambda_theorem(scenario.mode, metric, n, &rp)?,
                undefined,
                clamped,
            });
        }
        let points: Vec<(f64, f64)> = per_n.iter().map(|s| (s.n as f64, s.median)).collect();
        let fit = fit_loglog_slope(&points)?;
        let theory = exponents[mi];
        let tolerance = params.tolerance(metric);
        let mut notes = Vec::new();
        let withheld = if params.replicates < MIN_SCORED_REPLICATES {
            notes.push(format!(
                "underpowered: {} replicates (< {MIN_SCORED_REPLICATES}); verdict withheld",
                params.replicates
            ));
            true
        } else if scenario.sigma == 0.0 {
            notes.push("noiseless scenario: no variance term, verdict withheld".into());
            true
        } else {
            false
        };
        let floor = 4.0 * (scenario.m as f64).sqrt();
        if params.n_grid[0] as f64 <= floor {
            notes.push(format!("smallest n is below the soft floor 4·M^(1/2) = {floor:.1}"));
        }
        let undefined_total: usize = per_n.iter().map(|s| s.undefined).sum();
        if undefined_total > 0 {
            notes.push(format!("{undefined_total} replicate(s) with undefined {metric} error excluded"));
        }
        let verdict = if withheld {
            Verdict::Withheld
        } else if (fit.slope + theory).abs() <= tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        runs.push(RateRun {
            report: RateReport {
                setting: setting_name(scenario),
                metric,
                mode: scenario.mode,
                filter: scenario.filter,
                lambda_rule: params.lambda_rule,
                replicates: params.replicates,
                n_grid: params.n_grid.clone(),
                per_n,
                fitted_slope: fit.slope,
                slope_stderr: fit.stderr,
                theory_exponent: theory,
                tolerance,
                b: model.b,
                verdict,
                notes,
            },
            samples,
        });
    }
    Ok(runs)
}

pub fn setting_name(scenario: &Scenario) -> String {
    format!("{}-{}", scenario.mode, scenario.filter)
}

/// Median L² error of several filters at one n, each at its own theorem λ,
/// on shared datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub n: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub entries: Vec<SaturationEntry>,
    /// True when the filters' medians are nonincreasing in the order given
    /// by descending qualification (higher qualification is at least as good).
    pub ordering_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaturationEntry {
    pub filter: FilterKind,
    pub r: f64,
    pub lambda: f64,
    pub median_l2: f64,
}

pub fn saturation_ordering(
    scenario: &Scenario,
    n: usize,
    replicates: usize,
    filters: &[FilterKind],
    execution: ExecutionMode,
) -> Result<SaturationReport> {
    if scenario.mode != Mode::Commutative {
        return Err(FlrError::precondition("saturation ordering uses the commutative setting"));
    }
    if filters.is_empty() || replicates == 0 {
        return Err(FlrError::precondition("need at least one filter and one replicate"));
    }
    let model = Model::build(scenario)?;
    let truth = MetricTruth::from_model(&model);
    let families: Vec<FilterFamily> = filters.iter().map(|&k| FilterFamily::new(k)).collect();
    let mut lambdas = Vec::new();
    let mut rs = Vec::new();
    for fam in &families {
        let rp = rate_params(&model, fam);
        rs.push(crate::theory::effective_smoothness(Mode::Commutative, Metric::L2, &rp)?);
        lambdas.push(choose_lambda_theorem(Mode::Commutative, Metric::L2, n, &rp)?);
    }
    let reps: Vec<usize> = (0..replicates).collect();
    let outcomes = map_ordered(execution, &reps, |&rep| -> Result<Vec<f64>> {
        let mut rng = derive_stream(scenario.seed, &[labels::SATURATION, n as u64, rep as u64]);
        let (x, y) = model.draw(n, &mut rng);
        let system = EmpiricalSystem::new(&model.t_half, &x, &y)?;
        families
            .iter()
            .zip(&lambdas)
            .map(|(fam, &lam)| {
                let fit = system.fit(fam, lam)?;
                Ok((fit.beta() - truth.beta_star).norm())
            })
            .collect()
    });
    let outcomes: Vec<Vec<f64>> = outcomes.into_iter().collect::<Result<_>>()?;
    let mut entries = Vec::new();
    for (k, fam) in families.iter().enumerate() {
        let mut errs: Vec<f64> = outcomes.iter().map(|o| o[k]).collect();
        errs.sort_by(f64::total_cmp);
        entries.push(SaturationEntry {
            filter: fam.kind,
            r: rs[k],
            lambda: lambdas[k],
            median_l2: quantile(&errs, 0.5),
        });
    }
    let mut ranked: Vec<(f64, f64)> = families
        .iter()
        .zip(&entries)
        .map(|(f, e)| (f.qualification.value(), e.median_l2))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let ordering_holds = ranked.windows(2).all(|w| w[0].0 == w[1].0 || w[0].1 <= w[1].1);
    Ok(SaturationReport {
        n,
        replicates,
        alpha: scenario.alpha,
        entries,
        ordering_holds,
    })
}

/// Writes `<stem>.json`, `<stem>.csv` and `<stem>.svg` into `dir`.
pub fn write_rate_run(run: &RateRun, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| FlrError::io(dir, e))?;
    let json_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&run.report)? + "\n";
    fs::write(&json_path, text).map_err(|e| FlrError::io(&json_path, e))?;

    let csv_path = dir.join(format!("{stem}.csv"));
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record(["setting", "metric", "n", "replicate", "error"])?;
    for s in &run.samples {
        writer.write_record([
            run.report.setting.clone(),
            run.report.metric.to_string(),
            s.n.to_string(),
            s.replicate.to_string(),
            format!("{:?}", s.error),
        ])?;
    }
    writer.flush().map_err(|e| FlrError::io(&csv_path, e))?;

    let svg_path = dir.join(format!("{stem}.svg"));
    fs::write(&svg_path, render_svg(&run.report)).map_err(|e| FlrError::io(&svg_path, e))?;
    Ok(vec![json_path, csv_path, svg_path])
}

/// Log–log plot of the per-n medians with interquartile bars, the fitted
/// line, and a reference line of the theoretical slope through the
/// median at the smallest n.
pub fn render_svg(report: &RateReport) -> String {
    let (w, h) = (640.0, 440.0);
    let (left, right, top, bottom) = (80.0, 20.0, 40.0, 60.0);
    let xs: Vec<f64> = report.per_n.iter().map(|s| (s.n as f64).log10()).collect();
    let mut ys: Vec<f64> = Vec::new();
    for s in &report.per_n {
        ys.extend([s.q25, s.median, s.q75].iter().filter(|v| **v > 0.0).map(|v| v.log10()));
    }
    let x0 = xs[0];
    let y_at0 = report.per_n[0].median.log10();
    let theory = |x: f64| y_at0 - report.theory_exponent * (x - x0);
    let intercept = {
        let k = xs.len() as f64;
        let my = report.per_n.iter().map(|s| s.median.log10()).sum::<f64>() / k;
        let mx = xs.iter().sum::<f64>() / k;
        my - report.fitted_slope * mx
    };
    let fitted = |x: f64| intercept + report.fitted_slope * x;
    let (xmin, xmax) = (xs[0] - 0.1, xs[xs.len() - 1] + 0.1);
    ys.push(theory(xmin));
    ys.push(theory(xmax));
    ys.push(fitted(xmin));
    ys.push(fitted(xmax));
    let ymin = ys.iter().copied().fold(f64::INFINITY, f64::min) - 0.1;
    let ymax = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 0.1;
    let px = |x: f64| left + (x - xmin) / (xmax - xmin) * (w - left - right);
    let py = |y: f64| top + (ymax - y) / (ymax - ymin) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{} {}: slope {:.3} (theory {:.3})</text>"#,
        w / 2.0,
        report.setting,
        report.metric,
        report.fitted_slope,
        -report.theory_exponent
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for s in &report.per_n {
        let x = px((s.n as f64).log10());
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            h - bottom + 18.0,
            s.n
        );
    }
    let mut tick = ymin.ceil();
    while tick <= ymax {
        let y = py(tick);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{left}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{}</text>"#,
            left - 5.0,
            left - 8.0,
            y + 4.0,
            tick as i64
        );
        tick += 1.0;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n</text>"#,
        (left + w - right) / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999999" stroke-dasharray="6,4"/>"##,
        px(xmin),
        py(theory(xmin)),
        px(xmax),
        py(theory(xmax))
    );
    let _ = writeln!(
        svg,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#1f77b4" stroke-width="1.5"/>"##,
        px(xmin),
        py(fitted(xmin)),
        px(xmax),
        py(fitted(xmax))
    );
    for s in &report.per_n {
        let x = px((s.n as f64).log10());
        if s.q25 > 0.0 && s.q75 > 0.0 {
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
                py(s.q25.log10()),
                py(s.q75.log10())
            );
        }
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.1}" cy="{:.1}" r="3.5" fill="#d62728"/>"##,
            py(s.median.log10())
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="{:.1}" y="{:.1}" fill="#1f77b4">fitted</text><text x="{:.1}" y="{:.1}" fill="#999999">theory</text>"##,
        left + 10.0,
        top + 16.0,
        left + 10.0,
        top + 32.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::Spectrum;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_power_law_slopes() {
        let ns = [128.0, 256.0, 512.0, 1024.0, 2048.0];
        let pts: Vec<(f64, f64)> = ns.iter().map(|&n: &f64| (n, n.powf(-0.5))).collect();
        let fit = fit_loglog_slope(&pts).unwrap();
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert!(fit.stderr <= 1e-12);
        let pts: Vec<(f64, f64)> = ns.iter().map(|&n: &f64| (n, 3.0 * n.powf(-0.857))).collect();
        assert_relative_eq!(fit_loglog_slope(&pts).unwrap().slope, -0.857, epsilon = 1e-12);
    }

    #[test]
    fn slope_fit_rejects_bad_input() {
        let pts = [(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (4.0, 1.0)];
        assert!(matches!(fit_loglog_slope(&pts), Err(FlrError::Input(_))));
        assert!(fit_loglog_slope(&pts[..3]).is_err());
    }

    #[test]
    fn slope_stderr_is_calibrated() {
        let ns: Vec<f64> = (0..8).map(|k| 128.0 * 2f64.powi(k)).collect();
        let trials = 400;
        let mut covered = 0;
        for trial in 0..trials {
            let mut rng = derive_stream(77, &[trial]);
            let pts: Vec<(f64, f64)> = ns
                .iter()
                .map(|&n| {
                    let noise: f64 = rng.sample(StandardNormal);
                    (n, n.powf(-0.4) * (0.05 * noise).exp())
                })
                .collect();
            let fit = fit_loglog_slope(&pts).unwrap();
            if (fit.slope + 0.4).abs() <= 3.0 * fit.stderr {
                covered += 1;
            }
        }
        assert!(covered as f64 >= 0.95 * trials as f64, "covered {covered}/{trials}");
    }

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[5.0], 0.75), 5.0);
    }

    fn tiny_scenario(sigma: f64, filter: FilterKind) -> Scenario {
        Scenario {
            mode: Mode::Commutative,
            spectrum: Spectrum::Power,
            m: 16,
            t: 2.0,
            c: 1.5,
            alpha: 0.5,
            s: 1.0,
            sigma,
            filter,
            seed: 3,
            h_decay: 0.55,
            mixing_seed: None,
        }
    }

    fn small_params(replicates: usize) -> HarnessParams {
        HarnessParams {
            metrics: vec![Metric::L2, Metric::Prediction],
            n_grid: vec![64, 128, 256, 512],
            replicates,
            ..HarnessParams::default()
        }
    }

    #[test]
    fn report_is_deterministic_across_modes() {
        let sc = tiny_scenario(0.5, FilterKind::Tikhonov);
        let mut p = small_params(4);
        p.execution = ExecutionMode::Sequential;
        let a = run_rate_experiments(&sc, &p).unwrap();
        p.execution = ExecutionMode::Parallel;
        let b = run_rate_experiments(&sc, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(
                serde_json::to_string(&x.report).unwrap(),
                serde_json::to_string(&y.report).unwrap()
            );
            assert_eq!(x.samples, y.samples);
            assert_eq!(x.report.verdict, Verdict::Withheld);
        }
    }

    #[test]
    fn noiseless_oracle_run_is_withheld_and_steep() {
        let sc = tiny_scenario(0.0, FilterKind::SpectralCutoff);
        let mut p = small_params(20);
        p.lambda_rule = LambdaRule::Oracle;
        p.metrics = vec![Metric::L2];
        let runs = run_rate_experiments(&sc, &p).unwrap();
        let r = &runs[0].report;
        assert_eq!(r.verdict, Verdict::Withheld);
        assert!(r.fitted_slope < -r.theory_exponent, "slope {}", r.fitted_slope);
    }

    #[test]
    fn outputs_are_written() {
        let sc = tiny_scenario(0.5, FilterKind::Tikhonov);
        let runs = run_rate_experiments(&sc, &small_params(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_rate_run(&runs[0], dir.path(), "demo").unwrap();
        assert_eq!(paths.len(), 3);
        let csv = fs::read_to_string(&paths[1]).unwrap();
        assert!(csv.starts_with("setting,metric,n,replicate,error\n"));
        assert_eq!(csv.lines().count(), 1 + 4 * 3);
        let svg = fs::read_to_string(&paths[2]).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn invalid_grid_is_rejected() {
        let sc = tiny_scenario(0.5, FilterKind::Tikhonov);
        let mut p = small_params(3);
        p.n_grid = vec![64, 32, 128];
        match run_rate_experiments(&sc, &p) {
            Err(FlrError::Validation(v)) => assert_eq!(v.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
