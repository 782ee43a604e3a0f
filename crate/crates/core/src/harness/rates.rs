use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{default_slope_tolerance, LambdaFilter, Metric, RateSpec, ScenarioConfig};
use super::run::RateTable;
use crate::error::{Error, Result};

/// Least-squares slope of `log(mean error)` against `log((log n) / n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub scenario: String,
    pub metric: String,
    pub filter: LambdaFilter,
    /// Threshold the filter compared `lambda_hat` against.
    pub lambda_star: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub theoretical_exponent: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Distinct sample sizes that entered the regression.
    pub n_points: usize,
    /// Replicates that entered the regression.
    pub replicates_used: usize,
}

impl RateFit {
    /// Fitted error at sample size `n`.
    pub fn predict(&self, n: f64) -> f64 {
        (self.intercept + self.slope * rate_abscissa(n)).exp()
    }
}

/// `log((log n) / n)`.
pub fn rate_abscissa(n: f64) -> f64 {
    (n.ln() / n).ln()
}

/// Per-`n` successful values of one metric passing `filter`.
pub fn grouped_values(
    table: &RateTable,
    scenario: Option<&str>,
    metric: &str,
    filter: LambdaFilter,
    lambda_star: f64,
) -> BTreeMap<usize, Vec<f64>> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in &table.rows {
        if row.failed || row.metric != metric || scenario.is_some_and(|s| s != row.scenario) {
            continue;
        }
        if !filter.admits(row.lambda_hat, lambda_star) {
            continue;
        }
        groups.entry(row.n).or_default().push(row.value);
    }
    groups
}

/// Ordinary least squares `y = intercept + slope x`, with `r^2`.
fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - intercept - slope * a;
            e * e
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2.clamp(0.0, 1.0))
}

/// Fits the rate of one metric over the replicates admitted by `spec`.
///
/// Needs at least three sample sizes with a positive mean error.
pub fn fit_rate_with(table: &RateTable, scenario: Option<&str>, spec: &RateSpec, lambda_star: f64) -> Result<RateFit> {
    let metric = Metric::from_label(&spec.metric)?;
    let groups = grouped_values(table, scenario, &spec.metric, spec.filter, lambda_star);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut used = 0;
    for (&n, values) in &groups {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if n < 2 || !(mean > 0.0) {
            continue;
        }
        xs.push(rate_abscissa(n as f64));
        ys.push(mean.ln());
        used += values.len();
    }
    if xs.len() < 3 {
        return Err(Error::input(format!(
            "rate fit for {} ({}) needs at least 3 sample sizes with data, found {}",
            spec.metric,
            spec.filter.label(),
            xs.len()
        )));
    }
    let (slope, intercept, r_squared) = ols(&xs, &ys);
    let exponent = spec.exponent.unwrap_or_else(|| metric.default_exponent());
    let tolerance = spec.tolerance.unwrap_or_else(|| default_slope_tolerance(exponent));
    let scenario = scenario
        .map(str::to_owned)
        .or_else(|| table.rows.first().map(|r| r.scenario.clone()))
        .unwrap_or_default();
    Ok(RateFit {
        scenario,
        metric: spec.metric.clone(),
        filter: spec.filter,
        lambda_star,
        slope,
        intercept,
        r_squared,
        theoretical_exponent: exponent,
        tolerance,
        pass: (slope - exponent).abs() <= tolerance,
        n_points: xs.len(),
        replicates_used: used,
    })
}

/// Fits the rate of `metric` over every replicate, with the default target.
pub fn fit_rate(table: &RateTable, metric: &Metric) -> Result<RateFit> {
    let spec = RateSpec {
        metric: metric.label(),
        filter: LambdaFilter::All,
        exponent: None,
        tolerance: None,
    };
    fit_rate_with(table, None, &spec, 0.0)
}

/// The regressions a scenario asks for: its `rate_fits`, or one unfiltered
/// fit per metric when none are listed.
pub fn scenario_rate_specs(config: &ScenarioConfig) -> Vec<RateSpec> {
    if !config.rate_fits.is_empty() {
        return config.rate_fits.clone();
    }
    config
        .metrics
        .iter()
        .map(|m| RateSpec {
            metric: m.label(),
            filter: LambdaFilter::All,
            exponent: None,
            tolerance: None,
        })
        .collect()
}

/// Every requested regression of a scenario; a filter that leaves too few
/// sample sizes yields an error for that entry only.
pub fn fit_scenario_rates(config: &ScenarioConfig, table: &RateTable) -> Vec<(RateSpec, Result<RateFit>)> {
    scenario_rate_specs(config)
        .into_iter()
        .map(|spec| {
            let fit = fit_rate_with(table, Some(&config.name), &spec, config.lambda_star);
            (spec, fit)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::RateRow;

    fn table(f: impl Fn(f64) -> f64) -> RateTable {
        let mut rows = Vec::new();
        for n in [200usize, 400, 800, 1600, 3200] {
            for rep in 0..2 {
                rows.push(RateRow {
                    scenario: "s".into(),
                    n,
                    replicate: rep,
                    metric: "abs_lambda".into(),
                    value: f(n as f64),
                    lambda_hat: if rep == 0 { 0.2 } else { 0.6 },
                    wallclock_seconds: 0.0,
                    failed: false,
                });
            }
        }
        RateTable { rows }
    }

    #[test]
    fn exact_power_law() {
        let t = table(|n| (n.ln() / n).sqrt());
        let fit = fit_rate(&t, &Metric::AbsLambda).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.pass);
        assert!((fit.predict(800.0) - (800f64.ln() / 800.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_values_have_zero_slope() {
        let fit = fit_rate(&table(|_| 0.3), &Metric::AbsLambda).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!(!fit.pass);
    }

    #[test]
    fn too_few_sample_sizes_is_an_error() {
        let mut t = table(|_| 0.3);
        t.rows.retain(|r| r.n <= 400);
        assert!(fit_rate(&t, &Metric::AbsLambda).unwrap_err().is_input());
    }

    #[test]
    fn lambda_filter_selects_replicates() {
        let t = table(|n| 1.0 / n);
        let spec = RateSpec {
            metric: "abs_lambda".into(),
            filter: LambdaFilter::AboveStar,
            exponent: None,
            tolerance: None,
        };
        let fit = fit_rate_with(&t, Some("s"), &spec, 0.3).unwrap();
        assert_eq!(fit.replicates_used, 5);
    }
}
