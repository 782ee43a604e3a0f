use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Metric, ScenarioConfig};
use crate::error::{Error, Result};
use crate::estimation::{em_fit, FitResult};
use crate::mixing::{wasserstein, MixingMeasure};
use crate::model::{hellinger, DeviatedMixture, DivergenceMethod, QuadratureRule};
use crate::points::Points;
use crate::quadrature::Resolution;
use crate::regimes::{h0_mixing_measure, overline_g_star, RegimeCAlignment};
use crate::seed::derive_seed;

/// One `(scenario, n, replicate, metric)` measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub scenario: String,
    pub n: usize,
    pub replicate: usize,
    pub metric: String,
    /// `NaN` when `failed`.
    pub value: f64,
    pub lambda_hat: f64,
    pub wallclock_seconds: f64,
    pub failed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends another table and restores the canonical order.
    pub fn extend(&mut self, other: RateTable) {
        self.rows.extend(other.rows);
        self.sort();
    }

    fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            (&a.scenario, a.n, a.replicate, &a.metric).cmp(&(&b.scenario, b.n, b.replicate, &b.metric))
        });
    }
}

/// Seed of the `(n, replicate)` cell.
pub fn cell_seed(master_seed: u64, n: usize, replicate: usize) -> u64 {
    derive_seed(master_seed, &[n as u64, replicate as u64])
}

/// Truth-side quantities shared by all cells.
pub(crate) struct ScenarioContext {
    pub truth: DeviatedMixture,
    g0: Option<MixingMeasure>,
    alignment: Option<RegimeCAlignment>,
    density: Option<TruthTable>,
}

/// `h0` and `p*` tabulated on a rule fitted to the truth. Only the overlap
/// region of the two densities matters for the Hellinger affinity, so the
/// truth's grid serves every fitted model.
struct TruthTable {
    rule: QuadratureRule,
    h0: Vec<f64>,
    truth: Vec<f64>,
}

impl TruthTable {
    fn new(truth: &DeviatedMixture) -> Result<Self> {
        let res = if truth.dim() == 1 { Resolution::FINE_1D } else { Resolution::SMOOTH_2D };
        let rule = QuadratureRule::from_envelopes(&truth.envelopes(), &truth.h0().jump_points(), res)?;
        let mut h0 = Vec::with_capacity(rule.len());
        rule.for_each_node(|x| h0.push(truth.h0().pdf_unchecked(x)));
        let truth_vals = rule.tabulate(truth)?;
        Ok(TruthTable { rule, h0, truth: truth_vals })
    }

    fn hellinger(&self, model: &DeviatedMixture) -> f64 {
        let lambda = model.lambda();
        let mut vals = Vec::with_capacity(self.h0.len());
        let mut i = 0;
        self.rule.for_each_node(|x| {
            let dev = if lambda > 0.0 { model.deviation_pdf_unchecked(x) } else { 0.0 };
            vals.push((1.0 - lambda) * self.h0[i] + lambda * dev);
            i += 1;
        });
        self.rule.hellinger(&self.truth, &vals).value
    }
}

impl ScenarioContext {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        let truth = config.truth()?;
        let wants = |f: fn(&Metric) -> bool| config.metrics.iter().any(f);
        let needs_g0 = wants(|m| matches!(m, Metric::WOverlineGStar { .. } | Metric::WTildeGStar { .. }));
        let g0 = if needs_g0 {
            let g0 = h0_mixing_measure(&config.h0, &config.family).ok_or_else(|| {
                Error::input("G_bar* and G_tilde* metrics need h0 to be a mixture of the kernel family")
            })?;
            Some(g0)
        } else {
            None
        };
        let alignment = if wants(|m| matches!(m, Metric::WTildeGStar { .. })) {
            let g0 = g0.as_ref().expect("computed above");
            Some(RegimeCAlignment::new(g0, &config.g_star, config.atom_tol)?)
        } else {
            None
        };
        let density = if wants(|m| matches!(m, Metric::Hellinger)) && truth.dim() <= 2 {
            Some(TruthTable::new(&truth)?)
        } else {
            None
        };
        Ok(ScenarioContext {
            truth,
            g0,
            alignment,
            density,
        })
    }

    fn metric(&self, config: &ScenarioConfig, metric: &Metric, fit: &FitResult, seed: u64) -> Result<f64> {
        let lambda_star = config.lambda_star;
        let g_star = &config.g_star;
        match metric {
            Metric::AbsLambda => Ok((fit.lambda_hat - lambda_star).abs()),
            Metric::WGStar { r } => wasserstein(&fit.g_hat, g_star, *r),
            Metric::WOverlineGStar { r } => {
                if fit.lambda_hat > lambda_star {
                    let g0 = self.g0.as_ref().expect("checked at construction");
                    let target = overline_g_star(fit.lambda_hat, lambda_star, g0, g_star, config.atom_tol)?;
                    wasserstein(&fit.g_hat, &target, *r)
                } else {
                    wasserstein(&fit.g_hat, g_star, *r)
                }
            }
            Metric::WTildeGStar { r } => {
                let align = self.alignment.as_ref().expect("checked at construction");
                let (target, _) = align.tilde_g_star(fit.lambda_hat, lambda_star)?;
                wasserstein(&fit.g_hat, &target, *r)
            }
            Metric::Hellinger => {
                let fitted = self.truth.with_parameters(fit.lambda_hat, fit.g_hat.clone())?;
                match &self.density {
                    Some(table) => Ok(table.hellinger(&fitted)),
                    None => {
                        let method = DivergenceMethod::default_for(fitted.dim(), derive_seed(seed, &[3]));
                        Ok(hellinger(&fitted, &self.truth, method)?.value)
                    }
                }
            }
        }
    }
}

/// Data of one cell: `n` draws from the truth.
pub fn simulate_cell(truth: &DeviatedMixture, master_seed: u64, n: usize, replicate: usize) -> Result<Points> {
    truth.sample(n, derive_seed(cell_seed(master_seed, n, replicate), &[0]))
}

fn run_cell(config: &ScenarioConfig, ctx: &ScenarioContext, n: usize, replicate: usize) -> Vec<RateRow> {
    let seed = cell_seed(config.master_seed, n, replicate);
    let start = Instant::now();
    let fit = simulate_cell(&ctx.truth, config.master_seed, n, replicate)
        .and_then(|data| em_fit(&data, &config.h0, &config.fit.em_config(&config.family, derive_seed(seed, &[1]))));
    let elapsed = start.elapsed().as_secs_f64();
    let wallclock = if config.record_wallclock { elapsed } else { 0.0 };
    config
        .metrics
        .iter()
        .map(|metric| {
            let (value, lambda_hat, failed) = match &fit {
                Ok(fit) => match ctx.metric(config, metric, fit, seed) {
                    Ok(v) if v.is_finite() && v >= 0.0 => (v, fit.lambda_hat, false),
                    _ => (f64::NAN, fit.lambda_hat, true),
                },
                Err(_) => (f64::NAN, f64::NAN, true),
            };
            RateRow {
                scenario: config.name.clone(),
                n,
                replicate,
                metric: metric.label(),
                value,
                lambda_hat,
                wallclock_seconds: wallclock,
                failed,
            }
        })
        .collect()
}

/// Runs every `(n, replicate)` cell, `jobs` at a time (all cores when
/// `None`). Output order and values do not depend on `jobs`.
pub fn run_scenario(config: &ScenarioConfig, jobs: Option<usize>) -> Result<RateTable> {
    config.validate()?;
    let ctx = ScenarioContext::new(config)?;
    let cells: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::input(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<RateRow> = pool.install(|| {
        cells
            .par_iter()
            .flat_map_iter(|&(n, r)| run_cell(config, &ctx, n, r))
            .collect()
    });
    let mut table = RateTable { rows };
    table.sort();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenarios::half_circle_exact;

    fn tiny() -> ScenarioConfig {
        let mut s = half_circle_exact();
        s.n_grid = vec![100];
        s.replications = 1;
        s.fit.restarts = 2;
        s.fit.max_iterations = 50;
        s
    }

    #[test]
    fn one_cell_gives_one_row_per_metric() {
        let s = tiny();
        let table = run_scenario(&s, Some(1)).unwrap();
        assert_eq!(table.len(), s.metrics.len());
        assert!(table.rows.iter().all(|r| !r.failed && r.value >= 0.0));
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let mut s = tiny();
        s.n_grid = vec![60, 80];
        s.replications = 2;
        let a = run_scenario(&s, Some(1)).unwrap();
        let b = run_scenario(&s, Some(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hellinger_on_the_truth_grid_matches_the_fine_rule() {
        let s = half_circle_exact();
        let ctx = ScenarioContext::new(&s).unwrap();
        let shifted = MixingMeasure::new(
            s.g_star.atoms().iter().map(|a| crate::mixing::Atom::location(vec![a.location[0] + 0.1, a.location[1]])).collect(),
            s.g_star.weights().to_vec(),
        )
        .unwrap();
        let other = ctx.truth.with_parameters(0.45, shifted).unwrap();
        let fast = ctx.density.as_ref().unwrap().hellinger(&other);
        let slow = hellinger(&other, &ctx.truth, DivergenceMethod::Quadrature2D).unwrap().value;
        assert!((fast - slow).abs() < 1e-6 * slow.max(1e-3), "{fast} vs {slow}");
    }
}
