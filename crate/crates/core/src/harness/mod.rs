//! Convergence-rate experiments: scenario configs, the replicate runner,
//! rate regressions, inverse-bound ratio checks and CSV/SVG output.

mod config;
mod inverse;
mod output;
mod rates;
mod run;
pub mod scenarios;

pub use config::{default_slope_tolerance, FitSettings, LambdaFilter, Metric, RateSpec, ScenarioConfig};
pub use inverse::{
    overline_label, verify_inverse_bound, w_bar_label, DenominatorSummary, DirectionReport, InverseBoundReport,
    InverseBoundSettings, PerturbationMode, RatioSeries,
};
pub use output::{emit_outputs, read_rates_csv, write_ratefits_csv, write_rates_csv, RATEFITS_HEADER, RATES_HEADER};
pub use rates::{fit_rate, fit_rate_with, fit_scenario_rates, grouped_values, rate_abscissa, scenario_rate_specs, RateFit};
pub use run::{cell_seed, run_scenario, simulate_cell, RateRow, RateTable};
