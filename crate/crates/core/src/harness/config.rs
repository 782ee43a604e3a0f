use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{EmConfig, InitStrategy};
use crate::known_density::KnownDensity;
use crate::mixing::{ConstraintClass, MixingMeasure, ParameterBox};
use crate::model::{DeviatedMixture, FamilyTag};

/// Parameter-error measures recorded per fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    /// `|lambda_hat - lambda*|`.
    AbsLambda,
    /// `W_r(G_hat, G*)`.
    WGStar { r: u32 },
    /// `W_r(G_hat, G_bar*(lambda_hat))` when `lambda_hat > lambda*`, else
    /// `W_r(G_hat, G*)`.
    WOverlineGStar { r: u32 },
    /// `W_r(G_hat, G_tilde*(lambda_hat))`; needs full overlap.
    WTildeGStar { r: u32 },
    /// `h(p_hat, p*)`.
    Hellinger,
}

impl Metric {
    pub fn label(&self) -> String {
        match self {
            Metric::AbsLambda => "abs_lambda".into(),
            Metric::WGStar { r } => format!("w{r}_g_star"),
            Metric::WOverlineGStar { r } => format!("w{r}_overline_g_star"),
            Metric::WTildeGStar { r } => format!("w{r}_tilde_g_star"),
            Metric::Hellinger => "hellinger".into(),
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        let bad = || Error::input(format!("unknown metric label {label:?}"));
        match label {
            "abs_lambda" => return Ok(Metric::AbsLambda),
            "hellinger" => return Ok(Metric::Hellinger),
            _ => {}
        }
        let rest = label.strip_prefix('w').ok_or_else(bad)?;
        let split = rest.find('_').ok_or_else(bad)?;
        let r: u32 = rest[..split].parse().map_err(|_| bad())?;
        match &rest[split + 1..] {
            "g_star" => Ok(Metric::WGStar { r }),
            "overline_g_star" => Ok(Metric::WOverlineGStar { r }),
            "tilde_g_star" => Ok(Metric::WTildeGStar { r }),
            _ => Err(bad()),
        }
    }

    /// Rate exponent the theory predicts: `1/2` for `lambda` and the density,
    /// `1/(2r)` for an order-`r` Wasserstein error.
    pub fn default_exponent(&self) -> f64 {
        match self {
            Metric::AbsLambda | Metric::Hellinger => 0.5,
            Metric::WGStar { r } | Metric::WOverlineGStar { r } | Metric::WTildeGStar { r } => 0.5 / *r as f64,
        }
    }

    fn order(&self) -> Option<u32> {
        match self {
            Metric::WGStar { r } | Metric::WOverlineGStar { r } | Metric::WTildeGStar { r } => Some(*r),
            _ => None,
        }
    }
}

/// Slope tolerance used when a fit does not set one.
pub fn default_slope_tolerance(exponent: f64) -> f64 {
    if exponent >= 0.25 - 1e-12 {
        0.2
    } else {
        0.08
    }
}

/// EM settings of a scenario; the family comes from the scenario and the
/// seed from the cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSettings {
    pub constraint: ConstraintClass,
    #[serde(default = "FitSettings::default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "FitSettings::default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "FitSettings::default_restarts")]
    pub restarts: usize,
    #[serde(default = "FitSettings::default_lambda_floor")]
    pub lambda_floor: f64,
    #[serde(default)]
    pub bounds: ParameterBox,
    #[serde(default = "FitSettings::default_init")]
    pub init: InitStrategy,
}

impl FitSettings {
    fn default_max_iterations() -> usize {
        500
    }
    fn default_tolerance() -> f64 {
        1e-8
    }
    fn default_restarts() -> usize {
        8
    }
    fn default_lambda_floor() -> f64 {
        1e-8
    }
    fn default_init() -> InitStrategy {
        InitStrategy::KmeansPlusPlus
    }

    pub fn new(constraint: ConstraintClass) -> Self {
        FitSettings {
            constraint,
            max_iterations: Self::default_max_iterations(),
            tolerance: Self::default_tolerance(),
            restarts: Self::default_restarts(),
            lambda_floor: Self::default_lambda_floor(),
            bounds: ParameterBox::default(),
            init: Self::default_init(),
        }
    }

    pub fn em_config(&self, family: &FamilyTag, seed: u64) -> EmConfig {
        EmConfig {
            constraint: self.constraint,
            family: family.clone(),
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            restarts: self.restarts,
            lambda_floor: self.lambda_floor,
            bounds: self.bounds,
            init: self.init.clone(),
            seed,
        }
    }
}

/// Which replicates enter a rate regression, by their `lambda_hat`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaFilter {
    #[default]
    All,
    /// `lambda_hat > lambda*`.
    AboveStar,
    /// `lambda_hat <= lambda*`.
    AtMostStar,
}

impl LambdaFilter {
    pub fn label(&self) -> &'static str {
        match self {
            LambdaFilter::All => "all",
            LambdaFilter::AboveStar => "above_star",
            LambdaFilter::AtMostStar => "at_most_star",
        }
    }

    pub fn admits(&self, lambda_hat: f64, lambda_star: f64) -> bool {
        match self {
            LambdaFilter::All => true,
            LambdaFilter::AboveStar => lambda_hat > lambda_star,
            LambdaFilter::AtMostStar => lambda_hat <= lambda_star,
        }
    }
}

/// One requested rate regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    /// Metric label, e.g. `w1_g_star`.
    pub metric: String,
    #[serde(default)]
    pub filter: LambdaFilter,
    pub exponent: Option<f64>,
    pub tolerance: Option<f64>,
}

/// A convergence-rate experiment: the truth, the fit and the error metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Free-text note kept with the scenario (e.g. how `h0` was built).
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub lambda_star: f64,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    pub metrics: Vec<Metric>,
    /// Record fit wallclock in `rates.csv`; off keeps the file reproducible
    /// byte for byte.
    #[serde(default)]
    pub record_wallclock: bool,
    /// Merge tolerance for `G_bar*` and `G_tilde*`, and the atom match
    /// tolerance for full-overlap bookkeeping.
    #[serde(default = "ScenarioConfig::default_atom_tol")]
    pub atom_tol: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rate_fits: Vec<RateSpec>,
    pub h0: KnownDensity,
    pub g_star: MixingMeasure,
    pub family: FamilyTag,
    pub fit: FitSettings,
}

impl ScenarioConfig {
    fn default_atom_tol() -> f64 {
        1e-6
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::input(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Input(message) => Error::Format {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::input(e.to_string()))
    }

    pub fn truth(&self) -> Result<DeviatedMixture> {
        DeviatedMixture::new(self.h0.clone(), self.lambda_star, self.g_star.clone(), self.family.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains([',', '"', '\n', '/']) {
            return Err(Error::input("scenario name must be nonempty and free of , \" / and newlines"));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return Err(Error::input("n_grid must be a strictly increasing list of positive sizes"));
        }
        if self.replications == 0 {
            return Err(Error::input("replications must be at least 1"));
        }
        if self.metrics.is_empty() {
            return Err(Error::input("at least one metric is required"));
        }
        if self.metrics.iter().any(|m| m.order() == Some(0)) {
            return Err(Error::input("Wasserstein metrics need order r >= 1"));
        }
        for spec in &self.rate_fits {
            Metric::from_label(&spec.metric)?;
        }
        self.truth()?;
        self.fit.em_config(&self.family, 0).validate()?;
        Ok(())
    }
}
