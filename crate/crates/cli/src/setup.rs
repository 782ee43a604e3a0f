//! Partial views of a config file. Each command reads only the keys it
//! needs, so a full scenario file works everywhere.

use std::path::Path;

use anyhow::{Context, Result};
use devmix_core::harness::FitSettings;
use devmix_core::{DeviatedMixture, Error, FamilyTag, KnownDensity, MixingMeasure};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(value)
}

#[derive(Deserialize)]
pub struct DensitySetup {
    pub h0: KnownDensity,
}

#[derive(Deserialize)]
pub struct FitSetup {
    pub h0: KnownDensity,
    pub family: FamilyTag,
    pub fit: Option<FitSettings>,
}

/// A deviated mixture; `lambda_star` and `g_star` name the truth in
/// scenario files.
#[derive(Deserialize)]
pub struct ModelSetup {
    pub h0: KnownDensity,
    pub lambda_star: f64,
    pub g_star: MixingMeasure,
    pub family: FamilyTag,
    #[serde(default = "default_atom_tol")]
    pub atom_tol: f64,
}

fn default_atom_tol() -> f64 {
    devmix_core::regimes::DEFAULT_ATOM_MATCH_TOL
}

impl ModelSetup {
    pub fn model(&self) -> Result<DeviatedMixture> {
        DeviatedMixture::new(self.h0.clone(), self.lambda_star, self.g_star.clone(), self.family.clone())
            .context("invalid model")
    }
}

/// Parses `"1.0,2.5"` into a point.
pub fn parse_point(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::input(format!("cannot parse coordinate {t:?}")).into())
        })
        .collect()
}
