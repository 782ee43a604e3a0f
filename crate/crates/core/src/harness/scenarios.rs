//! The shipped experiments.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::config::{FitSettings, LambdaFilter, Metric, RateSpec, ScenarioConfig};
use crate::known_density::{GaussianMixtureH0, KnownDensity};
use crate::mixing::{Atom, ConstraintClass, MixingMeasure, ParameterBox};
use crate::model::FamilyTag;

/// Sample sizes `200 * 2^j`, `j = 0..=8`.
pub fn default_n_grid() -> Vec<usize> {
    (0..9).map(|j| 200usize << j).collect()
}

pub const DEFAULT_REPLICATIONS: usize = 16;
pub const HALF_CIRCLE_PIECES: usize = 16;
pub const HALF_CIRCLE_NOISE_SD: f64 = 0.1;
pub const SECTION4_KERNEL_VARIANCE: f64 = 0.05;

/// A Gaussian mixture tracing the unit upper half circle with isotropic
/// noise: one component per arc piece, centred at the piece midpoint and
/// stretched along the tangent by the variance of a uniform draw on the
/// piece.
pub fn half_circle_h0(pieces: usize, noise_sd: f64) -> KnownDensity {
    let step = PI / pieces as f64;
    let along = step * step / 12.0;
    let mut means = Vec::with_capacity(pieces);
    let mut covs = Vec::with_capacity(pieces);
    for k in 0..pieces {
        let angle = step * (k as f64 + 0.5);
        let (s, c) = angle.sin_cos();
        means.push(vec![c, s]);
        let t = [-s, c];
        let mut cov = DMatrix::identity(2, 2) * (noise_sd * noise_sd);
        for i in 0..2 {
            for j in 0..2 {
                cov[(i, j)] += along * t[i] * t[j];
            }
        }
        covs.push(cov);
    }
    let weights = vec![1.0 / pieces as f64; pieces];
    KnownDensity::GaussianMixture(GaussianMixtureH0::new(weights, means, covs).expect("valid half-circle mixture"))
}

fn section4_g_star() -> MixingMeasure {
    MixingMeasure::new(
        vec![
            Atom::location(vec![-0.7, 1.5]),
            Atom::location(vec![0.1, 2.0]),
            Atom::location(vec![1.0, 1.5]),
        ],
        vec![0.3, 0.3, 0.4],
    )
    .expect("valid mixing measure")
}

fn section4(name: &str, constraint: ConstraintClass, metrics: Vec<Metric>, master_seed: u64) -> ScenarioConfig {
    let mut fit = FitSettings::new(constraint);
    fit.restarts = 4;
    fit.bounds = ParameterBox {
        mean_bound: 10.0,
        ..ParameterBox::default()
    };
    ScenarioConfig {
        name: name.into(),
        description: format!(
            "h0 is a {HALF_CIRCLE_PIECES}-component Gaussian mixture on the unit upper half circle \
             (noise sd {HALF_CIRCLE_NOISE_SD}), standing in for a density model trained on noisy \
             half-circle data; kernel covariance {SECTION4_KERNEL_VARIANCE} I"
        ),
        lambda_star: 0.5,
        n_grid: default_n_grid(),
        replications: DEFAULT_REPLICATIONS,
        master_seed,
        metrics,
        record_wallclock: false,
        atom_tol: 1e-6,
        rate_fits: Vec::new(),
        h0: half_circle_h0(HALF_CIRCLE_PIECES, HALF_CIRCLE_NOISE_SD),
        g_star: section4_g_star(),
        family: FamilyTag::isotropic_location(2, SECTION4_KERNEL_VARIANCE),
        fit,
    }
}

/// Distinguishable half-circle experiment fitted with the true number of
/// atoms.
pub fn half_circle_exact() -> ScenarioConfig {
    section4(
        "half_circle_exact",
        ConstraintClass::ExactFit { k: 3 },
        vec![Metric::AbsLambda, Metric::WGStar { r: 1 }, Metric::Hellinger],
        20_240_401,
    )
}

/// The same truth fitted with one spare atom.
pub fn half_circle_overfit() -> ScenarioConfig {
    section4(
        "half_circle_overfit",
        ConstraintClass::OverFit { k: 4 },
        vec![Metric::AbsLambda, Metric::WGStar { r: 2 }, Metric::Hellinger],
        20_240_402,
    )
}

/// `h0 = 0.4 N(mu1, S1) + 0.6 N(mu2, S2)` deviated towards its own first
/// component: the partially distinguishable, over-fitted experiment.
pub fn two_gaussian_overlap() -> ScenarioConfig {
    let s1 = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 2.0]);
    let s2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
    let h0 = GaussianMixtureH0::new(vec![0.4, 0.6], vec![vec![-2.0, 3.0], vec![1.0, -4.0]], vec![s1.clone(), s2])
        .expect("valid mixture");
    let g_star = MixingMeasure::dirac(Atom::location_scale(vec![-2.0, 3.0], s1));
    let mut fit = FitSettings::new(ConstraintClass::OverFit { k: 3 });
    fit.restarts = 4;
    fit.bounds = ParameterBox {
        mean_bound: 10.0,
        eig_min: 0.05,
        eig_max: 20.0,
    };
    ScenarioConfig {
        name: "two_gaussian_overlap".into(),
        description: "G* sits on the first atom of h0, so the truth is also matched by \
                      (lambda, G_bar*(lambda)) for every lambda > lambda*"
            .into(),
        lambda_star: 0.3,
        n_grid: default_n_grid(),
        replications: DEFAULT_REPLICATIONS,
        master_seed: 20_240_403,
        metrics: vec![
            Metric::AbsLambda,
            Metric::WOverlineGStar { r: 4 },
            Metric::WGStar { r: 6 },
        ],
        record_wallclock: false,
        atom_tol: 1e-6,
        rate_fits: vec![
            RateSpec {
                metric: "w4_overline_g_star".into(),
                filter: LambdaFilter::AboveStar,
                exponent: Some(0.125),
                tolerance: Some(0.08),
            },
            RateSpec {
                metric: "abs_lambda".into(),
                filter: LambdaFilter::AtMostStar,
                exponent: Some(0.5),
                tolerance: Some(0.2),
            },
            RateSpec {
                metric: "w6_g_star".into(),
                filter: LambdaFilter::AtMostStar,
                exponent: Some(1.0 / 12.0),
                tolerance: Some(0.08),
            },
        ],
        h0: KnownDensity::GaussianMixture(h0),
        g_star,
        family: FamilyTag::LocationScaleGaussian,
        fit,
    }
}

/// Every shipped scenario.
pub fn library() -> Vec<ScenarioConfig> {
    vec![half_circle_exact(), half_circle_overfit(), two_gaussian_overlap()]
}

pub fn by_name(name: &str) -> Option<ScenarioConfig> {
    library().into_iter().find(|s| s.name == name)
}
