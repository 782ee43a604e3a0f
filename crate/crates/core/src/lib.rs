//! Deviating mixture models: a known density `h0` contaminated by a finite
//! Gaussian mixture,
//!
//! ```text
//! p(x) = (1 - lambda) h0(x) + lambda sum_i p_i f(x | theta_i),
//! ```
//!
//! with EM estimation of `(lambda, G)`, exact Wasserstein distances between
//! mixing measures, regime classification for overlapping `h0`, and a
//! harness that measures convergence rates on simulated data.
//!
//! ```
//! use devmix_core::{Atom, DeviatedMixture, FamilyTag, KnownDensity, MixingMeasure};
//! use devmix_core::known_density::GaussianMixtureH0;
//! use nalgebra::DMatrix;
//!
//! let h0 = KnownDensity::GaussianMixture(
//!     GaussianMixtureH0::new(vec![1.0], vec![vec![0.0]], vec![DMatrix::from_element(1, 1, 1.0)]).unwrap(),
//! );
//! let g = MixingMeasure::dirac(Atom::location(vec![3.0]));
//! let model = DeviatedMixture::new(h0, 0.2, g, FamilyTag::isotropic_location(1, 1.0)).unwrap();
//! let data = model.sample(500, 7).unwrap();
//! assert_eq!(data.len(), 500);
//! ```

pub mod error;
pub mod estimation;
pub mod gaussian;
pub mod harness;
pub mod known_density;
pub mod mixing;
pub mod model;
pub mod points;
pub mod quadrature;
pub mod regimes;
pub mod seed;

pub use error::{Error, Result};
pub use estimation::{em_fit, init_kmeanspp, EmConfig, FitResult, InitStrategy};
pub use known_density::{KnownDensity, KnownDensitySpec, TailClass};
pub use mixing::{
    convex_combine, rho, w_bar, wasserstein, wasserstein_power, Atom, ConstraintClass, MixingMeasure, ParameterBox,
};
pub use model::{hellinger, total_variation, DeviatedMixture, DivergenceEstimate, DivergenceMethod, FamilyTag};
pub use points::Points;
pub use regimes::{
    classify_regime, distinguishability_probe, minimize_polynomial_residual, overline_g_star,
    polynomial_system_residual, r_bar, RBar, Regime, RegimeCAlignment, RegimeReport,
};
pub use seed::derive_seed;
