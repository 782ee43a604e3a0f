//! The fixed, known component `h0` of a deviating mixture.
//!
//! Three families are supported, each with exact density evaluation and a
//! seeded sampler:
//!
//! * [`GaussianMixtureH0`]: a finite Gaussian mixture `f(x; G0)`;
//! * [`KdeH0`]: a kernel density estimate with Gaussian or Student kernel;
//! * [`PwlPushforwardH0`]: the law of `T(Z)` for `Z ~ N(0, 1)` and a continuous
//!   piecewise-linear `T` on the real line.
//!
//! The pushforward density follows the many-to-one change of variables: every
//! linear piece `T_j(z) = a_j z + b_j` whose interval maps onto `x`
//! contributes `phi((x - b_j) / a_j) / |a_j|`. Images of breakpoints are a
//! null set where the density may jump; there the left limit is returned.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gaussian::{
    log_sum_exp, matrix_from_rows, matrix_to_rows, std_normal_pdf, Gaussian,
};
use crate::points::Points;
use crate::quadrature::{Envelope, HeavyTail};
use crate::seed::rng_from_seed;

/// Tail behaviour of `h0` relative to a Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum TailClass {
    /// `-log h0(x) >~ |x|^beta` with `beta > 2`.
    LighterThanGaussian { beta: f64 },
    /// `-log h0(x) <~ |x|^beta` with `beta < 2`.
    HeavierThanGaussian { beta: f64 },
    GaussianEnvelope,
}

impl TailClass {
    pub fn lighter(beta: f64) -> Result<Self> {
        if beta > 2.0 {
            Ok(TailClass::LighterThanGaussian { beta })
        } else {
            Err(Error::input(format!("lighter-than-Gaussian exponent must exceed 2, got {beta}")))
        }
    }

    pub fn heavier(beta: f64) -> Result<Self> {
        if beta < 2.0 {
            Ok(TailClass::HeavierThanGaussian { beta })
        } else {
            Err(Error::input(format!("heavier-than-Gaussian exponent must be below 2, got {beta}")))
        }
    }
}

/// `h0(x) = sum_i w_i N(x | mu_i, Sigma_i)`.
#[derive(Clone, Debug)]
pub struct GaussianMixtureH0 {
    weights: Vec<f64>,
    components: Vec<Gaussian>,
    log_weights: Vec<f64>,
}

impl GaussianMixtureH0 {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::input("gaussian mixture h0 needs at least one atom"));
        }
        if means.len() != weights.len() || covariances.len() != weights.len() {
            return Err(Error::input("weights, means and covariances must have equal length"));
        }
        check_probability_vector(&weights)?;
        let dim = means[0].len();
        let mut components = Vec::with_capacity(weights.len());
        for (m, c) in means.into_iter().zip(covariances) {
            if m.len() != dim {
                return Err(Error::input("gaussian mixture atoms have inconsistent dimensions"));
            }
            components.push(Gaussian::new(m, c)?);
        }
        for i in 0..components.len() {
            for j in 0..i {
                let (a, b) = (&components[i], &components[j]);
                if a.mean() == b.mean() && a.cov() == b.cov() {
                    return Err(Error::input(format!("gaussian mixture atoms {j} and {i} coincide")));
                }
            }
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(GaussianMixtureH0 {
            weights,
            components,
            log_weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        self.components.iter().zip(&self.weights).map(|(g, w)| w * g.pdf(x)).sum()
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        // The linear-domain sum is exact enough unless it underflows.
        let direct = self.pdf(x);
        if direct > 1e-280 {
            return direct.ln();
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .map(|(g, lw)| lw + g.log_pdf(x))
            .collect();
        log_sum_exp(&terms)
    }
}

/// Smoothing kernel of a [`KdeH0`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Gaussian,
    /// Multivariate Student-t kernel with `nu` degrees of freedom.
    Student { nu: f64 },
}

/// `h0(x) = (1/m) sum_j k_sigma(x, Y_j)`.
#[derive(Clone, Debug)]
pub struct KdeH0 {
    centers: Points,
    bandwidth: f64,
    kernel: Kernel,
    log_norm: f64,
}

impl KdeH0 {
    pub fn new(centers: Points, bandwidth: f64, kernel: Kernel) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::input("kde h0 needs at least one center"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::input(format!("kde bandwidth must be positive, got {bandwidth}")));
        }
        let d = centers.dim() as f64;
        let log_norm = match kernel {
            Kernel::Gaussian => -0.5 * d * (2.0 * std::f64::consts::PI).ln() - d * bandwidth.ln(),
            Kernel::Student { nu } => {
                if !(nu > 0.0 && nu.is_finite()) {
                    return Err(Error::input(format!("student kernel needs nu > 0, got {nu}")));
                }
                // Log-gamma keeps the constant finite for large nu and d.
                ln_gamma(0.5 * (nu + d)) - ln_gamma(0.5 * nu)
                    - 0.5 * d * (nu * std::f64::consts::PI).ln()
                    - d * bandwidth.ln()
            }
        };
        Ok(KdeH0 {
            centers,
            bandwidth,
            kernel,
            log_norm,
        })
    }

    pub fn centers(&self) -> &Points {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    fn log_kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            / (self.bandwidth * self.bandwidth);
        match self.kernel {
            Kernel::Gaussian => self.log_norm - 0.5 * r2,
            Kernel::Student { nu } => {
                let d = x.len() as f64;
                self.log_norm - 0.5 * (nu + d) * (r2 / nu).ln_1p()
            }
        }
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self.centers.iter().map(|y| self.log_kernel(x, y)).collect();
        log_sum_exp(&terms) - (self.centers.len() as f64).ln()
    }
}

/// Law of `T(Z)`, `Z ~ N(0, 1)`, for continuous piecewise-linear `T: R -> R`.
///
/// Piece `j` is `a_j z + b_j` on `(c_{j-1}, c_j]` with `c_0 = -inf` and
/// `c_{M+1} = +inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct PwlPushforwardH0 {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
}

impl PwlPushforwardH0 {
    /// Validates continuity, nonzero slopes and that `T` is not affine.
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, intercepts: Vec<f64>) -> Result<Self> {
        let t = Self::new_unchecked(breakpoints, slopes, intercepts)?;
        if !t.slopes.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::input(
                "piecewise-linear map must have at least one breakpoint where the slope changes",
            ));
        }
        Ok(t)
    }

    /// Like [`PwlPushforwardH0::new`] but accepts an affine map.
    ///
    /// Used for degenerate cross-checks where `T` is a single line; the
    /// pushforward is then itself Gaussian.
    pub fn new_unchecked(breakpoints: Vec<f64>, slopes: Vec<f64>, intercepts: Vec<f64>) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 || intercepts.len() != slopes.len() {
            return Err(Error::input(format!(
                "{} breakpoints need {} slopes and intercepts",
                breakpoints.len(),
                breakpoints.len() + 1
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input("breakpoints must be strictly increasing"));
        }
        if slopes.iter().chain(&intercepts).chain(&breakpoints).any(|v| !v.is_finite()) {
            return Err(Error::input("piecewise-linear map has non-finite parameters"));
        }
        if let Some(j) = slopes.iter().position(|&a| a == 0.0) {
            return Err(Error::input(format!("piece {j} has zero slope")));
        }
        for (i, &c) in breakpoints.iter().enumerate() {
            let left = slopes[i] * c + intercepts[i];
            let right = slopes[i + 1] * c + intercepts[i + 1];
            if (left - right).abs() > 1e-12 * (1.0 + left.abs()) {
                return Err(Error::input(format!(
                    "map is discontinuous at breakpoint {c} ({left} vs {right})"
                )));
            }
        }
        Ok(PwlPushforwardH0 {
            breakpoints,
            slopes,
            intercepts,
        })
    }

    /// Builds `T` from its values at the breakpoints plus the two tail slopes.
    pub fn from_knots(breakpoints: Vec<f64>, values: &[f64], left_slope: f64, right_slope: f64) -> Result<Self> {
        let m = breakpoints.len();
        if m == 0 || values.len() != m {
            return Err(Error::input("need one value per breakpoint and at least one breakpoint"));
        }
        let mut slopes = Vec::with_capacity(m + 1);
        let mut intercepts = Vec::with_capacity(m + 1);
        slopes.push(left_slope);
        intercepts.push(values[0] - left_slope * breakpoints[0]);
        for i in 0..m - 1 {
            let a = (values[i + 1] - values[i]) / (breakpoints[i + 1] - breakpoints[i]);
            slopes.push(a);
            intercepts.push(values[i] - a * breakpoints[i]);
        }
        slopes.push(right_slope);
        intercepts.push(values[m - 1] - right_slope * breakpoints[m - 1]);
        PwlPushforwardH0::new(breakpoints, slopes, intercepts)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    /// Evaluates the map itself.
    pub fn map(&self, z: f64) -> f64 {
        let j = self.breakpoints.partition_point(|&c| c < z);
        self.slopes[j] * z + self.intercepts[j]
    }

    /// Images of the ends of piece `j`, ordered low to high.
    fn piece_range(&self, j: usize) -> (f64, f64) {
        let image = |i: Option<usize>, inf: f64| i.map(|i| self.map(self.breakpoints[i])).unwrap_or(inf * self.slopes[j].signum());
        let left = image(j.checked_sub(1), f64::NEG_INFINITY);
        let right = image((j < self.breakpoints.len()).then_some(j), f64::INFINITY);
        if left <= right { (left, right) } else { (right, left) }
    }

    fn pdf(&self, x: f64) -> f64 {
        let mut total = 0.0;
        for (j, (&a, &b)) in self.slopes.iter().zip(&self.intercepts).enumerate() {
            let z = (x - b) / a;
            // Membership is decided on the image side, against the same
            // breakpoint images the quadrature uses as jump points, so a
            // jump node is claimed by exactly one piece (its left limit).
            let (lo, hi) = self.piece_range(j);
            let inside = lo < x && x <= hi;
            if inside {
                total += std_normal_pdf(z) / a.abs();
            }
        }
        total
    }

    /// Images of the breakpoints, where the density can jump.
    pub fn jump_points(&self) -> Vec<f64> {
        self.breakpoints.iter().map(|&c| self.map(c)).collect()
    }

    fn window(&self, z_radius: f64) -> (f64, f64) {
        let mut vals = vec![self.map(-z_radius), self.map(z_radius)];
        vals.extend(
            self.breakpoints
                .iter()
                .filter(|c| c.abs() < z_radius)
                .map(|&c| self.map(c)),
        );
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// The known density `h0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "KnownDensitySpec", into = "KnownDensitySpec")]
pub enum KnownDensity {
    GaussianMixture(GaussianMixtureH0),
    Kde(KdeH0),
    PwlPushforward(PwlPushforwardH0),
}

impl KnownDensity {
    pub fn dim(&self) -> usize {
        match self {
            KnownDensity::GaussianMixture(g) => g.dim(),
            KnownDensity::Kde(k) => k.centers.dim(),
            KnownDensity::PwlPushforward(_) => 1,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::input(format!(
                "point has dimension {}, h0 has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `h0(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.pdf_unchecked(x))
    }

    /// `log h0(x)`; `-inf` outside the support.
    pub fn log_eval(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.log_pdf_unchecked(x))
    }

    pub(crate) fn pdf_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            KnownDensity::PwlPushforward(t) => t.pdf(x[0]),
            KnownDensity::GaussianMixture(g) => g.pdf(x),
            _ => self.log_pdf_unchecked(x).exp(),
        }
    }

    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            KnownDensity::GaussianMixture(g) => g.log_pdf(x),
            KnownDensity::Kde(k) => k.log_pdf(x),
            KnownDensity::PwlPushforward(t) => t.pdf(x[0]).ln(),
        }
    }

    pub(crate) fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            KnownDensity::GaussianMixture(g) => {
                let j = pick_index(g.weights(), rng);
                g.components[j].sample_into(rng, out);
            }
            KnownDensity::Kde(k) => {
                let j = rng.random_range(0..k.centers.len());
                let c = k.centers.row(j);
                let scale = match k.kernel {
                    Kernel::Gaussian => k.bandwidth,
                    Kernel::Student { nu } => {
                        let w: f64 = ChiSquared::new(nu).expect("nu validated").sample(rng);
                        k.bandwidth / (w / nu).sqrt()
                    }
                };
                for (o, ci) in out.iter_mut().zip(c) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = ci + scale * z;
                }
            }
            KnownDensity::PwlPushforward(t) => {
                let z: f64 = rng.sample(StandardNormal);
                out[0] = t.map(z);
            }
        }
    }

    /// `count` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Points> {
        if count == 0 {
            return Err(Error::input("sample count must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let d = self.dim();
        let mut out = Points::with_capacity(d, count);
        let mut buf = vec![0.0; d];
        for _ in 0..count {
            self.sample_one(&mut rng, &mut buf);
            out.push(&buf);
        }
        Ok(out)
    }

    /// Tail class by construction of the family.
    pub fn tail_class(&self) -> TailClass {
        match self {
            KnownDensity::Kde(k) if matches!(k.kernel, Kernel::Student { .. }) => {
                // Polynomial tails; any exponent below 2 qualifies.
                TailClass::HeavierThanGaussian { beta: 1.0 }
            }
            _ => TailClass::GaussianEnvelope,
        }
    }

    /// Quadrature windows covering the mass of `h0`.
    pub fn envelopes(&self) -> Vec<Envelope> {
        match self {
            KnownDensity::GaussianMixture(g) => g
                .components
                .iter()
                .map(|c| Envelope::around(c.mean(), &c.marginal_sd(), 10.0, c.min_sd()))
                .collect(),
            KnownDensity::Kde(k) => {
                let d = k.centers.dim();
                let sd = vec![k.bandwidth; d];
                k.centers
                    .iter()
                    .map(|c| {
                        let mut e = Envelope::around(c, &sd, 10.0, k.bandwidth);
                        if let Kernel::Student { nu } = k.kernel {
                            e.heavy_tail = Some(HeavyTail {
                                center: c.to_vec(),
                                radius: 10.0 * k.bandwidth * 1e9f64.powf(1.0 / nu),
                            });
                        }
                        e
                    })
                    .collect()
            }
            KnownDensity::PwlPushforward(t) => {
                let (lo, hi) = t.window(10.0);
                let scale = t.slopes.iter().map(|a| a.abs()).fold(f64::INFINITY, f64::min);
                vec![Envelope {
                    lo: vec![lo],
                    hi: vec![hi],
                    scale,
                    heavy_tail: None,
                }]
            }
        }
    }

    /// Points where the density is discontinuous (one-dimensional only).
    pub fn jump_points(&self) -> Vec<f64> {
        match self {
            KnownDensity::PwlPushforward(t) => t.jump_points(),
            _ => Vec::new(),
        }
    }

    pub fn as_gaussian_mixture(&self) -> Option<&GaussianMixtureH0> {
        match self {
            KnownDensity::GaussianMixture(g) => Some(g),
            _ => None,
        }
    }
}

pub(crate) fn pick_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

pub(crate) fn check_probability_vector(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::input("weights must be finite and nonnegative"));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::input(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

/// Serialized form of [`KnownDensity`] used in configuration files.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnownDensitySpec {
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
    },
    Kde {
        centers: Vec<Vec<f64>>,
        bandwidth: f64,
        kernel: Kernel,
    },
    PwlPushforward {
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
    },
}

impl TryFrom<KnownDensitySpec> for KnownDensity {
    type Error = Error;

    fn try_from(spec: KnownDensitySpec) -> Result<Self> {
        Ok(match spec {
            KnownDensitySpec::GaussianMixture {
                weights,
                means,
                covariances,
            } => {
                let covs = covariances
                    .iter()
                    .map(|rows| matrix_from_rows(rows))
                    .collect::<Result<Vec<_>>>()?;
                KnownDensity::GaussianMixture(GaussianMixtureH0::new(weights, means, covs)?)
            }
            KnownDensitySpec::Kde {
                centers,
                bandwidth,
                kernel,
            } => KnownDensity::Kde(KdeH0::new(Points::from_rows(&centers)?, bandwidth, kernel)?),
            KnownDensitySpec::PwlPushforward {
                breakpoints,
                slopes,
                intercepts,
            } => KnownDensity::PwlPushforward(PwlPushforwardH0::new(breakpoints, slopes, intercepts)?),
        })
    }
}

impl From<KnownDensity> for KnownDensitySpec {
    fn from(h0: KnownDensity) -> Self {
        match h0 {
            KnownDensity::GaussianMixture(g) => KnownDensitySpec::GaussianMixture {
                weights: g.weights.clone(),
                means: g.components.iter().map(|c| c.mean().to_vec()).collect(),
                covariances: g.components.iter().map(|c| matrix_to_rows(c.cov())).collect(),
            },
            KnownDensity::Kde(k) => KnownDensitySpec::Kde {
                centers: k.centers.to_rows(),
                bandwidth: k.bandwidth,
                kernel: k.kernel,
            },
            KnownDensity::PwlPushforward(t) => KnownDensitySpec::PwlPushforward {
                breakpoints: t.breakpoints,
                slopes: t.slopes,
                intercepts: t.intercepts,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{Grid1D, Resolution};
    use approx::assert_abs_diff_eq;

    fn abs_map() -> PwlPushforwardH0 {
        PwlPushforwardH0::new(vec![0.0], vec![-1.0, 1.0], vec![0.0, 0.0]).unwrap()
    }

    fn std_normal_h0() -> KnownDensity {
        KnownDensity::GaussianMixture(
            GaussianMixtureH0::new(vec![1.0], vec![vec![0.0]], vec![DMatrix::identity(1, 1)]).unwrap(),
        )
    }

    fn integral_1d(h0: &KnownDensity) -> f64 {
        let g = Grid1D::build(&h0.envelopes(), 0, &h0.jump_points(), Resolution::FINE_1D).unwrap();
        g.integrate(|x| h0.eval(&[x]).unwrap())
    }

    #[test]
    fn gaussian_atom_at_origin() {
        assert_abs_diff_eq!(std_normal_h0().eval(&[0.0]).unwrap(), 0.398_942_3, epsilon = 1e-7);
    }

    #[test]
    fn identity_pushforward_is_standard_normal() {
        let t = PwlPushforwardH0::new_unchecked(vec![], vec![1.0], vec![0.0]).unwrap();
        let h0 = KnownDensity::PwlPushforward(t);
        assert_abs_diff_eq!(h0.eval(&[0.0]).unwrap(), 0.398_942_3, epsilon = 1e-7);
        assert!(PwlPushforwardH0::new(vec![], vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn folded_normal_sums_both_branches() {
        let h0 = KnownDensity::PwlPushforward(abs_map());
        // phi(1) + phi(-1)
        assert_abs_diff_eq!(h0.eval(&[1.0]).unwrap(), 0.483_941_4, epsilon = 1e-7);
        assert_eq!(h0.eval(&[-0.5]).unwrap(), 0.0);
        // Left limit at the breakpoint image.
        assert_eq!(h0.eval(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn left_limit_at_interior_jump() {
        // T(z) = z for z <= 0, 2z for z > 0: density jumps from phi(x) to phi(x/2)/2 at 0.
        let t = PwlPushforwardH0::new(vec![0.0], vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let h0 = KnownDensity::PwlPushforward(t);
        assert_abs_diff_eq!(h0.eval(&[0.0]).unwrap(), std_normal_pdf(0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(h0.eval(&[1e-12]).unwrap(), 0.5 * std_normal_pdf(0.0), epsilon = 1e-12);
    }

    #[test]
    fn folded_normal_histogram_cross_check() {
        let h0 = KnownDensity::PwlPushforward(abs_map());
        let n = 1_000_000;
        let s = h0.sample(n, 11).unwrap();
        let (a, b) = (0.9, 1.1);
        let frac = s.iter().filter(|p| p[0] > a && p[0] <= b).count() as f64 / n as f64;
        // Bin average of the density is within ~1e-4 of the midpoint value for this bin width.
        let se = (frac * (1.0 - frac) / n as f64).sqrt();
        assert!((frac / (b - a) - 0.483_941_4).abs() < 4.0 * se / (b - a) + 1e-3);
    }

    #[test]
    fn rejects_discontinuous_or_flat_maps() {
        assert!(PwlPushforwardH0::new(vec![0.0], vec![1.0, 2.0], vec![0.0, 1.0]).is_err());
        assert!(PwlPushforwardH0::new(vec![0.0], vec![0.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(PwlPushforwardH0::new(vec![1.0, 0.0], vec![1.0, 2.0, 3.0], vec![0.0; 3]).is_err());
    }

    #[test]
    fn from_knots_interpolates() {
        let t = PwlPushforwardH0::from_knots(vec![-1.0, 0.0, 1.0], &[1.0, 0.0, 1.0], -1.0, 1.0).unwrap();
        for z in [-3.0, -1.0, -0.5, 0.0, 0.25, 1.0, 4.0] {
            assert_abs_diff_eq!(t.map(z), f64::abs(z), epsilon = 1e-15);
        }
    }

    #[test]
    fn samples_live_in_image() {
        let h0 = KnownDensity::PwlPushforward(abs_map());
        let s = h0.sample(10_000, 3).unwrap();
        assert!(s.iter().all(|p| p[0] >= 0.0));
    }

    #[test]
    fn gaussian_mixture_sample_mean() {
        let h0 = KnownDensity::GaussianMixture(
            GaussianMixtureH0::new(vec![1.0], vec![vec![1.5]], vec![DMatrix::identity(1, 1) * 4.0]).unwrap(),
        );
        let n = 100_000;
        let s = h0.sample(n, 5).unwrap();
        assert!((s.mean()[0] - 1.5).abs() < 3.0 * 2.0 / (n as f64).sqrt());
    }

    #[test]
    fn sampling_is_seeded() {
        let h0 = std_normal_h0();
        assert_eq!(h0.sample(10, 1).unwrap(), h0.sample(10, 1).unwrap());
        assert_ne!(h0.sample(10, 1).unwrap(), h0.sample(10, 2).unwrap());
        assert!(h0.sample(0, 1).is_err());
    }

    #[test]
    fn gaussian_kde_sample_is_center_plus_noise() {
        let centers = Points::from_scalars(&[-5.0, 5.0]);
        let h0 = KnownDensity::Kde(KdeH0::new(centers, 0.1, Kernel::Gaussian).unwrap());
        let s = h0.sample(2000, 9).unwrap();
        assert!(s.iter().all(|p| (p[0].abs() - 5.0).abs() < 0.6));
    }

    #[test]
    fn tail_classes() {
        let student = KnownDensity::Kde(KdeH0::new(Points::from_scalars(&[0.0]), 1.0, Kernel::Student { nu: 3.0 }).unwrap());
        assert!(matches!(student.tail_class(), TailClass::HeavierThanGaussian { .. }));
        assert_eq!(std_normal_h0().tail_class(), TailClass::GaussianEnvelope);
        assert_eq!(KnownDensity::PwlPushforward(abs_map()).tail_class(), TailClass::GaussianEnvelope);
        assert!(TailClass::lighter(1.5).is_err());
        assert!(TailClass::heavier(2.5).is_err());
    }

    #[test]
    fn one_dimensional_normalization() {
        let student = KnownDensity::Kde(
            KdeH0::new(Points::from_scalars(&[-1.0, 0.5, 2.0]), 0.7, Kernel::Student { nu: 3.0 }).unwrap(),
        );
        let gauss_kde = KnownDensity::Kde(
            KdeH0::new(Points::from_scalars(&[-1.0, 0.5, 2.0]), 0.3, Kernel::Gaussian).unwrap(),
        );
        let pwl = KnownDensity::PwlPushforward(
            PwlPushforwardH0::from_knots(vec![-1.0, 0.0, 1.5], &[0.5, -1.0, 2.0], 0.3, 2.5).unwrap(),
        );
        for h0 in [std_normal_h0(), student, gauss_kde, pwl, KnownDensity::PwlPushforward(abs_map())] {
            assert_abs_diff_eq!(integral_1d(&h0), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn jump_image_rounding_does_not_drop_mass() {
        // (x - b) / a at the second jump rounds just past the breakpoint for
        // both adjacent pieces.
        let t = PwlPushforwardH0::new(
            vec![0.9538519711655171, 1.2432034603302347],
            vec![0.5218655790177944, 3.31282360099359, 1.9925224300899629],
            vec![0.3065475847960257, -2.3556132259057994, -0.71421024156035],
        )
        .unwrap();
        let jump = t.jump_points()[1];
        let h0 = KnownDensity::PwlPushforward(t);
        assert!(h0.eval(&[jump]).unwrap() > 0.0);
        assert_abs_diff_eq!(integral_1d(&h0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_input_error() {
        assert!(matches!(std_normal_h0().eval(&[0.0, 1.0]), Err(Error::Input(_))));
    }

    #[test]
    fn spec_round_trip() {
        let h0 = KnownDensity::PwlPushforward(abs_map());
        let text = toml::to_string(&KnownDensitySpec::from(h0.clone())).unwrap();
        let back: KnownDensity = toml::from_str(&text).unwrap();
        assert_eq!(back.eval(&[0.7]).unwrap(), h0.eval(&[0.7]).unwrap());
    }
}
