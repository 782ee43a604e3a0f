//! The deviated mixture `p(x) = (1 - lambda) h0(x) + lambda sum_i p_i f(x | theta_i)`
//! and divergences between two such densities.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{check_covariance, log_sum_exp, matrix_from_rows, matrix_to_rows, Gaussian};
use crate::known_density::{pick_index, KnownDensity};
use crate::mixing::{Atom, MixingMeasure};
use crate::points::Points;
use crate::quadrature::{Envelope, Grid1D, Grid2D, Resolution};
use crate::seed::{derive_seed, rng_from_seed};

/// The kernel family `f(. | theta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilySpec", into = "FamilySpec")]
pub enum FamilyTag {
    /// `N(mu, Sigma_f)` with a fixed, shared covariance.
    LocationGaussian(DMatrix<f64>),
    /// `N(mu, Sigma)` with a free covariance per atom.
    LocationScaleGaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilySpec {
    Location { covariance: Vec<Vec<f64>> },
    LocationScale,
}

impl TryFrom<FamilySpec> for FamilyTag {
    type Error = Error;

    fn try_from(spec: FamilySpec) -> Result<Self> {
        match spec {
            FamilySpec::Location { covariance } => {
                let cov = matrix_from_rows(&covariance)?;
                check_covariance(&cov, cov.nrows())?;
                Ok(FamilyTag::LocationGaussian(cov))
            }
            FamilySpec::LocationScale => Ok(FamilyTag::LocationScaleGaussian),
        }
    }
}

impl From<FamilyTag> for FamilySpec {
    fn from(tag: FamilyTag) -> Self {
        match tag {
            FamilyTag::LocationGaussian(cov) => FamilySpec::Location {
                covariance: matrix_to_rows(&cov),
            },
            FamilyTag::LocationScaleGaussian => FamilySpec::LocationScale,
        }
    }
}

impl FamilyTag {
    pub fn isotropic_location(dim: usize, variance: f64) -> Self {
        FamilyTag::LocationGaussian(DMatrix::identity(dim, dim) * variance)
    }

    pub fn has_scale(&self) -> bool {
        matches!(self, FamilyTag::LocationScaleGaussian)
    }

    /// The kernel `f(. | theta)` for one atom.
    pub fn kernel(&self, atom: &Atom) -> Result<Gaussian> {
        match (self, &atom.scale) {
            (FamilyTag::LocationGaussian(cov), None) => {
                if cov.nrows() != atom.dim() {
                    return Err(Error::input("family covariance and atom differ in dimension"));
                }
                Gaussian::new(atom.location.clone(), cov.clone())
            }
            (FamilyTag::LocationScaleGaussian, Some(s)) => Gaussian::new(atom.location.clone(), s.clone()),
            (FamilyTag::LocationGaussian(_), Some(_)) => {
                Err(Error::input("location family atoms must not carry a covariance"))
            }
            (FamilyTag::LocationScaleGaussian, None) => {
                Err(Error::input("location-scale family atoms need a covariance"))
            }
        }
    }
}

/// `(h0, lambda, G, family)` with the component kernels cached.
#[derive(Clone, Debug)]
pub struct DeviatedMixture {
    h0: KnownDensity,
    lambda: f64,
    g: MixingMeasure,
    family: FamilyTag,
    kernels: Vec<Gaussian>,
}

impl DeviatedMixture {
    pub fn new(h0: KnownDensity, lambda: f64, g: MixingMeasure, family: FamilyTag) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::input(format!("lambda = {lambda} outside [0, 1]")));
        }
        if g.dim() != h0.dim() {
            return Err(Error::input(format!(
                "mixing measure has dimension {}, h0 has dimension {}",
                g.dim(),
                h0.dim()
            )));
        }
        let kernels = g.atoms().iter().map(|a| family.kernel(a)).collect::<Result<Vec<_>>>()?;
        Ok(DeviatedMixture {
            h0,
            lambda,
            g,
            family,
            kernels,
        })
    }

    /// Same `h0` and family with a different `(lambda, G)`.
    pub fn with_parameters(&self, lambda: f64, g: MixingMeasure) -> Result<Self> {
        DeviatedMixture::new(self.h0.clone(), lambda, g, self.family.clone())
    }

    pub fn h0(&self) -> &KnownDensity {
        &self.h0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mixing(&self) -> &MixingMeasure {
        &self.g
    }

    pub fn family(&self) -> &FamilyTag {
        &self.family
    }

    pub fn kernels(&self) -> &[Gaussian] {
        &self.kernels
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::input(format!(
                "point has dimension {}, model has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `F(x, G)`.
    pub(crate) fn deviation_pdf_unchecked(&self, x: &[f64]) -> f64 {
        self.kernels
            .iter()
            .zip(self.g.weights())
            .filter(|(_, &w)| w > 0.0)
            .map(|(k, w)| w * k.pdf(x))
            .sum()
    }

    pub(crate) fn pdf_unchecked(&self, x: &[f64]) -> f64 {
        let base = if self.lambda < 1.0 {
            (1.0 - self.lambda) * self.h0.pdf_unchecked(x)
        } else {
            0.0
        };
        let dev = if self.lambda > 0.0 {
            self.lambda * self.deviation_pdf_unchecked(x)
        } else {
            0.0
        };
        base + dev
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.pdf_unchecked(x))
    }

    /// `log p(x)` by log-sum-exp over the `K + 1` weighted components.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.log_pdf_unchecked(x, &mut Vec::new()))
    }

    fn log_pdf_unchecked(&self, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        if self.lambda < 1.0 {
            buf.push((1.0 - self.lambda).ln() + self.h0.log_pdf_unchecked(x));
        }
        if self.lambda > 0.0 {
            let ll = self.lambda.ln();
            for (k, &w) in self.kernels.iter().zip(self.g.weights()) {
                if w > 0.0 {
                    buf.push(ll + w.ln() + k.log_pdf(x));
                }
            }
        }
        log_sum_exp(buf)
    }

    /// `n` draws: a `Bernoulli(lambda)` switch, then either `h0` or an atom
    /// picked by weight. The switch, the `h0` draws and the deviated draws use
    /// separate streams derived from `seed`, so with `lambda = 0` the output
    /// equals `h0.sample(n, derive_seed(seed, &[1]))`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Points> {
        if n == 0 {
            return Err(Error::input("sample size must be positive"));
        }
        let mut switch = rng_from_seed(derive_seed(seed, &[0]));
        let mut base = rng_from_seed(derive_seed(seed, &[1]));
        let mut dev = rng_from_seed(derive_seed(seed, &[2]));
        let d = self.dim();
        let mut out = Points::with_capacity(d, n);
        let mut buf = vec![0.0; d];
        for _ in 0..n {
            let u: f64 = switch.random();
            if u < self.lambda {
                let j = pick_index(self.g.weights(), &mut dev);
                self.kernels[j].sample_into(&mut dev, &mut buf);
            } else {
                self.h0.sample_one(&mut base, &mut buf);
            }
            out.push(&buf);
        }
        Ok(out)
    }

    /// `sum_i log p(x_i)`.
    pub fn log_likelihood(&self, data: &Points) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::input("log-likelihood needs at least one point"));
        }
        if data.dim() != self.dim() {
            return Err(Error::input("data dimension does not match the model"));
        }
        let mut buf = Vec::with_capacity(self.kernels.len() + 1);
        let mut total = 0.0;
        for (i, x) in data.iter().enumerate() {
            let v = self.log_pdf_unchecked(x, &mut buf);
            if v == f64::NEG_INFINITY || v.is_nan() {
                return Err(Error::numerical(format!("model density vanishes at data point {i}")));
            }
            total += v;
        }
        Ok(total)
    }

    /// `d/d lambda` of the log-likelihood: `sum_i (F(x_i, G) - h0(x_i)) / p(x_i)`.
    pub fn lambda_score(&self, data: &Points) -> Result<f64> {
        if data.dim() != self.dim() {
            return Err(Error::input("data dimension does not match the model"));
        }
        let mut total = 0.0;
        for x in data.iter() {
            let p = self.pdf_unchecked(x);
            total += (self.deviation_pdf_unchecked(x) - self.h0.pdf_unchecked(x)) / p;
        }
        Ok(total)
    }

    /// Windows covering the mass of `h0` and of every kernel.
    pub fn envelopes(&self) -> Vec<Envelope> {
        let mut envs = self.h0.envelopes();
        for k in &self.kernels {
            envs.push(Envelope::around(k.mean(), &k.marginal_sd(), 10.0, k.min_sd()));
        }
        envs
    }
}

/// How a divergence is computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DivergenceMethod {
    Quadrature1D,
    Quadrature2D,
    /// Importance sampling from `(p + q) / 2`.
    ImportanceMc { samples: usize, seed: u64 },
}

impl DivergenceMethod {
    /// Quadrature in one and two dimensions, Monte Carlo beyond.
    pub fn default_for(dim: usize, seed: u64) -> Self {
        match dim {
            1 => DivergenceMethod::Quadrature1D,
            2 => DivergenceMethod::Quadrature2D,
            _ => DivergenceMethod::ImportanceMc { samples: 200_000, seed },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    /// Zero for quadrature.
    pub standard_error: f64,
    pub method: DivergenceMethod,
}

/// A fixed tensor-product quadrature rule shared by several models, so that
/// densities tabulated once can be reused across comparisons.
#[derive(Clone, Debug)]
pub enum QuadratureRule {
    OneD(Grid1D),
    TwoD(Grid2D),
}

impl QuadratureRule {
    /// Covers every model's envelopes and jump points with the fine rule
    /// used for `|p - q|`.
    pub fn for_models(models: &[&DeviatedMixture]) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::input("no models to cover"))?;
        let dim = first.dim();
        if models.iter().any(|m| m.dim() != dim) {
            return Err(Error::input("models differ in dimension"));
        }
        let envs: Vec<Envelope> = models.iter().flat_map(|m| m.envelopes()).collect();
        let jumps: Vec<f64> = models.iter().flat_map(|m| m.h0.jump_points()).collect();
        let res = if dim == 1 { Resolution::FINE_1D } else { Resolution::FINE_2D };
        QuadratureRule::from_envelopes(&envs, &jumps, res)
    }

    /// A rule over explicit windows; `jumps` is only used in one dimension.
    pub fn from_envelopes(envs: &[Envelope], jumps: &[f64], res: Resolution) -> Result<Self> {
        let dim = envs.first().ok_or_else(|| Error::input("no envelopes to cover"))?.dim();
        if envs.iter().any(|e| e.dim() != dim) {
            return Err(Error::input("envelopes differ in dimension"));
        }
        match dim {
            1 => {
                let mut jumps = jumps.to_vec();
                jumps.sort_by(f64::total_cmp);
                jumps.dedup();
                Ok(QuadratureRule::OneD(Grid1D::build(envs, 0, &jumps, res)?))
            }
            2 => Ok(QuadratureRule::TwoD(Grid2D::build(envs, res)?)),
            _ => Err(Error::input(format!("quadrature supports dimension 1 or 2, got {dim}"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            QuadratureRule::OneD(_) => 1,
            QuadratureRule::TwoD(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            QuadratureRule::OneD(g) => g.len(),
            QuadratureRule::TwoD(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn method(&self) -> DivergenceMethod {
        match self {
            QuadratureRule::OneD(_) => DivergenceMethod::Quadrature1D,
            QuadratureRule::TwoD(_) => DivergenceMethod::Quadrature2D,
        }
    }

    /// Quadrature weights in node order.
    pub fn weights(&self) -> Vec<f64> {
        match self {
            QuadratureRule::OneD(g) => g.weights.clone(),
            QuadratureRule::TwoD(g) => {
                let mut w = Vec::with_capacity(g.len());
                for &wx in &g.x.weights {
                    for &wy in &g.y.weights {
                        w.push(wx * wy);
                    }
                }
                w
            }
        }
    }

    /// Calls `f` on every node in node order.
    pub fn for_each_node<F: FnMut(&[f64])>(&self, mut f: F) {
        match self {
            QuadratureRule::OneD(g) => g.nodes.iter().for_each(|&x| f(&[x])),
            QuadratureRule::TwoD(g) => {
                let mut p = [0.0; 2];
                for &x in &g.x.nodes {
                    p[0] = x;
                    for &y in &g.y.nodes {
                        p[1] = y;
                        f(&p);
                    }
                }
            }
        }
    }

    /// Density values of `model` at every node.
    pub fn tabulate(&self, model: &DeviatedMixture) -> Result<Vec<f64>> {
        if model.dim() != self.dim() {
            return Err(Error::input("model and quadrature rule differ in dimension"));
        }
        let mut out = Vec::with_capacity(self.len());
        self.for_each_node(|x| out.push(model.pdf_unchecked(x)));
        Ok(out)
    }

    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        match self {
            QuadratureRule::OneD(g) => g.weights.iter().zip(values).map(|(w, v)| w * v).sum(),
            QuadratureRule::TwoD(g) => {
                let ny = g.y.len();
                g.x.weights
                    .iter()
                    .enumerate()
                    .map(|(i, wx)| {
                        wx * g.y.weights
                            .iter()
                            .zip(&values[i * ny..(i + 1) * ny])
                            .map(|(wy, v)| wy * v)
                            .sum::<f64>()
                    })
                    .sum()
            }
        }
    }

    /// `V = 1/2 int |p - q|` from tabulated densities.
    pub fn total_variation(&self, p: &[f64], q: &[f64]) -> DivergenceEstimate {
        let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
        DivergenceEstimate {
            value: (0.5 * self.integrate_values(&diff)).clamp(0.0, 1.0),
            standard_error: 0.0,
            method: self.method(),
        }
    }

    /// `h = sqrt(1 - int sqrt(pq))` from tabulated densities.
    pub fn hellinger(&self, p: &[f64], q: &[f64]) -> DivergenceEstimate {
        let root: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).collect();
        let affinity = self.integrate_values(&root);
        DivergenceEstimate {
            value: (1.0 - affinity).clamp(0.0, 1.0).sqrt(),
            standard_error: 0.0,
            method: self.method(),
        }
    }
}

#[derive(Clone, Copy)]
enum Divergence {
    TotalVariation,
    Hellinger,
}

fn divergence(p: &DeviatedMixture, q: &DeviatedMixture, method: DivergenceMethod, which: Divergence) -> Result<DivergenceEstimate> {
    if p.dim() != q.dim() {
        return Err(Error::input("models differ in dimension"));
    }
    match method {
        DivergenceMethod::Quadrature1D | DivergenceMethod::Quadrature2D => {
            let want = if matches!(method, DivergenceMethod::Quadrature1D) { 1 } else { 2 };
            if p.dim() != want {
                return Err(Error::input(format!(
                    "{method:?} needs dimension {want}, models have dimension {}",
                    p.dim()
                )));
            }
            let rule = QuadratureRule::for_models(&[p, q])?;
            let (vp, vq) = (rule.tabulate(p)?, rule.tabulate(q)?);
            Ok(match which {
                Divergence::TotalVariation => rule.total_variation(&vp, &vq),
                Divergence::Hellinger => rule.hellinger(&vp, &vq),
            })
        }
        DivergenceMethod::ImportanceMc { samples, seed } => {
            if samples < 2 {
                return Err(Error::input("Monte Carlo needs at least two samples"));
            }
            let mut pick = rng_from_seed(derive_seed(seed, &[0]));
            let mut rng = rng_from_seed(derive_seed(seed, &[1]));
            let d = p.dim();
            let mut x = vec![0.0; d];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..samples {
                let src = if pick.random::<bool>() { p } else { q };
                src.sample_one(&mut rng, &mut x);
                let (a, b) = (p.pdf_unchecked(&x), q.pdf_unchecked(&x));
                let m = 0.5 * (a + b);
                let v = match which {
                    Divergence::TotalVariation => (a - b).abs() / (2.0 * m),
                    Divergence::Hellinger => (a * b).sqrt() / m,
                };
                sum += v;
                sum_sq += v * v;
            }
            let n = samples as f64;
            let mean = sum / n;
            let se = ((sum_sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
            Ok(match which {
                Divergence::TotalVariation => DivergenceEstimate {
                    value: mean.clamp(0.0, 1.0),
                    standard_error: se,
                    method,
                },
                Divergence::Hellinger => {
                    let h = (1.0 - mean).clamp(0.0, 1.0).sqrt();
                    // Delta method; at h = 0 report the affinity error itself.
                    let se_h = if h > 0.0 { se / (2.0 * h) } else { se.sqrt() };
                    DivergenceEstimate {
                        value: h,
                        standard_error: se_h,
                        method,
                    }
                }
            })
        }
    }
}

impl DeviatedMixture {
    fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        if rng.random::<f64>() < self.lambda {
            let j = pick_index(self.g.weights(), rng);
            self.kernels[j].sample_into(rng, out);
        } else {
            self.h0.sample_one(rng, out);
        }
    }
}

/// `V(p, q) = 1/2 int |p - q|`.
pub fn total_variation(p: &DeviatedMixture, q: &DeviatedMixture, method: DivergenceMethod) -> Result<DivergenceEstimate> {
    divergence(p, q, method, Divergence::TotalVariation)
}

/// `h(p, q)` with `h^2 = 1 - int sqrt(pq)`, so `h` lies in `[0, 1]`.
pub fn hellinger(p: &DeviatedMixture, q: &DeviatedMixture, method: DivergenceMethod) -> Result<DivergenceEstimate> {
    divergence(p, q, method, Divergence::Hellinger)
}

/// Serialized form of a [`DeviatedMixture`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub h0: KnownDensity,
    pub lambda: f64,
    pub mixing: MixingMeasure,
    pub family: FamilyTag,
}

impl TryFrom<ModelSpec> for DeviatedMixture {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        DeviatedMixture::new(spec.h0, spec.lambda, spec.mixing, spec.family)
    }
}

impl From<&DeviatedMixture> for ModelSpec {
    fn from(m: &DeviatedMixture) -> Self {
        ModelSpec {
            h0: m.h0.clone(),
            lambda: m.lambda,
            mixing: m.g.clone(),
            family: m.family.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::std_normal_cdf;
    use crate::known_density::GaussianMixtureH0;
    use approx::assert_abs_diff_eq;

    fn std_normal_h0() -> KnownDensity {
        KnownDensity::GaussianMixture(
            GaussianMixtureH0::new(vec![1.0], vec![vec![0.0]], vec![DMatrix::identity(1, 1)]).unwrap(),
        )
    }

    fn model(lambda: f64, mu: f64) -> DeviatedMixture {
        DeviatedMixture::new(
            std_normal_h0(),
            lambda,
            MixingMeasure::dirac(Atom::location(vec![mu])),
            FamilyTag::isotropic_location(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn pdf_example() {
        let m = model(0.5, 2.0);
        assert_abs_diff_eq!(m.pdf(&[0.0]).unwrap(), 0.226_466_6, epsilon = 1e-7);
        assert_abs_diff_eq!(m.log_pdf(&[0.0]).unwrap(), 0.226_466_6f64.ln(), epsilon = 1e-6);
        assert_eq!(model(0.0, 2.0).pdf(&[0.3]).unwrap(), std_normal_h0().eval(&[0.3]).unwrap());
        assert!(m.pdf(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn log_likelihood_is_additive() {
        let m = model(0.5, 2.0);
        let one = m.log_likelihood(&Points::from_scalars(&[0.7])).unwrap();
        let two = m.log_likelihood(&Points::from_scalars(&[0.7, 0.7])).unwrap();
        assert_eq!(two, 2.0 * one);
        assert_abs_diff_eq!(
            m.log_likelihood(&Points::from_scalars(&[0.0])).unwrap(),
            -1.4852,
            epsilon = 1e-4
        );
    }

    #[test]
    fn lambda_zero_sampling_matches_h0_stream() {
        let m = model(0.0, 2.0);
        let a = m.sample(50, 9).unwrap();
        let b = std_normal_h0().sample(50, derive_seed(9, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn routing_fraction() {
        let m = model(0.5, 40.0);
        let n = 100_000;
        let s = m.sample(n, 3).unwrap();
        let frac = s.iter().filter(|x| x[0] > 20.0).count() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn tv_and_hellinger_closed_forms() {
        let p = model(1.0, 0.0);
        let q = model(1.0, 2.0);
        let tv = total_variation(&p, &q, DivergenceMethod::Quadrature1D).unwrap();
        assert_abs_diff_eq!(tv.value, 2.0 * std_normal_cdf(1.0) - 1.0, epsilon = 1e-9);
        let h = hellinger(&p, &q, DivergenceMethod::Quadrature1D).unwrap();
        assert_abs_diff_eq!(h.value, (1.0 - (-0.5f64).exp()).sqrt(), epsilon = 1e-9);
        let same = total_variation(&p, &p, DivergenceMethod::Quadrature1D).unwrap();
        assert!(same.value < 1e-10);
        let far = total_variation(&p, &model(1.0, 40.0), DivergenceMethod::Quadrature1D).unwrap();
        assert_abs_diff_eq!(far.value, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn monte_carlo_tv_within_three_standard_errors() {
        let p = model(1.0, 0.0);
        let q = model(1.0, 2.0);
        let est = total_variation(&p, &q, DivergenceMethod::ImportanceMc { samples: 100_000, seed: 5 }).unwrap();
        assert!((est.value - (2.0 * std_normal_cdf(1.0) - 1.0)).abs() < 3.0 * est.standard_error);
    }

    #[test]
    fn method_dimension_mismatch_is_rejected() {
        let p = model(1.0, 0.0);
        assert!(total_variation(&p, &p, DivergenceMethod::Quadrature2D).is_err());
    }

    #[test]
    fn family_mismatch_is_rejected() {
        let g = MixingMeasure::dirac(Atom::location_scale(vec![0.0], DMatrix::identity(1, 1)));
        assert!(DeviatedMixture::new(std_normal_h0(), 0.5, g, FamilyTag::isotropic_location(1, 1.0)).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let m = model(0.25, 1.5);
        let text = toml::to_string(&ModelSpec::from(&m)).unwrap();
        let back: DeviatedMixture = toml::from_str::<ModelSpec>(&text).unwrap().try_into().unwrap();
        assert_eq!(back.pdf(&[0.3]).unwrap(), m.pdf(&[0.3]).unwrap());
    }
}
