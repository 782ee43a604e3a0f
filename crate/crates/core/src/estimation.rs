//! Maximum-likelihood fitting of `(lambda, G)` by EM with `h0` held fixed.
//!
//! Component 0 of the `K + 1`-component model is `h0` with weight
//! `1 - lambda`; the remaining `K` are Gaussian kernels with weights
//! `lambda p_j`. Every M-step maximizes the expected complete-data
//! log-likelihood over the constrained parameter set (or, for box-clamped
//! means, at least does not decrease it), so the log-likelihood trace is
//! nondecreasing.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{clamp_eigenvalues, Gaussian};
use crate::known_density::{pick_index, KdeH0, Kernel, KnownDensity};
use crate::mixing::{project_weight_floor, Atom, ConstraintClass, MixingMeasure, ParameterBox};
use crate::model::FamilyTag;
use crate::points::Points;
use crate::seed::{derive_seed, rng_from_seed};

/// Weight floor applied to exact-fitted classes without an explicit `c0`,
/// keeping every atom present with positive weight.
const EXACT_FIT_MIN_WEIGHT: f64 = 1e-10;

/// Points used as centers of the pilot density estimate in the
/// k-means++ initializer.
const PILOT_CENTERS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitStrategy {
    KmeansPlusPlus,
    RandomFromData,
    /// Start from a given `(lambda, G)`; runs once regardless of `restarts`.
    Provided { lambda: f64, mixing: MixingMeasure },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    pub constraint: ConstraintClass,
    pub family: FamilyTag,
    #[serde(default = "defaults::max_iterations")]
    pub max_iterations: usize,
    /// Relative log-likelihood change that counts as converged.
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
    #[serde(default = "defaults::restarts")]
    pub restarts: usize,
    #[serde(default = "defaults::lambda_floor")]
    pub lambda_floor: f64,
    #[serde(default)]
    pub bounds: ParameterBox,
    #[serde(default = "defaults::init")]
    pub init: InitStrategy,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    use super::InitStrategy;

    pub fn max_iterations() -> usize {
        500
    }
    pub fn tolerance() -> f64 {
        1e-8
    }
    pub fn restarts() -> usize {
        8
    }
    pub fn lambda_floor() -> f64 {
        1e-8
    }
    pub fn init() -> InitStrategy {
        InitStrategy::KmeansPlusPlus
    }
}

impl EmConfig {
    pub fn new(constraint: ConstraintClass, family: FamilyTag) -> Self {
        EmConfig {
            constraint,
            family,
            max_iterations: defaults::max_iterations(),
            tolerance: defaults::tolerance(),
            restarts: defaults::restarts(),
            lambda_floor: defaults::lambda_floor(),
            bounds: ParameterBox::default(),
            init: defaults::init(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.constraint.validate()?;
        self.bounds.validate()?;
        if self.max_iterations == 0 || self.restarts == 0 {
            return Err(Error::input("max_iterations and restarts must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::input("tolerance must be positive"));
        }
        // Zero is allowed: it lets lambda sit exactly at 0 or 1.
        if !(0.0..0.5).contains(&self.lambda_floor) {
            return Err(Error::input("lambda_floor must lie in [0, 0.5)"));
        }
        if let FamilyTag::LocationGaussian(cov) = &self.family {
            let (lo, hi) = crate::gaussian::eigen_range(cov);
            if lo <= 0.0 || !hi.is_finite() {
                return Err(Error::input("family covariance must be positive definite"));
            }
        }
        Ok(())
    }

    fn weight_floor(&self) -> f64 {
        self.constraint
            .weight_floor()
            .unwrap_or(if self.constraint.is_exact() { EXACT_FIT_MIN_WEIGHT } else { 0.0 })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub lambda_hat: f64,
    pub g_hat: MixingMeasure,
    /// Log-likelihood after each completed EM step, starting at the
    /// initialization.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    pub restart_index_of_best: usize,
}

impl FitResult {
    pub fn log_likelihood(&self) -> f64 {
        *self.loglik_trace.last().expect("trace has at least one entry")
    }
}

/// Current parameters of one EM run.
#[derive(Clone, Debug)]
struct State {
    lambda: f64,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Per-atom covariances; all equal to the family covariance for the
    /// location family.
    covs: Vec<DMatrix<f64>>,
}

impl State {
    fn kernels(&self) -> Result<Vec<Gaussian>> {
        self.means
            .iter()
            .zip(&self.covs)
            .map(|(m, c)| Gaussian::new(m.clone(), c.clone()).map_err(|e| Error::numerical(e.to_string())))
            .collect()
    }

    fn to_measure(&self, family: &FamilyTag) -> Result<MixingMeasure> {
        let atoms = self
            .means
            .iter()
            .zip(&self.covs)
            .map(|(m, c)| {
                if family.has_scale() {
                    Atom::location_scale(m.clone(), c.clone())
                } else {
                    Atom::location(m.clone())
                }
            })
            .collect();
        MixingMeasure::normalized(atoms, self.weights.clone())
    }

    /// Moves the state into the feasible set of `config`.
    fn project(&mut self, config: &EmConfig) -> Result<()> {
        let b = &config.bounds;
        self.lambda = self.lambda.clamp(config.lambda_floor, 1.0 - config.lambda_floor);
        let floor = config.weight_floor();
        if floor > 0.0 {
            self.weights = project_weight_floor(&self.weights, floor)?;
        }
        for m in &mut self.means {
            m.iter_mut().for_each(|v| *v = v.clamp(-b.mean_bound, b.mean_bound));
        }
        if config.family.has_scale() {
            for c in &mut self.covs {
                *c = clamp_eigenvalues(c, b.eig_min, b.eig_max);
            }
        }
        Ok(())
    }
}

fn validate_data(data: &Points, h0: &KnownDensity) -> Result<()> {
    if data.is_empty() {
        return Err(Error::input("cannot fit an empty data set"));
    }
    if data.dim() != h0.dim() {
        return Err(Error::input(format!(
            "data has dimension {}, h0 has dimension {}",
            data.dim(),
            h0.dim()
        )));
    }
    if data.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::input("data contains non-finite values"));
    }
    Ok(())
}

fn distinct_count(data: &Points, limit: usize) -> usize {
    let mut rows: Vec<&[f64]> = data.iter().collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut count = 0;
    for (i, r) in rows.iter().enumerate() {
        if i == 0 || rows[i - 1] != *r {
            count += 1;
            if count >= limit {
                return count;
            }
        }
    }
    count
}

/// Fits `(lambda, G)` to `data` with `h0` fixed.
pub fn em_fit(data: &Points, h0: &KnownDensity, config: &EmConfig) -> Result<FitResult> {
    validate_data(data, h0)?;
    config.validate()?;
    let k = config.constraint.components();
    if let FamilyTag::LocationGaussian(cov) = &config.family {
        if cov.nrows() != data.dim() {
            return Err(Error::input("family covariance dimension does not match the data"));
        }
    }

    let log_h0: Vec<f64> = data.iter().map(|x| h0.log_pdf_unchecked(x)).collect();

    let starts: Vec<State> = match &config.init {
        InitStrategy::Provided { lambda, mixing } => vec![provided_state(*lambda, mixing, data.dim(), config)?],
        InitStrategy::KmeansPlusPlus => {
            if distinct_count(data, k) < k {
                return Err(Error::input(format!("K = {k} exceeds the number of distinct data points")));
            }
            let resid = residual_weights(data, &log_h0, derive_seed(config.seed, &[u64::MAX]))?;
            (0..config.restarts)
                .map(|r| kmeanspp_state(data, k, &resid, &config.family, config, derive_seed(config.seed, &[r as u64])))
                .collect::<Result<_>>()?
        }
        InitStrategy::RandomFromData => {
            if distinct_count(data, k) < k {
                return Err(Error::input(format!("K = {k} exceeds the number of distinct data points")));
            }
            (0..config.restarts)
                .map(|r| random_state(data, k, config, derive_seed(config.seed, &[r as u64])))
                .collect::<Result<_>>()?
        }
    };

    let runs: Vec<Result<FitResult>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(r, s)| run_em(data, &log_h0, s, config).map(|mut f| {
            f.restart_index_of_best = r;
            f
        }))
        .collect();

    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(f) => {
                if config.constraint.check(&f.g_hat).is_err() {
                    last_err = Some(Error::numerical("fit left its constraint class"));
                    continue;
                }
                // Strict comparison keeps the lowest restart index on ties.
                if best.as_ref().is_none_or(|b| f.log_likelihood() > b.log_likelihood()) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::numerical("every EM restart failed")))
}

fn provided_state(lambda: f64, g: &MixingMeasure, dim: usize, config: &EmConfig) -> Result<State> {
    if g.dim() != dim {
        return Err(Error::input("provided mixing measure has the wrong dimension"));
    }
    if g.has_scale() != config.family.has_scale() {
        return Err(Error::input("provided mixing measure does not match the family"));
    }
    if g.len() > config.constraint.components() {
        return Err(Error::input("provided mixing measure has more atoms than K"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::input("provided lambda outside [0, 1]"));
    }
    let covs = g
        .atoms()
        .iter()
        .map(|a| match (&config.family, &a.scale) {
            (FamilyTag::LocationGaussian(c), _) => c.clone(),
            (FamilyTag::LocationScaleGaussian, Some(s)) => s.clone(),
            (FamilyTag::LocationScaleGaussian, None) => unreachable!("checked above"),
        })
        .collect();
    let mut s = State {
        lambda,
        weights: g.weights().to_vec(),
        means: g.atoms().iter().map(|a| a.location.clone()).collect(),
        covs,
    };
    s.project(config)?;
    Ok(s)
}

/// One EM run from `state` until the relative log-likelihood change drops
/// below the tolerance or the iteration budget is spent.
fn run_em(data: &Points, log_h0: &[f64], mut state: State, config: &EmConfig) -> Result<FitResult> {
    let n = data.len();
    let d = data.dim();
    let k = state.means.len();
    let mut resp = vec![0.0; n * (k + 1)];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut comp = vec![0.0; k + 1];

    loop {
        // E-step, which also yields the log-likelihood of the current state.
        let kernels = state.kernels()?;
        let l0 = (1.0 - state.lambda).ln();
        let ll: Vec<f64> = std::iter::once(l0)
            .chain(state.weights.iter().map(|w| state.lambda.ln() + w.ln()))
            .collect();
        let mut total = 0.0;
        for (i, x) in data.iter().enumerate() {
            comp[0] = ll[0] + log_h0[i];
            for j in 0..k {
                comp[j + 1] = ll[j + 1] + kernels[j].log_pdf(x);
            }
            let m = comp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return Err(Error::numerical(format!("likelihood vanishes at data point {i}")));
            }
            let mut s = 0.0;
            let row = &mut resp[i * (k + 1)..(i + 1) * (k + 1)];
            for (r, c) in row.iter_mut().zip(&comp) {
                *r = (c - m).exp();
                s += *r;
            }
            row.iter_mut().for_each(|r| *r /= s);
            total += m + s.ln();
        }
        if !total.is_finite() {
            return Err(Error::numerical("non-finite log-likelihood"));
        }
        if let Some(&prev) = trace.last() {
            trace.push(total);
            if (total - prev).abs() <= config.tolerance * prev.abs() {
                converged = true;
                break;
            }
        } else {
            trace.push(total);
        }
        if iterations >= config.max_iterations {
            break;
        }

        // M-step.
        let mut nk = vec![0.0; k + 1];
        for row in resp.chunks_exact(k + 1) {
            for (a, r) in nk.iter_mut().zip(row) {
                *a += r;
            }
        }
        state.lambda = (1.0 - nk[0] / n as f64).clamp(config.lambda_floor, 1.0 - config.lambda_floor);
        let dev_mass: f64 = nk[1..].iter().sum();
        if dev_mass > 0.0 {
            state.weights = nk[1..].iter().map(|v| v / dev_mass).collect();
        }
        let floor = config.weight_floor();
        if floor > 0.0 {
            state.weights = project_weight_floor(&state.weights, floor)?;
        }

        for j in 0..k {
            let nj = nk[j + 1];
            if !(nj > 1e-300) {
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, x) in data.iter().enumerate() {
                let r = resp[i * (k + 1) + j + 1];
                for (m, xv) in mean.iter_mut().zip(x) {
                    *m += r * xv;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nj);
            let a = config.bounds.mean_bound;
            if mean.iter().any(|v| v.abs() > a) {
                // Box clamp is not the exact constrained maximizer under a
                // non-diagonal covariance; keep it only if Q improves.
                let clamped: Vec<f64> = mean.iter().map(|v| v.clamp(-a, a)).collect();
                let center = Gaussian::new(mean.clone(), state.covs[j].clone())
                    .map_err(|e| Error::numerical(e.to_string()))?;
                mean = if center.mahalanobis_sq(&clamped) <= center.mahalanobis_sq(&state.means[j]) {
                    clamped
                } else {
                    state.means[j].clone()
                };
            }
            if config.family.has_scale() {
                let mut s = DMatrix::zeros(d, d);
                let mut dx = vec![0.0; d];
                for (i, x) in data.iter().enumerate() {
                    let r = resp[i * (k + 1) + j + 1];
                    if r == 0.0 {
                        continue;
                    }
                    for (t, v) in dx.iter_mut().enumerate() {
                        *v = x[t] - mean[t];
                    }
                    for p in 0..d {
                        for q in 0..=p {
                            s[(p, q)] += r * dx[p] * dx[q];
                        }
                    }
                }
                for p in 0..d {
                    for q in 0..p {
                        s[(q, p)] = s[(p, q)];
                    }
                }
                s /= nj;
                state.covs[j] = clamp_eigenvalues(&s, config.bounds.eig_min, config.bounds.eig_max);
            }
            state.means[j] = mean;
        }
        iterations += 1;
    }

    Ok(FitResult {
        lambda_hat: state.lambda,
        g_hat: state.to_measure(&config.family)?,
        loglik_trace: trace,
        converged,
        iterations_used: iterations,
        restart_index_of_best: 0,
    })
}

/// `max(0, 1 - h0(x) / p_hat(x))` for every point, with `p_hat` a Gaussian
/// KDE on a subsample under Scott's bandwidth.
fn residual_weights(data: &Points, log_h0: &[f64], seed: u64) -> Result<Vec<f64>> {
    let n = data.len();
    let d = data.dim();
    let mut rng = rng_from_seed(seed);
    let centers = if n <= PILOT_CENTERS {
        data.clone()
    } else {
        let idx = rand::seq::index::sample(&mut rng, n, PILOT_CENTERS);
        let mut c = Points::with_capacity(d, PILOT_CENTERS);
        let mut sorted: Vec<usize> = idx.into_iter().collect();
        sorted.sort_unstable();
        for i in sorted {
            c.push(data.row(i));
        }
        c
    };
    let mean = data.mean();
    let var: f64 = data
        .iter()
        .map(|x| x.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / (n as f64 * d as f64);
    let sd = var.sqrt();
    if !sd.is_finite() {
        return Err(Error::numerical("data spread overflows"));
    }
    if sd == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let bw = sd * (centers.len() as f64).powf(-1.0 / (d as f64 + 4.0));
    let pilot = KnownDensity::Kde(KdeH0::new(centers, bw, Kernel::Gaussian)?);
    Ok(data
        .iter()
        .zip(log_h0)
        .map(|(x, lh)| (1.0 - (lh - pilot.log_pdf_unchecked(x)).exp()).max(0.0))
        .collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted k-means++ seeding: the first center is drawn proportional to
/// `w`, later ones proportional to `w * D^2`.
fn kmeanspp_centers(data: &Points, k: usize, w: &[f64], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut d2 = vec![f64::INFINITY; n];
    while centers.len() < k {
        let probs: Vec<f64> = if centers.is_empty() {
            w.to_vec()
        } else {
            w.iter().zip(&d2).map(|(a, b)| a * b).collect()
        };
        let total: f64 = probs.iter().sum();
        let i = if total > 0.0 {
            pick_index(&probs, rng)
        } else {
            // Every weighted point already is a center; fall back to the
            // farthest unweighted point.
            (0..n).max_by(|&a, &b| d2[a].total_cmp(&d2[b])).unwrap_or(0)
        };
        let c = data.row(i).to_vec();
        for (j, x) in data.iter().enumerate() {
            d2[j] = d2[j].min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Initial `(lambda0, G0)` from residual-weighted k-means++.
///
/// Points are weighted by how much of the data density `h0` fails to
/// explain; the seeding runs on the weighted cloud, `lambda0` is the mean
/// weight clamped to `[0.1, 0.9]`, and each atom gets a spherical covariance
/// from the weighted within-cluster variance.
pub fn init_kmeanspp(data: &Points, k: usize, h0: &KnownDensity, family: &FamilyTag, seed: u64) -> Result<(f64, MixingMeasure)> {
    validate_data(data, h0)?;
    if k == 0 {
        return Err(Error::input("K must be at least 1"));
    }
    if distinct_count(data, k) < k {
        return Err(Error::input(format!("K = {k} exceeds the number of distinct data points")));
    }
    let log_h0: Vec<f64> = data.iter().map(|x| h0.log_pdf_unchecked(x)).collect();
    let resid = residual_weights(data, &log_h0, derive_seed(seed, &[u64::MAX]))?;
    let mut config = EmConfig::new(ConstraintClass::OverFit { k }, family.clone());
    config.lambda_floor = 0.0;
    let s = kmeanspp_state(data, k, &resid, family, &config, seed)?;
    Ok((s.lambda, s.to_measure(family)?))
}

fn kmeanspp_state(data: &Points, k: usize, resid: &[f64], family: &FamilyTag, config: &EmConfig, seed: u64) -> Result<State> {
    let n = data.len();
    let d = data.dim();
    let mut rng = rng_from_seed(seed);
    let mean_w = resid.iter().sum::<f64>() / n as f64;
    let (w, lambda): (Vec<f64>, f64) = if resid.iter().any(|&v| v > 0.0) {
        (resid.to_vec(), mean_w.clamp(0.1, 0.9))
    } else {
        (vec![1.0; n], 0.5)
    };
    let centers = kmeanspp_centers(data, k, &w, &mut rng);

    let mut mass = vec![0.0; k];
    let mut scatter = vec![0.0; k];
    for (i, x) in data.iter().enumerate() {
        let (j, dist) = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, sq_dist(x, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("k >= 1");
        mass[j] += w[i];
        scatter[j] += w[i] * dist;
    }
    let total_mass: f64 = mass.iter().sum();
    let overall = scatter.iter().sum::<f64>() / (total_mass * d as f64);
    let weights: Vec<f64> = if total_mass > 0.0 {
        let raw: Vec<f64> = mass.iter().map(|m| (m / total_mass).max(1e-3)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / k as f64; k]
    };
    let covs = (0..k)
        .map(|j| match family {
            FamilyTag::LocationGaussian(c) => c.clone(),
            FamilyTag::LocationScaleGaussian => {
                let v = if mass[j] > 0.0 && scatter[j] > 0.0 {
                    scatter[j] / (mass[j] * d as f64)
                } else if overall > 0.0 {
                    overall
                } else {
                    1.0
                };
                DMatrix::identity(d, d) * v
            }
        })
        .collect();
    let mut s = State {
        lambda,
        weights,
        means: centers,
        covs,
    };
    s.project(config)?;
    Ok(s)
}

fn random_state(data: &Points, k: usize, config: &EmConfig, seed: u64) -> Result<State> {
    let n = data.len();
    let d = data.dim();
    let mut rng = rng_from_seed(seed);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    while means.len() < k {
        let c = data.row(rng.random_range(0..n)).to_vec();
        if !means.contains(&c) {
            means.push(c);
        }
    }
    let mean = data.mean();
    let var = data.iter().map(|x| sq_dist(x, &mean)).sum::<f64>() / (n as f64 * d as f64);
    let var = if var > 0.0 { var } else { 1.0 };
    let covs = (0..k)
        .map(|_| match &config.family {
            FamilyTag::LocationGaussian(c) => c.clone(),
            FamilyTag::LocationScaleGaussian => DMatrix::identity(d, d) * var,
        })
        .collect();
    let mut s = State {
        lambda: 0.5,
        weights: vec![1.0 / k as f64; k],
        means,
        covs,
    };
    s.project(config)?;
    Ok(s)
}
