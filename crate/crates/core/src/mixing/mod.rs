//! Discrete mixing measures over Gaussian parameters and the optimal
//! transport distances between them.

pub mod transport;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{asymmetry, eigen_range, frobenius_distance, matrix_from_rows, matrix_to_rows};
use crate::known_density::check_probability_vector;

/// Atoms closer than this under [`rho`] are treated as coincident when a
/// measure is required to have distinct atoms.
pub const DISTINCT_ATOM_TOL: f64 = 1e-8;

/// A kernel parameter `theta = (mu, Sigma)`; `Sigma` is absent for
/// location-only families.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub location: Vec<f64>,
    pub scale: Option<DMatrix<f64>>,
}

impl Atom {
    pub fn location(location: Vec<f64>) -> Self {
        Atom {
            location,
            scale: None,
        }
    }

    pub fn location_scale(location: Vec<f64>, scale: DMatrix<f64>) -> Self {
        Atom {
            location,
            scale: Some(scale),
        }
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn has_scale(&self) -> bool {
        self.scale.is_some()
    }

    fn same_family(&self, other: &Atom) -> bool {
        self.dim() == other.dim() && self.has_scale() == other.has_scale()
    }

    /// Checks the atom against a parameter box.
    pub fn check_in(&self, bounds: &ParameterBox) -> Result<()> {
        if let Some(v) = self.location.iter().find(|v| v.abs() > bounds.mean_bound) {
            return Err(Error::input(format!(
                "location coordinate {v} outside [-{a}, {a}]",
                a = bounds.mean_bound
            )));
        }
        if let Some(s) = &self.scale {
            if asymmetry(s) > 1e-12 {
                return Err(Error::input("atom covariance is not symmetric"));
            }
            let (lo, hi) = eigen_range(s);
            let slack = 1e-9 * bounds.eig_max;
            if lo < bounds.eig_min - slack || hi > bounds.eig_max + slack {
                return Err(Error::input(format!(
                    "atom covariance eigenvalues [{lo}, {hi}] outside [{}, {}]",
                    bounds.eig_min, bounds.eig_max
                )));
            }
        }
        Ok(())
    }
}

/// The compact parameter set `[-a, a]^d x {Sigma : eig(Sigma) in [lo, hi]}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub mean_bound: f64,
    pub eig_min: f64,
    pub eig_max: f64,
}

impl ParameterBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_bound > 0.0 && self.eig_min > 0.0 && self.eig_min <= self.eig_max) {
            return Err(Error::input(format!(
                "parameter box needs a > 0 and 0 < eig_min <= eig_max, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for ParameterBox {
    fn default() -> Self {
        ParameterBox {
            mean_bound: 50.0,
            eig_min: 1e-3,
            eig_max: 1e3,
        }
    }
}

/// `rho(theta, theta') = |mu - mu'|_2 + |Sigma - Sigma'|_F`.
pub fn rho(a: &Atom, b: &Atom) -> Result<f64> {
    if !a.same_family(b) {
        return Err(Error::input("atoms belong to different families or dimensions"));
    }
    Ok(rho_unchecked(a, b))
}

pub(crate) fn rho_unchecked(a: &Atom, b: &Atom) -> f64 {
    let loc = a
        .location
        .iter()
        .zip(&b.location)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = match (&a.scale, &b.scale) {
        (Some(s), Some(t)) => frobenius_distance(s, t),
        _ => 0.0,
    };
    loc + scale
}

/// `G = sum_i p_i delta_{theta_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMeasure {
    atoms: Vec<Atom>,
    weights: Vec<f64>,
}

impl MixingMeasure {
    /// Validates nonnegative weights summing to one and a common atom family.
    pub fn new(atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::input("mixing measure needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(Error::input("atoms and weights differ in length"));
        }
        check_probability_vector(&weights)?;
        let first = &atoms[0];
        if atoms.iter().any(|a| !a.same_family(first)) {
            return Err(Error::input("mixing measure atoms must share family and dimension"));
        }
        if atoms.iter().any(|a| a.location.iter().any(|v| !v.is_finite())) {
            return Err(Error::input("atom locations must be finite"));
        }
        Ok(MixingMeasure { atoms, weights })
    }

    /// Renormalizes `weights` before validating; for measures built from
    /// floating-point arithmetic.
    pub fn normalized(atoms: Vec<Atom>, weights: Vec<f64>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::input("mixing measure has zero total mass"));
        }
        let mut w: Vec<f64> = weights.iter().map(|v| v / s).collect();
        // Push the residual rounding into the largest weight.
        let resid = 1.0 - w.iter().sum::<f64>();
        if let Some(imax) = (0..w.len()).max_by(|&i, &j| w[i].total_cmp(&w[j])) {
            w[imax] += resid;
        }
        MixingMeasure::new(atoms, w)
    }

    pub fn dirac(atom: Atom) -> Self {
        MixingMeasure {
            atoms: vec![atom],
            weights: vec![1.0],
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }

    pub fn has_scale(&self) -> bool {
        self.atoms[0].has_scale()
    }

    /// Smallest pairwise atom distance, `inf` for a single atom.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.atoms.len() {
            for j in 0..i {
                best = best.min(rho_unchecked(&self.atoms[i], &self.atoms[j]));
            }
        }
        best
    }

    fn same_family(&self, other: &MixingMeasure) -> bool {
        self.atoms[0].same_family(&other.atoms[0])
    }
}

/// Membership classes for fitted mixing measures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum ConstraintClass {
    /// Exactly `k` distinct atoms with positive weights.
    ExactFit { k: usize },
    /// At most `k` atoms, weights may vanish.
    OverFit { k: usize },
    ExactFitFloor { k: usize, c0: f64 },
    OverFitFloor { k: usize, c0: f64 },
}

impl ConstraintClass {
    pub fn components(&self) -> usize {
        match *self {
            ConstraintClass::ExactFit { k }
            | ConstraintClass::OverFit { k }
            | ConstraintClass::ExactFitFloor { k, .. }
            | ConstraintClass::OverFitFloor { k, .. } => k,
        }
    }

    pub fn weight_floor(&self) -> Option<f64> {
        match *self {
            ConstraintClass::ExactFitFloor { c0, .. } | ConstraintClass::OverFitFloor { c0, .. } => Some(c0),
            _ => None,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, ConstraintClass::ExactFit { .. } | ConstraintClass::ExactFitFloor { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.components();
        if k == 0 {
            return Err(Error::input("constraint class needs at least one component"));
        }
        if let Some(c0) = self.weight_floor() {
            if !(c0 > 0.0 && c0 < 1.0) {
                return Err(Error::input(format!("weight floor c0 must lie in (0, 1), got {c0}")));
            }
            if c0 * k as f64 > 1.0 + 1e-12 {
                return Err(Error::input(format!("{k} weights cannot all exceed c0 = {c0}")));
            }
        }
        Ok(())
    }

    /// Checks that `g` belongs to the class.
    pub fn check(&self, g: &MixingMeasure) -> Result<()> {
        self.validate()?;
        let k = self.components();
        if self.is_exact() {
            if g.len() != k {
                return Err(Error::input(format!("exact-fitted class needs {k} atoms, found {}", g.len())));
            }
            if g.weights.iter().any(|&w| w <= 0.0) {
                return Err(Error::input("exact-fitted class needs positive weights"));
            }
            if g.min_separation() <= DISTINCT_ATOM_TOL {
                return Err(Error::input("exact-fitted class needs pairwise distinct atoms"));
            }
        } else if g.len() > k {
            return Err(Error::input(format!("over-fitted class allows at most {k} atoms, found {}", g.len())));
        }
        if let Some(c0) = self.weight_floor() {
            if let Some(w) = g.weights.iter().find(|&&w| w < c0 * (1.0 - 1e-12)) {
                return Err(Error::input(format!("weight {w} below floor {c0}")));
            }
        }
        Ok(())
    }
}

/// Euclidean projection-style floor: clip to `>= c0`, rescale the free
/// weights to fill the remaining mass, repeat until no free weight falls
/// below the floor.
pub fn project_weight_floor(weights: &[f64], c0: f64) -> Result<Vec<f64>> {
    let k = weights.len();
    if c0 * k as f64 > 1.0 + 1e-12 {
        return Err(Error::input(format!("{k} weights cannot all exceed c0 = {c0}")));
    }
    let mut clamped = vec![false; k];
    let mut out = weights.to_vec();
    loop {
        let n_clamped = clamped.iter().filter(|&&c| c).count();
        let free_mass: f64 = weights.iter().zip(&clamped).filter(|(_, &c)| !c).map(|(w, _)| *w).sum();
        let target = 1.0 - c0 * n_clamped as f64;
        let mut changed = false;
        for i in 0..k {
            out[i] = if clamped[i] {
                c0
            } else if free_mass > 0.0 {
                weights[i] * target / free_mass
            } else {
                target / (k - n_clamped) as f64
            };
        }
        for i in 0..k {
            if !clamped[i] && out[i] < c0 {
                clamped[i] = true;
                changed = true;
            }
        }
        if !changed {
            return Ok(out);
        }
    }
}

fn cost_matrix(g: &MixingMeasure, h: &MixingMeasure, r: u32) -> Vec<f64> {
    let mut c = Vec::with_capacity(g.len() * h.len());
    for a in &g.atoms {
        for b in &h.atoms {
            c.push(rho_unchecked(a, b).powi(r as i32));
        }
    }
    c
}

/// `W_r(G, G')^r`: the optimal transport cost under `rho^r`.
pub fn wasserstein_power(g: &MixingMeasure, h: &MixingMeasure, r: u32) -> Result<f64> {
    if r == 0 {
        return Err(Error::input("wasserstein order must be >= 1"));
    }
    if !g.same_family(h) {
        return Err(Error::input("measures belong to different families or dimensions"));
    }
    let plan = transport::solve(&g.weights, &h.weights, &cost_matrix(g, h, r))?;
    Ok(plan.cost)
}

/// `W_r(G, G')`.
pub fn wasserstein(g: &MixingMeasure, h: &MixingMeasure, r: u32) -> Result<f64> {
    Ok(wasserstein_power(g, h, r)?.powf(1.0 / r as f64))
}

/// `|lambda - lambda*| + (lambda + lambda*) W_r(G, G*)^r`.
pub fn w_bar(lambda: f64, g: &MixingMeasure, lambda_star: f64, g_star: &MixingMeasure, r: u32) -> Result<f64> {
    for l in [lambda, lambda_star] {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::input(format!("mixing proportion {l} outside [0, 1]")));
        }
    }
    let dist = if g == g_star { 0.0 } else { wasserstein_power(g, g_star, r)? };
    Ok((lambda - lambda_star).abs() + (lambda + lambda_star) * dist)
}

/// `(1 - alpha) G0 + alpha G`, merging atoms within `merge_tol` and dropping
/// zero-weight atoms.
pub fn convex_combine(g0: &MixingMeasure, g: &MixingMeasure, alpha: f64, merge_tol: f64) -> Result<MixingMeasure> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("combination weight {alpha} outside [0, 1]")));
    }
    if !g0.same_family(g) {
        return Err(Error::input("measures belong to different families or dimensions"));
    }
    let mut atoms: Vec<Atom> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let incoming = g0
        .atoms
        .iter()
        .zip(g0.weights.iter().map(|w| (1.0 - alpha) * w))
        .chain(g.atoms.iter().zip(g.weights.iter().map(|w| alpha * w)));
    for (atom, w) in incoming {
        if w == 0.0 {
            continue;
        }
        match atoms.iter().position(|a| rho_unchecked(a, atom) <= merge_tol) {
            Some(i) => weights[i] += w,
            None => {
                atoms.push(atom.clone());
                weights.push(w);
            }
        }
    }
    MixingMeasure::normalized(atoms, weights)
}

/// Serialized form of a [`MixingMeasure`]: ordered atoms with weights and,
/// for location-scale families, one covariance (as rows) per atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub weights: Vec<f64>,
    pub locations: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariances: Option<Vec<Vec<Vec<f64>>>>,
}

impl TryFrom<MeasureSpec> for MixingMeasure {
    type Error = Error;

    fn try_from(spec: MeasureSpec) -> Result<Self> {
        let atoms = match spec.covariances {
            None => spec.locations.into_iter().map(Atom::location).collect(),
            Some(covs) => {
                if covs.len() != spec.locations.len() {
                    return Err(Error::input("one covariance per location required"));
                }
                spec.locations
                    .into_iter()
                    .zip(covs)
                    .map(|(l, c)| Ok(Atom::location_scale(l, matrix_from_rows(&c)?)))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        MixingMeasure::new(atoms, spec.weights)
    }
}

impl From<&MixingMeasure> for MeasureSpec {
    fn from(g: &MixingMeasure) -> Self {
        MeasureSpec {
            weights: g.weights.clone(),
            locations: g.atoms.iter().map(|a| a.location.clone()).collect(),
            covariances: if g.has_scale() {
                Some(g.atoms.iter().map(|a| matrix_to_rows(a.scale.as_ref().unwrap())).collect())
            } else {
                None
            },
        }
    }
}

impl Serialize for MixingMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureSpec::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixingMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = MeasureSpec::deserialize(d)?;
        MixingMeasure::try_from(spec).map_err(serde::de::Error::custom)
    }
}
