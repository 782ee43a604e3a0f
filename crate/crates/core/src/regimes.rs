//! Overlap between the deviated atoms and a mixture-type `h0`: regime
//! classification, the non-identifiability witnesses `G_bar*(lambda)` and
//! `G_tilde*(lambda)`, the weak-identifiability order `r_bar(k)` with its
//! polynomial system, and a numerical distinguishability probe.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::frobenius_distance;
use crate::known_density::KnownDensity;
use crate::mixing::{convex_combine, rho_unchecked, Atom, MixingMeasure};
use crate::model::{FamilyTag, QuadratureRule};
use crate::quadrature::{Envelope, Resolution};
use crate::seed::{derive_seed, rng_from_seed};

pub const DEFAULT_ATOM_MATCH_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `lambda* = 0`: no deviation.
    ALambdaZero,
    /// Some but not all atoms of `h0` reappear in `G*`.
    BPartialOverlap,
    /// Every atom of `h0` reappears in `G*`.
    CFullOverlap,
    Distinguishable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// Indices of `G*` atoms that coincide with an atom of `h0`.
    pub a_bar: Vec<usize>,
    pub k_bar: usize,
    pub regime: Regime,
    pub atom_match_tol: f64,
}

/// The atoms of a Gaussian-mixture `h0` that belong to `family`, as a
/// mixing measure `G0`; `None` when `h0` is not a Gaussian mixture or shares
/// no atom with the family.
pub fn h0_mixing_measure(h0: &KnownDensity, family: &FamilyTag) -> Option<MixingMeasure> {
    let gm = h0.as_gaussian_mixture()?;
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (c, &w) in gm.components().iter().zip(gm.weights()) {
        let atom = match family {
            FamilyTag::LocationScaleGaussian => Atom::location_scale(c.mean().to_vec(), c.cov().clone()),
            FamilyTag::LocationGaussian(cov) => {
                if cov.nrows() != c.dim() || frobenius_distance(cov, c.cov()) > 1e-12 {
                    continue;
                }
                Atom::location(c.mean().to_vec())
            }
        };
        atoms.push(atom);
        weights.push(w);
    }
    if atoms.is_empty() {
        return None;
    }
    // Renormalized when some atoms of h0 fall outside the family.
    MixingMeasure::normalized(atoms, weights).ok()
}

/// Classifies `(h0, lambda*, G*)` by the overlap of `G*` with the atoms of
/// `h0`. Non-mixture `h0` and mixtures sharing no atom with the family are
/// distinguishable.
pub fn classify_regime(h0: &KnownDensity, lambda_star: f64, g_star: &MixingMeasure, family: &FamilyTag, atom_match_tol: f64) -> Result<RegimeReport> {
    if !(0.0..=1.0).contains(&lambda_star) {
        return Err(Error::input("lambda* outside [0, 1]"));
    }
    if !(atom_match_tol >= 0.0) {
        return Err(Error::input("atom match tolerance must be nonnegative"));
    }
    if g_star.has_scale() != family.has_scale() || g_star.dim() != h0.dim() {
        return Err(Error::input("G* does not match the family or the dimension of h0"));
    }
    let report = |a_bar: Vec<usize>, regime| RegimeReport {
        k_bar: a_bar.len(),
        a_bar,
        regime,
        atom_match_tol,
    };
    if lambda_star == 0.0 {
        return Ok(report(Vec::new(), Regime::ALambdaZero));
    }
    let Some(g0) = h0_mixing_measure(h0, family) else {
        return Ok(report(Vec::new(), Regime::Distinguishable));
    };
    let k0 = h0.as_gaussian_mixture().map(|g| g.components().len()).unwrap_or(0);
    let matches = match_atoms(&g0, g_star, atom_match_tol)?;
    let a_bar: Vec<usize> = matches.iter().enumerate().filter_map(|(i, m)| m.map(|_| i)).collect();
    let regime = if a_bar.len() == k0 { Regime::CFullOverlap } else { Regime::BPartialOverlap };
    Ok(report(a_bar, regime))
}

/// For each atom of `g_star`, the index of the `g0` atom within `tol`.
fn match_atoms(g0: &MixingMeasure, g_star: &MixingMeasure, tol: f64) -> Result<Vec<Option<usize>>> {
    g_star
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let hits: Vec<usize> = g0
                .atoms()
                .iter()
                .enumerate()
                .filter(|(_, b)| rho_unchecked(a, b) <= tol)
                .map(|(j, _)| j)
                .collect();
            match hits.len() {
                0 => Ok(None),
                1 => Ok(Some(hits[0])),
                _ => Err(Error::input(format!(
                    "atom {i} of G* matches several atoms of h0; use a smaller tolerance than {tol}"
                ))),
            }
        })
        .collect()
}

/// `G_bar*(lambda) = (1 - lambda*/lambda) G0 + (lambda*/lambda) G*`, for
/// which `p_{lambda, G_bar*(lambda)} = p_{lambda*, G*}` when `h0 = f(.; G0)`.
pub fn overline_g_star(lambda: f64, lambda_star: f64, g0: &MixingMeasure, g_star: &MixingMeasure, merge_tol: f64) -> Result<MixingMeasure> {
    if !(lambda_star > 0.0 && lambda_star <= 1.0) {
        return Err(Error::input("lambda* must lie in (0, 1]"));
    }
    if !(lambda >= lambda_star && lambda <= 1.0) {
        return Err(Error::input(format!("lambda = {lambda} must lie in [lambda*, 1] = [{lambda_star}, 1]")));
    }
    if lambda == lambda_star {
        return Ok(g_star.clone());
    }
    convex_combine(g0, g_star, lambda_star / lambda, merge_tol)
}

/// `G0` and `G*` in full overlap, with the weights of `G*` aligned to the
/// atoms of `G0`.
#[derive(Clone, Debug)]
pub struct RegimeCAlignment {
    g0: MixingMeasure,
    /// `p_i^*` for the atom of `G*` at `theta_i^0` (zero if absent).
    p_star_aligned: Vec<f64>,
    /// Atoms of `G*` that are not atoms of `G0`, with their weights.
    extra_atoms: Vec<Atom>,
    extra_weights: Vec<f64>,
}

impl RegimeCAlignment {
    /// Fails unless every atom of `G0` is matched by an atom of `G*`.
    pub fn new(g0: &MixingMeasure, g_star: &MixingMeasure, atom_match_tol: f64) -> Result<Self> {
        if g0.has_scale() != g_star.has_scale() || g0.dim() != g_star.dim() {
            return Err(Error::input("G0 and G* belong to different families"));
        }
        let matches = match_atoms(g0, g_star, atom_match_tol)?;
        let mut p_star_aligned = vec![0.0; g0.len()];
        let mut hit = vec![false; g0.len()];
        let mut extra_atoms = Vec::new();
        let mut extra_weights = Vec::new();
        for (i, m) in matches.iter().enumerate() {
            match m {
                Some(j) => {
                    if hit[*j] {
                        return Err(Error::input("two atoms of G* match the same atom of G0"));
                    }
                    hit[*j] = true;
                    p_star_aligned[*j] = g_star.weights()[i];
                }
                None => {
                    extra_atoms.push(g_star.atoms()[i].clone());
                    extra_weights.push(g_star.weights()[i]);
                }
            }
        }
        if hit.iter().any(|h| !h) {
            return Err(Error::input("regime C bookkeeping needs every atom of h0 to appear in G*"));
        }
        Ok(RegimeCAlignment {
            g0: g0.clone(),
            p_star_aligned,
            extra_atoms,
            extra_weights,
        })
    }

    /// `lambda` is in `B` iff `(lambda* - lambda) p_i^0 <= lambda* p_i^*` for
    /// every `i`; evaluated without tolerance.
    pub fn set_b_contains(&self, lambda: f64, lambda_star: f64) -> bool {
        self.g0
            .weights()
            .iter()
            .zip(&self.p_star_aligned)
            .all(|(p0, ps)| (lambda_star - lambda) * p0 <= lambda_star * ps)
    }

    /// Zero-based indices `i` with `(lambda* - lambda) p_i^0 > lambda* p_i^*`.
    pub fn i_lambda(&self, lambda: f64, lambda_star: f64) -> Vec<usize> {
        self.g0
            .weights()
            .iter()
            .zip(&self.p_star_aligned)
            .enumerate()
            .filter(|(_, (p0, ps))| (lambda_star - lambda) * *p0 > lambda_star * *ps)
            .map(|(i, _)| i)
            .collect()
    }

    /// True iff `|I| = 1` or the ratios `p_i^0 / p_i^*` agree across `I`
    /// within relative tolerance `tol`.
    pub fn ratio_independent(&self, index_set: &[usize], tol: f64) -> Result<bool> {
        if index_set.is_empty() {
            return Err(Error::input("ratio independence needs a nonempty index set"));
        }
        if let Some(&i) = index_set.iter().find(|&&i| i >= self.g0.len()) {
            return Err(Error::input(format!("index {i} out of range")));
        }
        if index_set.len() == 1 {
            return Ok(true);
        }
        let zero = index_set.iter().filter(|&&i| self.p_star_aligned[i] == 0.0).count();
        if zero > 0 {
            return Ok(zero == index_set.len());
        }
        let ratios: Vec<f64> = index_set
            .iter()
            .map(|&i| self.g0.weights()[i] / self.p_star_aligned[i])
            .collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(hi - lo <= tol * hi)
    }

    /// `G_tilde*(lambda)` and its normalizer `S(I(lambda))`.
    pub fn tilde_g_star(&self, lambda: f64, lambda_star: f64) -> Result<(MixingMeasure, f64)> {
        let excluded = self.i_lambda(lambda, lambda_star);
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (i, (atom, p0)) in self.g0.atoms().iter().zip(self.g0.weights()).enumerate() {
            if excluded.contains(&i) {
                continue;
            }
            let w = self.p_star_aligned[i] * lambda_star + (lambda - lambda_star) * p0;
            if w > 0.0 {
                atoms.push(atom.clone());
                weights.push(w);
            }
        }
        for (a, w) in self.extra_atoms.iter().zip(&self.extra_weights) {
            if *w > 0.0 {
                atoms.push(a.clone());
                weights.push(lambda_star * w);
            }
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::numerical(format!("degenerate normalizer S = {s}")));
        }
        let g = MixingMeasure::normalized(atoms, weights)?;
        Ok((g, s))
    }

    pub fn g0(&self) -> &MixingMeasure {
        &self.g0
    }

    pub fn p_star_aligned(&self) -> &[f64] {
        &self.p_star_aligned
    }
}

/// The order `r_bar(k)`: known exactly for `k <= 2`, bounded below after.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RBar {
    Exact(u32),
    LowerBound(u32),
}

impl RBar {
    /// The value itself, or the bound when only a bound is known.
    pub fn value(self) -> u32 {
        match self {
            RBar::Exact(v) | RBar::LowerBound(v) => v,
        }
    }
}

pub fn r_bar(k: i64) -> Result<RBar> {
    match k {
        i64::MIN..=0 => Err(Error::input(format!("r_bar needs k >= 1, got {k}"))),
        1 => Ok(RBar::Exact(4)),
        2 => Ok(RBar::Exact(6)),
        _ => Ok(RBar::LowerBound(7)),
    }
}

/// One unknown triple `(a_j, b_j, c_j)` of the polynomial system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyTriple {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// `P_alpha(a, b) = sum_{n1 + 2 n2 = alpha} a^n1 b^n2 / (n1! n2!)` for
/// `alpha = 0..=r`. Satisfies `dP_alpha/da = P_{alpha-1}` and
/// `dP_alpha/db = P_{alpha-2}`.
fn poly_terms(a: f64, b: f64, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; r + 1];
    for (alpha, slot) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for n2 in 0..=alpha / 2 {
            let n1 = alpha - 2 * n2;
            s += a.powi(n1 as i32) * b.powi(n2 as i32) / (factorial(n1) * factorial(n2));
        }
        *slot = s;
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

fn poly_residuals(candidate: &[PolyTriple], r: usize) -> Vec<f64> {
    let mut res = vec![0.0; r];
    for t in candidate {
        let p = poly_terms(t.a, t.b, r);
        let w = t.c * t.c;
        for alpha in 1..=r {
            res[alpha - 1] += w * p[alpha];
        }
    }
    res
}

/// Sum over `alpha = 1..=r` of the squared left-hand sides of the system.
pub fn polynomial_system_residual(k: usize, r: usize, candidate: &[PolyTriple]) -> Result<f64> {
    if candidate.len() != k + 1 {
        return Err(Error::input(format!("expected {} triples, got {}", k + 1, candidate.len())));
    }
    Ok(poly_residuals(candidate, r).iter().map(|v| v * v).sum())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolyMinimum {
    pub residual: f64,
    pub candidate: Vec<PolyTriple>,
    pub restart: usize,
}

/// Unconstrained parameters: `v_j` for `j >= 2` (`a_1 = 1`, `a_j = sin v_j`),
/// then `b_j`, then `u_j` (`c_j = 0.1 + u_j^2`).
fn decode(x: &[f64], k: usize) -> Vec<PolyTriple> {
    let m = k + 1;
    (0..m)
        .map(|j| PolyTriple {
            a: if j == 0 { 1.0 } else { x[j - 1].sin() },
            b: x[k + j],
            c: 0.1 + x[k + m + j] * x[k + m + j],
        })
        .collect()
}

fn poly_jacobian(x: &[f64], k: usize, r: usize) -> DMatrix<f64> {
    let m = k + 1;
    let cand = decode(x, k);
    let mut jac = DMatrix::zeros(r, x.len());
    for (j, t) in cand.iter().enumerate() {
        let p = poly_terms(t.a, t.b, r);
        let w = t.c * t.c;
        let dw_du = 2.0 * t.c * 2.0 * x[k + m + j];
        for alpha in 1..=r {
            let row = alpha - 1;
            if j > 0 {
                jac[(row, j - 1)] = w * p[alpha - 1] * x[j - 1].cos();
            }
            if alpha >= 2 {
                jac[(row, k + j)] = w * p[alpha - 2];
            }
            jac[(row, k + m + j)] = dw_du * p[alpha];
        }
    }
    jac
}

fn levenberg_marquardt(mut x: Vec<f64>, k: usize, r: usize, max_iter: usize) -> (Vec<f64>, f64) {
    let cost = |x: &[f64]| poly_residuals(&decode(x, k), r).iter().map(|v| v * v).sum::<f64>();
    let mut f = cost(&x);
    let mut mu = 1e-3;
    for _ in 0..max_iter {
        if f < 1e-30 {
            break;
        }
        let res = DVector::from_vec(poly_residuals(&decode(&x, k), r));
        let jac = poly_jacobian(&x, k, r);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * res;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu * (jtj[(i, i)] + 1e-12);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let ft = cost(&trial);
            if ft < f {
                let rel = (f - ft) / f.max(1e-300);
                x = trial;
                f = ft;
                mu = (mu / 3.0).max(1e-15);
                improved = rel > 1e-14;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (x, f)
}

/// Multistart Levenberg-Marquardt over nontrivial candidates, normalized by
/// `a_1 = 1 >= |a_j|` and `c_j >= 0.1`. Restarts run in parallel with seeds
/// derived from `seed`; the result is independent of scheduling.
pub fn minimize_polynomial_residual(k: usize, r: usize, restarts: usize, seed: u64) -> Result<PolyMinimum> {
    if k == 0 || r == 0 || restarts == 0 {
        return Err(Error::input("k, r and restarts must be positive"));
    }
    let n_params = k + 2 * (k + 1);
    let runs: Vec<PolyMinimum> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
            let x0: Vec<f64> = (0..n_params)
                .map(|p| {
                    if p < k {
                        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
                    } else {
                        rng.sample::<f64, _>(StandardNormal)
                    }
                })
                .collect();
            let (x, f) = levenberg_marquardt(x0, k, r, 2000);
            PolyMinimum {
                residual: f,
                candidate: decode(&x, k),
                restart: i,
            }
        })
        .collect();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.residual.total_cmp(&b.residual).then(a.restart.cmp(&b.restart)))
        .expect("restarts >= 1");
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// `|h0 - projection| / |h0|` in the weighted L2 norm of the grid.
    pub relative_residual: f64,
    /// The design matrix was numerically rank deficient.
    pub degenerate: bool,
    pub basis_size: usize,
    pub nodes: usize,
}

/// Multi-indices `eta` with `|eta| <= order` in `dim` variables.
fn multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; dim]];
    for total in 1..=order {
        let mut cur = vec![0; dim];
        fill(&mut cur, 0, total, &mut out);
    }
    fn fill(cur: &mut Vec<usize>, pos: usize, left: usize, out: &mut Vec<Vec<usize>>) {
        if pos == cur.len() - 1 {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for v in (0..=left).rev() {
            cur[pos] = v;
            fill(cur, pos + 1, left - v, out);
        }
    }
    out
}

/// Weighted least-squares residual of `h0` against the span of
/// `f(.|theta_i)` and its parameter derivatives up to order `r` at each
/// probe atom, on a finite grid.
///
/// Location derivatives of order `|eta|` span the same space as
/// `(x - mu)^eta f(x)`; scale derivatives reduce to second location
/// derivatives, so location-scale atoms use location order `2r`. A small
/// residual means `h0` is nearly a combination of the basis on the window;
/// it is evidence, not proof.
pub fn distinguishability_probe(h0: &KnownDensity, thetas: &[Atom], family: &FamilyTag, r: usize, resolution: Option<Resolution>) -> Result<ProbeReport> {
    if thetas.is_empty() {
        return Err(Error::input("probe needs at least one atom"));
    }
    if r > 2 {
        return Err(Error::input("probe order must be 0, 1 or 2"));
    }
    let d = h0.dim();
    if d > 2 {
        return Err(Error::input("probe grid supports dimension 1 or 2"));
    }
    for i in 0..thetas.len() {
        for j in 0..i {
            if rho_unchecked(&thetas[i], &thetas[j]) == 0.0 {
                return Err(Error::input("probe atoms must be distinct"));
            }
        }
    }
    let kernels = thetas.iter().map(|a| family.kernel(a)).collect::<Result<Vec<_>>>()?;
    if kernels.iter().any(|k| k.dim() != d) {
        return Err(Error::input("probe atoms do not match the dimension of h0"));
    }
    let order = if family.has_scale() { 2 * r } else { r };
    let etas = multi_indices(d, order);

    let mut envs = h0.envelopes();
    for k in &kernels {
        envs.push(Envelope::around(k.mean(), &k.marginal_sd(), 10.0, k.min_sd()));
    }
    let res = resolution.unwrap_or(if d == 1 {
        Resolution {
            nodes_per_scale: 50.0,
            min_nodes: 4096,
            max_nodes: 1 << 16,
        }
    } else {
        Resolution::SMOOTH_2D
    });
    let rule = QuadratureRule::from_envelopes(&envs, &h0.jump_points(), res)?;
    let w = rule.weights();
    let m = w.len();
    let p = kernels.len() * etas.len();
    let mut design = DMatrix::zeros(m, p);
    let mut target = DVector::zeros(m);
    let mut row = 0;
    rule.for_each_node(|x| {
        let sw = w[row].max(0.0).sqrt();
        target[row] = sw * h0.pdf_unchecked(x);
        let mut col = 0;
        for k in &kernels {
            let f = k.pdf(x);
            let sd = k.marginal_sd();
            for eta in &etas {
                let mono: f64 = eta
                    .iter()
                    .enumerate()
                    .map(|(t, &e)| ((x[t] - k.mean()[t]) / sd[t]).powi(e as i32))
                    .product();
                design[(row, col)] = sw * mono * f;
                col += 1;
            }
        }
        row += 1;
    });
    // Column scaling keeps the singular values comparable.
    for c in 0..p {
        let norm = design.column(c).norm();
        if norm > 0.0 {
            design.column_mut(c).scale_mut(1.0 / norm);
        }
    }
    let svd = design.svd(true, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let degenerate = !(smin > 1e-10 * smax);
    let u = svd.u.as_ref().expect("u requested");
    let mut proj = DVector::zeros(m);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-12 * smax {
            let col = u.column(i);
            proj += col * col.dot(&target);
        }
    }
    let tnorm = target.norm();
    if !(tnorm > 0.0) {
        return Err(Error::numerical("h0 vanishes on the probe grid"));
    }
    Ok(ProbeReport {
        relative_residual: ((&target - &proj).norm() / tnorm).clamp(0.0, 1.0),
        degenerate,
        basis_size: p,
        nodes: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::known_density::{GaussianMixtureH0, KdeH0, Kernel};
    use crate::model::DeviatedMixture;
    use crate::points::Points;
    use approx::assert_abs_diff_eq;

    fn loc(v: f64) -> Atom {
        Atom::location(vec![v])
    }

    fn one_atom_alignment(p0: &[f64], ps: &[f64]) -> RegimeCAlignment {
        let atoms: Vec<Atom> = (0..p0.len()).map(|i| loc(i as f64)).collect();
        let g0 = MixingMeasure::new(atoms.clone(), p0.to_vec()).unwrap();
        let gs = MixingMeasure::normalized(atoms, ps.to_vec()).unwrap();
        // Keep the raw aligned weights even when they do not sum to one.
        let mut a = RegimeCAlignment::new(&g0, &gs, 1e-9).unwrap();
        a.p_star_aligned = ps.to_vec();
        a
    }

    #[test]
    fn set_b_and_i_lambda_hand_cases() {
        let a = one_atom_alignment(&[1.0], &[0.5]);
        assert!(!a.set_b_contains(0.1, 0.4));
        assert!(a.set_b_contains(0.2, 0.4));
        assert!(a.set_b_contains(0.5, 0.4));
        assert_eq!(a.i_lambda(0.1, 0.4), vec![0]);

        let b = one_atom_alignment(&[0.5, 0.5], &[0.9, 0.1]);
        assert_eq!(b.i_lambda(0.2, 0.5), vec![1]);
    }

    #[test]
    fn ratio_independence_cases() {
        let a = one_atom_alignment(&[0.2, 0.4, 0.4], &[0.1, 0.2, 0.7]);
        assert!(a.ratio_independent(&[0], 1e-12).unwrap());
        assert!(a.ratio_independent(&[0, 1], 1e-12).unwrap());
        assert!(!a.ratio_independent(&[0, 2], 1e-12).unwrap());
        assert!(a.ratio_independent(&[], 1e-12).is_err());
    }

    #[test]
    fn tilde_g_star_reduces_to_g_star_at_lambda_star() {
        let g0 = MixingMeasure::new(vec![loc(0.0), loc(1.0)], vec![0.5, 0.5]).unwrap();
        let gs = MixingMeasure::new(vec![loc(0.0), loc(1.0), loc(4.0)], vec![0.2, 0.3, 0.5]).unwrap();
        let a = RegimeCAlignment::new(&g0, &gs, 1e-9).unwrap();
        let (g, s) = a.tilde_g_star(0.4, 0.4).unwrap();
        assert_abs_diff_eq!(s, 0.4, epsilon = 1e-15);
        assert_eq!(g.len(), 3);
        for (w, e) in g.weights().iter().zip([0.2, 0.3, 0.5]) {
            assert_abs_diff_eq!(*w, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn tilde_g_star_hand_case_with_deficit() {
        // p0 = (0.5, 0.5), p* = (0.1, 0.2, 0.7 at an extra atom), lambda* = 0.5,
        // lambda = 0.2: deficits 0.3*0.5 - 0.05 = 0.1 and 0.15 - 0.1 = 0.05, so
        // I = {0, 1}; S = 0.5 * 0.7 = 0.35 and only the extra atom remains.
        let g0 = MixingMeasure::new(vec![loc(0.0), loc(1.0)], vec![0.5, 0.5]).unwrap();
        let gs = MixingMeasure::new(vec![loc(0.0), loc(1.0), loc(4.0)], vec![0.1, 0.2, 0.7]).unwrap();
        let a = RegimeCAlignment::new(&g0, &gs, 1e-9).unwrap();
        assert_eq!(a.i_lambda(0.2, 0.5), vec![0, 1]);
        let (g, s) = a.tilde_g_star(0.2, 0.5).unwrap();
        assert_abs_diff_eq!(s, 0.35, epsilon = 1e-12);
        assert_eq!(g.atoms(), &[loc(4.0)]);
        // lambda = 0.4: deficit 0.05 - 0.05 = 0 for atom 0 (not strict), 0.05 - 0.1 < 0.
        let (g, s) = a.tilde_g_star(0.4, 0.5).unwrap();
        assert!(a.i_lambda(0.4, 0.5).is_empty());
        assert_abs_diff_eq!(s, 0.4, epsilon = 1e-12);
        // Atom 0 has zero weight up to rounding.
        let weight_at = |v: f64| g.atoms().iter().zip(g.weights()).find(|(a, _)| a.location == vec![v]).map_or(0.0, |(_, w)| *w);
        assert_abs_diff_eq!(weight_at(0.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(weight_at(1.0), 0.05 / 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(weight_at(4.0), 0.35 / 0.4, epsilon = 1e-12);
    }

    #[test]
    fn overline_identity_and_edge_cases() {
        let g0 = MixingMeasure::new(vec![loc(-1.0), loc(2.0)], vec![0.4, 0.6]).unwrap();
        let gs = MixingMeasure::new(vec![loc(-1.0), loc(5.0)], vec![0.5, 0.5]).unwrap();
        assert_eq!(overline_g_star(0.3, 0.3, &g0, &gs, 1e-9).unwrap(), gs);
        assert!(overline_g_star(0.2, 0.3, &g0, &gs, 1e-9).is_err());
        // At lambda = 10 lambda*, G0 carries mass 0.9: 0.54 at its own atom
        // 2.0 and 0.36 merged into -1.0.
        let far = overline_g_star(1.0, 0.1, &g0, &gs, 1e-9).unwrap();
        let weight_at = |v: f64| far.atoms().iter().zip(far.weights()).find(|(a, _)| a.location == vec![v]).map(|(_, w)| *w).unwrap();
        assert_abs_diff_eq!(weight_at(2.0), 0.54, epsilon = 1e-12);
        assert_abs_diff_eq!(weight_at(-1.0), 0.36 + 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(weight_at(5.0), 0.05, epsilon = 1e-12);

        let h0 = KnownDensity::GaussianMixture(
            GaussianMixtureH0::new(
                vec![0.4, 0.6],
                vec![vec![-1.0], vec![2.0]],
                vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            )
            .unwrap(),
        );
        let fam = FamilyTag::isotropic_location(1, 1.0);
        let truth = DeviatedMixture::new(h0.clone(), 0.3, gs.clone(), fam.clone()).unwrap();
        for lambda in [0.35, 0.6, 1.0] {
            let gb = overline_g_star(lambda, 0.3, &g0, &gs, 1e-12).unwrap();
            let m = DeviatedMixture::new(h0.clone(), lambda, gb, fam.clone()).unwrap();
            for i in 0..200 {
                let x = [-8.0 + 0.08 * i as f64];
                assert!((m.pdf(&x).unwrap() - truth.pdf(&x).unwrap()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn classification() {
        let h0 = KnownDensity::GaussianMixture(
            GaussianMixtureH0::new(
                vec![0.4, 0.6],
                vec![vec![-1.0], vec![2.0]],
                vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            )
            .unwrap(),
        );
        let fam = FamilyTag::isotropic_location(1, 1.0);
        let gs = MixingMeasure::dirac(loc(-1.0));
        let rep = classify_regime(&h0, 0.3, &gs, &fam, 1e-6).unwrap();
        assert_eq!((rep.regime, rep.k_bar), (Regime::BPartialOverlap, 1));
        assert_eq!(classify_regime(&h0, 0.0, &gs, &fam, 1e-6).unwrap().regime, Regime::ALambdaZero);
        let both = MixingMeasure::new(vec![loc(-1.0), loc(2.0), loc(6.0)], vec![0.3, 0.3, 0.4]).unwrap();
        assert_eq!(classify_regime(&h0, 0.3, &both, &fam, 1e-6).unwrap().regime, Regime::CFullOverlap);
        assert!(classify_regime(&h0, 0.3, &gs, &fam, 10.0).is_err());
        let other_scale = FamilyTag::isotropic_location(1, 2.0);
        assert_eq!(
            classify_regime(&h0, 0.3, &gs, &other_scale, 1e-6).unwrap().regime,
            Regime::Distinguishable
        );
        let kde = KnownDensity::Kde(
            KdeH0::new(Points::from_scalars(&[0.0, 1.0]), 0.5, Kernel::Student { nu: 3.0 }).unwrap(),
        );
        assert_eq!(classify_regime(&kde, 0.3, &gs, &fam, 1e-6).unwrap().regime, Regime::Distinguishable);
    }

    #[test]
    fn r_bar_table() {
        assert_eq!(r_bar(1).unwrap(), RBar::Exact(4));
        assert_eq!(r_bar(2).unwrap(), RBar::Exact(6));
        assert_eq!(r_bar(3).unwrap(), RBar::LowerBound(7));
        assert!(r_bar(0).is_err());
    }

    #[test]
    fn polynomial_residual_values() {
        let zero = vec![PolyTriple { a: 0.0, b: 0.0, c: 1.0 }; 2];
        assert_eq!(polynomial_system_residual(1, 4, &zero).unwrap(), 0.0);
        // a = (1, -1), b = -1/2, equal c solves alpha = 1..3 exactly.
        let sol = vec![
            PolyTriple { a: 1.0, b: -0.5, c: 1.0 },
            PolyTriple { a: -1.0, b: -0.5, c: 1.0 },
        ];
        assert!(polynomial_system_residual(1, 3, &sol).unwrap() < 1e-30);
        assert!(polynomial_system_residual(1, 4, &sol).unwrap() > 1e-3);
        assert!(polynomial_system_residual(2, 3, &sol).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let x = [0.3, -0.2, 0.7, 0.5, -0.4];
        let jac = poly_jacobian(&x, 1, 4);
        for p in 0..x.len() {
            let mut xp = x;
            let mut xm = x;
            xp[p] += 1e-6;
            xm[p] -= 1e-6;
            let rp = poly_residuals(&decode(&xp, 1), 4);
            let rm = poly_residuals(&decode(&xm, 1), 4);
            for a in 0..4 {
                assert_abs_diff_eq!(jac[(a, p)], (rp[a] - rm[a]) / 2e-6, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn probe_sees_h0_in_span() {
        let h0 = KnownDensity::GaussianMixture(
            GaussianMixtureH0::new(vec![1.0], vec![vec![0.5]], vec![DMatrix::identity(1, 1)]).unwrap(),
        );
        let fam = FamilyTag::isotropic_location(1, 1.0);
        let rep = distinguishability_probe(&h0, &[loc(0.5)], &fam, 0, None).unwrap();
        assert!(rep.relative_residual < 1e-10);
        let off = distinguishability_probe(&h0, &[loc(3.0)], &fam, 0, None).unwrap();
        assert!(off.relative_residual > 0.1);
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(1, 4).len(), 5);
        assert_eq!(multi_indices(2, 2).len(), 6);
        assert_eq!(multi_indices(2, 4).len(), 15);
    }
}
