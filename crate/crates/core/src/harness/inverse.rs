//! Numerical check that `V(p, p*) / W_bar` does not vanish as `(lambda, G)`
//! approaches the truth along random directions.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::{w_bar, wasserstein_power, Atom, MixingMeasure};
use crate::model::{DeviatedMixture, QuadratureRule};
use crate::quadrature::{Envelope, Resolution};
use crate::regimes::{h0_mixing_measure, overline_g_star};
use crate::seed::{derive_seed, rng_from_seed, SimRng};

/// How the perturbed `(lambda_eps, G_eps)` approaches the truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// Same number of atoms; `lambda`, weights, locations (and scales) all
    /// move by `O(eps)`.
    ExactFit,
    /// One atom splits into two at distance `O(eps)` with its mean kept;
    /// everything else moves by `O(eps^2)`.
    OverFitSplit,
    /// `lambda = lambda* + O(eps)` with `G` on `G_bar*(lambda)` up to an
    /// `O(eps^2)` shift of its atoms. Needs `h0` in the kernel family.
    RegimeBRidge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseBoundSettings {
    pub mode: PerturbationMode,
    /// Order of `W_bar_r` in the denominator.
    pub r: u32,
    pub directions: usize,
    /// Strictly decreasing positive scalings.
    pub epsilon_levels: Vec<f64>,
    pub seed: u64,
    /// Merge tolerance for `G_bar*`.
    pub atom_tol: f64,
}

impl InverseBoundSettings {
    /// Eight directions over `eps = 2^0, ..., 2^-8`.
    pub fn new(mode: PerturbationMode, r: u32) -> Self {
        InverseBoundSettings {
            mode,
            r,
            directions: 8,
            epsilon_levels: (0..=8).map(|j| 0.5f64.powi(j)).collect(),
            seed: 0,
            atom_tol: 1e-6,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.r == 0 || self.directions == 0 {
            return Err(Error::input("r and the direction count must be positive"));
        }
        if self.epsilon_levels.len() < 2
            || self.epsilon_levels.iter().any(|e| !(*e > 0.0 && *e <= 1.0))
            || self.epsilon_levels.windows(2).any(|w| w[0] <= w[1])
        {
            return Err(Error::input("epsilon_levels must be at least two strictly decreasing values in (0, 1]"));
        }
        Ok(())
    }
}

/// `V / denominator` across the epsilon levels of one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSeries {
    pub denominator: String,
    pub values: Vec<f64>,
    /// `None` where the denominator is zero (level skipped).
    pub ratios: Vec<Option<f64>>,
    pub min_ratio: f64,
    /// Ratio at the largest and at the smallest retained epsilon.
    pub ratio_largest_eps: f64,
    pub ratio_smallest_eps: f64,
    /// `ratio_smallest_eps >= ratio_largest_eps / 5`.
    pub non_vanishing: bool,
    /// `ratio_largest_eps / ratio_smallest_eps`.
    pub collapse_factor: f64,
}

impl RatioSeries {
    fn new(denominator: String, tv: &[f64], values: Vec<f64>) -> Result<Self> {
        let ratios: Vec<Option<f64>> = tv
            .iter()
            .zip(&values)
            .map(|(v, d)| if *d > 0.0 { Some(v / d) } else { None })
            .collect();
        let kept: Vec<f64> = ratios.iter().flatten().copied().collect();
        if kept.len() < 2 {
            return Err(Error::numerical(format!("fewer than two usable epsilon levels for {denominator}")));
        }
        let first = kept[0];
        let last = *kept.last().expect("nonempty");
        Ok(RatioSeries {
            denominator,
            values,
            min_ratio: kept.iter().copied().fold(f64::INFINITY, f64::min),
            ratio_largest_eps: first,
            ratio_smallest_eps: last,
            non_vanishing: last >= first / 5.0,
            collapse_factor: first / last,
            ratios,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub index: usize,
    /// `V(p_eps, p*)` per epsilon level.
    pub tv: Vec<f64>,
    pub series: Vec<RatioSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenominatorSummary {
    pub denominator: String,
    pub global_min_ratio: f64,
    pub all_non_vanishing: bool,
    pub min_collapse_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseBoundReport {
    pub mode: PerturbationMode,
    pub r: u32,
    pub epsilon_levels: Vec<f64>,
    pub directions: Vec<DirectionReport>,
    pub summary: Vec<DenominatorSummary>,
    /// Exact and split modes: every direction is non-vanishing against
    /// `W_bar_r`. Ridge mode: every direction collapses by more than 10x
    /// against `W_bar_r` while staying non-vanishing against
    /// `W_r^r(G, G_bar*(lambda))`.
    pub pass: bool,
}

impl InverseBoundReport {
    pub fn summary_for(&self, denominator: &str) -> Option<&DenominatorSummary> {
        self.summary.iter().find(|s| s.denominator == denominator)
    }
}

pub fn w_bar_label(r: u32) -> String {
    format!("w_bar_{r}")
}

pub fn overline_label(r: u32) -> String {
    format!("w{r}_power_overline_g_star")
}

/// A perturbed parameter and, in ridge mode, the matching `G_bar*(lambda)`.
struct Perturbed {
    lambda: f64,
    g: MixingMeasure,
    overline: Option<MixingMeasure>,
}

/// Random ingredients of one direction.
struct Direction {
    d_lambda: f64,
    d_weights: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    scale_shifts: Vec<Option<DMatrix<f64>>>,
    split_index: usize,
    split_unit: Vec<f64>,
    split_share: f64,
}

fn unit_vector(rng: &mut SimRng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Step lengths are tied to the kernel width so that the perturbation at
/// `eps = 1` is visible but not wild.
fn kernel_sd(model: &DeviatedMixture, i: usize) -> f64 {
    model.kernels()[i].min_sd()
}

impl Direction {
    fn draw(model: &DeviatedMixture, lambda_star: f64, mode: PerturbationMode, rng: &mut SimRng, index: usize) -> Self {
        let g = model.mixing();
        let k = g.len();
        let d = g.dim();
        let room = lambda_star.min(1.0 - lambda_star);
        let d_lambda = match mode {
            PerturbationMode::RegimeBRidge => rng.random_range(0.3..0.6) * (1.0 - lambda_star),
            _ => rng.random_range(-1.0..1.0) * (0.5 * room).min(0.1),
        };
        let mut d_weights: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let mean = d_weights.iter().sum::<f64>() / k as f64;
        d_weights.iter_mut().for_each(|w| *w -= mean);
        let peak = d_weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let min_p = g.weights().iter().copied().fold(f64::INFINITY, f64::min);
        if peak > 0.0 && k > 1 {
            d_weights.iter_mut().for_each(|w| *w *= 0.5 * min_p / peak);
        } else {
            d_weights.iter_mut().for_each(|w| *w = 0.0);
        }
        // Spare shifts cover the extra atoms of G_bar* in ridge mode.
        let shifts = (0..k + 8)
            .map(|i| {
                let len = 0.5 * kernel_sd(model, i % k) * rng.random_range(0.5..1.0);
                unit_vector(rng, d).into_iter().map(|u| u * len).collect()
            })
            .collect();
        let scale_shifts = g
            .atoms()
            .iter()
            .map(|a| {
                a.scale.as_ref().map(|s| {
                    let mut m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                    m = (&m + m.transpose()) * 0.5;
                    let min_eig = s.clone().symmetric_eigen().eigenvalues.min();
                    let fro = m.norm();
                    m * (0.3 * min_eig / fro)
                })
            })
            .collect();
        let split_unit = unit_vector(rng, d);
        let split_share = rng.random_range(0.3..0.7);
        Direction {
            d_lambda,
            d_weights,
            shifts,
            scale_shifts,
            split_index: index % k,
            split_unit,
            split_share,
        }
    }

    fn shifted(atom: &Atom, shift: &[f64], by: f64) -> Atom {
        Atom {
            location: atom.location.iter().zip(shift).map(|(a, s)| a + by * s).collect(),
            scale: atom.scale.clone(),
        }
    }

    fn apply(
        &self,
        model: &DeviatedMixture,
        lambda_star: f64,
        g0: Option<&MixingMeasure>,
        settings: &InverseBoundSettings,
        eps: f64,
    ) -> Result<Perturbed> {
        let g = model.mixing();
        match settings.mode {
            PerturbationMode::ExactFit => {
                let atoms = g
                    .atoms()
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let mut b = Self::shifted(a, &self.shifts[i], eps);
                        if let (Some(s), Some(ds)) = (&a.scale, &self.scale_shifts[i]) {
                            b.scale = Some(s + ds * eps);
                        }
                        b
                    })
                    .collect();
                let weights = g.weights().iter().zip(&self.d_weights).map(|(p, dp)| p + eps * dp).collect();
                Ok(Perturbed {
                    lambda: lambda_star + eps * self.d_lambda,
                    g: MixingMeasure::normalized(atoms, weights)?,
                    overline: None,
                })
            }
            PerturbationMode::OverFitSplit => {
                let eps2 = eps * eps;
                let mut atoms = Vec::with_capacity(g.len() + 1);
                let mut weights = Vec::with_capacity(g.len() + 1);
                for (i, (a, &p)) in g.atoms().iter().zip(g.weights()).enumerate() {
                    if i == self.split_index {
                        let q = self.split_share;
                        let step: Vec<f64> =
                            self.split_unit.iter().map(|u| u * 0.5 * kernel_sd(model, i)).collect();
                        atoms.push(Self::shifted(a, &step, eps * (1.0 - q)));
                        weights.push(p * q);
                        atoms.push(Self::shifted(a, &step, -eps * q));
                        weights.push(p * (1.0 - q));
                    } else {
                        atoms.push(Self::shifted(a, &self.shifts[i], eps2));
                        weights.push(p);
                    }
                }
                Ok(Perturbed {
                    lambda: lambda_star + eps2 * self.d_lambda,
                    g: MixingMeasure::normalized(atoms, weights)?,
                    overline: None,
                })
            }
            PerturbationMode::RegimeBRidge => {
                let g0 = g0.ok_or_else(|| Error::input("ridge directions need h0 in the kernel family"))?;
                let lambda = lambda_star + eps * self.d_lambda;
                let target = overline_g_star(lambda, lambda_star, g0, g, settings.atom_tol)?;
                let eps2 = eps * eps;
                let atoms = target
                    .atoms()
                    .iter()
                    .enumerate()
                    .map(|(j, a)| Self::shifted(a, &self.shifts[j % self.shifts.len()], eps2))
                    .collect();
                Ok(Perturbed {
                    lambda,
                    g: MixingMeasure::new(atoms, target.weights().to_vec())?,
                    overline: Some(target),
                })
            }
        }
    }
}

/// `h0` and `p*` on one rule; perturbed models reuse the `h0` column.
struct Tabulated {
    rule: QuadratureRule,
    h0: Vec<f64>,
    truth: Vec<f64>,
}

impl Tabulated {
    fn tv(&self, model: &DeviatedMixture) -> f64 {
        let lambda = model.lambda();
        let mut vals = Vec::with_capacity(self.h0.len());
        let mut i = 0;
        self.rule.for_each_node(|x| {
            vals.push((1.0 - lambda) * self.h0[i] + lambda * model.deviation_pdf_unchecked(x));
            i += 1;
        });
        self.rule.total_variation(&self.truth, &vals).value
    }
}

/// Ratios `V(p_{lambda_eps G_eps}, p*) / denominator` along random
/// directions. Divergences use deterministic quadrature, so `d <= 2`.
pub fn verify_inverse_bound(truth: &DeviatedMixture, settings: &InverseBoundSettings) -> Result<InverseBoundReport> {
    settings.validate()?;
    if truth.dim() > 2 {
        return Err(Error::input("inverse-bound checks need dimension 1 or 2"));
    }
    let lambda_star = truth.lambda();
    if !(lambda_star > 0.0 && lambda_star < 1.0) {
        return Err(Error::input("inverse-bound checks need lambda* in (0, 1)"));
    }
    let g_star = truth.mixing().clone();
    let g0 = match settings.mode {
        PerturbationMode::RegimeBRidge => Some(
            h0_mixing_measure(truth.h0(), truth.family())
                .ok_or_else(|| Error::input("ridge directions need h0 in the kernel family"))?,
        ),
        _ => None,
    };

    let directions: Vec<Direction> = (0..settings.directions)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(settings.seed, &[i as u64]));
            Direction::draw(truth, lambda_star, settings.mode, &mut rng, i)
        })
        .collect();

    // Every perturbed model stays between the truth and its eps = 1 version,
    // so those envelopes cover all of them.
    let mut envs: Vec<Envelope> = truth.envelopes();
    for dir in &directions {
        let p = dir.apply(truth, lambda_star, g0.as_ref(), settings, settings.epsilon_levels[0])?;
        envs.extend(truth.with_parameters(p.lambda, p.g)?.envelopes());
    }
    let res = if truth.dim() == 1 { Resolution::FINE_1D } else { Resolution::FINE_2D };
    let rule = QuadratureRule::from_envelopes(&envs, &truth.h0().jump_points(), res)?;
    let mut h0_vals = Vec::with_capacity(rule.len());
    rule.for_each_node(|x| h0_vals.push(truth.h0().pdf_unchecked(x)));
    let truth_vals = rule.tabulate(truth)?;
    let table = Tabulated {
        rule,
        h0: h0_vals,
        truth: truth_vals,
    };

    let r = settings.r;
    let mut reports = Vec::with_capacity(directions.len());
    for (index, dir) in directions.iter().enumerate() {
        let mut tv = Vec::new();
        let mut truth_denoms = Vec::new();
        let mut ridge_denoms = Vec::new();
        for &eps in &settings.epsilon_levels {
            let p = dir.apply(truth, lambda_star, g0.as_ref(), settings, eps)?;
            let lambda = p.lambda.clamp(0.0, 1.0);
            truth_denoms.push(w_bar(lambda, &p.g, lambda_star, &g_star, r)?);
            if let Some(target) = &p.overline {
                ridge_denoms.push(wasserstein_power(&p.g, target, r)?);
            }
            tv.push(table.tv(&truth.with_parameters(lambda, p.g)?));
        }
        let mut series = vec![RatioSeries::new(w_bar_label(r), &tv, truth_denoms)?];
        if settings.mode == PerturbationMode::RegimeBRidge {
            series.push(RatioSeries::new(overline_label(r), &tv, ridge_denoms)?);
        }
        reports.push(DirectionReport { index, tv, series });
    }

    let labels: Vec<String> = reports[0].series.iter().map(|s| s.denominator.clone()).collect();
    let summary: Vec<DenominatorSummary> = labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let all = reports.iter().map(|d| &d.series[j]);
            DenominatorSummary {
                denominator: label.clone(),
                global_min_ratio: all.clone().map(|s| s.min_ratio).fold(f64::INFINITY, f64::min),
                all_non_vanishing: all.clone().all(|s| s.non_vanishing),
                min_collapse_factor: all.map(|s| s.collapse_factor).fold(f64::INFINITY, f64::min),
            }
        })
        .collect();
    let pass = match settings.mode {
        PerturbationMode::RegimeBRidge => summary[0].min_collapse_factor > 10.0 && summary[1].all_non_vanishing,
        _ => summary[0].all_non_vanishing && summary[0].global_min_ratio > 0.0,
    };
    Ok(InverseBoundReport {
        mode: settings.mode,
        r,
        epsilon_levels: settings.epsilon_levels.clone(),
        directions: reports,
        summary,
        pass,
    })
}
