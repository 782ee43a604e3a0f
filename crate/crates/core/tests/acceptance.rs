//! End-to-end acceptance checks. Each test prints one `[criterion N]` line
//! with PASS or FAIL and then asserts.
//!
//! Run with `cargo test -p devmix-core --test acceptance`.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use devmix_core::harness::{fit_rate_with, run_scenario, scenarios, InverseBoundSettings, LambdaFilter, PerturbationMode, RateSpec, RateTable, ScenarioConfig};
use devmix_core::known_density::{GaussianMixtureH0, KdeH0, Kernel, PwlPushforwardH0};
use devmix_core::model::QuadratureRule;
use devmix_core::quadrature::{Grid1D, Resolution};
use devmix_core::regimes::{h0_mixing_measure, PolyTriple};
use devmix_core::{
    em_fit, hellinger, minimize_polynomial_residual, overline_g_star, polynomial_system_residual, total_variation,
    wasserstein, Atom, ConstraintClass, DeviatedMixture, DivergenceMethod, EmConfig, FamilyTag, KnownDensity,
    MixingMeasure, Points,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Heavy criteria share the machine; run them one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to stderr so the line survives libtest's output capture.
fn report(n: u32, ok: bool, elapsed: Duration, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let line = format!("[criterion {n}] {verdict} ({:.1}s) {detail}\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn slope(table: &RateTable, config: &ScenarioConfig, metric: &str, filter: LambdaFilter) -> f64 {
    let spec = RateSpec {
        metric: metric.to_owned(),
        filter,
        exponent: None,
        tolerance: None,
    };
    fit_rate_with(table, Some(&config.name), &spec, config.lambda_star)
        .map(|f| f.slope)
        .unwrap_or(f64::NAN)
}

fn gaussian_1d(mean: f64, var: f64) -> KnownDensity {
    KnownDensity::GaussianMixture(
        GaussianMixtureH0::new(vec![1.0], vec![vec![mean]], vec![DMatrix::from_element(1, 1, var)]).unwrap(),
    )
}

#[test]
fn criterion_1_pathology_identity() {
    let _g = serial();
    let t = Instant::now();
    let config = scenarios::two_gaussian_overlap();
    let truth = config.truth().unwrap();
    let g0 = h0_mixing_measure(truth.h0(), truth.family()).expect("h0 is a mixture of the kernel family");
    let ls = config.lambda_star;

    let models: Vec<DeviatedMixture> = (1..=20)
        .map(|j| {
            let lambda = ls + (1.0 - ls) * j as f64 / 20.0;
            let g = overline_g_star(lambda, ls, &g0, truth.mixing(), config.atom_tol).unwrap();
            truth.with_parameters(lambda, g).unwrap()
        })
        .collect();

    let m = 200;
    let (x0, x1, y0, y1) = (-10.0, 8.0, -12.0, 10.0);
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let x = [x0 + (x1 - x0) * i as f64 / (m - 1) as f64, y0 + (y1 - y0) * j as f64 / (m - 1) as f64];
            let p = truth.pdf(&x).unwrap();
            for model in &models {
                worst = worst.max((model.pdf(&x).unwrap() - p).abs());
            }
        }
    }
    let elapsed = t.elapsed();
    let ok = worst <= 1e-12 && elapsed < Duration::from_secs(5);
    report(1, ok, elapsed, &format!("max |p(lambda, G_bar*) - p*| = {worst:.2e} over 20 lambdas, 200x200 grid"));
    assert!(ok);
}

/// Random measure with at most three atoms and weights in units of 1/12.
fn unit_measure(rng: &mut ChaCha8Rng, dim: usize, with_scale: bool) -> (MixingMeasure, Vec<usize>) {
    let k = rng.random_range(1..=3);
    let mut units = vec![1usize; k];
    for _ in 0..12 - k {
        units[rng.random_range(0..k)] += 1;
    }
    let atoms = (0..k)
        .map(|_| {
            let loc: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            if with_scale {
                let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
                let s = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.2;
                Atom::location_scale(loc, s)
            } else {
                Atom::location(loc)
            }
        })
        .collect();
    let weights = units.iter().map(|&u| u as f64 / 12.0).collect();
    (MixingMeasure::new(atoms, weights).unwrap(), units)
}

fn atom_distance(a: &Atom, b: &Atom) -> f64 {
    let loc = a.location.iter().zip(&b.location).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = match (&a.scale, &b.scale) {
        (Some(s), Some(t)) => (s - t).iter().map(|v| v * v).sum::<f64>().sqrt(),
        _ => 0.0,
    };
    loc + scale
}

/// Minimum cost over every integer coupling of the unit masses.
fn brute_force_power(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    fn fill(i: usize, j: usize, cost: &[Vec<f64>], rows: &mut [usize], cols: &mut [usize], acc: f64, best: &mut f64) {
        if i == rows.len() {
            if cols.iter().all(|&c| c == 0) {
                *best = best.min(acc);
            }
            return;
        }
        if j + 1 == cols.len() {
            // The last column takes whatever is left of this row.
            let x = rows[i];
            if x > cols[j] {
                return;
            }
            cols[j] -= x;
            let saved = rows[i];
            rows[i] = 0;
            fill(i + 1, 0, cost, rows, cols, acc + x as f64 * cost[i][j], best);
            rows[i] = saved;
            cols[j] += x;
            return;
        }
        for x in 0..=rows[i].min(cols[j]) {
            rows[i] -= x;
            cols[j] -= x;
            fill(i, j + 1, cost, rows, cols, acc + x as f64 * cost[i][j], best);
            rows[i] += x;
            cols[j] += x;
        }
    }
    let mut best = f64::INFINITY;
    fill(0, 0, cost, &mut rows.to_vec(), &mut cols.to_vec(), 0.0, &mut best);
    best / 12.0
}

#[test]
fn criterion_2_transport_oracle() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for pair in 0..200 {
        let dim = 1 + pair % 2;
        let with_scale = pair % 4 == 3;
        let (g, gu) = unit_measure(&mut rng, dim, with_scale);
        let (h, hu) = unit_measure(&mut rng, dim, with_scale);
        for r in [1u32, 2] {
            let cost: Vec<Vec<f64>> = g
                .atoms()
                .iter()
                .map(|a| h.atoms().iter().map(|b| atom_distance(a, b).powi(r as i32)).collect())
                .collect();
            let oracle = brute_force_power(&cost, &gu, &hu).powf(1.0 / r as f64);
            let lp = wasserstein(&g, &h, r).unwrap();
            worst = worst.max((lp - oracle).abs());
        }
    }
    let elapsed = t.elapsed();
    let ok = worst <= 1e-9 && elapsed < Duration::from_secs(30);
    report(2, ok, elapsed, &format!("max |W_r(LP) - W_r(enumeration)| = {worst:.2e} over 200 pairs, r = 1, 2"));
    assert!(ok);
}

fn random_h0(rng: &mut ChaCha8Rng, dim: usize) -> KnownDensity {
    let kind = if dim == 1 { rng.random_range(0..4) } else { rng.random_range(0..3) };
    match kind {
        0 => {
            let m = rng.random_range(1..=3);
            let means = (0..m).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let covs = (0..m)
                .map(|_| {
                    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-0.5..0.5));
                    &a * a.transpose() + DMatrix::identity(dim, dim) * rng.random_range(0.3..1.5)
                })
                .collect();
            let weights = (0..m).map(|_| rng.random_range(0.2..1.0)).collect::<Vec<f64>>();
            let total: f64 = weights.iter().sum();
            let weights = weights.iter().map(|w| w / total).collect();
            KnownDensity::GaussianMixture(GaussianMixtureH0::new(weights, means, covs).unwrap())
        }
        1 | 2 => {
            let m = rng.random_range(5..30);
            let coords = (0..m * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let kernel = if kind == 1 {
                Kernel::Gaussian
            } else {
                Kernel::Student {
                    nu: rng.random_range(3.0..10.0),
                }
            };
            KnownDensity::Kde(KdeH0::new(Points::new(dim, coords).unwrap(), rng.random_range(0.3..1.0), kernel).unwrap())
        }
        _ => {
            let mut knots: Vec<f64> = (0..rng.random_range(1..4)).map(|_| rng.random_range(-1.5..1.5)).collect();
            knots.sort_by(f64::total_cmp);
            knots.dedup();
            let mut values = Vec::new();
            let mut v = rng.random_range(-1.0..1.0);
            for _ in &knots {
                values.push(v);
                v += rng.random_range(0.2..1.5);
            }
            // A monotone map with distinct tail slopes keeps T non-affine.
            let pwl = PwlPushforwardH0::from_knots(knots, &values, rng.random_range(0.3..0.8), rng.random_range(1.2..2.5)).unwrap();
            KnownDensity::PwlPushforward(pwl)
        }
    }
}

fn random_atom(rng: &mut ChaCha8Rng, dim: usize, with_scale: bool) -> Atom {
    let loc: Vec<f64> = (0..dim).map(|_| rng.random_range(1.5..5.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    if with_scale {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-0.4..0.4));
        Atom::location_scale(loc, &a * a.transpose() + DMatrix::identity(dim, dim) * rng.random_range(0.3..1.2))
    } else {
        Atom::location(loc)
    }
}

#[test]
fn criterion_3_em_monotone_and_feasible() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad_trace = 0;
    let mut infeasible = 0;
    let mut failed = 0;
    let mut worst_drop = 0.0f64;
    let mut steps = 0usize;
    for case in 0..100u64 {
        let dim = rng.random_range(1..=2);
        let h0 = random_h0(&mut rng, dim);
        let with_scale = rng.random_bool(0.5);
        let family = if with_scale {
            FamilyTag::LocationScaleGaussian
        } else {
            FamilyTag::isotropic_location(dim, rng.random_range(0.5..1.5))
        };
        let k_true = rng.random_range(1..=2);
        let atoms: Vec<Atom> = (0..k_true).map(|_| random_atom(&mut rng, dim, with_scale)).collect();
        let g_true = MixingMeasure::normalized(atoms, vec![1.0; k_true]).unwrap();
        let truth = DeviatedMixture::new(h0.clone(), rng.random_range(0.2..0.8), g_true, family.clone()).unwrap();
        let n = rng.random_range(100..=400);
        let data = truth.sample(n, case).unwrap();

        let k = rng.random_range(1..=3);
        let constraint = match rng.random_range(0..4) {
            0 => ConstraintClass::ExactFit { k },
            1 => ConstraintClass::OverFit { k },
            2 => ConstraintClass::ExactFitFloor { k, c0: 0.05 },
            _ => ConstraintClass::OverFitFloor { k, c0: 0.05 },
        };
        let mut cfg = EmConfig::new(constraint, family);
        cfg.restarts = 2;
        cfg.max_iterations = 100;
        cfg.seed = case;
        let fit = match em_fit(&data, &h0, &cfg) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("case {case}: fit failed: {e}");
                failed += 1;
                continue;
            }
        };
        let drop = fit
            .loglik_trace
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
            .fold(0.0f64, f64::max);
        worst_drop = worst_drop.max(drop);
        steps += fit.loglik_trace.len() - 1;
        if drop > 1e-9 {
            eprintln!("case {case}: relative log-likelihood drop {drop:.3e}");
            bad_trace += 1;
        }
        if let Err(e) = constraint.check(&fit.g_hat) {
            eprintln!("case {case}: {e}");
            infeasible += 1;
        }
    }
    let elapsed = t.elapsed();
    let ok = bad_trace == 0 && infeasible == 0 && failed == 0 && elapsed < Duration::from_secs(300);
    report(
        3,
        ok,
        elapsed,
        &format!("100 scenarios, {steps} EM steps: {bad_trace} non-monotone traces (worst relative drop {worst_drop:.1e}), {infeasible} infeasible, {failed} failed"),
    );
    assert!(ok);
}

struct Section4 {
    exact: (ScenarioConfig, RateTable),
    overfit: (ScenarioConfig, RateTable),
    elapsed: Duration,
}

fn section4() -> &'static Section4 {
    static CELL: OnceLock<Section4> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let exact = scenarios::half_circle_exact();
        let exact_table = run_scenario(&exact, None).unwrap();
        let overfit = scenarios::half_circle_overfit();
        let overfit_table = run_scenario(&overfit, None).unwrap();
        Section4 {
            exact: (exact, exact_table),
            overfit: (overfit, overfit_table),
            elapsed: t.elapsed(),
        }
    })
}

#[test]
fn criterion_4_distinguishable_rates() {
    let _g = serial();
    let s = section4();
    let (ec, et) = &s.exact;
    let (oc, ot) = &s.overfit;
    let w1 = slope(et, ec, "w1_g_star", LambdaFilter::All);
    let l_exact = slope(et, ec, "abs_lambda", LambdaFilter::All);
    let w2 = slope(ot, oc, "w2_g_star", LambdaFilter::All);
    let l_over = slope(ot, oc, "abs_lambda", LambdaFilter::All);
    let ok = in_range(w1, 0.3, 0.7)
        && in_range(w2, 0.13, 0.40)
        && in_range(l_exact, 0.3, 0.7)
        && in_range(l_over, 0.3, 0.7)
        && s.elapsed < Duration::from_secs(30 * 60);
    report(
        4,
        ok,
        s.elapsed,
        &format!("exact W1 {w1:.3} in [0.3, 0.7], |lambda| {l_exact:.3}; over-fit W2 {w2:.3} in [0.13, 0.40], |lambda| {l_over:.3}"),
    );
    assert!(ok);
}

#[test]
fn criterion_5_partial_overlap_split() {
    let _g = serial();
    let t = Instant::now();
    let config = scenarios::two_gaussian_overlap();
    let table = run_scenario(&config, None).unwrap();
    let elapsed = t.elapsed();
    let w4 = slope(&table, &config, "w4_overline_g_star", LambdaFilter::AboveStar);
    let lam = slope(&table, &config, "abs_lambda", LambdaFilter::AtMostStar);
    let w6 = slope(&table, &config, "w6_g_star", LambdaFilter::AtMostStar);
    let ok = in_range(w4, 0.06, 0.20)
        && in_range(lam, 0.3, 0.7)
        && (w6 - 1.0 / 12.0).abs() <= 0.08
        && elapsed < Duration::from_secs(45 * 60);
    report(
        5,
        ok,
        elapsed,
        &format!("above: W4 to G_bar* {w4:.3} in [0.06, 0.20]; at most: |lambda| {lam:.3} in [0.3, 0.7], W6 {w6:.3} within 0.08 of 1/12"),
    );
    assert!(ok);
}

#[test]
fn criterion_6_inverse_bound() {
    let _g = serial();
    let t = Instant::now();
    let distinguishable = scenarios::half_circle_exact().truth().unwrap();
    let overlap = scenarios::two_gaussian_overlap().truth().unwrap();
    let exact = devmix_core::harness::verify_inverse_bound(&distinguishable, &InverseBoundSettings::new(PerturbationMode::ExactFit, 1)).unwrap();
    let split = devmix_core::harness::verify_inverse_bound(&distinguishable, &InverseBoundSettings::new(PerturbationMode::OverFitSplit, 2)).unwrap();
    let ridge = devmix_core::harness::verify_inverse_bound(&overlap, &InverseBoundSettings::new(PerturbationMode::RegimeBRidge, 2)).unwrap();
    let elapsed = t.elapsed();

    let bar = ridge.summary.iter().find(|s| s.denominator == "w_bar_2").unwrap();
    let over = ridge.summary.iter().find(|s| s.denominator != "w_bar_2").unwrap();
    let ridge_ok = bar.min_collapse_factor > 10.0 && over.all_non_vanishing;
    let ok = exact.pass && split.pass && ridge.pass && ridge_ok && elapsed < Duration::from_secs(600);
    report(
        6,
        ok,
        elapsed,
        &format!(
            "exact r=1 {} (min ratio {:.3}); over-fit r=2 {} (min ratio {:.3}); ridge: W_bar_2 collapses {:.0}x, {} non-vanishing {}",
            exact.pass,
            exact.summary[0].global_min_ratio,
            split.pass,
            split.summary[0].global_min_ratio,
            bar.min_collapse_factor,
            over.denominator,
            over.all_non_vanishing
        ),
    );
    assert!(ok);
}

fn normalization_1d(h0: &KnownDensity) -> f64 {
    let grid = Grid1D::build(&h0.envelopes(), 0, &h0.jump_points(), Resolution::FINE_1D).unwrap();
    grid.integrate(|x| h0.eval(&[x]).unwrap())
}

#[test]
fn criterion_7_density_machinery() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let centers = Points::from_scalars(&[-1.0, 0.2, 0.5, 2.0]);
    let variants = [
        KnownDensity::GaussianMixture(
            GaussianMixtureH0::new(
                vec![0.3, 0.7],
                vec![vec![-1.0], vec![2.0]],
                vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 2.0)],
            )
            .unwrap(),
        ),
        KnownDensity::Kde(KdeH0::new(centers.clone(), 0.4, Kernel::Gaussian).unwrap()),
        KnownDensity::Kde(KdeH0::new(centers, 0.4, Kernel::Student { nu: 3.0 }).unwrap()),
        KnownDensity::PwlPushforward(PwlPushforwardH0::from_knots(vec![-1.0, 0.5], &[-0.5, 1.0], 0.5, 2.0).unwrap()),
    ];
    let mut worst_norm = variants.iter().map(|h| (normalization_1d(h) - 1.0).abs()).fold(0.0f64, f64::max);
    for _ in 0..50 {
        let h0 = random_h0(&mut rng, 1);
        let with_scale = rng.random_bool(0.5);
        let family = if with_scale {
            FamilyTag::LocationScaleGaussian
        } else {
            FamilyTag::isotropic_location(1, rng.random_range(0.3..2.0))
        };
        let k = rng.random_range(1..=3);
        let atoms = (0..k).map(|_| random_atom(&mut rng, 1, with_scale)).collect();
        let weights = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let g = MixingMeasure::normalized(atoms, weights).unwrap();
        let model = DeviatedMixture::new(h0, rng.random_range(0.0..=1.0), g, family).unwrap();
        let rule = QuadratureRule::for_models(&[&model]).unwrap();
        let mass = rule.integrate_values(&rule.tabulate(&model).unwrap());
        worst_norm = worst_norm.max((mass - 1.0).abs());
    }

    let p = DeviatedMixture::new(gaussian_1d(0.0, 1.0), 0.0, MixingMeasure::dirac(Atom::location(vec![2.0])), FamilyTag::isotropic_location(1, 1.0)).unwrap();
    let q = p.with_parameters(1.0, p.mixing().clone()).unwrap();
    let tv_true = 0.682_689_492_137_086;
    let hel_true = (1.0 - (-0.5f64).exp()).sqrt();
    let tv_quad = total_variation(&p, &q, DivergenceMethod::Quadrature1D).unwrap();
    let tv_mc = total_variation(&p, &q, DivergenceMethod::ImportanceMc { samples: 1_000_000, seed: 77 }).unwrap();
    let hel = hellinger(&p, &q, DivergenceMethod::Quadrature1D).unwrap();
    let elapsed = t.elapsed();

    let mc_z = (tv_mc.value - tv_true).abs() / tv_mc.standard_error;
    let ok = worst_norm <= 1e-6
        && (tv_quad.value - tv_true).abs() <= 1e-6
        && (0.682_689_5f64 - tv_true).abs() <= 1e-6
        && mc_z <= 3.0
        && (hel.value - hel_true).abs() <= 1e-6;
    report(
        7,
        ok,
        elapsed,
        &format!(
            "max |mass - 1| = {worst_norm:.1e}; TV quad {:.7}, MC {:.5} ({mc_z:.2} SE); Hellinger {:.7} vs closed form {hel_true:.7}",
            tv_quad.value, tv_mc.value, hel.value
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_hellinger_rate() {
    let _g = serial();
    let s = section4();
    let (ec, et) = &s.exact;
    let h = slope(et, ec, "hellinger", LambdaFilter::All);
    let ok = in_range(h, 0.3, 0.7);
    report(8, ok, s.elapsed, &format!("Hellinger slope {h:.3} in [0.3, 0.7]"));
    assert!(ok);
}

/// Independent evaluation of the system: for each order `alpha`, the sum
/// over triples of `c^2 a^n1 b^n2 / (n1! n2!)` with `n1 + 2 n2 = alpha`.
fn system_oracle(candidate: &[PolyTriple], r: usize) -> f64 {
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    (1..=r)
        .map(|alpha| {
            let lhs: f64 = candidate
                .iter()
                .map(|t| {
                    (0..=alpha / 2)
                        .map(|n2| {
                            let n1 = alpha - 2 * n2;
                            t.c * t.c * t.a.powi(n1 as i32) * t.b.powi(n2 as i32) / (fact(n1) * fact(n2))
                        })
                        .sum::<f64>()
                })
                .sum();
            lhs * lhs
        })
        .sum()
}

#[test]
fn criterion_9_polynomial_system() {
    let _g = serial();
    let t = Instant::now();
    let three = minimize_polynomial_residual(1, 3, 200, 9).unwrap();
    let four = minimize_polynomial_residual(1, 4, 200, 9).unwrap();
    let elapsed = t.elapsed();
    let check = polynomial_system_residual(1, 3, &three.candidate).unwrap();
    let oracle = system_oracle(&three.candidate, 3);
    let nontrivial = three.candidate.iter().any(|t| t.c != 0.0) && three.candidate.iter().any(|t| t.a != 0.0);
    let ok = three.residual < 1e-10
        && oracle < 1e-10
        && (check - oracle).abs() <= 1e-12
        && nontrivial
        && four.residual >= 1e-8
        && elapsed < Duration::from_secs(120);
    report(
        9,
        ok,
        elapsed,
        &format!("(k=1, r=3) residual {:.1e} (oracle {oracle:.1e}); (k=1, r=4) best of 200 restarts {:.1e}", three.residual, four.residual),
    );
    assert!(ok);
}
