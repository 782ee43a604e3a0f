use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use devmix_core::harness::{
    emit_outputs, fit_scenario_rates, run_scenario, scenarios, simulate_cell, verify_inverse_bound,
    FitSettings, InverseBoundSettings, PerturbationMode, ScenarioConfig,
};
use devmix_core::model::DivergenceMethod;
use devmix_core::quadrature::Resolution;
use devmix_core::{
    classify_regime, distinguishability_probe, em_fit, hellinger, minimize_polynomial_residual, r_bar,
    total_variation, ConstraintClass, Error, Points,
};
use serde::Serialize;

mod setup;

use setup::{load, parse_point, DensitySetup, FitSetup, ModelSetup};

/// Deviating mixture models: simulation, fitting and convergence-rate
/// experiments.
#[derive(Parser)]
#[command(name = "devmix", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides the config's seed where there is one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample from a scenario's true model.
    Simulate {
        #[arg(long)]
        n: usize,
        /// Replicate index; with the seed it fixes the data of one cell.
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Fit (lambda, G) to a CSV sample by EM.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        overrides: FitOverrides,
    },
    /// Run a convergence-rate experiment and write tables and plots.
    Rates {
        /// Shipped scenario to run when no --config is given.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        replications: Option<usize>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        #[arg(long)]
        record_wallclock: bool,
    },
    /// Check that V / W_bar does not vanish near the truth.
    VerifyInverseBound {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        r: u32,
        #[arg(long, default_value_t = 8)]
        directions: usize,
        /// Epsilon levels 2^0 .. 2^-(levels-1).
        #[arg(long, default_value_t = 9)]
        levels: u32,
    },
    /// Overlap regimes and weak-identifiability tools.
    Regimes {
        #[command(subcommand)]
        action: RegimesAction,
    },
    /// Evaluate or sample the known density h0.
    Density {
        #[command(subcommand)]
        action: DensityAction,
    },
    /// Evaluate, sample or compare deviated mixtures.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    OverFitSplit,
    RegimeBRidge,
}

impl From<Mode> for PerturbationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exact => PerturbationMode::ExactFit,
            Mode::OverFitSplit => PerturbationMode::OverFitSplit,
            Mode::RegimeBRidge => PerturbationMode::RegimeBRidge,
        }
    }
}

/// Command-line overrides of the config's `[fit]` table.
#[derive(Args)]
struct FitOverrides {
    /// Number of fitted atoms.
    #[arg(long = "K", alias = "k")]
    k: Option<usize>,
    /// Require exactly K atoms (otherwise at most K).
    #[arg(long)]
    exact: bool,
    /// Weight floor for every fitted atom.
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

impl FitOverrides {
    fn apply(&self, base: Option<FitSettings>) -> Result<FitSettings> {
        let mut fit = match (base, self.k) {
            (Some(f), _) => f,
            (None, Some(k)) => FitSettings::new(ConstraintClass::OverFit { k }),
            (None, None) => return Err(Error::input("no [fit] table in the config and no --K given").into()),
        };
        if self.k.is_some() || self.exact || self.c0.is_some() {
            let k = self.k.unwrap_or(fit.constraint.components());
            let exact = self.exact || (self.k.is_none() && fit.constraint.is_exact());
            let c0 = self.c0.or(fit.constraint.weight_floor());
            fit.constraint = match (exact, c0) {
                (true, None) => ConstraintClass::ExactFit { k },
                (false, None) => ConstraintClass::OverFit { k },
                (true, Some(c0)) => ConstraintClass::ExactFitFloor { k, c0 },
                (false, Some(c0)) => ConstraintClass::OverFitFloor { k, c0 },
            };
        }
        if let Some(v) = self.restarts {
            fit.restarts = v;
        }
        if let Some(v) = self.max_iter {
            fit.max_iterations = v;
        }
        if let Some(v) = self.tol {
            fit.tolerance = v;
        }
        Ok(fit)
    }
}

#[derive(Subcommand)]
enum RegimesAction {
    /// Classify the overlap between h0 and G*.
    Classify,
    /// Weak-identifiability order for k extra atoms.
    RBar {
        #[arg(long)]
        k: i64,
    },
    /// Multistart minimization of the order-r polynomial system.
    Poly {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 200)]
        restarts: usize,
    },
    /// Linear-independence probe of h0 against kernel derivatives at the
    /// atoms of G*.
    Probe {
        #[arg(long)]
        r: usize,
    },
}

#[derive(Subcommand)]
enum DensityAction {
    /// h0 at a point, e.g. --x 0.5,1.0
    Eval {
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
    Sample {
        #[arg(long)]
        n: usize,
    },
}

#[derive(Subcommand)]
enum ModelAction {
    Pdf {
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
    Sample {
        #[arg(long)]
        n: usize,
    },
    /// Total variation to the model in another config file.
    Tv {
        #[arg(long)]
        other: PathBuf,
        /// Use importance Monte Carlo with this many draws.
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Hellinger distance to the model in another config file.
    Hellinger {
        #[arg(long)]
        other: PathBuf,
        #[arg(long)]
        mc_samples: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let numerical = err
                .chain()
                .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Numerical(_))));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn config_path(global: &Global) -> Result<&Path> {
    match &global.config {
        Some(p) => Ok(p),
        None => Err(Error::input("this command needs --config <path>").into()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    Ok(())
}

fn write_out<T: Serialize>(global: &Global, name: &str, value: &T) -> Result<()> {
    if let Some(dir) = &global.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn write_points(global: &Global, name: &str, points: &Points) -> Result<()> {
    match &global.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(name);
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            points.write_csv(io::BufWriter::new(file))?;
            eprintln!("wrote {}", path.display());
        }
        None => points.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn divergence_method(dim: usize, mc_samples: Option<usize>, seed: u64) -> DivergenceMethod {
    match mc_samples {
        Some(samples) => DivergenceMethod::ImportanceMc { samples, seed },
        None => DivergenceMethod::default_for(dim, seed),
    }
}

fn load_scenario(global: &Global, name: Option<&str>) -> Result<ScenarioConfig> {
    match (&global.config, name) {
        (Some(path), _) => Ok(ScenarioConfig::load(path)?),
        (None, Some(name)) => scenarios::by_name(name).ok_or_else(|| {
            let known: Vec<String> = scenarios::library().into_iter().map(|s| s.name).collect();
            Error::input(format!("unknown scenario {name:?}; shipped: {}", known.join(", "))).into()
        }),
        (None, None) => bail!(Error::input("rates needs --config <path> or --scenario <name>")),
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate { n, replicate } => {
            let mut sc = ScenarioConfig::load(config_path(g)?)?;
            if let Some(seed) = g.seed {
                sc.master_seed = seed;
            }
            let data = simulate_cell(&sc.truth()?, sc.master_seed, n, replicate)?;
            write_points(g, "samples.csv", &data)
        }
        Command::Fit { data, overrides } => {
            let setup: FitSetup = load(config_path(g)?)?;
            let points = Points::read_csv_path(&data)?;
            let config = overrides.apply(setup.fit)?.em_config(&setup.family, g.seed.unwrap_or(0));
            let pool = rayon_pool(g.jobs)?;
            let fit = pool.install(|| em_fit(&points, &setup.h0, &config))?;
            write_out(g, "fit.json", &fit)?;
            print_json(&fit)
        }
        Command::Rates {
            scenario,
            replications,
            n_grid,
            record_wallclock,
        } => {
            let mut sc = load_scenario(g, scenario.as_deref())?;
            if let Some(seed) = g.seed {
                sc.master_seed = seed;
            }
            if let Some(r) = replications {
                sc.replications = r;
            }
            if let Some(grid) = n_grid {
                sc.n_grid = grid;
            }
            sc.record_wallclock |= record_wallclock;
            sc.validate()?;
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}_out", sc.name)));
            let table = run_scenario(&sc, g.jobs)?;
            let mut fits = Vec::new();
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "metric,filter,slope,target,tolerance,r_squared,pass")?;
            for (spec, fit) in fit_scenario_rates(&sc, &table) {
                match fit {
                    Ok(f) => {
                        writeln!(
                            stdout,
                            "{},{},{:.4},{:.4},{},{:.3},{}",
                            f.metric,
                            f.filter.label(),
                            f.slope,
                            f.theoretical_exponent,
                            f.tolerance,
                            f.r_squared,
                            f.pass
                        )?;
                        fits.push(f);
                    }
                    Err(e) => eprintln!("skipped {} ({}): {e}", spec.metric, spec.filter.label()),
                }
            }
            let failed = table.rows.iter().filter(|r| r.failed).count();
            if failed > 0 {
                eprintln!("{failed} of {} rows failed", table.len());
            }
            for p in emit_outputs(&table, &fits, &out)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::VerifyInverseBound {
            mode,
            r,
            directions,
            levels,
        } => {
            let setup: ModelSetup = load(config_path(g)?)?;
            let mut settings = InverseBoundSettings::new(mode.into(), r);
            settings.directions = directions;
            settings.epsilon_levels = (0..levels as i32).map(|j| 0.5f64.powi(j)).collect();
            settings.seed = g.seed.unwrap_or(0);
            settings.atom_tol = setup.atom_tol;
            let model = setup.model()?;
            let report = rayon_pool(g.jobs)?.install(|| verify_inverse_bound(&model, &settings))?;
            write_out(g, "inverse_bound.json", &report)?;
            for s in &report.summary {
                eprintln!(
                    "{}: min ratio {:.3e}, non-vanishing in every direction: {}, smallest collapse factor {:.3}",
                    s.denominator, s.global_min_ratio, s.all_non_vanishing, s.min_collapse_factor
                );
            }
            print_json(&report)
        }
        Command::Regimes { action } => match action {
            RegimesAction::Classify => {
                let s: ModelSetup = load(config_path(g)?)?;
                print_json(&classify_regime(&s.h0, s.lambda_star, &s.g_star, &s.family, s.atom_tol)?)
            }
            RegimesAction::RBar { k } => print_json(&r_bar(k)?),
            RegimesAction::Poly { k, r, restarts } => {
                let best = rayon_pool(g.jobs)?.install(|| minimize_polynomial_residual(k, r, restarts, g.seed.unwrap_or(0)))?;
                print_json(&best)
            }
            RegimesAction::Probe { r } => {
                let s: ModelSetup = load(config_path(g)?)?;
                let res = (s.h0.dim() == 2).then_some(Resolution::SMOOTH_2D);
                print_json(&distinguishability_probe(&s.h0, s.g_star.atoms(), &s.family, r, res)?)
            }
        },
        Command::Density { action } => {
            let s: DensitySetup = load(config_path(g)?)?;
            match action {
                DensityAction::Eval { x } => {
                    let x = parse_point(&x)?;
                    println!("{}", s.h0.eval(&x)?);
                    Ok(())
                }
                DensityAction::Sample { n } => write_points(g, "h0_samples.csv", &s.h0.sample(n, g.seed.unwrap_or(0))?),
            }
        }
        Command::Model { action } => {
            let s: ModelSetup = load(config_path(g)?)?;
            let model = s.model()?;
            let seed = g.seed.unwrap_or(0);
            match action {
                ModelAction::Pdf { x } => {
                    println!("{}", model.pdf(&parse_point(&x)?)?);
                    Ok(())
                }
                ModelAction::Sample { n } => write_points(g, "model_samples.csv", &model.sample(n, seed)?),
                ModelAction::Tv { other, mc_samples } => {
                    let other = load::<ModelSetup>(&other)?.model()?;
                    let method = divergence_method(model.dim(), mc_samples, seed);
                    print_json(&total_variation(&model, &other, method).context("total variation")?)
                }
                ModelAction::Hellinger { other, mc_samples } => {
                    let other = load::<ModelSetup>(&other)?.model()?;
                    let method = divergence_method(model.dim(), mc_samples, seed);
                    print_json(&hellinger(&model, &other, method).context("hellinger distance")?)
                }
            }
        }
    }
}

fn rayon_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("cannot start worker pool")
}
