use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stm::commands::{self, SampleSizeArgs};
use stm::lab::Scenario;
use stm::spec::Overrides;
use stm_core::concentration::{NormMethod, Normalization, Recipe};
use stm_core::driver::Mode;
use stm_core::sampling::{Kappas, Spreads};
use stm_core::Scheme;

#[derive(Parser)]
#[command(name = "stm", version, about = "Stochastic tensor method experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    With,
    Without,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::With => Scheme::WithReplacement,
            SchemeArg::Without => Scheme::WithoutReplacement,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Verify,
    Production,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeArg {
    RankOne,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizationArg {
    Sum,
    Mean,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimizer on a JSON run spec.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Use every component for every derivative.
        #[arg(long)]
        full_batch: bool,
    },
    /// Print the sample plan for the given accuracy and confidence.
    SampleSize {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        /// Accuracy fractions for gradient, Hessian and third derivative.
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.25, 0.5])]
        kappas: Vec<f64>,
        /// Lipschitz constants of f_i, its gradient and its Hessian.
        #[arg(long, value_delimiter = ',', required = true)]
        lipschitz: Vec<f64>,
        #[arg(long)]
        dim: usize,
        /// Number of components N.
        #[arg(long)]
        population: Option<usize>,
        #[arg(long, value_enum, default_value = "without")]
        scheme: SchemeArg,
    },
    /// Monte Carlo tail estimate for a tensor concentration bound.
    Concentration {
        /// JSON scenario; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
        #[arg(long, value_enum)]
        recipe: Option<RecipeArg>,
        #[arg(long, value_enum)]
        normalization: Option<NormalizationArg>,
        #[arg(long)]
        trials: Option<usize>,
        /// Bracket each order-3, dimension-3 norm with a sphere grid.
        #[arg(long)]
        grid_resolution: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "stm-out")]
        out: PathBuf,
        /// Also tabulate the mean-normalized deviations of the same draws.
        #[arg(long)]
        with_mean: bool,
    },
    /// Run the invariant suite and print pass/fail JSON.
    Check {
        names: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn scenario(cmd: &Command) -> anyhow::Result<Scenario> {
    let Command::Concentration {
        config,
        order,
        dim,
        population,
        n,
        scheme,
        recipe,
        normalization,
        trials,
        grid_resolution,
        seed,
        ..
    } = cmd
    else {
        unreachable!()
    };
    let mut sc = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("invalid scenario {}: {e}", p.display()))?
        }
        None => Scenario::default(),
    };
    macro_rules! set {
        ($f:ident, $v:expr) => {
            if let Some(v) = $v {
                sc.$f = v;
            }
        };
    }
    set!(order, *order);
    set!(dim, *dim);
    set!(population, *population);
    set!(n, *n);
    set!(scheme, scheme.map(Scheme::from));
    set!(
        recipe,
        recipe.map(|r| match r {
            RecipeArg::RankOne => Recipe::RankOne,
            RecipeArg::Gaussian => Recipe::Gaussian,
        })
    );
    set!(
        normalization,
        normalization.map(|r| match r {
            NormalizationArg::Sum => Normalization::Sum,
            NormalizationArg::Mean => Normalization::Mean,
        })
    );
    set!(trials, *trials);
    set!(norm, grid_resolution.map(|resolution| NormMethod::Grid { resolution }));
    set!(seed, *seed);
    Ok(sc)
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Run {
            config,
            seed,
            out: dir,
            mode,
            scheme,
            max_iters,
            full_batch,
        } => {
            let o = Overrides {
                seed,
                out: dir,
                mode: mode.map(|m| match m {
                    ModeArg::Verify => Mode::Verify,
                    ModeArg::Production => Mode::Production,
                }),
                scheme: scheme.map(Scheme::from),
                max_iters,
                full_batch,
            };
            commands::cmd_run(&config, &o, &mut out)
        }
        Command::SampleSize {
            eps,
            delta,
            kappas,
            lipschitz,
            dim,
            population,
            scheme,
        } => {
            if kappas.len() != 3 || lipschitz.len() != 3 {
                anyhow::bail!("--kappas and --lipschitz take three comma-separated values");
            }
            let a = SampleSizeArgs {
                eps,
                delta,
                kappas: Kappas {
                    g: kappas[0],
                    b: kappas[1],
                    t: kappas[2],
                },
                spreads: Spreads {
                    g: lipschitz[0],
                    b: lipschitz[1],
                    t: 2.0 * lipschitz[2],
                },
                dim,
                population,
                scheme: scheme.into(),
            };
            commands::cmd_sample_size(&a, &mut out)
        }
        c @ Command::Concentration { .. } => {
            let sc = scenario(&c)?;
            let Command::Concentration { out: dir, with_mean, .. } = c else { unreachable!() };
            commands::cmd_concentration(&sc, &dir, with_mean, &mut out)
        }
        Command::Check { names, seed } => commands::cmd_check(&names, seed, &mut out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // usage errors exit 1; 2 is reserved for exhausted iteration budgets
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_ERROR as u8 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_ERROR as u8)
        }
    }
}
