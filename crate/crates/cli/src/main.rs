use std::path::PathBuf;
use std::process::ExitCode;

use bqrnn_cli::experiment::{check_manifest, load_run_input, run_experiment};
use bqrnn_cli::{report, CliError, ExperimentConfig, OUTPUT_ROOT_ENV};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bqrnn", version, about = "Bayesian quantile regression network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file or from an earlier run's manifest.toml.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check a config file and print it with every default filled in.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the tables of a finished run.
    Report { run_dir: PathBuf },
}

/// Command-line values that replace the matching config fields.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    name: Option<String>,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    /// Comma-separated subset of qr, bqr, qrnn, bqrnn.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    hidden_units: Option<usize>,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    burn_in_fraction: Option<f64>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    mh_step_sd: Option<f64>,
    /// Parent directory of the run directory (default: $BQRNN_OUTPUT_ROOT, then ./runs).
    #[arg(long)]
    output_dir: Option<String>,
}

impl Overrides {
    fn is_empty(&self) -> bool {
        self.seed.is_none()
            && self.name.is_none()
            && self.taus.is_none()
            && self.models.is_none()
            && self.hidden_units.is_none()
            && self.n_iter.is_none()
            && self.burn_in_fraction.is_none()
            && self.thin.is_none()
            && self.mh_step_sd.is_none()
            && self.output_dir.is_none()
    }

    fn apply(self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),+ $(,)?) => {
                $(if let Some(v) = self.$src { cfg.$($dst).+ = v; })+
            };
        }
        set!(
            seed => seed,
            name => name,
            taus => taus,
            models => models,
            hidden_units => hidden_units,
            n_iter => chain.n_iter,
            burn_in_fraction => chain.burn_in_fraction,
            thin => chain.thin,
            mh_step_sd => chain.mh_step_sd,
        );
        if self.output_dir.is_some() {
            cfg.output_dir = self.output_dir;
        }
    }
}

fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| std::env::var(OUTPUT_ROOT_ENV).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| "runs".into())
        .into()
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { config, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            overrides.apply(&mut cfg);
            cfg.validate().map_err(CliError::Invalid)?;
            println!("# configuration is valid; resolved values:");
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Run { config, overrides } => {
            let (mut cfg, manifest) = load_run_input(&config)?;
            if let Some(m) = &manifest {
                check_manifest(m)?;
            }
            if !overrides.is_empty() {
                overrides.apply(&mut cfg);
            }
            let (dir, outcome) = run_experiment(&cfg, &output_root(&cfg))?;
            println!("Run written to {}\n", dir.display());
            print!("{}", outcome.report.to_table());
            Ok(())
        }
        Command::Report { run_dir } => {
            print!("{}", report::render(&run_dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
