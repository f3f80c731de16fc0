use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use obslab::config::{Overrides, RunConfig};
use obslab::lie::RowMode;
use obslab::report;
use obslab::scenarios::ScenarioId;
use obslab::Error;

#[derive(Parser)]
#[command(name = "obslab", version, about = "Observability analysis of IMU-camera extrinsic calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lie-derivative observability rank at one trajectory sample.
    Rank(Common),
    /// Empirical observability Gramian along the trajectory.
    Gramian(Common),
    /// Covariance history of the calibration filter.
    Ekf(Common),
    /// All four built-in scenarios through every instrument.
    Table1(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Excited,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario (S1..S4); replaces the configured scenario.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Highest Lie-derivative order.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self, needs_scenario: bool) -> Result<RunConfig, Error> {
        let scenario = self.scenario.as_deref().map(str::parse::<ScenarioId>).transpose()?;
        if scenario == Some(ScenarioId::Custom) {
            return Err(Error::Config("--scenario takes a built-in id; custom scenarios go in the config".into()));
        }
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => match scenario {
                Some(id) => RunConfig::for_scenario(id),
                None if !needs_scenario => RunConfig::for_scenario(ScenarioId::S1),
                None => return Err(Error::Config("give --config or --scenario".into())),
            },
        };
        cfg.apply(&Overrides {
            scenario,
            mode: self.mode.map(|m| match m {
                Mode::Full => RowMode::Full,
                Mode::Excited => RowMode::Excited,
            }),
            order: self.order,
            seed: self.seed,
            out_dir: self.out.clone(),
        })?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Rank(c) => {
            let r = report::cmd_rank(&c.resolve(true)?)?;
            println!("{}: rank {} of {} ({:?} mode, order {})", r.scenario, r.rank, r.state_dim, r.mode, r.max_order);
        }
        Command::Gramian(c) => {
            let r = report::cmd_gramian(&c.resolve(true)?)?;
            print!("{}: deficient dimension {}", r.scenario, r.deficient_dimension);
            if let Some(a) = &r.ambiguity {
                print!(", alignment with d {:.6}", a.alignment);
            }
            println!();
        }
        Command::Ekf(c) => {
            let s = report::cmd_ekf(&c.resolve(true)?)?;
            println!("{}: shrinkage along d {:.2}%", s.scenario, 100.0 * s.directions[0].shrinkage);
        }
        Command::Table1(c) => {
            let t = report::cmd_table1(&c.resolve(false)?)?;
            print!("{}", report::render_table(&t));
            return Ok(t.exit_code());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
