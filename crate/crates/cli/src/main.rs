use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mirrorflow::Potential;
use mirrorflow_cli::commands;
use mirrorflow_cli::config::{DatasetSpec, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "mirrorflow",
    version,
    about = "Mirror-flow training experiments for shallow networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the first (width, potential, seed) cell of the config.
    Train(Overrides),
    /// Solve the variational problem of every configured potential.
    Variational(Overrides),
    /// Run the sweep and write report.json only.
    Compare(Overrides),
    /// Kernel diagnostics of one trained cell.
    Diagnose(Overrides),
    /// PCA of one cell's parameter trajectory.
    Pca(Overrides),
    /// List the built-in potentials.
    Potentials,
    /// Full sweep with every artifact.
    Run(Overrides),
}

/// Flags override the matching config fields.
#[derive(Args)]
struct Overrides {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (config field `outputs`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed replacing the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep cells trained concurrently.
    #[arg(long)]
    workers: Option<usize>,
    /// Dataset preset: fig1 or fig2.
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated widths.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Potential strings, e.g. `quadratic`, `scaled:pow:p=4,omega=1`, `phi2`. Repeatable.
    #[arg(long = "potential")]
    potentials: Option<Vec<String>>,
    /// Training step budget per cell.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Learning-rate constant for every potential; the step is eta0 / width.
    #[arg(long)]
    eta0: Option<f64>,
    /// Training stops once the loss is at or below this value.
    #[arg(long)]
    loss_threshold: Option<f64>,
}

impl Overrides {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.outputs = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(p) = &self.preset {
            cfg.dataset = DatasetSpec::Preset(p.clone());
        }
        if let Some(w) = &self.widths {
            cfg.widths = w.clone();
        }
        if let Some(ps) = &self.potentials {
            cfg.potentials = ps
                .iter()
                .map(|p| p.parse::<Potential<f64>>())
                .collect::<Result<_, _>>()?;
        }
        if let Some(m) = self.max_steps {
            cfg.train.max_steps = m;
        }
        if let Some(e) = self.eta0 {
            cfg.train.eta0 = Some(e);
        }
        if let Some(l) = self.loss_threshold {
            cfg.train.loss_threshold = l;
        }
        Ok(cfg)
    }
}

type Handler = fn(&ExperimentConfig, &std::path::Path) -> Result<bool>;

fn dispatch(cli: Cli) -> Result<bool> {
    let (o, f): (&Overrides, Handler) = match &cli.command {
        Command::Potentials => {
            print!("{}", commands::potentials());
            return Ok(true);
        }
        Command::Train(o) => (o, commands::train_cell),
        Command::Variational(o) => (o, commands::variational),
        Command::Compare(o) => (o, commands::compare),
        Command::Diagnose(o) => (o, commands::diagnose),
        Command::Pca(o) => (o, commands::pca),
        Command::Run(o) => (o, commands::run),
    };
    let cfg = o.config()?;
    let out = cfg.outputs.clone();
    let ok = f(&cfg, &out)?;
    log::info!("artifacts written to {}", out.display());
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some cells failed or did not converge; see the report");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
