use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use swarmsim_core::config::parse_config;
use swarmsim_core::harness::{cmd_crossval, cmd_reduced, cmd_run, cmd_sweep, cmd_validate, failure_json, Outcome};
use swarmsim_core::Result;

#[derive(Parser)]
#[command(name = "swarmsim", version, about = "Age-structured swarmer/swimmer simulations")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output` or ./out
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Verb {
    /// Binned system with diagnostics and weak residuals
    Run(Common),
    /// Reduced two-field system only
    Reduced(Common),
    /// Binned against reduced system at alpha and alpha/2
    Crossval(Common),
    /// Alpha-refinement study
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of alpha levels
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Hypothesis checks only
    Validate(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (name, common, levels) = match &cli.verb {
        Verb::Run(c) => ("run", c, None),
        Verb::Reduced(c) => ("reduced", c, None),
        Verb::Crossval(c) => ("crossval", c, None),
        Verb::Sweep { common, levels } => ("sweep", common, *levels),
        Verb::Validate(c) => ("validate", c, None),
    };
    let mut out = common.out.clone();
    let result = (|| -> Result<Outcome> {
        let mut cfg = parse_config(&common.config)?;
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        let dir = out.get_or_insert_with(|| cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"))).clone();
        match cli.verb {
            Verb::Run(_) => cmd_run(&cfg, &dir),
            Verb::Reduced(_) => cmd_reduced(&cfg, &dir),
            Verb::Crossval(_) => cmd_crossval(&cfg, &dir),
            Verb::Sweep { .. } => cmd_sweep(&cfg, levels, &dir),
            Verb::Validate(_) => cmd_validate(&cfg, &dir),
        }
    })();
    match result {
        Ok(o) => {
            println!("{}", serde_json::to_string_pretty(&o.summary).expect("summary serializes"));
            if o.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            println!("{}", failure_json(name, &e, out.as_deref()));
            ExitCode::from(2)
        }
    }
}
