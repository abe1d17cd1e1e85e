use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppg_core::harness::{
    self, gradcheck, output_root, plot, run_experiment, run_sweep, ExperimentConfig, HarnessError, PlotOptions,
    SweepSuite, GRADCHECK_TOLERANCE,
};
use ppg_core::phasic::Variant;

#[derive(Parser)]
#[command(name = "ppg", version, about = "PPG and PPO training runs, sweeps and plots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML config; defaults apply to anything it leaves out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set phasic.n_pi=8`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set phasic.variant=...`.
    #[arg(long)]
    variant: Option<Variant>,
    /// Comma-separated seeds, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Environment-step budget per seed.
    #[arg(long)]
    steps: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut overrides = self.overrides.clone();
        if let Some(v) = self.variant {
            overrides.push(format!("phasic.variant=\"{v}\""));
        }
        if let Some(s) = &self.seeds {
            let list: Vec<String> = s.iter().map(u64::to_string).collect();
            overrides.push(format!("harness.seeds=[{}]", list.join(",")));
        }
        if let Some(n) = self.steps {
            overrides.push(format!("phasic.total_timesteps={n}"));
        }
        match &self.config {
            Some(p) => ExperimentConfig::load(p, &overrides),
            None => ExperimentConfig::from_overrides(&overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one config.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory (default: $PPG_OUTPUT_ROOT/<label>, root `runs`).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run a preset comparison suite.
    Sweep {
        /// One of: policy-sr, value-sr, aux-freq, kl-vs-clip, single-net,
        /// ppo-sr, shared-vs-separate, aux-value-skip.
        suite: String,
        #[command(flatten)]
        config: ConfigArgs,
        /// Sweep directory (default: $PPG_OUTPUT_ROOT/<suite>).
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Draw learning curves from run directories as SVG.
    Plot {
        /// Run directories (with seed-*/metrics.csv) or metrics.csv files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value = "ep_return_mean")]
        metric: String,
        /// EMA smoothing coefficient in [0, 1).
        #[arg(long, default_value_t = 0.9)]
        ema: f64,
        #[arg(long)]
        title: Option<String>,
    },
    /// Parse and validate a config, then print it fully resolved.
    ValidateConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare analytic loss gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run { config, output } => {
            let cfg = config.load()?;
            let dir = output.unwrap_or_else(|| harness::run::run_dir(&cfg, &output_root()));
            let summary = run_experiment(&cfg, &dir)?;
            for s in &summary.seeds {
                println!("seed {}: final return {:.4} ({} steps)", s.seed, s.final_return, s.env_steps);
            }
            println!("{}", summary.line());
            println!("results in {}", dir.display());
        }
        Command::Sweep { suite, config, output } => {
            let suite: SweepSuite = suite.parse()?;
            let cfg = config.load()?;
            let dir = output.unwrap_or_else(|| output_root().join(suite.name()));
            for s in run_sweep(suite, &cfg, &dir)? {
                println!("{}", s.line());
            }
            println!("plot: {}", dir.join(format!("{}.svg", suite.name())).display());
        }
        Command::Plot {
            runs,
            output,
            metric,
            ema,
            title,
        } => {
            plot(&runs, &output, &PlotOptions { metric, ema, title })?;
            println!("wrote {}", output.display());
        }
        Command::ValidateConfig { config } => {
            let cfg = config.load()?;
            print!("{}", cfg.to_toml());
        }
        Command::Gradcheck { instances, seed } => {
            let report = gradcheck(seed, instances);
            println!("{} parameters, {instances} instances, tolerance {GRADCHECK_TOLERANCE:e}", report.num_params);
            for c in &report.checks {
                let ok = if c.max_rel_error <= GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
                println!("{:<8} max relative error {:.3e}  {ok}", c.loss, c.max_rel_error);
            }
            if !report.passed() {
                return Err(HarnessError::Gradcheck("see table above".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
