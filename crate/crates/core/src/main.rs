use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use confound::cli::{cmd_adjust, cmd_analyze, cmd_simulate, cmd_split};
use confound::config::RunConfig;
use confound::metrics::MetricKind;
use confound::par::with_threads;
use confound::{Error, Result};

/// Detect and quantify confounding learned by a classifier.
#[derive(Parser)]
#[command(name = "confound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stratified train/test split preserving the confounder-by-label joint.
    Split(Common),
    /// Matching or inverse probability weighting of train and test files.
    Adjust(Common),
    /// Restricted vs unconfounded permutation nulls, unconfounded metric, p-value.
    Analyze(Common),
    /// Power and type I error simulation over configured scenarios.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of permutations per null distribution.
    #[arg(long)]
    b: Option<usize>,
    /// auc | accuracy | mse | mae
    #[arg(long)]
    metric: Option<MetricKind>,
    /// logistic | forest
    #[arg(long)]
    learner: Option<String>,
    /// match | ipw-weights | ipw-resample
    #[arg(long)]
    adjust: Option<String>,
    /// Target confounder-by-label joint; selects the baseline null as reference.
    #[arg(long)]
    target_joint: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Number of simulated data sets per scenario.
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Disable data parallelism.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(b) = self.b {
            cfg.permutations = b;
        }
        if let Some(m) = self.metric {
            cfg.metric = m;
        }
        if let Some(l) = &self.learner {
            cfg.set_learner(l)?;
        }
        if let Some(a) = &self.adjust {
            cfg.adjust = Some(a.parse()?);
        }
        for (dst, src) in [
            (&mut cfg.target_joint, &self.target_joint),
            (&mut cfg.input, &self.input),
            (&mut cfg.train, &self.train),
            (&mut cfg.test, &self.test),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        if let Some(r) = self.replicates {
            cfg.replicates = r;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if self.sequential {
            cfg.parallel = false;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (common, command) = match &cli.command {
        Command::Split(c) => (c, "split"),
        Command::Adjust(c) => (c, "adjust"),
        Command::Analyze(c) => (c, "analyze"),
        Command::Simulate(c) => (c, "simulate"),
    };
    let cfg = common.resolve()?;
    let out = &common.out;
    with_threads(cfg.threads, || -> Result<()> {
        match command {
            "split" => {
                let s = cmd_split(&cfg, out)?;
                println!("train\t{}\ntest\t{}", s.n_train, s.n_test);
            }
            "adjust" => {
                for o in cmd_adjust(&cfg, out)? {
                    println!(
                        "{}\timbalance\t{:.6}\t->\t{:.6}\trows\t{}\t->\t{}",
                        o.set,
                        o.before.imbalance(),
                        o.after.imbalance(),
                        o.before.total(),
                        o.after.total()
                    );
                }
            }
            "analyze" => println!("{}", cmd_analyze(&cfg, out)?.summary_line()),
            _ => {
                for c in cmd_simulate(&cfg, out)? {
                    let p05 = c.power_at(0.05).map_or("-".into(), |p| p.to_string());
                    println!("{}\tpower@0.05\t{}", c.scenario, p05);
                }
            }
        }
        Ok(())
    })?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            report_chain(&e);
            ExitCode::from(e.exit_code())
        }
    }
}

fn report_chain(e: &Error) {
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}
