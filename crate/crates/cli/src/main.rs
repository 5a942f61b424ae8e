use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coorad_core::pipeline::{
    cmd_counterfactual, cmd_coverage, cmd_estimate, cmd_fractionalization, cmd_montecarlo, cmd_simulate, RunManifest,
};
use coorad_core::scenario::Scenario;
use coorad_core::{Error, Result};

#[derive(Parser)]
#[command(name = "coorad", version, about = "Radio coverage, coordination and epidemic panel laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Master seed (the Monte Carlo base seed for `montecarlo`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Coverage shares per sub-prefecture and the transmitter roster.
    Coverage(Common),
    /// Epidemic panel, micro survey and game weights.
    Simulate(Common),
    /// Event study, DiD, pre-trend test and (with a survey) the micro models.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        survey: Option<PathBuf>,
    },
    /// Monte Carlo validation of the event study.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Number of replications.
        #[arg(long)]
        reps: Option<usize>,
        /// Simulate without the injected effect.
        #[arg(long)]
        null: bool,
    },
    /// Prevented cases under wider local coverage.
    Counterfactual {
        #[command(flatten)]
        common: Common,
        /// `results.json` or `event_study.csv` from `estimate`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        panel: PathBuf,
    },
    /// Ethnic fractionalization at every administrative level.
    Fractionalization(Common),
    /// Print the full default scenario.
    PrintDefaults,
}

fn scenario(c: &Common) -> Result<Scenario> {
    let mut s = match &c.scenario {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default(),
    };
    if let Some(seed) = c.seed {
        s.run.seed = seed;
        s.montecarlo.base_seed = seed;
    }
    if let Some(out) = &c.out {
        s.run.out_dir = out.clone();
    }
    if c.threads.is_some() {
        s.run.threads = c.threads;
    }
    Ok(s)
}

fn with_pool<T>(s: &Scenario, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    match s.run.threads {
        Some(0) => Err(Error::Parameter("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Parameter(e.to_string()))?
            .install(f),
        None => f(),
    }
}

type Job = Box<dyn FnOnce(&Scenario) -> Result<RunManifest> + Send>;

fn run(cli: Cli) -> Result<Option<RunManifest>> {
    let (common, job): (Common, Job) = match cli.command {
        Command::PrintDefaults => {
            print!("{}", Scenario::default().to_toml()?);
            return Ok(None);
        }
        Command::Coverage(c) => (c, Box::new(cmd_coverage)),
        Command::Simulate(c) => (c, Box::new(cmd_simulate)),
        Command::Fractionalization(c) => (c, Box::new(cmd_fractionalization)),
        Command::Estimate { common, panel, survey } => {
            (common, Box::new(move |s: &Scenario| cmd_estimate(s, &panel, survey.as_deref())))
        }
        Command::Counterfactual { common, results, panel } => {
            (common, Box::new(move |s: &Scenario| cmd_counterfactual(s, &results, &panel)))
        }
        Command::Montecarlo { common, reps, null } => (
            common,
            Box::new(move |s: &Scenario| {
                let mut s = s.clone();
                if let Some(r) = reps {
                    s.montecarlo.reps = r;
                }
                s.montecarlo.null |= null;
                cmd_montecarlo(&s)
            }),
        ),
    };
    let s = scenario(&common)?;
    s.validate()?;
    with_pool(&s, || job(&s)).map(Some)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Some(m)) => {
            for o in &m.outputs {
                println!("{}  {}", o.sha256, o.path);
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
