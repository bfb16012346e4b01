use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semibandit::domain::derived_rng;
use semibandit::environments::{
    load_policy_class, lower_bound_instance, random_sparse_instance, save_policy_class, LowerBoundSpec,
};
use semibandit::harness::{
    all_subsets_class, diagnose, error_code, random_list_problem, run_experiment, ExperimentConfig, ExperimentError,
    DIAGNOSE_ITERATIONS,
};
use semibandit::{ActionSubset, Error, Instance, PolicyClass};

#[derive(Parser)]
#[command(name = "semibandit", version, about = "Contextual combinatorial semi-bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its CSV and JSON outputs.
    Run { config: PathBuf },
    /// Print exact gaps, smoothed marginals and variance audits as JSON.
    Diagnose {
        instance: PathBuf,
        policies: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value_t = DIAGNOSE_ITERATIONS)]
        iterations: usize,
    },
    /// Generate an instance file and a matching policy file.
    #[command(subcommand)]
    Gen(Gen),
}

#[derive(Subcommand)]
enum Gen {
    /// Deterministic-reward instance with a class containing the best policy.
    Random {
        #[arg(long = "K")]
        k: usize,
        #[arg(short, long)]
        m: usize,
        #[arg(short, long)]
        s: f64,
        #[arg(long, default_value_t = 4)]
        contexts: usize,
        #[arg(long, default_value_t = 8)]
        n_policies: usize,
        #[command(flatten)]
        out: GenOutput,
    },
    /// Single-context Bernoulli instance with a planted good subset.
    LowerBound {
        #[arg(long = "K")]
        k: usize,
        #[arg(short, long)]
        m: usize,
        #[arg(short, long)]
        s: f64,
        #[arg(long)]
        eps: f64,
        /// Comma-separated good actions; a random subset if omitted.
        #[arg(long, value_delimiter = ',')]
        good: Option<Vec<usize>>,
        #[command(flatten)]
        out: GenOutput,
    },
    /// List-classification instance with binary rewards.
    List {
        #[arg(long = "K")]
        k: usize,
        #[arg(short, long)]
        m: usize,
        #[arg(short, long)]
        s: usize,
        #[arg(long, default_value_t = 4)]
        contexts: usize,
        #[arg(long, default_value_t = 8)]
        n_policies: usize,
        #[command(flatten)]
        out: GenOutput,
    },
}

#[derive(Args)]
struct GenOutput {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instance output path.
    #[arg(short, long)]
    output: PathBuf,
    /// Policy output path, `<output stem>.policies.json` by default.
    #[arg(long)]
    policies: Option<PathBuf>,
}

struct Failure {
    exit: u8,
    code: &'static str,
    message: String,
}

impl Failure {
    fn config(e: Error) -> Self {
        Self { exit: 2, code: error_code(&e), message: e.to_string() }
    }

    fn runtime(e: Error) -> Self {
        Self { exit: 3, code: error_code(&e), message: e.to_string() }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Self { exit: e.exit_code() as u8, code: e.code(), message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => run(&config),
        Command::Diagnose { instance, policies, gamma, iterations } => {
            run_diagnose(&instance, &policies, gamma, iterations)
        }
        Command::Gen(gen) => run_gen(gen),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", f.code, f.message);
            ExitCode::from(f.exit)
        }
    }
}

fn run(path: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(path)?;
    let result = run_experiment(&cfg)?;
    let dir = cfg.resolved_output_dir();
    emit(&format!(
        "{}: {} rows, {} errors, written to {}",
        result.kind.name(),
        result.rows.len(),
        result.errors.len(),
        dir.display()
    ))?;
    if let Some(first) = result.errors.first() {
        return Err(Failure {
            exit: 3,
            code: "E_TRIAL",
            message: format!(
                "{} trial(s) failed; first: trial {} [{}] {}",
                result.errors.len(),
                first.trial,
                first.code,
                first.message
            ),
        });
    }
    Ok(())
}

fn run_diagnose(instance: &Path, policies: &Path, gamma: f64, iterations: usize) -> Result<(), Failure> {
    if !(gamma > 0.0 && gamma <= 1.0) || iterations == 0 {
        return Err(Failure::config(Error::InvalidParameter(format!(
            "need 0 < gamma ≤ 1 and iterations > 0, got {gamma} and {iterations}"
        ))));
    }
    let inst = Instance::load(instance).map_err(Failure::config)?;
    let cls = load_policy_class(policies).map_err(Failure::config)?;
    let report = diagnose(&inst, &cls, gamma, iterations).map_err(|e| match e {
        Error::InvalidPolicyClass(_) | Error::InvalidInstance(_) => Failure::config(e),
        e => Failure::runtime(e),
    })?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::runtime(e.into()))?;
    emit(&text)
}

fn run_gen(gen: Gen) -> Result<(), Failure> {
    let (problem, out) = match gen {
        Gen::Random { k, m, s, contexts, n_policies, out } => {
            let mut rng = derived_rng(out.seed, 0);
            (random_sparse_instance(k, m, s, contexts, n_policies, &mut rng), out)
        }
        Gen::LowerBound { k, m, s, eps, good, out } => {
            let mut rng = derived_rng(out.seed, 0);
            let problem = (|| {
                let good_set = match good {
                    Some(g) => ActionSubset::new(g, k)?,
                    None => semibandit::domain::sample_uniform_action(k, m, &mut rng)?,
                };
                let inst = lower_bound_instance(&LowerBoundSpec::new(k, m, s, eps, good_set)?)?;
                Ok((inst, all_subsets_class(k, m)?))
            })();
            (problem, out)
        }
        Gen::List { k, m, s, contexts, n_policies, out } => {
            let mut rng = derived_rng(out.seed, 0);
            (random_list_problem(k, m, s, contexts, n_policies, &mut rng), out)
        }
    };
    let (inst, cls) = problem.map_err(Failure::config)?;
    write_problem(&inst, &cls, &out)
}

fn write_problem(inst: &Instance, cls: &PolicyClass, out: &GenOutput) -> Result<(), Failure> {
    let policies = out.policies.clone().unwrap_or_else(|| default_policy_path(&out.output));
    inst.save(&out.output).map_err(Failure::runtime)?;
    save_policy_class(cls, &policies).map_err(Failure::runtime)?;
    emit(&format!("wrote {} and {}", out.output.display(), policies.display()))
}

/// Prints a line to stdout; a closed pipe on the reading end is not an error.
fn emit(line: &str) -> Result<(), Failure> {
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::runtime(e.into())),
        _ => Ok(()),
    }
}

fn default_policy_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("instance");
    output.with_file_name(format!("{stem}.policies.json"))
}
