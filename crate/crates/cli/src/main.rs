mod pipeline;
mod weights;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

/// Environment variable holding the worker-thread count for frame-parallel stages.
pub const THREADS_ENV: &str = "SOFTRIGID_THREADS";

#[derive(Debug, Parser)]
#[command(name = "softrigid", version, about = "Soft-rigid hybrid-link motion analysis pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (markers, states, GRF, torques, stance) and its model.
    Simulate(SimulateArgs),
    /// Marker trajectories to generalized-state trajectories.
    Ik(IkArgs),
    /// State trajectories to joint torques and ground reaction forces.
    Id(IdArgs),
    /// Joint torques (and optional EMG) to muscle tensions.
    Muscle(MuscleArgs),
    /// Compare an estimated table with ground truth and report RMSE/rRMSE.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// static, pendulum-drop or scripted-gait.
    #[arg(long)]
    scenario: String,
    /// Model document; the bundled reference model when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory for model.json and the dataset tables.
    #[arg(long)]
    output: PathBuf,
    /// Integration step in seconds.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated duration in seconds.
    #[arg(long, default_value_t = 1.2)]
    duration: f64,
    /// Standard deviation of the marker noise in metres.
    #[arg(long, default_value_t = 1e-3)]
    noise: f64,
    /// Record every n-th integration step.
    #[arg(long, default_value_t = 5)]
    sample_every: usize,
    /// Friction coefficient applied to every contact of the model.
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Debug, Args)]
struct IkArgs {
    #[arg(long)]
    model: PathBuf,
    /// Marker table.
    #[arg(long)]
    input: PathBuf,
    /// State table to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    weights_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IdArgs {
    #[arg(long)]
    model: PathBuf,
    /// State table.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for grf.csv, torques.csv and id_report.csv.
    #[arg(long)]
    output: PathBuf,
    /// Stance table selecting the active contacts per frame; contacts are
    /// detected from height and speed when omitted.
    #[arg(long)]
    stance_mask: Option<PathBuf>,
    /// Friction coefficient overriding the model's contacts.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    weights_file: Option<PathBuf>,
    /// Contact detection height threshold in metres.
    #[arg(long, default_value_t = 5e-3)]
    height_eps: f64,
    /// Contact detection speed threshold in m/s.
    #[arg(long, default_value_t = 5e-2)]
    speed_eps: f64,
}

#[derive(Debug, Args)]
struct MuscleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Torque table with one column per joint.
    #[arg(long)]
    input: PathBuf,
    /// State table sampled at the same times as the torques.
    #[arg(long)]
    states: PathBuf,
    /// EMG table with one column per muscle.
    #[arg(long)]
    emg: Option<PathBuf>,
    /// Tension table to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    weights_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Estimated table.
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth table with the same times.
    #[arg(long)]
    truth: PathBuf,
    /// Restrict the comparison to stance frames (requires --model).
    #[arg(long)]
    stance_mask: Option<PathBuf>,
    /// Model used for stance groups and the body-weight check.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Report file; the report is printed to stdout either way.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Core(softrigid::Error),
    Io { path: PathBuf, source: std::io::Error },
    Parse { location: String, message: String },
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn record(&self, command: &str) -> Value {
        let (kind, message, frame) = match self {
            CliError::Core(e) => {
                let frame = match e {
                    softrigid::Error::Frame { index, .. } => Some(*index),
                    _ => None,
                };
                (core_kind(e), e.to_string(), frame)
            }
            CliError::Io { path, source } => ("Io", format!("{}: {source}", path.display()), None),
            CliError::Parse { location, message } => ("Parse", format!("{location}: {message}"), None),
            CliError::Usage(m) => ("Usage", m.clone(), None),
        };
        json!({ "status": "error", "command": command, "kind": kind, "message": message, "frame": frame })
    }
}

impl From<softrigid::Error> for CliError {
    fn from(e: softrigid::Error) -> Self {
        CliError::Core(e)
    }
}

fn core_kind(e: &softrigid::Error) -> &'static str {
    use softrigid::Error::*;
    match e {
        AngleNearPi { .. } => "AngleNearPi",
        OutOfRange { .. } => "OutOfRange",
        DimensionMismatch { .. } => "DimensionMismatch",
        UnknownBody(_) => "UnknownBody",
        SingularMass { .. } => "SingularMass",
        NumericalBlowup { .. } => "NumericalBlowup",
        Underdetermined { .. } => "Underdetermined",
        Frame { source, .. } => core_kind(source),
        InfeasibleOrUnbounded(_) => "InfeasibleOrUnbounded",
        NotPsd => "NotPsd",
        DegenerateRange(_) => "DegenerateRange",
        Parse { .. } => "Parse",
        Validation(_) => "Validation",
        Io(_) => "Io",
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))
}

fn run(command: Command) -> Result<Value, CliError> {
    configure_threads()?;
    match command {
        Command::Simulate(a) => pipeline::simulate(pipeline::SimulateOptions {
            scenario: a.scenario,
            model: a.model,
            output: a.output,
            dt: a.dt,
            seed: a.seed,
            duration: a.duration,
            noise: a.noise,
            sample_every: a.sample_every,
            mu: a.mu,
        }),
        Command::Ik(a) => pipeline::ik(&a.model, &a.input, &a.output, a.weights_file.as_deref()),
        Command::Id(a) => pipeline::id(pipeline::IdOptions {
            model: a.model,
            input: a.input,
            output: a.output,
            stance_mask: a.stance_mask,
            mu: a.mu,
            weights_file: a.weights_file,
            height_eps: a.height_eps,
            speed_eps: a.speed_eps,
        }),
        Command::Muscle(a) => pipeline::muscle(&a.model, &a.input, &a.states, a.emg.as_deref(), &a.output, a.weights_file.as_deref()),
        Command::Validate(a) => pipeline::validate(&a.input, &a.truth, a.stance_mask.as_deref(), a.model.as_deref(), a.output.as_deref()),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Ik(_) => "ik",
        Command::Id(_) => "id",
        Command::Muscle(_) => "muscle",
        Command::Validate(_) => "validate",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    match run(cli.command) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record(name));
            ExitCode::FAILURE
        }
    }
}
