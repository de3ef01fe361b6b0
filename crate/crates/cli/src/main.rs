use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iart_core::Error;

mod commands;
mod serve;

#[derive(Parser)]
#[command(name = "iart", version, about = "Learn when to assist from demonstrations")]
struct Cli {
    /// Default output directory for generated files.
    #[arg(long, global = true, env = "IART_DATA_DIR", default_value = "iart-data")]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its session log.
    Simulate(SimulateArgs),
    /// Train a model on one or more session logs.
    Train(TrainArgs),
    /// Feed a log through the realtime predictor.
    Replay(ReplayArgs),
    /// Score predictions against a ground truth.
    Evaluate(EvaluateArgs),
    /// One or more rounds of aggregation and retraining.
    Dagger(DaggerArgs),
    /// Realtime service for the browser client.
    Serve(ServeArgs),
    /// Write the standard scenarios and their demonstrations.
    DemoData(DemoDataArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    ThresholdDwell,
    AssistTooOften,
    AssistOnStop,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario file or `standard:<name>`; the default scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Curve file or `preset:<name>`.
    #[arg(long)]
    pub curve: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Assist throughout the return phase.
    #[arg(long)]
    pub assist_on_return: bool,
    #[arg(long)]
    pub kp: Option<f64>,
    #[arg(long)]
    pub kd: Option<f64>,
    /// Gain ramp time, seconds.
    #[arg(long)]
    pub ramp: Option<f64>,
    /// Probability of flipping each demonstrator decision.
    #[arg(long)]
    pub label_noise: Option<f64>,
    /// Let this model act, with the scenario's policy logged as shadow.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the effective scenario here.
    #[arg(long)]
    pub save_scenario: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long = "log", required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Feed raw features instead of standardized ones.
    #[arg(long)]
    pub no_scaling: bool,
    /// Inverse-frequency class weights.
    #[arg(long)]
    pub balance: bool,
    #[arg(long)]
    pub no_shuffle: bool,
}

#[derive(Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Also check the online decisions against offline window predictions.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TruthSource {
    /// The shadow demonstrator logged alongside the acting model.
    Shadow,
    /// The logged actions; predictions come from `--model`.
    Log,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "shadow")]
    pub truth_source: TruthSource,
    /// Model to predict with when the truth source is `log`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Box-plot data of error and speed at each switch-on.
    #[arg(long)]
    pub boxplot: Option<PathBuf>,
}

#[derive(Args)]
pub struct DaggerArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// never, return-off, larger-error or combined.
    #[arg(long, default_value = "return-off")]
    pub corrector: String,
    #[arg(long, default_value_t = iart_core::dagger::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    /// Aggregated dataset checkpoint; created from the scenario's
    /// demonstration when missing.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Demonstration used as base data instead of simulating one.
    #[arg(long)]
    pub base_log: Option<PathBuf>,
    /// Override the retraining epochs recorded in the model.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the session of each round next to the output model.
    #[arg(long)]
    pub keep_sessions: bool,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory with the browser bundle.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    /// Advance one tick per pointer message instead of on a 30 Hz timer.
    #[arg(long)]
    pub lockstep: bool,
}

#[derive(Args)]
pub struct DemoDataArgs {
    /// Defaults to the data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            fail("usage", first);
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &cli.data_dir),
        Command::Train(a) => commands::train(&a),
        Command::Replay(a) => commands::replay(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Dagger(a) => commands::dagger(&a),
        Command::Serve(a) => serve::run(&a, &cli.data_dir),
        Command::DemoData(a) => commands::demo_data(a.out.as_deref().unwrap_or(&cli.data_dir)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            fail(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

/// One JSON line on stderr.
fn fail(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

pub type CliResult<T = ()> = Result<T, Error>;
