//! The `mopref` command line.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use mopref_core::{
    expand_compress, flow_decompose, parse_and_validate, run_elicitation, scalarized_plan, validate_set, vector_value,
    EngineConfig, Momdp64, OracleSession, PolicyDocument, Representation, SimulatedUser, SolveMode,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::experiment::{run_to_dir, ExperimentConfig, DEFAULT_ENUMERATION_LIMIT};

#[derive(Debug, Parser)]
#[command(name = "mopref", version, about = "Preference elicitation for multi-objective MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an instance file and print its dimensions.
    Validate { instance: PathBuf },
    /// Plan for a fixed preference vector.
    Plan {
        #[arg(long)]
        instance: PathBuf,
        /// Comma separated, one weight per objective.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Vec<f64>,
    },
    /// Represent a policy by at most k + 1 weighted trajectories.
    Trajset {
        #[arg(long)]
        instance: PathBuf,
        /// Policy document (JSON).
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Expand)]
        method: Method,
        /// Keep the raw flow decomposition (flow method only).
        #[arg(long)]
        no_compress: bool,
    },
    /// Run an elicitation against a simulated user with a known preference.
    Elicit {
        #[arg(long)]
        instance: PathBuf,
        /// Comma separated weights, or a JSON file with a `preference` array.
        #[arg(long)]
        user: String,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = RepresentationArg::Explicit)]
        representation: RepresentationArg,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the query transcript (JSON lines) here.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Run a seeded experiment and write CSV results into a directory.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the comparison session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Instance file; repeat to serve several. The id is the file stem.
        #[arg(long, required = true)]
        instance: Vec<PathBuf>,
        #[arg(long, default_value = "sessions")]
        data_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Expand,
    Flow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RepresentationArg {
    Explicit,
    #[value(alias = "trajectory_set")]
    Trajset,
}

/// Exit code 1 for bad input, 2 for failures while running.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn load_instance(path: &Path) -> Result<Momdp64, CliError> {
    parse_and_validate(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Deserialize)]
struct UserFile {
    preference: Vec<f64>,
}

/// Parses `--user`: a comma separated list, or a JSON file.
pub fn parse_user(arg: &str) -> Result<Vec<f64>, CliError> {
    let inline: Result<Vec<f64>, _> = arg.split(',').map(|w| w.trim().parse::<f64>()).collect();
    if let Ok(weights) = inline {
        return Ok(weights);
    }
    let text = read(Path::new(arg))?;
    let file: UserFile = serde_json::from_str(&text).map_err(|e| invalid(format!("{arg}: {e}")))?;
    Ok(file.preference)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { instance } => {
            let mdp = load_instance(&instance)?;
            println!(
                "ok: {} states, {} actions, horizon {}, {} objectives, digest {}",
                mdp.num_states(),
                mdp.num_actions(),
                mdp.horizon(),
                mdp.objectives(),
                mdp.digest()
            );
            Ok(())
        }
        Command::Plan { instance, weights } => {
            let mdp = load_instance(&instance)?;
            if weights.len() != mdp.objectives() {
                return Err(invalid(format!("expected {} weights, got {}", mdp.objectives(), weights.len())));
            }
            if weights.iter().any(|w| !w.is_finite()) {
                return Err(invalid("weights must be finite"));
            }
            let (policy, value) = scalarized_plan(&mdp, &weights);
            let vector = vector_value(&mdp, &policy);
            emit(
                &json!({
                    "policy": PolicyDocument::from_policy(&mdp, &policy),
                    "value": vector,
                    "scalarized_value": value,
                }),
                None,
            )
        }
        Command::Trajset { instance, policy, method, no_compress } => {
            let mdp = load_instance(&instance)?;
            let doc: PolicyDocument =
                serde_json::from_str(&read(&policy)?).map_err(|e| invalid(format!("{}: {e}", policy.display())))?;
            let policy = doc.to_policy(&mdp).map_err(invalid)?;
            policy.validate(&mdp).map_err(invalid)?;
            let set = match method {
                Method::Expand => expand_compress(&mdp, &policy),
                Method::Flow => flow_decompose(&mdp, &policy, !no_compress),
            };
            let report = validate_set(&mdp, &policy, &set);
            // An uncompressed flow decomposition may legitimately exceed k + 1 items.
            let failures: Vec<String> = report
                .failures
                .iter()
                .filter(|f| !(no_compress && matches!(f, mopref_core::trajset::ValidationFailure::TooLarge { .. })))
                .map(|f| format!("{f:?}"))
                .collect();
            if !failures.is_empty() {
                return Err(runtime(format!("trajectory set failed validation: {}", failures.join("; "))));
            }
            emit(&set.to_document(&mdp), None)
        }
        Command::Elicit { instance, user, epsilon, mode, representation, out, transcript } => {
            let mdp = load_instance(&instance)?;
            let preference = parse_user(&user)?;
            if preference.len() != mdp.objectives() {
                return Err(invalid(format!(
                    "user preference has {} weights, instance has {} objectives",
                    preference.len(),
                    mdp.objectives()
                )));
            }
            let mut responder = SimulatedUser::new(preference.clone(), epsilon).map_err(invalid)?;
            let config = EngineConfig {
                mode: match mode {
                    ModeArg::Full => SolveMode::Full,
                    ModeArg::Truncated => SolveMode::Truncated,
                },
                representation: match representation {
                    RepresentationArg::Explicit => Representation::Explicit,
                    RepresentationArg::Trajset => Representation::TrajectorySet,
                },
                ..EngineConfig::default()
            };
            let mut session = OracleSession::new(None);
            let report = run_elicitation(&mdp, &mut session, &mut responder, &config, None)
                .map_err(runtime)?
                .with_diagnostics(&mdp, &preference, DEFAULT_ENUMERATION_LIMIT as u128);
            if let Some(path) = transcript {
                let file = std::fs::File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                session.write_transcript(std::io::BufWriter::new(file)).map_err(runtime)?;
            }
            let policy = PolicyDocument::from_policy(&mdp, &report.output_policy);
            emit(&json!({ "report": report, "policy": policy }), out.as_deref())
        }
        Command::Experiment { config, out } => {
            let config = ExperimentConfig::from_json(&read(&config)?).map_err(invalid)?;
            let summary = run_to_dir(&config, &out).map_err(runtime)?;
            print!("{}", summary.table());
            Ok(())
        }
        Command::Serve { port, host, instance, data_dir } => {
            let mut instances = Vec::new();
            for path in &instance {
                let id = path.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned());
                instances.push((id, load_instance(path)?));
            }
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(invalid)?;
            let state = mopref_service::AppState::open(&data_dir, instances).map_err(runtime)?;
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on {} ({} sessions resumed)", listener.local_addr()?, state.session_count());
                mopref_service::serve(listener, state).await
            })
            .map_err(runtime)
        }
    }
}
