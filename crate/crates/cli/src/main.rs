//! Command-line entry point wiring corpora, knowledge bases, victims,
//! attacks, and reports into reproducible runs.
//!
//! Exit codes: 0 success, 1 usage, 2 input/schema problem, 3 victim
//! transport failure.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use entswap_core::attack::{PoolKind, Sampling, Selection};
use entswap_core::kb::CountingMode;
use entswap_core::victim::VictimError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Transport(String),
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError::Input(message.into())
    }

    pub fn transport(message: impl Into<String>) -> Self {
        CliError::Transport(message.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Transport(_) => 3,
        }
    }

    pub fn from_victim(e: VictimError) -> Self {
        if e.is_transport() {
            CliError::Transport(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Transport(m) => {
                write!(f, "{m}")
            }
        }
    }
}

impl From<entswap_core::table::TableError> for CliError {
    fn from(e: entswap_core::table::TableError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<entswap_core::kb::KbError> for CliError {
    fn from(e: entswap_core::kb::KbError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<entswap_core::fixture::FixtureError> for CliError {
    fn from(e: entswap_core::fixture::FixtureError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<entswap_core::eval::EvalError> for CliError {
    fn from(e: entswap_core::eval::EvalError) -> Self {
        use entswap_core::attack::AttackError;
        use entswap_core::eval::EvalError;
        match e {
            EvalError::Victim(v) => CliError::from_victim(v),
            EvalError::Attack(AttackError::Victim(v)) => CliError::from_victim(v),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "entswap",
    version,
    about = "Entity-swap adversarial attacks on column type annotation models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus pair with embeddings and synonyms
    GenFixtures(GenFixturesArgs),
    /// Train a prototype victim and save it as a model file
    TrainVictim(TrainVictimArgs),
    /// Audit train/test entity overlap per class
    AuditLeakage(AuditLeakageArgs),
    /// Run the entity-swap attack sweep and emit reports
    Attack(AttackArgs),
    /// Run the header-synonym attack sweep
    HeaderAttack(HeaderAttackArgs),
    /// Serve a victim over the wire protocol
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenFixturesArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    entities_per_class: usize,
    #[arg(long, default_value_t = 200)]
    columns: usize,
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 5)]
    columns_per_table: usize,
    /// Fraction of each class's test pool that also appears in training
    #[arg(long, default_value_t = 0.61)]
    overlap: f64,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Embedding cluster noise (0 collapses every class to one point)
    #[arg(long, default_value_t = 0.15)]
    sigma: f64,
    /// Cosine between novel-entity clusters and their class centroid
    #[arg(long, default_value_t = -0.25, allow_hyphen_values = true)]
    novel_cos: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct TrainVictimArgs {
    /// Training corpus (line-delimited table records)
    #[arg(long)]
    train: PathBuf,
    /// Embedding file (`count dim` header, then `token<TAB>v1 v2 …`)
    #[arg(long)]
    embeddings: PathBuf,
    /// Where to write the model file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    header_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// What to do when a training entity or header has no embedding
    #[arg(long, default_value = "skip", value_parser = ["skip", "fail"])]
    missing: String,
}

#[derive(Args)]
struct AuditLeakageArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Count distinct entities or every cell mention
    #[arg(long, default_value = "unique")]
    mode: CountingMode,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Test corpus to attack
    #[arg(long)]
    corpus: PathBuf,
    /// Training corpus (for candidate filtering)
    #[arg(long)]
    train_corpus: PathBuf,
    /// Entity embedding file
    #[arg(long)]
    embeddings: PathBuf,
    /// Victim spec: `prototype:<model file>` or `http://<host:port>`
    #[arg(long)]
    victim: String,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Perturbation percentages
    #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100")]
    p: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "importance")]
    selection: Vec<Selection>,
    #[arg(long, value_delimiter = ',', default_value = "similarity")]
    sampling: Vec<Sampling>,
    #[arg(long, value_delimiter = ',', default_value = "filtered")]
    pool: Vec<PoolKind>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
    /// Let one adversarial entity fill several cells of a column
    #[arg(long)]
    allow_duplicates: bool,
    /// Also perturb columns the victim already misclassifies at baseline
    #[arg(long)]
    attack_all: bool,
}

#[derive(Args)]
struct HeaderAttackArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Synonym embedding file (independent of the victim's embeddings)
    #[arg(long)]
    synonyms: PathBuf,
    /// Victim spec: `prototype:<model file>` or `http://<host:port>`
    #[arg(long)]
    victim: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100")]
    p: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ServeArgs {
    /// Victim spec: `prototype:<model file>` or `http://<host:port>`
    #[arg(long)]
    victim: String,
    /// Bind address, e.g. 127.0.0.1:8080 (port 0 picks a free port)
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::GenFixtures(args) => commands::gen_fixtures(args),
        Command::TrainVictim(args) => commands::train_victim(args),
        Command::AuditLeakage(args) => commands::audit_leakage(args),
        Command::Attack(args) => commands::attack(args),
        Command::HeaderAttack(args) => commands::header_attack(args),
        Command::Serve(args) => commands::serve(args),
    };
    if let Err(e) = result {
        let label = match &e {
            CliError::Usage(_) => "usage",
            CliError::Input(_) => "input",
            CliError::Transport(_) => "transport",
        };
        eprintln!("error ({label}): {e}");
        std::process::exit(e.exit_code());
    }
}
