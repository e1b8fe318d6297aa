use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use evocity_core::pipeline::{self, KindCounts};
use evocity_core::store::{Status, Store, StoreError};
use evocity_core::Dialect;
use serde::Serialize;
use thiserror::Error;

use crate::api;
use crate::jobs::{self, JobError, Request};

#[derive(Debug, Parser)]
#[command(name = "evocity", version, about = "Software cities from git histories")]
pub struct Cli {
    /// Where projects are stored.
    #[arg(long, global = true, env = "EVOCITY_DATA_DIR", default_value = "evocity-data")]
    pub data_dir: PathBuf,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze a repository and store the project.
    Analyze {
        /// URL or local path.
        source: String,
        #[arg(long)]
        branch: Option<String>,
        /// generic, sqlite, mysql or postgres.
        #[arg(long, default_value = "generic")]
        db_type: Dialect,
    },
    /// Write one stored scene document.
    ExportScene {
        project: String,
        ordinal: u32,
        /// Output file, `-` for stdout.
        #[arg(short, long, default_value = "-")]
        output: String,
    },
    /// Alive artifacts per kind.
    Stats {
        project: String,
        /// Commit to count at; the last one by default.
        #[arg(long)]
        ordinal: Option<u32>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "EVOCITY_BIND", default_value = api::DEFAULT_BIND)]
        bind: String,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Internal(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<JobError> for CliError {
    fn from(e: JobError) -> Self {
        if e.is_input() {
            CliError::Input(e.to_string())
        } else {
            CliError::Internal(e.into())
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        JobError::Store(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.into())
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let json = cli.json;
    match cli.command {
        Command::Analyze { source, branch, db_type } => {
            let store = Store::open(&cli.data_dir)?;
            let req = Request { location: source, branch, dialect: db_type };
            let record = jobs::run(&store, &req.record()?, &req)?;
            if json {
                print_json(&record)?;
            } else {
                println!("{}", record.id);
            }
            Ok(())
        }
        Command::ExportScene { project, ordinal, output } => {
            let store = Store::open(&cli.data_dir)?;
            let bytes = store.load_scene(&project, ordinal)?;
            if output == "-" {
                std::io::stdout().lock().write_all(&bytes)?;
            } else {
                std::fs::write(&output, &bytes)?;
            }
            Ok(())
        }
        Command::Stats { project, ordinal } => stats(&Store::open(&cli.data_dir)?, &project, ordinal, json),
        Command::Serve { bind } => serve(&cli.data_dir, &bind),
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(anyhow::Error::from)?;
    println!("{text}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct Stats {
    project: String,
    ordinal: Option<u32>,
    num_commits: u32,
    counts: KindCounts,
}

fn stats(store: &Store, project: &str, ordinal: Option<u32>, json: bool) -> Result<(), CliError> {
    let record = store.record(project)?;
    if record.status != Status::Done {
        return Err(CliError::Input(format!("project {project} is {}", record.status.name())));
    }
    let evo = store.load_histories(project)?;
    let schemas = store.load_schemas(project)?;
    let n = evo.num_commits;
    let ordinal = match ordinal {
        Some(o) if o >= n => return Err(StoreError::OrdinalOutOfRange { ordinal: o, count: n }.into()),
        Some(o) => Some(o),
        None => n.checked_sub(1),
    };
    let counts = ordinal.map_or_else(KindCounts::default, |o| pipeline::kind_counts(&evo, schemas.at(o), o));
    let s = Stats { project: project.to_string(), ordinal, num_commits: n, counts };
    if json {
        return print_json(&s);
    }
    let at = s.ordinal.map_or("-".to_string(), |o| o.to_string());
    println!("project     {}", s.project);
    println!("ordinal     {at} of {n}");
    println!("classes     {}", counts.classes);
    println!("data files  {}", counts.data_files);
    println!("binaries    {}", counts.binaries);
    println!("other text  {}", counts.other_text);
    println!("folders     {}", counts.folders);
    println!("tables      {}", counts.tables);
    Ok(())
}

fn serve(data_dir: &std::path::Path, bind: &str) -> Result<(), CliError> {
    let addr: std::net::SocketAddr = bind.parse().map_err(|_| CliError::Input(format!("bad bind address {bind}")))?;
    let state = api::AppState::open(data_dir)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Input(format!("cannot bind {addr}: {e}")))?;
        log::info!("listening on {}", listener.local_addr()?);
        eprintln!("serving on http://{}/api/v1", listener.local_addr()?);
        axum::serve(listener, api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
