use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use swaas_api::{
    list_templates, parse_session, serve, Client, ClientError, ClockRequest, InstantiateRequest, ServerConfig,
    DEFAULT_LISTEN_ADDR,
};
use swaas_core::model::QoROverrides;
use swaas_sim::{Scenario, ScriptedEvent, SimError};

#[derive(Parser)]
#[command(name = "swaas", version, about = "Swarm-as-a-Service control surface")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Remote {
    /// Server address, `host:port` or URL.
    #[arg(long, env = "SWAAS_LISTEN_ADDR", default_value = DEFAULT_LISTEN_ADDR)]
    server: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run a live simulation behind the HTTP API.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "SWAAS_LISTEN_ADDR", default_value = DEFAULT_LISTEN_ADDR)]
        listen: SocketAddr,
        #[arg(long, env = "SWAAS_TEMPLATE_DIR")]
        template_dir: Option<PathBuf>,
        /// Append accepted mutations to this file as a replayable session.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Advance virtual time by N ms every N wall-clock ms.
        #[arg(long)]
        tick_ms: Option<u64>,
        /// Serve a static console bundle from this directory.
        #[arg(long)]
        serve_console: Option<PathBuf>,
    },
    /// Template pool operations.
    Template {
        #[command(subcommand)]
        command: TemplateCommand,
    },
    /// Instantiate a template; provisioning continues in the background.
    Instantiate {
        template: String,
        #[arg(long)]
        max_latency_ms: Option<f64>,
        #[arg(long)]
        redundancy: Option<u32>,
        #[arg(long)]
        min_sensing_nodes: Option<u32>,
        #[arg(long)]
        min_throughput_hz: Option<f64>,
        #[command(flatten)]
        remote: Remote,
    },
    /// Show an instance's state.
    Status {
        instance: String,
        /// Include the assignment of services to providers.
        #[arg(long)]
        placement: bool,
        #[command(flatten)]
        remote: Remote,
    },
    /// List instances.
    Instances {
        #[command(flatten)]
        remote: Remote,
    },
    Teardown {
        instance: String,
        #[command(flatten)]
        remote: Remote,
    },
    /// Inject a scripted event.
    Inject {
        #[command(subcommand)]
        event: InjectCommand,
        /// Virtual time to apply it at; defaults to now.
        #[arg(long, global = true)]
        at_ms: Option<u64>,
        #[command(flatten)]
        remote: Remote,
    },
    /// Move virtual time forward.
    Clock {
        #[arg(long, conflicts_with = "to_ms")]
        advance_ms: Option<u64>,
        #[arg(long)]
        to_ms: Option<u64>,
        #[command(flatten)]
        remote: Remote,
    },
    /// Print trace lines as NDJSON until the run ends.
    Stream {
        #[arg(long, default_value_t = 0)]
        since: u64,
        #[command(flatten)]
        remote: Remote,
    },
    /// Send every command of a recorded session, in order.
    Replay {
        #[arg(long)]
        session: PathBuf,
        #[command(flatten)]
        remote: Remote,
    },
    /// Headless batch mode.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
}

#[derive(Subcommand)]
enum TemplateCommand {
    List {
        #[arg(long, env = "SWAAS_TEMPLATE_DIR")]
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum InjectCommand {
    NodeFail { provider: String },
    NodeJoin { provider: String },
    LinkDown { a: String, b: String },
    LinkUp { a: String, b: String },
    QorViolated { instance: String, violation: String },
}

#[derive(Subcommand)]
enum SimCommand {
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("responses serialize"));
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut scenario = Scenario::load(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Serve { scenario, seed, listen, template_dir, record, tick_ms, serve_console } => {
            let config = ServerConfig {
                scenario: load_scenario(&scenario, seed)?,
                template_dir,
                record,
                tick_ms,
                console_dir: serve_console,
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
            let listener = rt
                .block_on(tokio::net::TcpListener::bind(listen))
                .map_err(|e| Failure::Runtime(format!("cannot listen on {listen}: {e}")))?;
            let bound = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
            eprintln!("listening on {bound}");
            rt.block_on(serve(config, listener)).map_err(|e| match e {
                swaas_api::ServeError::Api(e) if e.status().is_client_error() => Failure::Validation(e.to_string()),
                e => Failure::Runtime(e.to_string()),
            })
        }
        Command::Template { command: TemplateCommand::List { dir, json } } => {
            let listing = list_templates(&dir)
                .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", dir.display())))?;
            if json {
                print_json(&listing);
            } else {
                for t in &listing.templates {
                    println!(
                        "{}\t{} services\tmax_latency_ms={} min_sensing_nodes={} redundancy={}",
                        t.id, t.services, t.qor.max_end_to_end_latency_ms, t.qor.min_sensing_nodes, t.qor.redundancy
                    );
                }
                for e in &listing.errors {
                    eprintln!("{}: {}", e.file, e.error);
                }
            }
            if listing.errors.is_empty() {
                Ok(())
            } else {
                Err(Failure::Validation(format!("{} template file(s) could not be parsed", listing.errors.len())))
            }
        }
        Command::Instantiate { template, max_latency_ms, redundancy, min_sensing_nodes, min_throughput_hz, remote } => {
            let qor = QoROverrides { max_latency_ms, min_sensing_nodes, redundancy, min_throughput_hz };
            print_json(&Client::new(&remote.server).instantiate(&InstantiateRequest { template, qor })?);
            Ok(())
        }
        Command::Status { instance, placement, remote } => {
            print_json(&Client::new(&remote.server).status(&instance, placement)?);
            Ok(())
        }
        Command::Instances { remote } => {
            print_json(&Client::new(&remote.server).instances()?);
            Ok(())
        }
        Command::Teardown { instance, remote } => {
            print_json(&Client::new(&remote.server).teardown(&instance)?);
            Ok(())
        }
        Command::Inject { event, at_ms, remote } => {
            let event = match event {
                InjectCommand::NodeFail { provider } => ScriptedEvent::NodeFail { provider },
                InjectCommand::NodeJoin { provider } => ScriptedEvent::NodeJoin { provider, profile: None, links: vec![] },
                InjectCommand::LinkDown { a, b } => ScriptedEvent::LinkDown { a, b },
                InjectCommand::LinkUp { a, b } => ScriptedEvent::LinkUp { a, b },
                InjectCommand::QorViolated { instance, violation } => ScriptedEvent::QorViolated { instance, violation },
            };
            print_json(&Client::new(&remote.server).inject(event, at_ms)?);
            Ok(())
        }
        Command::Clock { advance_ms, to_ms, remote } => {
            let req = match (advance_ms, to_ms) {
                (None, None) => ClockRequest { advance_ms: Some(0), to_ms: None },
                _ => ClockRequest { advance_ms, to_ms },
            };
            print_json(&Client::new(&remote.server).clock(&req)?);
            Ok(())
        }
        Command::Stream { since, remote } => {
            Client::new(&remote.server).stream(since, |line| println!("{line}"))?;
            Ok(())
        }
        Command::Replay { session, remote } => {
            let text = std::fs::read_to_string(&session)
                .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", session.display())))?;
            let commands = parse_session(&text).map_err(Failure::Validation)?;
            let client = Client::new(&remote.server);
            for command in &commands {
                client.apply(command)?;
            }
            eprintln!("replayed {} commands", commands.len());
            Ok(())
        }
        Command::Sim { command: SimCommand::Run { scenario, seed, trace, metrics } } => {
            let scenario = load_scenario(&scenario, seed)?;
            let (t, m) = swaas_sim::run(&scenario)?;
            if let Some(path) = trace {
                write(&path, &t.to_jsonl())?;
            }
            if let Some(path) = metrics {
                write(&path, &serde_json::to_string_pretty(&m).expect("metrics serialize"))?;
            }
            println!("{}", t.hash());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
