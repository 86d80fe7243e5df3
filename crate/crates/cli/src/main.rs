use clap::{Args, Parser, Subcommand};
use geps_cli::bench::{self, BenchConfig};
use geps_cli::config::JseFile;
use geps_cli::ingest::{ingest, EventSource, IngestRequest};
use geps_cli::{exit, CliError, GatewayClient, DEFAULT_GATEWAY};
use geps_core::agent::{Agent, AgentConfig};
use geps_core::catalog::{JobRequest, JobRow, JobState, NodeRecord, Target};
use geps_core::jse::{Jse, ServeError};
use geps_core::{Calibration, FragmentFile, Schema};
use serde::Serialize;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "geps", version, about = "Grid-brick event processing")]
struct Cli {
    /// Gateway base URL.
    #[arg(long, global = true, default_value = DEFAULT_GATEWAY)]
    gateway: String,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a node agent.
    Agent(AgentArgs),
    /// Run the job submission engine and its gateway.
    Jse(JseArgs),
    /// Split a dataset into fragments and place them on nodes.
    Ingest(IngestArgs),
    /// Submit a filter job.
    Submit(SubmitArgs),
    /// Show one job or the job table.
    Status { job_id: Option<u64> },
    /// List nodes, show one, or register a new one.
    Nodes {
        name: Option<String>,
        /// Register the agent at this host:port.
        #[arg(long)]
        add: Option<String>,
    },
    /// Download and verify the merged result of a job.
    Fetch {
        job_id: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Time single-node against parallel execution over a size sweep.
    Bench(BenchArgs),
}

#[derive(Args)]
struct AgentArgs {
    #[arg(long)]
    name: String,
    #[arg(long, default_value_t = geps_core::wire::DEFAULT_PORT)]
    port: u16,
    /// Address to bind.
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    processors: Option<u32>,
    /// Link rate in bytes per second; 0 for unlimited.
    #[arg(long, default_value_t = 0)]
    throttle_bytes_per_s: u64,
    /// Bandwidth reported to the JSE; the throttle when omitted.
    #[arg(long)]
    bandwidth_estimate: Option<u64>,
}

#[derive(Args)]
struct JseArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long)]
    poll_ms: Option<u64>,
    #[arg(long)]
    retry_limit: Option<u32>,
    #[arg(long)]
    staleness_ms: Option<u64>,
}

#[derive(Args)]
struct IngestArgs {
    /// Read events from a fragment file instead of synthesizing them.
    #[arg(long, conflicts_with_all = ["events", "seed", "payload"])]
    input: Option<PathBuf>,
    /// Number of synthetic events.
    #[arg(long)]
    events: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Synthetic payload bytes per event.
    #[arg(long, default_value_t = 0)]
    payload: usize,
    #[arg(long, default_value_t = 4)]
    fragments: usize,
    #[arg(long, default_value_t = 1)]
    replication: usize,
    /// Comma-separated node names; every alive node when omitted.
    #[arg(long, value_delimiter = ',')]
    nodes: Vec<String>,
}

#[derive(Args)]
struct SubmitArgs {
    /// A node name, or ALL.
    #[arg(long, default_value = "ALL")]
    target: String,
    #[arg(long)]
    filter: String,
    #[arg(long)]
    dataset: u64,
    /// Calibration as JSON: {"bx": {"scale": 2, "offset": 0}}.
    #[arg(long)]
    calibration: Option<String>,
    #[arg(long, default_value = "")]
    user: String,
    /// Wait for the job to finish and fail unless it does.
    #[arg(long)]
    wait: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated ascending dataset sizes.
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024,2048,4096,8192")]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 4096)]
    payload: usize,
    #[arg(long, default_value_t = 2)]
    nodes: usize,
    /// Per-node link rate in bytes per second; 0 for unlimited.
    #[arg(long, default_value_t = 5_000_000)]
    throttle_bytes_per_s: u64,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = 4)]
    fragments: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn print_rows(rows: &[JobRow]) {
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.job_id.to_string(),
                r.status.clone(),
                r.server_name.clone(),
                r.filter_expression.clone(),
                r.error.clone(),
                r.result.clone(),
            ]
        })
        .collect();
    let mut widths = JobRow::HEADERS.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cols: Vec<&str>| {
        let padded: Vec<String> = cols.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        println!("{}", padded.join("  ").trim_end());
    };
    line(JobRow::HEADERS.to_vec());
    for row in &cells {
        line(row.iter().map(String::as_str).collect());
    }
}

fn print_nodes(nodes: &[NodeRecord]) {
    println!(
        "{:<32} {:<22} {:<6} {:>5} {:>9}",
        "Name", "Address", "Alive", "CPUs", "Fragments"
    );
    for n in nodes {
        println!(
            "{:<32} {:<22} {:<6} {:>5} {:>9}",
            n.name,
            n.address,
            if n.alive { "yes" } else { "no" },
            n.last_info.processors,
            n.last_info.fragments_held.len()
        );
    }
}

async fn run_agent(a: AgentArgs) -> Result<(), CliError> {
    let listen = SocketAddr::new(a.bind, a.port);
    let mut cfg = AgentConfig::new(a.name, a.data_dir);
    cfg.listen = listen;
    cfg.throttle_bytes_per_s = a.throttle_bytes_per_s;
    cfg.bandwidth_estimate = a.bandwidth_estimate;
    if let Some(p) = a.processors {
        cfg.processors = p;
    }
    let agent = Agent::bind(cfg).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => CliError::PortInUse(format!("{listen}: {e}")),
        _ => CliError::Other(e.to_string()),
    })?;
    tracing::info!(addr = %listen, "agent listening");
    agent
        .serve_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Other(e.to_string()))
}

async fn run_jse(a: JseArgs) -> Result<(), CliError> {
    let file = match &a.config {
        Some(p) => JseFile::load(p)?,
        None => JseFile::default(),
    };
    let flags = JseFile {
        listen: a.listen,
        catalog: a.catalog,
        poll_ms: a.poll_ms,
        staleness_ms: a.staleness_ms,
        retry_limit: a.retry_limit,
        ..Default::default()
    };
    let cfg = file.merge(&flags)?;
    let jse = Jse::open(cfg.clone()).map_err(|e| CliError::CatalogUnavailable(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(cfg.listen)
        .await
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => CliError::PortInUse(format!("{}: {e}", cfg.listen)),
            _ => CliError::Other(e.to_string()),
        })?;
    tracing::info!(addr = %cfg.listen, catalog = %cfg.catalog.display(), "gateway listening");
    tokio::select! {
        r = jse.serve(listener) => match r {
            Ok(()) => Ok(()),
            Err(ServeError::Catalog(e)) => Err(CliError::CatalogUnavailable(e.to_string())),
            Err(e) => Err(CliError::Other(e.to_string())),
        },
        _ = tokio::signal::ctrl_c() => Ok(()),
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let client = GatewayClient::new(&cli.gateway);
    match cli.command {
        Command::Agent(a) => run_agent(a).await,
        Command::Jse(a) => run_jse(a).await,
        Command::Ingest(a) => {
            let source = match (a.input, a.events) {
                (Some(path), _) => EventSource::File(path),
                (None, Some(n)) => EventSource::Synthetic {
                    seed: a.seed,
                    n_events: n,
                    payload_bytes: a.payload,
                    schema: Schema::default_physics(),
                },
                (None, None) => return Err(CliError::Usage("give --events or --input".into())),
            };
            let report = ingest(
                &client,
                &IngestRequest {
                    source,
                    n_fragments: a.fragments,
                    replication: a.replication,
                    nodes: a.nodes,
                },
            )
            .await?;
            if cli.json {
                print_json(&report);
            } else {
                println!("{}", report.dataset_id);
            }
            Ok(())
        }
        Command::Submit(a) => {
            let calibration = a
                .calibration
                .map(|text| serde_json::from_str::<Calibration>(&text))
                .transpose()
                .map_err(|e| CliError::Usage(format!("calibration: {e}")))?;
            let job_id = client
                .submit(&JobRequest {
                    target: Target::from(a.target),
                    filter: a.filter,
                    dataset_id: a.dataset,
                    calibration,
                    submitted_by: a.user,
                })
                .await?;
            if !a.wait {
                if cli.json {
                    print_json(&serde_json::json!({ "job_id": job_id }));
                } else {
                    println!("{job_id}");
                }
                return Ok(());
            }
            let job = client
                .wait(job_id, Duration::from_millis(200), Duration::from_secs(24 * 3600))
                .await?;
            if cli.json {
                print_json(&job);
            } else {
                print_rows(&[job.row()]);
            }
            match job.state {
                JobState::Finished => Ok(()),
                _ => Err(CliError::JobFailed(format!(
                    "job {job_id}: {}",
                    job.error.unwrap_or_else(|| job.state.to_string())
                ))),
            }
        }
        Command::Status { job_id } => {
            match job_id {
                Some(id) => {
                    let view = client.job(id).await?;
                    if cli.json {
                        print_json(&view);
                    } else {
                        print_rows(&[view.row]);
                    }
                }
                None => {
                    let rows = client.jobs().await?;
                    if cli.json {
                        print_json(&rows);
                    } else {
                        print_rows(&rows);
                    }
                }
            }
            Ok(())
        }
        Command::Nodes { name, add } => {
            let nodes = match (name, add) {
                (_, Some(address)) => vec![client.add_node(&address).await?],
                (Some(name), None) => vec![client.node(&name).await?],
                (None, None) => client.nodes().await?,
            };
            if cli.json {
                print_json(&nodes);
            } else {
                print_nodes(&nodes);
            }
            Ok(())
        }
        Command::Fetch { job_id, out } => {
            let bytes = client.result(job_id).await?;
            let f = FragmentFile::decode(&bytes).map_err(|e| match e.code() {
                "format" => CliError::Other(format!("result of job {job_id} is not a fragment file: {e}")),
                _ => CliError::Checksum(format!("result of job {job_id}: {e}")),
            })?;
            std::fs::write(&out, &bytes).map_err(|e| CliError::Other(format!("{}: {e}", out.display())))?;
            if cli.json {
                print_json(&serde_json::json!({
                    "job_id": job_id,
                    "path": out,
                    "bytes": bytes.len(),
                    "events": f.meta.event_count,
                }));
            } else {
                println!(
                    "{} events, {} bytes -> {}",
                    f.meta.event_count,
                    bytes.len(),
                    out.display()
                );
            }
            Ok(())
        }
        Command::Bench(a) => {
            let cfg = BenchConfig {
                event_counts: a.counts,
                payload_bytes: a.payload,
                n_nodes: a.nodes,
                throttle_bytes_per_s: a.throttle_bytes_per_s,
                repetitions: a.repetitions,
                output: a.out,
                seed: a.seed,
                fragments: a.fragments,
                ..Default::default()
            };
            let rows = bench::run(&cfg).await?;
            match &cfg.output {
                Some(path) => {
                    let file =
                        std::fs::File::create(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
                    bench::write_csv(file, &rows).map_err(|e| CliError::Other(e.to_string()))?;
                }
                None => {
                    bench::write_csv(std::io::stdout().lock(), &rows).map_err(|e| CliError::Other(e.to_string()))?
                }
            }
            println!("{}", bench::summary(&rows));
            Ok(())
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "geps=info,geps_core=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    if let Err(e) = rt.block_on(run(cli)) {
        eprintln!("geps: {e}");
        std::process::exit(e.exit_code());
    }
}
