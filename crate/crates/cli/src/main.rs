use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};

use hierion::federation::{serve, Client, FederatedQuery, Topology};
use hierion::harness::{
    run_case_study, run_experiment1, run_experiment2, CaseStudyConfig, Experiment1Config, Experiment2Config, ExperimentReport,
};
use hierion::osdspec::{parse_osdspec, validate, OsdError};
use hierion::registry::{Registry, SensorDescription};
use hierion::sdum::AggKind;
use hierion::sparql::GeoPoint;
use hierion::store::{Iri, Store};

#[derive(Parser)]
#[command(name = "hierion", version, about = "Semantic IoT registry and hierarchical federated analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an analytics node.
    Node {
        #[command(subcommand)]
        action: NodeAction,
    },
    /// Add a sensor description (TOML) to a store snapshot.
    RegisterSensor {
        #[arg(long)]
        file: PathBuf,
        /// Snapshot file; created if missing.
        #[arg(long, default_value = "hierion.store")]
        store: PathBuf,
    },
    /// Find sensors within a radius of a point.
    Discover {
        #[arg(long, allow_negative_numbers = true)]
        lon: f64,
        #[arg(long, allow_negative_numbers = true)]
        lat: f64,
        #[arg(long)]
        radius_km: f64,
        /// Only sensors of this type (or a subtype).
        #[arg(long = "type")]
        sensor_type: Option<String>,
        #[arg(long, default_value = "hierion.store")]
        store: PathBuf,
        /// Print the generated SPARQL instead of running it.
        #[arg(long)]
        print_query: bool,
    },
    /// Run a SPARQL file against a snapshot, or a federated aggregate against a node.
    Query(QueryArgs),
    /// Service requests.
    Service {
        #[command(subcommand)]
        action: ServiceAction,
    },
    /// Node metrics.
    Metrics {
        #[command(subcommand)]
        action: MetricsAction,
    },
    /// Run one of the experiments and write its report.
    Experiment(ExperimentArgs),
    /// Service description documents.
    Osdspec {
        #[command(subcommand)]
        action: OsdspecAction,
    },
}

#[derive(Subcommand)]
enum NodeAction {
    /// Serve one node of a topology file.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Node id; may be omitted when the file has a single node.
        #[arg(long)]
        id: Option<String>,
        /// Stop after this many seconds instead of running forever.
        #[arg(long)]
        exit_after: Option<u64>,
    },
}

#[derive(clap::Args)]
struct QueryArgs {
    /// SPARQL query file, evaluated against --store.
    #[arg(long, conflicts_with = "capability")]
    file: Option<PathBuf>,
    #[arg(long, default_value = "hierion.store")]
    store: PathBuf,
    /// Capability to aggregate over the federation.
    #[arg(long, requires = "token")]
    capability: Option<String>,
    #[arg(long, default_value = "avg")]
    agg: String,
    /// Window such as 60s, 5m, 1h, 1500ms, or `all`.
    #[arg(long, default_value = "all")]
    window: String,
    /// End of the window in milliseconds; the node's clock when unset.
    #[arg(long)]
    as_of: Option<u64>,
    /// Comma-separated child ids, or `all`.
    #[arg(long, default_value = "all")]
    scope: String,
    #[arg(long, default_value = "2s")]
    deadline: String,
    #[arg(long)]
    token: Option<String>,
    #[command(flatten)]
    target: Target,
}

/// How to reach a node: an address, or an id looked up in a topology file.
#[derive(clap::Args)]
struct Target {
    /// host:port, or a node id together with --config.
    #[arg(long, default_value = "127.0.0.1:7100")]
    node: String,
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Target {
    fn address(&self) -> Result<String, String> {
        match &self.config {
            Some(path) => {
                let topo = Topology::load(path).map_err(|e| e.to_string())?;
                topo.get(&self.node)
                    .map(|d| d.address.clone())
                    .ok_or_else(|| format!("no node `{}` in {}", self.node, path.display()))
            }
            None => Ok(self.node.clone()),
        }
    }
}

#[derive(Subcommand)]
enum ServiceAction {
    /// Submit an OSDSpec document to a node's scheduler.
    Submit {
        file: PathBuf,
        #[arg(long)]
        token: String,
        /// Capability tags to advertise, comma-separated.
        #[arg(long, default_value = "")]
        capabilities: String,
        #[command(flatten)]
        target: Target,
    },
}

#[derive(Subcommand)]
enum MetricsAction {
    /// Fetch one sample per component and write it as CSV.
    Export {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        token: String,
        #[command(flatten)]
        target: Target,
    },
}

#[derive(Subcommand)]
enum OsdspecAction {
    /// Parse and check a document; prints one line per problem.
    Validate { file: PathBuf },
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// 1, 2 or case-study.
    which: String,
    /// Report directory.
    #[arg(long, default_value = "reports")]
    out: PathBuf,
    /// Experiment 1: largest sensor count (runs 1..=N).
    #[arg(long, default_value_t = 10)]
    sensors: usize,
    /// Experiment 1: tuples per second per stream.
    #[arg(long, default_value_t = 1.0)]
    rate_hz: f64,
    /// Experiment 1: simulated seconds per run.
    #[arg(long, default_value_t = 60)]
    duration_s: u64,
    /// Experiment 2: comma-separated user counts.
    #[arg(long, default_value = "50,100,150,200,250,300,350,400,450,500")]
    users: String,
    /// Experiment 2: queries per user.
    #[arg(long, default_value_t = 10)]
    queries: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_duration(text: &str) -> Result<Duration, String> {
    let t = text.trim();
    let (num, unit) = t.split_at(t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len()));
    let n: u64 = num.parse().map_err(|_| format!("bad duration `{text}`"))?;
    let ms = match unit {
        "ms" => n,
        "" | "s" => n * 1000,
        "m" => n * 60_000,
        "h" => n * 3_600_000,
        _ => return Err(format!("bad duration unit in `{text}`")),
    };
    Ok(Duration::from_millis(ms))
}

fn load_store(path: &Path) -> Result<Arc<Store>, String> {
    if path.exists() {
        Store::restore(path).map(Arc::new).map_err(|e| format!("{}: {e}", path.display()))
    } else {
        Ok(Arc::new(Store::new()))
    }
}

fn print_report(report: &ExperimentReport, out: &Path) -> Result<(), String> {
    let (csv, txt) = report.write(out).map_err(|e| e.to_string())?;
    print!("{}", report.summary());
    println!("wrote {} and {}", csv.display(), txt.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Node {
            action: NodeAction::Serve { config, id, exit_after },
        } => {
            let topo = Topology::load(&config).map_err(|e| e.to_string())?;
            let desc = match id {
                Some(id) => topo.get(&id).cloned().ok_or_else(|| format!("no node `{id}` in {}", config.display()))?,
                None if topo.nodes.len() == 1 => topo.nodes.values().next().cloned().expect("one node"),
                None => return Err("the topology has several nodes; pass --id".into()),
            };
            let handle = serve(desc).map_err(|e| e.to_string())?;
            println!("{} ({}) listening on {}", handle.id(), handle.role(), handle.address());
            let sampler = handle.monitor().spawn_sampler(Duration::from_secs(1));
            match exit_after {
                Some(s) => std::thread::sleep(Duration::from_secs(s)),
                None => loop {
                    std::thread::park();
                },
            }
            sampler.stop();
            handle.shutdown();
            Ok(())
        }
        Command::RegisterSensor { file, store } => {
            let text = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let desc = SensorDescription::from_toml(&text).map_err(|e| e.to_string())?;
            let s = load_store(&store)?;
            let id = Registry::new(Arc::clone(&s)).register_sensor(&desc).map_err(|e| e.to_string())?;
            s.snapshot(&store).map_err(|e| e.to_string())?;
            println!("{id}");
            Ok(())
        }
        Command::Discover {
            lon,
            lat,
            radius_km,
            sensor_type,
            store,
            print_query,
        } => {
            let center = GeoPoint::new(lon, lat).map_err(|e| e.to_string())?;
            let ty = sensor_type.map(|t| Iri::new(t).map_err(|e| e.to_string())).transpose()?;
            if print_query {
                println!("{}", Registry::discovery_query(ty.as_ref(), &center, radius_km));
                return Ok(());
            }
            let reg = Registry::new(load_store(&store)?);
            for id in reg.discover_sensors(ty.as_ref(), &center, radius_km).map_err(|e| e.to_string())? {
                println!("{id}");
            }
            Ok(())
        }
        Command::Query(q) => {
            if let Some(file) = q.file {
                let text = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
                let store = load_store(&q.store)?;
                let rows = hierion::sparql::run(&text, &store).map_err(|e| e.to_string())?;
                print!("{}", rows.to_tsv());
                return Ok(());
            }
            let capability = q.capability.ok_or("pass --file for SPARQL or --capability for a federated query")?;
            let kind: AggKind = q.agg.parse().map_err(|e: hierion::sdum::SdumError| e.to_string())?;
            let mut fq = FederatedQuery::new(&capability, kind)
                .deadline(parse_duration(&q.deadline)?)
                .scope(q.scope.parse().map_err(|e: hierion::federation::FederationError| e.to_string())?);
            if q.window != "all" {
                fq = fq.window(parse_duration(&q.window)?.as_millis() as u64, q.as_of);
            }
            let mut client = Client::connect(q.target.address()?, q.token.as_deref().unwrap_or("")).map_err(|e| e.to_string())?;
            let ans = client.query(&fq).map_err(|e| e.to_string())?;
            match ans.value() {
                Some(v) => println!("{kind}={v}"),
                None => println!("{kind}=none"),
            }
            println!("count={}", ans.aggregate.count);
            println!("completeness={}", ans.completeness());
            println!("hops={}", ans.hops);
            Ok(())
        }
        Command::Service {
            action: ServiceAction::Submit {
                file,
                token,
                capabilities,
                target,
            },
        } => {
            let xml = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let caps: Vec<&str> = capabilities.split(',').filter(|c| !c.is_empty()).collect();
            let mut client = Client::connect(target.address()?, &token).map_err(|e| e.to_string())?;
            let s = client.submit(&xml, &caps).map_err(|e| e.to_string())?;
            println!("service_id={}\nstate={}\nstreams={}", s.service_id, s.state, s.streams);
            Ok(())
        }
        Command::Metrics {
            action: MetricsAction::Export { out, token, target },
        } => {
            let mut client = Client::connect(target.address()?, &token).map_err(|e| e.to_string())?;
            let samples = client.metrics().map_err(|e| e.to_string())?;
            let mut buf = Vec::new();
            hierion::monitoring::write_csv(&samples, &mut buf).map_err(|e| e.to_string())?;
            std::fs::write(&out, buf).map_err(|e| format!("{}: {e}", out.display()))?;
            println!("wrote {} samples to {}", samples.len(), out.display());
            Ok(())
        }
        Command::Experiment(a) => match a.which.as_str() {
            "1" => {
                let mut cfg = Experiment1Config {
                    sensor_counts: (1..=a.sensors).collect(),
                    rate_hz: a.rate_hz,
                    duration: Duration::from_secs(a.duration_s),
                    metrics_dir: Some(a.out.join("metrics")),
                    ..Default::default()
                };
                if let Some(s) = a.seed {
                    cfg.seed = s;
                }
                print_report(&run_experiment1(&cfg).map_err(|e| e.to_string())?, &a.out)
            }
            "2" => {
                let users = a
                    .users
                    .split(',')
                    .filter(|u| !u.trim().is_empty())
                    .map(|u| u.trim().parse::<usize>().map_err(|_| format!("bad user count `{u}`")))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut cfg = Experiment2Config {
                    user_counts: users,
                    queries_per_user: a.queries,
                    ..Default::default()
                };
                if let Some(s) = a.seed {
                    cfg.seed = s;
                }
                print_report(&run_experiment2(&cfg).map_err(|e| e.to_string())?, &a.out)
            }
            "case-study" => {
                let mut cfg = CaseStudyConfig::new(a.out.join("case-study-data"));
                if let Some(s) = a.seed {
                    cfg.seed = s;
                }
                print_report(&run_case_study(&cfg).map_err(|e| e.to_string())?, &a.out)
            }
            other => Err(format!("unknown experiment `{other}`; expected 1, 2 or case-study")),
        },
        Command::Osdspec {
            action: OsdspecAction::Validate { file },
        } => {
            let xml = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let spec = match parse_osdspec(&xml) {
                Ok(spec) => spec,
                Err(OsdError::Validation(diags)) => {
                    for d in &diags {
                        println!("{d}");
                    }
                    return Err(format!("{} problem(s)", diags.len()));
                }
                Err(e) => return Err(e.to_string()),
            };
            let diags = validate(&spec);
            if !diags.is_empty() {
                for d in &diags {
                    println!("{d}");
                }
                return Err(format!("{} problem(s)", diags.len()));
            }
            let osmos = spec.osmos().count();
            println!("ok: {} OAMO, {osmos} OSMO", spec.oamos.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration("60s").unwrap(), Duration::from_secs(60));
        assert_eq!(parse_duration("5m").unwrap(), Duration::from_secs(300));
        assert_eq!(parse_duration("1500ms").unwrap(), Duration::from_millis(1500));
        assert_eq!(parse_duration("2").unwrap(), Duration::from_secs(2));
        assert!(parse_duration("soon").is_err());
        assert!(parse_duration("3d").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
