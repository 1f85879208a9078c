use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use modelmesh::datagen;
use modelmesh::discovery::{find_match, parse_query};
use modelmesh::experiment::{self, ExperimentConfig, OutputLayout};
use modelmesh::hetero::ScenarioKind;
use modelmesh::ml::codec;
use modelmesh::service::{self, Client, Service};
use modelmesh::vault::{EntryFilter, Vault};
use modelmesh::{Error, Result};
use serde_json::{json, Value};
use tracing::info;
use tracing_subscriber::EnvFilter;

/// Collaborative learning experiments, model vault and discovery service.
#[derive(Parser)]
#[command(name = "modelmesh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic federated dataset (dataset.mmd).
    GenData(RunArgs),
    /// Federated training only (rounds.jsonl, results.csv, models/fl_global.mmv1).
    RunFl(RunArgs),
    /// Independent-party baselines over the epoch grid (results.csv).
    RunInd(RunArgs),
    /// Full IND / FL / MDD protocol.
    RunMdd(RunArgs),
    /// FL under several heterogeneity scenarios and seeds (hetero.csv, results.csv).
    RunHeteroSweep(SweepArgs),
    /// Serve a vault over TCP.
    VaultServe(ServeArgs),
    /// Store an MMV1 model file in a vault.
    VaultStore(StoreArgs),
    /// Find the best model matching a query.
    VaultQuery(QueryArgs),
    /// Write comparison.csv for a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides scenario.kind.
    #[arg(long)]
    scenario: Option<ScenarioKind>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(k) = self.scenario {
            cfg.scenario.kind = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Master seeds to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ServeArgs {
    /// Vault directory.
    #[arg(long)]
    vault: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// Creates the vault from this config's public holdout if it does not exist.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Target {
    /// Local vault directory.
    #[arg(long, conflicts_with = "connect", required_unless_present = "connect")]
    vault: Option<PathBuf>,
    /// Address of a running vault service.
    #[arg(long)]
    connect: Option<String>,
}

#[derive(Args)]
struct StoreArgs {
    #[command(flatten)]
    target: Target,
    /// MMV1 model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    owner: String,
    #[arg(long = "tag")]
    tags: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    stored_at: f64,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    target: Target,
    /// Query text, e.g. `overall>=0.8 & class[3]>=0.5`.
    #[arg(long)]
    query: String,
    /// Directory for query_result.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding results.csv and config.json.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            return fail("usage", text.join(" ").trim_start_matches("error: "));
        }
    };
    init_logging();
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.code(), &e.to_string()),
    }
}

fn fail(code: &str, message: &str) -> ExitCode {
    let line = json!({ "error": { "code": code, "message": message } });
    let _ = writeln!(std::io::stderr(), "{line}");
    ExitCode::FAILURE
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("MODELMESH_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn run(command: Command) -> Result<Value> {
    match command {
        Command::GenData(a) => {
            let cfg = a.load()?;
            let ds = experiment::gen_data(&cfg)?;
            let out = OutputLayout::new(&cfg.output_dir)?;
            Ok(json!({
                "dataset": path_str(&out.dataset()),
                "clients": ds.clients.len(),
                "holdout_samples": ds.public_holdout.len(),
            }))
        }
        Command::RunFl(a) => {
            let cfg = a.load()?;
            let fl = experiment::run_fl_experiment(&cfg)?;
            let out = OutputLayout::new(&cfg.output_dir)?;
            Ok(json!({
                "results": path_str(&out.results()),
                "rounds": path_str(&out.rounds()),
                "final_holdout_accuracy": fl.final_holdout_accuracy(),
                "party_accuracy": fl.row.mean_accuracy,
            }))
        }
        Command::RunInd(a) => {
            let cfg = a.load()?;
            let rows = experiment::run_ind_experiment(&cfg)?;
            let out = OutputLayout::new(&cfg.output_dir)?;
            let accs: Vec<Value> =
                rows.iter().map(|r| json!({ "epochs": r.local_epochs, "accuracy": r.mean_accuracy })).collect();
            Ok(json!({ "results": path_str(&out.results()), "ind": accs }))
        }
        Command::RunMdd(a) => {
            let cfg = a.load()?;
            let bundle = experiment::run_experiment(&cfg)?;
            let out = OutputLayout::new(&cfg.output_dir)?;
            let rows: Vec<Value> = bundle
                .rows
                .iter()
                .map(|r| json!({ "approach": r.approach.to_string(), "local_epochs": r.local_epochs, "accuracy": r.mean_accuracy }))
                .collect();
            Ok(json!({ "results": path_str(&out.results()), "rows": rows }))
        }
        Command::RunHeteroSweep(a) => {
            let mut cfg = a.run.load()?;
            let kinds = match a.run.scenario {
                Some(k) => vec![k],
                None => vec![ScenarioKind::U, ScenarioKind::BH, ScenarioKind::DH, ScenarioKind::H],
            };
            // The sweep sets the scenario per run.
            cfg.scenario.kind = kinds[0];
            let rows = experiment::run_hetero_sweep(&cfg, &a.seeds, &kinds)?;
            let out = OutputLayout::new(&cfg.output_dir)?;
            Ok(json!({ "sweep": path_str(&out.sweep()), "runs": rows.len() }))
        }
        Command::VaultServe(a) => serve(a),
        Command::VaultStore(a) => {
            let bytes = std::fs::read(&a.model).map_err(|e| Error::Io { path: a.model.clone(), source: e })?;
            let entry = match (&a.target.vault, &a.target.connect) {
                (_, Some(addr)) => Client::connect(addr.as_str())?.store_bytes(&bytes, &a.owner, &a.tags, a.stored_at)?,
                (Some(dir), None) => {
                    let mut vault = Vault::open(dir)?;
                    let id = vault.store(&codec::decode(&bytes)?, &a.owner, &a.tags, a.stored_at)?;
                    vault.entry(&id).cloned().ok_or_else(|| Error::NotFound(id.to_string()))?
                }
                (None, None) => unreachable!("clap requires a target"),
            };
            Ok(serde_json::to_value(entry)?)
        }
        Command::VaultQuery(a) => {
            let best = match (&a.target.vault, &a.target.connect) {
                (_, Some(addr)) => Client::connect(addr.as_str())?.query(&a.query)?,
                (Some(dir), None) => {
                    let vault = Vault::open(dir)?;
                    find_match(&parse_query(&a.query)?, &vault.list_entries(&EntryFilter::default()))?
                }
                (None, None) => unreachable!("clap requires a target"),
            };
            let result = json!({ "query": a.query, "match": best });
            std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
            let path = a.out.join("query_result.json");
            std::fs::write(&path, serde_json::to_string_pretty(&result)?).map_err(|e| Error::Io { path, source: e })?;
            Ok(result)
        }
        Command::Report(a) => {
            let rows = experiment::report(&a.out)?;
            let out = OutputLayout::new(&a.out)?;
            Ok(json!({ "comparison": path_str(&out.comparison()), "rows": rows.len() }))
        }
    }
}

fn serve(a: ServeArgs) -> Result<Value> {
    let vault = if a.vault.join("public.mmd").exists() {
        Vault::open(&a.vault)?
    } else if let Some(path) = &a.config {
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(s) = a.seed {
            cfg.master_seed = s;
        }
        Vault::create(&a.vault, datagen::generate(&cfg.resolved_spec())?)?
    } else {
        return Err(Error::NotFound(format!("no vault at {} (pass --config to create one)", a.vault.display())));
    };
    let listener = TcpListener::bind(&a.listen)?;
    let addr = listener.local_addr()?;
    info!(%addr, models = vault.len(), "serving vault");
    println!("{}", json!({ "listening": addr.to_string() }));
    std::io::stdout().flush()?;
    service::serve(Arc::new(Service::new(vault)), listener, Arc::new(AtomicBool::new(false)))?;
    Ok(json!({ "stopped": addr.to_string() }))
}
