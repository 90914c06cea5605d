use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use coalition_cdn::engine::{self, CollectionSnapshot, GameConfig};
use coalition_cdn::harness::{self, ScenarioConfig};
use coalition_cdn::orchestrator::{self, Orchestrator, ServerRegistry};

#[derive(Parser)]
#[command(
    name = "coalition-cdn",
    version,
    about = "Coalition-game server assignment for adaptive streaming"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the random-vs-game experiment and write the CSV tables.
    Run(RunArgs),
    /// Same as `run`: sweeps every client count of the scenario.
    Sweep(RunArgs),
    /// Stabilize one collection snapshot and print the transfer log.
    Stabilize {
        #[arg(long)]
        collection: PathBuf,
        #[arg(long, default_value_t = engine::DEFAULT_XI)]
        xi: i64,
        #[arg(long)]
        max_transfers: Option<usize>,
        /// Also write the final collection snapshot here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the assignment store over the line protocol.
    Serve {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:6390")]
        listen: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// `paper` for the built-in scenario, or a scenario file.
    #[arg(long, default_value = harness::BUILTIN_SCENARIO)]
    scenario: String,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides the scenario's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ScenarioConfig::load(&args.scenario)
        .with_context(|| format!("loading scenario {}", args.scenario))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    eprintln!(
        "sweeping {} client counts x {} replicas on {} servers",
        cfg.client_counts.len(),
        cfg.replicas_per_point,
        cfg.servers.len()
    );
    let out = harness::sweep(&cfg, args.jobs)?;
    let summary = harness::write_outputs(&args.out, &out)?;
    for row in &summary.fig2 {
        println!(
            "n={:>3} {:<6} mean bitrate {:>8.1} Kbps (sd {:>7.1})  level {:.3}",
            row.n_clients,
            row.phase,
            row.mean_bitrate_kbps,
            row.std_bitrate_kbps,
            row.mean_level_index
        );
    }
    eprintln!("wrote results to {}", args.out.display());
    Ok(())
}

fn stabilize(
    collection: PathBuf,
    xi: i64,
    max_transfers: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let text = std::fs::read_to_string(&collection)
        .with_context(|| format!("reading {}", collection.display()))?;
    let col = CollectionSnapshot::parse(&text)?.to_collection()?;
    let cap = max_transfers.unwrap_or_else(|| {
        engine::default_max_transfers(col.player_count(), col.coalitions().len())
    });
    let cfg = GameConfig::new(xi, cap)?;
    let log = engine::stabilize(&col, &cfg)?;
    print!("{}", log.to_lines());
    if let Some(out) = out {
        std::fs::write(
            &out,
            CollectionSnapshot::from(&log.final_collection).to_text(),
        )
        .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn serve(registry: PathBuf, store: PathBuf, listen: String) -> Result<()> {
    let registry = ServerRegistry::load(&registry)?;
    let o = Orchestrator::with_store_file(registry, store)?;
    let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    orchestrator::serve(Arc::new(o), listener)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) | Command::Sweep(args) => run(args),
        Command::Stabilize {
            collection,
            xi,
            max_transfers,
            out,
        } => stabilize(collection, xi, max_transfers, out),
        Command::Serve {
            registry,
            store,
            listen,
        } => serve(registry, store, listen),
    }
}
