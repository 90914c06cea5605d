//! Two-phase experiment: clients stream from a random assignment, then the
//! game reassigns them and the same number of segments is measured again.

mod scenario;
mod summary;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::engine::{self, default_max_transfers, EngineError, GameConfig, PlayerRef, TransferLog};
use crate::orchestrator::{
    GameTrigger, Orchestrator, OrchestratorError, RegistryError, ServerRegistry,
};
use crate::rng::derive_seed;
use crate::sim::{SimError, Simulation};
use crate::{ClientId, ServerId};

pub use scenario::{ScenarioConfig, ScenarioError, BUILTIN_SCENARIO};
pub use summary::{summarize, write_outputs, Fig2Row, Fig3Row, Fig4Row, Summary, SummaryError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{0} clients is not one of the scenario's client counts")]
    UnknownCount(usize),
    #[error("point n={n_clients} replica={replica}: {source}")]
    Point {
        n_clients: usize,
        replica: usize,
        source: Box<HarnessError>,
    },
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Random,
    Game,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Random => "random",
            Phase::Game => "game",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub n_clients: usize,
    pub replica: usize,
    pub phase: Phase,
    pub mean_bitrate_kbps: f64,
    pub mean_level_index: f64,
    pub per_server_counts: BTreeMap<ServerId, usize>,
    /// Migrations applied by the game; zero for the random phase.
    pub transfers: usize,
    pub rebuffer_events: usize,
    pub rebuffer_time_s: f64,
    /// Quality samples behind the means.
    pub samples: usize,
}

/// Per-client view of a whole run, for invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDiagnostics {
    pub id: ClientId,
    pub min_share_kbps: f64,
    pub rebuffer_events: usize,
    pub downloaded_kbits: f64,
    pub segment_kbits: f64,
    pub segments_done: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointDiagnostics {
    pub capacity_violations: usize,
    pub buffer_violations: usize,
    pub share_checks: usize,
    pub clients: Vec<ClientDiagnostics>,
    /// Segment windows behind the game-phase record.
    pub game_windows: BTreeMap<ClientId, Range<usize>>,
    /// `(λ snapshot, transfer log)` for every game run of the point.
    pub games: Vec<(BTreeMap<ClientId, i64>, TransferLog)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub random: MetricsRecord,
    pub game: MetricsRecord,
    pub diagnostics: PointDiagnostics,
}

impl PointResult {
    pub fn transfer_logs(&self) -> impl Iterator<Item = &TransferLog> {
        self.diagnostics.games.iter().map(|(_, log)| log)
    }
}

/// Client ids `c01`, `c02`, … zero-padded so they sort numerically.
pub fn client_ids(n: usize) -> Vec<ClientId> {
    let width = n.to_string().len().max(2);
    (1..=n)
        .map(|i| ClientId::new(format!("c{i:0width$}")).expect("valid id"))
        .collect()
}

/// Seeds of a point: `(assignment seed, simulation seed)`.
pub fn point_seeds(base: u64, n_clients: usize, replica: usize) -> (u64, u64) {
    (
        derive_seed(&[base, n_clients as u64, replica as u64, 0]),
        derive_seed(&[base, n_clients as u64, replica as u64, 1]),
    )
}

/// One execution at `n_clients`:
///
/// 1. random assignment;
/// 2. warm-up segments, discarded;
/// 3. measured segments, giving the random-phase record;
/// 4. λ snapshot, game run through the orchestrator, new assignment applied;
/// 5. each client settles for as many segments as the warm-up, then the same
///    number of segments as in step 3 is measured, giving the game record.
pub fn run_point(
    cfg: &ScenarioConfig,
    n_clients: usize,
    replica: usize,
) -> Result<PointResult, HarnessError> {
    if !cfg.client_counts.contains(&n_clients) {
        return Err(HarnessError::UnknownCount(n_clients));
    }
    run_point_unchecked(cfg, n_clients, replica).map_err(|e| HarnessError::Point {
        n_clients,
        replica,
        source: Box::new(e),
    })
}

fn run_point_unchecked(
    cfg: &ScenarioConfig,
    n_clients: usize,
    replica: usize,
) -> Result<PointResult, HarnessError> {
    let (assign_seed, sim_seed) = point_seeds(cfg.seed, n_clients, replica);
    let warmup = cfg.warmup_segments();
    let measure = cfg.measure_segments();

    let lowest = cfg.ladder.lowest();
    let players: Vec<PlayerRef> = client_ids(n_clients)
        .into_iter()
        .map(|id| PlayerRef::new(id, lowest))
        .collect();
    let initial = engine::random_collection(&players, &cfg.servers, assign_seed)?;
    let assignment: Vec<(ClientId, ServerId)> = initial
        .assignment()
        .map(|(p, s)| (p.id, s.clone()))
        .collect();

    let mut sim_cfg = cfg.sim.clone();
    sim_cfg.seed = sim_seed;
    let mut sim = Simulation::new(sim_cfg, cfg.ladder.clone(), &cfg.servers, &assignment)?;

    sim.run_until_segments(warmup + measure)?;
    let random = sim.collect_metrics(warmup..warmup + measure)?;

    let orchestrator = Orchestrator::new(ServerRegistry::new(cfg.servers.clone())?);
    for (c, s) in &assignment {
        orchestrator.set_assignment(c.clone(), s.clone())?;
    }
    let game_cfg = GameConfig::new(
        cfg.xi,
        cfg.max_transfers
            .unwrap_or_else(|| default_max_transfers(n_clients, cfg.servers.len())),
    )?;
    let mut games = Vec::new();
    let mut play = |sim: &mut Simulation| -> Result<usize, HarnessError> {
        let lambdas = sim.snapshot_lambdas();
        let log = orchestrator.run_game(&lambdas, &game_cfg)?;
        sim.apply_assignment(&log.final_collection)?;
        let n = log.events.len();
        games.push((lambdas, log));
        Ok(n)
    };

    let mut last_game = sim.now();
    let mut transfers = play(&mut sim)?;
    let game_windows: BTreeMap<ClientId, Range<usize>> = sim
        .clients()
        .iter()
        .map(|c| {
            let start = c.next_request_index() + warmup;
            (c.id.clone(), start..start + measure)
        })
        .collect();
    let finished = |sim: &Simulation| {
        sim.clients()
            .iter()
            .all(|c| c.segments_done >= game_windows[&c.id].end)
    };
    match cfg.trigger {
        GameTrigger::Once => sim.run_until(finished)?,
        trigger @ GameTrigger::Periodic { .. } => {
            while !finished(&sim) {
                if sim.step().is_none() {
                    return Err(SimError::NoPendingEvents(sim.now()).into());
                }
                if trigger.is_due(sim.now(), Some(last_game)) {
                    transfers += play(&mut sim)?;
                    last_game = sim.now();
                }
            }
        }
    }
    let game = sim.collect_metrics_per_client(&game_windows)?;

    let record = |phase, m: crate::sim::WindowMetrics, transfers| MetricsRecord {
        n_clients,
        replica,
        phase,
        mean_bitrate_kbps: m.mean_bitrate_kbps,
        mean_level_index: m.mean_level_index,
        per_server_counts: m.per_server_counts,
        transfers,
        rebuffer_events: m.rebuffer_events,
        rebuffer_time_s: m.rebuffer_time_s,
        samples: m.samples,
    };
    let monitor = sim.monitor();
    let seg = cfg.sim.segment_duration_s;
    let clients = sim
        .clients()
        .iter()
        .map(|c| ClientDiagnostics {
            id: c.id.clone(),
            min_share_kbps: c.min_share_kbps,
            rebuffer_events: c.rebuffer_events,
            downloaded_kbits: c.downloaded_kbits,
            segment_kbits: c.segments.iter().map(|s| s.bitrate as f64 * seg).sum(),
            segments_done: c.segments_done,
        })
        .collect();
    Ok(PointResult {
        random: record(Phase::Random, random, 0),
        game: record(Phase::Game, game, transfers),
        diagnostics: PointDiagnostics {
            capacity_violations: monitor.capacity_violations,
            buffer_violations: monitor.buffer_violations,
            share_checks: monitor.share_checks,
            clients,
            game_windows,
            games,
        },
    })
}

/// Every `(count, replica)` point of the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// Ordered by count, replica, then phase (random before game).
    pub points: Vec<PointResult>,
}

impl SweepOutput {
    pub fn records(&self) -> Vec<MetricsRecord> {
        self.points
            .iter()
            .flat_map(|p| [p.random.clone(), p.game.clone()])
            .collect()
    }
}

/// Runs all points on up to `jobs` threads. Output order does not depend on
/// `jobs`.
pub fn sweep(cfg: &ScenarioConfig, jobs: usize) -> Result<SweepOutput, HarnessError> {
    use rayon::prelude::*;

    cfg.validate()?;
    let points: Vec<(usize, usize)> = cfg
        .client_counts
        .iter()
        .flat_map(|&n| (0..cfg.replicas_per_point).map(move |r| (n, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let results: Vec<Result<PointResult, HarnessError>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(n, r)| run_point(cfg, n, r))
            .collect()
    });
    Ok(SweepOutput {
        points: results.into_iter().collect::<Result<_, _>>()?,
    })
}
