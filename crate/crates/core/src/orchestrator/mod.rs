//! Control plane: the client → server assignment map, the game trigger, and
//! a line protocol for clients to read their server before each segment.
//!
//! The store sits behind a single `RwLock`. Readers run concurrently; writers
//! and [`Orchestrator::run_game`] take the write lock, so a game run is one
//! critical section and readers block until it finishes. Readers therefore
//! only ever see the pre-game map or the fully stabilized one.

mod protocol;
mod registry;
mod server;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{PoisonError, RwLock, RwLockReadGuard, RwLockWriteGuard};

use thiserror::Error;

use crate::engine::{self, Collection, EngineError, GameConfig, PlayerRef, TransferLog};
use crate::{ClientId, Kbps, ServerId};

pub use protocol::MAX_LINE_BYTES;
pub use registry::{RegistryError, ServerRegistry};
pub use server::serve;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("unknown client {0}")]
    NotFound(ClientId),
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("no requested bitrate for client {0}")]
    MissingLambda(ClientId),
    #[error("requested bitrate given for unassigned client {0}")]
    UnexpectedLambda(ClientId),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("store file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("store file {path} line {line}: {reason}")]
    BadStoreFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// Client → server map with a change counter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentStore {
    map: BTreeMap<ClientId, ServerId>,
    version: u64,
}

impl AssignmentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, client: &ClientId) -> Option<&ServerId> {
        self.map.get(client)
    }

    /// Pairs sorted by client id.
    pub fn iter(&self) -> impl Iterator<Item = (&ClientId, &ServerId)> {
        self.map.iter()
    }

    fn set(&mut self, client: ClientId, server: ServerId) -> u64 {
        self.map.insert(client, server);
        self.version += 1;
        self.version
    }

    /// `client server` lines sorted by client id, then `# version <n>`.
    pub fn to_snapshot_text(&self) -> String {
        let mut out = String::new();
        for (c, s) in &self.map {
            out.push_str(&format!("{c} {s}\n"));
        }
        out.push_str(&format!("# version {}\n", self.version));
        out
    }

    pub fn parse_snapshot(text: &str, path: &Path) -> Result<Self, OrchestratorError> {
        let bad = |line: usize, reason: &str| OrchestratorError::BadStoreFile {
            path: path.to_path_buf(),
            line,
            reason: reason.to_string(),
        };
        let mut store = Self::new();
        let mut version = None;
        for (n, line) in text.lines().enumerate() {
            let n = n + 1;
            if let Some(rest) = line.strip_prefix("# version ") {
                version = Some(rest.parse().map_err(|_| bad(n, "bad version"))?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(' ');
            let (Some(c), Some(s), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad(n, "expected `client server`"));
            };
            let c = ClientId::new(c).map_err(|e| bad(n, &e.to_string()))?;
            let s = ServerId::new(s).map_err(|e| bad(n, &e.to_string()))?;
            if store.map.insert(c, s).is_some() {
                return Err(bad(n, "client listed twice"));
            }
        }
        store.version = version.unwrap_or(0);
        Ok(store)
    }
}

/// How often the game runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GameTrigger {
    /// A single run after warm-up.
    Once,
    /// Every `interval` seconds of (simulated) time.
    Periodic { interval_s: f64 },
}

impl GameTrigger {
    /// Whether a run is due at `now`, given when the last one happened.
    pub fn is_due(&self, now_s: f64, last_run_s: Option<f64>) -> bool {
        match (self, last_run_s) {
            (_, None) => true,
            (GameTrigger::Once, Some(_)) => false,
            (GameTrigger::Periodic { interval_s }, Some(last)) => now_s - last >= *interval_s,
        }
    }
}

impl std::fmt::Display for GameTrigger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GameTrigger::Once => f.write_str("once"),
            GameTrigger::Periodic { interval_s } => write!(f, "periodic {interval_s}"),
        }
    }
}

impl std::str::FromStr for GameTrigger {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some("once"), None, None) => Ok(GameTrigger::Once),
            (Some("periodic"), Some(v), None) => match v.parse::<f64>() {
                Ok(interval_s) if interval_s > 0.0 && interval_s.is_finite() => {
                    Ok(GameTrigger::Periodic { interval_s })
                }
                _ => Err(format!("bad periodic interval {v:?}")),
            },
            _ => Err(format!(
                "expected `once` or `periodic <seconds>`, got {s:?}"
            )),
        }
    }
}

/// The store plus the fixed server registry, shareable across threads.
#[derive(Debug)]
pub struct Orchestrator {
    registry: ServerRegistry,
    store: RwLock<AssignmentStore>,
    persist_to: Option<PathBuf>,
}

impl Orchestrator {
    pub fn new(registry: ServerRegistry) -> Self {
        Self {
            registry,
            store: RwLock::new(AssignmentStore::new()),
            persist_to: None,
        }
    }

    /// Loads the store file when it exists and rewrites it after every
    /// mutation batch.
    pub fn with_store_file(
        registry: ServerRegistry,
        path: impl Into<PathBuf>,
    ) -> Result<Self, OrchestratorError> {
        let path = path.into();
        let store = match fs::read_to_string(&path) {
            Ok(text) => AssignmentStore::parse_snapshot(&text, &path)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => AssignmentStore::new(),
            Err(source) => return Err(OrchestratorError::Io { path, source }),
        };
        if let Some((_, s)) = store.iter().find(|(_, s)| !registry.contains(s)) {
            return Err(OrchestratorError::UnknownServer(s.clone()));
        }
        Ok(Self {
            registry,
            store: RwLock::new(store),
            persist_to: Some(path),
        })
    }

    pub fn registry(&self) -> &ServerRegistry {
        &self.registry
    }

    fn read(&self) -> RwLockReadGuard<'_, AssignmentStore> {
        self.store.read().unwrap_or_else(PoisonError::into_inner)
    }

    fn write(&self) -> RwLockWriteGuard<'_, AssignmentStore> {
        self.store.write().unwrap_or_else(PoisonError::into_inner)
    }

    /// Copy of the whole store.
    pub fn snapshot(&self) -> AssignmentStore {
        self.read().clone()
    }

    pub fn version(&self) -> u64 {
        self.read().version
    }

    pub fn get_assignment(&self, client: &ClientId) -> Result<ServerId, OrchestratorError> {
        self.read()
            .get(client)
            .cloned()
            .ok_or_else(|| OrchestratorError::NotFound(client.clone()))
    }

    /// Creates or replaces the mapping; returns the new version.
    pub fn set_assignment(
        &self,
        client: ClientId,
        server: ServerId,
    ) -> Result<u64, OrchestratorError> {
        if !self.registry.contains(&server) {
            return Err(OrchestratorError::UnknownServer(server));
        }
        let mut store = self.write();
        let v = store.set(client, server);
        self.persist(&store)?;
        Ok(v)
    }

    /// Runs the game on the current map and writes every transfer back in
    /// log order. Validation failures leave the store untouched.
    pub fn run_game(
        &self,
        lambdas: &BTreeMap<ClientId, Kbps>,
        cfg: &GameConfig,
    ) -> Result<TransferLog, OrchestratorError> {
        let mut store = self.write();
        let col = collection_from_store(&store, &self.registry, lambdas)?;
        let log = engine::stabilize(&col, cfg)?;
        for ev in &log.events {
            store.set(ev.player.id.clone(), ev.to_server.clone());
        }
        if !log.events.is_empty() {
            self.persist(&store)?;
        }
        Ok(log)
    }

    fn persist(&self, store: &AssignmentStore) -> Result<(), OrchestratorError> {
        let Some(path) = &self.persist_to else {
            return Ok(());
        };
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, store.to_snapshot_text())
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|source| OrchestratorError::Io {
                path: path.clone(),
                source,
            })
    }

    /// Answers one protocol line (without its newline).
    pub fn handle_request(&self, line: &[u8]) -> String {
        protocol::handle(self, line)
    }
}

/// Builds the game state from the store. `lambdas` must name exactly the
/// stored clients.
pub fn collection_from_store(
    store: &AssignmentStore,
    registry: &ServerRegistry,
    lambdas: &BTreeMap<ClientId, Kbps>,
) -> Result<Collection, OrchestratorError> {
    if let Some(c) = lambdas.keys().find(|c| store.get(c).is_none()) {
        return Err(OrchestratorError::UnexpectedLambda(c.clone()));
    }
    let mut assignment = Vec::with_capacity(store.len());
    for (c, s) in store.iter() {
        let lambda = *lambdas
            .get(c)
            .ok_or_else(|| OrchestratorError::MissingLambda(c.clone()))?;
        assignment.push((PlayerRef::new(c.clone(), lambda), s));
    }
    Ok(Collection::from_assignment(registry.iter(), assignment)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::GameConfig;

    fn cid(s: &str) -> ClientId {
        s.parse().unwrap()
    }

    fn sid(s: &str) -> ServerId {
        s.parse().unwrap()
    }

    fn registry() -> ServerRegistry {
        ServerRegistry::new(vec![
            (sid("s1"), 7000),
            (sid("s2"), 1000),
            (sid("s3"), 3000),
        ])
        .unwrap()
    }

    #[test]
    fn read_your_write() {
        let o = Orchestrator::new(registry());
        o.set_assignment(cid("c1"), sid("s2")).unwrap();
        assert_eq!(o.get_assignment(&cid("c1")).unwrap(), sid("s2"));
        assert_eq!(
            o.get_assignment(&cid("c1")).unwrap(),
            o.get_assignment(&cid("c1")).unwrap()
        );
        assert!(matches!(
            o.get_assignment(&cid("zz")),
            Err(OrchestratorError::NotFound(_))
        ));
    }

    #[test]
    fn set_replaces_and_counts() {
        let o = Orchestrator::new(registry());
        o.set_assignment(cid("c1"), sid("s1")).unwrap();
        o.set_assignment(cid("c1"), sid("s3")).unwrap();
        assert_eq!(o.get_assignment(&cid("c1")).unwrap(), sid("s3"));
        assert_eq!(o.snapshot().len(), 1);

        let before = o.version();
        assert!(matches!(
            o.set_assignment(cid("c1"), sid("s9")),
            Err(OrchestratorError::UnknownServer(_))
        ));
        assert_eq!(o.version(), before);
        assert_eq!(o.get_assignment(&cid("c1")).unwrap(), sid("s3"));

        for i in 0..100 {
            o.set_assignment(cid(&format!("x{i}")), sid("s2")).unwrap();
        }
        assert_eq!(o.version(), before + 100);
    }

    fn crowded() -> (Orchestrator, BTreeMap<ClientId, Kbps>) {
        let reg = ServerRegistry::new(vec![(sid("s1"), 7000), (sid("s2"), 1000)]).unwrap();
        let o = Orchestrator::new(reg);
        let mut lambdas = BTreeMap::new();
        for c in ["c1", "c2", "c3"] {
            o.set_assignment(cid(c), sid("s2")).unwrap();
            lambdas.insert(cid(c), 1360);
        }
        (o, lambdas)
    }

    #[test]
    fn run_game_applies_transfers() {
        let (o, lambdas) = crowded();
        let cfg = GameConfig::new(100, 100).unwrap();
        let v0 = o.version();
        let log = o.run_game(&lambdas, &cfg).unwrap();
        assert_eq!(log.events.len(), 3);
        assert_eq!(o.version(), v0 + 3);
        for c in ["c1", "c2", "c3"] {
            assert_eq!(o.get_assignment(&cid(c)).unwrap(), sid("s1"));
        }
        // store equals the final collection
        let again = collection_from_store(&o.snapshot(), o.registry(), &lambdas).unwrap();
        assert_eq!(again, log.final_collection);

        let v1 = o.version();
        let second = o.run_game(&lambdas, &cfg).unwrap();
        assert!(second.events.is_empty());
        assert_eq!(o.version(), v1);
    }

    #[test]
    fn run_game_rejects_mismatched_lambdas() {
        let (o, mut lambdas) = crowded();
        let cfg = GameConfig::new(100, 100).unwrap();
        let before = o.snapshot();
        lambdas.remove(&cid("c2"));
        assert!(matches!(
            o.run_game(&lambdas, &cfg),
            Err(OrchestratorError::MissingLambda(_))
        ));
        lambdas.insert(cid("c2"), 1360);
        lambdas.insert(cid("ghost"), 1360);
        assert!(matches!(
            o.run_game(&lambdas, &cfg),
            Err(OrchestratorError::UnexpectedLambda(_))
        ));
        assert_eq!(o.snapshot(), before);
    }

    #[test]
    fn store_collection_round_trip() {
        let (o, lambdas) = crowded();
        let store = o.snapshot();
        let col = collection_from_store(&store, o.registry(), &lambdas).unwrap();
        let o2 = Orchestrator::new(o.registry().clone());
        for (p, s) in col.assignment() {
            o2.set_assignment(p.id, s.clone()).unwrap();
        }
        let back = o2.snapshot();
        assert_eq!(
            back.iter().collect::<Vec<_>>(),
            store.iter().collect::<Vec<_>>()
        );
    }

    #[test]
    fn snapshot_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.txt");
        {
            let o = Orchestrator::with_store_file(registry(), &path).unwrap();
            o.set_assignment(cid("b"), sid("s2")).unwrap();
            o.set_assignment(cid("a"), sid("s1")).unwrap();
        }
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a s1\nb s2\n# version 2\n");
        let o = Orchestrator::with_store_file(registry(), &path).unwrap();
        assert_eq!(o.version(), 2);
        assert_eq!(o.get_assignment(&cid("b")).unwrap(), sid("s2"));
    }

    #[test]
    fn store_file_errors() {
        let p = Path::new("x");
        assert!(AssignmentStore::parse_snapshot("a s1 extra\n", p).is_err());
        assert!(AssignmentStore::parse_snapshot("a s1\na s2\n", p).is_err());
        assert!(AssignmentStore::parse_snapshot("# version x\n", p).is_err());
    }

    #[test]
    fn trigger_modes() {
        assert!(GameTrigger::Once.is_due(0.0, None));
        assert!(!GameTrigger::Once.is_due(1e6, Some(0.0)));
        let p: GameTrigger = "periodic 30".parse().unwrap();
        assert!(!p.is_due(29.0, Some(0.0)));
        assert!(p.is_due(30.0, Some(0.0)));
        assert_eq!("once".parse::<GameTrigger>().unwrap(), GameTrigger::Once);
        assert!("periodic 0".parse::<GameTrigger>().is_err());
        assert!("sometimes".parse::<GameTrigger>().is_err());
        assert_eq!(p.to_string().parse::<GameTrigger>().unwrap(), p);
    }
}
