//! The coalitional assignment game.
//!
//! Every server is a coalition; its payoff is the bandwidth left over once the
//! requested bitrates of its members are subtracted:
//!
//! ```text
//! F(C) = B_C - Σ_{p ∈ C} λ_p
//! ```
//!
//! A player `p ∈ C_i` migrates to `C_j` when the destination payoff *after*
//! admitting `p` beats the source payoff *with `p` still counted* by at least
//! the threshold `ξ`:
//!
//! ```text
//! (F(C_j) - λ_p) - F(C_i) ≥ ξ
//! ```
//!
//! [`stabilize`] applies such migrations one at a time with a fixed scan order
//! (servers, then members, then destinations, all ascending by id) and
//! restarts the scan after every migration, until a full scan moves nobody.
//!
//! Each migration turns `(F_i, F_j)` into `(F_i + λ_p, F_j - λ_p)` with
//! `F_j - λ_p ≥ F_i + ξ`, so `Σ F(C)²` drops by at least `2·λ_p·ξ`. With
//! `ξ > 0` and `λ > 0` the loop therefore terminates; [`potential`] exposes
//! that quantity for diagnostics.

mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::rng::SplitMix64;
use crate::{ClientId, Kbps, ServerId};

pub use snapshot::{CollectionSnapshot, MemberEntry, ServerEntry, SnapshotError};

/// Default migration threshold, Kbps.
pub const DEFAULT_XI: Kbps = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("migration threshold must be positive, got {0}")]
    NonPositiveXi(Kbps),
    #[error("max_transfers must be at least 1")]
    ZeroTransferCap,
    #[error("player {0} requests a non-positive bitrate ({1} Kbps)")]
    NonPositiveLambda(ClientId, Kbps),
    #[error("server {0} has a non-positive bandwidth ({1} Kbps)")]
    NonPositiveBandwidth(ServerId, Kbps),
    #[error("player {0} appears more than once")]
    DuplicatePlayer(ClientId),
    #[error("server {0} appears more than once")]
    DuplicateServer(ServerId),
    #[error("no servers given")]
    NoServers,
    #[error("no players given")]
    NoPlayers,
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("player {player} is not a member of {server}")]
    NotAMember { player: ClientId, server: ServerId },
    #[error("player {player} already belongs to {server}")]
    AlreadyMember { player: ClientId, server: ServerId },
    #[error("source and destination are both {0}")]
    SameCoalition(ServerId),
    #[error("transfer cap of {cap} reached; last event: {last}")]
    TransferCapExceeded {
        cap: usize,
        last: Box<TransferEvent>,
    },
}

/// A player: a client together with the bitrate it currently requests.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlayerRef {
    pub id: ClientId,
    pub lambda: Kbps,
}

impl PlayerRef {
    pub fn new(id: ClientId, lambda: Kbps) -> Self {
        Self { id, lambda }
    }
}

/// One server and the players currently assigned to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coalition {
    server_id: ServerId,
    bandwidth: Kbps,
    members: BTreeMap<ClientId, Kbps>,
}

impl Coalition {
    pub fn new(server_id: ServerId, bandwidth: Kbps) -> Result<Self, EngineError> {
        if bandwidth <= 0 {
            return Err(EngineError::NonPositiveBandwidth(server_id, bandwidth));
        }
        Ok(Self {
            server_id,
            bandwidth,
            members: BTreeMap::new(),
        })
    }

    pub fn with_members(
        server_id: ServerId,
        bandwidth: Kbps,
        members: impl IntoIterator<Item = PlayerRef>,
    ) -> Result<Self, EngineError> {
        let mut c = Self::new(server_id, bandwidth)?;
        for p in members {
            c.insert(p)?;
        }
        Ok(c)
    }

    pub fn server_id(&self) -> &ServerId {
        &self.server_id
    }

    pub fn bandwidth(&self) -> Kbps {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &ClientId) -> bool {
        self.members.contains_key(id)
    }

    pub fn lambda_of(&self, id: &ClientId) -> Option<Kbps> {
        self.members.get(id).copied()
    }

    /// Members in ascending id order.
    pub fn members(&self) -> impl Iterator<Item = PlayerRef> + '_ {
        self.members
            .iter()
            .map(|(id, &lambda)| PlayerRef::new(id.clone(), lambda))
    }

    fn insert(&mut self, p: PlayerRef) -> Result<(), EngineError> {
        if p.lambda <= 0 {
            return Err(EngineError::NonPositiveLambda(p.id, p.lambda));
        }
        if self.members.contains_key(&p.id) {
            return Err(EngineError::DuplicatePlayer(p.id));
        }
        self.members.insert(p.id, p.lambda);
        Ok(())
    }

    fn remove(&mut self, id: &ClientId) -> Option<Kbps> {
        self.members.remove(id)
    }

    fn load(&self) -> Kbps {
        self.members.values().sum()
    }
}

/// Residual bandwidth of a coalition. Negative when the server is
/// oversubscribed.
pub fn payoff(c: &Coalition) -> Kbps {
    c.bandwidth - c.load()
}

/// Payoff `c` would have after admitting `p`, without touching `c`.
pub fn payoff_after_join(c: &Coalition, p: &PlayerRef) -> Result<Kbps, EngineError> {
    if c.contains(&p.id) {
        return Err(EngineError::AlreadyMember {
            player: p.id.clone(),
            server: c.server_id.clone(),
        });
    }
    Ok(payoff(c) - p.lambda)
}

/// A partition of every player over a fixed set of coalitions, kept in
/// ascending server id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collection {
    coalitions: Vec<Coalition>,
}

impl Collection {
    /// Validates disjointness and id uniqueness, then orders by server id.
    pub fn new(mut coalitions: Vec<Coalition>) -> Result<Self, EngineError> {
        if coalitions.is_empty() {
            return Err(EngineError::NoServers);
        }
        coalitions.sort_by(|a, b| a.server_id.cmp(&b.server_id));
        for w in coalitions.windows(2) {
            if w[0].server_id == w[1].server_id {
                return Err(EngineError::DuplicateServer(w[0].server_id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for c in &coalitions {
            for id in c.members.keys() {
                if !seen.insert(id) {
                    return Err(EngineError::DuplicatePlayer(id.clone()));
                }
            }
        }
        Ok(Self { coalitions })
    }

    /// Builds a collection from a server list and an explicit assignment.
    pub fn from_assignment<'a>(
        servers: impl IntoIterator<Item = (&'a ServerId, Kbps)>,
        assignment: impl IntoIterator<Item = (PlayerRef, &'a ServerId)>,
    ) -> Result<Self, EngineError> {
        let mut coalitions = servers
            .into_iter()
            .map(|(id, b)| Coalition::new(id.clone(), b))
            .collect::<Result<Vec<_>, _>>()?;
        if coalitions.is_empty() {
            return Err(EngineError::NoServers);
        }
        coalitions.sort_by(|a, b| a.server_id.cmp(&b.server_id));
        let mut seen = BTreeSet::new();
        for (p, server) in assignment {
            if !seen.insert(p.id.clone()) {
                return Err(EngineError::DuplicatePlayer(p.id));
            }
            let idx = coalitions
                .binary_search_by(|c| c.server_id.cmp(server))
                .map_err(|_| EngineError::UnknownServer(server.clone()))?;
            coalitions[idx].insert(p)?;
        }
        Self::new(coalitions)
    }

    pub fn coalitions(&self) -> &[Coalition] {
        &self.coalitions
    }

    pub fn coalition(&self, server: &ServerId) -> Option<&Coalition> {
        self.index_of(server).map(|i| &self.coalitions[i])
    }

    fn index_of(&self, server: &ServerId) -> Option<usize> {
        self.coalitions
            .binary_search_by(|c| c.server_id.cmp(server))
            .ok()
    }

    pub fn player_count(&self) -> usize {
        self.coalitions.iter().map(Coalition::len).sum()
    }

    /// Server currently holding `player`.
    pub fn server_of(&self, player: &ClientId) -> Option<&ServerId> {
        self.coalitions
            .iter()
            .find(|c| c.contains(player))
            .map(|c| &c.server_id)
    }

    /// Every `(player, server)` pair, ordered by server then player.
    pub fn assignment(&self) -> impl Iterator<Item = (PlayerRef, &ServerId)> + '_ {
        self.coalitions
            .iter()
            .flat_map(|c| c.members().map(move |p| (p, &c.server_id)))
    }

    /// Moves `player` between coalitions unconditionally. Used by replay.
    pub fn move_player(
        &mut self,
        player: &ClientId,
        from: &ServerId,
        to: &ServerId,
    ) -> Result<(), EngineError> {
        if from == to {
            return Err(EngineError::SameCoalition(from.clone()));
        }
        let src = self
            .index_of(from)
            .ok_or_else(|| EngineError::UnknownServer(from.clone()))?;
        let dst = self
            .index_of(to)
            .ok_or_else(|| EngineError::UnknownServer(to.clone()))?;
        let lambda =
            self.coalitions[src]
                .remove(player)
                .ok_or_else(|| EngineError::NotAMember {
                    player: player.clone(),
                    server: from.clone(),
                })?;
        self.coalitions[dst].members.insert(player.clone(), lambda);
        Ok(())
    }
}

/// Parameters of one game run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameConfig {
    xi: Kbps,
    max_transfers: usize,
}

impl GameConfig {
    pub fn new(xi: Kbps, max_transfers: usize) -> Result<Self, EngineError> {
        if xi <= 0 {
            return Err(EngineError::NonPositiveXi(xi));
        }
        if max_transfers == 0 {
            return Err(EngineError::ZeroTransferCap);
        }
        Ok(Self { xi, max_transfers })
    }

    /// Threshold `xi` with the default cap of `10 × players × coalitions`.
    pub fn for_instance(xi: Kbps, players: usize, coalitions: usize) -> Result<Self, EngineError> {
        Self::new(xi, default_max_transfers(players, coalitions))
    }

    pub fn xi(&self) -> Kbps {
        self.xi
    }

    pub fn max_transfers(&self) -> usize {
        self.max_transfers
    }
}

pub fn default_max_transfers(players: usize, coalitions: usize) -> usize {
    (10 * players * coalitions).max(1)
}

/// One applied migration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferEvent {
    pub sequence: usize,
    pub player: PlayerRef,
    pub from_server: ServerId,
    pub to_server: ServerId,
    /// Source payoff with the player still counted.
    pub payoff_src_before: Kbps,
    /// Destination payoff once the player joined.
    pub payoff_dst_after: Kbps,
}

impl TransferEvent {
    pub fn gain(&self) -> Kbps {
        self.payoff_dst_after - self.payoff_src_before
    }
}

impl fmt::Display for TransferEvent {
    /// `seq,player,from,to,payoff_src_before,payoff_dst_after`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{}",
            self.sequence,
            self.player.id,
            self.from_server,
            self.to_server,
            self.payoff_src_before,
            self.payoff_dst_after
        )
    }
}

/// The collection sequence of one [`stabilize`] run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferLog {
    pub initial: Collection,
    pub events: Vec<TransferEvent>,
    pub final_collection: Collection,
}

impl TransferLog {
    /// Re-applies the events to `initial`.
    pub fn replay(&self) -> Result<Collection, EngineError> {
        let mut col = self.initial.clone();
        for ev in &self.events {
            col.move_player(&ev.player.id, &ev.from_server, &ev.to_server)?;
        }
        Ok(col)
    }

    /// One event per line, `seq,player,from,to,payoff_src_before,payoff_dst_after`.
    pub fn to_lines(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// Tries to move `player` from `src` to `dst`. Applies the move and returns
/// the event when the gain reaches `xi`, otherwise leaves `col` untouched.
pub fn check_migration(
    col: &mut Collection,
    player: &ClientId,
    src: &ServerId,
    dst: &ServerId,
    cfg: &GameConfig,
) -> Result<Option<TransferEvent>, EngineError> {
    if src == dst {
        return Err(EngineError::SameCoalition(src.clone()));
    }
    let si = col
        .index_of(src)
        .ok_or_else(|| EngineError::UnknownServer(src.clone()))?;
    let di = col
        .index_of(dst)
        .ok_or_else(|| EngineError::UnknownServer(dst.clone()))?;
    let lambda = col.coalitions[si]
        .lambda_of(player)
        .ok_or_else(|| EngineError::NotAMember {
            player: player.clone(),
            server: src.clone(),
        })?;
    let p = PlayerRef::new(player.clone(), lambda);
    let before = payoff(&col.coalitions[si]);
    let after = payoff_after_join(&col.coalitions[di], &p)?;
    if after - before < cfg.xi {
        return Ok(None);
    }
    col.coalitions[si].remove(player);
    col.coalitions[di].members.insert(player.clone(), lambda);
    Ok(Some(TransferEvent {
        sequence: 0,
        player: p,
        from_server: src.clone(),
        to_server: dst.clone(),
        payoff_src_before: before,
        payoff_dst_after: after,
    }))
}

/// Runs migrations until no player can move.
///
/// Scan order: coalitions ascending, their members ascending, candidate
/// destinations ascending (skipping the current one). The scan restarts from
/// the first coalition after every applied migration.
pub fn stabilize(initial: &Collection, cfg: &GameConfig) -> Result<TransferLog, EngineError> {
    let mut col = initial.clone();
    let mut events: Vec<TransferEvent> = Vec::new();
    // Payoffs are cached per coalition; check_migration recomputes them for
    // the pair it is handed, so the cache only steers the scan.
    let mut payoffs: Vec<Kbps> = col.coalitions.iter().map(payoff).collect();
    while let Some((player, si, di)) = first_admissible(&col, &payoffs, cfg.xi) {
        if events.len() == cfg.max_transfers {
            let last = events
                .pop()
                .expect("max_transfers is at least 1, so a capped log is non-empty");
            return Err(EngineError::TransferCapExceeded {
                cap: cfg.max_transfers,
                last: Box::new(last),
            });
        }
        let src = col.coalitions[si].server_id.clone();
        let dst = col.coalitions[di].server_id.clone();
        let mut ev = check_migration(&mut col, &player, &src, &dst, cfg)?
            .expect("scan and check_migration disagree on an admissible move");
        ev.sequence = events.len();
        payoffs[si] += ev.player.lambda;
        payoffs[di] -= ev.player.lambda;
        events.push(ev);
    }
    Ok(TransferLog {
        initial: initial.clone(),
        events,
        final_collection: col,
    })
}

fn first_admissible(
    col: &Collection,
    payoffs: &[Kbps],
    xi: Kbps,
) -> Option<(ClientId, usize, usize)> {
    for (si, c) in col.coalitions.iter().enumerate() {
        for (id, &lambda) in &c.members {
            for di in 0..col.coalitions.len() {
                if di != si && payoffs[di] - lambda - payoffs[si] >= xi {
                    return Some((id.clone(), si, di));
                }
            }
        }
    }
    None
}

/// True when no player in any coalition can make an admissible move.
pub fn is_stable(col: &Collection, cfg: &GameConfig) -> bool {
    let payoffs: Vec<Kbps> = col.coalitions.iter().map(payoff).collect();
    first_admissible(col, &payoffs, cfg.xi).is_none()
}

/// `Σ F(C)²` over all coalitions.
pub fn potential(col: &Collection) -> u128 {
    col.coalitions
        .iter()
        .map(|c| {
            let f = payoff(c).unsigned_abs() as u128;
            f * f
        })
        .sum()
}

/// Assigns each player, in the given order, to a server drawn uniformly with
/// [`SplitMix64`] seeded by `seed` (one bounded draw per player over the
/// server list in the given order).
pub fn random_collection(
    players: &[PlayerRef],
    servers: &[(ServerId, Kbps)],
    seed: u64,
) -> Result<Collection, EngineError> {
    if servers.is_empty() {
        return Err(EngineError::NoServers);
    }
    if players.is_empty() {
        return Err(EngineError::NoPlayers);
    }
    let mut rng = SplitMix64::new(seed);
    let picks: Vec<_> = players
        .iter()
        .map(|p| {
            (
                p.clone(),
                &servers[rng.below(servers.len() as u64) as usize].0,
            )
        })
        .collect();
    Collection::from_assignment(servers.iter().map(|(id, b)| (id, *b)), picks)
}
