//! Discrete-event simulation of segment-based adaptive streaming from
//! several bandwidth-capped servers.
//!
//! Each server splits its capacity equally over the downloads in progress on
//! it (processor sharing); client links are never the bottleneck. Segments
//! are exactly `bitrate × segment_duration_s` kbit. Time is continuous and
//! only advances from one event instant to the next: a download finishing,
//! a paused client resuming, a delayed client starting, or a buffer running
//! dry. Shares are re-solved after every instant.
//!
//! Clients request from whichever server they are assigned to at request
//! time, so a new assignment takes effect at the next segment boundary and
//! in-flight segments finish where they started.

mod abr;
mod shares;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::engine::Collection;
use crate::rng::SplitMix64;
use crate::{ClientId, Kbps, ServerId};

pub use abr::{estimate_throughput, select_bitrate};
pub use shares::allocate_shares;
use shares::fair_share;

/// Two event times closer than this are the same instant.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid ladder: {0}")]
    InvalidLadder(String),
    #[error("cannot advance to {until}s, clock is already at {now}s")]
    TimeInPast { now: f64, until: f64 },
    #[error("unknown client {0}")]
    UnknownClient(ClientId),
    #[error("client {0} listed twice")]
    DuplicateClient(ClientId),
    #[error("unknown server {0}")]
    UnknownServer(ServerId),
    #[error("server {0} has non-positive bandwidth")]
    BadServer(ServerId),
    #[error("assignment does not cover client {0}")]
    MissingClient(ClientId),
    #[error("no servers")]
    NoServers,
    #[error("empty measurement window")]
    EmptyWindow,
    #[error("window {start}..{end} of client {client} exceeds its {done} completed segments")]
    WindowBeyondCompleted {
        client: ClientId,
        start: usize,
        end: usize,
        done: usize,
    },
    #[error("simulation has no pending events at {0}s")]
    NoPendingEvents(f64),
}

/// Representations of the video, lowest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ladder {
    bitrates: Vec<Kbps>,
    labels: Vec<String>,
}

impl Ladder {
    pub fn new(bitrates: Vec<Kbps>, labels: Vec<String>) -> Result<Self, SimError> {
        if bitrates.is_empty() {
            return Err(SimError::InvalidLadder("no bitrates".into()));
        }
        if bitrates.len() != labels.len() {
            return Err(SimError::InvalidLadder(format!(
                "{} bitrates but {} labels",
                bitrates.len(),
                labels.len()
            )));
        }
        if bitrates[0] <= 0 || bitrates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::InvalidLadder(
                "bitrates must be positive and strictly ascending".into(),
            ));
        }
        Ok(Self { bitrates, labels })
    }

    /// 1360/3265/6117/9330 Kbps for 360p/480p/720p/1080p.
    pub fn standard() -> Self {
        Self::new(
            vec![1360, 3265, 6117, 9330],
            ["360p", "480p", "720p", "1080p"].map(String::from).to_vec(),
        )
        .expect("standard ladder is valid")
    }

    pub fn bitrates(&self) -> &[Kbps] {
        &self.bitrates
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn lowest(&self) -> Kbps {
        self.bitrates[0]
    }

    pub fn index_of(&self, bitrate: Kbps) -> Option<usize> {
        self.bitrates.binary_search(&bitrate).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub segment_duration_s: f64,
    pub buffer_cap_s: f64,
    /// Below this buffer level the next segment is fetched at the lowest rate.
    pub panic_buffer_s: f64,
    pub history_window: usize,
    pub safety_alpha: f64,
    pub warmup_segments: usize,
    pub measure_segments: usize,
    /// Client start times are drawn uniformly from `[0, start_spread_s)`.
    pub start_spread_s: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            segment_duration_s: 2.0,
            buffer_cap_s: 30.0,
            panic_buffer_s: 2.0,
            history_window: 5,
            safety_alpha: 0.9,
            warmup_segments: 15,
            measure_segments: 60,
            start_spread_s: 2.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let finite = [
            self.segment_duration_s,
            self.buffer_cap_s,
            self.panic_buffer_s,
            self.safety_alpha,
            self.start_spread_s,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite value");
        }
        if self.segment_duration_s <= 0.0 {
            return bad("segment_duration_s must be positive");
        }
        if !(self.safety_alpha > 0.0 && self.safety_alpha <= 1.0) {
            return bad("safety_alpha must lie in (0, 1]");
        }
        if self.panic_buffer_s < 0.0 || self.panic_buffer_s >= self.buffer_cap_s {
            return bad("panic_buffer_s must lie in [0, buffer_cap_s)");
        }
        if self.buffer_cap_s < self.segment_duration_s {
            return bad("buffer_cap_s must hold at least one segment");
        }
        if self.history_window == 0 {
            return bad("history_window must be at least 1");
        }
        if self.measure_segments == 0 {
            return bad("measure_segments must be at least 1");
        }
        if self.start_spread_s < 0.0 {
            return bad("start_spread_s must be non-negative");
        }
        Ok(())
    }

    /// Buffer level at which a paused client requests again.
    fn resume_level(&self) -> f64 {
        self.buffer_cap_s - self.segment_duration_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub id: ServerId,
    pub bandwidth_kbps: Kbps,
    pub active_downloads: BTreeSet<ClientId>,
}

impl ServerState {
    pub fn new(id: ServerId, bandwidth_kbps: Kbps) -> Self {
        Self {
            id,
            bandwidth_kbps,
            active_downloads: BTreeSet::new(),
        }
    }
}

/// One completed segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub index: usize,
    pub bitrate: Kbps,
    pub server: ServerId,
    pub requested_at: f64,
    pub completed_at: f64,
    pub throughput_kbps: f64,
    /// Stall that this segment's arrival ended, if any.
    pub stall_s: f64,
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Download {
    server: usize,
    bitrate: Kbps,
    index: usize,
    remaining_kbits: f64,
    requested_at: f64,
    share: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Activity {
    Waiting {
        at: f64,
    },
    Downloading(Download),
    /// Buffer full; requests again once it drains to the resume level.
    Paused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: ClientId,
    pub assigned_server: ServerId,
    pub buffer_s: f64,
    pub throughput_history: VecDeque<f64>,
    pub current_bitrate: Kbps,
    pub segments_done: usize,
    pub rebuffer_events: usize,
    pub rebuffer_time_s: f64,
    /// Smallest share this client received while downloading.
    pub min_share_kbps: f64,
    pub downloaded_kbits: f64,
    pub segments: Vec<SegmentRecord>,
    started: bool,
    stalled_since: Option<f64>,
    activity: Activity,
}

impl ClientState {
    fn playing(&self) -> bool {
        self.started && self.stalled_since.is_none()
    }

    pub fn is_downloading(&self) -> bool {
        matches!(self.activity, Activity::Downloading(_))
    }

    pub fn is_stalled(&self) -> bool {
        self.stalled_since.is_some()
    }

    /// Index of the first segment that will be requested from now on.
    pub fn next_request_index(&self) -> usize {
        self.segments_done + usize::from(self.is_downloading())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Start,
    Done,
    RebufBegin,
    RebufEnd,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Start => "START",
            EventKind::Done => "DONE",
            EventKind::RebufBegin => "REBUF_BEGIN",
            EventKind::RebufEnd => "REBUF_END",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t_s: f64,
    pub client: ClientId,
    pub server: ServerId,
    pub kind: EventKind,
    pub bitrate_kbps: Kbps,
    pub share_kbps: f64,
}

impl fmt::Display for SimEvent {
    /// `t_s,client,server,event,bitrate_kbps,share_kbps`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.6},{},{},{},{},{:.3}",
            self.t_s, self.client, self.server, self.kind, self.bitrate_kbps, self.share_kbps
        )
    }
}

/// Violations of the capacity and buffer bounds seen so far.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InvariantMonitor {
    pub capacity_violations: usize,
    pub buffer_violations: usize,
    pub share_checks: usize,
}

/// Aggregates over a set of per-client segment windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub samples: usize,
    pub mean_bitrate_kbps: f64,
    pub mean_level_index: f64,
    pub per_server_counts: BTreeMap<ServerId, usize>,
    pub rebuffer_events: usize,
    pub rebuffer_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Due {
    Start,
    Done,
    Resume,
    Empty,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: SimConfig,
    ladder: Ladder,
    now: f64,
    servers: Vec<ServerState>,
    clients: Vec<ClientState>,
    monitor: InvariantMonitor,
}

impl Simulation {
    /// Clients start at seeded offsets in `[0, start_spread_s)`, drawn in
    /// ascending client id order.
    pub fn new(
        cfg: SimConfig,
        ladder: Ladder,
        servers: &[(ServerId, Kbps)],
        assignment: &[(ClientId, ServerId)],
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        if servers.is_empty() {
            return Err(SimError::NoServers);
        }
        let mut server_states: Vec<ServerState> = Vec::with_capacity(servers.len());
        for (id, b) in servers {
            if *b <= 0 {
                return Err(SimError::BadServer(id.clone()));
            }
            server_states.push(ServerState::new(id.clone(), *b));
        }
        server_states.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = server_states.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(SimError::InvalidConfig(format!(
                "server {} listed twice",
                w[0].id
            )));
        }

        let mut sorted: Vec<&(ClientId, ServerId)> = assignment.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rng = SplitMix64::new(cfg.seed);
        let mut clients = Vec::with_capacity(sorted.len());
        for (i, (id, server)) in sorted.iter().enumerate() {
            if i > 0 && sorted[i - 1].0 == *id {
                return Err(SimError::DuplicateClient(id.clone()));
            }
            if server_states
                .binary_search_by(|s| s.id.cmp(server))
                .is_err()
            {
                return Err(SimError::UnknownServer(server.clone()));
            }
            let at = rng.unit_f64() * cfg.start_spread_s;
            clients.push(ClientState {
                id: id.clone(),
                assigned_server: server.clone(),
                buffer_s: 0.0,
                throughput_history: VecDeque::new(),
                current_bitrate: ladder.lowest(),
                segments_done: 0,
                rebuffer_events: 0,
                rebuffer_time_s: 0.0,
                min_share_kbps: f64::INFINITY,
                downloaded_kbits: 0.0,
                segments: Vec::new(),
                started: false,
                stalled_since: None,
                activity: Activity::Waiting { at },
            });
        }
        let mut sim = Self {
            cfg,
            ladder,
            now: 0.0,
            servers: server_states,
            clients,
            monitor: InvariantMonitor::default(),
        };
        // Clients due at t = 0 start right away.
        sim.process_instant();
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn ladder(&self) -> &Ladder {
        &self.ladder
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn client(&self, id: &ClientId) -> Option<&ClientState> {
        self.client_index(id).map(|i| &self.clients[i])
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn monitor(&self) -> InvariantMonitor {
        self.monitor
    }

    fn client_index(&self, id: &ClientId) -> Option<usize> {
        self.clients.binary_search_by(|c| c.id.cmp(id)).ok()
    }

    fn server_index(&self, id: &ServerId) -> Option<usize> {
        self.servers.binary_search_by(|s| s.id.cmp(id)).ok()
    }

    /// Current `(client, server)` assignment in client order.
    pub fn assignment(&self) -> Vec<(ClientId, ServerId)> {
        self.clients
            .iter()
            .map(|c| (c.id.clone(), c.assigned_server.clone()))
            .collect()
    }

    fn next_due(&self, c: &ClientState) -> Option<(f64, Due)> {
        match &c.activity {
            Activity::Waiting { at } => Some((*at, Due::Start)),
            Activity::Paused => Some((
                self.now + (c.buffer_s - self.cfg.resume_level()).max(0.0),
                Due::Resume,
            )),
            Activity::Downloading(d) => {
                let done = self.now + d.remaining_kbits / d.share;
                if c.playing() && self.now + c.buffer_s + TIME_EPS < done {
                    Some((self.now + c.buffer_s, Due::Empty))
                } else {
                    Some((done, Due::Done))
                }
            }
        }
    }

    /// Time of the next event, if any.
    pub fn next_event_time(&self) -> Option<f64> {
        self.clients
            .iter()
            .filter_map(|c| self.next_due(c))
            .map(|(t, _)| t)
            .min_by(f64::total_cmp)
    }

    /// Processes the next event instant. Returns `None` when nothing is
    /// pending.
    pub fn step(&mut self) -> Option<Vec<SimEvent>> {
        let t = self.next_event_time()?;
        self.advance_clock(t);
        Some(self.process_instant())
    }

    /// Runs every event up to and including `until`, then moves the clock
    /// to `until`.
    pub fn advance(&mut self, until: f64) -> Result<Vec<SimEvent>, SimError> {
        if until < self.now {
            return Err(SimError::TimeInPast {
                now: self.now,
                until,
            });
        }
        let mut events = Vec::new();
        while let Some(t) = self.next_event_time() {
            if t > until {
                break;
            }
            self.advance_clock(t);
            events.extend(self.process_instant());
        }
        self.advance_clock(until);
        Ok(events)
    }

    /// Steps until `done` holds. Fails if the simulation runs out of events
    /// first.
    pub fn run_until(&mut self, mut done: impl FnMut(&Self) -> bool) -> Result<(), SimError> {
        while !done(self) {
            if self.step().is_none() {
                return Err(SimError::NoPendingEvents(self.now));
            }
        }
        Ok(())
    }

    /// Steps until every client has completed at least `segments` segments.
    pub fn run_until_segments(&mut self, segments: usize) -> Result<(), SimError> {
        self.run_until(|s| s.clients.iter().all(|c| c.segments_done >= segments))
    }

    fn advance_clock(&mut self, t: f64) {
        let dt = t - self.now;
        if dt <= 0.0 {
            return;
        }
        for c in &mut self.clients {
            if c.playing() {
                c.buffer_s = (c.buffer_s - dt).max(0.0);
            }
            if let Activity::Downloading(d) = &mut c.activity {
                let got = (d.share * dt).min(d.remaining_kbits);
                d.remaining_kbits -= got;
                c.downloaded_kbits += got;
            }
            if c.buffer_s < 0.0 || c.buffer_s > self.cfg.buffer_cap_s + TIME_EPS {
                self.monitor.buffer_violations += 1;
            }
        }
        self.now = t;
    }

    fn process_instant(&mut self) -> Vec<SimEvent> {
        let now = self.now;
        let due: Vec<(usize, Due)> = self
            .clients
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                self.next_due(c)
                    .filter(|(t, _)| *t <= now + TIME_EPS)
                    .map(|(_, kind)| (i, kind))
            })
            .collect();

        let mut events = Vec::new();
        for (i, kind) in due {
            match kind {
                Due::Start | Due::Resume => {
                    if kind == Due::Resume {
                        self.clients[i].buffer_s = self.cfg.resume_level();
                    }
                    self.start_request(i, &mut events);
                }
                Due::Done => self.complete_download(i, &mut events),
                Due::Empty => {
                    let c = &mut self.clients[i];
                    c.buffer_s = 0.0;
                    c.stalled_since = Some(now);
                    c.rebuffer_events += 1;
                    if let Activity::Downloading(d) = &c.activity {
                        events.push(SimEvent {
                            t_s: now,
                            client: c.id.clone(),
                            server: self.servers[d.server].id.clone(),
                            kind: EventKind::RebufBegin,
                            bitrate_kbps: d.bitrate,
                            share_kbps: d.share,
                        });
                    }
                }
            }
        }
        self.resolve_shares();
        for ev in events.iter_mut().filter(|e| e.kind == EventKind::Start) {
            let i = self.client_index(&ev.client).expect("event client exists");
            if let Activity::Downloading(d) = &self.clients[i].activity {
                ev.share_kbps = d.share;
            }
        }
        events
    }

    fn start_request(&mut self, i: usize, events: &mut Vec<SimEvent>) {
        let server = self
            .server_index(&self.clients[i].assigned_server)
            .expect("assigned servers are validated");
        let c = &mut self.clients[i];
        let history: Vec<f64> = c.throughput_history.iter().copied().collect();
        let est = estimate_throughput(&history, self.cfg.history_window, &self.ladder);
        let bitrate = select_bitrate(est, c.buffer_s, &self.ladder, &self.cfg);
        c.current_bitrate = bitrate;
        let index = c.segments_done;
        c.activity = Activity::Downloading(Download {
            server,
            bitrate,
            index,
            remaining_kbits: bitrate as f64 * self.cfg.segment_duration_s,
            requested_at: self.now,
            share: 0.0,
        });
        self.servers[server].active_downloads.insert(c.id.clone());
        events.push(SimEvent {
            t_s: self.now,
            client: c.id.clone(),
            server: self.servers[server].id.clone(),
            kind: EventKind::Start,
            bitrate_kbps: bitrate,
            share_kbps: 0.0,
        });
    }

    fn complete_download(&mut self, i: usize, events: &mut Vec<SimEvent>) {
        let now = self.now;
        let seg = self.cfg.segment_duration_s;
        let c = &mut self.clients[i];
        let Activity::Downloading(d) = std::mem::replace(&mut c.activity, Activity::Paused) else {
            unreachable!("completion scheduled for a client that is not downloading");
        };
        // Finish the last sliver lost to float rounding.
        c.downloaded_kbits += d.remaining_kbits;
        let server_id = self.servers[d.server].id.clone();
        self.servers[d.server].active_downloads.remove(&c.id);

        let elapsed = (now - d.requested_at).max(f64::MIN_POSITIVE);
        let throughput = d.bitrate as f64 * seg / elapsed;
        c.throughput_history.push_back(throughput);
        while c.throughput_history.len() > self.cfg.history_window {
            c.throughput_history.pop_front();
        }

        let stall = c.stalled_since.take().map(|since| now - since);
        if let Some(s) = stall {
            c.rebuffer_time_s += s;
        }
        c.segments.push(SegmentRecord {
            index: d.index,
            bitrate: d.bitrate,
            server: server_id.clone(),
            requested_at: d.requested_at,
            completed_at: now,
            throughput_kbps: throughput,
            stall_s: stall.unwrap_or(0.0),
            stalled: stall.is_some(),
        });
        c.segments_done += 1;
        c.started = true;
        c.buffer_s = (c.buffer_s + seg).min(self.cfg.buffer_cap_s);

        events.push(SimEvent {
            t_s: now,
            client: c.id.clone(),
            server: server_id.clone(),
            kind: EventKind::Done,
            bitrate_kbps: d.bitrate,
            share_kbps: d.share,
        });
        if stall.is_some() {
            events.push(SimEvent {
                t_s: now,
                client: c.id.clone(),
                server: server_id,
                kind: EventKind::RebufEnd,
                bitrate_kbps: d.bitrate,
                share_kbps: d.share,
            });
        }

        if c.buffer_s <= self.cfg.resume_level() + TIME_EPS {
            self.start_request(i, events);
        }
    }

    fn resolve_shares(&mut self) {
        for s in &self.servers {
            let n = s.active_downloads.len();
            self.monitor.share_checks += 1;
            if n == 0 {
                continue;
            }
            let share = fair_share(s.bandwidth_kbps as f64, n);
            // Summation order may round one ulp above the product bound.
            let total: f64 = std::iter::repeat_n(share, n).sum();
            if total > s.bandwidth_kbps as f64 * (1.0 + 1e-12) {
                self.monitor.capacity_violations += 1;
            }
            for id in &s.active_downloads {
                let i = self
                    .clients
                    .binary_search_by(|c| c.id.cmp(id))
                    .expect("active download belongs to a client");
                let c = &mut self.clients[i];
                if let Activity::Downloading(d) = &mut c.activity {
                    d.share = share;
                    c.min_share_kbps = c.min_share_kbps.min(share);
                }
            }
        }
    }

    /// Requested bitrate of every client, as game input. The map is a copy.
    pub fn snapshot_lambdas(&self) -> BTreeMap<ClientId, Kbps> {
        self.clients
            .iter()
            .map(|c| (c.id.clone(), c.current_bitrate))
            .collect()
    }

    /// Points clients at the servers `col` places them on. Returns how many
    /// clients changed server. Nothing changes on error.
    pub fn apply_assignment(&mut self, col: &Collection) -> Result<usize, SimError> {
        let mut targets = Vec::with_capacity(self.clients.len());
        let mut seen = BTreeSet::new();
        for (p, server) in col.assignment() {
            let ci = self
                .client_index(&p.id)
                .ok_or_else(|| SimError::UnknownClient(p.id.clone()))?;
            if self.server_index(server).is_none() {
                return Err(SimError::UnknownServer(server.clone()));
            }
            seen.insert(ci);
            targets.push((ci, server.clone()));
        }
        if let Some(missing) = (0..self.clients.len()).find(|i| !seen.contains(i)) {
            return Err(SimError::MissingClient(self.clients[missing].id.clone()));
        }
        let mut changed = 0;
        for (ci, server) in targets {
            let c = &mut self.clients[ci];
            if c.assigned_server != server {
                c.assigned_server = server;
                changed += 1;
            }
        }
        Ok(changed)
    }

    /// Same segment index range for every client.
    pub fn collect_metrics(&self, window: Range<usize>) -> Result<WindowMetrics, SimError> {
        let windows: BTreeMap<ClientId, Range<usize>> = self
            .clients
            .iter()
            .map(|c| (c.id.clone(), window.clone()))
            .collect();
        self.collect_metrics_per_client(&windows)
    }

    /// Mean quality and stalls over each client's own segment window.
    /// Server counts reflect the current assignment.
    pub fn collect_metrics_per_client(
        &self,
        windows: &BTreeMap<ClientId, Range<usize>>,
    ) -> Result<WindowMetrics, SimError> {
        let mut samples = 0usize;
        let mut bitrate_sum = 0.0;
        let mut level_sum = 0.0;
        let mut rebuffer_events = 0;
        let mut rebuffer_time_s = 0.0;
        for (id, w) in windows {
            let c = self
                .client(id)
                .ok_or_else(|| SimError::UnknownClient(id.clone()))?;
            if w.end > c.segments_done {
                return Err(SimError::WindowBeyondCompleted {
                    client: id.clone(),
                    start: w.start,
                    end: w.end,
                    done: c.segments_done,
                });
            }
            for seg in &c.segments[w.clone()] {
                samples += 1;
                bitrate_sum += seg.bitrate as f64;
                level_sum += self.ladder.index_of(seg.bitrate).unwrap_or(0) as f64;
                if seg.stalled {
                    rebuffer_events += 1;
                }
                rebuffer_time_s += seg.stall_s;
            }
        }
        if samples == 0 {
            return Err(SimError::EmptyWindow);
        }
        let mut per_server_counts: BTreeMap<ServerId, usize> =
            self.servers.iter().map(|s| (s.id.clone(), 0)).collect();
        for c in &self.clients {
            *per_server_counts
                .get_mut(&c.assigned_server)
                .expect("assigned servers are known") += 1;
        }
        Ok(WindowMetrics {
            samples,
            mean_bitrate_kbps: bitrate_sum / samples as f64,
            mean_level_index: level_sum / samples as f64,
            per_server_counts,
            rebuffer_events,
            rebuffer_time_s,
        })
    }
}
