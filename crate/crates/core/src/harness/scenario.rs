//! Scenario files: flat `key = value` lines, list values in brackets,
//! `#` comments.
//!
//! ```text
//! servers = [s1:7000, s2:5000, s3:3000, s4:1000]
//! ladder_kbps = [1360, 3265, 6117, 9330]
//! ladder_labels = [360p, 480p, 720p, 1080p]
//! client_counts = [10, 20, 30]
//! replicas = 10
//! seed = 42
//! xi_kbps = 100
//! ```
//!
//! `servers`, `ladder_kbps` and `client_counts` are required; every other key
//! falls back to the built-in scenario's value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::engine::DEFAULT_XI;
use crate::orchestrator::GameTrigger;
use crate::sim::{Ladder, SimConfig};
use crate::{Kbps, ServerId};

/// Name that selects [`ScenarioConfig::builtin`] instead of a file.
pub const BUILTIN_SCENARIO: &str = "paper";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("reading scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub servers: Vec<(ServerId, Kbps)>,
    pub ladder: Ladder,
    pub client_counts: Vec<usize>,
    pub replicas_per_point: usize,
    pub seed: u64,
    pub xi: Kbps,
    /// `None` means the engine default for the instance size.
    pub max_transfers: Option<usize>,
    pub trigger: GameTrigger,
    /// Playback and ABR settings, warm-up and measurement lengths. Its seed
    /// is replaced per point.
    pub sim: SimConfig,
}

impl ScenarioConfig {
    /// Four servers at 7/5/3/1 Mbps, the 1360–9330 Kbps ladder, 10 to 90
    /// clients in steps of 10, ten replicas per count.
    pub fn builtin() -> Self {
        let servers = [("s1", 7000), ("s2", 5000), ("s3", 3000), ("s4", 1000)]
            .into_iter()
            .map(|(id, b)| (ServerId::new(id).expect("valid id"), b))
            .collect();
        Self {
            servers,
            ladder: Ladder::standard(),
            client_counts: (1..=9).map(|k| k * 10).collect(),
            replicas_per_point: 10,
            seed: 42,
            xi: DEFAULT_XI,
            max_transfers: None,
            trigger: GameTrigger::Once,
            sim: SimConfig::default(),
        }
    }

    pub fn warmup_segments(&self) -> usize {
        self.sim.warmup_segments
    }

    pub fn measure_segments(&self) -> usize {
        self.sim.measure_segments
    }

    /// `paper` or a path to a scenario file.
    pub fn load(source: &str) -> Result<Self, ScenarioError> {
        if source == BUILTIN_SCENARIO {
            return Ok(Self::builtin());
        }
        let path = Path::new(source);
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |key: &str, reason: &str| {
            Err(ScenarioError::Invalid {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.servers.is_empty() {
            return invalid("servers", "at least one server required");
        }
        if self.servers.iter().any(|(_, b)| *b <= 0) {
            return invalid("servers", "bandwidths must be positive");
        }
        let mut ids: Vec<_> = self.servers.iter().map(|(id, _)| id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return invalid("servers", "duplicate server id");
        }
        if self.client_counts.is_empty() || self.client_counts.contains(&0) {
            return invalid("client_counts", "must be non-empty and positive");
        }
        if self.replicas_per_point == 0 {
            return invalid("replicas", "must be at least 1");
        }
        if self.xi <= 0 {
            return invalid("xi_kbps", "must be positive");
        }
        if self.max_transfers == Some(0) {
            return invalid("max_transfers", "must be at least 1");
        }
        self.sim.validate().map_err(|e| ScenarioError::Invalid {
            key: "sim".into(),
            reason: e.to_string(),
        })
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ScenarioError::Syntax {
                    line: n + 1,
                    reason: "expected `key = value`".into(),
                });
            };
            let k = k.trim().to_string();
            if kv.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(ScenarioError::DuplicateKey(k));
            }
        }

        let mut cfg = Self::builtin();
        let mut take = |key: &str| kv.remove(key);

        let servers = take("servers").ok_or_else(|| ScenarioError::MissingKey("servers".into()))?;
        cfg.servers = parse_list("servers", &servers)?
            .into_iter()
            .map(|item| {
                let (id, bw) = item.split_once(':').ok_or_else(|| ScenarioError::Invalid {
                    key: "servers".into(),
                    reason: format!("expected `id:kbps`, got {item:?}"),
                })?;
                let id = ServerId::new(id.trim()).map_err(|e| invalid("servers", e))?;
                Ok((id, parse_num("servers", bw.trim())?))
            })
            .collect::<Result<_, ScenarioError>>()?;

        let ladder =
            take("ladder_kbps").ok_or_else(|| ScenarioError::MissingKey("ladder_kbps".into()))?;
        let bitrates: Vec<Kbps> = parse_list("ladder_kbps", &ladder)?
            .iter()
            .map(|s| parse_num("ladder_kbps", s))
            .collect::<Result<_, _>>()?;
        let labels = match take("ladder_labels") {
            Some(v) => parse_list("ladder_labels", &v)?,
            None => bitrates.iter().map(|b| format!("{b}k")).collect(),
        };
        cfg.ladder = Ladder::new(bitrates, labels).map_err(|e| invalid("ladder_kbps", e))?;

        let counts = take("client_counts")
            .ok_or_else(|| ScenarioError::MissingKey("client_counts".into()))?;
        cfg.client_counts = parse_list("client_counts", &counts)?
            .iter()
            .map(|s| parse_num("client_counts", s))
            .collect::<Result<_, _>>()?;

        if let Some(v) = take("replicas") {
            cfg.replicas_per_point = parse_num("replicas", &v)?;
        }
        if let Some(v) = take("seed") {
            cfg.seed = parse_num("seed", &v)?;
        }
        if let Some(v) = take("xi_kbps") {
            cfg.xi = parse_num("xi_kbps", &v)?;
        }
        if let Some(v) = take("max_transfers") {
            cfg.max_transfers = match v.as_str() {
                "auto" => None,
                _ => Some(parse_num("max_transfers", &v)?),
            };
        }
        if let Some(v) = take("game_trigger") {
            cfg.trigger = v.parse().map_err(|e: String| invalid("game_trigger", e))?;
        }
        let sim = &mut cfg.sim;
        for (key, slot) in [
            ("segment_duration_s", &mut sim.segment_duration_s),
            ("buffer_cap_s", &mut sim.buffer_cap_s),
            ("panic_buffer_s", &mut sim.panic_buffer_s),
            ("safety_alpha", &mut sim.safety_alpha),
            ("start_spread_s", &mut sim.start_spread_s),
        ] {
            if let Some(v) = take(key) {
                *slot = parse_num(key, &v)?;
            }
        }
        for (key, slot) in [
            ("history_window", &mut sim.history_window),
            ("warmup_segments", &mut sim.warmup_segments),
            ("measure_segments", &mut sim.measure_segments),
        ] {
            if let Some(v) = take(key) {
                *slot = parse_num(key, &v)?;
            }
        }

        if let Some(key) = kv.into_keys().next() {
            return Err(ScenarioError::UnknownKey(key));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Inverse of [`ScenarioConfig::parse`].
    pub fn to_text(&self) -> String {
        let join = |items: Vec<String>| format!("[{}]", items.join(", "));
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            writeln!(out, "{k} = {v}").expect("writing to a String");
        };
        line(
            "servers",
            join(
                self.servers
                    .iter()
                    .map(|(id, b)| format!("{id}:{b}"))
                    .collect(),
            ),
        );
        line(
            "ladder_kbps",
            join(
                self.ladder
                    .bitrates()
                    .iter()
                    .map(ToString::to_string)
                    .collect(),
            ),
        );
        line("ladder_labels", join(self.ladder.labels().to_vec()));
        line(
            "client_counts",
            join(self.client_counts.iter().map(ToString::to_string).collect()),
        );
        line("replicas", self.replicas_per_point.to_string());
        line("seed", self.seed.to_string());
        line("xi_kbps", self.xi.to_string());
        line(
            "max_transfers",
            self.max_transfers.map_or("auto".into(), |m| m.to_string()),
        );
        line("game_trigger", self.trigger.to_string());
        let s = &self.sim;
        line("segment_duration_s", s.segment_duration_s.to_string());
        line("buffer_cap_s", s.buffer_cap_s.to_string());
        line("panic_buffer_s", s.panic_buffer_s.to_string());
        line("history_window", s.history_window.to_string());
        line("safety_alpha", s.safety_alpha.to_string());
        line("start_spread_s", s.start_spread_s.to_string());
        line("warmup_segments", s.warmup_segments.to_string());
        line("measure_segments", s.measure_segments.to_string());
        out
    }
}

fn invalid(key: &str, e: impl ToString) -> ScenarioError {
    ScenarioError::Invalid {
        key: key.into(),
        reason: e.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ScenarioError> {
    v.parse()
        .map_err(|_| invalid(key, format!("cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<String>, ScenarioError> {
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| invalid(key, "expected a bracketed list"))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|s| {
            let s = s.trim();
            if s.is_empty() {
                Err(invalid(key, "empty list item"))
            } else {
                Ok(s.to_string())
            }
        })
        .collect()
}
