use std::path::Path;

use thiserror::Error;

use crate::{Kbps, ServerId};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("server {0} listed twice")]
    Duplicate(ServerId),
    #[error("server {0} has non-positive bandwidth")]
    NonPositive(ServerId),
    #[error("registry is empty")]
    Empty,
    #[error("reading registry {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Known servers and their capacities, sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerRegistry {
    servers: Vec<(ServerId, Kbps)>,
}

impl ServerRegistry {
    pub fn new(mut servers: Vec<(ServerId, Kbps)>) -> Result<Self, RegistryError> {
        if servers.is_empty() {
            return Err(RegistryError::Empty);
        }
        servers.sort_by(|a, b| a.0.cmp(&b.0));
        for w in servers.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(RegistryError::Duplicate(w[0].0.clone()));
            }
        }
        if let Some((id, _)) = servers.iter().find(|(_, b)| *b <= 0) {
            return Err(RegistryError::NonPositive(id.clone()));
        }
        Ok(Self { servers })
    }

    /// One `server_id bandwidth_kbps` pair per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut servers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| RegistryError::Parse {
                line: n + 1,
                reason,
            };
            let mut parts = line.split_whitespace();
            let (Some(id), Some(bw), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected `server_id bandwidth_kbps`".into()));
            };
            let id = ServerId::new(id).map_err(|e| err(e.to_string()))?;
            let bw: Kbps = bw
                .parse()
                .map_err(|_| err(format!("bad bandwidth {bw:?}")))?;
            servers.push((id, bw));
        }
        Self::new(servers)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn contains(&self, id: &ServerId) -> bool {
        self.servers.binary_search_by(|(s, _)| s.cmp(id)).is_ok()
    }

    pub fn bandwidth(&self, id: &ServerId) -> Option<Kbps> {
        self.servers
            .binary_search_by(|(s, _)| s.cmp(id))
            .ok()
            .map(|i| self.servers[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ServerId, Kbps)> {
        self.servers.iter().map(|(id, b)| (id, *b))
    }

    pub fn len(&self) -> usize {
        self.servers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.servers.is_empty()
    }
}
