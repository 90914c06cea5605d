//! Text form of a [`Collection`]:
//!
//! ```json
//! {"servers": [{"id": "s1", "bandwidth_kbps": 7000,
//!               "members": [{"id": "c1", "lambda_kbps": 1360}]}]}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Coalition, Collection, EngineError, PlayerRef};
use crate::{ClientId, Kbps, ServerId};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("malformed collection snapshot: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid collection: {0}")]
    Invalid(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberEntry {
    pub id: ClientId,
    pub lambda_kbps: Kbps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerEntry {
    pub id: ServerId,
    pub bandwidth_kbps: Kbps,
    #[serde(default)]
    pub members: Vec<MemberEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionSnapshot {
    pub servers: Vec<ServerEntry>,
}

impl CollectionSnapshot {
    pub fn parse(text: &str) -> Result<Self, SnapshotError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("snapshot serializes");
        s.push('\n');
        s
    }

    pub fn to_collection(&self) -> Result<Collection, SnapshotError> {
        let coalitions = self
            .servers
            .iter()
            .map(|s| {
                Coalition::with_members(
                    s.id.clone(),
                    s.bandwidth_kbps,
                    s.members
                        .iter()
                        .map(|m| PlayerRef::new(m.id.clone(), m.lambda_kbps)),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Collection::new(coalitions)?)
    }
}

impl From<&Collection> for CollectionSnapshot {
    fn from(col: &Collection) -> Self {
        let servers = col
            .coalitions()
            .iter()
            .map(|c| ServerEntry {
                id: c.server_id().clone(),
                bandwidth_kbps: c.bandwidth(),
                members: c
                    .members()
                    .map(|p| MemberEntry {
                        id: p.id,
                        lambda_kbps: p.lambda,
                    })
                    .collect(),
            })
            .collect();
        Self { servers }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
  "servers": [
    {"id": "s2", "bandwidth_kbps": 1000,
     "members": [{"id": "c1", "lambda_kbps": 1360}, {"id": "c2", "lambda_kbps": 3265}]},
    {"id": "s1", "bandwidth_kbps": 7000}
  ]
}"#;

    #[test]
    fn parses_and_orders_servers() {
        let col = CollectionSnapshot::parse(DOC)
            .unwrap()
            .to_collection()
            .unwrap();
        let ids: Vec<_> = col
            .coalitions()
            .iter()
            .map(|c| c.server_id().as_str())
            .collect();
        assert_eq!(ids, ["s1", "s2"]);
        assert_eq!(col.player_count(), 2);
        let back = CollectionSnapshot::from(&col);
        let again = CollectionSnapshot::parse(&back.to_text()).unwrap();
        assert_eq!(again.to_collection().unwrap(), col);
    }

    #[test]
    fn rejects_invalid_documents() {
        assert!(matches!(
            CollectionSnapshot::parse("{\"servers\": [{\"id\": \"s1\"}]}"),
            Err(SnapshotError::Parse(_))
        ));
        let dup = r#"{"servers": [
            {"id": "a", "bandwidth_kbps": 1, "members": [{"id": "c", "lambda_kbps": 1}]},
            {"id": "b", "bandwidth_kbps": 1, "members": [{"id": "c", "lambda_kbps": 1}]}]}"#;
        assert!(matches!(
            CollectionSnapshot::parse(dup).unwrap().to_collection(),
            Err(SnapshotError::Invalid(EngineError::DuplicatePlayer(_)))
        ));
        let bad_id = r#"{"servers": [{"id": "s 1", "bandwidth_kbps": 1}]}"#;
        assert!(CollectionSnapshot::parse(bad_id).is_err());
    }
}
