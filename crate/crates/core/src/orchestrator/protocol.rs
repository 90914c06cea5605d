//! Line protocol, one request per line:
//!
//! ```text
//! GET <client>            -> <server> | ERR NOTFOUND
//! SET <client> <server>   -> OK <version> | ERR NOSERVER
//! DUMP                    -> <client> <server> ... END
//! anything else           -> ERR BADREQ
//! ```
//!
//! Tokens are separated by exactly one space. Requests longer than
//! [`MAX_LINE_BYTES`] (newline included) are rejected.

use super::{Orchestrator, OrchestratorError};
use crate::{ClientId, ServerId};

pub const MAX_LINE_BYTES: usize = 256;

const BADREQ: &str = "ERR BADREQ";

/// `line` excludes the terminating newline.
pub(super) fn handle(o: &Orchestrator, line: &[u8]) -> String {
    if line.len() >= MAX_LINE_BYTES {
        return BADREQ.into();
    }
    let Ok(line) = std::str::from_utf8(line) else {
        return BADREQ.into();
    };
    let tokens: Vec<&str> = line.split(' ').collect();
    match tokens.as_slice() {
        ["GET", client] => {
            let Ok(client) = ClientId::new(*client) else {
                return BADREQ.into();
            };
            match o.get_assignment(&client) {
                Ok(server) => server.to_string(),
                Err(_) => "ERR NOTFOUND".into(),
            }
        }
        ["SET", client, server] => {
            let (Ok(client), Ok(server)) = (ClientId::new(*client), ServerId::new(*server)) else {
                return BADREQ.into();
            };
            match o.set_assignment(client, server) {
                Ok(v) => format!("OK {v}"),
                Err(OrchestratorError::UnknownServer(_)) => "ERR NOSERVER".into(),
                // persistence failure; the mapping itself was applied
                Err(_) => "ERR IO".into(),
            }
        }
        ["DUMP"] => {
            let store = o.snapshot();
            let mut out = String::new();
            for (c, s) in store.iter() {
                out.push_str(&format!("{c} {s}\n"));
            }
            out.push_str("END");
            out
        }
        _ => BADREQ.into(),
    }
}
