use std::collections::BTreeMap;

use super::ServerState;
use crate::ClientId;

/// Equal split of the server's bandwidth over its active downloads.
///
/// The share is rounded down to the nearest float whose n-fold product does
/// not exceed the capacity.
pub fn allocate_shares(server: &ServerState) -> BTreeMap<ClientId, f64> {
    let n = server.active_downloads.len();
    if n == 0 {
        return BTreeMap::new();
    }
    let share = fair_share(server.bandwidth_kbps as f64, n);
    server
        .active_downloads
        .iter()
        .map(|id| (id.clone(), share))
        .collect()
}

pub(crate) fn fair_share(capacity: f64, n: usize) -> f64 {
    let mut share = capacity / n as f64;
    while share * n as f64 > capacity {
        share = f64::from_bits(share.to_bits() - 1);
    }
    share
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ServerId;

    fn server(b: i64, n: usize) -> ServerState {
        let mut s = ServerState::new(ServerId::new("s").unwrap(), b);
        for i in 0..n {
            s.active_downloads
                .insert(ClientId::new(format!("c{i}")).unwrap());
        }
        s
    }

    #[test]
    fn equal_split_examples() {
        let two = allocate_shares(&server(7000, 2));
        assert_eq!(two.values().copied().collect::<Vec<_>>(), [3500.0, 3500.0]);
        assert!(allocate_shares(&server(7000, 0)).is_empty());
        let seven = allocate_shares(&server(7000, 7));
        assert!(seven.values().all(|&s| s == 1000.0));
    }

    #[test]
    fn never_exceeds_capacity() {
        for b in [1000, 3000, 5000, 7000, 9999] {
            for n in 1..100 {
                let share = fair_share(b as f64, n);
                assert!(share * n as f64 <= b as f64);
                assert!((share * n as f64 - b as f64).abs() < 1e-6);
            }
        }
    }
}
