use coalition_cdn::engine::{Collection, PlayerRef};
use coalition_cdn::sim::{EventKind, Ladder, SimConfig, Simulation};
use coalition_cdn::{ClientId, Kbps, ServerId};

fn sid(s: &str) -> ServerId {
    s.parse().unwrap()
}

fn cid(i: usize) -> ClientId {
    ClientId::new(format!("c{i:02}")).unwrap()
}

fn single_rung(bitrate: Kbps) -> Ladder {
    Ladder::new(vec![bitrate], vec!["only".into()]).unwrap()
}

/// Fixed-tick processor-sharing model of the same clients, used as an
/// independent reference for the event loop. Only valid for one-rung ladders,
/// where no bitrate decision depends on timing.
struct Ticked {
    completions: Vec<Vec<f64>>,
    rebuffers: Vec<usize>,
    stall_time: Vec<f64>,
}

fn ticked_model(
    cfg: &SimConfig,
    bitrate: Kbps,
    servers: &[(ServerId, Kbps)],
    placement: &[usize],
    starts: &[f64],
    horizon: f64,
    dt: f64,
) -> Ticked {
    let n = placement.len();
    let seg_kbits = bitrate as f64 * cfg.segment_duration_s;
    let resume = cfg.buffer_cap_s - cfg.segment_duration_s;
    let mut remaining: Vec<Option<f64>> = vec![None; n];
    let mut buffer = vec![0.0f64; n];
    let mut playing = vec![false; n];
    let mut stalled = vec![false; n];
    // stall time is booked when the stall ends
    let mut pending = vec![0.0f64; n];
    let mut out = Ticked {
        completions: vec![Vec::new(); n],
        rebuffers: vec![0; n],
        stall_time: vec![0.0; n],
    };
    let mut t = 0.0;
    while t < horizon {
        for i in 0..n {
            let idle = remaining[i].is_none();
            let fresh = !playing[i] && out.completions[i].is_empty();
            if idle && ((fresh && t >= starts[i]) || (playing[i] && buffer[i] <= resume)) {
                remaining[i] = Some(seg_kbits);
            }
        }
        let mut active = vec![0usize; servers.len()];
        for i in 0..n {
            if remaining[i].is_some() {
                active[placement[i]] += 1;
            }
        }
        for i in 0..n {
            if playing[i] && !stalled[i] {
                buffer[i] -= dt;
                if buffer[i] <= 0.0 {
                    buffer[i] = 0.0;
                    stalled[i] = true;
                    out.rebuffers[i] += 1;
                }
            } else if stalled[i] {
                pending[i] += dt;
            }
            if let Some(r) = remaining[i].as_mut() {
                let s = placement[i];
                *r -= servers[s].1 as f64 / active[s] as f64 * dt;
                if *r <= 1e-9 {
                    remaining[i] = None;
                    out.completions[i].push(t + dt);
                    buffer[i] = (buffer[i] + cfg.segment_duration_s).min(cfg.buffer_cap_s);
                    playing[i] = true;
                    stalled[i] = false;
                    out.stall_time[i] += std::mem::take(&mut pending[i]);
                }
            }
        }
        t += dt;
    }
    out
}

fn run_event_loop(
    cfg: &SimConfig,
    ladder: Ladder,
    servers: &[(ServerId, Kbps)],
    placement: &[usize],
    horizon: f64,
) -> Simulation {
    let assignment: Vec<(ClientId, ServerId)> = placement
        .iter()
        .enumerate()
        .map(|(i, &s)| (cid(i), servers[s].0.clone()))
        .collect();
    let mut sim = Simulation::new(cfg.clone(), ladder, servers, &assignment).unwrap();
    sim.advance(horizon).unwrap();
    sim
}

fn compare_with_ticked(bitrate: Kbps, servers: &[(ServerId, Kbps)], placement: &[usize]) {
    let cfg = SimConfig {
        seed: 7,
        ..SimConfig::default()
    };
    let horizon = 120.0;
    let dt = 1e-3;
    let sim = run_event_loop(&cfg, single_rung(bitrate), servers, placement, horizon);
    let starts: Vec<f64> = sim
        .clients()
        .iter()
        .map(|c| {
            c.segments
                .first()
                .map(|s| s.requested_at)
                .unwrap_or(horizon)
        })
        .collect();
    let model = ticked_model(&cfg, bitrate, servers, placement, &starts, horizon, dt);

    for (i, c) in sim.clients().iter().enumerate() {
        let event_times: Vec<f64> = c.segments.iter().map(|s| s.completed_at).collect();
        let ticked = &model.completions[i];
        // completions near the horizon may fall on either side of it
        let common = event_times.len().min(ticked.len());
        assert!(
            event_times.len().abs_diff(ticked.len()) <= 1,
            "{}: {} vs {} segments",
            c.id,
            event_times.len(),
            ticked.len()
        );
        for k in 0..common {
            assert!(
                (event_times[k] - ticked[k]).abs() < 0.05,
                "{} segment {k}: event loop {} vs ticked {}",
                c.id,
                event_times[k],
                ticked[k]
            );
        }
        assert_eq!(
            c.rebuffer_events, model.rebuffers[i],
            "{} rebuffer count",
            c.id
        );
        // each tick-quantized stall start and end may be off by one tick
        let stall_tol = dt * (4 * c.segments.len() + 10) as f64;
        assert!(
            (c.rebuffer_time_s - model.stall_time[i]).abs() < stall_tol,
            "{} stall time {} vs {}",
            c.id,
            c.rebuffer_time_s,
            model.stall_time[i]
        );
    }
}

#[test]
fn matches_ticked_model_underloaded() {
    let servers = [(sid("s1"), 7000), (sid("s2"), 3000)];
    compare_with_ticked(1360, &servers, &[0, 0, 0, 1, 1]);
}

#[test]
fn matches_ticked_model_overloaded() {
    // 4 x 1360 on 3000 Kbps cannot keep up, so clients stall repeatedly
    let servers = [(sid("s1"), 5000), (sid("s2"), 3000)];
    compare_with_ticked(1360, &servers, &[0, 0, 1, 1, 1, 1]);
}

#[test]
fn matches_ticked_model_saturated_pause_cycle() {
    // one client far below capacity fills its buffer and cycles ON-OFF
    let servers = [(sid("s1"), 9000)];
    compare_with_ticked(3265, &servers, &[0]);
}

fn steady_bitrates(n: usize, bandwidth: Kbps) -> Vec<Kbps> {
    let servers = [(sid("s1"), bandwidth)];
    let assignment: Vec<(ClientId, ServerId)> = (0..n).map(|i| (cid(i), sid("s1"))).collect();
    let mut sim = Simulation::new(
        SimConfig::default(),
        Ladder::standard(),
        &servers,
        &assignment,
    )
    .unwrap();
    sim.run_until_segments(75).unwrap();
    let m = sim.collect_metrics(15..75).unwrap();
    assert_eq!(m.samples, n * 60);
    sim.clients()
        .iter()
        .flat_map(|c| c.segments[15..75].iter().map(|s| s.bitrate))
        .collect()
}

#[test]
fn single_client_settles_at_6117() {
    let rates = steady_bitrates(1, 7000);
    assert!(rates.iter().all(|&r| r == 6117), "{rates:?}");
}

/// Late-run selections of each client, two clients sharing 7000 Kbps.
fn two_client_tail(seed: u64) -> Vec<Vec<Kbps>> {
    let servers = [(sid("s1"), 7000)];
    let assignment = [(cid(0), sid("s1")), (cid(1), sid("s1"))];
    let cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    let mut sim = Simulation::new(cfg, Ladder::standard(), &servers, &assignment).unwrap();
    sim.run_until_segments(300).unwrap();
    sim.clients()
        .iter()
        .map(|c| c.segments[200..300].iter().map(|s| s.bitrate).collect())
        .collect()
}

#[test]
fn two_clients_steady_state_depends_on_start_order() {
    // 0.9 x 3500 admits only 1360, but a client whose peer idles in ON-OFF
    // measures the full link and can hold 3265
    let split = two_client_tail(0);
    assert!(split[0].iter().all(|&r| r == 1360));
    assert!(split[1].iter().all(|&r| r == 3265));
    let both = two_client_tail(1);
    assert!(both.iter().flatten().all(|&r| r == 3265));
    for seed in 0..20 {
        let tail = two_client_tail(seed);
        let demand: f64 = tail
            .iter()
            .map(|t| t.iter().sum::<Kbps>() as f64 / t.len() as f64)
            .sum();
        assert!(demand <= 7000.0, "seed {seed}: {demand}");
    }
}

#[test]
fn more_clients_never_raise_quality() {
    let mut previous = f64::INFINITY;
    for n in 1..=10 {
        let rates = steady_bitrates(n, 7000);
        let mean = rates.iter().sum::<Kbps>() as f64 / rates.len() as f64;
        assert!(mean <= previous, "{n} clients: {mean} > {previous}");
        previous = mean;
    }
}

#[test]
fn per_client_work_conservation() {
    let servers = [(sid("a"), 7000), (sid("b"), 1000)];
    let assignment: Vec<(ClientId, ServerId)> = (0..6)
        .map(|i| (cid(i), if i < 4 { sid("a") } else { sid("b") }))
        .collect();
    let mut sim = Simulation::new(
        SimConfig::default(),
        Ladder::standard(),
        &servers,
        &assignment,
    )
    .unwrap();
    sim.run_until_segments(30).unwrap();
    for c in sim.clients() {
        let done: f64 = c.segments.iter().map(|s| s.bitrate as f64 * 2.0).sum();
        let in_flight = if c.is_downloading() {
            9330.0 * 2.0
        } else {
            0.0
        };
        assert!(c.downloaded_kbits >= done - 1e-6, "{}", c.id);
        assert!(c.downloaded_kbits <= done + in_flight + 1e-6, "{}", c.id);
    }
}

#[test]
fn busy_server_delivers_its_capacity() {
    // ten clients on 1000 Kbps never leave the server idle after the first start
    let servers = [(sid("s1"), 1000)];
    let assignment: Vec<(ClientId, ServerId)> = (0..10).map(|i| (cid(i), sid("s1"))).collect();
    let cfg = SimConfig {
        start_spread_s: 0.0,
        ..SimConfig::default()
    };
    let mut sim = Simulation::new(cfg, Ladder::standard(), &servers, &assignment).unwrap();
    sim.advance(200.0).unwrap();
    let total: f64 = sim.clients().iter().map(|c| c.downloaded_kbits).sum();
    assert!((total - 200_000.0).abs() < 1e-3, "{total}");
    assert_eq!(sim.monitor().capacity_violations, 0);
    assert_eq!(sim.monitor().buffer_violations, 0);
}

#[test]
fn event_trace_is_deterministic() {
    let servers = [(sid("s1"), 7000), (sid("s2"), 5000), (sid("s3"), 1000)];
    let assignment: Vec<(ClientId, ServerId)> =
        (0..9).map(|i| (cid(i), servers[i % 3].0.clone())).collect();
    let trace = || {
        let cfg = SimConfig {
            seed: 99,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(cfg, Ladder::standard(), &servers, &assignment).unwrap();
        sim.advance(300.0)
            .unwrap()
            .iter()
            .map(|e| format!("{e}\n"))
            .collect::<String>()
    };
    let a = trace();
    assert!(a.lines().count() > 100);
    assert_eq!(a, trace());
}

#[test]
fn events_are_time_ordered_with_id_ties() {
    let servers = [(sid("s1"), 4000)];
    let assignment: Vec<(ClientId, ServerId)> = (0..4).map(|i| (cid(i), sid("s1"))).collect();
    let cfg = SimConfig {
        start_spread_s: 0.0,
        ..SimConfig::default()
    };
    let mut sim = Simulation::new(cfg, Ladder::standard(), &servers, &assignment).unwrap();
    let events = sim.advance(60.0).unwrap();
    for w in events.windows(2) {
        assert!(w[0].t_s <= w[1].t_s);
    }
    // all four finish their first segment together
    let first_done: Vec<&ClientId> = events
        .iter()
        .filter(|e| e.kind == EventKind::Done)
        .take(4)
        .map(|e| &e.client)
        .collect();
    assert_eq!(first_done, [&cid(0), &cid(1), &cid(2), &cid(3)]);
}

#[test]
fn reassignment_applies_at_next_request() {
    let servers = [(sid("s1"), 7000), (sid("s2"), 5000)];
    let assignment = [(cid(0), sid("s1")), (cid(1), sid("s1"))];
    let mut sim = Simulation::new(
        SimConfig::default(),
        Ladder::standard(),
        &servers,
        &assignment,
    )
    .unwrap();
    sim.run_until_segments(5).unwrap();
    let col = Collection::from_assignment(
        servers.iter().map(|(id, b)| (id, *b)),
        [
            (PlayerRef::new(cid(0), 1360), &servers[0].0),
            (PlayerRef::new(cid(1), 1360), &servers[1].0),
        ],
    )
    .unwrap();
    assert_eq!(sim.apply_assignment(&col).unwrap(), 1);
    assert_eq!(sim.apply_assignment(&col).unwrap(), 0);
    let moved = sim.client(&cid(1)).unwrap();
    let boundary = moved.segments_done + usize::from(moved.is_downloading());
    sim.run_until_segments(boundary + 3).unwrap();
    let c = sim.client(&cid(1)).unwrap();
    assert!(c.segments[boundary..].iter().all(|s| s.server == sid("s2")));
    if boundary > 0 {
        assert_eq!(c.segments[boundary - 1].server, sid("s1"));
    }
}

/// The fair-share bound alone does not rule out stalls: a client that starts
/// alone measures the whole link, picks a high rung with exactly one segment
/// buffered, and is then halved by a second arrival.
#[test]
fn stall_despite_ample_fair_share() {
    let servers = [(sid("s1"), 7000)];
    let assignment = [(cid(0), sid("s1")), (cid(1), sid("s1"))];
    let threshold = 1360.0 / SimConfig::default().safety_alpha;
    let seed = (0..200).find(|&seed| {
        let cfg = SimConfig {
            seed,
            start_spread_s: 3.0,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(cfg, Ladder::standard(), &servers, &assignment).unwrap();
        sim.advance(60.0).unwrap();
        sim.clients()
            .iter()
            .any(|c| c.min_share_kbps >= threshold && c.rebuffer_events > 0)
    });
    assert!(seed.is_some(), "no seed reproduced the early-ramp stall");
}
