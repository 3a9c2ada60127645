use std::collections::BTreeMap;

use dynmap_core::filter::{ctra_predict, SelfFilter, SigmaParams};
use dynmap_core::mobility::{TraceSet, VehicleTrace};
use dynmap_core::{distance, CongestionKind, Error, Noise, SimConfig, State, StrategyKind, VehicleId};
use dynmap_sim::world::{stream_rng, Stream};
use dynmap_sim::{run_sim, scenario_trace, World};

fn small_config(vehicles: usize, seconds: f64) -> SimConfig {
    SimConfig { vehicles, sim_time: seconds, ..SimConfig::default() }
}

fn drive(start: State, slots: usize, mut control: impl FnMut(usize, &mut State)) -> Vec<State> {
    let mut s = start;
    let mut out = Vec::with_capacity(slots);
    for k in 0..slots {
        control(k, &mut s);
        out.push(s);
        s = ctra_predict(&s, 0.1);
    }
    out
}

fn trace_of(states: Vec<Vec<State>>) -> TraceSet {
    let vehicles: BTreeMap<_, _> = states
        .into_iter()
        .enumerate()
        .map(|(i, s)| (VehicleId(i as u32), VehicleTrace { first_slot: 0, states: s }))
        .collect();
    let mut set = TraceSet { slot: 0.1, area_km2: 0.0, vehicles, names: BTreeMap::new() };
    set.area_km2 = set.bounding_area_km2();
    set
}

#[test]
fn runs_are_reproducible() {
    let cfg = small_config(20, 10.0);
    let trace = scenario_trace(&cfg, 5).unwrap();
    let a = run_sim(&cfg, &trace, 5, None).unwrap();
    let b = run_sim(&cfg, &trace, 5, None).unwrap();
    assert_eq!(a, b);
    let c = run_sim(&cfg, &trace, 6, None).unwrap();
    assert_ne!(a, c);
}

#[test]
fn empty_world_is_a_no_op() {
    let cfg = small_config(1, 1.0);
    let trace = TraceSet { slot: 0.1, area_km2: 0.0, vehicles: BTreeMap::new(), names: BTreeMap::new() };
    let m = run_sim(&cfg, &trace, 1, None).unwrap();
    assert_eq!(m.transmissions, 0);
    assert_eq!(m.measured_slots, 0);
}

#[test]
fn lone_vehicle_error_is_its_self_filter_error() {
    let cfg = small_config(1, 10.0);
    let states = drive(State::new(0.0, 0.0, 0.3, 8.0, 0.2, 0.05), 100, |_, _| {});
    let trace = trace_of(vec![states.clone()]);
    let m = run_sim(&cfg, &trace, 9, None).unwrap();

    // replay the same sensor stream through a standalone filter
    let noise = Noise::new(cfg.q, cfg.noise_diagonal());
    let mut rng = stream_rng(9, Stream::Noise(VehicleId(0)));
    let mut filter = SelfFilter::new(&noise.observe(&states[0], &mut rng), &noise);
    let mut expected = Vec::new();
    for (k, s) in states.iter().enumerate().skip(1) {
        filter.step(&noise.observe(s, &mut rng), 0.1, &noise, &SigmaParams::default()).unwrap();
        if k as u64 >= cfg.warmup_slots() {
            expected.push(distance(&filter.estimate.mean, s));
        }
    }
    // the weight at zero distance is just below one
    let w0 = dynmap_core::metrics::richards_weight(0.0, &dynmap_core::metrics::RichardsParams::default());
    assert_eq!(m.series.len(), expected.len());
    for (sample, e) in m.series.iter().zip(&expected) {
        assert!((sample.network_error - w0 * e).abs() < 1e-12);
    }
    assert_eq!(m.collisions, 0);
    assert_eq!(m.detection_error, 0.0);
}

#[test]
fn isolated_subcarriers_never_collide() {
    let mut cfg = small_config(10, 10.0);
    cfg.n_sc = 10;
    cfg.t_period = 0.1;
    let trace = scenario_trace(&cfg, 2).unwrap();
    let m = run_sim(&cfg, &trace, 2, None).unwrap();
    assert!(m.transmissions > 100);
    assert_eq!(m.collisions, 0);
}

#[test]
fn aggressive_periods_congest_the_channel() {
    let mut cfg = small_config(62, 20.0);
    cfg.n_sc = 2;
    let trace = scenario_trace(&cfg, 3).unwrap();
    cfg.t_period = 0.1;
    let fast = run_sim(&cfg, &trace, 3, None).unwrap();
    cfg.t_period = 1.0;
    let slow = run_sim(&cfg, &trace, 3, None).unwrap();
    assert!(fast.collision_rate > 5.0 * slow.collision_rate, "{} vs {}", fast.collision_rate, slow.collision_rate);
}

#[test]
fn delivery_respects_delay_and_nobody_tracks_itself() {
    let mut cfg = small_config(30, 8.0);
    cfg.delay = 0.3;
    cfg.t_period = 0.3;
    let trace = scenario_trace(&cfg, 4).unwrap();
    let mut world = World::new(&cfg, &trace, 4, None).unwrap();
    let mut delivered = 0;
    while let Some(report) = world.step().unwrap() {
        assert!(world.in_flight() <= 30 * 30 * 3);
        for (id, agent) in world.agents() {
            assert!(!agent.tracks().contains_key(&id));
            assert!(agent.believed_neighbors().iter().all(|v| *v != id));
            for tr in agent.tracks().values() {
                if tr.last_update_slot == report.slot {
                    delivered += 1;
                }
                assert!(tr.last_update_slot >= tr.source_slot + 3);
                assert_eq!(tr.estimate_slot, report.slot);
            }
        }
    }
    assert!(delivered > 0);
}

#[test]
fn sharp_turn_triggers_threshold_broadcast() {
    let mut cfg = small_config(2, 12.0);
    cfg.strategy = StrategyKind::Etb;
    cfg.e_thr = 1.0;
    cfg.q = 1e-4;
    for r in [&mut cfg.r11, &mut cfg.r22, &mut cfg.r33, &mut cfg.r44, &mut cfg.r55, &mut cfg.r66] {
        *r = 1e-6;
    }
    let turn_at = 60;
    let mover = drive(State::new(0.0, 0.0, 0.0, 10.0, 0.0, 0.0), 120, |k, s| {
        if k == turn_at {
            s.omega = 1.0;
        }
    });
    let parked = vec![State::new(40.0, 30.0, 0.0, 0.0, 0.0, 0.0); 120];
    let trace = trace_of(vec![mover.clone(), parked]);
    let mut world = World::new(&cfg, &trace, 1, None).unwrap();

    let (a, b) = (VehicleId(0), VehicleId(1));
    let mut fired = None;
    let mut errors = Vec::new();
    while let Some(report) = world.step().unwrap() {
        let t = report.slot as usize;
        if t > turn_at && fired.is_none() && report.queued.contains(&a) {
            fired = Some(t);
        }
        let err = world.agent(b).unwrap().tracks().get(&a).map(|tr| distance(&tr.estimate.mean, &mover[t]));
        errors.push(err);
    }
    let fired = fired.expect("the turn triggers a broadcast");
    assert!(fired - turn_at <= 20, "fired {} slots after the turn", fired - turn_at);
    // before the triggered packet lands the receiver's prediction has drifted
    let before = errors[fired].unwrap();
    let after = errors[fired + cfg.delay_slots() as usize].unwrap();
    assert!(before > cfg.e_thr * 0.5, "{before}");
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn threshold_with_congestion_control_needs_a_map() {
    let mut cfg = small_config(5, 5.0);
    cfg.strategy = StrategyKind::Etb;
    cfg.congestion = CongestionKind::Nacc;
    let trace = scenario_trace(&cfg, 1).unwrap();
    match run_sim(&cfg, &trace, 1, None) {
        Err(Error::Config(m)) => assert!(m.contains("map"), "{m}"),
        other => panic!("expected a configuration error, got {other:?}"),
    }
}

#[test]
fn congestion_control_moves_the_access_probability() {
    let mut cfg = small_config(62, 10.0);
    cfg.congestion = CongestionKind::Cscc;
    cfg.t_period = 0.1;
    let trace = scenario_trace(&cfg, 8).unwrap();
    let mut world = World::new(&cfg, &trace, 8, None).unwrap();
    while world.step().unwrap().is_some() {}
    let (_, agent) = world.agents().next().unwrap();
    let rho = agent.congestion().rho;
    assert!(rho < 1.0 && rho >= cfg.rho_min, "{rho}");
    assert!((agent.strategy().t_period - cfg.slot / rho).abs() < 1e-9);
    assert!(agent.congestion().cbr_vehicle > 0.0);
}
