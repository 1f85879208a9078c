mod common;

use modelmesh::hetero::{
    assign_profiles, is_available, simulate_client_time, AvailabilityTrace, ClientProfile, DeviceClass, LinkState,
    Scenario, ScenarioKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct replay: state 0 is the initial state, each later tick consumes one
/// uniform draw from the trace's own ChaCha stream.
fn replay(trace: &AvailabilityTrace, ticks: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(trace.seed);
    let mut on = trace.initial_state == LinkState::On;
    let mut out = vec![on];
    for _ in 1..ticks {
        let u: f64 = rng.random();
        on = if on { u >= trace.p_on_to_off } else { u < trace.p_off_to_on };
        out.push(on);
    }
    out
}

fn client(trace: AvailabilityTrace) -> ClientProfile {
    ClientProfile { client_id: 0, device: DeviceClass::Mid.profile(), trace }
}

#[test]
fn availability_matches_chain_replay() {
    let mut r = common::rng(31);
    for seed in 0..20u64 {
        let trace = AvailabilityTrace {
            p_on_to_off: 0.5,
            p_off_to_on: 0.5,
            tick_seconds: 10.0,
            initial_state: if seed % 2 == 0 { LinkState::On } else { LinkState::Off },
            seed,
        };
        let states = replay(&trace, 200);
        let lib: Vec<bool> = trace.states(199).into_iter().map(|s| s == LinkState::On).collect();
        assert_eq!(lib, states);
        let c = client(trace);
        for _ in 0..100 {
            let a: f64 = r.random_range(0.0..1500.0);
            let b = a + r.random_range(0.0..400.0);
            let (first, last) = ((a / 10.0).floor() as usize, (b / 10.0).floor() as usize);
            let want = states[first..=last].iter().all(|&s| s);
            assert_eq!(is_available(&c, a, b), want, "seed {seed} window [{a}, {b}]");
        }
    }
}

#[test]
fn absorbing_traces() {
    let on = client(AvailabilityTrace { p_on_to_off: 0.0, p_off_to_on: 0.3, tick_seconds: 1.0, initial_state: LinkState::On, seed: 4 });
    let off = client(AvailabilityTrace { p_on_to_off: 0.3, p_off_to_on: 0.0, tick_seconds: 1.0, initial_state: LinkState::Off, seed: 4 });
    for (a, b) in [(0.0, 0.0), (0.0, 1e6), (123.4, 5678.9)] {
        assert!(is_available(&on, a, b));
        assert!(!is_available(&off, a, b));
    }
}

#[test]
fn heterogeneous_device_tally() {
    let n = 1000;
    let profiles = assign_profiles(n, &Scenario::new(ScenarioKind::H), 2024).unwrap();
    let mut tally = [0usize; 3];
    for p in &profiles {
        let i = match p.device.class_label {
            DeviceClass::High => 0,
            DeviceClass::Mid => 1,
            DeviceClass::Low => 2,
        };
        tally[i] += 1;
    }
    assert_eq!(tally.iter().sum::<usize>(), n);
    for c in tally {
        let share = c as f64 / n as f64;
        assert!((share - 1.0 / 3.0).abs() <= 0.05, "tally {tally:?}");
    }
    let again = assign_profiles(n, &Scenario::new(ScenarioKind::H), 2024).unwrap();
    assert_eq!(profiles, again);
}

#[test]
fn uniform_scenario_is_degenerate() {
    let profiles = assign_profiles(50, &Scenario::new(ScenarioKind::U), 3).unwrap();
    for p in &profiles {
        assert_eq!(p.device, profiles[0].device);
        assert!(is_available(p, 0.0, 1e7));
        assert_eq!(simulate_client_time(p, 40, 2, 1000), simulate_client_time(&profiles[0], 40, 2, 1000));
    }
}

#[test]
fn scenario_axes() {
    let bh = assign_profiles(200, &Scenario::new(ScenarioKind::BH), 5).unwrap();
    assert!(bh.iter().all(|p| p.device == bh[0].device));
    assert!(bh.iter().any(|p| !is_available(p, 0.0, 3600.0)));
    let dh = assign_profiles(200, &Scenario::new(ScenarioKind::DH), 5).unwrap();
    assert!(dh.iter().all(|p| is_available(p, 0.0, 1e7)));
    assert!(dh.iter().any(|p| p.device != dh[0].device));
}

#[test]
fn client_time_arithmetic() {
    let mut p = client(AvailabilityTrace::always_on());
    assert_eq!(simulate_client_time(&p, 0, 3, 0), 0.0);
    p.device.compute_rate = 100.0;
    assert_eq!(simulate_client_time(&p, 200, 1, 0), 2.0);
    p.device.uplink = 4.0;
    p.device.downlink = 2.0;
    assert_eq!(simulate_client_time(&p, 200, 1, 8), 2.0 + 4.0 + 2.0);
}
