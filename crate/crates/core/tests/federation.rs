mod common;

use common::*;
use modelmesh::datagen::{generate, FederatedDataset, SampleCounts, SyntheticSpec};
use modelmesh::error::Error;
use modelmesh::federation::{aggregate, local_seed, run_fl, select_clients, DropReason, FLConfig};
use modelmesh::hetero::{AvailabilityTrace, ClientProfile, DeviceClass};
use modelmesh::ml::{ce_loss_and_grad, sgd_train, ArchDescriptor, Model, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn aggregate_matches_weighted_mean() {
    let mut r = rng(21);
    for case in 0..60 {
        let arch = random_arch(&mut r, 8);
        let k = r.random_range(1..=8);
        let updates: Vec<(Model<f64>, usize)> =
            (0..k).map(|_| (random_model(&mut r, &arch), r.random_range(1..=1000))).collect();
        let got = aggregate(&updates).unwrap();
        let plain: Vec<(Vec<f64>, usize)> = updates.iter().map(|(m, n)| (m.params().to_vec(), *n)).collect();
        let want = brute_force_mean(&plain);
        for (g, w) in got.params().iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "case {case}: {g} vs {w}");
        }
        assert_eq!(got.arch(), &arch);
    }
}

#[test]
fn aggregate_hand_cases() {
    let arch = ArchDescriptor::logistic(1, 2);
    // Params of a 1-input, 2-class LR: two weights then two biases.
    let a = Model::new(arch.clone(), vec![1.0, 3.0, 1.0, 3.0]).unwrap();
    let b = Model::new(arch.clone(), vec![5.0, 7.0, 5.0, 7.0]).unwrap();
    assert_eq!(aggregate(&[(a.clone(), 1), (b, 3)]).unwrap().params(), &[4.0, 6.0, 4.0, 6.0]);

    let neg = a.with_params(a.params().iter().map(|v| -v).collect()).unwrap();
    assert!(aggregate(&[(a.clone(), 5), (neg, 5)]).unwrap().params().iter().all(|v| *v == 0.0));

    assert_eq!(aggregate(&[(a.clone(), 17)]).unwrap(), a);
}

#[test]
fn aggregate_is_exactly_permutation_invariant() {
    let mut r = rng(22);
    for _ in 0..50 {
        let arch = random_arch(&mut r, 8);
        let k = r.random_range(2..=8);
        let mut updates: Vec<(Model<f64>, usize)> =
            (0..k).map(|_| (random_model(&mut r, &arch), r.random_range(1..=5))).collect();
        let first = aggregate(&updates).unwrap();
        updates.shuffle(&mut r);
        assert_eq!(aggregate(&updates).unwrap(), first);
    }
}

#[test]
fn aggregate_errors() {
    assert!(matches!(aggregate::<f64>(&[]), Err(Error::Aggregation(_))));
    let a = Model::<f64>::zeros(ArchDescriptor::logistic(2, 2)).unwrap();
    let b = Model::<f64>::zeros(ArchDescriptor::logistic(3, 2)).unwrap();
    assert!(matches!(aggregate(&[(a, 1), (b, 1)]), Err(Error::Arch(_))));
}

#[test]
fn selection_is_uniform() {
    let pool: Vec<usize> = (0..100).collect();
    let mut counts = [0usize; 100];
    let draws = 10_000;
    for round in 0..draws {
        let s = select_clients(&pool, 10, round, 99);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]), "sorted and distinct");
        for id in s {
            counts[id] += 1;
        }
    }
    for (id, c) in counts.iter().enumerate() {
        let f = *c as f64 / draws as f64;
        assert!((f - 0.1).abs() <= 0.02, "client {id} selected with frequency {f}");
    }
}

#[test]
fn selection_edge_cases() {
    assert_eq!(select_clients(&[7], 3, 0, 1), vec![7]);
    assert!(select_clients(&[], 3, 0, 1).is_empty());
    let pool: Vec<usize> = (0..50).collect();
    assert_eq!(select_clients(&pool, 5, 4, 8), select_clients(&pool, 5, 4, 8));
    assert_ne!(select_clients(&pool, 5, 4, 8), select_clients(&pool, 5, 5, 8));
}

fn dataset(num_clients: usize, seed: u64) -> FederatedDataset {
    generate(&SyntheticSpec {
        num_clients,
        input_dim: 5,
        num_classes: 3,
        alpha: 0.5,
        beta: 0.5,
        samples_per_client: SampleCounts { min: 10, max: 40, power_law_exponent: 2.0 },
        shared_weight_scale: 0.0,
        holdout_size: 60,
        seed,
    })
    .unwrap()
}

fn profiles(n: usize, class: DeviceClass) -> Vec<ClientProfile> {
    (0..n).map(|client_id| ClientProfile { client_id, device: class.profile(), trace: AvailabilityTrace::always_on() }).collect()
}

fn fl_config(rounds: usize, k: usize, local: TrainConfig) -> FLConfig {
    FLConfig { num_rounds: rounds, clients_per_round: k, local, round_deadline: Some(1e9), selection_seed: 5 }
}

fn init(ds: &FederatedDataset) -> Model<f64> {
    let arch = ArchDescriptor::mlp(ds.input_dim(), vec![4], ds.num_classes());
    Model::init(arch, &mut rng(1)).unwrap()
}

#[test]
fn no_stragglers_when_deadline_is_generous() {
    let ds = dataset(12, 1);
    let local = TrainConfig { epochs: 2, batch_size: 4, learning_rate: 0.1, seed: 3 };
    let (_, reports) = run_fl(&ds, &profiles(12, DeviceClass::Mid), &fl_config(6, 4, local), &init(&ds)).unwrap();
    for rep in &reports {
        assert!(rep.dropped.is_empty());
        assert_eq!(rep.completed, rep.selected);
        assert_eq!(rep.selected.len(), 4);
        assert!(rep.aggregated);
    }
}

#[test]
fn single_client_round_is_its_local_model() {
    let ds = dataset(5, 2);
    let local = TrainConfig { epochs: 3, batch_size: 4, learning_rate: 0.2, seed: 9 };
    let start = init(&ds);
    let (global, reports) = run_fl(&ds, &profiles(5, DeviceClass::High), &fl_config(1, 1, local.clone()), &start).unwrap();
    let id = reports[0].completed[0];
    let cfg = TrainConfig { seed: local_seed(local.seed, 0, id), ..local };
    assert_eq!(global, sgd_train(&start, &ds.clients[id], &cfg).unwrap());
}

#[test]
fn two_client_round_composes_sgd_and_fedavg() {
    let ds = dataset(2, 3);
    let start = init(&ds);
    let lr = 0.3;
    let local = TrainConfig { epochs: 1, batch_size: 1000, learning_rate: lr, seed: 4 };
    let (global, _) = run_fl(&ds, &profiles(2, DeviceClass::High), &fl_config(1, 2, local), &start).unwrap();

    let stepped: Vec<(Vec<f64>, usize)> = ds
        .clients
        .iter()
        .map(|c| {
            let (_, g) = ce_loss_and_grad(&start, c).unwrap();
            (start.params().iter().zip(&g).map(|(p, g)| p - lr * g).collect(), c.len())
        })
        .collect();
    let want = brute_force_mean(&stepped);
    for (a, b) in global.params().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn dropped_clients_never_influence_the_model() {
    let mut ds = dataset(4, 4);
    let mut profs = profiles(4, DeviceClass::High);
    profs[2].device = DeviceClass::Low.profile();
    // Client 2 needs far longer than anyone else.
    ds.clients[2] = dataset(1, 77).clients[0].clone();
    let local = TrainConfig { epochs: 2, batch_size: 5, learning_rate: 0.1, seed: 2 };
    let mut cfg = fl_config(8, 4, local);
    cfg.round_deadline = Some(0.5);

    let (g1, reports) = run_fl(&ds, &profs, &cfg, &init(&ds)).unwrap();
    for rep in &reports {
        assert!(!rep.completed.contains(&2));
        assert!(rep.dropped.iter().any(|d| d.client == 2 && d.reason == DropReason::Deadline));
        assert!(rep.round_duration <= 0.5);
    }

    let mut other = ds.clone();
    let c = &ds.clients[2];
    let flipped: Vec<usize> = c.labels().iter().map(|y| (y + 1) % c.num_classes()).collect();
    other.clients[2] = modelmesh::ml::ClientDataset::new(c.features().clone(), flipped, c.num_classes()).unwrap();
    let (g2, _) = run_fl(&other, &profs, &cfg, &init(&ds)).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn run_fl_is_deterministic() {
    let ds = dataset(10, 5);
    let local = TrainConfig { epochs: 2, batch_size: 3, learning_rate: 0.1, seed: 6 };
    let cfg = fl_config(5, 3, local);
    let profs = profiles(10, DeviceClass::Mid);
    let a = run_fl(&ds, &profs, &cfg, &init(&ds)).unwrap();
    let b = run_fl(&ds, &profs, &cfg, &init(&ds)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_rounds_keep_the_model() {
    let ds = dataset(3, 6);
    let local = TrainConfig { epochs: 1, batch_size: 3, learning_rate: 0.1, seed: 6 };
    let mut cfg = fl_config(3, 2, local);
    cfg.round_deadline = Some(1e-6);
    let start = init(&ds);
    let (global, reports) = run_fl(&ds, &profiles(3, DeviceClass::Low), &cfg, &start).unwrap();
    assert_eq!(global, start);
    let mut t = 0.0;
    for rep in &reports {
        assert!(!rep.aggregated && rep.completed.is_empty());
        assert_eq!(rep.started_at, t);
        t += rep.round_duration;
    }
}
