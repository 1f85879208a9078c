use modelmesh::datagen::{self, generate, FederatedDataset, SampleCounts, SyntheticSpec};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn spec(alpha: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_clients: 100,
        input_dim: 60,
        num_classes: 10,
        alpha,
        beta: 1.0,
        samples_per_client: SampleCounts::default(),
        shared_weight_scale: 0.0,
        holdout_size: 1000,
        seed,
    }
}

fn histogram(labels: &[usize], k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k];
    for &y in labels {
        h[y] += 1.0;
    }
    h
}

#[test]
fn label_histograms_reject_the_iid_null() {
    let ds = generate(&spec(1.0, 7)).unwrap();
    let k = ds.num_classes();
    let hists: Vec<Vec<f64>> = ds.clients.iter().map(|c| histogram(c.labels(), k)).collect();
    let mut pooled = vec![0.0; k];
    for h in &hists {
        for (p, v) in pooled.iter_mut().zip(h) {
            *p += v;
        }
    }
    let total: f64 = pooled.iter().sum();
    let present: Vec<usize> = (0..k).filter(|&c| pooled[c] > 0.0).collect();
    let critical = ChiSquared::new((present.len() - 1) as f64).unwrap().inverse_cdf(0.95);

    let rejected = hists
        .iter()
        .filter(|h| {
            let n: f64 = h.iter().sum();
            let stat: f64 = present
                .iter()
                .map(|&c| {
                    let e = n * pooled[c] / total;
                    (h[c] - e).powi(2) / e
                })
                .sum();
            stat > critical
        })
        .count();
    assert!(rejected >= 90, "only {rejected} of 100 clients differ from the pooled distribution");
}

fn mean_pairwise_distance(ds: &FederatedDataset) -> f64 {
    let k = ds.num_classes();
    let hists: Vec<Vec<f64>> = ds
        .clients
        .iter()
        .map(|c| {
            let h = histogram(c.labels(), k);
            let n = c.len() as f64;
            h.into_iter().map(|v| v / n).collect()
        })
        .collect();
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for i in 0..hists.len() {
        for j in i + 1..hists.len() {
            sum += hists[i].iter().zip(&hists[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            pairs += 1.0;
        }
    }
    sum / pairs
}

#[test]
fn heterogeneity_grows_with_alpha() {
    let avg = |alpha: f64| (1..=5).map(|s| mean_pairwise_distance(&generate(&spec(alpha, s)).unwrap())).sum::<f64>() / 5.0;
    let d: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&a| avg(a)).collect();
    assert!(d[0] <= d[1] && d[1] <= d[2], "distances {d:?}");
}

#[test]
fn zero_variance_clients_share_parameters() {
    let s = SyntheticSpec { num_clients: 2, alpha: 0.0, beta: 0.0, ..spec(0.0, 3) };
    let (_, params) = datagen::generate_with_params(&s).unwrap();
    assert_eq!(params[0].u, params[1].u);
    assert_eq!(params[0].b, params[1].b);
    assert_eq!(params[0].feature_shift, params[1].feature_shift);
}

#[test]
fn holdout_covers_classes_and_is_disjoint() {
    for seed in 0..5 {
        let ds = generate(&SyntheticSpec { num_clients: 20, ..spec(1.0, seed) }).unwrap();
        let h = &ds.public_holdout;
        assert!(h.len() >= 10 * ds.num_classes());
        assert!(h.class_counts().iter().all(|&c| c > 0), "seed {seed}: {:?}", h.class_counts());
        let rows: std::collections::HashSet<Vec<u64>> =
            (0..h.len()).map(|i| h.features().row(i).iter().map(|v| v.to_bits()).collect()).collect();
        for c in &ds.clients {
            for i in 0..c.len() {
                let key: Vec<u64> = c.features().row(i).iter().map(|v| v.to_bits()).collect();
                assert!(!rows.contains(&key));
            }
        }
    }
}

#[test]
fn save_load_roundtrip_and_determinism() {
    let s = SyntheticSpec { num_clients: 10, ..spec(0.5, 11) };
    let ds = generate(&s).unwrap();
    assert_eq!(ds, generate(&s).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mmd");
    datagen::save(&ds, &path).unwrap();
    assert_eq!(datagen::load(&path).unwrap(), ds);

    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        let err = datagen::from_bytes(&bytes[..cut]).unwrap_err();
        assert_eq!(err.code(), "format", "cut at {cut}");
    }
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    let err = datagen::from_bytes(&wrong).unwrap_err();
    assert!(err.to_string().contains("MMD1"), "{err}");
}
