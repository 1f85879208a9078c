mod common;

use common::*;
use modelmesh::datagen::{generate, FederatedDataset, SampleCounts, SyntheticSpec};
use modelmesh::ml::{codec, evaluate_named, ArchDescriptor, Model};
use modelmesh::vault::{EntryFilter, ModelId, Vault};
use rand::Rng;

fn public(seed: u64) -> FederatedDataset {
    generate(&SyntheticSpec {
        num_clients: 2,
        input_dim: 5,
        num_classes: 4,
        alpha: 0.5,
        beta: 0.5,
        samples_per_client: SampleCounts { min: 5, max: 10, power_law_exponent: 2.0 },
        shared_weight_scale: 0.0,
        holdout_size: 80,
        seed,
    })
    .unwrap()
}

fn archs() -> [ArchDescriptor; 3] {
    [ArchDescriptor::logistic(5, 4), ArchDescriptor::mlp(5, vec![3], 4), ArchDescriptor::mlp(5, vec![6, 2], 4)]
}

#[test]
fn thousand_roundtrips_and_corruption_detection() {
    let dir = tempfile::tempdir().unwrap();
    let mut vault = Vault::create(dir.path(), public(1)).unwrap();
    let mut r = rng(51);
    let archs = archs();
    let mut stored: Vec<(ModelId, Vec<u8>)> = Vec::new();
    for i in 0..1000 {
        let arch = &archs[i % archs.len()];
        let m = random_model(&mut r, arch);
        let bytes = codec::encode(&m);
        let id = vault.store(&m, "owner", &[], i as f64).unwrap();
        assert_eq!(id, ModelId::of_bytes(&bytes));
        assert_eq!(vault.fetch_bytes(&id).unwrap(), bytes);
        assert_eq!(vault.fetch(&id).unwrap(), m);
        stored.push((id, bytes));
    }
    assert_eq!(vault.len(), 1000);

    let reopened = Vault::open(dir.path()).unwrap();
    assert_eq!(reopened.list_entries(&EntryFilter::default()), vault.list_entries(&EntryFilter::default()));

    for trial in 0..300 {
        let (id, bytes) = &stored[r.random_range(0..stored.len())];
        let path = dir.path().join("blobs").join(id.as_str());
        let pos = r.random_range(0..bytes.len());
        let mut bad = bytes.clone();
        bad[pos] ^= 1u8 << r.random_range(0..8);
        std::fs::write(&path, &bad).unwrap();
        let err = vault.fetch(id).unwrap_err();
        assert_eq!(err.code(), "integrity", "trial {trial}: byte {pos}");
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(vault.fetch_bytes(id).unwrap(), *bytes);
    }
}

#[test]
fn store_is_idempotent_and_hash_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let mut vault = Vault::create(dir.path(), public(2)).unwrap();
    let m = random_model(&mut rng(52), &archs()[1]);
    let a = vault.store(&m, "x", &[], 1.0).unwrap();
    let b = vault.store(&m, "y", &["t".into()], 2.0).unwrap();
    assert_eq!(a, b);
    assert_eq!(vault.len(), 1);
    assert_eq!(vault.entry(&a).unwrap().owner, "x");
    assert_eq!(std::fs::read_dir(dir.path().join("blobs")).unwrap().count(), 1);

    let mut params = m.params().to_vec();
    params[0] = f64::from_bits(params[0].to_bits() ^ 1);
    let c = vault.store(&m.with_params(params).unwrap(), "x", &[], 3.0).unwrap();
    assert_ne!(a, c);
}

#[test]
fn registration_report_equals_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let ds = public(3);
    let mut vault = Vault::create(dir.path(), ds.clone()).unwrap();
    let mut r = rng(53);
    for arch in archs() {
        let m = random_model(&mut r, &arch);
        let id = vault.store(&m, "o", &[], 0.0).unwrap();
        let want = evaluate_named(&m, &ds.public_holdout, vault.public_dataset_id()).unwrap();
        assert_eq!(vault.entry(&id).unwrap().quality, want);
    }
    let wrong = Model::<f64>::zeros(ArchDescriptor::logistic(6, 4)).unwrap();
    assert_eq!(vault.store(&wrong, "o", &[], 0.0).unwrap_err().code(), "arch");
}

#[test]
fn listing_order_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let mut vault = Vault::create(dir.path(), public(4)).unwrap();
    assert!(vault.list_entries(&EntryFilter::default()).is_empty());
    let mut r = rng(54);
    let mut ids = Vec::new();
    for (t, owner) in [(3.0, "a"), (1.0, "b"), (2.0, "a")] {
        ids.push(vault.store(&random_model(&mut r, &archs()[0]), owner, &[owner.to_string()], t).unwrap());
    }
    let order: Vec<ModelId> = vault.list_entries(&EntryFilter::default()).into_iter().map(|e| e.id).collect();
    assert_eq!(order, vec![ids[1].clone(), ids[2].clone(), ids[0].clone()]);
    let owned: Vec<ModelId> =
        vault.list_entries(&EntryFilter { owner: Some("a".into()), tag: None }).into_iter().map(|e| e.id).collect();
    assert_eq!(owned, vec![ids[2].clone(), ids[0].clone()]);
    let unknown = ModelId::of_bytes(b"nothing here");
    assert_eq!(vault.fetch(&unknown).unwrap_err().code(), "not_found");
}
