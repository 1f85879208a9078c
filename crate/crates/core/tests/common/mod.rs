#![allow(dead_code)]

use modelmesh::discovery::{Comparison, Metric, Predicate, Query};
use modelmesh::ml::{ArchDescriptor, ClientDataset, Matrix, Model, QualityReport};
use modelmesh::vault::{ModelId, VaultEntry};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// LR or a 1-2 hidden layer MLP with every width in 1..=max_dim.
pub fn random_arch(rng: &mut ChaCha8Rng, max_dim: usize) -> ArchDescriptor {
    let input = rng.random_range(1..=max_dim);
    let classes = rng.random_range(2..=max_dim);
    if rng.random_bool(0.4) {
        ArchDescriptor::logistic(input, classes)
    } else {
        let depth = rng.random_range(1..=2);
        let hidden = (0..depth).map(|_| rng.random_range(1..=max_dim)).collect();
        ArchDescriptor::mlp(input, hidden, classes)
    }
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        })
        .collect()
}

pub fn random_model(rng: &mut ChaCha8Rng, arch: &ArchDescriptor) -> Model<f64> {
    let params = normal_vec(rng, arch.param_count(), 0.7);
    Model::new(arch.clone(), params).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, arch: &ArchDescriptor, n: usize) -> ClientDataset<f64> {
    let features = Matrix::from_vec(n, arch.input_dim, normal_vec(rng, n * arch.input_dim, 1.0)).unwrap();
    let labels = (0..n).map(|_| rng.random_range(0..arch.num_classes)).collect();
    ClientDataset::new(features, labels, arch.num_classes).unwrap()
}

/// Central finite differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ‖a - b‖ / max(‖a‖, ‖b‖), 0 when both are zero.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Plain forward pass written out independently of the library:
/// hidden layers `relu(W x + b)`, linear output.
pub fn reference_logits(model: &Model<f64>, x: &[f64]) -> Vec<f64> {
    let arch = model.arch();
    let widths = arch.widths();
    let p = model.params();
    let weights: usize = widths.windows(2).map(|w| w[0] * w[1]).sum();
    let (mut w_off, mut b_off) = (0, weights);
    let mut a = x.to_vec();
    for (l, w) in widths.windows(2).enumerate() {
        let (inp, out) = (w[0], w[1]);
        let mut z = vec![0.0; out];
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &p[w_off + o * inp..w_off + (o + 1) * inp];
            *zo = row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>() + p[b_off + o];
        }
        w_off += inp * out;
        b_off += out;
        if l + 2 < widths.len() {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a = z;
    }
    a
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Mean cross-entropy, from the reference forward pass.
pub fn reference_ce(model: &Model<f64>, batch: &ClientDataset<f64>) -> f64 {
    let n = batch.len();
    (0..n)
        .map(|i| -log_softmax(&reference_logits(model, batch.features().row(i)))[batch.labels()[i]])
        .sum::<f64>()
        / n as f64
}

/// Mean of (1-λ)·CE + λ·T²·KL(p_teacher ‖ q_student), both softened by T.
pub fn reference_distill(student: &Model<f64>, teacher: &Model<f64>, batch: &ClientDataset<f64>, t: f64, lambda: f64) -> f64 {
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let x = batch.features().row(i);
        let zs = reference_logits(student, x);
        let zt = reference_logits(teacher, x);
        let ce = -log_softmax(&zs)[batch.labels()[i]];
        let soft = |z: &[f64]| log_softmax(&z.iter().map(|v| v / t).collect::<Vec<_>>());
        let (lq, lp) = (soft(&zs), soft(&zt));
        let kl: f64 = lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum();
        total += (1.0 - lambda) * ce + lambda * t * t * kl;
    }
    total / n as f64
}

pub fn random_id(rng: &mut ChaCha8Rng) -> ModelId {
    let bytes: [u8; 32] = rng.random();
    ModelId::of_bytes(&bytes)
}

const GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.5, 0.8, 1.0];

/// Vault entries with accuracies on a coarse grid, so ties are common.
pub fn random_entries(rng: &mut ChaCha8Rng, count: usize, archs: &[ArchDescriptor], owners: &[&str]) -> Vec<VaultEntry> {
    (0..count)
        .map(|i| {
            let arch = archs.choose(rng).unwrap().clone();
            let per_class = (0..arch.num_classes)
                .map(|_| if rng.random_bool(0.15) { None } else { Some(*GRID.choose(rng).unwrap()) })
                .collect();
            VaultEntry {
                id: random_id(rng),
                owner: owners.choose(rng).unwrap().to_string(),
                quality: QualityReport {
                    overall_accuracy: *GRID.choose(rng).unwrap(),
                    per_class_accuracy: per_class,
                    eval_dataset_id: "public-test".into(),
                    num_eval_samples: 100,
                },
                arch,
                stored_at: i as f64,
                tags: vec![],
            }
        })
        .collect()
}

pub fn random_query(rng: &mut ChaCha8Rng, archs: &[ArchDescriptor], owners: &[&str], max_class: usize) -> Query {
    let n = rng.random_range(1..=3);
    let predicates = (0..n)
        .map(|_| Predicate {
            metric: if rng.random_bool(0.4) {
                Metric::OverallAccuracy
            } else {
                Metric::ClassAccuracy(rng.random_range(0..max_class))
            },
            op: if rng.random_bool(0.5) { Comparison::AtLeast } else { Comparison::Above },
            threshold: *GRID.choose(rng).unwrap(),
        })
        .collect();
    let required_arch = if rng.random_bool(0.3) { Some(archs.choose(rng).unwrap().clone()) } else { None };
    let required_arch = required_arch.filter(|a: &ArchDescriptor| a.num_classes >= max_class);
    let exclude_owner = if rng.random_bool(0.3) { Some(owners.choose(rng).unwrap().to_string()) } else { None };
    Query { predicates, required_arch, exclude_owner }
}

/// Exhaustive scan written independently of the library: keep entries where
/// every constraint holds, score by mean margin, best score then smallest id.
pub fn brute_force_match(query: &Query, entries: &[VaultEntry]) -> Option<(ModelId, f64)> {
    let mut best: Option<(ModelId, f64)> = None;
    for e in entries {
        if query.required_arch.as_ref().is_some_and(|a| a != &e.arch) {
            continue;
        }
        if query.exclude_owner.as_ref().is_some_and(|o| o == &e.owner) {
            continue;
        }
        let mut margins = Vec::new();
        let mut ok = true;
        for p in &query.predicates {
            let v = match p.metric {
                Metric::OverallAccuracy => Some(e.quality.overall_accuracy),
                Metric::ClassAccuracy(c) => e.quality.per_class_accuracy.get(c).copied().flatten(),
            };
            let holds = match (v, p.op) {
                (Some(v), Comparison::AtLeast) => v >= p.threshold,
                (Some(v), Comparison::Above) => v > p.threshold,
                (None, _) => false,
            };
            if !holds {
                ok = false;
                break;
            }
            margins.push(v.unwrap() - p.threshold);
        }
        if !ok {
            continue;
        }
        let score = margins.iter().sum::<f64>() / margins.len() as f64;
        let better = match &best {
            None => true,
            Some((id, s)) => score > *s || (score == *s && e.id < *id),
        };
        if better {
            best = Some((e.id.clone(), score));
        }
    }
    best
}

/// Weighted mean by the textbook formula Σ nᵢ·pᵢ / Σ nᵢ.
pub fn brute_force_mean(updates: &[(Vec<f64>, usize)]) -> Vec<f64> {
    let total: f64 = updates.iter().map(|(_, n)| *n as f64).sum();
    let len = updates[0].0.len();
    (0..len).map(|j| updates.iter().map(|(p, n)| *n as f64 * p[j]).sum::<f64>() / total).collect()
}
