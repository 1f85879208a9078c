//! Round-based federated training over simulated clients.
//!
//! Each round: clients that are on at the current virtual time form the pool,
//! `K` of them are sampled, every selected client trains locally and
//! completes only if it stays available for its whole simulated work window
//! and finishes within the deadline. Completers are averaged (FedAvg), the
//! new global model is evaluated on the public holdout, and the clock
//! advances by `min(deadline, slowest completer)`.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::datagen::FederatedDataset;
use crate::error::{Error, Result};
use crate::hetero::{is_available, simulate_client_time, ClientProfile};
use crate::ml::{codec, evaluate_named, sgd_train, Model, QualityReport, TrainConfig};
use crate::scalar::Scalar;
use crate::seed;
use crate::vault::dataset_id;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FLConfig {
    pub num_rounds: usize,
    pub clients_per_round: usize,
    pub local: TrainConfig,
    /// Seconds; `None` in a config file means "derive from the U-case durations".
    #[serde(default)]
    pub round_deadline: Option<f64>,
    #[serde(default)]
    pub selection_seed: u64,
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_rounds < 1 {
            return Err(Error::Config("num_rounds must be at least 1".into()));
        }
        if self.clients_per_round < 1 {
            return Err(Error::Config("clients_per_round must be at least 1".into()));
        }
        if let Some(d) = self.round_deadline {
            if !(d > 0.0) {
                return Err(Error::Config("round_deadline must be positive".into()));
            }
        }
        self.local.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropReason {
    Unavailable,
    Deadline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub client: usize,
    pub reason: DropReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: usize,
    /// Virtual time at which the round started.
    pub started_at: f64,
    pub selected: Vec<usize>,
    pub completed: Vec<usize>,
    pub dropped: Vec<Dropped>,
    pub round_duration: f64,
    /// False when no client completed and the previous global model was kept.
    pub aggregated: bool,
    pub global_eval: QualityReport,
}

/// Uniform sample of `k` ids without replacement, deterministic in `(seed, round)`.
/// Returned ids are sorted ascending.
pub fn select_clients(available: &[usize], k: usize, round: usize, seed: u64) -> Vec<usize> {
    let mut pool = available.to_vec();
    pool.sort_unstable();
    pool.dedup();
    if pool.len() <= k {
        return pool;
    }
    let mut rng = seed::indexed_rng(seed, round as u64);
    let mut chosen: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    chosen.sort_unstable();
    chosen
}

/// Sample-count-weighted average of the parameters (FedAvg).
///
/// Updates are summed in a canonical order (by sample count, then
/// parameters), so the result is bit-identical for any permutation of
/// `updates`.
pub fn aggregate<T: Scalar>(updates: &[(Model<T>, usize)]) -> Result<Model<T>> {
    let (first, _) = updates.first().ok_or_else(|| Error::Aggregation("no updates to aggregate".into()))?;
    if let Some((m, _)) = updates.iter().find(|(m, _)| m.arch() != first.arch()) {
        return Err(Error::Arch(format!("cannot average {} with {}", first.arch(), m.arch())));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Aggregation("updates carry zero samples".into()));
    }
    let total = T::of(total as f64);
    let mut ordered: Vec<&(Model<T>, usize)> = updates.iter().collect();
    ordered.sort_by(|(a, na), (b, nb)| {
        na.cmp(nb).then_with(|| {
            a.params().iter().zip(b.params()).map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
    });
    let mut params = vec![T::zero(); first.params().len()];
    for (model, n) in ordered {
        let w = T::of(*n as f64) / total;
        for (acc, p) in params.iter_mut().zip(model.params()) {
            *acc += w * *p;
        }
    }
    first.with_params(params)
}

/// Nearest-rank percentile of the durations each client would need on `reference`.
pub fn deadline_percentile<T: Scalar>(
    dataset: &FederatedDataset<T>,
    reference: &ClientProfile,
    local_epochs: usize,
    model_bytes: usize,
    percentile: f64,
) -> f64 {
    let mut d: Vec<f64> = dataset
        .clients
        .iter()
        .map(|c| simulate_client_time(reference, c.len(), local_epochs, model_bytes))
        .collect();
    d.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * d.len() as f64).ceil() as usize;
    d[rank.clamp(1, d.len()) - 1]
}

/// Seed of client `client`'s local training in round `round`.
pub fn local_seed(base: u64, round: usize, client: usize) -> u64 {
    seed::derive(base, &format!("round/{round}/client/{client}"))
}

enum Outcome<T> {
    Done { id: usize, model: Model<T>, samples: usize, duration: f64 },
    Dropped(Dropped),
}

pub fn run_fl<T: Scalar>(
    dataset: &FederatedDataset<T>,
    profiles: &[ClientProfile],
    cfg: &FLConfig,
    init: &Model<T>,
) -> Result<(Model<T>, Vec<RoundReport>)> {
    run_fl_observed(dataset, profiles, cfg, init, |_, _| Ok(()))
}

/// [`run_fl`] with a callback after every round, e.g. for checkpointing the
/// global model or streaming reports.
pub fn run_fl_observed<T, F>(
    dataset: &FederatedDataset<T>,
    profiles: &[ClientProfile],
    cfg: &FLConfig,
    init: &Model<T>,
    mut on_round: F,
) -> Result<(Model<T>, Vec<RoundReport>)>
where
    T: Scalar,
    F: FnMut(&RoundReport, &Model<T>) -> Result<()>,
{
    cfg.validate()?;
    let deadline = cfg
        .round_deadline
        .ok_or_else(|| Error::Config("round_deadline must be resolved before running".into()))?;
    if profiles.len() != dataset.clients.len() {
        return Err(Error::Precondition(format!(
            "{} profiles for {} clients",
            profiles.len(),
            dataset.clients.len()
        )));
    }
    let model_bytes = codec::encoded_len(init.arch());
    // client id -> position in `dataset.clients`
    let position: std::collections::HashMap<usize, usize> =
        profiles.iter().enumerate().map(|(i, p)| (p.client_id, i)).collect();
    if position.len() != profiles.len() {
        return Err(Error::Precondition("duplicate client ids in profiles".into()));
    }

    let holdout_id = dataset_id(&dataset.public_holdout);
    let mut global = init.clone();
    let mut clock = 0.0f64;
    let mut reports = Vec::with_capacity(cfg.num_rounds);
    for round in 0..cfg.num_rounds {
        let pool: Vec<usize> =
            profiles.iter().filter(|p| is_available(p, clock, clock)).map(|p| p.client_id).collect();
        let selected = select_clients(&pool, cfg.clients_per_round, round, cfg.selection_seed);

        let outcomes: Vec<Outcome<T>> = selected
            .par_iter()
            .map(|&id| {
                let idx = position[&id];
                let profile = &profiles[idx];
                let data = &dataset.clients[idx];
                let duration = simulate_client_time(profile, data.len(), cfg.local.epochs, model_bytes);
                if !is_available(profile, clock, clock + duration) {
                    return Ok(Outcome::Dropped(Dropped { client: id, reason: DropReason::Unavailable }));
                }
                if duration > deadline {
                    return Ok(Outcome::Dropped(Dropped { client: id, reason: DropReason::Deadline }));
                }
                let local = TrainConfig { seed: local_seed(cfg.local.seed, round, id), ..cfg.local.clone() };
                let model = sgd_train(&global, data, &local)?;
                Ok(Outcome::Done { id, model, samples: data.len(), duration })
            })
            .collect::<Result<_>>()?;

        let mut completed = Vec::new();
        let mut dropped = Vec::new();
        let mut updates = Vec::new();
        let mut slowest = 0.0f64;
        for o in outcomes {
            match o {
                Outcome::Done { id, model, samples, duration } => {
                    completed.push(id);
                    slowest = slowest.max(duration);
                    updates.push((model, samples));
                }
                Outcome::Dropped(d) => dropped.push(d),
            }
        }
        let aggregated = !updates.is_empty();
        if aggregated {
            global = aggregate(&updates)?;
        }
        let round_duration = if aggregated { slowest.min(deadline) } else { deadline };
        let global_eval = evaluate_named(&global, &dataset.public_holdout, &holdout_id)?;
        debug!(round, selected = selected.len(), completed = completed.len(), acc = global_eval.overall_accuracy);
        let report = RoundReport {
            round_index: round,
            started_at: clock,
            selected,
            completed,
            dropped,
            round_duration,
            aggregated,
            global_eval,
        };
        on_round(&report, &global)?;
        reports.push(report);
        clock += round_duration;
    }
    Ok((global, reports))
}
