//! Soft-target knowledge distillation and the discover-then-distill client
//! procedure.
//!
//! Per-sample loss for student logits `z`, teacher logits `t` and label `y`:
//!
//! ```text
//! (1 - λ) · CE(y, softmax(z)) + λ · T² · KL(softmax(t / T) ‖ softmax(z / T))
//! ```
//!
//! averaged over the batch. The teacher is a constant; only the student
//! receives gradients. With `λ = 0` everything reduces to the plain
//! cross-entropy path, bit for bit.

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::discovery::{find_match, MatchResult, Query};
use crate::error::{Error, Result};
use crate::ml::{
    ce_loss_and_grad, check_batch, log_sum_exp, sgd_loop, sgd_train, softmax_in_place, ClientDataset, Matrix,
    Model, TrainConfig,
};
use crate::scalar::Scalar;
use crate::vault::{ModelId, Vault};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    pub mix: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { temperature: 2.0, mix: 0.7, epochs: 5, batch_size: 10, learning_rate: 0.05, seed: 0 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config("mix must lie in [0, 1]".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

fn check_pair<T: Scalar>(student: &Model<T>, teacher: &Model<T>) -> Result<()> {
    let (s, t) = (student.arch(), teacher.arch());
    if s.input_dim != t.input_dim || s.num_classes != t.num_classes {
        return Err(Error::Arch(format!("teacher {t} is incompatible with student {s}")));
    }
    Ok(())
}

pub fn distill_loss_and_grad<T: Scalar>(
    student: &Model<T>,
    teacher: &Model<T>,
    batch: &ClientDataset<T>,
    cfg: &DistillConfig,
) -> Result<(T, Vec<T>)> {
    check_pair(student, teacher)?;
    if cfg.mix == 0.0 {
        return ce_loss_and_grad(student, batch);
    }
    check_batch(student, batch)?;
    let cache = student.forward_cached(batch.features())?;
    let teacher_logits = teacher.forward(batch.features())?;

    let n = batch.len();
    let k = student.arch().num_classes;
    let inv_n = T::one() / T::of(n as f64);
    let lambda = T::of(cfg.mix);
    let hard = T::one() - lambda;
    let temp = T::of(cfg.temperature);
    let soft_scale = lambda * temp * temp;

    let mut loss = T::zero();
    let mut dlogits = Matrix::zeros(n, k);
    let mut q_s = vec![T::zero(); k];
    let mut p_t = vec![T::zero(); k];
    for (i, &y) in batch.labels().iter().enumerate() {
        let z = cache.logits.row(i);
        let t = teacher_logits.row(i);
        for c in 0..k {
            q_s[c] = z[c] / temp;
            p_t[c] = t[c] / temp;
        }
        let lse_s = log_sum_exp(&q_s);
        let lse_t = log_sum_exp(&p_t);
        let mut kl = T::zero();
        for c in 0..k {
            let log_p = p_t[c] - lse_t;
            let log_q = q_s[c] - lse_s;
            let p = log_p.exp();
            if p > T::zero() {
                kl += p * (log_p - log_q);
            }
        }
        loss += hard * (log_sum_exp(z) - z[y]) + soft_scale * kl;

        softmax_in_place(&mut q_s);
        softmax_in_place(&mut p_t);
        let d = dlogits.row_mut(i);
        d.copy_from_slice(z);
        softmax_in_place(d);
        d[y] -= T::one();
        for c in 0..k {
            // d/dz of T²·KL(p‖softmax(z/T)) is T·(q - p)
            d[c] = (hard * d[c] + lambda * temp * (q_s[c] - p_t[c])) * inv_n;
        }
    }
    let grad = student.backward(&cache, dlogits);
    Ok((loss * inv_n, grad))
}

/// SGD on the distillation loss, batched exactly like [`sgd_train`].
pub fn distill_train<T: Scalar>(
    student: &Model<T>,
    teacher: &Model<T>,
    data: &ClientDataset<T>,
    cfg: &DistillConfig,
) -> Result<Model<T>> {
    cfg.validate()?;
    check_pair(student, teacher)?;
    sgd_loop(student, data, cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed, |m, b| {
        distill_loss_and_grad(m, teacher, b, cfg)
    })
}

/// Where a party looks for and obtains teacher models.
pub trait ModelExchange {
    fn discover(&self, query: &Query) -> Result<Option<MatchResult>>;
    fn fetch_model(&self, id: &ModelId) -> Result<Model<f64>>;
}

impl ModelExchange for Vault {
    fn discover(&self, query: &Query) -> Result<Option<MatchResult>> {
        let entries = self.list_entries(&Default::default());
        find_match(query, &entries)
    }

    fn fetch_model(&self, id: &ModelId) -> Result<Model<f64>> {
        self.fetch(id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MddConfig {
    pub pretrain: TrainConfig,
    pub query: Query,
    pub distill: DistillConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MddOutcome {
    Distilled,
    NoTeacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub outcome: MddOutcome,
    pub teacher_id: Option<ModelId>,
    pub teacher_score: Option<f64>,
    pub query: String,
    pub pretrain: TrainConfig,
    pub distill: DistillConfig,
}

/// Pretrain on local data, ask the exchange for a teacher, distill it in.
pub fn run_mdd<T: Scalar>(
    party_data: &ClientDataset<T>,
    exchange: &dyn ModelExchange,
    cfg: &MddConfig,
    init: &Model<T>,
) -> Result<(Model<T>, Provenance)> {
    cfg.pretrain.validate()?;
    cfg.distill.validate()?;
    let local = sgd_train(init, party_data, &cfg.pretrain)?;
    let mut provenance = Provenance {
        outcome: MddOutcome::NoTeacher,
        teacher_id: None,
        teacher_score: None,
        query: cfg.query.to_string(),
        pretrain: cfg.pretrain.clone(),
        distill: cfg.distill.clone(),
    };
    let Some(found) = exchange.discover(&cfg.query)? else {
        info!(query = %provenance.query, "no teacher satisfies the query");
        return Ok((local, provenance));
    };
    let teacher = exchange.fetch_model(&found.id)?.cast::<T>();
    let student = distill_train(&local, &teacher, party_data, &cfg.distill)?;
    provenance.outcome = MddOutcome::Distilled;
    provenance.teacher_id = Some(found.id);
    provenance.teacher_score = Some(found.score);
    Ok((student, provenance))
}
