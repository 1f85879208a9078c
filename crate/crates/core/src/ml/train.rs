use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::ClientDataset;
use super::loss::{ce_loss_and_grad, check_batch};
use super::model::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
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

/// Order in which samples are visited during `epoch`: a permutation drawn
/// from a generator keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::indexed_rng(seed, epoch as u64));
    idx
}

/// Mini-batch SGD over an arbitrary loss. Runs `epochs · ceil(n / batch_size)`
/// steps; the last batch of an epoch may be short.
pub(crate) fn sgd_loop<T, F>(
    model: &Model<T>,
    data: &ClientDataset<T>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    mut loss_and_grad: F,
) -> Result<Model<T>>
where
    T: Scalar,
    F: FnMut(&Model<T>, &ClientDataset<T>) -> Result<(T, Vec<T>)>,
{
    check_batch(model, data)?;
    let lr = T::of(learning_rate);
    let mut current = model.clone();
    for epoch in 0..epochs {
        let order = epoch_order(data.len(), seed, epoch);
        for chunk in order.chunks(batch_size) {
            let batch = data.subset(chunk);
            let (_, grad) = loss_and_grad(&current, &batch)?;
            let mut params = current.into_params();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= lr * *g;
            }
            current = Model::new(model.arch().clone(), params)?;
        }
    }
    Ok(current)
}

/// Local training with plain mini-batch SGD on softmax cross-entropy.
pub fn sgd_train<T: Scalar>(model: &Model<T>, data: &ClientDataset<T>, cfg: &TrainConfig) -> Result<Model<T>> {
    cfg.validate()?;
    sgd_loop(model, data, cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed, ce_loss_and_grad)
}
