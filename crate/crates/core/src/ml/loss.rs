use super::dataset::ClientDataset;
use super::matrix::Matrix;
use super::model::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `ln Σ exp(z)`, stable.
pub(crate) fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = z.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

pub(crate) fn check_batch<T: Scalar>(model: &Model<T>, batch: &ClientDataset<T>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Precondition("batch is empty".into()));
    }
    if batch.input_dim() != model.arch().input_dim || batch.num_classes() != model.arch().num_classes {
        return Err(Error::Shape(format!(
            "batch is {}-dim/{} classes, model is {}",
            batch.input_dim(),
            batch.num_classes(),
            model.arch()
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the parameters.
pub fn ce_loss_and_grad<T: Scalar>(model: &Model<T>, batch: &ClientDataset<T>) -> Result<(T, Vec<T>)> {
    check_batch(model, batch)?;
    let cache = model.forward_cached(batch.features())?;
    let n = batch.len();
    let inv_n = T::one() / T::of(n as f64);
    let k = model.arch().num_classes;
    let mut loss = T::zero();
    let mut dlogits = Matrix::zeros(n, k);
    for (i, &y) in batch.labels().iter().enumerate() {
        let z = cache.logits.row(i);
        loss += log_sum_exp(z) - z[y];
        let d = dlogits.row_mut(i);
        d.copy_from_slice(z);
        softmax_in_place(d);
        d[y] -= T::one();
        for v in d.iter_mut() {
            *v *= inv_n;
        }
    }
    let grad = model.backward(&cache, dlogits);
    Ok((loss * inv_n, grad))
}
