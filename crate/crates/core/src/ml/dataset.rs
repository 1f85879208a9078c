use rand::seq::SliceRandom;

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

/// Features and integer labels held by one client.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset<T> {
    features: Matrix<T>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<T: Scalar> ClientDataset<T> {
    pub fn new(features: Matrix<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Precondition(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self { features, labels, num_classes })
    }

    #[inline]
    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Deterministic train/test split: a seeded permutation, the first
    /// `round(train_fraction * n)` indices go to train.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seed::rng(seed, "split"));
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        let cut = cut.min(self.len());
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }

    pub fn cast<U: Scalar>(&self) -> ClientDataset<U> {
        ClientDataset { features: self.features.cast(), labels: self.labels.clone(), num_classes: self.num_classes }
    }
}
