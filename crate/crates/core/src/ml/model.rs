use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::arch::ArchDescriptor;
use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Architecture plus flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    arch: ArchDescriptor,
    params: Vec<T>,
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct ForwardCache<T> {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix<T>>,
    pub logits: Matrix<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(arch: ArchDescriptor, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "{} expects {} parameters, got {}",
                arch,
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Precondition("parameters must be finite".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: ArchDescriptor) -> Result<Self> {
        let n = arch.param_count();
        Self::new(arch, vec![T::zero(); n])
    }

    /// Glorot-uniform weights, `U[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`; zero biases.
    pub fn init(arch: ArchDescriptor, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let mut params = vec![T::zero(); arch.param_count()];
        for layer in arch.layers() {
            let s = (6.0 / (layer.inp + layer.out) as f64).sqrt();
            let block = &mut params[layer.weight_offset..layer.weight_offset + layer.inp * layer.out];
            for p in block {
                *p = T::of(rng.random_range(-s..=s));
            }
        }
        Ok(Self { arch, params })
    }

    #[inline]
    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    #[inline]
    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn into_params(self) -> Vec<T> {
        self.params
    }

    /// Same architecture, new parameters.
    pub fn with_params(&self, params: Vec<T>) -> Result<Self> {
        Self::new(self.arch.clone(), params)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { arch: self.arch.clone(), params: self.params.iter().map(|p| U::of(p.widen())).collect() }
    }

    fn check_input(&self, features: &Matrix<T>) -> Result<()> {
        if features.cols() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.cols(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    /// Pre-softmax logits, one row per sample. Hidden layers use ReLU.
    pub fn forward(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_cached(features)?.logits)
    }

    pub(crate) fn forward_cached(&self, features: &Matrix<T>) -> Result<ForwardCache<T>> {
        self.check_input(features)?;
        let layers = self.arch.layers();
        let last = layers.len() - 1;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut current = features.clone();
        for (l, span) in layers.iter().enumerate() {
            let w = &self.params[span.weight_offset..span.weight_offset + span.inp * span.out];
            let b = &self.params[span.bias_offset..span.bias_offset + span.out];
            let mut z = current.affine(w, b, span.out);
            if l != last {
                for i in 0..z.rows() {
                    for v in z.row_mut(i) {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                }
            }
            inputs.push(std::mem::replace(&mut current, z));
        }
        Ok(ForwardCache { inputs, logits: current })
    }

    /// Gradient of the loss w.r.t. the parameters, given dL/dlogits.
    pub(crate) fn backward(&self, cache: &ForwardCache<T>, dlogits: Matrix<T>) -> Vec<T> {
        let layers = self.arch.layers();
        let mut grad = vec![T::zero(); self.params.len()];
        let mut delta = dlogits;
        for (l, span) in layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            let n = input.rows();
            {
                let (gw, gb) = {
                    let (head, tail) = grad.split_at_mut(span.bias_offset);
                    (
                        &mut head[span.weight_offset..span.weight_offset + span.inp * span.out],
                        &mut tail[..span.out],
                    )
                };
                for i in 0..n {
                    let d = delta.row(i);
                    let x = input.row(i);
                    for o in 0..span.out {
                        let dv = d[o];
                        if dv == T::zero() {
                            continue;
                        }
                        gb[o] += dv;
                        let row = &mut gw[o * span.inp..(o + 1) * span.inp];
                        for (g, xv) in row.iter_mut().zip(x) {
                            *g += dv * *xv;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through the weights, then through the ReLU that produced `input`.
            let w = &self.params[span.weight_offset..span.weight_offset + span.inp * span.out];
            let mut prev = Matrix::zeros(n, span.inp);
            for i in 0..n {
                let d = delta.row(i);
                let x = input.row(i);
                let dst = prev.row_mut(i);
                for o in 0..span.out {
                    let dv = d[o];
                    if dv == T::zero() {
                        continue;
                    }
                    for (j, dj) in dst.iter_mut().enumerate() {
                        *dj += dv * w[o * span.inp + j];
                    }
                }
                for (dj, xv) in dst.iter_mut().zip(x) {
                    if *xv <= T::zero() {
                        *dj = T::zero();
                    }
                }
            }
            delta = prev;
        }
        grad
    }
}
