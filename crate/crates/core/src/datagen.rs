//! Synthetic non-IID federated datasets.
//!
//! Each client `k` gets its own generative parameters:
//!
//! * `u_k ~ N(0, α)`, bias `b_k ~ N(0, α)` per class, `B_k ~ N(0, β)`
//! * feature mean `v_k ~ N(B_k, 1)` per dimension
//! * features `x ~ N(v_k, Σ)` with `Σ_jj = j^-1.2` (1-based `j`)
//! * weights `W_k ~ N(u_k + γ·W₀, 1)`, labels `y = argmax(W_k·x + b_k)`
//!
//! `W₀ ~ N(0, 1)` is one population-wide matrix and `γ` is
//! [`SyntheticSpec::shared_weight_scale`]. With `γ = 0` (the default) this is
//! the plain synthetic(α, β) construction, where clients share no labeling
//! function at all; `γ > 0` gives the population a common signal that a
//! federated model can learn. Normal parameters are standard deviations.
//!
//! Client sizes follow a power law with density `∝ n^-a` on `[min, ∞)`,
//! sampled by inverse CDF and clipped to `[min, max]`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::{argmax, ClientDataset, Matrix};
use crate::scalar::Scalar;
use crate::seed;

pub const DATASET_MAGIC: &[u8; 4] = b"MMD1";
pub const DATASET_VERSION: u32 = 1;

/// Fresh generative draws pooled into the public holdout.
const HOLDOUT_SOURCES: usize = 10;
const HOLDOUT_RETRIES: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleCounts {
    pub min: usize,
    pub max: usize,
    pub power_law_exponent: f64,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self { min: 10, max: 1000, power_law_exponent: 1.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_clients: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub samples_per_client: SampleCounts,
    #[serde(default)]
    pub shared_weight_scale: f64,
    #[serde(default = "default_holdout_size")]
    pub holdout_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_holdout_size() -> usize {
    1000
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_clients < 1 {
            return bad("num_clients must be at least 1");
        }
        if self.input_dim < 1 {
            return bad("input_dim must be at least 1");
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.shared_weight_scale >= 0.0) {
            return bad("alpha, beta and shared_weight_scale must be non-negative");
        }
        let s = &self.samples_per_client;
        if s.min < 1 || s.min > s.max {
            return bad("samples_per_client needs 1 <= min <= max");
        }
        if !(s.power_law_exponent > 1.0 && s.power_law_exponent.is_finite()) {
            return bad("power_law_exponent must be greater than 1");
        }
        if self.holdout_size < 10 * self.num_classes {
            return bad("holdout_size must be at least 10 * num_classes");
        }
        Ok(())
    }
}

/// Generative parameters behind one client's data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientParams {
    pub u: f64,
    pub b: Vec<f64>,
    pub feature_shift: f64,
    pub mean: Vec<f64>,
    /// `num_classes × input_dim`, row-major.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FederatedDataset<T = f64> {
    pub clients: Vec<ClientDataset<T>>,
    pub public_holdout: ClientDataset<T>,
    pub spec: SyntheticSpec,
}

impl<T: Scalar> FederatedDataset<T> {
    pub fn input_dim(&self) -> usize {
        self.public_holdout.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.public_holdout.num_classes()
    }

    /// Keeps only the listed clients, in the given order.
    pub fn select(&self, ids: &[usize]) -> Self {
        Self {
            clients: ids.iter().map(|&i| self.clients[i].clone()).collect(),
            public_holdout: self.public_holdout.clone(),
            spec: self.spec.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> FederatedDataset<U> {
        FederatedDataset {
            clients: self.clients.iter().map(ClientDataset::cast).collect(),
            public_holdout: self.public_holdout.cast(),
            spec: self.spec.clone(),
        }
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std validated non-negative")
}

fn draw_params(spec: &SyntheticSpec, shared: &[f64], rng: &mut ChaCha8Rng) -> ClientParams {
    let (d, c) = (spec.input_dim, spec.num_classes);
    let alpha = normal(spec.alpha);
    let u = alpha.sample(rng);
    let b = (0..c).map(|_| alpha.sample(rng)).collect();
    let feature_shift = normal(spec.beta).sample(rng);
    let mean = (0..d).map(|_| feature_shift + rng.sample::<f64, _>(StandardNormal)).collect();
    let weights = shared
        .iter()
        .map(|w0| u + spec.shared_weight_scale * w0 + rng.sample::<f64, _>(StandardNormal))
        .collect();
    ClientParams { u, b, feature_shift, mean, weights }
}

fn draw_samples(spec: &SyntheticSpec, p: &ClientParams, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>) {
    let d = spec.input_dim;
    let std: Vec<f64> = (1..=d).map(|j| (j as f64).powf(-1.2).sqrt()).collect();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut logits = vec![0.0; spec.num_classes];
    for _ in 0..n {
        let start = features.len();
        for j in 0..d {
            features.push(p.mean[j] + std[j] * rng.sample::<f64, _>(StandardNormal));
        }
        let x = &features[start..];
        for (c, z) in logits.iter_mut().enumerate() {
            let w = &p.weights[c * d..(c + 1) * d];
            *z = p.b[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        labels.push(argmax(&logits));
    }
    (features, labels)
}

fn sample_count(s: &SampleCounts, rng: &mut ChaCha8Rng) -> usize {
    // 1 - U lies in (0, 1], so the power is finite
    let u: f64 = 1.0 - rng.random::<f64>();
    let n = (s.min as f64) * u.powf(-1.0 / (s.power_law_exponent - 1.0));
    if n.is_finite() { (n.floor() as usize).clamp(s.min, s.max) } else { s.max }
}

fn shared_weights(spec: &SyntheticSpec) -> Vec<f64> {
    let mut rng = seed::rng(spec.seed, "shared-weights");
    (0..spec.num_classes * spec.input_dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn build(spec: &SyntheticSpec, features: Vec<f64>, labels: Vec<usize>) -> Result<ClientDataset<f64>> {
    let n = labels.len();
    ClientDataset::new(Matrix::from_vec(n, spec.input_dim, features)?, labels, spec.num_classes)
}

/// Dataset plus the generative parameters of every client.
pub fn generate_with_params(spec: &SyntheticSpec) -> Result<(FederatedDataset, Vec<ClientParams>)> {
    spec.validate()?;
    let shared = shared_weights(spec);
    let mut clients = Vec::with_capacity(spec.num_clients);
    let mut params = Vec::with_capacity(spec.num_clients);
    for k in 0..spec.num_clients {
        let mut rng = seed::rng(spec.seed, &format!("client/{k}"));
        let p = draw_params(spec, &shared, &mut rng);
        let n = sample_count(&spec.samples_per_client, &mut rng);
        let (x, y) = draw_samples(spec, &p, n, &mut rng);
        clients.push(build(spec, x, y)?);
        params.push(p);
    }
    let public_holdout = holdout(spec, &shared)?;
    Ok((FederatedDataset { clients, public_holdout, spec: spec.clone() }, params))
}

pub fn generate(spec: &SyntheticSpec) -> Result<FederatedDataset> {
    Ok(generate_with_params(spec)?.0)
}

fn holdout(spec: &SyntheticSpec, shared: &[f64]) -> Result<ClientDataset<f64>> {
    let per_source = spec.holdout_size.div_ceil(HOLDOUT_SOURCES);
    for attempt in 0..HOLDOUT_RETRIES {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for j in 0..HOLDOUT_SOURCES {
            let mut rng = seed::rng(spec.seed, &format!("holdout/{attempt}/{j}"));
            let p = draw_params(spec, shared, &mut rng);
            let (x, y) = draw_samples(spec, &p, per_source, &mut rng);
            features.extend(x);
            labels.extend(y);
        }
        let ds = build(spec, features, labels)?;
        if spec.num_classes > 10 || ds.class_counts().iter().all(|&c| c > 0) {
            return Ok(ds);
        }
    }
    Err(Error::Config(format!(
        "public holdout did not cover all {} classes after {HOLDOUT_RETRIES} attempts",
        spec.num_classes
    )))
}

// ---------------------------------------------------------------------------
// MMD1 container
//
// "MMD1" | u32 version | u32 header_len | header JSON
//        | u64 block count | (u64 block_len | block)*
// block  = u64 n | u64 dim | u64 classes | f64 × n·dim | u32 × n labels
// Client blocks come first, the public holdout is the final block.

#[derive(Serialize, Deserialize)]
struct Header {
    spec: SyntheticSpec,
    num_clients: usize,
    input_dim: usize,
    num_classes: usize,
}

fn encode_block(ds: &ClientDataset<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + ds.features().data().len() * 8 + ds.len() * 4);
    for v in [ds.len(), ds.input_dim(), ds.num_classes()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for x in ds.features().data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &y in ds.labels() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

pub fn to_bytes(ds: &FederatedDataset) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        spec: ds.spec.clone(),
        num_clients: ds.clients.len(),
        input_dim: ds.input_dim(),
        num_classes: ds.num_classes(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&((ds.clients.len() + 1) as u64).to_le_bytes());
    for block in ds.clients.iter().chain(std::iter::once(&ds.public_holdout)) {
        let b = encode_block(block);
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        out.extend_from_slice(&b);
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated dataset at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format("length does not fit in memory".into()))
    }
}

fn decode_block(bytes: &[u8]) -> Result<ClientDataset<f64>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let (n, dim, classes) = (c.u64()?, c.u64()?, c.u64()?);
    let cells = n.checked_mul(dim).ok_or_else(|| Error::Format("block size overflow".into()))?;
    let need = cells
        .checked_mul(8)
        .and_then(|v| v.checked_add(n.checked_mul(4)?))
        .ok_or_else(|| Error::Format("block size overflow".into()))?;
    if need != bytes.len() - c.pos {
        return Err(Error::Format(format!("block holds {} payload bytes, header implies {need}", bytes.len() - c.pos)));
    }
    let features = c.take(cells * 8)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    let labels = c.take(n * 4)?.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize).collect();
    let fmt = |e: Error| Error::Format(e.to_string());
    ClientDataset::new(Matrix::from_vec(n, dim, features).map_err(fmt)?, labels, classes).map_err(fmt)
}

pub fn from_bytes(bytes: &[u8]) -> Result<FederatedDataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"MMD1\"")));
    }
    let version = c.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}, expected {DATASET_VERSION}")));
    }
    let header_len = c.u32()? as usize;
    let header: Header =
        serde_json::from_slice(c.take(header_len)?).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let blocks = c.u64()?;
    if blocks != header.num_clients + 1 {
        return Err(Error::Format(format!("{blocks} blocks for {} clients", header.num_clients)));
    }
    let mut datasets = Vec::with_capacity(blocks.min(1 << 20));
    for _ in 0..blocks {
        let len = c.u64()?;
        let ds = decode_block(c.take(len)?)?;
        if ds.input_dim() != header.input_dim || ds.num_classes() != header.num_classes {
            return Err(Error::Format("client block disagrees with header dimensions".into()));
        }
        datasets.push(ds);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let public_holdout = datasets.pop().expect("at least one block");
    Ok(FederatedDataset { clients: datasets, public_holdout, spec: header.spec })
}

pub fn save(ds: &FederatedDataset, path: &Path) -> Result<()> {
    let bytes = to_bytes(ds)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<FederatedDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(num_clients: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_clients,
            input_dim: 6,
            num_classes: 3,
            alpha: 1.0,
            beta: 1.0,
            samples_per_client: SampleCounts { min: 5, max: 40, power_law_exponent: 1.5 },
            shared_weight_scale: 0.0,
            holdout_size: 60,
            seed,
        }
    }

    #[test]
    fn zero_variance_shares_generative_parameters() {
        let s = SyntheticSpec { alpha: 0.0, beta: 0.0, ..spec(2, 4) };
        let (_, params) = generate_with_params(&s).unwrap();
        assert_eq!(params[0].u, params[1].u);
        assert_eq!(params[0].feature_shift, params[1].feature_shift);
        assert_eq!(params[0].b, params[1].b);
    }

    #[test]
    fn sizes_respect_bounds() {
        let ds = generate(&spec(50, 1)).unwrap();
        assert_eq!(ds.clients.len(), 50);
        assert!(ds.clients.iter().all(|c| (5..=40).contains(&c.len())));
        assert!(ds.public_holdout.len() >= 30);
        assert!(ds.public_holdout.class_counts().iter().all(|&c| c > 0));
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SyntheticSpec { num_clients: 0, ..spec(1, 0) }).is_err());
        assert!(generate(&SyntheticSpec { alpha: -1.0, ..spec(1, 0) }).is_err());
        let mut s = spec(1, 0);
        s.samples_per_client.min = 50;
        assert!(matches!(generate(&s), Err(Error::Config(_))));
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let bytes = to_bytes(&generate(&spec(3, 2)).unwrap()).unwrap();
        for cut in [0, 2, 9, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"NOPE");
        let msg = from_bytes(&bad).unwrap_err().to_string();
        assert!(msg.contains("MMD1"), "{msg}");
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(from_bytes(&v2).unwrap_err().to_string().contains("version"));
    }
}
