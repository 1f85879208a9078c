//! Content-addressed model vault.
//!
//! Layout under the vault root:
//!
//! ```text
//! public.mmd        public evaluation dataset (MMD1, holdout block only)
//! blobs/<id>        MMV1 model bytes, <id> = lowercase hex SHA-256 of the bytes
//! meta/<id>.json    VaultEntry
//! ```
//!
//! Every fetch re-hashes the blob, so on-disk corruption surfaces as
//! [`Error::Integrity`] instead of a silently different model.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{self, FederatedDataset};
use crate::error::{Error, Result};
use crate::ml::{codec, evaluate_named, ArchDescriptor, ClientDataset, Model, QualityReport};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        ModelId(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        if s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            Ok(ModelId(s))
        } else {
            Err(Error::NotFound(format!("{s:?} is not a model id (64 lowercase hex digits)")))
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::try_from(s.to_string())
    }
}

impl From<ModelId> for String {
    fn from(id: ModelId) -> String {
        id.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaultEntry {
    pub id: ModelId,
    pub owner: String,
    pub arch: ArchDescriptor,
    pub quality: QualityReport,
    /// Virtual timestamp.
    pub stored_at: f64,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntryFilter {
    #[serde(default)]
    pub owner: Option<String>,
    #[serde(default)]
    pub tag: Option<String>,
}

impl EntryFilter {
    pub fn accepts(&self, e: &VaultEntry) -> bool {
        self.owner.as_ref().is_none_or(|o| &e.owner == o) && self.tag.as_ref().is_none_or(|t| e.tags.contains(t))
    }
}

/// Service-side evaluation of a model on the vault's public dataset.
pub fn evaluate_on_registration(model: &Model<f64>, public: &ClientDataset<f64>, dataset_id: &str) -> Result<QualityReport> {
    let arch = model.arch();
    if arch.input_dim != public.input_dim() || arch.num_classes != public.num_classes() {
        return Err(Error::Arch(format!(
            "model {arch} cannot be evaluated on a {}-dim, {}-class public dataset",
            public.input_dim(),
            public.num_classes()
        )));
    }
    evaluate_named(model, public, dataset_id)
}

/// Identifier of a public dataset: hash of its MMD1 block.
pub fn dataset_id<T: Scalar>(public: &ClientDataset<T>) -> String {
    let mut h = Sha256::new();
    h.update((public.len() as u64).to_le_bytes());
    for x in public.features().data() {
        h.update(x.widen().to_le_bytes());
    }
    for &y in public.labels() {
        h.update((y as u32).to_le_bytes());
    }
    format!("public-{}", &hex::encode(h.finalize())[..16])
}

pub struct Vault {
    root: PathBuf,
    public: ClientDataset<f64>,
    public_id: String,
    entries: BTreeMap<ModelId, VaultEntry>,
}

impl Vault {
    /// Creates (or reopens) a vault at `root` whose models are evaluated on `public`.
    pub fn create(root: &Path, public: FederatedDataset) -> Result<Self> {
        fs::create_dir_all(root.join("blobs")).map_err(|e| Error::io(root, e))?;
        fs::create_dir_all(root.join("meta")).map_err(|e| Error::io(root, e))?;
        let public_path = root.join("public.mmd");
        let stripped = FederatedDataset { clients: Vec::new(), ..public };
        if public_path.exists() {
            let existing = datagen::load(&public_path)?;
            if existing.public_holdout != stripped.public_holdout {
                return Err(Error::Config(format!("{} holds a different public dataset", root.display())));
            }
        } else {
            datagen::save(&stripped, &public_path)?;
        }
        Self::open(root)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let public = datagen::load(&root.join("public.mmd"))?.public_holdout;
        let public_id = dataset_id(&public);
        let mut entries = BTreeMap::new();
        let meta = root.join("meta");
        let dir = fs::read_dir(&meta).map_err(|e| Error::io(&meta, e))?;
        for item in dir {
            let path = item.map_err(|e| Error::io(&meta, e))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let entry: VaultEntry = serde_json::from_slice(&text)?;
                entries.insert(entry.id.clone(), entry);
            }
        }
        Ok(Self { root: root.to_path_buf(), public, public_id, entries })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn public_dataset(&self) -> &ClientDataset<f64> {
        &self.public
    }

    pub fn public_dataset_id(&self) -> &str {
        &self.public_id
    }

    fn blob_path(&self, id: &ModelId) -> PathBuf {
        self.root.join("blobs").join(id.as_str())
    }

    /// Evaluates and stores `model`; storing identical bytes again returns the
    /// existing id and leaves the first entry untouched.
    pub fn store(&mut self, model: &Model<f64>, owner: &str, tags: &[String], stored_at: f64) -> Result<ModelId> {
        let bytes = codec::encode(model);
        let id = ModelId::of_bytes(&bytes);
        if self.entries.contains_key(&id) {
            return Ok(id);
        }
        let quality = evaluate_on_registration(model, &self.public, &self.public_id)?;
        let entry = VaultEntry {
            id: id.clone(),
            owner: owner.to_string(),
            arch: model.arch().clone(),
            quality,
            stored_at,
            tags: tags.to_vec(),
        };
        write_atomic(&self.blob_path(&id), &bytes)?;
        let meta_path = self.root.join("meta").join(format!("{id}.json"));
        write_atomic(&meta_path, &serde_json::to_vec_pretty(&entry)?)?;
        self.entries.insert(id.clone(), entry);
        Ok(id)
    }

    /// Verified MMV1 bytes of a stored model.
    pub fn fetch_bytes(&self, id: &ModelId) -> Result<Vec<u8>> {
        if !self.entries.contains_key(id) {
            return Err(Error::NotFound(id.to_string()));
        }
        let path = self.blob_path(id);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let actual = ModelId::of_bytes(&bytes);
        if &actual != id {
            return Err(Error::Integrity { id: id.to_string(), actual: actual.to_string() });
        }
        Ok(bytes)
    }

    pub fn fetch(&self, id: &ModelId) -> Result<Model<f64>> {
        codec::decode(&self.fetch_bytes(id)?)
    }

    pub fn entry(&self, id: &ModelId) -> Option<&VaultEntry> {
        self.entries.get(id)
    }

    /// Entries ordered by `stored_at`, then id.
    pub fn list_entries(&self, filter: &EntryFilter) -> Vec<VaultEntry> {
        let mut out: Vec<VaultEntry> = self.entries.values().filter(|e| filter.accepts(e)).cloned().collect();
        out.sort_by(|a, b| a.stored_at.total_cmp(&b.stored_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
